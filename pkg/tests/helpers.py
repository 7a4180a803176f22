"""Shared test fixtures: independent oracles and scenario builders.

The DCT oracle here is the reference definition of the reconstruction
transform (half-weighted endpoints, 1/(N-1) scale); fourier_reconstruct
must reproduce it.  It is evaluated row by row from the cosine kernel, a
deliberately different code path from the FFT-based implementation.
"""

import numpy as np

import nvfourier as nf
from nvfourier.config import DEFAULT_SINE_ACTIVE_FRACTION

REF_TOTAL_TIME_US = 500.0
REF_I_MAX_MA = 10.0
REF_GRADIENT_PER_MA = 0.326
REF_N_POINTS = 458


def dct_oracle(signal, zero_pad_factor=1):
    """Brute-force one-sided cosine transform magnitude, O(N*M).

    A_i = |s_0 + (-1)^i s_{M-1} + 2 sum_{0<j<M-1} s_j cos(pi j i/(M-1))| / (N-1)
    with the signal zero-padded from N to M = (N-1)*Z + 1 samples.
    """
    s = np.asarray(signal, dtype=float)
    n = len(s)
    padded = np.concatenate([s, np.zeros((n - 1) * (zero_pad_factor - 1))])
    m = len(padded)
    weights = np.ones(m)
    weights[0] = 0.5
    weights[-1] = 0.5
    out = np.empty(m)
    j = np.arange(m)
    for i in range(m):
        out[i] = 2.0 * np.sum(weights * padded * np.cos(np.pi * j * i / (m - 1)))
    return np.abs(out) / (n - 1)


def reference_sequence(total_time_us=REF_TOTAL_TIME_US, **kwargs):
    return nf.EchoSequence(total_time_us=total_time_us, **kwargs)


def reference_waveform(total_time_us=REF_TOTAL_TIME_US, active_fraction=DEFAULT_SINE_ACTIVE_FRACTION):
    return nf.GradientWaveform(
        shape="sine",
        period_us=active_fraction * total_time_us,
        active_fraction=active_fraction,
        antisymmetric=True,
    )


def rect_waveform(active_fraction=1.0, antisymmetric=True):
    return nf.GradientWaveform(
        shape="rectangular",
        period_us=1.0,
        active_fraction=active_fraction,
        antisymmetric=antisymmetric,
    )


def reference_nv(x_nm=30.0, t2_us=1200.0):
    """NV sitting at x_nm along the +x imaging axis (origin at 0)."""
    return nf.NvCenter(
        position_um=[x_nm * 1e-3, 0.0, 0.0],
        t2_us=t2_us,
        contrast_alpha=0.08,
        yield_beta=0.02,
    )


def reference_plan(
    n_points=REF_N_POINTS,
    shot_noise=False,
    seed=20240901,
    mask=(),
    drift=None,
    current_noise=None,
    shots_per_point=1_000_000,
    total_time_us=REF_TOTAL_TIME_US,
    sequence=None,
):
    seq = sequence or reference_sequence(total_time_us)
    return nf.AcquisitionPlan(
        i_max_ma=REF_I_MAX_MA,
        n_points=n_points,
        sequence=seq,
        waveform_template=reference_waveform(seq.total_time_us),
        mask=mask,
        shots_per_point=shots_per_point,
        shot_noise=shot_noise,
        seed=seed,
        drift=drift or nf.DriftModel(),
        current_noise=current_noise or nf.CurrentNoiseModel(),
        origin_um=[0.0, 0.0, 0.0],
        imaging_axis=[1.0, 0.0, 0.0],
    )


def simulate(x_nm=30.0, gradient_per_ma=REF_GRADIENT_PER_MA, t2_us=1200.0, **plan_kwargs):
    """Forward-simulate a record for an NV at x_nm (origin at zero)."""
    plan = reference_plan(**plan_kwargs)
    nv = reference_nv(x_nm, t2_us)
    return nf.run_sweep(plan, nv, gradient_per_ma=gradient_per_ma)


def midpoint_phase_oracle(x_nm, peak_gradient, seq, wf, n_steps=400_000):
    """Numeric reference for the analytic echo phase (no sync offset).

    Midpoint rule: the waveform is half-open piecewise with jumps at the
    half boundaries, so endpoint-sampling rules pick up spurious boundary
    contributions there.
    """
    edges = np.linspace(0.0, seq.total_time_us, n_steps + 1)
    mids = (edges[:-1] + edges[1:]) / 2.0
    h = edges[1] - edges[0]
    g = np.array([nf.spin_dynamics.waveform_value(wf, seq, tv) for tv in mids])
    sign = np.where(mids < seq.pi_pulse_time_us, 1.0, -1.0)
    integral = float(np.sum(sign * g) * h)
    return 2.0 * np.pi * 2.8 * (x_nm * 1e-3) * peak_gradient * integral
