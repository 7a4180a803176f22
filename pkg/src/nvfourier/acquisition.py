"""K-space sweep planning, execution and disturbance injection.

A sweep holds the evolution time fixed and ramps the gradient-drive current
linearly from 0 to i_max over n_points steps.  Each sampled current maps to
a K value

    K = w * 2 * gamma_cyc * tau * G(I)      (nm^-1)

where w is the waveform's phase-efficiency factor and G(I) the calibrated
projected gradient, linear in I.  An undersampling mask selects which points
are actually acquired; each acquired point is stamped with the wall-clock
time at which it starts (points * shots * sequence time), which is the
schedule on which platform drift acts.

Determinism contract: every stochastic ingredient draws from a stream keyed
by (seed, stream id, point index), so results are independent of evaluation
order, and a fixed plan reproduces a record bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .constants import GAMMA_CYC_MHZ_PER_G, NM_TO_UM
from .errors import (
    DataFormatError,
    EmptyMaskError,
    MetadataError,
    MissingCalibrationError,
    ValidationError,
)
from .field_model import MicrowireModel, NvAxis, _unit3, _vec3, gradient_at
from .spin_dynamics import (
    EchoSequence,
    GradientWaveform,
    NvCenter,
    echo_signal,
    imaging_coordinate_nm,
    phase_efficiency,
    phase_from_coordinate,
    sample_counts,
    signal_from_counts,
)

# per-point random stream ids (second entry of the seed sequence)
_STREAM_DRIFT = 1
_STREAM_SHOTS = 2
_STREAM_CURRENT = 3

RECORD_CSV_COLUMNS = ["k_per_nm", "current_mA", "signal", "sigma", "t_hours"]


@dataclass(frozen=True)
class DriftModel:
    """Slow displacement of the NV along the imaging axis (nm).

    offset(t) = linear_rate*t + random-walk(t) + temperature_coupling*dT(t)
    with dT a sinusoidal ambient model of amplitude temperature_amplitude_k.
    """

    linear_rate_nm_per_hour: float = 0.0
    random_walk_sigma_nm_per_sqrt_hour: float = 0.0
    temperature_coupling_nm_per_k: float = 0.0
    temperature_amplitude_k: float = 0.25
    temperature_period_hours: float = 24.0
    seed: int = 0

    def __post_init__(self):
        for name in (
            "random_walk_sigma_nm_per_sqrt_hour",
            "temperature_coupling_nm_per_k",
            "temperature_amplitude_k",
        ):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.temperature_period_hours <= 0:
            raise ValidationError("temperature_period_hours must be > 0")

    @property
    def is_static(self) -> bool:
        return (
            self.linear_rate_nm_per_hour == 0.0
            and self.random_walk_sigma_nm_per_sqrt_hour == 0.0
            and self.temperature_coupling_nm_per_k == 0.0
        )


def ambient_temperature_delta(drift: DriftModel, t_hours: float):
    return drift.temperature_amplitude_k * np.sin(
        2.0 * np.pi * np.asarray(t_hours, dtype=float) / drift.temperature_period_hours
    )


def apply_drift(drift: DriftModel, elapsed_hours: float, seed=None) -> float:
    """Position offset (nm) after elapsed_hours; deterministic under seed."""
    if elapsed_hours < 0:
        raise ValidationError("elapsed_hours must be >= 0")
    if seed is None:
        seed = drift.seed
    offset = drift.linear_rate_nm_per_hour * elapsed_hours
    if drift.random_walk_sigma_nm_per_sqrt_hour > 0.0 and elapsed_hours > 0.0:
        rng = np.random.default_rng([int(seed), _STREAM_DRIFT])
        offset += (
            drift.random_walk_sigma_nm_per_sqrt_hour
            * math.sqrt(elapsed_hours)
            * rng.standard_normal()
        )
    if drift.temperature_coupling_nm_per_k > 0.0:
        offset += drift.temperature_coupling_nm_per_k * float(
            ambient_temperature_delta(drift, elapsed_hours)
        )
    return float(offset)


def drift_trajectory(drift: DriftModel, times_hours, seed=None) -> np.ndarray:
    """Offsets (nm) at increasing times, with a consistent random walk."""
    t = np.asarray(times_hours, dtype=float)
    if t.size and (np.any(np.diff(t) < 0) or t[0] < 0):
        raise ValidationError("times must be nonnegative and nondecreasing")
    if seed is None:
        seed = drift.seed
    offsets = drift.linear_rate_nm_per_hour * t
    if drift.random_walk_sigma_nm_per_sqrt_hour > 0.0 and t.size:
        rng = np.random.default_rng([int(seed), _STREAM_DRIFT])
        dt = np.diff(np.concatenate([[0.0], t]))
        steps = rng.standard_normal(t.size) * np.sqrt(dt)
        offsets = offsets + drift.random_walk_sigma_nm_per_sqrt_hour * np.cumsum(steps)
    if drift.temperature_coupling_nm_per_k > 0.0:
        offsets = offsets + drift.temperature_coupling_nm_per_k * ambient_temperature_delta(
            drift, t
        )
    return np.asarray(offsets, dtype=float)


@dataclass(frozen=True)
class CurrentNoiseModel:
    """Disturbances of the drive current, as fractions of the setpoint."""

    relative_amplitude: float = 0.0
    modulation_frequency_cycles: float = 0.0  # cycles per K sweep
    white_sigma: float = 0.0

    def __post_init__(self):
        for name in ("relative_amplitude", "modulation_frequency_cycles", "white_sigma"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    @property
    def is_quiet(self) -> bool:
        return self.relative_amplitude == 0.0 and self.white_sigma == 0.0


def perturb_current(
    noise: CurrentNoiseModel, nominal_ma: float, sweep_fraction: float, rng
) -> float:
    """Setpoint current with sinusoidal modulation and white noise applied."""
    factor = 1.0
    if noise.relative_amplitude > 0.0:
        factor += noise.relative_amplitude * math.sin(
            2.0 * math.pi * noise.modulation_frequency_cycles * sweep_fraction
        )
    if noise.white_sigma > 0.0:
        factor += noise.white_sigma * rng.standard_normal()
    return nominal_ma * factor


@dataclass(frozen=True, eq=False)
class AcquisitionPlan:
    """Everything needed to run (and re-run, bit-exactly) one K sweep."""

    i_max_ma: float
    n_points: int
    sequence: EchoSequence
    waveform_template: GradientWaveform
    mask: tuple = ()
    shots_per_point: int = 1_000_000
    shot_noise: bool = True
    seed: int = 0
    drift: DriftModel = field(default_factory=DriftModel)
    current_noise: CurrentNoiseModel = field(default_factory=CurrentNoiseModel)
    origin_um: np.ndarray = (0.0, 0.0, 0.0)
    imaging_axis: np.ndarray = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.i_max_ma > 0:
            raise ValidationError("i_max_ma must be > 0")
        if self.n_points < 2:
            raise ValidationError("n_points must be >= 2")
        if self.shots_per_point < 1:
            raise ValidationError("shots_per_point must be >= 1")
        mask = tuple(int(i) for i in (self.mask or range(self.n_points)))
        if len(mask) == 0:
            raise EmptyMaskError("mask is empty")
        if any(b <= a for a, b in zip(mask, mask[1:])):
            raise ValidationError("mask indices must be strictly increasing")
        if mask[0] < 0 or mask[-1] >= self.n_points:
            raise ValidationError("mask indices must lie in [0, n_points)")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "origin_um", _vec3(self.origin_um, "origin_um"))
        object.__setattr__(self, "imaging_axis", _unit3(self.imaging_axis, "imaging_axis"))


def make_undersampling_mask(
    n_points: int,
    strategy: str = "full",
    stride: int | None = None,
    blocks: int | None = None,
    block_width: int | None = None,
) -> tuple:
    """Index mask for a sweep: 'full', 'stride' (every stride-th point) or
    'blocks' (``blocks`` evenly spaced contiguous runs of ``block_width``)."""
    if n_points < 1:
        raise ValidationError("n_points must be >= 1")
    if strategy == "full":
        idx = range(n_points)
    elif strategy == "stride":
        if stride is None or stride < 1:
            raise ValidationError("stride strategy needs stride >= 1")
        idx = range(0, n_points, stride)
    elif strategy == "blocks":
        if not blocks or not block_width or blocks < 1 or block_width < 1:
            raise ValidationError("blocks strategy needs blocks >= 1 and block_width >= 1")
        chosen = set()
        for b in range(blocks):
            start = int(round(b * n_points / blocks))
            chosen.update(range(start, min(start + block_width, n_points)))
        idx = sorted(chosen)
    else:
        raise ValidationError(f"unknown mask strategy {strategy!r}")
    mask = tuple(idx)
    if not mask:
        raise EmptyMaskError(f"strategy {strategy!r} selected no points")
    return mask


def sweep_currents(plan: AcquisitionPlan) -> np.ndarray:
    """Nominal current ramp: i_max * j/(n-1), j = 0..n-1."""
    return np.arange(plan.n_points) * (plan.i_max_ma / (plan.n_points - 1))


def k_of_current(plan: AcquisitionPlan, current_ma, gradient_per_ma: float | None):
    """Map a drive current to its K value (nm^-1).

    K = w * 2 * gamma_cyc * tau * gradient_per_ma * I, with w the waveform's
    phase-efficiency factor.  Accepts scalars or arrays.
    """
    if gradient_per_ma is None:
        raise MissingCalibrationError("gradient calibration (G/um per mA) required")
    w = phase_efficiency(plan.waveform_template, plan.sequence)
    # per-um -> per-nm is the /1e3
    coeff = w * 2.0 * GAMMA_CYC_MHZ_PER_G * plan.sequence.tau_us * gradient_per_ma / 1e3
    k = np.asarray(current_ma, dtype=float) * coeff
    return k if np.ndim(current_ma) else float(k)


def point_times_hours(plan: AcquisitionPlan) -> np.ndarray:
    """Wall-clock start time (hours) of each masked point, in mask order."""
    dwell_h = plan.shots_per_point * plan.sequence.total_time_us * 1e-6 / 3600.0
    return np.arange(len(plan.mask)) * dwell_h


@dataclass(eq=False)
class KSpaceRecord:
    """One acquired K sweep: sampled arrays plus acquisition metadata."""

    k_values: np.ndarray
    currents: np.ndarray
    signals: np.ndarray
    errors: np.ndarray
    t_hours: np.ndarray
    metadata: dict

    def __post_init__(self):
        arrays = [
            np.asarray(a, dtype=float)
            for a in (self.k_values, self.currents, self.signals, self.errors, self.t_hours)
        ]
        n = len(arrays[0])
        if any(len(a) != n for a in arrays):
            raise ValidationError("record arrays must have equal length")
        if n and (arrays[0][0] < 0 or np.any(np.diff(arrays[0]) <= 0)):
            raise ValidationError("k_values must be nonnegative and increasing")
        self.k_values, self.currents, self.signals, self.errors, self.t_hours = arrays

    def __len__(self) -> int:
        return len(self.k_values)

    @property
    def k_max(self) -> float:
        return float(self.k_values[-1]) if len(self) else 0.0


def _resolve_gradient_per_ma(
    nv: NvCenter,
    plan: AcquisitionPlan,
    wire: MicrowireModel | None,
    axis: NvAxis | None,
    gradient_per_ma: float | None,
):
    """Nominal per-mA gradient at the NV, and a position->gradient function."""
    if gradient_per_ma is not None:
        return float(gradient_per_ma), None
    if wire is None:
        raise MissingCalibrationError(
            "run_sweep needs either gradient_per_ma or a wire model with an NV axis"
        )
    if axis is None:
        raise ValidationError("an NvAxis is required when computing gradients from a wire")
    unit_wire = replace(wire, current_ma=1.0)  # polarity kept: it signs the drive

    def per_ma_at(position_um):
        return gradient_at(unit_wire, position_um, axis, plan.imaging_axis)

    return float(per_ma_at(nv.position_um)), per_ma_at


def acquire_point(
    plan: AcquisitionPlan,
    nv: NvCenter,
    index: int,
    drift_offset_nm: float,
    x0_nm: float,
    gradient_fn,
    nominal_gradient_per_ma: float,
) -> tuple[float, float]:
    """Signal and error for one masked sweep index (order-independent).

    Exposed separately so concurrency (or tests) can evaluate points in any
    order and obtain results bitwise identical to the sequential sweep.
    """
    currents = sweep_currents(plan)
    nominal = float(currents[index])
    rng_current = np.random.default_rng([plan.seed, _STREAM_CURRENT, index])
    actual = perturb_current(
        plan.current_noise, nominal, index / (plan.n_points - 1), rng_current
    )
    if gradient_fn is not None and drift_offset_nm != 0.0:
        pos = nv.position_um + (drift_offset_nm * NM_TO_UM) * plan.imaging_axis
        g_per_ma = gradient_fn(pos)
    else:
        g_per_ma = nominal_gradient_per_ma
    phase = phase_from_coordinate(
        x0_nm + drift_offset_nm, g_per_ma * actual, plan.sequence, plan.waveform_template
    )
    expected = echo_signal(nv, phase, plan.sequence)
    if not plan.shot_noise:
        return expected.expected_signal, 0.0
    mean, err = sample_counts(
        expected.expected_counts, plan.shots_per_point, [plan.seed, _STREAM_SHOTS, index]
    )
    return signal_from_counts(mean, err, nv)


def run_sweep(
    plan: AcquisitionPlan,
    nv: NvCenter,
    wire: MicrowireModel | None = None,
    axis: NvAxis | None = None,
    gradient_per_ma: float | None = None,
) -> KSpaceRecord:
    """Execute the masked K sweep and return a KSpaceRecord.

    The gradient calibration comes either from ``gradient_per_ma`` directly
    or from the wire geometry (projected on ``axis``, differentiated along
    the plan's imaging axis).  Signals are sampled with per-point seeded
    shot noise unless plan.shot_noise is False, in which case the exact
    expected signal is recorded with zero error.
    """
    g0, gradient_fn = _resolve_gradient_per_ma(nv, plan, wire, axis, gradient_per_ma)
    if g0 <= 0:
        raise ValidationError(
            f"projected gradient per mA along the imaging axis must be positive, got {g0:.4g}; "
            "flip the imaging axis or wire polarity"
        )
    w = phase_efficiency(plan.waveform_template, plan.sequence)
    if w <= 0:
        raise ValidationError(
            "waveform accumulates no net echo phase (efficiency w <= 0); "
            "use an antisymmetric drive"
        )

    x0_nm = imaging_coordinate_nm(nv, plan.origin_um, plan.imaging_axis)
    currents = sweep_currents(plan)
    times = point_times_hours(plan)
    offsets = (
        np.zeros(len(plan.mask))
        if plan.drift.is_static
        else drift_trajectory(plan.drift, times, seed=plan.seed)
    )

    mask = np.asarray(plan.mask, dtype=int)
    signals = np.empty(len(mask))
    errors = np.empty(len(mask))
    for rank, idx in enumerate(mask):
        signals[rank], errors[rank] = acquire_point(
            plan, nv, int(idx), float(offsets[rank]), x0_nm, gradient_fn, g0
        )

    k_sampled = k_of_current(plan, currents[mask], g0)
    delta_k = float(k_of_current(plan, currents[1], g0))
    metadata = {
        "total_time_us": plan.sequence.total_time_us,
        "tau_us": plan.sequence.tau_us,
        "sync_offset_us": plan.sequence.sync_offset_us,
        "gradient_per_ma_g_per_um": g0,
        "waveform_efficiency": w,
        "waveform": {
            "shape": plan.waveform_template.shape,
            "period_us": plan.waveform_template.period_us,
            "active_fraction": plan.waveform_template.active_fraction,
            "antisymmetric": plan.waveform_template.antisymmetric,
        },
        "i_max_ma": plan.i_max_ma,
        "n_points": plan.n_points,
        "mask": [int(i) for i in plan.mask],
        "shots_per_point": plan.shots_per_point,
        "shot_noise": plan.shot_noise,
        "seed": plan.seed,
        "origin_um": [float(v) for v in plan.origin_um],
        "imaging_axis": [float(v) for v in plan.imaging_axis],
        "delta_k_per_nm": delta_k,
        "k_max_per_nm": float(k_sampled[-1]),
        "drift": {
            "linear_rate_nm_per_hour": plan.drift.linear_rate_nm_per_hour,
            "random_walk_sigma_nm_per_sqrt_hour": plan.drift.random_walk_sigma_nm_per_sqrt_hour,
            "temperature_coupling_nm_per_k": plan.drift.temperature_coupling_nm_per_k,
            "temperature_amplitude_k": plan.drift.temperature_amplitude_k,
            "temperature_period_hours": plan.drift.temperature_period_hours,
        },
        "current_noise": {
            "relative_amplitude": plan.current_noise.relative_amplitude,
            "modulation_frequency_cycles": plan.current_noise.modulation_frequency_cycles,
            "white_sigma": plan.current_noise.white_sigma,
        },
        "nv": {
            "t2_us": nv.t2_us,
            "stretch_p": nv.stretch_p,
            "contrast_alpha": nv.contrast_alpha,
            "yield_beta": nv.yield_beta,
        },
    }
    return KSpaceRecord(
        k_values=k_sampled,
        currents=currents[mask],
        signals=signals,
        errors=errors,
        t_hours=times,
        metadata=metadata,
    )


# ---------------------------------------------------------------------------
# persistence: CSV + JSON sidecar, formatted for bit-exact round trips
# ---------------------------------------------------------------------------


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".meta.json")


def save_record(record: KSpaceRecord, csv_path) -> Path:
    """Write record CSV plus metadata sidecar; returns the sidecar path.

    Floats are serialized with repr so that loading reproduces the arrays
    bit-exactly.
    """
    p = Path(csv_path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(RECORD_CSV_COLUMNS)]
    for row in zip(record.k_values, record.currents, record.signals, record.errors, record.t_hours):
        lines.append(",".join(repr(float(v)) for v in row))
    p.write_text("\n".join(lines) + "\n")
    side = sidecar_path(p)
    side.write_text(json.dumps(record.metadata, indent=2, sort_keys=True) + "\n")
    return side


def load_record(csv_path) -> KSpaceRecord:
    p = Path(csv_path)
    if not p.exists():
        raise FileNotFoundError(f"record file not found: {p}")
    side = sidecar_path(p)
    if not side.exists():
        raise MetadataError(f"missing metadata sidecar: {side}")
    try:
        metadata = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise MetadataError(f"{side}: {exc}") from exc
    rows = p.read_text().strip().splitlines()
    if not rows:
        raise DataFormatError(f"{p}: empty file")
    header = [c.strip() for c in rows[0].split(",")]
    if header != RECORD_CSV_COLUMNS:
        raise DataFormatError(f"{p}: unexpected header {header}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        parts = row.split(",")
        if len(parts) != len(RECORD_CSV_COLUMNS):
            raise DataFormatError(f"{p}: row {lineno}: expected {len(RECORD_CSV_COLUMNS)} fields")
        try:
            data.append([float(v) for v in parts])
        except ValueError as exc:
            raise DataFormatError(f"{p}: row {lineno}: {exc}") from exc
    arr = np.asarray(data, dtype=float)
    return KSpaceRecord(
        k_values=arr[:, 0],
        currents=arr[:, 1],
        signals=arr[:, 2],
        errors=arr[:, 3],
        t_hours=arr[:, 4],
        metadata=metadata,
    )
