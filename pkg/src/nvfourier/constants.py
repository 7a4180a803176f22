"""Unit conventions and shared physical constants.

Everything in this package uses one unit system:

    length   micrometer (um)     -- imaging coordinates are quoted in nm
    current  milliamp (mA)
    field    gauss (G)
    time     microsecond (us)    -- wall-clock schedules are quoted in hours
    freq     megahertz (MHz)

In these units the field of an infinite straight wire is B = 2 I / r
(mu0/2pi = 2 G*um/mA), which keeps every expression free of 1e-7 factors.

The gyromagnetic ratio is stored as the cyclic value 2.8 MHz/G.  The
angular value (2*pi times that) is applied only inside phase integrals,
never folded into stored constants twice.
"""

import math

# cyclic gyromagnetic ratio of the NV m_S=0 -> +1 transition, MHz/G
GAMMA_CYC_MHZ_PER_G = 2.8

# angular version, rad/(us*G); used in phase and sensitivity formulas
GAMMA_ANG_RAD_PER_US_G = 2.0 * math.pi * GAMMA_CYC_MHZ_PER_G

# straight-wire field prefactor: B[G] = MU0_OVER_2PI * I[mA] / r[um]
MU0_OVER_2PI_G_UM_PER_MA = 2.0

UM_TO_NM = 1.0e3
NM_TO_UM = 1.0e-3
