"""Physical constants and default planet models.

Internal units are au, days and radians throughout; the CLI converts
years to days at the boundary (1 yr = 365.25 days).
"""

import math

# Gauss gravitational constant, au^(3/2) / day
GAUSS_K = 0.01720209895
GAUSS_K2 = GAUSS_K * GAUSS_K

DAYS_PER_YEAR = 365.25

# Planet / Sun mass ratios (configuration defaults, overridable everywhere)
PLANET_MU = {
    "venus": 2.4478e-6,
    "earth": 3.0404e-6,   # Earth + Moon
    "mars": 3.2272e-7,
    "jupiter": 9.5479e-4,
    "saturn": 2.8589e-4,
}

# Mean heliocentric elements (a [au], e, i/node/argp [rad]); good enough for
# synthetic experiments, not an ephemeris.
PLANET_ELEMENTS = {
    "venus": (0.72333, 0.00677, math.radians(3.39), math.radians(76.68), math.radians(54.88)),
    "earth": (1.00000, 0.01671, 0.0, 0.0, math.radians(102.94)),
    "mars": (1.52368, 0.09340, math.radians(1.85), math.radians(49.56), math.radians(286.50)),
    "jupiter": (5.20260, 0.04849, math.radians(1.30), math.radians(100.46), math.radians(273.87)),
    "saturn": (9.55491, 0.05551, math.radians(2.49), math.radians(113.66), math.radians(339.39)),
}

DEFAULT_PLANET_ORDER = ["venus", "earth", "mars", "jupiter", "saturn"]


def mean_motion(a):
    """Mean motion in rad/day for semimajor axis a in au."""
    return GAUSS_K * a ** -1.5
