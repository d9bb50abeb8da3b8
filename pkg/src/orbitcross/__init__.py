"""Orbit-distance geometry and secular propagation for planet-crossing
asteroids: Keplerian distance critical points, averaged perturbing
function with crossing-singularity extraction, generalized secular
solutions, a full-model reference integrator, and crossing-time
forecasts.
"""

__version__ = "0.1.0"

from .errors import (OrbitCrossError, DegenerateConfiguration,
                     TangentOrbits, TooCloseToCrossing, DegenerateCrossing,
                     TangentCrossing, StageNonConvergence,
                     CollisionSingularity, StepUnderflow, NoCrossings)
from .kepler import (KeplerianElements, DelaunayElements,
                     EquinoctialElements, CartesianState, solve_kepler,
                     kep_to_delaunay, delaunay_to_kep, kep_to_equinoctial,
                     equinoctial_to_kep, kep_to_cartesian, cartesian_to_kep)
from .distance import (TwoOrbitConfig, AnomalyPair, CriticalPoint,
                       find_critical_points, minima, orbit_distance,
                       signed_distance, signed_distance_value,
                       crossing_matrix, check_degenerate)
from .ephemeris import EphemerisProvider, PlanetSpec, default_planets
from .averaged import (elements_to_Y, Y_to_elements,
                       averaged_perturbing_function,
                       averaged_gradient_plain, extended_field,
                       extended_field_pair, field_jump,
                       default_extraction_radius)
from .secular import (SecularState, CrossingEvent, GeneralizedTrajectory,
                      SecularField, rkg_step, detect_crossing,
                      propagate_secular, secular_distance_series)
from .fullmodel import (FullState, EnsembleStats, full_rhs, propagate_full,
                        phase_ensemble)
from .predictor import (VirtualAsteroid, CrossingForecast,
                        linearized_crossing_time, secular_crossing_time,
                        crossing_interval, crossing_probability,
                        read_va_csv)
