"""Kinetic McKean-Vlasov toolbox.

Grid and particle solvers for second-order SDEs whose coefficients depend on
the solution's density and law, together with the anisotropic analysis used
to diagnose them: mixed multi-index norms, dyadic decompositions, Gaussian
semigroup oracles, and De Giorgi-type certificates.
"""

from .besov import (BesovNormReport, DyadicPartition, bernstein_check,
                    besov_norm, block, bony_paraproducts, difference_norm,
                    duality_check, interpolation_check, square_root_norm_check)
from .coefficients import CoefficientSpec, PRESETS, make_preset
from .degiorgi import (DeGiorgiCertificate, absorb_lemma_check, fit_certificate,
                       iterate_to_zero, local_bound_check)
from .errors import (BudgetExceededError, CFLError, ContractViolationError,
                     EllipticityError, KmkvError, PreconditionError, SchemaError)
from .fields import (AnisotropyVector, KineticCylinder, MultiIndex,
                     SampledField, aniso_distance, export_csv, load_ensemble,
                     load_field, save_ensemble, save_field)
from .fpk import (EffectiveFields, FPKRun, GridDensity, GridGeometry,
                  advective_kinetic_solve, backward_kolmogorov_solve,
                  effective_coefficients, fpk_solve, fpk_step)
from .matrices import (ellipticity_project, hs_norm, spd_sqrt,
                       sqrt_lipschitz_check, symmetrize)
from .norms import (equivalence_ratio_across_radii, localized_norm,
                    mixed_lp_norm)
from .particles import (Mollifier, ParticleEnsemble, SimResult, em_step,
                        initial_ensemble, kde_density, kde_on_grid,
                        krylov_check, mollified_coefficients, simulate,
                        stability_sweep, wasserstein2)
from .scenario import RunReport, Scenario, compare_reports, load_scenario
from .semigroup import (DuhamelSchedule, KolmogorovGaussian, duhamel_solve,
                        semigroup_apply, smoothing_exponent_fit)

__version__ = "0.1.0"
