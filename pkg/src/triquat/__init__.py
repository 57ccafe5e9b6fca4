"""Numerical verification toolkit for quaternionic maps between flat model spaces.

Subpackages mirror the verification surfaces: exact structure-matrix
algebra, sampled fields and residuals, discrete differential forms and the
weak pairing, sphere quadrature with the radial-extension identity, and
the concentration (blow-up) pipeline.
"""

__version__ = "0.1.0"

from .algebra import (BlockStructure, FrameRotation, RelationReport,  # noqa: F401
                      StructureTriple, block_structure, random_rotation,
                      rotate_triple, standard_triple, triple_from_json,
                      triple_to_json, verify_quaternion_relations)
from .errors import (ConfigError, GridError, NoDefectError,  # noqa: F401
                     QuadratureDomainError, TriquatError, ValidationError)
from .fields import (GridSpec, JacobianField, MapField, density_ratio,  # noqa: F401
                     energy_density, equivalence_study, jacobian,
                     quaternionic_residual, reduced_family_jacobian,
                     triholomorphic_sum_residual)
from .forms import (KForm, TargetTwoForm, TestForm, bump_battery,  # noqa: F401
                    closedness_defect, exterior_derivative, integrate_top_form,
                    pairing, pullback_two_form, structure_two_forms, wedge)
from .sphere import (SphereGrid, SphereMap, extension_pairing_check,  # noqa: F401
                     frame_alignment_residual, homogeneous_extension,
                     sphere_area_form, sphere_quadrature, stationarity_moment,
                     tangential_energy)
from .blowup import (BlowupConfig, DefectMeasure, FrameEstimate,  # noqa: F401
                     PlanePatch, SequenceSource, detect_blowup_set,
                     density_constancy_check, estimate_density,
                     estimate_frame_direction, limit_pairing, surface_integral,
                     verify_blowup_formula)
