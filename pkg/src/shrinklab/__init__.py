"""Finite-difference laboratory for the logarithmic Monge-Ampere flow and Lagrangian self-shrinkers."""

from ._accel import get_backend, set_backend, use_backend
from .calabi import (CalabiSample, DecayFit, ab_quantities, decay_fit, lemma22_residual,
                     sigma_field, supersolution_bound)
from .flow import (FlowState, FlowTrace, DiagnosticsRecord, flow_rhs, parabolic_scale, run_flow,
                   self_similar_extend, step)
from .grid import (ConditionABounds, ConvexityError, DerivativeTensorField, GridSpec, PotentialField,
                   condition_A_check, derivative_tensors, hessian_eigen_range)
from .metric import InducedMetricField, induced_metric, ln_det_g_gradient_identity
from .shrinker import (NewtonReport, ShrinkerResidualField, condition_110_profile, newton_solve_ma,
                       newton_solve_sl, quadratic_shrinker_ma, quadratic_shrinker_sl, residual_ma,
                       residual_sl)
from .transforms import (LegendrePair, LewyImage, angle_shift_check, hessian_duality_check, legendre,
                         lewy_hessian_map, lewy_rotate, ma_duality_residual,
                         shrinker_preservation_check)

__version__ = "0.1.0"
