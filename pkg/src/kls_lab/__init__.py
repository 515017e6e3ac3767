"""Monte-Carlo and linear-algebra laboratory for the KLS conjecture and the generalized CLT."""

from .distributions import DistributionSpec, SampleMatrix, log_density, make_distribution, sample
from .localization import (LocalizationState, LocalizationTrace, brownian_reflection_check,
                           coupled_clt_distance, gaussian_oracle, init_cloud, martingale_check, run_trace, step)
from .metrics import Empirical1D, MetricReport, check_tv_w1, check_ws_wt, tv_estimate, w_p_empirical, w_p_vs_normal
from .moments import (CheegerEstimate, Estimate, halfspace_cheeger, poincare_check, quadratic_form_variance,
                      sphere_identity_check, tensor_T, thin_shell, third_moment_inner)
from .tensorcheck import (IneqTrialReport, MatrixEnsemble, check_lieb, check_lieb_thirring, check_liebtr_tensor,
                          check_matrix_holder, check_tensor_positive, check_tequ_identity, check_tinq, check_trabs)

__version__ = "0.1.0"
