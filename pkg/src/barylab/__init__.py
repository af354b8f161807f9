"""barylab: a discrete optimal-transport laboratory.

Exact Kantorovich solvers under the half-squared-distance cost,
heat-kernel-regularized dual functionals, exact barycenters with the
zero-order balance normalization, covering nets for spaces of measures,
and reproducible stability experiments on curved model spaces.
"""

from .spaces import (DiscreteSpace, GoodMeasureParams, Measure, MeasureError,
                     SecondOrderLaw, SpaceError, build_model_space,
                     check_density_bounds, dirac, load_measure, load_space,
                     make_measure, sample_good_measure, save_measure,
                     save_space, uniform_measure, validate_metric)
from .transport import (CostMatrix, PotentialPair, SolverError, TransportPlan,
                        W2Result, c_transform, cost_matrix, duality_gap,
                        interpolation_map, solve_w2, w1_between_laws,
                        w2_distance)
from .heatreg import (GibbsFamily, HeatKernel, HeatKernelError,
                      concentration_ratio, gibbs_family, heat_kernel,
                      k_derivatives, regularized_functional, soft_c_transform)
from .barycenter import (BalanceError, BarycenterResult, ModulusParams,
                         balance_potentials, deficit, modulus,
                         modulus_power_floor, solve_barycenter, variance)
from .lab import (LabError, NetResult, ScanReport, barycenter_stability_scan,
                  deficit_scan, empirical_rate_experiment, farthest_point_net,
                  fit_entropy_constant, g_probe, map_stability_probe,
                  potential_stability_probe, simplex_net, wasserstein_net)

__version__ = "0.1.0"
