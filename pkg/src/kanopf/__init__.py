"""Spline-edge network surrogates for stochastic OPF on a small hybrid AC/DC grid."""

from .acdc import (AcBranch, AcBus, Converter, DcBranch, DcBus, Generator, PowerSystem,
                   ResUnit, UncertaintyDim, UncertaintyModel, apply_scenario,
                   builtin_case5, load_case, save_case)
from .distributions import (EmpiricalDistribution, cdf, confidence_interval, ks_statistic,
                            moments, pdf_histogram, wasserstein1)
from .interpret import ActivationSnapshot, SymbolicFit, fit_symbolic, snapshot_activations
from .montecarlo import ComparisonReport, compare, propagate_surrogate, run_monte_carlo
from .network import (KanLayer, KanNetwork, PruneMask, SplineEdge, apply_prune_mask,
                      build_network, edge_activation, layer_forward, network_forward)
from .opf import OpfOptions, OpfSolution, OutputSpec, extract_outputs, solve_opf
from .powerflow import (Dispatch, PfState, constraint_violations, newton_power_flow,
                        nominal_dispatch, pf_residuals, realized_generator_outputs)
from .splines import SplineGrid, bspline_basis
from .training import (Dataset, TargetScaler, TrainConfig, TrainReport, extend_grid,
                       gradients, importance_scores, mse_loss, prune_by_threshold,
                       regularization_loss, total_loss, train)
from .uncertainty import ScenarioSet, sample_scenarios

__version__ = "0.1.0"
