"""Intention-to-treat and per-protocol effects for randomized trials with nonadherence."""
__version__ = "0.1.0"

from .data import Covariate, CovariateSchema, LongitudinalDataset, load_dataset, validate_dataset
from .diagnostics import BootstrapPlan, bootstrap_ci, evalue, placebo_adherence_control, weight_diagnostics
from .errors import (DataError, EstimationError, PlanError, PositivityError, PPTrialError, ProtocolError,
                     SeparationError, WeakInstrumentError)
from .estimate import EffectEstimate
from .gformula import GFormulaSpec, parametric_gformula
from .itt import (competing_effect, itt_ipcw, itt_ipw_baseline, itt_standardized, itt_unadjusted,
                  subgroup_effects)
from .iv import IVSummary, balke_pearl, check_instrument, iv_bounds, iv_falsification, iv_wald
from .point import PointPPConfig, biased_comparator, negative_control_check, pp_point_adjusted
from .protocol import ArmStrategy, Predicate, StrategyProtocol, evaluate_adherence
from .report import AnalysisPlan, run_plan
from .sim import SimConfig, generate_trial, get_preset, ground_truth, scenario_presets
from .sustained import gestimate_snmm, pp_baseline_regression, pp_ipw_sustained
from .views import apply_missing_adherence_policy, derive_analysis_view

__all__ = [n for n in dir() if not n.startswith("_")]
