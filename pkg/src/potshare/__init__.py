"""Counterfactual attribution with Harsanyi interaction pots split by
micro-game allocation rules on a discretised local cube."""

__version__ = "0.1.0"

from .coalition import CounterfactualPair, coalition_values, dividends, mixed_input, reconstruct
from .cube import GridSpec, eval_cube, residual_grid, slider_point
from .estimator import MicroGameExplainer
from .exceptions import CapacityError, EvaluationError, InputError, ParseError, ProtocolError
from .explain import ExplainConfig, explain_global, explain_local, within_pot_table
from .microgame import MicroGame, enumerate_les, equal_split, grid_state_les, les_preset
from .models import LinearModel, MlpModel, MultilinearModel, ThresholdModel, load_model, predict, predict_batch

__all__ = [
    "CapacityError", "CounterfactualPair", "EvaluationError", "ExplainConfig", "GridSpec", "InputError",
    "LinearModel", "MicroGame", "MicroGameExplainer", "MlpModel", "MultilinearModel", "ParseError",
    "ProtocolError", "ThresholdModel", "coalition_values", "dividends", "enumerate_les", "equal_split",
    "eval_cube", "explain_global", "explain_local", "grid_state_les", "les_preset", "load_model",
    "mixed_input", "predict", "predict_batch", "reconstruct", "residual_grid", "slider_point",
    "within_pot_table",
]
