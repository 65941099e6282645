"""Predictors: a small analytic model zoo, an external batch predictor, and
the JSON model-spec format.

Every predictor exposes ``predict(X)`` on a 2-D array and returns a 1-D array
of scores, so fitted scikit-learn regressors can be used wherever a built-in
model is accepted.  Dense layers are accumulated one input column at a time
instead of through BLAS so that a row scores bit-identically whether it is
evaluated alone or inside a batch.
"""
from __future__ import annotations

import csv
import json
import os
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .exceptions import EvaluationError, InputError, ParseError, ProtocolError

__all__ = [
    "FeatureSpace",
    "LinearModel",
    "MultilinearModel",
    "ThresholdModel",
    "MlpModel",
    "MinScore",
    "ExternalPredictor",
    "predict",
    "predict_batch",
    "load_model",
    "save_model",
    "model_from_dict",
    "model_to_dict",
]

KINDS = ("continuous", "categorical-binary")


@dataclass(frozen=True)
class FeatureSpace:
    names: tuple[str, ...]
    kinds: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise InputError("a feature space needs at least 2 features")
        if len(set(self.names)) != len(self.names):
            raise InputError("feature names must be unique")
        if len(self.kinds) != len(self.names):
            raise InputError("kinds and names must have equal length")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise InputError(f"unknown feature kind(s): {bad}")

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def categorical(self) -> np.ndarray:
        return np.array([k == "categorical-binary" for k in self.kinds])

    @classmethod
    def default(cls, d: int) -> "FeatureSpace":
        return cls(tuple(f"x{i}" for i in range(d)), ("continuous",) * d)


def _as_2d(X, d: int | None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise InputError(f"expected a 2-D array of instances, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise InputError(f"dimension mismatch: model expects {d} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise InputError("instances must be finite")
    return X


def _dense(H: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.broadcast_to(b, (H.shape[0], W.shape[1])).copy()
    for j in range(W.shape[0]):
        out += H[:, j : j + 1] * W[j]
    return out


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float = 0.0
    features: FeatureSpace | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    def predict(self, X) -> np.ndarray:
        X = _as_2d(X, self.d)
        return _dense(X, self.weights[:, None], np.array([self.bias]))[:, 0]


@dataclass(frozen=True, eq=False)
class MultilinearModel:
    """``bias + sum_u coef_u * prod_{i in u} x_i`` over the listed coalitions."""

    d: int
    terms: tuple[tuple[tuple[int, ...], float], ...]
    bias: float = 0.0
    features: FeatureSpace | None = None

    def __post_init__(self):
        terms = []
        for coalition, coef in self.terms:
            u = tuple(sorted(int(i) for i in coalition))
            if len(set(u)) != len(u) or any(i < 0 or i >= self.d for i in u):
                raise InputError(f"coalition {list(coalition)} is not a subset of 0..{self.d - 1}")
            terms.append((u, float(coef)))
        object.__setattr__(self, "terms", tuple(terms))

    def predict(self, X) -> np.ndarray:
        X = _as_2d(X, self.d)
        out = np.full(X.shape[0], self.bias)
        for u, coef in self.terms:
            prod = np.full(X.shape[0], coef)
            for i in u:
                prod = prod * X[:, i]
            out += prod
        return out


def _check_tree(node, d: int, where: str):
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return
    if not isinstance(node, dict):
        raise ParseError(f"{where}: expected a number or a split object")
    for key in ("feature", "cut", "left", "right"):
        if key not in node:
            raise ParseError(f"{where}: missing field '{key}'")
    f = node["feature"]
    if not isinstance(f, int) or not 0 <= f < d:
        raise ParseError(f"{where}.feature: {f!r} is not a feature index in 0..{d - 1}")
    _check_tree(node["left"], d, where + ".left")
    _check_tree(node["right"], d, where + ".right")


def _eval_tree(node, X: np.ndarray) -> np.ndarray:
    if not isinstance(node, dict):
        return np.full(X.shape[0], float(node))
    go_left = X[:, node["feature"]] < node["cut"]
    out = np.empty(X.shape[0])
    if go_left.any():
        out[go_left] = _eval_tree(node["left"], X[go_left])
    if (~go_left).any():
        out[~go_left] = _eval_tree(node["right"], X[~go_left])
    return out


@dataclass(frozen=True, eq=False)
class ThresholdModel:
    """Sum of axis-aligned split trees; ``x[feature] < cut`` goes left."""

    d: int
    trees: tuple
    bias: float = 0.0
    features: FeatureSpace | None = None

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        for k, tree in enumerate(self.trees):
            _check_tree(tree, self.d, f"trees[{k}]")

    def predict(self, X) -> np.ndarray:
        X = _as_2d(X, self.d)
        out = np.full(X.shape[0], self.bias)
        for tree in self.trees:
            out += _eval_tree(tree, X)
        return out


_ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
    "identity": lambda z: z,
}
_OUTPUTS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda z: z,
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
}


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Dense feed-forward net; ``weights[l]`` has shape (fan_in, fan_out).

    The hidden activation is applied after every layer except the last, whose
    output (width 1) goes through ``output``.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "tanh"
    output: str = "identity"
    features: FeatureSpace | None = None

    def __post_init__(self):
        Ws = tuple(np.atleast_2d(np.asarray(W, dtype=np.float64)) for W in self.weights)
        bs = tuple(np.atleast_1d(np.asarray(b, dtype=np.float64)) for b in self.biases)
        if not Ws or len(Ws) != len(bs):
            raise InputError("need one bias vector per weight matrix")
        for l, (W, b) in enumerate(zip(Ws, bs)):
            if W.shape[1] != b.shape[0]:
                raise InputError(f"layer {l}: weight width {W.shape[1]} != bias length {b.shape[0]}")
            if l and Ws[l - 1].shape[1] != W.shape[0]:
                raise InputError(f"layer {l}: fan-in {W.shape[0]} != previous width {Ws[l - 1].shape[1]}")
        if Ws[-1].shape[1] != 1:
            raise InputError("the output layer must have width 1")
        if self.activation not in _ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")
        if self.output not in _OUTPUTS:
            raise InputError(f"unknown output activation {self.output!r}")
        object.__setattr__(self, "weights", Ws)
        object.__setattr__(self, "biases", bs)

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.d] + [W.shape[1] for W in self.weights]

    def predict(self, X) -> np.ndarray:
        H = _as_2d(X, self.d)
        act = _ACTIVATIONS[self.activation]
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            H = _dense(H, W, b)
            H = _OUTPUTS[self.output](H) if l == last else act(H)
        return H[:, 0]


class MinScore:
    """Pointwise minimum of several predictors' scores (conservative ensemble)."""

    def __init__(self, models: Sequence[Any]):
        if not models:
            raise InputError("MinScore needs at least one model")
        self.models = list(models)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        scores = [predict_batch(m, X) for m in self.models]
        return np.minimum.reduce(scores)


class ExternalPredictor:
    """Scores rows by round-tripping headerless CSV files through a command.

    ``command`` is a shell-style string whose ``{request}`` and ``{response}``
    placeholders are replaced by the file paths.  The command must write one
    score per line to the response file, in request order.
    """

    def __init__(
        self,
        command: str,
        request_path: str | os.PathLike | None = None,
        response_path: str | os.PathLike | None = None,
        batch_size: int = 4096,
        d: int | None = None,
    ):
        if batch_size < 1:
            raise InputError("batch_size must be positive")
        self.command = command
        self.request_path = request_path
        self.response_path = response_path
        self.batch_size = batch_size
        self.d = d
        self._lock = threading.Lock()

    def _round_trip(self, X: np.ndarray, request: Path, response: Path) -> np.ndarray:
        with open(request, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in X:
                writer.writerow([repr(float(v)) for v in row])
        if response.exists():
            response.unlink()
        argv = shlex.split(
            self.command.format(request=shlex.quote(str(request)), response=shlex.quote(str(response)))
        )
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise ProtocolError(f"predictor command exited with {proc.returncode}: {proc.stderr.strip()}")
        try:
            lines = [ln.strip() for ln in response.read_text().splitlines() if ln.strip()]
            scores = np.array([float(ln.split(",")[0]) for ln in lines])
        except (OSError, ValueError) as exc:
            raise ProtocolError(f"unreadable response file {response}: {exc}") from exc
        if scores.shape[0] != X.shape[0]:
            raise ProtocolError(f"sent {X.shape[0]} rows but received {scores.shape[0]} scores")
        return scores

    def predict(self, X) -> np.ndarray:
        X = _as_2d(X, self.d)
        with self._lock, tempfile.TemporaryDirectory() as tmp:
            request = Path(self.request_path or Path(tmp) / "request.csv")
            response = Path(self.response_path or Path(tmp) / "response.csv")
            chunks = [
                self._round_trip(X[s : s + self.batch_size], request, response)
                for s in range(0, X.shape[0], self.batch_size)
            ]
        return np.concatenate(chunks)


def predict_batch(model, xs) -> np.ndarray:
    """Score a non-empty batch of instances, preserving order."""
    X = np.asarray(xs, dtype=np.float64)
    if X.ndim == 1:
        raise InputError("predict_batch expects a list of instances")
    if X.shape[0] == 0:
        raise InputError("empty batch")
    if hasattr(model, "predict"):
        y = model.predict(X)
    elif callable(model):
        y = model(X)
    else:
        raise InputError(f"{type(model).__name__} is not a predictor")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ProtocolError(f"predictor returned {y.shape[0]} scores for {X.shape[0]} rows")
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise EvaluationError(f"non-finite score at row {bad}")
    return y


def predict(model, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("predict expects a single instance")
    return float(predict_batch(model, x[None, :])[0])


# --- JSON model-spec format -------------------------------------------------


def _features_from(obj, d: int) -> FeatureSpace | None:
    if "features" not in obj:
        return None
    feats = obj["features"]
    if not isinstance(feats, list) or len(feats) != d:
        raise ParseError(f"features: expected a list of {d} descriptors")
    try:
        return FeatureSpace(
            tuple(str(f["name"]) for f in feats),
            tuple(str(f.get("kind", "continuous")) for f in feats),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"features: malformed descriptor ({exc})") from exc
    except InputError as exc:
        raise ParseError(f"features: {exc}") from exc


def _field(obj: dict, key: str, where: str):
    if key not in obj:
        raise ParseError(f"{where}: missing field '{key}'")
    return obj[key]


def _matrix(value, where: str, ndim: int) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: not a rectangular numeric array") from exc
    if arr.ndim != ndim:
        raise ParseError(f"{where}: expected {ndim}-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{where}: non-finite entries")
    return arr


def model_from_dict(obj: dict):
    if not isinstance(obj, dict):
        raise ParseError("model spec must be a JSON object")
    kind = _field(obj, "type", "model")
    try:
        if kind == "linear":
            w = _matrix(_field(obj, "weights", "linear"), "linear.weights", 1)
            feats = _features_from(obj, w.shape[0])
            return LinearModel(w, float(obj.get("bias", 0.0)), feats)
        if kind == "multilinear":
            d = int(_field(obj, "d", "multilinear"))
            terms = []
            for k, term in enumerate(_field(obj, "terms", "multilinear")):
                where = f"multilinear.terms[{k}]"
                u = _field(term, "coalition", where)
                bad = [i for i in u if not isinstance(i, int) or not 0 <= i < d]
                if bad:
                    raise ParseError(f"{where}.coalition: indices {bad} outside 0..{d - 1}")
                terms.append((tuple(u), float(_field(term, "coef", where))))
            return MultilinearModel(d, tuple(terms), float(obj.get("bias", 0.0)), _features_from(obj, d))
        if kind == "threshold":
            d = int(_field(obj, "d", "threshold"))
            trees = _field(obj, "trees", "threshold")
            if not isinstance(trees, list):
                raise ParseError("threshold.trees: expected a list")
            return ThresholdModel(d, tuple(trees), float(obj.get("bias", 0.0)), _features_from(obj, d))
        if kind == "mlp":
            layers = _field(obj, "layers", "mlp")
            if not isinstance(layers, list) or not layers:
                raise ParseError("mlp.layers: expected a non-empty list")
            Ws = [_matrix(_field(L, "weights", f"mlp.layers[{l}]"), f"mlp.layers[{l}].weights", 2)
                  for l, L in enumerate(layers)]
            bs = [_matrix(_field(L, "bias", f"mlp.layers[{l}]"), f"mlp.layers[{l}].bias", 1)
                  for l, L in enumerate(layers)]
            return MlpModel(
                tuple(Ws), tuple(bs), obj.get("activation", "tanh"), obj.get("output", "identity"),
                _features_from(obj, Ws[0].shape[0]),
            )
    except ParseError:
        raise
    except InputError as exc:
        raise ParseError(f"{kind}: {exc}") from exc
    raise ParseError(f"model.type: unknown discriminator {kind!r}")


def _features_to(model) -> dict:
    fs = getattr(model, "features", None)
    if fs is None:
        return {}
    return {"features": [{"name": n, "kind": k} for n, k in zip(fs.names, fs.kinds)]}


def model_to_dict(model) -> dict:
    if isinstance(model, LinearModel):
        out = {"type": "linear", "weights": model.weights.tolist(), "bias": model.bias}
    elif isinstance(model, MultilinearModel):
        out = {
            "type": "multilinear", "d": model.d, "bias": model.bias,
            "terms": [{"coalition": list(u), "coef": c} for u, c in model.terms],
        }
    elif isinstance(model, ThresholdModel):
        out = {"type": "threshold", "d": model.d, "bias": model.bias, "trees": list(model.trees)}
    elif isinstance(model, MlpModel):
        out = {
            "type": "mlp", "activation": model.activation, "output": model.output,
            "layers": [{"weights": W.tolist(), "bias": b.tolist()} for W, b in zip(model.weights, model.biases)],
        }
    else:
        raise InputError(f"cannot serialise {type(model).__name__}")
    out.update(_features_to(model))
    return out


def load_model(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return model_from_dict(obj)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")
