"""scikit-learn style front end.

:class:`MicroGameExplainer` takes baselines as ``X`` and counterfactuals as
``y``-shaped second argument, so it slots into code that already passes
arrays around estimator-style::

    explainer = MicroGameExplainer(model, m=8).fit(X0, X1)
    locals_ = explainer.transform(X0, X1)        # (n_pairs, n_features)
    explainer.global_report_.averages["micro_shapley"]
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .coalition import DEFAULT_EPSILON, EXHAUSTIVE_CAP, CounterfactualPair
from .exceptions import InputError
from .explain import ExplainConfig, aggregate, explain_local, parse_rules
from .limits import SaturationPolicy
from .montecarlo import McConfig


class MicroGameExplainer(TransformerMixin, BaseEstimator):
    def __init__(self, model=None, m=5, rules=("equal_split", "micro_shapley", "equal_surplus"),
                 order_cap=None, es_mode="macro", change_epsilon=DEFAULT_EPSILON, categorical=None,
                 saturate=False, use_mc=False, n_permutations=1000, random_state=0,
                 output_rule="micro_shapley", feature_names=None, exhaustive_cap=EXHAUSTIVE_CAP):
        self.model = model
        self.m = m
        self.rules = rules
        self.order_cap = order_cap
        self.es_mode = es_mode
        self.change_epsilon = change_epsilon
        self.categorical = categorical
        self.saturate = saturate
        self.use_mc = use_mc
        self.n_permutations = n_permutations
        self.random_state = random_state
        self.output_rule = output_rule
        self.feature_names = feature_names
        self.exhaustive_cap = exhaustive_cap

    def _config(self) -> ExplainConfig:
        seed = self.random_state if isinstance(self.random_state, (int, np.integer)) else 0
        return ExplainConfig(
            m=self.m,
            rules=self.rules,
            order_cap=self.order_cap,
            es_mode=self.es_mode,
            saturate=SaturationPolicy() if self.saturate is True else (self.saturate or None),
            use_mc=self.use_mc,
            mc=McConfig(permutations=self.n_permutations, seed=int(seed)),
            exhaustive_cap=self.exhaustive_cap,
        )

    def _pairs(self, X0, X1):
        if X1 is None:
            raise InputError("counterfactual rows are required")
        X0 = check_array(X0, dtype=np.float64)
        X1 = check_array(X1, dtype=np.float64)
        if X0.shape != X1.shape:
            raise InputError(f"baseline shape {X0.shape} != counterfactual shape {X1.shape}")
        names = tuple(self.feature_names) if self.feature_names is not None else None
        return [CounterfactualPair(a, b, self.change_epsilon, self.categorical, names) for a, b in zip(X0, X1)]

    def fit(self, X, y=None):
        if self.model is None:
            raise InputError("MicroGameExplainer needs a model")
        rule = parse_rules([self.output_rule])[0]
        cfg = self._config()
        if rule not in cfg.rules and not cfg.use_mc:
            raise InputError(f"output_rule {self.output_rule!r} is not among the selected rules")
        pairs = self._pairs(X, y)
        self.n_features_in_ = pairs[0].d
        self.reports_ = [explain_local(self.model, p, cfg) for p in pairs]
        self.global_report_ = aggregate(self.reports_)
        self.output_rule_ = rule
        return self

    def transform(self, X, y=None):
        check_is_fitted(self, "reports_")
        pairs = self._pairs(X, y)
        if pairs[0].d != self.n_features_in_:
            raise InputError(f"expected {self.n_features_in_} features, got {pairs[0].d}")
        cfg = self._config()
        return np.array([explain_local(self.model, p, cfg).locals[self.output_rule_] for p in pairs])

    def fit_transform(self, X, y=None, **fit_params):
        self.fit(X, y)
        return np.array([r.locals[self.output_rule_] for r in self.reports_])

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "reports_")
        return np.asarray(self.global_report_.names, dtype=object)
