import json

import numpy as np
import pytest
from sklearn.base import clone

from conftest import make_zoo
from potshare.coalition import CounterfactualPair, coalition_values, dividends
from potshare.estimator import MicroGameExplainer
from potshare.exceptions import CapacityError, InputError
from potshare.explain import (
    ExplainConfig, aggregate, explain_global, explain_local, parse_rules, render_table, within_pot_table,
)
from potshare.limits import SaturationPolicy
from potshare.models import LinearModel, MultilinearModel

ALL = ("equal_split", "micro_shapley", "solidarity", "equal_surplus")


def test_parse_rules():
    assert parse_rules("es,shapley,eq") == ("equal_split", "micro_shapley", "equal_surplus")
    with pytest.raises(InputError):
        parse_rules("banzhaf")
    with pytest.raises(InputError):
        parse_rules("")


@pytest.mark.parametrize("name", list(make_zoo()))
@pytest.mark.parametrize("es_mode", ["macro", "pot"])
def test_efficiency_every_rule(pair4, name, es_mode):
    rep = explain_local(make_zoo()[name], pair4, ExplainConfig(m=3, rules=ALL, es_mode=es_mode))
    for r in ALL:
        assert rep.locals[r].sum() == pytest.approx(rep.delta_y, rel=1e-9, abs=1e-12)
    for pot in rep.pots:
        for r, sh in pot.shares.items():
            assert sh.sum() == pytest.approx(pot.phi, rel=1e-9, abs=1e-12)


def test_dividends_sum_to_delta(pair4):
    for model in make_zoo().values():
        dt = dividends(coalition_values(model, pair4))
        rep = explain_local(model, pair4)
        assert dt.total == pytest.approx(rep.delta_y, rel=1e-9, abs=1e-12)


def test_linear_model_all_rules_agree():
    model = LinearModel([1.0, 2.0, 3.0])
    pair = CounterfactualPair([0, 0, 0], [1, 0.5, -1])
    rep = explain_local(model, pair, ExplainConfig(rules=ALL))
    for r in ALL:
        assert rep.locals[r] == pytest.approx([1.0, 1.0, -3.0])
    assert all(p.phi == 0.0 for p in rep.pots)


def test_macro_equal_surplus():
    model = MultilinearModel(3, (((0,), 1.0), ((0, 1), 2.0), ((1, 2), 0.6)))
    pair = CounterfactualPair([0, 0, 0], [1, 1, 1])
    rep = explain_local(model, pair, ExplainConfig(rules="es"))
    # singletons 1, 0, 0; surplus 2.6 split three ways
    assert rep.locals["equal_surplus"] == pytest.approx([1 + 2.6 / 3, 2.6 / 3, 2.6 / 3])
    assert all("equal_surplus" not in p.shares for p in rep.pots)


def test_order_cap_drops_high_order_pots():
    model = MultilinearModel(3, (((0, 1, 2), 1.0), ((0, 1), 1.0)))
    pair = CounterfactualPair([0, 0, 0], [1, 1, 1])
    rep = explain_local(model, pair, ExplainConfig(order_cap=2))
    assert [p.u for p in rep.pots if p.phi] == [(0, 1)]


def test_per_feature_resolution():
    model = lambda X: X[:, 0] ** 2 * X[:, 1]  # noqa: E731
    pair = CounterfactualPair([0, 0], [1, 1])
    rep = explain_local(model, pair, ExplainConfig(m=(4, 2), rules="shapley"))
    assert rep.pots[0].m == (4, 2)


def test_saturate_picks_m():
    model = LinearModel([1.0, 2.0])
    rep = explain_local(model, CounterfactualPair([0, 0], [1, 1]), ExplainConfig(saturate=SaturationPolicy()))
    assert rep.m == 1


def test_capacity():
    pair = CounterfactualPair(np.zeros(13), np.ones(13))
    with pytest.raises(CapacityError):
        explain_local(LinearModel(np.ones(13)), pair)


def test_within_pot_table():
    model = lambda X: X[:, 0] ** 2 * X[:, 1]  # noqa: E731
    rep = explain_local(model, CounterfactualPair([0, 0], [1, 1]), ExplainConfig(m=8))
    rows = within_pot_table(rep, (0, 1))
    eq = [r for r in rows if r[0] == "equal_split"]
    assert all(r[3] == 0 for r in eq)
    sh = [r for r in rows if r[0] == "micro_shapley"]
    assert sh[0][3] == pytest.approx(-sh[1][3])
    with pytest.raises(InputError):
        rep.pot((0, 5))


def test_report_files(tmp_path, pair4):
    rep = explain_local(make_zoo()["mlp_tanh"], pair4, ExplainConfig(rules=ALL))
    written = rep.write(tmp_path, "all")
    assert sorted(p.name for p in written) == ["locals.csv", "pots.csv", "report.json", "report.txt"]
    data = json.loads((tmp_path / "report.json").read_text())
    assert set(data["locals"]) == set(ALL)
    head = (tmp_path / "locals.csv").read_text().splitlines()[0]
    assert head.startswith("feature,equal_split") and head.endswith("equal_surplus_pct")
    assert "Total" in render_table(rep)
    with pytest.raises(InputError):
        rep.write(tmp_path, "xml")


def test_zero_features_hidden_unless_dense():
    model = LinearModel([1.0, 0.0, 1.0])
    pair = CounterfactualPair([0, 0, 0], [1, 1, 1])
    assert explain_local(model, pair).rows() == [0, 2]
    assert explain_local(model, pair, ExplainConfig(dense=True)).rows() == [0, 1, 2]


def test_global_efficiency():
    model = make_zoo()["mlp_relu"]
    rng = np.random.default_rng(4)
    pairs = [CounterfactualPair(rng.random(4), rng.random(4)) for _ in range(5)]
    g = explain_global(model, pairs, ExplainConfig(m=2, rules=ALL))
    mean_dy = np.mean([explain_local(model, p).delta_y for p in pairs])
    for r in ALL:
        assert g.averages[r].sum() == pytest.approx(mean_dy, rel=1e-9)
    assert g.pair_count == 5


def test_global_write(tmp_path):
    g = explain_global(LinearModel([1.0, 2.0]), [CounterfactualPair([0, 0], [1, 1])])
    names = sorted(p.name for p in g.write(tmp_path, "all"))
    assert names == ["global.csv", "global.json", "global.txt"]
    with pytest.raises(InputError):
        aggregate([])


def test_kendall_present(pair4):
    rep = explain_local(make_zoo()["multilinear"], pair4)
    assert "equal_split~micro_shapley" in rep.kendall


# --- estimator --------------------------------------------------------------

def _data():
    rng = np.random.default_rng(0)
    return rng.random((4, 3)), rng.random((4, 3))


def test_estimator_fit_transform():
    X0, X1 = _data()
    model = MultilinearModel(3, (((0, 1), 1.0), ((2,), 0.5)))
    est = MicroGameExplainer(model, m=4)
    out = est.fit_transform(X0, X1)
    assert out.shape == (4, 3)
    dy = model.predict(X1) - model.predict(X0)
    assert out.sum(axis=1) == pytest.approx(dy)
    assert np.array_equal(est.transform(X0, X1), out)
    assert est.n_features_in_ == 3
    assert list(est.get_feature_names_out()) == ["x0", "x1", "x2"]


def test_estimator_params_and_clone():
    est = MicroGameExplainer(LinearModel([1, 1]), m=7, output_rule="equal_split")
    params = est.get_params()
    assert params["m"] == 7 and params["output_rule"] == "equal_split"
    c = clone(est).set_params(m=2)
    assert c.m == 2 and est.m == 7


def test_estimator_validation():
    X0, X1 = _data()
    with pytest.raises(InputError):
        MicroGameExplainer().fit(X0, X1)
    with pytest.raises(InputError):
        MicroGameExplainer(LinearModel([1, 1, 1])).fit(X0, X1[:, :2])
    with pytest.raises(InputError):
        MicroGameExplainer(LinearModel([1, 1, 1]), rules="eq", output_rule="shapley").fit(X0, X1)
    with pytest.raises(ValueError):
        MicroGameExplainer(LinearModel([1, 1, 1])).fit(np.full((2, 3), np.nan), X1[:2])
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        MicroGameExplainer(LinearModel([1, 1, 1])).transform(X0, X1)
