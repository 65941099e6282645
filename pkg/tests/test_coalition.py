import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_zoo
from oracles import naive_dividends
from potshare.coalition import (
    CounterfactualPair, coalition_values, dividends, features_to_mask, load_pair, mask_to_features,
    mixed_input, mobius, reconstruct, save_pair, single_value, value_table_from_array, zeta,
)
from potshare.exceptions import CapacityError, InputError, ParseError
from potshare.models import LinearModel, MultilinearModel


def test_changed_set_uses_epsilon():
    p = CounterfactualPair([0, 0, 0], [1, 1e-13, 0.2], change_epsilon=1e-12)
    assert p.changed == (0, 2)


def test_mixed_input():
    p = CounterfactualPair([0, 0, 0], [1, 2, 3])
    assert mixed_input(p, [0, 2]).tolist() == [1, 0, 3]
    with pytest.raises(InputError):
        mixed_input(CounterfactualPair([0, 0], [1, 0]), [1])


def test_mask_helpers():
    support = (1, 4, 6)
    assert mask_to_features(0b101, support) == (1, 6)
    assert features_to_mask((4, 6), support) == 0b110


@pytest.mark.parametrize("k", [1, 2, 5, 8])
def test_mobius_matches_naive_oracle(k):
    v = np.random.default_rng(k).normal(size=1 << k)
    v[0] = 0
    assert np.allclose(mobius(v), naive_dividends(v), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**31))
def test_round_trip_exact(k, seed):
    v = np.random.default_rng(seed).normal(size=1 << k)
    v[0] = 0
    back = zeta(mobius(v))
    assert np.max(np.abs(back - v)) <= 1e-12 * max(1.0, np.max(np.abs(v)))


def test_reconstruct_from_dividends():
    v = np.random.default_rng(5).normal(size=16)
    v[0] = 0
    dt = dividends(value_table_from_array(v))
    for S in range(16):
        assert reconstruct(dt, mask_to_features(S, dt.support)) == pytest.approx(v[S], abs=1e-12)


def test_multilinear_dividends_are_coefficients():
    # on the unit box x0=0, x1=1, each term's dividend is its coefficient
    model = MultilinearModel(3, (((0, 1), 2.0), ((0, 1, 2), -0.5), ((2,), 0.25)))
    pair = CounterfactualPair([0, 0, 0], [1, 1, 1])
    dt = dividends(coalition_values(model, pair))
    assert dt.pot((0, 1)) == pytest.approx(2.0)
    assert dt.pot((0, 1, 2)) == pytest.approx(-0.5)
    assert dt.pot((2,)) == pytest.approx(0.25)
    assert dt.pot((0,)) == 0.0


def test_dummy_feature_has_no_pots():
    model = MultilinearModel(3, (((0, 1), 1.0),))
    pair = CounterfactualPair([0, 0, 0], [1, 1, 1])
    dt = dividends(coalition_values(model, pair))
    assert all(phi == 0 for u, phi in dt.pots() if 2 in u)


def test_values_match_single_calls(pair4):
    for model in make_zoo().values():
        vt = coalition_values(model, pair4)
        for mask in range(16):
            S = mask_to_features(mask, vt.support)
            assert vt.values[mask] == pytest.approx(single_value(model, pair4, S), abs=1e-14)


def test_total_equals_delta_y(pair4):
    for model in make_zoo().values():
        dt = dividends(coalition_values(model, pair4))
        vt = coalition_values(model, pair4)
        assert dt.total == pytest.approx(vt.delta_y, rel=1e-12, abs=1e-15)


def test_capacity():
    pair = CounterfactualPair(np.zeros(13), np.ones(13))
    with pytest.raises(CapacityError):
        coalition_values(LinearModel(np.ones(13)), pair)


def test_pair_file_round_trip(tmp_path):
    p = CounterfactualPair([0, 1, 0], [1, 1, 1], categorical=[False, False, True], names=("a", "b", "c"))
    save_pair(p, tmp_path / "p.json")
    q = load_pair(tmp_path / "p.json")
    assert q.to_dict() == p.to_dict()


def test_pair_parse_errors(tmp_path):
    bad = tmp_path / "p.json"
    bad.write_text('{"x0": [0, 1]}')
    with pytest.raises(ParseError, match="x1"):
        load_pair(bad)
    bad.write_text('{"x0": [0, 1], "x1": [1]}')
    with pytest.raises(ParseError, match="length"):
        load_pair(bad)
    bad.write_text('{"x0": [0], "x1": [1], "categorical": [4]}')
    with pytest.raises(ParseError, match="categorical"):
        load_pair(bad)
