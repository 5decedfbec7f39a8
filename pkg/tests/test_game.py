import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DEMO_P
from rspo.divergences import REVERSE_KL, RegularizerSpec
from rspo.errors import (ConsistencyError, DimensionError, RangeError, SupportError,
                         ValidationError)
from rspo.game import (ActionSet, as_policy, game_from_dict, game_to_dict, load_game,
                       log_policy, make_game, make_sigmoid_preference, preference_vs_policy,
                       random_preference, regularized_payoff, save_game, utility,
                       validate_preference)


def policies(n):
    return st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n).filter(
        lambda v: sum(v) > 1e-3).map(lambda v: np.array(v) / sum(v))


@st.composite
def game_and_policies(draw, k=2):
    n = draw(st.integers(2, 8))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    P = random_preference(n, np.random.default_rng(seed))
    return (P, *[draw(policies(n)) for _ in range(k)])


class TestValidatePreference:
    def test_accepts_valid(self):
        P = validate_preference(DEMO_P)
        assert np.array_equal(P, DEMO_P)
        assert not P.flags.writeable

    def test_inconsistent_pair(self):
        with pytest.raises(ConsistencyError) as info:
            validate_preference([[0.5, 0.7], [0.4, 0.5]])
        assert (info.value.row, info.value.col) == (0, 1)
        assert "(0,1)" in str(info.value)

    def test_bad_diagonal(self):
        with pytest.raises(ConsistencyError) as info:
            validate_preference([[0.6, 1.0], [0.0, 0.5]])
        assert (info.value.row, info.value.col) == (0, 0)

    def test_non_square(self):
        with pytest.raises(DimensionError):
            validate_preference(np.full((2, 3), 0.5))

    def test_too_small(self):
        with pytest.raises(DimensionError):
            validate_preference([[0.5]])

    def test_out_of_range(self):
        with pytest.raises(RangeError):
            validate_preference([[0.5, 1.5], [-0.5, 0.5]])

    def test_tolerances(self):
        P = np.array([[0.5, 0.7], [0.3 + 5e-10, 0.5]])
        validate_preference(P)
        with pytest.raises(ConsistencyError):
            validate_preference(P, tol=1e-12)


class TestUtility:
    def test_degenerate_policies(self):
        P = [[0.5, 0.7], [0.3, 0.5]]
        assert utility([1, 0], [0, 1], P) == pytest.approx(0.7)

    def test_uniform_demo(self):
        assert utility([0.5, 0.5], [0.5, 0.5], DEMO_P) == pytest.approx(0.5, abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            utility([1.0, 0.0, 0.0], [0.5, 0.5], DEMO_P)

    @given(game_and_policies(k=1))
    def test_self_play_is_half(self, data):
        P, pi = data
        assert abs(utility(pi, pi, P) - 0.5) <= 1e-12

    @given(game_and_policies(k=3), st.floats(0.0, 1.0))
    def test_bilinear(self, data, a):
        P, p1, p2, q = data
        lhs = utility(a * p1 + (1 - a) * p2, q, P)
        rhs = a * utility(p1, q, P) + (1 - a) * utility(p2, q, P)
        assert abs(lhs - rhs) <= 1e-12


class TestPreferenceVsPolicy:
    def test_rows(self):
        assert preference_vs_policy(0, [0.5, 0.5], DEMO_P) == pytest.approx(0.75)
        assert preference_vs_policy(1, [0.5, 0.5], DEMO_P) == pytest.approx(0.25)
        assert preference_vs_policy(0, [1.0, 0.0], DEMO_P) == 0.5

    def test_index_error(self):
        with pytest.raises(IndexError):
            preference_vs_policy(2, [0.5, 0.5], DEMO_P)


class TestRegularizedPayoff:
    def test_at_reference(self, demo_game):
        mu = demo_game.reference
        assert regularized_payoff(mu, mu, demo_game, REVERSE_KL) == pytest.approx(0.5)

    def test_tau_zero(self):
        g = make_game(DEMO_P, tau=0.0)
        pi, q = np.array([0.75, 0.25]), np.array([0.1, 0.9])
        assert regularized_payoff(pi, q, g, REVERSE_KL) == utility(pi, q, DEMO_P)

    def test_demo_value(self, demo_game):
        v = regularized_payoff([0.75, 0.25], [0.5, 0.5], demo_game, REVERSE_KL)
        assert v == pytest.approx(0.625 - 0.130812035941137, abs=1e-12)
        assert v == pytest.approx(0.494188, abs=1e-6)

    def test_support_error(self):
        g = make_game(DEMO_P, tau=1.0)
        with pytest.raises(SupportError):
            regularized_payoff([0.0, 1.0], [0.5, 0.5], g, RegularizerSpec.single("forward_kl"))

    @settings(max_examples=50)
    @given(game_and_policies(k=3), st.floats(0.0, 5.0))
    def test_antisymmetric(self, data, tau):
        P, mu, pi, q = data
        mu = np.maximum(mu, 1e-3)
        mu /= mu.sum()
        pi, q = np.maximum(pi, 1e-6), np.maximum(q, 1e-6)
        pi, q = pi / pi.sum(), q / q.sum()
        g = make_game(P, mu, tau)
        for reg in (REVERSE_KL, RegularizerSpec.single("chi_square")):
            s = regularized_payoff(pi, q, g, reg) + regularized_payoff(q, pi, g, reg)
            assert s == pytest.approx(1.0, abs=1e-9)


class TestSigmoidPreference:
    def test_equal_rewards(self):
        assert np.all(make_sigmoid_preference(np.zeros(4), 0.3) == 0.5)

    def test_logistic_value(self):
        P = make_sigmoid_preference([1.0, 0.0], 1.0)
        assert P[0, 1] == pytest.approx(0.7310585786300049, abs=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=12), st.floats(1e-3, 10))
    def test_always_valid(self, rewards, beta):
        P = make_sigmoid_preference(rewards, beta)
        validate_preference(P, tol=1e-12)
        assert np.all(P + P.T == 1.0)

    def test_beta_positive(self):
        with pytest.raises(RangeError):
            make_sigmoid_preference([0.0, 1.0], 0.0)


class TestGameSpec:
    def test_reference_floor(self):
        g = make_game(DEMO_P, [1.0, 0.0], tau=0.5)
        assert g.reference.min() >= 1e-12 * 0.99
        assert g.reference.sum() == pytest.approx(1.0, abs=1e-15)

    def test_labels(self):
        with pytest.raises(DimensionError):
            make_game(DEMO_P, labels=["a"])
        assert ActionSet(2, ("x", "y")).label(1) == "y"
        assert ActionSet(2).label(1) == "1"

    def test_negative_tau(self):
        with pytest.raises(RangeError):
            make_game(DEMO_P, tau=-1.0)

    def test_reference_dimension(self):
        with pytest.raises(DimensionError):
            make_game(DEMO_P, [0.2, 0.3, 0.5])

    def test_immutable(self, demo_game):
        with pytest.raises(ValueError):
            demo_game.preference[0, 0] = 0.1

    def test_as_policy(self):
        with pytest.raises(RangeError):
            as_policy([0.5, 0.6])
        with pytest.raises(RangeError):
            as_policy([1.5, -0.5])

    def test_log_policy(self):
        with pytest.raises(SupportError):
            log_policy([1.0, 0.0])


class TestGameFile:
    def test_round_trip(self, tmp_path, rng):
        g = make_game(random_preference(5, rng), rng.dirichlet(np.ones(5)), 0.3,
                      labels=list("abcde"))
        save_game(g, tmp_path / "g.json")
        h = load_game(tmp_path / "g.json")
        assert np.array_equal(g.preference, h.preference)
        assert np.allclose(g.reference, h.reference, atol=1e-15, rtol=0)
        assert h.tau == 0.3 and h.actions.labels == tuple("abcde")

    def test_text_round_trip_tolerance(self):
        doc = {"size": 2, "preference": [[0.5, 0.3333333333], [0.6666666667, 0.5]]}
        g = game_from_dict(doc)
        assert np.all(g.preference + g.preference.T == 1.0)

    def test_rejections(self, tmp_path):
        with pytest.raises(ValidationError):
            game_from_dict({"size": 2, "preference": DEMO_P, "extra": 1})
        with pytest.raises(ValidationError):
            game_from_dict({"preference": DEMO_P})
        with pytest.raises(DimensionError):
            game_from_dict({"size": 3, "preference": DEMO_P})
        with pytest.raises(ConsistencyError) as info:
            game_from_dict({"size": 2, "preference": [[0.5, 0.7], [0.4, 0.5]]})
        assert info.value.row == 0 and info.value.col == 1
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ValidationError):
            load_game(p)

    def test_to_dict_is_json(self, demo_game):
        json.dumps(game_to_dict(demo_game))
