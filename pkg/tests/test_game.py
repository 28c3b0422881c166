import itertools

import numpy as np
import pytest

from deceptgame.errors import IncompleteStrategyError, ModelError, StrategyError
from deceptgame.game import (
    DeceiverStrategy,
    InfiltratorStrategy,
    OneSidedPosg,
    StochasticGame,
    best_response_deceiver,
    ensure_valid,
    evaluate_cost,
    induced_chain,
    validate,
    worst_case_value,
)

from models import (
    constant_posg,
    fig4_posg,
    random_deceiver,
    random_posg,
    random_strategy,
    two_state_loop,
)
from oracles import deceiver_choices, enumerate_best_response, linear_solve_cost

FIG4_TABLE = {("blue", "a3"): 0.2, ("blue", "a2"): 0.4, ("blue", "a1"): 0.4,
              ("red", "a2"): 0.3, ("red", "a1"): 0.7}
FIG4_CHOICE = {"s2": "d1", "s4": "d2", "s5": "d1"}
# Dense linear solve of the fixed-point system (tests/oracles.py), frozen.
FIG4_VALUE = 9.36693616780687
FIG4_BEST = 9.36693616780687


def _tiny(trans, costs=None, dec=("d",), inf=("i",), obs=None, targets=()):
    game = StochasticGame(dec, inf, dec[0], ("a", "b"), trans, costs or {}, 0.9)
    return OneSidedPosg(game, ["z"], {s: "z" for s in inf} if obs is None else obs, targets)


class TestValidate:
    def test_fig4_is_valid(self):
        assert validate(fig4_posg()) == []

    def test_unnormalized_distribution(self):
        posg = _tiny({("d", "a"): [("i", 0.9)], ("i", "a"): [("d", 1.0)]})
        report = validate(posg)
        assert [v.kind for v in report] == ["distribution not normalized"]
        assert report[0].location == ("d", "a")

    def test_alternation(self):
        posg = _tiny({("d", "a"): [("d2", 1.0)], ("d2", "a"): [("i", 1.0)],
                      ("i", "a"): [("d", 1.0)]}, dec=("d", "d2"))
        assert [v.kind for v in validate(posg)] == ["bipartite alternation"]

    def test_deadlock_and_missing_observation(self):
        posg = _tiny({("d", "a"): [("i", 1.0)]}, obs={})
        kinds = sorted(v.kind for v in validate(posg))
        assert kinds == ["deadlock", "observation missing"]
        with pytest.raises(ModelError) as err:
            ensure_valid(posg)
        assert len(err.value.violations) == 2

    def test_action_count_consistency(self):
        posg = _tiny({("d", "a"): [("i", 0.5), ("j", 0.5)], ("i", "a"): [("d", 1.0)],
                      ("j", "a"): [("d", 1.0)], ("j", "b"): [("d", 1.0)]}, inf=("i", "j"))
        assert [v.kind for v in validate(posg)] == ["action-count consistency"]

    def test_discount_and_targets(self):
        game = StochasticGame(["d"], ["i"], "d", ("a",),
                              {("d", "a"): [("i", 1.0)], ("i", "a"): [("d", 1.0)]}, {}, 1.0)
        report = validate(OneSidedPosg(game, ["z"], {"i": "z"}, {"nowhere"}))
        assert sorted(v.kind for v in report) == ["discount out of range", "unknown target"]


class TestInducedChain:
    def test_fig4_dirac_on_a2_at_s3(self):
        posg = fig4_posg()
        strat = InfiltratorStrategy({("blue", "a1"): 1.0, ("red", "a2"): 1.0})
        chain = induced_chain(posg, DeceiverStrategy(FIG4_CHOICE), strat)
        assert chain.transitions["s3"] == {"s4": 1.0}

    def test_deterministic_game_gives_single_path(self):
        posg = fig4_posg()
        strat = InfiltratorStrategy({("blue", "a1"): 1.0, ("red", "a1"): 1.0})
        chain = induced_chain(posg, DeceiverStrategy(FIG4_CHOICE), strat)
        for row in chain.transitions.values():
            assert len(row) == 1 and list(row.values()) == [1.0]

    def test_uniform_mixture(self):
        trans = {("d", "a"): [("i", 1.0)], ("i", "a"): [("d", 1.0)], ("i", "b"): [("e", 1.0)],
                 ("e", "a"): [("j", 1.0)], ("j", "a"): [("d", 1.0)], ("j", "b"): [("e", 1.0)]}
        game = StochasticGame(["d", "e"], ["i", "j"], "d", ("a", "b"), trans, {}, 0.9)
        posg = OneSidedPosg(game, ["z", "w"], {"i": "z", "j": "w"}, set())
        strat = InfiltratorStrategy({("z", "a"): 0.5, ("z", "b"): 0.5,
                                     ("w", "a"): 0.5, ("w", "b"): 0.5})
        chain = induced_chain(posg, DeceiverStrategy({"d": "a", "e": "a"}), strat)
        assert chain.transitions["i"] == {"d": 0.5, "e": 0.5}
        assert chain.transitions["j"] == {"d": 0.5, "e": 0.5}

    def test_mixture_costs(self):
        posg = fig4_posg()
        chain = induced_chain(posg, DeceiverStrategy(FIG4_CHOICE), InfiltratorStrategy(FIG4_TABLE))
        assert chain.costs["s0"] == pytest.approx(0.4 * 1.0)
        assert chain.costs["s3"] == pytest.approx(0.3 * -1.0)
        assert chain.costs["s4"] == 0.5

    def test_incomplete_strategy_names_state(self):
        posg = fig4_posg()
        strat = InfiltratorStrategy({("blue", "a1"): 1.0})
        with pytest.raises(IncompleteStrategyError, match="red"):
            induced_chain(posg, DeceiverStrategy(FIG4_CHOICE), strat)
        with pytest.raises(IncompleteStrategyError, match="s5"):
            induced_chain(posg, DeceiverStrategy({"s2": "d1", "s4": "d1"}),
                          InfiltratorStrategy(FIG4_TABLE))


class TestEvaluateCost:
    def test_geometric_loop(self):
        posg = two_state_loop(0.5)
        cv = evaluate_cost(posg, DeceiverStrategy({"sd": "a"}), InfiltratorStrategy({("z", "a"): 1}))
        assert cv["sd"] == pytest.approx(2.0, abs=1e-9)

    def test_targets_cost_zero(self):
        posg = constant_posg()
        cv = evaluate_cost(posg, DeceiverStrategy({"d0": "u", "d1": "u"}),
                           InfiltratorStrategy({("o", "x"): 1.0}))
        assert cv["goal"] == 0.0
        assert cv["i0"] == pytest.approx(7.0)

    def test_fig4_frozen(self):
        cv = evaluate_cost(fig4_posg(), DeceiverStrategy(FIG4_CHOICE),
                           InfiltratorStrategy(FIG4_TABLE))
        assert cv["s0"] == pytest.approx(FIG4_VALUE, abs=1e-8)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_linear_solve(self, seed):
        rng = np.random.default_rng(seed)
        posg = random_posg(rng, n_dec=4, n_inf=4)
        d, s = random_deceiver(posg, rng), random_strategy(posg, rng)
        cv = evaluate_cost(posg, d, s)
        ref = linear_solve_cost(posg, d.choice, s.table)
        for st in posg.states:
            assert cv[st] == pytest.approx(ref[st], abs=1e-8)

    def test_residual_small(self):
        rng = np.random.default_rng(7)
        posg = random_posg(rng, n_dec=5, n_inf=8)
        d, s = random_deceiver(posg, rng), random_strategy(posg, rng)
        cv = evaluate_cost(posg, d, s)
        eng = posg.engine
        c = np.array([[cv[x]] for x in posg.states])
        w_dec, _ = eng.deceiver_weights(d.choice)
        w_inf, _ = eng.infiltrator_weights(s)
        assert eng.residual(c, w_dec[:, None], w_inf[:, None]) <= 1e-8


class TestBestResponse:
    def test_dominance(self):
        trans = {("d", "a"): [("i", 1.0)], ("d", "b"): [("i", 1.0)], ("i", "a"): [("d", 1.0)]}
        posg = _tiny(trans, {("d", "a"): 5.0, ("d", "b"): 3.0})
        d, cv = best_response_deceiver(posg, InfiltratorStrategy({("z", "a"): 1.0}))
        assert d["d"] == "b"
        assert cv["d"] == pytest.approx(3.0 / (1 - 0.9))

    def test_forced_deceiver_equals_evaluation(self):
        posg = two_state_loop(0.7)
        s = InfiltratorStrategy({("z", "a"): 1.0})
        d, cv = best_response_deceiver(posg, s)
        assert cv["sd"] == pytest.approx(evaluate_cost(posg, d, s)["sd"], abs=1e-12)

    def test_fig4_frozen(self):
        _, cv = best_response_deceiver(fig4_posg(), InfiltratorStrategy(FIG4_TABLE))
        assert cv["s0"] == pytest.approx(FIG4_BEST, abs=1e-8)

    @pytest.mark.parametrize("seed", range(15))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(100 + seed)
        posg = random_posg(rng, n_dec=5, n_inf=5)
        s = random_strategy(posg, rng)
        d, cv = best_response_deceiver(posg, s)
        assert cv[posg.initial] == pytest.approx(enumerate_best_response(posg, s.table), abs=1e-8)
        assert evaluate_cost(posg, d, s)[posg.initial] == pytest.approx(cv[posg.initial], abs=1e-8)

    def test_lower_than_every_deterministic_strategy(self):
        rng = np.random.default_rng(5)
        posg = random_posg(rng, n_dec=4, n_inf=6)
        s = random_strategy(posg, rng)
        _, cv = best_response_deceiver(posg, s)
        for choice in deceiver_choices(posg):
            value = evaluate_cost(posg, DeceiverStrategy(choice), s)[posg.initial]
            assert cv[posg.initial] <= value + 1e-9

    def test_cost_scaling(self):
        rng = np.random.default_rng(11)
        posg = random_posg(rng, n_dec=4, n_inf=4)
        s = random_strategy(posg, rng)
        g = posg.game
        scaled = OneSidedPosg(
            StochasticGame(g.deceiver_states, g.infiltrator_states, g.initial, g.actions,
                           {k: list(v) for k, v in g.transitions.items()},
                           {k: 3.5 * v for k, v in g.costs.items()}, g.discount),
            posg.observations, posg.obs_fn, posg.targets)
        d1, c1 = best_response_deceiver(posg, s)
        d2, c2 = best_response_deceiver(scaled, s)
        for st in posg.states:
            assert c2[st] == pytest.approx(3.5 * c1[st], abs=1e-7)
        assert d1.choice == d2.choice

    def test_unreachable_states_do_not_matter(self):
        rng = np.random.default_rng(12)
        posg = random_posg(rng, n_dec=3, n_inf=3)
        s = random_strategy(posg, rng)
        g = posg.game
        trans = {k: list(v) for k, v in g.transitions.items()}
        trans[("dx", "u0")] = [("ix", 1.0)]
        trans[("ix", "a0")] = [("dx", 0.5), (g.deceiver_states[0], 0.5)]
        costs = dict(g.costs)
        costs[("dx", "u0")] = 50.0
        bigger = OneSidedPosg(
            StochasticGame(g.deceiver_states + ("dx",), g.infiltrator_states + ("ix",),
                           g.initial, g.actions, trans, costs, g.discount),
            posg.observations + ("zz",), dict(posg.obs_fn, ix="zz"), posg.targets)
        s2 = InfiltratorStrategy({**s.table, ("zz", "a0"): 1.0})
        assert best_response_deceiver(bigger, s2)[1][g.initial] == pytest.approx(
            best_response_deceiver(posg, s)[1][g.initial], abs=1e-10)


def _acyclic_with_shared_observation(rng):
    while True:
        posg = random_posg(rng, n_dec=4, n_inf=5, n_obs=2, acyclic=True, target_prob=0.1)
        multi = [z for z, acts in posg.observation_actions.items() if len(acts) >= 2]
        if multi:
            return posg, multi[0]


@pytest.mark.parametrize("seed", range(5))
def test_affine_in_one_probability_on_acyclic_games(seed):
    rng = np.random.default_rng(300 + seed)
    posg, z = _acyclic_with_shared_observation(rng)
    d = random_deceiver(posg, rng)
    base = random_strategy(posg, rng)
    a0, a1 = posg.observation_actions[z][:2]
    mass = base.prob(z, a0) + base.prob(z, a1)

    def value(x):
        table = dict(base.table)
        table[(z, a0)], table[(z, a1)] = x * mass, (1 - x) * mass
        return evaluate_cost(posg, d, InfiltratorStrategy(table))[posg.initial]

    xs = [0.1, 0.45, 0.9]
    ys = [value(x) for x in xs]
    slope = (ys[2] - ys[0]) / (xs[2] - xs[0])
    assert ys[1] == pytest.approx(ys[0] + slope * (xs[1] - xs[0]), abs=1e-8)


class TestWorstCase:
    def test_singleton(self):
        rng = np.random.default_rng(1)
        posg = random_posg(rng)
        d, s = random_deceiver(posg, rng), random_strategy(posg, rng)
        value, idx = worst_case_value(posg, d, [s])
        assert idx == 0
        assert value == pytest.approx(evaluate_cost(posg, d, s)[posg.initial], abs=1e-10)

    def test_duplicates_and_three_strategies(self):
        rng = np.random.default_rng(2)
        posg = random_posg(rng, n_dec=4, n_inf=6)
        d = random_deceiver(posg, rng)
        strategies = [random_strategy(posg, rng) for _ in range(3)]
        ref = [linear_solve_cost(posg, d.choice, s.table)[posg.initial] for s in strategies]
        value, idx = worst_case_value(posg, d, strategies)
        assert value == pytest.approx(max(ref), abs=1e-8)
        assert idx == int(np.argmax(ref))
        doubled, idx2 = worst_case_value(posg, d, strategies + strategies)
        assert doubled == pytest.approx(value, abs=1e-12) and idx2 == idx

    def test_empty(self):
        with pytest.raises(StrategyError, match="no strategies"):
            worst_case_value(fig4_posg(), DeceiverStrategy(FIG4_CHOICE), [])


def test_strategy_table_must_normalize():
    with pytest.raises(StrategyError):
        InfiltratorStrategy({("z", "a"): 0.6, ("z", "b"): 0.3})


def test_all_choices_enumerated_for_constant_game():
    posg = constant_posg(7.0)
    s = InfiltratorStrategy({("o", "x"): 0.3, ("o", "y"): 0.7})
    for choice in deceiver_choices(posg):
        assert evaluate_cost(posg, DeceiverStrategy(choice), s)["i0"] == pytest.approx(7.0)
    assert len(list(itertools.islice(deceiver_choices(posg), 10))) == 2
