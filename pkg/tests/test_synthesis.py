import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from deceptgame import synthesis
from deceptgame.errors import NoStrongStrategy, UnsupportedDegree
from deceptgame.game import DeceiverStrategy, OneSidedPosg, StochasticGame, evaluate_cost
from deceptgame.io import dump_json, strategy_set_to_list
from deceptgame.netsec import NetworkConfig, generate
from deceptgame.pmdp import BOTTOM, Instantiation, istrat, posg_to_pmdp, unfold_memory
from deceptgame.poly import PolynomialExpr as P
from deceptgame.synthesis import (
    AS_PRINTED,
    SynthesisConfig,
    build_nlp,
    ccp_solve,
    default_threshold,
    generate_strategy_set,
    verify_strong,
)

from models import constant_posg, fig4_posg, random_posg
from oracles import deceiver_choices, enumerate_best_response, linear_solve_cost


def small_game():
    """Deceiver d0 with two actions, infiltrator i0 with one binary observation."""
    trans = {
        ("d0", "u"): [("i0", 1.0)],
        ("d0", "v"): [("i0", 0.5), ("gi", 0.5)],
        ("i0", "x"): [("d0", 1.0)],
        ("i0", "y"): [("goal", 1.0)],
    }
    costs = {("d0", "u"): 1.0, ("d0", "v"): 2.0, ("i0", "x"): 0.5}
    g = StochasticGame(["d0", "goal"], ["i0", "gi"], "d0", ("u", "v", "x", "y"), trans, costs,
                       0.8)
    return OneSidedPosg(g, ["o", "g"], {"i0": "o", "gi": "g"}, {"goal", "gi"})


def toy_two_param():
    """One observation with three actions, hence two parameters."""
    trans = {
        ("d0", "u"): [("i0", 1.0)],
        ("d0", "v"): [("i1", 1.0)],
        ("d1", "u"): [("i0", 0.6), ("i1", 0.4)],
        ("i0", "a"): [("d0", 1.0)],
        ("i0", "b"): [("d1", 0.5), ("goal", 0.5)],
        ("i0", "c"): [("goal", 1.0)],
        ("i1", "a"): [("d1", 1.0)],
        ("i1", "b"): [("d0", 1.0)],
        ("i1", "c"): [("d0", 0.3), ("goal", 0.7)],
    }
    costs = {("d0", "u"): 2.0, ("d0", "v"): 3.0, ("d1", "u"): 1.0, ("i0", "a"): 1.5,
             ("i0", "b"): -0.5, ("i1", "c"): 4.0, ("i1", "a"): 0.5}
    g = StochasticGame(["d0", "d1", "goal"], ["i0", "i1"], "d0",
                       ("u", "v", "a", "b", "c"), trans, costs, 0.9)
    return OneSidedPosg(g, ["o"], {"i0": "o", "i1": "o"}, {"goal"})


def enabled_total(pmdp):
    return sum(1 for (s, _a) in pmdp.transitions if s not in pmdp.targets)


class TestBuildNlp:
    def test_bellman_rows_per_action(self):
        pm = posg_to_pmdp(small_game())
        nlp = build_nlp(pm, 0.0)
        assert [a for s, a in nlp.bellman_rows if s == "d0"] == ["u", "v"]
        assert [a for s, a in nlp.bellman_rows if s == "i0"] == [BOTTOM]
        assert "goal" not in {s for s, _ in nlp.bellman_rows}
        assert nlp.parameter_variables == ("p_o_1",)

    @pytest.mark.parametrize("build", [small_game, fig4_posg, toy_two_param])
    def test_constraint_count(self, build):
        pm = posg_to_pmdp(build())
        nlp = build_nlp(pm, 1.0)
        params_rows = len(nlp.nonneg_rows) + len(nlp.normalization_rows)
        assert nlp.constraint_count == (len(pm.targets) + params_rows
                                        + enabled_total(pm) + 1)
        assert len(nlp.bellman_rows) == enabled_total(pm)

    def test_fig4_counts(self):
        nlp = build_nlp(posg_to_pmdp(fig4_posg()), 0.0)
        assert len(nlp.bellman_rows) == 8
        assert nlp.constraint_count == 24

    def test_all_targets(self):
        pm = posg_to_pmdp(small_game())
        pm = replace(pm, targets=frozenset(pm.states))
        nlp = build_nlp(pm, 0.0)
        assert nlp.bellman_rows == ()
        assert nlp.normalization_rows == ()
        assert set(nlp.boundary_rows) == set(pm.states)
        # Left: boundary, strategy-simplex nonnegativity and the threshold row.
        assert all(len(label) == 2 for label, _ in nlp.nonneg_rows)

    def test_fig4_last_action_nonnegativity(self):
        nlp = build_nlp(posg_to_pmdp(fig4_posg()), 0.0)
        rows = dict(nlp.nonneg_rows)
        one_minus = 1 - P.param("p_blue_1") - P.param("p_blue_2")
        assert rows[("blue", "a1")] == one_minus
        assert rows[("s0", BOTTOM, "s5")] == one_minus

    def test_normalization_sums_to_one(self):
        nlp = build_nlp(posg_to_pmdp(fig4_posg()), 0.0)
        assert nlp.normalization_rows
        for _, total in nlp.normalization_rows:
            assert total == P.constant(1)

    def test_unsupported_degree(self):
        pm = posg_to_pmdp(fig4_posg())
        trans = dict(pm.transitions)
        p, q = P.param("p_blue_1"), P.param("p_red_1")
        trans[("s3", BOTTOM)] = {"s4": p * q, "s2": 1 - p * q}
        with pytest.raises(UnsupportedDegree):
            build_nlp(replace(pm, transitions=trans), 0.0)

    def test_orientation(self):
        pm = posg_to_pmdp(fig4_posg())
        assert build_nlp(pm, 0.0, AS_PRINTED).orientation == AS_PRINTED
        with pytest.raises(ValueError):
            build_nlp(pm, 0.0, "sideways")


class TestCcp:
    @pytest.mark.parametrize("vertex", [0.0, 1.0])
    def test_vertex_fixed_point(self, vertex):
        posg = constant_posg()
        pm = posg_to_pmdp(posg)
        nlp = build_nlp(pm, 0.0)
        out = ccp_solve(nlp, Instantiation({"p_o_1": vertex}), SynthesisConfig())
        assert out.iterations <= 2 and out.converged
        assert out.instantiation["p_o_1"] == pytest.approx(vertex, abs=1e-12)
        assert out.value == pytest.approx(7.0, abs=1e-9)

    def test_two_parameter_restarts_do_not_lose_value(self):
        posg = toy_two_param()
        pm = posg_to_pmdp(posg)
        assert len(pm.parameters) == 2
        cfg = SynthesisConfig()
        nlp = build_nlp(pm, default_threshold(posg))
        good = 0
        for r in range(50):
            start = synthesis._random_start(pm, synthesis._restart_rng(11, r))
            out = ccp_solve(nlp, start, cfg)
            u = out.instantiation
            w = [u["p_o_1"], u["p_o_2"]]
            assert min(w) >= 0 and sum(w) <= 1 + 1e-12
            _, value = verify_strong(posg, u, -math.inf, pm)
            _, start_value = verify_strong(posg, start, -math.inf, pm)
            good += value >= start_value - 1e-6
        assert good >= 45

    def test_penalty_schedule(self):
        posg = fig4_posg()
        pm = posg_to_pmdp(posg)
        nlp = build_nlp(pm, 1e3)  # unreachable threshold keeps slacks active
        cfg = SynthesisConfig(ccp_max_iters=15)
        for r in range(5):
            start = synthesis._random_start(pm, synthesis._restart_rng(3, r))
            out = ccp_solve(nlp, start, cfg)
            pens, slacks = out.penalties, out.max_slacks
            for i in range(len(pens) - 1):
                if slacks[i] >= cfg.convergence_tol and pens[i] < cfg.penalty_max:
                    assert pens[i + 1] > pens[i]
                else:
                    assert pens[i + 1] == pens[i]

    def test_value_is_exact_best_response(self):
        posg = fig4_posg()
        pm = posg_to_pmdp(posg)
        out = ccp_solve(build_nlp(pm, 0.0),
                        Instantiation({"p_blue_1": 0.3, "p_blue_2": 0.3, "p_red_1": 0.5}),
                        SynthesisConfig())
        _, v = verify_strong(posg, out.instantiation, 0.0, pm)
        assert out.value == pytest.approx(v, abs=1e-8)
        assert out.value >= out.start_value - 1e-9


class TestVerifyStrong:
    def test_vacuous(self):
        posg = fig4_posg()
        u = Instantiation({"p_blue_1": 0.2, "p_blue_2": 0.4, "p_red_1": 0.3})
        ok, _ = verify_strong(posg, u, -1e300)
        assert ok

    def test_constant_game(self):
        ok, value = verify_strong(constant_posg(), Instantiation({"p_o_1": 0.4}), 7.0)
        assert ok and value == pytest.approx(7.0, abs=1e-9)

    def test_threshold_boundary(self):
        posg = fig4_posg()
        u = Instantiation({"p_blue_1": 0.2, "p_blue_2": 0.4, "p_red_1": 0.3})
        _, value = verify_strong(posg, u, 0.0)
        assert verify_strong(posg, u, value)[0]
        assert not verify_strong(posg, u, math.nextafter(value, math.inf))[0]

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(300 + seed)
        posg = random_posg(rng, n_dec=4, n_inf=4)
        pm = posg_to_pmdp(posg)
        u = synthesis._random_start(pm, rng)
        _, value = verify_strong(posg, u, 0.0, pm)
        table = dict(istrat(pm, u).table)
        assert value == pytest.approx(enumerate_best_response(posg, table), abs=1e-8)

    @pytest.mark.parametrize("seed", range(10))
    def test_lower_bound_for_every_deceiver(self, seed):
        rng = np.random.default_rng(400 + seed)
        posg = random_posg(rng, n_dec=3, n_inf=5)
        pm = posg_to_pmdp(posg)
        u = synthesis._random_start(pm, rng)
        _, value = verify_strong(posg, u, 0.0, pm)
        s = istrat(pm, u)
        for choice in deceiver_choices(posg):
            c = evaluate_cost(posg, DeceiverStrategy(choice), s)[posg.initial]
            assert value <= c + 1e-8
            assert c == pytest.approx(linear_solve_cost(posg, choice, dict(s.table))
                                      [posg.initial], abs=1e-8)


class TestGenerate:
    def test_constant_game_single(self):
        res = generate_strategy_set(constant_posg(),
                                    SynthesisConfig(n_strategies=1, restarts=3))
        assert len(res.strategies) == 1
        assert res.strategies[0].value == pytest.approx(7.0, abs=1e-9)
        assert res.strategies[0].strong

    def test_duplicate_starts_are_deduplicated(self, monkeypatch):
        monkeypatch.setattr(synthesis, "_restart_rng", lambda seed, r: np.random.default_rng(5))
        res = generate_strategy_set(fig4_posg(), SynthesisConfig(
            n_strategies=5, restarts=6, strength_threshold=-1e9))
        assert len(res.strategies) == 1
        assert res.stats["candidates_strong"] == 6

    def test_dedup_distance(self):
        cfg = SynthesisConfig(n_strategies=8, restarts=20, strength_threshold=-1e9,
                              dedup_distance=0.05)
        res = generate_strategy_set(toy_two_param(), cfg)
        vecs = [np.array([e.instantiation[p] for p in res.parameters]) for e in res.strategies]
        for i in range(len(vecs)):
            for j in range(i):
                assert np.max(np.abs(vecs[i] - vecs[j])) >= 0.05

    def test_no_strong_strategy(self):
        with pytest.raises(NoStrongStrategy) as err:
            generate_strategy_set(constant_posg(), SynthesisConfig(
                restarts=2, strength_threshold=8.0))
        assert err.value.best_value == pytest.approx(7.0)

    def test_weak_fill(self):
        res = generate_strategy_set(constant_posg(), SynthesisConfig(
            n_strategies=2, restarts=4, strength_threshold=8.0, allow_weak_fill=True))
        assert res.strategies and not any(e.strong for e in res.strategies)

    def test_sorted_and_reverified(self):
        posg = fig4_posg()
        res = generate_strategy_set(posg, SynthesisConfig(n_strategies=5, restarts=15,
                                                          memory=2))
        values = res.values()
        assert values == sorted(values, reverse=True)
        game = unfold_memory(posg, 2)
        for e in res.strategies:
            ok, v = verify_strong(game, e.instantiation, res.threshold)
            assert ok and abs(v - e.value) <= 1e-8

    def test_default_threshold_is_uniform_value(self):
        posg = fig4_posg()
        res = generate_strategy_set(posg, SynthesisConfig(n_strategies=1, restarts=2))
        assert res.threshold == default_threshold(posg)

    def test_byte_identical(self):
        cfg = SynthesisConfig(n_strategies=4, restarts=10, rng_seed=17, memory=2)
        a = dump_json(strategy_set_to_list(generate_strategy_set(fig4_posg(), cfg)))
        b = dump_json(strategy_set_to_list(generate_strategy_set(fig4_posg(), cfg)))
        assert a == b

    def test_netsec_reverification(self):
        posg, _ = generate(NetworkConfig(layers=4))
        res = generate_strategy_set(posg, SynthesisConfig(n_strategies=10, restarts=30,
                                                          memory=2, rng_seed=1))
        assert len(res.strategies) == 10
        game = unfold_memory(posg, 2)
        pm = posg_to_pmdp(game)
        for e in res.strategies:
            ok, v = verify_strong(game, e.instantiation, res.threshold, pm)
            assert ok and abs(v - e.value) <= 1e-8


def test_config_validation():
    with pytest.raises(ValueError):
        SynthesisConfig(penalty_growth=1.0)
    with pytest.raises(ValueError):
        SynthesisConfig(dedup_distance=0.0)
    with pytest.raises(ValueError):
        SynthesisConfig(restarts=0)


def test_exact_fraction_parameters_accepted():
    posg = fig4_posg()
    u = Instantiation({"p_blue_1": Fraction(1, 5), "p_blue_2": Fraction(2, 5),
                       "p_red_1": Fraction(3, 10)})
    ok, v = verify_strong(posg, u, 0.0)
    assert ok == (v >= 0.0)
