"""Stage 2: a deterministic deceiver strategy minimising the worst case over N strategies.

``solve_milp_bnb`` is an exact depth-first branch-and-bound over deceiver
actions.  A node fixes the actions of some deceiver states; its lower bound
lets every other deceiver state minimise separately per infiltrator
strategy (decoupling can only lower the maximum).  Its upper bound is the
exact worst case of a greedy completion.
"""

import itertools
import logging
import time
from dataclasses import dataclass

import numpy as np

from .errors import EnumerationLimitError, StrategyError
from .game import TIE_TOL, DeceiverStrategy, _full_choice
from .milp import _check_strategies, build_milp, compute_big_m

log = logging.getLogger(__name__)

PRUNE_TOL = 1e-9
GAP_TOL = 1e-6
BRUTE_FORCE_LIMIT = 10**6
_COLUMN_BUDGET = 4096


@dataclass(frozen=True)
class BnbResult:
    strategy: DeceiverStrategy
    value: float
    attaining_index: int
    nodes_explored: int
    proof_gap: float
    wall_time_s: float = 0.0


def _reachable_rows(posg):
    g = posg.game
    seen, stack = {g.initial}, [g.initial]
    while stack:
        u = stack.pop()
        if u in posg.targets:
            continue
        for a in g.enabled(u):
            for t, p in g.successors(u, a):
                if p > 0 and t not in seen:
                    seen.add(t)
                    stack.append(t)
    return seen


def branching_order(posg):
    """Reachable non-target deceiver states with a real choice, most edges first."""
    eng = posg.engine
    g = posg.game
    reach = _reachable_rows(posg)
    keyed = []
    for k, r in enumerate(eng.dec_rows):
        s = eng.states[r]
        if s not in reach or eng.dec_counts[k] < 2:
            continue
        degree = sum(len(g.successors(s, a)) for a in g.enabled(s))
        keyed.append((-degree, r, k))
    keyed.sort()
    return [k for _, _, k in keyed]


class _Search:
    def __init__(self, posg, strategies, on_node=None):
        self.posg = posg
        self.eng = eng = posg.engine
        self.w_inf = eng.infiltrator_weight_matrix(strategies)
        self.N = len(strategies)
        self.order = branching_order(posg)
        self.n_dec = len(eng.dec_rows)
        self.on_node = on_node
        self.nodes = 0
        self.incumbent = np.inf
        self.best_picks = None
        self.closed_bounds = []  # lower bounds of every closed subtree

    def _weights(self, fixed):
        eng = self.eng
        w = np.zeros(len(eng.dec_actions))
        free = np.ones(self.n_dec, dtype=bool)
        for k, j in fixed.items():
            w[eng.dec_ptr[k] + j] = 1.0
            free[k] = False
        return np.repeat(w[:, None], self.N, axis=1), free

    def bound(self, fixed, warm):
        w, free = self._weights(fixed)
        c = self.eng.solve(w, self.w_inf, free=free, c0=warm)
        vals = c[self.eng.init]
        i = int(np.argmax(vals))
        return float(vals[i]), i, c

    def exact(self, picks):
        eng = self.eng
        w = np.zeros(len(eng.dec_actions))
        for k, j in enumerate(picks):
            w[eng.dec_ptr[k] + j] = 1.0
        c = eng.solve(np.repeat(w[:, None], self.N, axis=1), self.w_inf)
        vals = c[eng.init]
        i = int(np.argmax(vals))
        return float(vals[i]), i, c

    def complete(self, fixed, c, column):
        picks = self.eng.argmin_choices(c, column=column)
        for k, j in fixed.items():
            picks[k] = j
        return picks

    def run(self):
        root_lb, i, c = self.bound({}, None)
        picks = self.complete({}, c, i)
        ub, _, _ = self.exact(picks)
        self.incumbent, self.best_picks = ub, picks
        self._visit({}, 0, root_lb, i, c, [])
        return root_lb

    def _visit(self, fixed, depth, lb, i, c, path):
        self.nodes += 1
        if self.on_node is not None:
            self.on_node(tuple(path), lb)
        if lb >= self.incumbent - PRUNE_TOL:
            self.closed_bounds.append(lb)
            return
        if depth == len(self.order):
            # Every reachable choice is fixed: the bound is the exact worst case.
            self.incumbent = lb
            self.best_picks = self.complete(fixed, c, i)
            self.closed_bounds.append(lb)
            return
        picks = self.complete(fixed, c, i)
        ub, _, _ = self.exact(picks)
        if ub < self.incumbent - PRUNE_TOL:
            self.incumbent, self.best_picks = ub, picks
        k = self.order[depth]
        eng = self.eng
        count = eng.dec_counts[k]
        greedy = picks[k]
        for j in [greedy] + [j for j in range(count) if j != greedy]:
            child = dict(fixed)
            child[k] = j
            clb, ci, cc = self.bound(child, c)
            self._visit(child, depth + 1, clb, ci, cc, path + [(k, j)])


def solve_milp_bnb(posg, strategies, problem=None, on_node=None):
    """Exact min over deterministic deceiver strategies of the max over ``strategies``."""
    t0 = time.perf_counter()
    strategies = list(strategies)
    if not strategies:
        raise StrategyError("no strategies")
    if problem is not None and len(problem.strategies) != len(strategies):
        raise StrategyError("program was built for a different strategy set")
    _check_strategies(posg, strategies)
    search = _Search(posg, strategies, on_node)
    search.run()
    eng = posg.engine
    choice = _full_choice(posg, eng.choice_from_picks(search.best_picks))
    value, index, _ = search.exact(search.best_picks)
    lower = min(search.closed_bounds + [value])
    gap = max(0.0, value - lower)
    log.debug("bnb: value %.10g after %d nodes (gap %.2e)", value, search.nodes, gap)
    return BnbResult(DeceiverStrategy(choice), value, index, search.nodes, gap,
                     time.perf_counter() - t0)


def solve_robust(posg, strategies):
    """Build the program and solve it; convenience wrapper for callers without a program."""
    return solve_milp_bnb(posg, strategies, build_milp(posg, strategies))


def deceiver_strategy_count(posg):
    eng = posg.engine
    return int(np.prod(eng.dec_counts, dtype=object)) if len(eng.dec_counts) else 1


def brute_force_robust(posg, strategies, limit=BRUTE_FORCE_LIMIT):
    """Enumerate every deterministic deceiver strategy; lexicographically first argmin."""
    strategies = list(strategies)
    if not strategies:
        raise StrategyError("no strategies")
    _check_strategies(posg, strategies)
    size = deceiver_strategy_count(posg)
    if size > limit:
        raise EnumerationLimitError(size, limit)
    eng = posg.engine
    N = len(strategies)
    w_inf = eng.infiltrator_weight_matrix(strategies)
    chunk = max(1, _COLUMN_BUDGET // N)
    combos = itertools.product(*[range(n) for n in eng.dec_counts])
    best_val, best_picks = np.inf, None
    while True:
        block = list(itertools.islice(combos, chunk))
        if not block:
            break
        w = np.zeros((len(eng.dec_actions), len(block) * N))
        for b, picks in enumerate(block):
            rows = eng.dec_ptr[:-1] + np.array(picks, dtype=int)
            w[rows, b * N:(b + 1) * N] = 1.0
        c = eng.solve(w, np.tile(w_inf, (1, len(block))))
        worst = c[eng.init].reshape(len(block), N).max(axis=1)
        for b, v in enumerate(worst):
            # Strict improvement beyond tie tolerance keeps the first of tied strategies.
            if best_picks is None or v < best_val - TIE_TOL * max(1.0, abs(best_val)):
                best_val, best_picks = float(v), block[b]
    choice = _full_choice(posg, eng.choice_from_picks(list(best_picks)))
    return DeceiverStrategy(choice), best_val


def big_m_slack(posg, strategies, strategy, big_m=None):
    """Smallest slack of the deactivated big-M rows at the exact cost vectors."""
    M = compute_big_m(posg) if big_m is None else big_m
    eng = posg.engine
    w_dec, _ = eng.deceiver_weights(strategy.choice)
    w_inf = eng.infiltrator_weight_matrix(strategies)
    c = eng.solve(np.repeat(w_dec[:, None], len(strategies), axis=1), w_inf)
    q = eng.q_deceiver(c)  # C + gamma P c, per choice and strategy column
    slack = np.inf
    for k, r in enumerate(eng.dec_rows):
        s = eng.states[r]
        for j in range(eng.dec_ptr[k], eng.dec_ptr[k + 1]):
            if eng.dec_actions[j] == strategy.choice.get(s):
                continue
            lo = c[r] - q[j] + M  # row 18 relaxed
            hi = q[j] + M - c[r]  # row 19 relaxed
            slack = min(slack, float(lo.min()), float(hi.min()))
    return slack


def big_m_valid(posg, strategies, strategy, big_m=None):
    M = compute_big_m(posg) if big_m is None else big_m
    return big_m_slack(posg, strategies, strategy, M) >= 1e-6 * M
