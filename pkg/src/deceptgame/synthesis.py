"""Stage 1: synthesis of sufficiently strong infiltrator strategies.

The search runs on the parametric MDP obtained from the (memory-unfolded)
game.  A sequential linear programming loop linearises every bilinear
product of a parametric transition probability and a cost variable around
the current point, solves the LP, and accepts the step only when the exact
deceiver best-response value does not drop.  Every candidate is re-checked
by ``verify_strong`` before it is returned.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import DeceptGameError, NoStrongStrategy, UnsupportedDegree
from .game import (
    InfiltratorStrategy,
    best_response_deceiver,
    ensure_valid,
    forced_infiltrator_strategy,
    uniform_infiltrator_strategy,
)
from .pmdp import (
    Instantiation,
    instantiate,
    istrat,
    posg_to_pmdp,
    strategy_expressions,
    unfold_memory,
)

log = logging.getLogger(__name__)

_GAIN_TOL = 1e-10

LOWER_BOUND = "lower_bound"
AS_PRINTED = "as_printed"


@dataclass(frozen=True)
class SynthesisConfig:
    strength_threshold: Optional[float] = None  # None: value of the uniform strategy
    n_strategies: int = 10
    restarts: int = 30
    ccp_max_iters: int = 20
    penalty_initial: float = 10.0
    penalty_growth: float = 1.5
    penalty_max: float = 1e6
    convergence_tol: float = 1e-4
    trust_radius: float = 0.25
    dedup_distance: float = 0.05
    rng_seed: int = 0
    memory: int = 1
    allow_weak_fill: bool = False

    def __post_init__(self):
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.dedup_distance <= 0:
            raise ValueError("dedup_distance must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.n_strategies < 1:
            raise ValueError("n_strategies must be at least 1")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")


@dataclass(frozen=True)
class SynthesizedStrategy:
    strategy: InfiltratorStrategy
    value: float
    instantiation: Instantiation
    strong: bool


@dataclass
class SynthesisResult:
    strategies: list
    threshold: float
    memory: int
    parameters: tuple
    stats: dict = field(default_factory=dict)

    def values(self):
        return [e.value for e in self.strategies]


@dataclass(frozen=True)
class NlpProblem:
    """Cost variables per state plus the pMDP parameters, with row bookkeeping.

    ``orientation`` selects the sense of the Bellman rows: ``as_printed``
    (c_s >= C + gamma P c with c_init <= threshold) or ``lower_bound``
    (c_s <= C + gamma P c with c_init >= threshold), the orientation whose
    feasible points certify a lower bound on the deceiver's best response.
    """

    pmdp: object
    threshold: float
    orientation: str
    cost_variables: tuple
    parameter_variables: tuple
    boundary_rows: tuple  # target states
    nonneg_rows: tuple  # (label, PolynomialExpr) required >= 0
    normalization_rows: tuple  # ((state, action), PolynomialExpr) required == 1
    bellman_rows: tuple  # (state, action)
    affine: object = field(repr=False, compare=False)

    @property
    def constraint_count(self):
        return (len(self.boundary_rows) + len(self.nonneg_rows)
                + len(self.normalization_rows) + len(self.bellman_rows) + 1)


class _AffineRows:
    """Bellman rows with P(p) = P0 + sum_j p_j A_j and C(p) = C0 + K p."""

    def __init__(self, pmdp):
        self.states = pmdp.states
        self.index = {s: i for i, s in enumerate(self.states)}
        self.params = pmdp.parameter_names
        self.pindex = {p: j for j, p in enumerate(self.params)}
        self.n, self.m = len(self.states), len(self.params)
        deceivers = set(pmdp.deceiver_states)
        rows = [(s, a) for (s, a) in pmdp.transitions if s not in pmdp.targets]
        self.rows = rows
        R = len(rows)
        p0_r, p0_c, p0_v = [], [], []
        a_j, a_r, a_c, a_v = [], [], [], []
        k_r, k_j, k_v = [], [], []
        self.C0 = np.zeros(R)
        self.disc = np.array([pmdp.discount if s in deceivers else 1.0 for s, _ in rows])
        self.row_state = np.array([self.index[s] for s, _ in rows], dtype=int)
        norm_const = np.zeros(R)
        norm_lin = {}
        for r, (s, a) in enumerate(rows):
            for t, expr in pmdp.transitions[(s, a)].items():
                col = self.index[t]
                for coef, mono in expr.terms:
                    if len(mono) == 0:
                        p0_r.append(r), p0_c.append(col), p0_v.append(float(coef))
                        norm_const[r] += float(coef)
                    elif len(mono) == 1:
                        j = self.pindex[mono[0]]
                        a_j.append(j), a_r.append(r), a_c.append(col), a_v.append(float(coef))
                        norm_lin[(r, j)] = norm_lin.get((r, j), 0.0) + float(coef)
                    else:
                        raise UnsupportedDegree(
                            f"transition {s}->{t} has degree {len(mono)}; only affine supported")
            for coef, mono in pmdp.costs[(s, a)].terms:
                if len(mono) == 0:
                    self.C0[r] += float(coef)
                elif len(mono) == 1:
                    k_r.append(r), k_j.append(self.pindex[mono[0]]), k_v.append(float(coef))
                else:
                    raise UnsupportedDegree(f"cost at ({s}, {a}) is not affine")
        self.P0 = sp.csr_matrix((p0_v, (p0_r, p0_c)), shape=(R, self.n))
        self.A_j = np.array(a_j, dtype=int)
        self.A_r = np.array(a_r, dtype=int)
        self.A_c = np.array(a_c, dtype=int)
        self.A_v = np.array(a_v, dtype=float)
        self.K = sp.csr_matrix((k_v, (k_r, k_j)), shape=(R, self.m))
        # Rows whose total probability depends on the parameters need explicit equalities.
        eq = {}
        for (r, j), v in norm_lin.items():
            if abs(v) > 1e-12:
                eq.setdefault(r, {})[j] = v
        self.norm_eq = [(r, eq[r], 1.0 - norm_const[r]) for r in sorted(eq)]
        self.simplex = []
        for z, acts in pmdp.layout.items():
            idx = [self.pindex[f"p_{z}_{i}"] for i in range(1, len(acts))]
            if idx:
                self.simplex.append(idx)
        spread = np.asarray(abs(self.K).sum(axis=1)).ravel()
        cmax = float(np.max(np.abs(self.C0) + spread, initial=0.0))
        self.value_bound = 2.0 * cmax / (1.0 - pmdp.discount) + 1.0

    def transition_matrix(self, p):
        extra = sp.csr_matrix((self.A_v * p[self.A_j], (self.A_r, self.A_c)),
                              shape=self.P0.shape)
        return self.P0 + extra

    def param_gradient(self, cbar):
        """G[r, j] = sum_c A_j[r, c] * cbar[c]."""
        return sp.csr_matrix((self.A_v * cbar[self.A_c], (self.A_r, self.A_j)),
                             shape=(len(self.rows), self.m))

    def project(self, p):
        p = np.clip(p, 0.0, 1.0)
        for idx in self.simplex:
            total = p[idx].sum()
            if total > 1.0:
                p[idx] = p[idx] / total
        return p


def build_nlp(pmdp, threshold, orientation=LOWER_BOUND):
    """Synthesis program over cost variables and parameters (affine pMDPs only)."""
    if orientation not in (LOWER_BOUND, AS_PRINTED):
        raise ValueError(f"unknown orientation {orientation!r}")
    affine = _AffineRows(pmdp)
    nonneg = []
    for z, exprs in strategy_expressions(pmdp.layout).items():
        if len(exprs) > 1:
            for a, f in zip(pmdp.layout[z], exprs):
                nonneg.append(((z, a), f))
    normalization = []
    for (s, a), row in pmdp.transitions.items():
        if s in pmdp.targets:
            continue
        parametric = [e for e in row.values() if not e.is_constant()]
        if not parametric:
            continue
        for t, e in row.items():
            if not e.is_constant():
                nonneg.append(((s, a, t), e))
        total = sum(row.values(), start=type(parametric[0])())
        normalization.append(((s, a), total))
    boundary = tuple(s for s in pmdp.states if s in pmdp.targets)
    return NlpProblem(
        pmdp=pmdp,
        threshold=float(threshold),
        orientation=orientation,
        cost_variables=tuple(pmdp.states),
        parameter_variables=pmdp.parameter_names,
        boundary_rows=boundary,
        nonneg_rows=tuple(nonneg),
        normalization_rows=tuple(normalization),
        bellman_rows=tuple(affine.rows),
        affine=affine,
    )


class _ExactEvaluator:
    """Deceiver best-response value as a function of the parameter vector."""

    def __init__(self, nlp):
        pmdp = nlp.pmdp
        self.pmdp = pmdp
        self.aff = nlp.affine
        src = pmdp.source
        self.fast = src is not None
        if not self.fast:
            return
        eng = src.engine
        self.eng = eng
        exprs = strategy_expressions(pmdp.layout)
        nc = len(eng.inf_actions)
        base = np.zeros(nc)
        rows, cols, vals = [], [], []
        for k, r in enumerate(eng.inf_rows):
            z = src.obs_fn[src.states[r]]
            lo, hi = eng.inf_ptr[k], eng.inf_ptr[k + 1]
            f_of = dict(zip(pmdp.layout[z], exprs[z]))
            for i in range(lo, hi):
                f = f_of[eng.inf_actions[i]]
                base[i] = float(f.constant_term())
                for coef, mono in f.terms:
                    if mono:
                        rows.append(i), cols.append(self.aff.pindex[mono[0]])
                        vals.append(float(coef))
        self.base = base
        self.F = sp.csr_matrix((vals, (rows, cols)), shape=(nc, self.aff.m))
        self.free = np.ones(len(eng.dec_rows), dtype=bool)
        self.w_dec = np.zeros(len(eng.dec_actions))
        self.reorder = np.array([eng.index[s] for s in self.aff.states], dtype=int)

    def __call__(self, p, warm=None):
        if self.fast:
            w_inf = self.base + self.F @ p
            c = self.eng.solve(self.w_dec, w_inf, free=self.free, c0=warm)
            return float(c[self.eng.init, 0]), c[self.reorder, 0], c
        u = Instantiation(dict(zip(self.aff.params, p)))
        model = instantiate(self.pmdp, u)
        _, cv = best_response_deceiver(model, forced_infiltrator_strategy(model))
        vec = np.array([cv[s] for s in self.aff.states])
        return float(cv[model.initial]), vec, None


@dataclass
class CcpOutcome:
    instantiation: Instantiation
    value: float
    start_value: float
    iterations: int
    converged: bool
    penalties: list
    max_slacks: list


def _solve_lp(nlp, p_bar, c_bar, penalty, radius):
    aff = nlp.affine
    n, m, R = aff.n, aff.m, len(aff.rows)
    sign = 1.0 if nlp.orientation == LOWER_BOUND else -1.0
    init = aff.index[nlp.pmdp.initial]

    P = aff.transition_matrix(p_bar)
    G = aff.param_gradient(c_bar)
    const = G @ p_bar
    D = sp.diags(aff.disc)
    sel = sp.csr_matrix((np.ones(R), (np.arange(R), aff.row_state)), shape=(R, n))
    # sign * (c_s - gamma*(P c + G p - const) - K p) - slack <= sign * C0
    Ac = sign * (sel - D @ P)
    Ap = sign * (-(D @ G) - aff.K)
    As = -sp.eye(R)
    b = sign * (aff.C0 - aff.disc * const)
    blocks = [sp.hstack([Ac, Ap, As, sp.csr_matrix((R, 1))])]
    b_list = [b]
    # threshold row
    thr = sp.lil_matrix((1, n + m + R + 1))
    thr[0, init] = -sign
    thr[0, n + m + R] = -1.0
    blocks.append(thr.tocsr())
    b_list.append(np.array([-sign * nlp.threshold]))
    for idx in aff.simplex:
        row = sp.lil_matrix((1, n + m + R + 1))
        for j in idx:
            row[0, n + j] = 1.0
        blocks.append(row.tocsr())
        b_list.append(np.array([1.0]))
    A_ub = sp.vstack(blocks).tocsr()
    b_ub = np.concatenate(b_list)

    A_eq = b_eq = None
    if aff.norm_eq:
        A_eq = sp.lil_matrix((len(aff.norm_eq), n + m + R + 1))
        b_eq = np.zeros(len(aff.norm_eq))
        for k, (r, coefs, rhs) in enumerate(aff.norm_eq):
            for j, v in coefs.items():
                A_eq[k, n + j] = v
            b_eq[k] = rhs
        A_eq = A_eq.tocsr()

    obj = np.zeros(n + m + R + 1)
    obj[init] = -1.0
    obj[n + m:] = penalty
    B = aff.value_bound
    bounds = [(0.0, 0.0) if s in nlp.pmdp.targets else (-B, B) for s in aff.states]
    bounds += [(max(0.0, v - radius), min(1.0, v + radius)) for v in p_bar]
    bounds += [(0.0, None)] * (R + 1)
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    if res.status != 0:
        raise DeceptGameError(f"linearized subproblem failed: {res.message}")
    x = res.x
    return x[n:n + m], float(np.max(x[n + m:], initial=0.0))


def ccp_solve(nlp, start, cfg, cost_guess=None):
    """Local search from ``start`` by penalised sequential linearisation."""
    aff = nlp.affine
    evaluate = _ExactEvaluator(nlp)
    p = aff.project(np.array(start.vector(nlp.pmdp.parameters), dtype=float))
    value, c_bar, warm = evaluate(p)
    if cost_guess is not None:
        c_bar = np.asarray(cost_guess, dtype=float)
    start_value = value
    penalty, radius = cfg.penalty_initial, cfg.trust_radius
    penalties, slacks = [], []
    converged = False
    it = 0
    for it in range(1, cfg.ccp_max_iters + 1):
        penalties.append(penalty)
        if aff.m == 0:
            converged = True
            break
        p_lp, slack = _solve_lp(nlp, p, c_bar, penalty, radius)
        slacks.append(slack)
        p_new = aff.project(p_lp)
        v_new, c_new, warm_new = evaluate(p_new, warm)
        move = float(np.max(np.abs(p_new - p), initial=0.0))
        if v_new > value + _GAIN_TOL * max(1.0, abs(value)):
            p, value, c_bar, warm = p_new, v_new, c_new, warm_new
            if move < cfg.convergence_tol:
                converged = True
                break
        elif v_new >= value - _GAIN_TOL * max(1.0, abs(value)):
            # No strict gain inside the trust region: a stationary point of the linearisation.
            converged = True
            break
        else:
            radius *= 0.5
            if radius < cfg.convergence_tol:
                converged = True
                break
        if slack >= cfg.convergence_tol:
            penalty = min(penalty * cfg.penalty_growth, cfg.penalty_max)
    return CcpOutcome(
        instantiation=Instantiation(dict(zip(aff.params, p.tolist()))),
        value=value,
        start_value=start_value,
        iterations=it,
        converged=converged,
        penalties=penalties,
        max_slacks=slacks,
    )


def verify_strong(posg, u, threshold, pmdp=None):
    """Exact check: the deceiver's best response to istrat(u) costs at least threshold."""
    if pmdp is None:
        pmdp = posg_to_pmdp(posg)
    strategy = istrat(pmdp, u)
    _, cv = best_response_deceiver(posg, strategy)
    value = cv[posg.initial]
    return value >= threshold, value


def default_threshold(posg):
    """Deceiver best-response value against the uniformly random infiltrator."""
    _, cv = best_response_deceiver(posg, uniform_infiltrator_strategy(posg, posg.memory_nodes))
    return cv[posg.initial]


def _restart_rng(seed, restart):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(restart,)))


def _random_start(pmdp, rng):
    assignment = {}
    for z, acts in pmdp.layout.items():
        if len(acts) < 2:
            continue
        draw = rng.dirichlet(np.ones(len(acts)))
        for i in range(1, len(acts)):
            assignment[f"p_{z}_{i}"] = float(draw[i - 1])
    return Instantiation(assignment)


def generate_strategy_set(posg, cfg):
    """Up to ``cfg.n_strategies`` verified, mutually distant infiltrator strategies."""
    t0 = time.perf_counter()
    ensure_valid(posg)
    game = unfold_memory(posg, cfg.memory)
    pmdp = posg_to_pmdp(game)
    threshold = (default_threshold(game) if cfg.strength_threshold is None
                 else float(cfg.strength_threshold))
    nlp = build_nlp(pmdp, threshold)
    params = pmdp.parameters

    candidates = []
    iterations = 0
    for r in range(cfg.restarts):
        start = _random_start(pmdp, _restart_rng(cfg.rng_seed, r))
        out = ccp_solve(nlp, start, cfg)
        iterations += out.iterations
        strong, value = verify_strong(game, out.instantiation, threshold, pmdp)
        candidates.append((r, out.instantiation, value, strong))

    candidates.sort(key=lambda c: (-c[2], c[0]))
    kept = _dedup(candidates, params, cfg.dedup_distance)
    strong = [c for c in kept if c[3]]
    chosen = strong[:cfg.n_strategies]
    if not strong and not cfg.allow_weak_fill:
        best = candidates[0][2] if candidates else float("-inf")
        raise NoStrongStrategy(best, threshold)
    if len(chosen) < cfg.n_strategies and cfg.allow_weak_fill:
        weak = [c for c in kept if not c[3]]
        chosen += weak[:cfg.n_strategies - len(chosen)]
        chosen.sort(key=lambda c: (-c[2], c[0]))

    entries = [SynthesizedStrategy(istrat(pmdp, u), value, u, ok)
               for _, u, value, ok in chosen]
    stats = {
        "restarts": cfg.restarts,
        "ccp_iterations": iterations,
        "candidates_strong": sum(1 for c in candidates if c[3]),
        "distinct_strong": len(strong),
        "wall_time_s": time.perf_counter() - t0,
    }
    log.info("synthesis: %d/%d strategies (threshold %.6g, %d restarts)",
             len(entries), cfg.n_strategies, threshold, cfg.restarts)
    return SynthesisResult(entries, threshold, cfg.memory, pmdp.parameter_names, stats)


def _dedup(candidates, params, eps):
    kept, vectors = [], []
    for cand in candidates:
        vec = np.array(cand[1].vector(params))
        if all(np.max(np.abs(vec - v), initial=0.0) >= eps for v in vectors):
            kept.append(cand)
            vectors.append(vec)
    return kept
