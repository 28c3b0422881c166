"""One-sided partially observable stochastic games and their exact evaluation.

The deceiver owns the fully observable states, the infiltrator owns the
states it only sees through an observation.  Every transition alternates
between the two players.  Costs are discounted on deceiver moves only: an
infiltrator state's cost is its immediate cost plus the undiscounted cost of
the deceiver state it moves to, and a deceiver state's cost is its immediate
cost plus ``discount`` times the cost of the infiltrator state it moves to.
Target states are absorbing with cost zero.
"""

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import FixedPointError, IncompleteStrategyError, ModelError, StrategyError

DECEIVER = "deceiver"
INFILTRATOR = "infiltrator"

PROB_TOL = 1e-9
VALUE_TOL = 1e-10
MAX_SWEEPS = 10**6
TIE_TOL = 1e-9

_default_tol = VALUE_TOL


def set_default_tolerance(tol):
    """Residual tolerance used by every solve that does not pass one explicitly."""
    global _default_tol
    if not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol!r}")
    _default_tol = float(tol)


def default_tolerance():
    return _default_tol


# Below this many states the engine keeps transition matrices dense.
_DENSE_LIMIT = 400


def _frozen(mapping):
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True)
class StochasticGame:
    deceiver_states: tuple
    infiltrator_states: tuple
    initial: str
    actions: tuple
    transitions: Mapping  # (state, action) -> ((successor, prob), ...)
    costs: Mapping  # (state, action) -> float; missing pairs cost 0
    discount: float

    def __post_init__(self):
        object.__setattr__(self, "deceiver_states", tuple(self.deceiver_states))
        object.__setattr__(self, "infiltrator_states", tuple(self.infiltrator_states))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "transitions", _frozen(
            {key: tuple((t, float(p)) for t, p in succ)
             for key, succ in self.transitions.items()}))
        object.__setattr__(self, "costs", _frozen(
            {key: float(v) for key, v in self.costs.items()}))
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def states(self):
        return self.deceiver_states + self.infiltrator_states

    @cached_property
    def action_index(self):
        return {a: i for i, a in enumerate(self.actions)}

    @cached_property
    def _owner(self):
        owner = {s: INFILTRATOR for s in self.infiltrator_states}
        owner.update((s, DECEIVER) for s in self.deceiver_states)
        return owner

    def player(self, state):
        return self._owner[state]

    @cached_property
    def _enabled(self):
        order = self.action_index
        enabled = {s: [] for s in self.states}
        for (s, a), succ in self.transitions.items():
            if succ and s in enabled:
                enabled[s].append(a)
        return {s: tuple(sorted(acts, key=lambda a: order.get(a, len(order))))
                for s, acts in enabled.items()}

    def enabled(self, state):
        """Actions with at least one listed successor, in global action order."""
        return self._enabled[state]

    def cost(self, state, action):
        return self.costs.get((state, action), 0.0)

    def successors(self, state, action):
        return self.transitions.get((state, action), ())


@dataclass(frozen=True)
class OneSidedPosg:
    game: StochasticGame
    observations: tuple
    obs_fn: Mapping  # infiltrator state -> observation
    targets: frozenset
    memory_nodes: int = 1  # size of the memory unfolding this model already carries

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "obs_fn", _frozen(self.obs_fn))
        object.__setattr__(self, "targets", frozenset(self.targets))

    # Convenience pass-throughs to the underlying game.
    @property
    def states(self):
        return self.game.states

    @property
    def deceiver_states(self):
        return self.game.deceiver_states

    @property
    def infiltrator_states(self):
        return self.game.infiltrator_states

    @property
    def initial(self):
        return self.game.initial

    @property
    def actions(self):
        return self.game.actions

    @property
    def discount(self):
        return self.game.discount

    def enabled(self, state):
        return self.game.enabled(state)

    @cached_property
    def observation_actions(self):
        """Enabled actions per observation (taken from the first state carrying it)."""
        acts = {}
        for s in self.infiltrator_states:
            z = self.obs_fn.get(s)
            if z is not None and z not in acts and s not in self.targets:
                acts[z] = self.enabled(s)
        return acts

    @cached_property
    def engine(self):
        return _Engine(self)


@dataclass(frozen=True)
class InfiltratorStrategy:
    """Memoryless observation-based strategy: (observation, action) -> probability.

    ``memory_nodes`` records the size of the memory unfolding whose observation
    space the table is keyed on (1 for the original game).
    """

    table: Mapping
    memory_nodes: int = 1

    def __post_init__(self):
        table = {key: float(p) for key, p in self.table.items()}
        object.__setattr__(self, "table", _frozen(table))
        if self.memory_nodes < 1:
            raise StrategyError("memory_nodes must be positive")
        totals = {}
        for (z, a), p in table.items():
            if p < -PROB_TOL or p > 1 + PROB_TOL:
                raise StrategyError(f"probability {p} out of range at ({z}, {a})")
            totals[z] = totals.get(z, 0.0) + p
        for z, total in totals.items():
            if abs(total - 1.0) > PROB_TOL:
                raise StrategyError(f"distribution for observation {z!r} sums to {total}")

    @cached_property
    def _by_obs(self):
        dist = {}
        for (z, a), p in self.table.items():
            dist.setdefault(z, {})[a] = p
        return dist

    @property
    def observations(self):
        return tuple(self._by_obs)

    def distribution(self, observation):
        return dict(self._by_obs.get(observation, {}))

    def prob(self, observation, action):
        return self.table.get((observation, action), 0.0)


@dataclass(frozen=True)
class DeceiverStrategy:
    """Deterministic memoryless deceiver strategy: state -> action."""

    choice: Mapping

    def __post_init__(self):
        object.__setattr__(self, "choice", _frozen(self.choice))

    def __getitem__(self, state):
        return self.choice[state]


@dataclass(frozen=True)
class FiniteStateController:
    nodes: tuple
    initial_node: object
    action_map: Mapping  # (node, observation) -> {action: prob}
    memory_update: Mapping  # (node, observation, action) -> {node: prob}

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "action_map", _frozen(
            {k: _frozen(v) for k, v in self.action_map.items()}))
        object.__setattr__(self, "memory_update", _frozen(
            {k: _frozen(v) for k, v in self.memory_update.items()}))
        for key, dist in list(self.action_map.items()) + list(self.memory_update.items()):
            if abs(sum(dist.values()) - 1.0) > PROB_TOL:
                raise StrategyError(f"FSC distribution at {key} is not normalized")


@dataclass(frozen=True)
class CostVector:
    values: Mapping

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def __getitem__(self, state):
        return self.values[state]


@dataclass(frozen=True)
class MarkovChain:
    """Chain induced by a pair of strategies; targets become cost-free self-loops."""

    states: tuple
    transitions: Mapping  # state -> {successor: prob}
    costs: Mapping  # state -> expected immediate cost
    discounts: Mapping  # state -> discount applied to its outgoing step

    def matrix(self):
        idx = {s: i for i, s in enumerate(self.states)}
        m = np.zeros((len(self.states), len(self.states)))
        for s, row in self.transitions.items():
            for t, p in row.items():
                m[idx[s], idx[t]] += p
        return m


@dataclass(frozen=True)
class Violation:
    kind: str
    location: tuple
    message: str


def validate(posg):
    """Return every violated structural invariant; empty when the model is valid."""
    g = posg.game
    out = []

    def flag(kind, location, message):
        out.append(Violation(kind, tuple(location), message))

    seen = set()
    for s in g.states:
        if s in seen:
            flag("duplicate state", (s,), f"state {s!r} listed twice")
        seen.add(s)
    known_actions = set(g.actions)
    if g.initial not in seen:
        flag("unknown initial state", (g.initial,), "initial state is not a state")
    if not 0.0 <= g.discount < 1.0:
        flag("discount out of range", (), f"discount {g.discount} not in [0, 1)")

    for (s, a), succ in g.transitions.items():
        if s not in seen:
            flag("unknown state", (s, a), f"transition from unknown state {s!r}")
            continue
        if a not in known_actions:
            flag("unknown action", (s, a), f"unknown action {a!r}")
        total = 0.0
        for t, p in succ:
            if t not in seen:
                flag("unknown state", (s, a, t), f"transition to unknown state {t!r}")
                continue
            if p < -PROB_TOL or p > 1 + PROB_TOL:
                flag("probability out of range", (s, a, t), f"probability {p}")
            total += p
            if g.player(s) == g.player(t):
                flag("bipartite alternation", (s, a, t),
                     f"{g.player(s)} state {s!r} moves to {g.player(t)} state {t!r}")
        if succ and abs(total - 1.0) > PROB_TOL:
            flag("distribution not normalized", (s, a), f"probabilities sum to {total}")

    for t in posg.targets:
        if t not in seen:
            flag("unknown target", (t,), f"target {t!r} is not a state")
    for s in g.states:
        if s not in posg.targets and not g.enabled(s):
            flag("deadlock", (s,), f"state {s!r} has no enabled action")

    obs_set = set(posg.observations)
    by_obs = {}
    for s in g.infiltrator_states:
        z = posg.obs_fn.get(s)
        if z is None:
            flag("observation missing", (s,), f"infiltrator state {s!r} has no observation")
            continue
        if z not in obs_set:
            flag("unknown observation", (s, z), f"observation {z!r} not declared")
        by_obs.setdefault(z, []).append(s)
    for z, members in by_obs.items():
        live = [s for s in members if s not in posg.targets]
        if not live:
            continue
        ref = g.enabled(live[0])
        for s in live[1:]:
            if g.enabled(s) != ref:
                flag("action-count consistency", (z, s),
                     f"states {live[0]!r} and {s!r} share observation {z!r} "
                     f"but enable {ref} vs {g.enabled(s)}")
    return out


def ensure_valid(posg):
    violations = validate(posg)
    if violations:
        raise ModelError(
            f"model has {len(violations)} violation(s); first: {violations[0].message}",
            violations)


class _Engine:
    """Array form of a POSG used by every evaluation routine.

    Values are stored as an (n_states, K) matrix; each column is an
    independent problem with its own deceiver and infiltrator weights.
    """

    def __init__(self, posg):
        g = posg.game
        self.posg = posg
        self.states = g.states
        self.index = {s: i for i, s in enumerate(self.states)}
        self.n = len(self.states)
        self.gamma = g.discount
        self.target_mask = np.zeros(self.n, dtype=bool)
        for t in posg.targets:
            if t in self.index:
                self.target_mask[self.index[t]] = True
        self.init = self.index[g.initial]
        self.observations = tuple(posg.observations)
        self.obs_index = {z: i for i, z in enumerate(self.observations)}
        dense = self.n <= _DENSE_LIMIT

        def block(owned):
            rows, ptr, acts, data, costs = [], [0], [], [], []
            for s in owned:
                if s in posg.targets:
                    continue
                enabled = g.enabled(s)
                if not enabled:
                    raise ModelError(f"state {s!r} has no enabled action")
                rows.append(self.index[s])
                for a in enabled:
                    acts.append(a)
                    data.append(g.successors(s, a))
                    costs.append(g.cost(s, a))
                ptr.append(len(acts))
            mat = sp.lil_matrix((len(acts), self.n))
            for r, succ in enumerate(data):
                for t, p in succ:
                    mat[r, self.index[t]] += p
            mat = mat.toarray() if dense else mat.tocsr()
            return (np.array(rows, dtype=int), np.array(ptr, dtype=int), tuple(acts),
                    mat, np.array(costs, dtype=float))

        (self.dec_rows, self.dec_ptr, self.dec_actions,
         self.dec_P, self.dec_C) = block(g.deceiver_states)
        (self.inf_rows, self.inf_ptr, self.inf_actions,
         self.inf_P, self.inf_C) = block(g.infiltrator_states)
        self.dec_pos = {self.states[r]: k for k, r in enumerate(self.dec_rows)}
        self.inf_pos = {self.states[r]: k for k, r in enumerate(self.inf_rows)}
        self.inf_choice_obs = []
        for k, r in enumerate(self.inf_rows):
            z = posg.obs_fn.get(self.states[r])
            self.inf_choice_obs.extend([z] * (self.inf_ptr[k + 1] - self.inf_ptr[k]))
        self.dec_counts = np.diff(self.dec_ptr)

    # -- weights ---------------------------------------------------------
    def deceiver_weights(self, choice, default_first=True):
        """One-hot weights over deceiver choices; returns (weights, missing states)."""
        w = np.zeros(len(self.dec_actions))
        missing = []
        for k, r in enumerate(self.dec_rows):
            s = self.states[r]
            lo, hi = self.dec_ptr[k], self.dec_ptr[k + 1]
            a = choice.get(s)
            if a is None:
                missing.append(s)
                if default_first:
                    w[lo] = 1.0
                continue
            try:
                j = self.dec_actions[lo:hi].index(a)
            except ValueError:
                raise StrategyError(f"action {a!r} is not enabled at deceiver state {s!r}")
            w[lo + j] = 1.0
        return w, missing

    def infiltrator_weights(self, strategy):
        """Choice weights sigma(O(s), a); returns (weights, missing observations)."""
        w = np.zeros(len(self.inf_actions))
        missing = set()
        by_obs = strategy._by_obs
        for k, r in enumerate(self.inf_rows):
            s = self.states[r]
            lo, hi = self.inf_ptr[k], self.inf_ptr[k + 1]
            z = self.posg.obs_fn.get(s)
            dist = by_obs.get(z)
            acts = self.inf_actions[lo:hi]
            if dist is None:
                missing.add(z)
                w[lo:hi] = 1.0 / (hi - lo)
                continue
            for a in dist:
                if dist[a] > 0 and a not in acts:
                    raise StrategyError(
                        f"strategy plays {a!r} at observation {z!r} where it is not enabled")
            w[lo:hi] = [dist.get(a, 0.0) for a in acts]
        return w, missing

    def infiltrator_weight_matrix(self, strategies):
        cols = [self.infiltrator_weights(s)[0] for s in strategies]
        return np.stack(cols, axis=1) if cols else np.zeros((len(self.inf_actions), 0))

    # -- Bellman sweeps --------------------------------------------------
    def q_deceiver(self, c):
        return self.dec_C[:, None] + self.gamma * (self.dec_P @ c)

    def q_infiltrator(self, c):
        return self.inf_C[:, None] + self.inf_P @ c

    def _combine(self, q, w, ptr, free):
        v = np.add.reduceat(w * q, ptr[:-1], axis=0)
        if free is not None and free.any():
            mn = np.minimum.reduceat(q, ptr[:-1], axis=0)
            v = np.where(free[:, None], mn, v)
        return v

    def solve(self, w_dec, w_inf, free=None, c0=None, tol=None, max_sweeps=MAX_SWEEPS):
        """Iterate the Bellman equations to a fixed point.

        ``w_dec``/``w_inf`` are (choices, K) or (choices, 1) weight arrays;
        deceiver states flagged in ``free`` take the minimum over their
        choices instead of the weighted sum.  Infiltrator states are updated
        before deceiver states in every sweep.
        """
        tol = _default_tol if tol is None else tol
        w_dec = np.asarray(w_dec, dtype=float)
        w_inf = np.asarray(w_inf, dtype=float)
        if w_dec.ndim == 1:
            w_dec = w_dec[:, None]
        if w_inf.ndim == 1:
            w_inf = w_inf[:, None]
        k = max(w_dec.shape[1], w_inf.shape[1])
        c = np.zeros((self.n, k)) if c0 is None else np.array(c0, dtype=float)
        c[self.target_mask] = 0.0
        has_inf = len(self.inf_rows) > 0
        has_dec = len(self.dec_rows) > 0
        residual = np.inf
        for sweep in range(1, max_sweeps + 1):
            residual = 0.0
            if has_inf:
                v = np.add.reduceat(w_inf * self.q_infiltrator(c), self.inf_ptr[:-1], axis=0)
                residual = np.abs(v - c[self.inf_rows]).max()
                c[self.inf_rows] = v
            if has_dec:
                v = self._combine(self.q_deceiver(c), w_dec, self.dec_ptr, free)
                residual = max(residual, np.abs(v - c[self.dec_rows]).max())
                c[self.dec_rows] = v
            if not np.isfinite(residual):
                raise FixedPointError(residual, sweep)
            if residual <= tol:
                return c
        raise FixedPointError(residual, max_sweeps)

    def argmin_choices(self, c, column=0, tie_tol=TIE_TOL):
        """Per deceiver row, the smallest-index action within tie_tol of the minimum."""
        q = self.q_deceiver(c[:, [column]])[:, 0]
        picks = []
        for k in range(len(self.dec_rows)):
            lo, hi = self.dec_ptr[k], self.dec_ptr[k + 1]
            seg = q[lo:hi]
            best = seg.min()
            j = int(np.flatnonzero(seg <= best + tie_tol * max(1.0, abs(best)))[0])
            picks.append(j)
        return picks

    def choice_from_picks(self, picks):
        out = {}
        for k, j in enumerate(picks):
            out[self.states[self.dec_rows[k]]] = self.dec_actions[self.dec_ptr[k] + j]
        return out

    def residual(self, c, w_dec, w_inf, free=None):
        """Max-norm residual of one Jacobi application of the Bellman equations."""
        new = c.copy()
        if len(self.inf_rows):
            new[self.inf_rows] = np.add.reduceat(
                np.atleast_2d(w_inf.T).T * self.q_infiltrator(c), self.inf_ptr[:-1], axis=0)
        if len(self.dec_rows):
            new[self.dec_rows] = self._combine(
                self.q_deceiver(c), np.atleast_2d(w_dec.T).T, self.dec_ptr, free)
        new[self.target_mask] = 0.0
        return float(np.abs(new - c).max())


def _full_choice(posg, choice):
    """Deceiver choice extended with the first enabled action wherever it is silent."""
    full = {}
    for s in posg.deceiver_states:
        acts = posg.enabled(s)
        if s in choice:
            full[s] = choice[s]
        elif acts:
            full[s] = acts[0]
    return full


def reachable_states(posg, d, s):
    """States reachable from the initial state under the strategy pair.

    Raises IncompleteStrategyError at the first reachable state without an entry.
    """
    g = posg.game
    seen = {g.initial}
    queue = deque([g.initial])
    while queue:
        u = queue.popleft()
        if u in posg.targets:
            continue
        if g.player(u) == DECEIVER:
            if u not in d.choice:
                raise IncompleteStrategyError(f"deceiver state {u!r}")
            acts = [d.choice[u]]
        else:
            z = posg.obs_fn.get(u)
            dist = s.distribution(z)
            if not dist:
                raise IncompleteStrategyError(f"observation {z!r} (state {u!r})")
            acts = [a for a, p in dist.items() if p > 0]
        for a in acts:
            for t, p in g.successors(u, a):
                if p > 0 and t not in seen:
                    seen.add(t)
                    queue.append(t)
    return seen


def induced_chain(posg, d, s):
    """Markov chain obtained by fixing a deterministic deceiver and a memoryless infiltrator."""
    reachable_states(posg, d, s)
    g = posg.game
    choice = _full_choice(posg, d.choice)
    trans, costs, discounts = {}, {}, {}
    for u in g.states:
        row = {}
        if u in posg.targets:
            trans[u], costs[u], discounts[u] = {u: 1.0}, 0.0, 1.0
            continue
        if g.player(u) == DECEIVER:
            a = choice[u]
            for t, p in g.successors(u, a):
                row[t] = row.get(t, 0.0) + p
            costs[u] = g.cost(u, a)
            discounts[u] = g.discount
        else:
            z = posg.obs_fn.get(u)
            dist = s.distribution(z)
            if not dist:
                acts = g.enabled(u)
                dist = {a: 1.0 / len(acts) for a in acts}
            cost = 0.0
            for a, pa in dist.items():
                if pa == 0:
                    continue
                cost += pa * g.cost(u, a)
                for t, p in g.successors(u, a):
                    row[t] = row.get(t, 0.0) + pa * p
            costs[u] = cost
            discounts[u] = 1.0
        trans[u] = row
    return MarkovChain(g.states, _frozen(trans), _frozen(costs), _frozen(discounts))


def _to_costvector(posg, col):
    return CostVector({s: float(col[i]) for i, s in enumerate(posg.states)})


def evaluate_cost(posg, d, s, *, tol=None):
    """Expected discounted cost of every state under the strategy pair."""
    reachable_states(posg, d, s)
    eng = posg.engine
    w_dec, _ = eng.deceiver_weights(d.choice)
    w_inf, _ = eng.infiltrator_weights(s)
    c = eng.solve(w_dec, w_inf, tol=tol)
    return _to_costvector(posg, c[:, 0])


def best_response_deceiver(posg, s, *, tol=None):
    """Deceiver strategy minimising expected cost against a fixed infiltrator strategy."""
    eng = posg.engine
    w_inf, missing = eng.infiltrator_weights(s)
    if missing:
        # Only an error when some state with that observation is reachable at all.
        _check_observations_unreachable(posg, missing)
    free = np.ones(len(eng.dec_rows), dtype=bool)
    w_dec = np.zeros(len(eng.dec_actions))
    c = eng.solve(w_dec, w_inf, free=free, tol=tol)
    choice = _full_choice(posg, eng.choice_from_picks(eng.argmin_choices(c)))
    return DeceiverStrategy(choice), _to_costvector(posg, c[:, 0])


def _check_observations_unreachable(posg, missing):
    g = posg.game
    seen = {g.initial}
    queue = deque([g.initial])
    while queue:
        u = queue.popleft()
        if u in posg.targets:
            continue
        if g.player(u) == INFILTRATOR and posg.obs_fn.get(u) in missing:
            raise IncompleteStrategyError(f"observation {posg.obs_fn.get(u)!r} (state {u!r})")
        for a in g.enabled(u):
            for t, p in g.successors(u, a):
                if p > 0 and t not in seen:
                    seen.add(t)
                    queue.append(t)


def worst_case_value(posg, d, strategies: Sequence[InfiltratorStrategy], *, tol=None):
    """Largest initial-state cost over the strategy list, with the first attaining index."""
    strategies = list(strategies)
    if not strategies:
        raise StrategyError("no strategies")
    for s in strategies:
        reachable_states(posg, d, s)
    eng = posg.engine
    w_dec, _ = eng.deceiver_weights(d.choice)
    w_inf = eng.infiltrator_weight_matrix(strategies)
    c = eng.solve(w_dec, w_inf, tol=tol)
    vals = c[eng.init]
    i = int(np.argmax(vals))
    return float(vals[i]), i


def forced_infiltrator_strategy(posg):
    """The only strategy of a model whose infiltrator states each enable one action."""
    table = {}
    for z, acts in posg.observation_actions.items():
        if len(acts) != 1:
            raise StrategyError(f"observation {z!r} enables {len(acts)} actions")
        table[(z, acts[0])] = 1.0
    return InfiltratorStrategy(table)


def uniform_infiltrator_strategy(posg, memory_nodes=1):
    table = {}
    for z, acts in posg.observation_actions.items():
        for a in acts:
            table[(z, a)] = 1.0 / len(acts)
    return InfiltratorStrategy(table, memory_nodes=memory_nodes)
