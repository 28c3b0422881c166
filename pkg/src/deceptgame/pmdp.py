"""Parametric MDPs, the POSG-to-pMDP reduction and memory unfolding.

Fixing a memoryless infiltrator strategy turns every infiltrator state into
a single-action state whose successor distribution is the strategy-weighted
mixture of its original actions.  Leaving the strategy symbolic gives a
parametric MDP with one parameter per (observation, action) pair except the
last action of each observation, whose probability is one minus the others.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Mapping, Optional

from .errors import DeceptGameError, IllDefinedInstantiation, StrategyError
from .game import (
    PROB_TOL,
    FiniteStateController,
    InfiltratorStrategy,
    OneSidedPosg,
    StochasticGame,
    ensure_valid,
)
from .poly import PolynomialExpr

BOTTOM = "⊥"
MEMORY_TAG = "@m"


def memory_name(name, node):
    return f"{name}{MEMORY_TAG}{node}"


def split_memory(name):
    """Inverse of memory_name; names without a memory tag map to node 1."""
    base, sep, node = str(name).rpartition(MEMORY_TAG)
    if sep and node.isdigit():
        return base, int(node)
    return name, 1


@dataclass(frozen=True)
class Parameter:
    name: str
    observation: str
    action_index: int  # 1-based position in the observation's action order


@dataclass(frozen=True)
class Instantiation:
    assignment: Mapping  # parameter name -> value

    def __post_init__(self):
        norm = {}
        for key, value in self.assignment.items():
            norm[key.name if isinstance(key, Parameter) else key] = float(value)
        object.__setattr__(self, "assignment", MappingProxyType(norm))

    def __getitem__(self, name):
        return self.assignment[name]

    def vector(self, parameters):
        return [self.assignment[p.name] for p in parameters]


@dataclass(frozen=True)
class ParametricMdp:
    deceiver_states: tuple
    infiltrator_states: tuple
    initial: str
    actions: tuple
    transitions: Mapping  # (state, action) -> {successor: PolynomialExpr}
    costs: Mapping  # (state, action) -> PolynomialExpr
    parameters: tuple
    discount: float
    targets: frozenset
    observations: tuple
    obs_fn: Mapping
    layout: Mapping  # observation -> ordered actions; parameter i belongs to action i
    memory_nodes: int = 1
    source: Optional[OneSidedPosg] = field(default=None, compare=False, repr=False)

    @property
    def states(self):
        return self.deceiver_states + self.infiltrator_states

    @property
    def parameter_names(self):
        return tuple(p.name for p in self.parameters)

    def expressions(self):
        for (s, a), row in self.transitions.items():
            for t, expr in row.items():
                yield s, a, t, expr


def parameter_name(observation, index):
    return f"p_{observation}_{index}"


def strategy_expressions(layout):
    """Per observation, the probability expression of each action in layout order."""
    out = {}
    for z, acts in layout.items():
        m = len(acts)
        if m == 1:
            out[z] = [PolynomialExpr.constant(1)]
            continue
        params = [PolynomialExpr.param(parameter_name(z, i)) for i in range(1, m)]
        last = PolynomialExpr.constant(1)
        for p in params:
            last = last - p
        out[z] = params + [last]
    return out


def posg_to_pmdp(posg):
    """Symbolic infiltrator: collapse every infiltrator state to the action BOTTOM."""
    ensure_valid(posg)
    g = posg.game
    layout = {}
    parameters = []
    for z in posg.observations:
        acts = posg.observation_actions.get(z)
        if acts is None:
            continue
        layout[z] = acts
        parameters.extend(Parameter(parameter_name(z, i), z, i) for i in range(1, len(acts)))
    fexpr = strategy_expressions(layout)

    transitions, costs = {}, {}
    for s in g.deceiver_states:
        for a in g.enabled(s):
            row = {}
            for t, p in g.successors(s, a):
                row[t] = row.get(t, PolynomialExpr()) + PolynomialExpr.constant(p)
            transitions[(s, a)] = row
            costs[(s, a)] = PolynomialExpr.constant(g.cost(s, a))
    for s in g.infiltrator_states:
        if s in posg.targets:
            continue
        z = posg.obs_fn[s]
        row, cost = {}, PolynomialExpr()
        for a, f in zip(layout[z], fexpr[z]):
            for t, p in g.successors(s, a):
                row[t] = row.get(t, PolynomialExpr()) + f * Fraction(p)
            cost = cost + f * Fraction(g.cost(s, a))
        transitions[(s, BOTTOM)] = row
        costs[(s, BOTTOM)] = cost

    return ParametricMdp(
        deceiver_states=g.deceiver_states,
        infiltrator_states=g.infiltrator_states,
        initial=g.initial,
        actions=tuple(a for a in g.actions if a != BOTTOM) + (BOTTOM,),
        transitions=MappingProxyType(transitions),
        costs=MappingProxyType(costs),
        parameters=tuple(parameters),
        discount=g.discount,
        targets=posg.targets,
        observations=posg.observations,
        obs_fn=posg.obs_fn,
        layout=MappingProxyType(dict(layout)),
        memory_nodes=posg.memory_nodes,
        source=posg,
    )


def _exact_valuation(pmdp, u):
    missing = [p.name for p in pmdp.parameters if p.name not in u.assignment]
    if missing:
        raise DeceptGameError(f"instantiation misses parameters {missing[:5]}")
    return {name: Fraction(v) for name, v in u.assignment.items()}


def instantiate(pmdp, u):
    """Evaluate every expression at ``u``; the result is an ordinary model.

    Former infiltrator states keep their observation and enable only BOTTOM.
    """
    val = _exact_valuation(pmdp, u)
    lo, hi = -PROB_TOL, 1 + PROB_TOL
    offending = []
    transitions, costs = {}, {}
    for (s, a), row in pmdp.transitions.items():
        probs, total = [], Fraction(0)
        for t, expr in row.items():
            v = expr.evaluate_exact(val)
            total += v
            if not lo <= v <= hi:
                offending.append((s, t))
            probs.append((t, min(max(float(v), 0.0), 1.0)))
        if row and abs(float(total) - 1.0) > PROB_TOL:
            offending.append((s, "<row sum>"))
        transitions[(s, a)] = [(t, p) for t, p in probs if p > 0.0] or probs
        costs[(s, a)] = pmdp.costs[(s, a)].evaluate(val)
    if offending:
        raise IllDefinedInstantiation(offending)
    game = StochasticGame(
        deceiver_states=pmdp.deceiver_states,
        infiltrator_states=pmdp.infiltrator_states,
        initial=pmdp.initial,
        actions=pmdp.actions,
        transitions=transitions,
        costs=costs,
        discount=pmdp.discount,
    )
    return OneSidedPosg(game, pmdp.observations, pmdp.obs_fn, pmdp.targets,
                        memory_nodes=pmdp.memory_nodes)


def istrat(pmdp, u):
    """The infiltrator strategy whose action probabilities are the valuation ``u``."""
    val = _exact_valuation(pmdp, u)
    exprs = strategy_expressions(pmdp.layout)
    table, offending = {}, []
    for z, acts in pmdp.layout.items():
        for a, f in zip(acts, exprs[z]):
            v = f.evaluate_exact(val)
            if not -PROB_TOL <= v <= 1 + PROB_TOL:
                offending.append((z, a))
            table[(z, a)] = min(max(float(v), 0.0), 1.0)
    if offending:
        raise IllDefinedInstantiation(offending)
    return InfiltratorStrategy(table, memory_nodes=pmdp.memory_nodes)


def strategy_to_instantiation(pmdp, strategy):
    """Parameter values reproducing ``strategy`` (inverse of istrat)."""
    assignment = {}
    for p in pmdp.parameters:
        a = pmdp.layout[p.observation][p.action_index - 1]
        assignment[p.name] = strategy.prob(p.observation, a)
    return Instantiation(assignment)


def unfold_memory(posg, k):
    """Product of the game with k infiltrator memory nodes.

    Infiltrator actions become (action, next node) pairs; deceiver moves keep
    the current node.  Observations are paired with the node, so the
    deceiver-visible state carries the memory (transparent memory).
    """
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"memory size must be a positive integer, got {k!r}")
    ensure_valid(posg)
    g = posg.game
    nodes = range(1, k + 1)
    dec_actions = {a for s in g.deceiver_states for a in g.enabled(s)}
    inf_actions = {a for s in g.infiltrator_states for a in g.enabled(s)}
    actions = [a for a in g.actions if a in dec_actions]
    actions += [memory_name(a, j) for a in g.actions if a in inf_actions for j in nodes]

    transitions, costs = {}, {}
    for s in g.deceiver_states:
        for a in g.enabled(s):
            for j in nodes:
                key = (memory_name(s, j), a)
                transitions[key] = [(memory_name(t, j), p) for t, p in g.successors(s, a)]
                costs[key] = g.cost(s, a)
    for s in g.infiltrator_states:
        for a in g.enabled(s):
            for j in nodes:
                for j2 in nodes:
                    key = (memory_name(s, j), memory_name(a, j2))
                    transitions[key] = [(memory_name(t, j2), p) for t, p in g.successors(s, a)]
                    costs[key] = g.cost(s, a)
    game = StochasticGame(
        deceiver_states=[memory_name(s, j) for s in g.deceiver_states for j in nodes],
        infiltrator_states=[memory_name(s, j) for s in g.infiltrator_states for j in nodes],
        initial=memory_name(g.initial, 1),
        actions=actions,
        transitions=transitions,
        costs=costs,
        discount=g.discount,
    )
    obs_fn = {memory_name(s, j): memory_name(z, j)
              for s, z in posg.obs_fn.items() for j in nodes}
    return OneSidedPosg(
        game,
        [memory_name(z, j) for z in posg.observations for j in nodes],
        obs_fn,
        {memory_name(t, j) for t in posg.targets for j in nodes},
        memory_nodes=posg.memory_nodes * k,
    )


def fsc_from_unfolded(strategy, k):
    """Factor a memoryless strategy on a k-unfolding into a k-node controller."""
    if k < 1:
        raise ValueError("memory size must be positive")
    nodes = tuple(range(1, k + 1))
    joint = {}
    for (zm, am), p in strategy.table.items():
        z, n = split_memory(zm)
        a, n2 = split_memory(am)
        if n not in nodes or n2 not in nodes:
            raise StrategyError(f"memory node out of range in ({zm}, {am})")
        joint.setdefault((n, z), {}).setdefault(a, {})
        joint[(n, z)][a][n2] = joint[(n, z)][a].get(n2, 0.0) + p

    action_map, memory_update = {}, {}
    for (n, z), by_action in joint.items():
        action_map[(n, z)] = {a: sum(d.values()) for a, d in by_action.items()}
        for a, d in by_action.items():
            mass = sum(d.values())
            if mass > 0:
                memory_update[(n, z, a)] = {n2: q / mass for n2, q in d.items() if q > 0}
            else:
                memory_update[(n, z, a)] = {n: 1.0}
    return FiniteStateController(nodes, 1, action_map, memory_update)
