"""Layered network-infiltration game with engage/block deception.

Each round the deceiver moves first: in undetected states it has a single
no-op, in detected states it picks ``engage`` or ``block``, and the pick is
recorded in the successor state.  The infiltrator then chooses one of
compromise / exfiltrate / takedown / wait and pays the joint loss from the
cost table.  The infiltrator observes only its position, never whether it
has been detected or what the deceiver picked.
"""

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

from .errors import DeceptGameError, ModelError, StrategyError
from .game import DeceiverStrategy, OneSidedPosg, StochasticGame, ensure_valid
from .pmdp import split_memory

NOOP, ENGAGE, BLOCK = "noop", "engage", "block"
COMPROMISE, EXFILTRATE, TAKEDOWN, WAIT = "compromise", "exfiltrate", "takedown", "wait"
ACTIONS = (NOOP, ENGAGE, BLOCK, COMPROMISE, EXFILTRATE, TAKEDOWN, WAIT)
INFILTRATOR_ACTIONS = (COMPROMISE, EXFILTRATE, TAKEDOWN, WAIT)

DEFAULT_DETECTION = MappingProxyType({
    COMPROMISE: 0.5, EXFILTRATE: 0.1, WAIT: 0.0, TAKEDOWN: 1.0,
})

# (detected, infiltrator action, deceiver action) -> (constant, per-layer factor)
DEFAULT_COSTS = MappingProxyType({
    (False, COMPROMISE, None): (-2.0, 0.0),
    (False, EXFILTRATE, None): (0.0, 15.0),
    (False, TAKEDOWN, None): (0.0, 25.0),
    (True, COMPROMISE, ENGAGE): (-4.0, 0.0),
    (True, EXFILTRATE, ENGAGE): (-2.0, 0.0),
    (True, TAKEDOWN, ENGAGE): (0.0, 25.0),
    (True, COMPROMISE, BLOCK): (-2.0, 0.0),
    (True, EXFILTRATE, BLOCK): (0.0, 0.0),
    (True, TAKEDOWN, BLOCK): (0.0, 0.0),
})


@dataclass(frozen=True)
class NetworkConfig:
    layers: int = 4
    detection_prob: Mapping = field(default_factory=lambda: dict(DEFAULT_DETECTION))
    discount: float = 0.9
    cost_table: Mapping = field(default_factory=lambda: dict(DEFAULT_COSTS))

    def __post_init__(self):
        if not isinstance(self.layers, int) or isinstance(self.layers, bool) or self.layers < 1:
            raise DeceptGameError(f"layers must be a positive integer, got {self.layers!r}")
        det = dict(DEFAULT_DETECTION)
        det.update(self.detection_prob)
        for a, p in det.items():
            if a not in INFILTRATOR_ACTIONS:
                raise DeceptGameError(f"detection probability for unknown action {a!r}")
            if not 0.0 <= float(p) <= 1.0:
                raise DeceptGameError(f"detection probability {p} for {a!r} not in [0, 1]")
        object.__setattr__(self, "detection_prob",
                           MappingProxyType({a: float(p) for a, p in det.items()}))
        if not 0.0 <= self.discount < 1.0:
            raise DeceptGameError(f"discount {self.discount} not in [0, 1)")
        missing = set(DEFAULT_COSTS) - set(self.cost_table)
        if missing:
            raise DeceptGameError(f"cost table misses rows {sorted(missing, key=str)}")
        object.__setattr__(self, "cost_table", MappingProxyType(
            {k: (float(v[0]), float(v[1])) for k, v in self.cost_table.items()}))

    def cost(self, detected, action, deceiver_action, layer):
        if action == WAIT:
            return 0.0
        base, factor = self.cost_table[(detected, action, deceiver_action)]
        return base + factor * layer

    def to_dict(self):
        return {
            "layers": self.layers,
            "discount": self.discount,
            "detection_prob": dict(self.detection_prob),
            "cost_table": [
                {"detected": d, "infiltrator": a, "deceiver": b, "constant": c, "per_layer": f}
                for (d, a, b), (c, f) in self.cost_table.items()
            ],
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        kwargs = {}
        for key in ("layers", "discount", "detection_prob"):
            if key in data:
                kwargs[key] = data.pop(key)
        if "cost_table" in data:
            table = dict(DEFAULT_COSTS)
            for row in data.pop("cost_table"):
                dec = row.get("deceiver") or None
                table[(bool(row["detected"]), row["infiltrator"], dec)] = (
                    float(row.get("constant", 0.0)), float(row.get("per_layer", 0.0)))
            kwargs["cost_table"] = table
        if data:
            raise DeceptGameError(f"unknown network config keys {sorted(data)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class NetworkState:
    position: int
    detected: bool
    mover: str  # "deceiver" | "infiltrator"
    pending: Optional[str] = None  # engage | block on detected infiltrator states


def state_counts(layers):
    """Closed-form sizes of the generated (memoryless) model."""
    return {
        "states": 5 * layers + 2,
        "deceiver_states": 2 * layers + 2,
        "infiltrator_states": 3 * layers,
        "deceiver_choice_states": layers,
        "targets": 2,
    }


def _dec(x, d):
    return f"D{x}{'T' if d else 'F'}"


def _inf(x, d, pending=None):
    if not d:
        return f"I{x}F"
    return f"I{x}T{'E' if pending == ENGAGE else 'B'}"


def generate(config):
    """Build the game and a label per state; the model is validated before returning."""
    n = config.layers
    det = config.detection_prob
    labels = {}
    dec_states, inf_states = [], []
    for x in range(n + 1):
        for d in (False, True):
            s = _dec(x, d)
            dec_states.append(s)
            labels[s] = NetworkState(x, d, "deceiver")
    for x in range(n):
        s = _inf(x, False)
        inf_states.append(s)
        labels[s] = NetworkState(x, False, "infiltrator")
        for pending in (ENGAGE, BLOCK):
            s = _inf(x, True, pending)
            inf_states.append(s)
            labels[s] = NetworkState(x, True, "infiltrator", pending)

    trans, costs = {}, {}
    for x in range(n):
        trans[(_dec(x, False), NOOP)] = [(_inf(x, False), 1.0)]
        trans[(_dec(x, True), ENGAGE)] = [(_inf(x, True, ENGAGE), 1.0)]
        trans[(_dec(x, True), BLOCK)] = [(_inf(x, True, BLOCK), 1.0)]

    def flip(x, p):
        if p <= 0.0:
            return [(_dec(x, False), 1.0)]
        if p >= 1.0:
            return [(_dec(x, True), 1.0)]
        return [(_dec(x, True), p), (_dec(x, False), 1.0 - p)]

    restart = _dec(0, False)
    for x in range(n):
        s = _inf(x, False)
        trans[(s, COMPROMISE)] = flip(x + 1, det[COMPROMISE])
        trans[(s, EXFILTRATE)] = flip(x, det[EXFILTRATE])
        trans[(s, WAIT)] = flip(x, det[WAIT])
        # A takedown that is noticed forces a restart from outside; otherwise nothing changes.
        pt = det[TAKEDOWN]
        if pt >= 1.0:
            trans[(s, TAKEDOWN)] = [(restart, 1.0)]
        elif pt <= 0.0:
            trans[(s, TAKEDOWN)] = [(_dec(x, False), 1.0)]
        else:
            trans[(s, TAKEDOWN)] = [(restart, pt), (_dec(x, False), 1.0 - pt)]
        for a in INFILTRATOR_ACTIONS:
            costs[(s, a)] = config.cost(False, a, None, x)

        for pending in (ENGAGE, BLOCK):
            s = _inf(x, True, pending)
            advance = x + 1 if pending == ENGAGE else x
            trans[(s, COMPROMISE)] = [(_dec(advance, True), 1.0)]
            trans[(s, EXFILTRATE)] = [(_dec(x, True), 1.0)]
            trans[(s, WAIT)] = [(_dec(x, True), 1.0)]
            trans[(s, TAKEDOWN)] = [(restart, 1.0)]
            for a in INFILTRATOR_ACTIONS:
                costs[(s, a)] = config.cost(True, a, pending, x)

    game = StochasticGame(
        deceiver_states=dec_states,
        infiltrator_states=inf_states,
        initial=_dec(0, False),
        actions=ACTIONS,
        transitions=trans,
        costs=costs,
        discount=config.discount,
    )
    obs_fn = {s: f"x{labels[s].position}" for s in inf_states}
    posg = OneSidedPosg(game, [f"x{x}" for x in range(n)], obs_fn,
                        {_dec(n, False), _dec(n, True)})
    ensure_valid(posg)
    return posg, MappingProxyType(labels)


BASELINES = {"always_engage": ENGAGE, "always_block": BLOCK}


def baseline_strategy(posg, labels, kind):
    """Engage (or block) in every detected deceiver state, no-op elsewhere.

    Works on memory-unfolded copies of a generated model as well.
    """
    if kind not in BASELINES:
        raise StrategyError(f"unknown baseline {kind!r}; expected one of {sorted(BASELINES)}")
    act = BASELINES[kind]
    choice = {}
    for s in posg.deceiver_states:
        base, _ = split_memory(s)
        label = labels.get(base)
        if label is None or label.mover != "deceiver":
            raise ModelError(f"state {s!r} was not produced by the network generator")
        if s in posg.targets:
            continue
        choice[s] = act if label.detected else NOOP
        if choice[s] not in posg.enabled(s):
            raise ModelError(f"state {s!r} does not enable {choice[s]!r}")
    return DeceiverStrategy(choice)
