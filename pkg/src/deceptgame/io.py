"""JSON/TOML readers and writers for models, strategy sets and solve results."""

import json
from fractions import Fraction

from .errors import DeceptGameError
from .game import DeceiverStrategy, OneSidedPosg, StochasticGame
from .netsec import NetworkConfig, NetworkState
from .pmdp import (
    BOTTOM,
    Instantiation,
    Parameter,
    ParametricMdp,
    istrat,
    posg_to_pmdp,
    unfold_memory,
)
from .poly import PolynomialExpr

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def _prob_text(p):
    # Shortest decimal string that parses back to the same double.
    return repr(float(p))


def dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_config(path):
    """JSON or TOML mapping, chosen by file extension."""
    if str(path).endswith(".toml"):
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    return load_json(path)


# -- games -------------------------------------------------------------------

def posg_to_dict(posg):
    g = posg.game
    states = [{"id": s, "player": "deceiver"} for s in g.deceiver_states]
    for s in g.infiltrator_states:
        entry = {"id": s, "player": "infiltrator"}
        if s in posg.obs_fn:
            entry["observation"] = posg.obs_fn[s]
        states.append(entry)
    return {
        "states": states,
        "actions": list(g.actions),
        "observations": list(posg.observations),
        "transitions": [
            {"from": s, "action": a, "to": t, "prob": _prob_text(p)}
            for (s, a), succ in g.transitions.items() for t, p in succ
        ],
        "costs": [{"state": s, "action": a, "cost": c} for (s, a), c in g.costs.items()],
        "initial": g.initial,
        "targets": sorted(posg.targets, key=g.states.index),
        "discount": g.discount,
        "memory_nodes": posg.memory_nodes,
    }


def posg_from_dict(data):
    try:
        dec, inf, obs_fn = [], [], {}
        for st in data["states"]:
            if st["player"] == "deceiver":
                dec.append(st["id"])
            elif st["player"] == "infiltrator":
                inf.append(st["id"])
                if "observation" in st:
                    obs_fn[st["id"]] = st["observation"]
            else:
                raise DeceptGameError(f"unknown player {st['player']!r} for {st['id']!r}")
        trans = {}
        for tr in data["transitions"]:
            trans.setdefault((tr["from"], tr["action"]), []).append(
                (tr["to"], float(Fraction(str(tr["prob"])))))
        costs = {(c["state"], c["action"]): float(c["cost"]) for c in data.get("costs", [])}
        observations = data.get("observations")
        if observations is None:
            observations = list(dict.fromkeys(obs_fn.values()))
        game = StochasticGame(dec, inf, data["initial"], data["actions"], trans, costs,
                              float(data["discount"]))
        return OneSidedPosg(game, observations, obs_fn, data.get("targets", []),
                            memory_nodes=int(data.get("memory_nodes", 1)))
    except KeyError as exc:
        raise DeceptGameError(f"model file misses key {exc}") from None


def save_posg(posg, path):
    return dump_json(posg_to_dict(posg), path)


def load_posg(path):
    return posg_from_dict(load_json(path))


# -- parametric models --------------------------------------------------------

def _expr_to_json(expr):
    if expr.is_constant():
        return str(expr.constant_term())
    return expr.to_json()


def _expr_from_json(obj):
    if isinstance(obj, dict):
        return PolynomialExpr.from_json(obj)
    return PolynomialExpr.constant(Fraction(str(obj)))


def pmdp_to_dict(pmdp):
    states = [{"id": s, "player": "deceiver"} for s in pmdp.deceiver_states]
    states += [{"id": s, "player": "infiltrator", "observation": pmdp.obs_fn[s]}
               for s in pmdp.infiltrator_states if s in pmdp.obs_fn]
    return {
        "states": states,
        "actions": list(pmdp.actions),
        "observations": list(pmdp.observations),
        "parameters": [{"name": p.name, "observation": p.observation,
                        "action_index": p.action_index} for p in pmdp.parameters],
        "layout": {z: list(acts) for z, acts in pmdp.layout.items()},
        "transitions": [
            {"from": s, "action": a, "to": t, "prob": _expr_to_json(e)}
            for (s, a), row in pmdp.transitions.items() for t, e in row.items()
        ],
        "costs": [{"state": s, "action": a, "cost": _expr_to_json(e)}
                  for (s, a), e in pmdp.costs.items()],
        "initial": pmdp.initial,
        "targets": sorted(pmdp.targets, key=pmdp.states.index),
        "discount": pmdp.discount,
        "memory_nodes": pmdp.memory_nodes,
    }


def pmdp_from_dict(data):
    dec = [s["id"] for s in data["states"] if s["player"] == "deceiver"]
    inf = [s["id"] for s in data["states"] if s["player"] == "infiltrator"]
    obs_fn = {s["id"]: s["observation"] for s in data["states"] if "observation" in s}
    trans, costs = {}, {}
    for tr in data["transitions"]:
        trans.setdefault((tr["from"], tr["action"]), {})[tr["to"]] = _expr_from_json(tr["prob"])
    for c in data.get("costs", []):
        costs[(c["state"], c["action"])] = _expr_from_json(c["cost"])
    for key in trans:
        costs.setdefault(key, PolynomialExpr())
    params = tuple(Parameter(p["name"], p["observation"], int(p["action_index"]))
                   for p in data.get("parameters", []))
    layout = {z: tuple(a) for z, a in data.get("layout", {}).items()}
    actions = tuple(data["actions"])
    if BOTTOM not in actions:
        actions += (BOTTOM,)
    return ParametricMdp(
        deceiver_states=tuple(dec),
        infiltrator_states=tuple(inf),
        initial=data["initial"],
        actions=actions,
        transitions=trans,
        costs=costs,
        parameters=params,
        discount=float(data["discount"]),
        targets=frozenset(data.get("targets", [])),
        observations=tuple(data.get("observations", dict.fromkeys(obs_fn.values()))),
        obs_fn=obs_fn,
        layout=layout,
        memory_nodes=int(data.get("memory_nodes", 1)),
    )


# -- strategy sets ------------------------------------------------------------

def strategy_set_to_list(result):
    return [
        {
            "parameters": dict(entry.instantiation.assignment),
            "value": entry.value,
            "strong": entry.strong,
            "k": result.memory,
        }
        for entry in result.strategies
    ]


def save_strategy_set(result, path):
    return dump_json(strategy_set_to_list(result), path)


def strategies_from_list(entries, posg):
    """Rebuild infiltrator strategies for ``posg``; returns {k: (unfolded game, [strategies])}.

    Entries keep their file order within each memory size.
    """
    groups = {}
    for entry in entries:
        k = int(entry.get("k", 1))
        if k not in groups:
            game = unfold_memory(posg, k)
            groups[k] = (game, posg_to_pmdp(game), [])
        _, pmdp, bucket = groups[k]
        bucket.append(istrat(pmdp, Instantiation(entry["parameters"])))
    return {k: (game, strategies) for k, (game, _, strategies) in groups.items()}


def load_strategy_sets(paths, posg):
    entries = []
    for path in paths:
        data = load_json(path)
        if not isinstance(data, list):
            raise DeceptGameError(f"{path}: strategy-set file must hold a JSON list")
        entries.extend(data)
    if not entries:
        raise DeceptGameError("strategy set is empty")
    return strategies_from_list(entries, posg)


# -- solve results, labels, configs -----------------------------------------

def solve_result_to_dict(result):
    return {
        "strategy": dict(result.strategy.choice),
        "value": result.value,
        "attaining_index": result.attaining_index,
        "nodes_explored": result.nodes_explored,
        "proof_gap": result.proof_gap,
    }


def deceiver_strategy_from_dict(data):
    return DeceiverStrategy(dict(data["strategy"] if "strategy" in data else data))


def labels_to_dict(labels):
    return {s: {"position": l.position, "detected": l.detected, "mover": l.mover,
                "pending": l.pending} for s, l in labels.items()}


def labels_from_dict(data):
    return {s: NetworkState(int(v["position"]), bool(v["detected"]), v["mover"],
                            v.get("pending")) for s, v in data.items()}


def network_config_from_file(path):
    return NetworkConfig.from_dict(load_config(path))
