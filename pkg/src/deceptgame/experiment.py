"""Sweeps over network size, memory and strategy-set size with nested strategy sets."""

import csv
import io
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from . import __version__
from .game import PROB_TOL, TIE_TOL, VALUE_TOL, default_tolerance, worst_case_value
from .io import dump_json, save_posg, save_strategy_set
from .netsec import BASELINES, NetworkConfig, baseline_strategy, generate
from .pmdp import unfold_memory
from .robust import GAP_TOL, PRUNE_TOL, solve_robust
from .synthesis import SynthesisConfig, generate_strategy_set

log = logging.getLogger(__name__)

ORDER_TOL = 1e-6
POLICIES = ("optimal",) + tuple(BASELINES)
ROW_FIELDS = ("layers", "k", "N", "policy", "worst_case_value", "nodes_explored", "seed",
              "strategies_available", "error")


@dataclass(frozen=True)
class ExperimentSpec:
    layers: tuple = (4,)
    memory: tuple = (1, 2)
    sizes: tuple = (5, 20, 50)
    seeds: tuple = (0, 1, 2)
    out_dir: str = "results"
    formats: tuple = ("csv", "json")
    network: NetworkConfig = field(default_factory=NetworkConfig)
    restarts: Optional[int] = None  # default: 2 * max(sizes) + 10
    threshold: Optional[float] = None
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    model: object = None  # a OneSidedPosg used instead of the network generator
    labels: object = None  # labels of ``model``; baselines are skipped without them

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 1:
            raise ValueError(f"strategy-set sizes must be positive and strictly increasing: {sizes}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.memory or any(int(k) < 1 for k in self.memory):
            raise ValueError("memory sizes must be positive")
        if not self.layers or any(int(n) < 1 for n in self.layers):
            raise ValueError("layer counts must be positive")
        bad = set(self.formats) - {"csv", "json"}
        if bad:
            raise ValueError(f"unknown output formats {sorted(bad)}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "layers", tuple(int(n) for n in self.layers))
        object.__setattr__(self, "memory", tuple(int(k) for k in self.memory))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def synthesis_config(self, k, seed):
        restarts = self.restarts or 2 * self.sizes[-1] + 10
        return replace(self.synthesis, memory=k, rng_seed=seed, restarts=restarts,
                       n_strategies=self.sizes[-1], strength_threshold=self.threshold)


@dataclass
class ExperimentRow:
    layers: int
    k: int
    N: int
    policy: str
    worst_case_value: Optional[float]
    wall_time_s: float
    nodes_explored: Optional[int]
    seed: int
    strategies_available: int = 0
    error: str = ""


def _cell(spec, layers, k, seed, sink):
    """All rows for one (layers, k, seed) cell; strategy sets are prefixes of one sorted set."""
    posg, labels = _model(spec, layers)
    game = unfold_memory(posg, k)
    t0 = time.perf_counter()
    result = generate_strategy_set(posg, spec.synthesis_config(k, seed))
    synth_time = time.perf_counter() - t0
    sink("synthesis", layers, k, seed, result)
    strategies = [e.strategy for e in result.strategies]
    rows = []
    for n in spec.sizes:
        subset = strategies[:n]
        t1 = time.perf_counter()
        solved = solve_robust(game, subset)
        rows.append(ExperimentRow(layers, k, n, "optimal", solved.value,
                                  time.perf_counter() - t1, solved.nodes_explored, seed,
                                  len(subset)))
        for kind in (BASELINES if labels is not None else ()):
            t1 = time.perf_counter()
            value, _ = worst_case_value(game, baseline_strategy(game, labels, kind), subset)
            rows.append(ExperimentRow(layers, k, n, kind, value, time.perf_counter() - t1,
                                      None, seed, len(subset)))
    return rows, synth_time


def _model(spec, layers):
    if spec.model is not None:
        return spec.model, spec.labels
    return generate(replace(spec.network, layers=layers))


def check_rows(rows):
    """Ordering claims: optimal <= both baselines, optimal nondecreasing in N per seed."""
    violations = []
    by_cell = {}
    for r in rows:
        if r.worst_case_value is None:
            continue
        by_cell.setdefault((r.layers, r.k, r.seed, r.N), {})[r.policy] = r.worst_case_value
    for (layers, k, seed, n), vals in sorted(by_cell.items()):
        opt = vals.get("optimal")
        for kind in BASELINES:
            if opt is not None and kind in vals and opt > vals[kind] + ORDER_TOL:
                violations.append({"check": "optimal_le_baseline", "layers": layers, "k": k,
                                   "seed": seed, "N": n, "baseline": kind,
                                   "optimal": opt, "other": vals[kind]})
    trend = {}
    for (layers, k, seed, n), vals in sorted(by_cell.items()):
        if "optimal" in vals:
            trend.setdefault((layers, k, seed), []).append((n, vals["optimal"]))
    for (layers, k, seed), seq in trend.items():
        for (n0, v0), (n1, v1) in zip(seq, seq[1:]):
            if v1 < v0 - ORDER_TOL:
                violations.append({"check": "nondecreasing_in_N", "layers": layers, "k": k,
                                   "seed": seed, "N": n1, "previous": v0, "value": v1})
    return violations


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        d = asdict(r)
        w.writerow(["" if d[f] is None else (repr(d[f]) if isinstance(d[f], float) else d[f])
                    for f in ROW_FIELDS])
    return buf.getvalue()


def run_experiment(spec, write=True):
    """Run every cell in spec order; a failing cell yields error rows and the sweep goes on."""
    rows, timings = [], []
    out = spec.out_dir
    if write:
        os.makedirs(out, exist_ok=True)

    def sink(kind, layers, k, seed, payload):
        if write and kind == "synthesis":
            save_strategy_set(payload, os.path.join(
                out, f"strategies_L{layers}_k{k}_s{seed}.json"))

    for layers in spec.layers:
        if write:
            posg, _ = _model(spec, layers)
            save_posg(posg, os.path.join(out, f"model_L{layers}.json"))
        for k in spec.memory:
            for seed in spec.seeds:
                try:
                    cell, synth_time = _cell(spec, layers, k, seed, sink)
                except Exception as exc:  # recorded per row; the sweep continues
                    log.exception("cell layers=%s k=%s seed=%s failed", layers, k, seed)
                    msg = f"{type(exc).__name__}: {exc}"
                    cell = [ExperimentRow(layers, k, n, p, None, 0.0, None, seed, 0, msg)
                            for n in spec.sizes for p in POLICIES]
                    synth_time = 0.0
                rows.extend(cell)
                timings.append({"layers": layers, "k": k, "seed": seed, "stage": "synthesis",
                                "N": spec.sizes[-1], "wall_time_s": synth_time})
                timings.extend({"layers": r.layers, "k": r.k, "seed": r.seed,
                                "stage": r.policy, "N": r.N, "wall_time_s": r.wall_time_s}
                               for r in cell)
    violations = check_rows(rows)
    summary = {
        "rows": len(rows),
        "failed_rows": sum(1 for r in rows if r.error),
        "violations": violations,
        "optimal_le_baselines": not any(v["check"] == "optimal_le_baseline" for v in violations),
        "nondecreasing_in_N": not any(v["check"] == "nondecreasing_in_N" for v in violations),
    }
    if write:
        _write_outputs(spec, rows, timings, summary)
    return rows, summary


def provenance(spec):
    syn = asdict(spec.synthesis)
    syn.update(restarts=spec.restarts or 2 * spec.sizes[-1] + 10,
               strength_threshold=spec.threshold)
    syn.pop("memory", None)
    syn.pop("rng_seed", None)
    syn.pop("n_strategies", None)
    return {
        "tool_version": __version__,
        "model": "file" if spec.model is not None else "network generator",
        "layers": list(spec.layers),
        "memory": list(spec.memory),
        "sizes": list(spec.sizes),
        "seeds": list(spec.seeds),
        "network": spec.network.to_dict(),
        "synthesis": syn,
        "tolerances": {
            "value_residual": default_tolerance(),
            "value_residual_default": VALUE_TOL,
            "probability": PROB_TOL,
            "tie": TIE_TOL,
            "prune": PRUNE_TOL,
            "gap": GAP_TOL,
            "ordering": ORDER_TOL,
        },
    }


def _write_outputs(spec, rows, timings, summary):
    out = spec.out_dir
    if "csv" in spec.formats:
        with open(os.path.join(out, "results.csv"), "w", encoding="utf-8") as fh:
            fh.write(rows_to_csv(rows))
    if "json" in spec.formats:
        dump_json([{f: getattr(r, f) for f in ROW_FIELDS} for r in rows],
                  os.path.join(out, "results.json"))
    with open(os.path.join(out, "timings.csv"), "w", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, ["layers", "k", "seed", "stage", "N", "wall_time_s"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(timings)
    dump_json(summary, os.path.join(out, "summary.json"))
    dump_json(provenance(spec), os.path.join(out, "config.json"))
