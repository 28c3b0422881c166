"""The Stage-2 mixed-integer program and its LP-format text export.

Variables and rows are named by index (``d_<s>_<a>``, ``c_<i>_<s>``) so that
arbitrary state and action labels never clash with the LP grammar; the
emitted document carries a comment table mapping indices back to labels.
"""

import io
import re
from dataclasses import dataclass, field

from .errors import DeceptGameError, StrategyError
from .game import ensure_valid

LE, GE, EQ = "<=", ">=", "="


@dataclass(frozen=True)
class Row:
    name: str
    coeffs: tuple  # ((variable, coefficient), ...) in emission order
    sense: str
    rhs: float


@dataclass(frozen=True)
class MilpProblem:
    posg: object = field(repr=False)
    strategies: tuple = field(repr=False)
    big_m: float
    binaries: tuple  # variable names d_<s>_<a>
    binary_keys: tuple  # (state, action) per binary
    continuous: tuple  # c_<i>_<s> for every i and state, then t
    rows: tuple
    objective: str = "t"

    @property
    def n_strategies(self):
        return len(self.strategies)

    def rows_with_prefix(self, prefix):
        return [r for r in self.rows if r.name.startswith(prefix)]


def compute_big_m(posg):
    """2 * max|C| / (1 - gamma) + 1."""
    g = posg.game
    cmax = max((abs(v) for v in g.costs.values()), default=0.0)
    return 2.0 * cmax / (1.0 - g.discount) + 1.0


def _check_strategies(posg, strategies):
    ks = {s.memory_nodes for s in strategies}
    if len(ks) > 1:
        raise StrategyError(f"strategy set mixes memory sizes {sorted(ks)}")
    if ks and ks != {posg.memory_nodes}:
        raise StrategyError(
            f"strategies use {ks.pop()} memory node(s) but the model is unfolded to "
            f"{posg.memory_nodes}")
    known = set(posg.observations)
    needed = set(posg.observation_actions)
    for i, s in enumerate(strategies):
        for z in s.observations:
            if z not in known:
                raise StrategyError(f"strategy {i} refers to unknown observation {z!r}")
            for a, p in s.distribution(z).items():
                if p > 0 and a not in posg.observation_actions.get(z, ()):
                    raise StrategyError(
                        f"strategy {i} plays {a!r} at observation {z!r} where it is not enabled")
        missing = needed - set(s.observations)
        if missing:
            raise StrategyError(
                f"strategy {i} has no entry for observation {sorted(missing)[0]!r}")


def build_milp(posg, strategies, big_m=None):
    """Rows: one-hot choice, target boundary, infiltrator equalities, big-M pairs, max links."""
    ensure_valid(posg)
    strategies = tuple(strategies)
    _check_strategies(posg, strategies)
    M = compute_big_m(posg) if big_m is None else float(big_m)
    g = posg.game
    sidx = {s: k for k, s in enumerate(g.states)}
    aidx = g.action_index
    gamma = g.discount

    def c(i, s):
        return f"c_{i}_{sidx[s]}"

    binaries, keys, rows = [], [], []
    for s in g.deceiver_states:
        if s in posg.targets:
            continue
        names = []
        for a in g.enabled(s):
            names.append(f"d_{sidx[s]}_{aidx[a]}")
            keys.append((s, a))
        binaries.extend(names)
        rows.append(Row(f"onehot_{sidx[s]}", tuple((n, 1.0) for n in names), EQ, 1.0))

    for i, strat in enumerate(strategies):
        for s in g.states:
            if s in posg.targets:
                rows.append(Row(f"bnd_{i}_{sidx[s]}", ((c(i, s), 1.0),), EQ, 0.0))
        for s in g.infiltrator_states:
            if s in posg.targets:
                continue
            dist = strat.distribution(posg.obs_fn[s])
            coef, cost = {}, 0.0
            for a in g.enabled(s):
                pa = dist.get(a, 0.0)
                if pa == 0.0:
                    continue
                cost += pa * g.cost(s, a)
                for t, p in g.successors(s, a):
                    coef[t] = coef.get(t, 0.0) + pa * p
            terms = [(c(i, s), 1.0)] + [(c(i, t), -v) for t, v in coef.items() if v != 0.0]
            rows.append(Row(f"eq17_{i}_{sidx[s]}", _merge(terms), EQ, cost))
        for s in g.deceiver_states:
            if s in posg.targets:
                continue
            for a in g.enabled(s):
                d = f"d_{sidx[s]}_{aidx[a]}"
                body = [(c(i, s), 1.0)]
                for t, p in g.successors(s, a):
                    body.append((c(i, t), -gamma * p))
                body = _merge(body)
                C = g.cost(s, a)
                # c_s - gamma P c - M d >= C - M  and  c_s - gamma P c + M d <= C + M
                rows.append(Row(f"m18_{i}_{sidx[s]}_{aidx[a]}", body + ((d, -M),), GE, C - M))
                rows.append(Row(f"m19_{i}_{sidx[s]}_{aidx[a]}", body + ((d, M),), LE, C + M))
        rows.append(Row(f"tmax_{i}", (("t", 1.0), (c(i, g.initial), -1.0)), GE, 0.0))

    continuous = tuple(c(i, s) for i in range(len(strategies)) for s in g.states) + ("t",)
    return MilpProblem(posg, strategies, M, tuple(binaries), tuple(keys), continuous,
                       tuple(rows))


def _merge(terms):
    out = {}
    for v, x in terms:
        out[v] = out.get(v, 0.0) + x
    return tuple((v, x) for v, x in out.items())


def _fmt(x):
    return "%.17g" % x


def _expr(coeffs):
    parts = []
    for k, (v, x) in enumerate(coeffs):
        sign = "-" if x < 0 else "+"
        mag = _fmt(abs(x))
        if k == 0:
            parts.append(f"{'-' if x < 0 else ''}{mag} {v}")
        else:
            parts.append(f"{sign} {mag} {v}")
    return " ".join(parts) if parts else "0 t"


def export_milp(problem, destination=None):
    """Render the program in LP format; also write it when ``destination`` is given."""
    if problem.n_strategies == 0:
        raise DeceptGameError("refusing to export a program with no infiltrator strategies")
    g = problem.posg.game
    out = io.StringIO()
    out.write("\\ stage-2 robust deceiver program\n")
    out.write(f"\\ strategies: {problem.n_strategies}  big_m: {_fmt(problem.big_m)}\n")
    for k, s in enumerate(g.states):
        out.write(f"\\ state {k} = {s}\n")
    for k, a in enumerate(g.actions):
        out.write(f"\\ action {k} = {a}\n")
    out.write("Minimize\n")
    out.write(f" obj: {problem.objective}\n")
    out.write("Subject To\n")
    for r in problem.rows:
        out.write(f" {r.name}: {_expr(r.coeffs)} {r.sense} {_fmt(r.rhs)}\n")
    out.write("Bounds\n")
    for v in problem.continuous:
        out.write(f" {v} free\n")
    out.write("Binaries\n")
    for v in problem.binaries:
        out.write(f" {v}\n")
    out.write("End\n")
    text = out.getvalue()
    if destination is not None:
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            with open(destination, "w", encoding="utf-8") as fh:
                fh.write(text)
    return text


@dataclass
class LpModel:
    sense: str
    objective: dict
    rows: dict  # name -> (coeffs dict, sense, rhs)
    free: set
    binaries: list


def read_lp(text):
    """Parse the LP subset produced by ``export_milp``."""
    section = None
    model = LpModel("min", {}, {}, set(), [])
    for raw in text.splitlines():
        line = raw.split("\\", 1)[0].strip()
        if not line:
            continue
        low = line.lower()
        if low in ("minimize", "maximize"):
            model.sense = low[:3]
            section = "obj"
            continue
        if low in ("subject to", "bounds", "binaries", "end"):
            section = low
            continue
        if section == "obj":
            _, body = line.split(":", 1)
            model.objective = _parse_terms(body)
        elif section == "subject to":
            name, body = line.split(":", 1)
            m = re.match(r"(.*?)(<=|>=|=)\s*(\S+)$", body.strip())
            if not m:
                raise ValueError(f"cannot parse row {line!r}")
            model.rows[name.strip()] = (_parse_terms(m.group(1)), m.group(2), float(m.group(3)))
        elif section == "bounds":
            var, kind = line.split()
            if kind != "free":
                raise ValueError(f"unsupported bound {line!r}")
            model.free.add(var)
        elif section == "binaries":
            model.binaries.extend(line.split())
    return model


def _parse_terms(body):
    out, sign, coef = {}, 1.0, None
    for tok in body.split():
        if tok in ("+", "-"):
            sign = -1.0 if tok == "-" else 1.0
            continue
        try:
            coef = float(tok)
            continue
        except ValueError:
            pass
        out[tok] = out.get(tok, 0.0) + sign * (1.0 if coef is None else coef)
        sign, coef = 1.0, None
    return out


def build_robust_milp_export(posg, destination=None):
    """Annotated text of the robust program with symbolic infiltrator probabilities.

    Documentation only: rows whose coefficients depend on the unknown
    infiltrator strategy are flagged ``[uncertain]``.
    """
    ensure_valid(posg)
    g = posg.game
    sidx = {s: k for k, s in enumerate(g.states)}
    aidx = g.action_index
    zidx = {z: k for k, z in enumerate(posg.observations)}
    M = compute_big_m(posg)
    gamma = g.discount

    def sigma(z, a):
        return f"sigma_{zidx[z]}_{aidx[a]}"

    out = io.StringIO()
    out.write("\\ robust deceiver program; sigma_<z>_<a> are uncertain, not decision variables\n")
    out.write(f"\\ big_m: {_fmt(M)}  discount: {_fmt(gamma)}\n")
    for s, k in sidx.items():
        out.write(f"\\ state {k} = {s}\n")
    for z, k in zidx.items():
        out.write(f"\\ observation {k} = {z}\n")
    for a, k in aidx.items():
        out.write(f"\\ action {k} = {a}\n")
    out.write("Minimize\n")
    out.write(f" obj: c_{sidx[g.initial]}\n")
    out.write("Subject To\n")
    for s in g.states:
        if s in posg.targets:
            out.write(f" eq2_{sidx[s]}: c_{sidx[s]} = 0\n")
    for z, acts in posg.observation_actions.items():
        body = " + ".join(sigma(z, a) for a in acts)
        out.write(f" eq3_{zidx[z]}: {body} = 1\n")
    for s in g.deceiver_states:
        if s in posg.targets:
            continue
        body = " + ".join(f"d_{sidx[s]}_{aidx[a]}" for a in g.enabled(s))
        out.write(f" eq4_{sidx[s]}: {body} = 1\n")
    for s in g.infiltrator_states:
        if s in posg.targets:
            continue
        z = posg.obs_fn[s]
        terms = []
        for a in g.enabled(s):
            succ = " + ".join(f"{_fmt(p)} c_{sidx[t]}" for t, p in g.successors(s, a))
            terms.append(f"{sigma(z, a)} * ( {_fmt(g.cost(s, a))} + {succ} )")
        out.write(f" eq5_{sidx[s]}: c_{sidx[s]} - [ {' + '.join(terms)} ] = 0  [uncertain]\n")
    for tag, sense, sgn in (("eq6", ">=", "-"), ("eq7", "<=", "+")):
        for s in g.deceiver_states:
            if s in posg.targets:
                continue
            for a in g.enabled(s):
                succ = " + ".join(f"{_fmt(gamma * p)} c_{sidx[t]}" for t, p in g.successors(s, a))
                d = f"d_{sidx[s]}_{aidx[a]}"
                out.write(f" {tag}_{sidx[s]}_{aidx[a]}: c_{sidx[s]} {sense} "
                          f"{_fmt(g.cost(s, a))} + {succ} {sgn} {_fmt(M)} ( 1 - {d} )\n")
    out.write("Binaries\n")
    for s in g.deceiver_states:
        if s in posg.targets:
            continue
        for a in g.enabled(s):
            out.write(f" d_{sidx[s]}_{aidx[a]}\n")
    out.write("End\n")
    text = out.getvalue()
    if destination is not None:
        with open(destination, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
