"""Multivariate polynomials with rational coefficients over named parameters."""

from fractions import Fraction
from numbers import Real


def _as_fraction(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x)


class PolynomialExpr:
    """Immutable polynomial in canonical form.

    Terms map a monomial (sorted tuple of parameter names, repeated for
    powers) to a nonzero rational coefficient.  The empty monomial is the
    constant term.
    """

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms=None):
        merged = {}
        for mono, coef in (terms.items() if isinstance(terms, dict) else (terms or ())):
            mono = tuple(sorted(mono))
            merged[mono] = merged.get(mono, Fraction(0)) + _as_fraction(coef)
        self._terms = {m: c for m, c in sorted(merged.items()) if c != 0}
        self._hash = None

    @classmethod
    def constant(cls, value):
        return cls({(): value})

    @classmethod
    def param(cls, name, coef=1):
        return cls({(name,): coef})

    @property
    def terms(self):
        """(coefficient, monomial) pairs in canonical order."""
        return [(c, m) for m, c in self._terms.items()]

    @property
    def degree(self):
        return max((len(m) for m in self._terms), default=0)

    @property
    def parameters(self):
        return sorted({p for m in self._terms for p in m})

    def is_constant(self):
        return self.degree == 0

    def constant_term(self):
        return self._terms.get((), Fraction(0))

    def coefficient(self, name):
        """Coefficient of the degree-one monomial ``name``."""
        return self._terms.get((name,), Fraction(0))

    def evaluate_exact(self, valuation):
        total = Fraction(0)
        for mono, coef in self._terms.items():
            term = coef
            for p in mono:
                term *= _as_fraction(valuation[p])
            total += term
        return total

    def evaluate(self, valuation):
        return float(self.evaluate_exact(valuation))

    def _coerce(self, other):
        if isinstance(other, PolynomialExpr):
            return other
        if isinstance(other, (Real, Fraction, str)):
            return PolynomialExpr.constant(other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        merged = dict(self._terms)
        for m, c in other._terms.items():
            merged[m] = merged.get(m, Fraction(0)) + c
        return PolynomialExpr(merged)

    __radd__ = __add__

    def __neg__(self):
        return PolynomialExpr({m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(sorted(m1 + m2))
                out[m] = out.get(m, Fraction(0)) + c1 * c2
        return PolynomialExpr(out)

    __rmul__ = __mul__

    def __eq__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return False
        return self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(tuple(self._terms.items()))
        return self._hash

    def __repr__(self):
        if not self._terms:
            return "0"
        parts = []
        for m, c in self._terms.items():
            body = "*".join(m)
            if not m:
                parts.append(str(c))
            elif c == 1:
                parts.append(body)
            elif c == -1:
                parts.append(f"-{body}")
            else:
                parts.append(f"{c}*{body}")
        return " + ".join(parts).replace("+ -", "- ")

    def to_json(self):
        return {"terms": [{"coef": str(c), "params": list(m)} for m, c in self._terms.items()]}

    @classmethod
    def from_json(cls, obj):
        return cls([(tuple(t.get("params", ())), Fraction(str(t["coef"])))
                    for t in obj["terms"]])
