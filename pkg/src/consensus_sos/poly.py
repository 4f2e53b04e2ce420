"""Multivariate polynomials with float coefficients over indexed variables.

A monomial is a tuple of nonnegative exponents, one per variable. A
:class:`Polynomial` maps monomials to nonzero coefficients; every value is
immutable once built. Variables have no names at this layer.
"""
from __future__ import annotations

from math import comb
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

Monomial = tuple  # tuple[int, ...]

#: coefficients below this magnitude are dropped after arithmetic
ZERO_TOL = 1e-14


class DimensionError(ValueError):
    """Operands live over different numbers of variables."""


def grlex_key(mono: Monomial):
    """Sort key for graded lexicographic order (x1 > x2 > ... within a degree)."""
    return (sum(mono), tuple(-e for e in mono))


def mono_degree(mono: Monomial) -> int:
    return sum(mono)


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


def _canonical(terms: Mapping[Monomial, float]) -> dict:
    return {m: float(c) for m, c in terms.items() if abs(c) >= ZERO_TOL}


class Polynomial:
    """Sparse polynomial in ``nvars`` indeterminates.

    >>> x = Polynomial.variable(2, 0)
    >>> y = Polynomial.variable(2, 1)
    >>> ((x + y) * (x - y)).to_string()
    'x1^2 - x2^2'
    """

    __slots__ = ("nvars", "_terms")

    def __init__(self, nvars: int, terms: Mapping[Monomial, float] | None = None):
        if nvars < 1:
            raise DimensionError("a polynomial needs at least one variable")
        self.nvars = int(nvars)
        terms = {} if terms is None else terms
        for m in terms:
            if len(m) != self.nvars:
                raise DimensionError(f"monomial {m} does not have {nvars} exponents")
            if any(e < 0 for e in m):
                raise ValueError(f"negative exponent in {m}")
        self._terms = _canonical({tuple(int(e) for e in m): c for m, c in terms.items()})

    # construction -----------------------------------------------------------
    @classmethod
    def _raw(cls, nvars: int, terms: dict) -> "Polynomial":
        # trusted fast path: keys already valid tuples
        p = object.__new__(cls)
        p.nvars = nvars
        p._terms = _canonical(terms)
        return p

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls._raw(nvars, {})

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Polynomial":
        return cls._raw(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, index: int) -> "Polynomial":
        exp = [0] * nvars
        exp[index] = 1
        return cls._raw(nvars, {tuple(exp): 1.0})

    @classmethod
    def monomial(cls, exponents: Sequence[int], coef: float = 1.0) -> "Polynomial":
        return cls(len(exponents), {tuple(exponents): coef})

    # inspection -------------------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self) -> Iterator[tuple[Monomial, float]]:
        return iter(self._terms.items())

    def sorted_terms(self) -> list[tuple[Monomial, float]]:
        return sorted(self._terms.items(), key=lambda mc: grlex_key(mc[0]))

    def coefficient(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial reports -1."""
        return max((sum(m) for m in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def support(self) -> list[Monomial]:
        return sorted(self._terms, key=grlex_key)

    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, Polynomial):
            return self.nvars == other.nvars and self._terms == other._terms
        return NotImplemented

    def __hash__(self):
        return hash((self.nvars, frozenset(self._terms.items())))

    def allclose(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        return (self - other).max_abs_coef() <= tol

    # arithmetic -------------------------------------------------------------
    def _check(self, other: "Polynomial"):
        if self.nvars != other.nvars:
            raise DimensionError(f"{self.nvars} vs {other.nvars} variables")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial._raw(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw(self.nvars, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check(other)
        out: dict = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = tuple(x + y for x, y in zip(ma, mb))
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial._raw(self.nvars, out)

    def __rmul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        return NotImplemented

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        result = Polynomial.constant(self.nvars, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def scale(self, s: float) -> "Polynomial":
        return Polynomial._raw(self.nvars, {m: s * c for m, c in self._terms.items()})

    # calculus / composition --------------------------------------------------
    def diff(self, i: int) -> "Polynomial":
        out = {}
        for m, c in self._terms.items():
            e = m[i]
            if e:
                dm = m[:i] + (e - 1,) + m[i + 1:]
                out[dm] = out.get(dm, 0.0) + c * e
        return Polynomial._raw(self.nvars, out)

    def __call__(self, point) -> float:
        return evaluate(self, point)

    def embed(self, nvars: int, offset: int = 0) -> "Polynomial":
        """Same polynomial viewed inside a larger variable set."""
        if offset + self.nvars > nvars:
            raise DimensionError("embedding does not fit")
        pad_l, pad_r = (0,) * offset, (0,) * (nvars - offset - self.nvars)
        return Polynomial._raw(nvars, {pad_l + m + pad_r: c for m, c in self._terms.items()})

    # io ---------------------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "vars": self.nvars,
            "terms": [{"exp": list(m), "coef": c} for m, c in self.sorted_terms()],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Polynomial":
        terms: dict = {}
        for t in obj["terms"]:
            m = tuple(int(e) for e in t["exp"])
            terms[m] = terms.get(m, 0.0) + float(t["coef"])
        return cls(int(obj["vars"]), terms)

    def to_string(self, names: Sequence[str] | None = None, digits: int = 6) -> str:
        if not self._terms:
            return "0"
        names = names or [f"x{i + 1}" for i in range(self.nvars)]
        out = []
        for m, c in sorted(self._terms.items(), key=lambda mc: grlex_key(mc[0]), reverse=True):
            factors = [n if e == 1 else f"{n}^{e}" for n, e in zip(names, m) if e]
            mag = abs(c)
            coef = f"{mag:.{digits}g}"
            body = "*".join(factors)
            if body:
                body = body if coef == "1" else f"{coef}*{body}"
            else:
                body = coef
            sign = "-" if c < 0 else "+"
            out.append((sign, body))
        first_sign, first = out[0]
        text = ("-" if first_sign == "-" else "") + first
        for sign, body in out[1:]:
            text += f" {sign} {body}"
        return text

    def __repr__(self):
        return f"Polynomial({self.nvars}, {self.to_string()!r})"


class PolyVector:
    """Fixed-length vector of polynomials over a shared variable set."""

    __slots__ = ("entries",)

    def __init__(self, entries: Iterable[Polynomial]):
        entries = tuple(entries)
        if not entries:
            raise DimensionError("empty polynomial vector")
        n = entries[0].nvars
        if any(p.nvars != n for p in entries):
            raise DimensionError("entries disagree on the number of variables")
        self.entries = entries

    @property
    def nvars(self) -> int:
        return self.entries[0].nvars

    @property
    def degree(self) -> int:
        return max(p.degree for p in self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        if isinstance(other, PolyVector):
            return self.entries == other.entries
        return NotImplemented

    def __add__(self, other: "PolyVector") -> "PolyVector":
        return PolyVector(a + b for a, b in zip(self, other, strict=True))

    def __sub__(self, other: "PolyVector") -> "PolyVector":
        return PolyVector(a - b for a, b in zip(self, other, strict=True))

    def __neg__(self):
        return PolyVector(-a for a in self)

    def scale(self, s: float) -> "PolyVector":
        return PolyVector(a.scale(s) for a in self)

    def dot(self, other: "PolyVector") -> Polynomial:
        if len(self) != len(other):
            raise DimensionError("length mismatch in dot product")
        total = Polynomial.zero(self.nvars)
        for a, b in zip(self, other):
            total = total + a * b
        return total

    def substitute(self, matrix, offset=None) -> "PolyVector":
        return PolyVector(substitute_affine(p, matrix, offset) for p in self)

    def __call__(self, point) -> np.ndarray:
        return np.array([evaluate(p, point) for p in self])

    def allclose(self, other: "PolyVector", tol: float = 1e-12) -> bool:
        return len(self) == len(other) and all(a.allclose(b, tol) for a, b in zip(self, other))

    def to_json(self) -> list:
        return [p.to_json() for p in self]

    @classmethod
    def from_json(cls, obj) -> "PolyVector":
        return cls(Polynomial.from_json(o) for o in obj)

    def __repr__(self):
        return "PolyVector([" + ", ".join(p.to_string() for p in self) + "])"


# functional interface -------------------------------------------------------

def arith(p: Polynomial, q, kind: str) -> Polynomial:
    """Binary arithmetic; ``kind`` is one of add, sub, mul, scale."""
    if kind == "scale":
        return p.scale(float(q))
    if not isinstance(q, Polynomial):
        raise TypeError("add/sub/mul need two polynomials")
    if p.nvars != q.nvars:
        raise DimensionError(f"{p.nvars} vs {q.nvars} variables")
    if kind == "add":
        return p + q
    if kind == "sub":
        return p - q
    if kind == "mul":
        return p * q
    raise ValueError(f"unknown operation {kind!r}")


def gradient(p: Polynomial) -> PolyVector:
    return PolyVector(p.diff(i) for i in range(p.nvars))


def evaluate(p: Polynomial, point) -> float:
    point = np.asarray(point, dtype=float).ravel()
    if point.shape[0] != p.nvars:
        raise DimensionError(f"point has {point.shape[0]} coordinates, expected {p.nvars}")
    total = 0.0
    for m, c in p.items():
        term = c
        for x, e in zip(point, m):
            if e:
                term *= x ** e
        total += term
    return float(total)


def substitute_affine(p: Polynomial, matrix, offset=None) -> Polynomial:
    """Compose ``p`` with the affine map ``x = matrix @ y + offset``.

    ``matrix`` has one row per variable of ``p`` and one column per new
    variable.
    """
    T = np.atleast_2d(np.asarray(matrix, dtype=float))
    if T.shape[0] != p.nvars:
        raise DimensionError(f"map provides {T.shape[0]} expressions for {p.nvars} variables")
    k = T.shape[1]
    off = np.zeros(p.nvars) if offset is None else np.asarray(offset, dtype=float)
    if off.shape != (p.nvars,):
        raise DimensionError("offset length does not match")
    images = []
    for i in range(p.nvars):
        terms = {}
        for j in range(k):
            if T[i, j] != 0.0:
                e = [0] * k
                e[j] = 1
                terms[tuple(e)] = T[i, j]
        if off[i] != 0.0:
            terms[(0,) * k] = off[i]
        images.append(Polynomial._raw(k, terms))
    powers: dict = {}

    def power(i, e):
        key = (i, e)
        if key not in powers:
            powers[key] = images[i] if e == 1 else power(i, e - 1) * images[i]
        return powers[key]

    out: dict = {}
    one = Polynomial.constant(k, 1.0)
    for m, c in p.items():
        term = one
        for i, e in enumerate(m):
            if e:
                term = term * power(i, e)
        for mm, cc in term.items():
            out[mm] = out.get(mm, 0.0) + c * cc
    return Polynomial._raw(k, out)


def monomials_up_to(nvars: int, degree: int, min_degree: int = 0) -> list[Monomial]:
    """All monomials with ``min_degree <= total degree <= degree``, graded-lex sorted."""
    out: list[Monomial] = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + (remaining,))
            return
        for e in range(remaining, -1, -1):
            rec(prefix + (e,), remaining - e, slots - 1)

    for d in range(min_degree, degree + 1):
        rec((), d, nvars)
    return out


def count_monomials(nvars: int, degree: int) -> int:
    return comb(nvars + degree, degree)


class PolyEvaluator:
    """Vectorised evaluation of a :class:`PolyVector` at many points.

    Stores the support as an exponent matrix so a batch of points costs a
    handful of array operations.
    """

    def __init__(self, vec: PolyVector):
        monos = sorted({m for p in vec for m in p._terms}, key=grlex_key)
        if not monos:
            monos = [(0,) * vec.nvars]
        self.nvars = vec.nvars
        self.exponents = np.array(monos, dtype=np.int64).reshape(len(monos), vec.nvars)
        index = {m: i for i, m in enumerate(monos)}
        self.coefs = np.zeros((len(monos), len(vec)))
        for j, p in enumerate(vec):
            for m, c in p.items():
                self.coefs[index[m], j] = c
        self.max_degree = int(self.exponents.max()) if self.exponents.size else 0

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, self.nvars)
        powers = flat[:, :, None] ** np.arange(self.max_degree + 1)
        mon = np.ones((flat.shape[0], self.exponents.shape[0]))
        for k in range(self.nvars):
            mon *= powers[:, k, self.exponents[:, k]]
        out = mon @ self.coefs
        return out.reshape(pts.shape[:-1] + (self.coefs.shape[1],))
