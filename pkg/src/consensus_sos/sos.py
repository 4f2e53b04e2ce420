"""Sum-of-squares constraints compiled to block SDPs, and Gram certificates.

Decision variables are scalars identified by integers. A
:class:`DecisionPolynomial` is affine in them: ``p_0 + sum_k d_k p_k`` with
numeric polynomials ``p_k``. Products of two decision-bearing polynomials are
rejected, so every program built here stays convex.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, floor
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .poly import (
    DimensionError,
    Monomial,
    PolyVector,
    Polynomial,
    grlex_key,
    mono_mul,
    monomials_up_to,
    substitute_affine,
)
from .sdp import SdpProblem, SdpSolution, SolverSettings, Status, solve

CONST = None  # key of the decision-free part

#: stalled solves this close to optimal may still yield checkable certificates
STALL_RESIDUAL = 1e-4


class BilinearityError(ValueError):
    """Two decision-bearing factors were multiplied."""


class BasisCoverageError(ValueError):
    def __init__(self, monomial):
        super().__init__(f"monomial {monomial} is not a product of two basis elements")
        self.monomial = monomial


class CertificateRejected(ValueError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class DecisionPolynomial:
    """Polynomial whose coefficients are affine in decision variables."""

    __slots__ = ("nvars", "parts")

    def __init__(self, nvars: int, parts: Mapping | None = None):
        self.nvars = nvars
        self.parts: dict = {}
        for k, p in (parts or {}).items():
            if p.nvars != nvars:
                raise DimensionError("part lives over a different variable set")
            if not p.is_zero():
                self.parts[k] = p

    @classmethod
    def lift(cls, p: Polynomial) -> "DecisionPolynomial":
        return cls(p.nvars, {CONST: p})

    @classmethod
    def affine_times(cls, expr: Mapping, p: Polynomial) -> "DecisionPolynomial":
        """``(c + sum w_k d_k) * p`` for an affine expression ``{k: w}``."""
        return cls(p.nvars, {k: p.scale(w) for k, w in expr.items() if w != 0.0})

    @staticmethod
    def coerce(obj, nvars=None) -> "DecisionPolynomial":
        if isinstance(obj, DecisionPolynomial):
            return obj
        if isinstance(obj, Polynomial):
            return DecisionPolynomial.lift(obj)
        if nvars is not None and isinstance(obj, (int, float)):
            return DecisionPolynomial.lift(Polynomial.constant(nvars, obj))
        raise TypeError(f"cannot use {type(obj).__name__} as a decision polynomial")

    # structure -------------------------------------------------------------------
    @property
    def variables(self) -> list:
        return sorted(k for k in self.parts if k is not CONST)

    @property
    def is_constant(self) -> bool:
        """True when no decision variable appears."""
        return all(k is CONST for k in self.parts)

    @property
    def degree(self) -> int:
        return max((p.degree for p in self.parts.values()), default=-1)

    def support(self) -> list:
        monos = set()
        for p in self.parts.values():
            monos.update(m for m, _ in p.items())
        return sorted(monos, key=grlex_key)

    def coefficient(self, mono: Monomial) -> tuple[float, dict]:
        """Affine coefficient of ``mono``: (constant, {variable: weight})."""
        const = 0.0
        lin = {}
        for k, p in self.parts.items():
            c = p.coefficient(mono)
            if c == 0.0:
                continue
            if k is CONST:
                const = c
            else:
                lin[k] = c
        return const, lin

    def value(self, assignment: Mapping) -> Polynomial:
        total = Polynomial.zero(self.nvars)
        for k, p in self.parts.items():
            total = total + (p if k is CONST else p.scale(float(assignment[k])))
        return total

    # arithmetic -------------------------------------------------------------------
    def __add__(self, other):
        other = DecisionPolynomial.coerce(other, self.nvars)
        if other.nvars != self.nvars:
            raise DimensionError("variable count mismatch")
        parts = dict(self.parts)
        for k, p in other.parts.items():
            parts[k] = parts[k] + p if k in parts else p
        return DecisionPolynomial(self.nvars, parts)

    __radd__ = __add__

    def __neg__(self):
        return DecisionPolynomial(self.nvars, {k: -p for k, p in self.parts.items()})

    def __sub__(self, other):
        return self + (-DecisionPolynomial.coerce(other, self.nvars))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return DecisionPolynomial(self.nvars, {k: p.scale(float(other)) for k, p in self.parts.items()})
        other = DecisionPolynomial.coerce(other)
        if other.nvars != self.nvars:
            raise DimensionError("variable count mismatch")
        if self.is_constant:
            self, other = other, self
        if not other.is_constant:
            raise BilinearityError("product of two decision-bearing polynomials")
        q = other.parts.get(CONST)
        if q is None:
            return DecisionPolynomial(self.nvars)
        return DecisionPolynomial(self.nvars, {k: p * q for k, p in self.parts.items()})

    __rmul__ = __mul__

    def substitute(self, matrix, offset=None) -> "DecisionPolynomial":
        T = np.atleast_2d(np.asarray(matrix, dtype=float))
        parts = {k: substitute_affine(p, T, offset) for k, p in self.parts.items()}
        return DecisionPolynomial(T.shape[1], parts)

    def diff(self, i: int) -> "DecisionPolynomial":
        return DecisionPolynomial(self.nvars, {k: p.diff(i) for k, p in self.parts.items()})

    def gradient(self) -> list:
        return [self.diff(i) for i in range(self.nvars)]

    def __repr__(self):
        inner = ", ".join(f"{k}: {p.to_string()}" for k, p in self.parts.items())
        return f"DecisionPolynomial({self.nvars}, {{{inner}}})"


def dot(a: Sequence, b: Sequence) -> DecisionPolynomial:
    """Inner product of two vectors of (decision) polynomials."""
    if len(a) != len(b):
        raise DimensionError("length mismatch")
    total = None
    for x, y in zip(a, b):
        term = DecisionPolynomial.coerce(x) * DecisionPolynomial.coerce(y)
        total = term if total is None else total + term
    return total


# bases --------------------------------------------------------------------------------

def monomial_basis(nvars: int, half_degree: int, parity: str = "any", min_degree: int = 0) -> list:
    if half_degree < 0:
        raise ValueError("half_degree must be nonnegative")
    monos = monomials_up_to(nvars, half_degree, min_degree)
    if parity == "even":
        monos = [m for m in monos if sum(m) % 2 == 0]
    elif parity == "odd":
        monos = [m for m in monos if sum(m) % 2 == 1]
    elif parity != "any":
        raise ValueError(f"unknown parity {parity!r}")
    return monos


def in_hull(point, vertices: np.ndarray) -> bool:
    point = np.asarray(point, dtype=float)
    if np.any(point < vertices.min(axis=0)) or np.any(point > vertices.max(axis=0)):
        return False
    k = vertices.shape[0]
    A_eq = np.vstack([vertices.T, np.ones((1, k))])
    b_eq = np.concatenate([point, [1.0]])
    res = linprog(np.zeros(k), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return res.status == 0


def newton_basis(support: Sequence[Monomial], nvars: int) -> list:
    """Monomials m with 2m inside the Newton polytope of ``support``."""
    if not support:
        return []
    pts = np.array(support, dtype=float)
    degs = pts.sum(axis=1)
    lo, hi = int(ceil(degs.min() / 2)), int(floor(degs.max() / 2))
    return [m for m in monomials_up_to(nvars, hi, lo) if in_hull(2 * np.array(m), pts)]


# compilation -------------------------------------------------------------------------

@dataclass
class SosFragment:
    """One Gram block plus coefficient-matching rows.

    ``rows`` maps each matched monomial to the Gram index pairs ``(k, l)``,
    ``k <= l``, with ``basis[k] * basis[l]`` equal to it. ``zeros`` lists
    monomials of the target that no basis product reaches; their coefficients
    must vanish.
    """

    basis: list
    target: DecisionPolynomial
    rows: dict
    zeros: list = field(default_factory=list)
    coordinates: np.ndarray | None = None


def _products(basis):
    prods: dict = {}
    for k, a in enumerate(basis):
        for l in range(k, len(basis)):
            prods.setdefault(mono_mul(a, basis[l]), []).append((k, l))
    return prods


def compile_sos(dp, basis: Sequence[Monomial], strict: bool = True) -> SosFragment:
    """Coefficient matching for ``dp = basis^T Q basis`` with Q PSD."""
    dp = DecisionPolynomial.coerce(dp)
    basis = list(basis)
    prods = _products(basis)
    zeros = []
    for m in dp.support():
        if m not in prods:
            if strict:
                raise BasisCoverageError(m)
            zeros.append(m)
    rows = {m: prods[m] for m in sorted(prods, key=grlex_key)}
    return SosFragment(basis=basis, target=dp, rows=rows, zeros=zeros)


def compile_zero(dp) -> list:
    """Affine coefficient expressions that must vanish for ``dp == 0``.

    Monomials whose coefficient carries no decision variable and is already
    zero produce nothing.
    """
    dp = DecisionPolynomial.coerce(dp)
    out = []
    for m in dp.support():
        const, lin = dp.coefficient(m)
        if lin or const != 0.0:
            out.append((m, const, lin))
    return out


# certificates -------------------------------------------------------------------------

CERT_RTOL = 1e-6
CERT_EIG_TOL = 1e-8


@dataclass
class GramCertificate:
    basis: list
    gram: np.ndarray
    target: Polynomial
    coordinates: np.ndarray | None = None
    name: str = ""

    def reconstruction(self) -> Polynomial:
        n = self.target.nvars
        terms: dict = {}
        for k, a in enumerate(self.basis):
            for l, b in enumerate(self.basis):
                m = mono_mul(a, b)
                terms[m] = terms.get(m, 0.0) + self.gram[k, l]
        return Polynomial(n, terms)

    @property
    def residual(self) -> float:
        if not self.basis:
            return self.target.max_abs_coef()
        return (self.target - self.reconstruction()).max_abs_coef()

    @property
    def lambda_min(self) -> float:
        if not self.basis:
            return 0.0
        return float(np.linalg.eigvalsh(0.5 * (self.gram + self.gram.T))[0])

    def check(self, rtol: float = CERT_RTOL, eig_tol: float = CERT_EIG_TOL) -> "GramCertificate":
        scale = 1.0 + self.target.max_abs_coef()
        r = self.residual
        if r > rtol * scale:
            raise CertificateRejected(f"Gram reconstruction of {self.name or 'target'} is off", r)
        if self.lambda_min < -eig_tol:
            raise CertificateRejected("Gram matrix is not PSD", self.lambda_min)
        return self

    def is_valid(self, rtol: float = CERT_RTOL, eig_tol: float = CERT_EIG_TOL) -> bool:
        try:
            self.check(rtol, eig_tol)
        except CertificateRejected:
            return False
        return True

    def to_json(self) -> dict:
        out = {
            "basis": [list(m) for m in self.basis],
            "gram": np.asarray(self.gram).tolist(),
            "target": self.target.to_json(),
            "residual": self.residual,
            "lambda_min": self.lambda_min,
        }
        if self.name:
            out["name"] = self.name
        if self.coordinates is not None:
            out["coordinates"] = np.asarray(self.coordinates).tolist()
        return out

    @classmethod
    def from_json(cls, obj) -> "GramCertificate":
        coords = obj.get("coordinates")
        return cls(
            basis=[tuple(m) for m in obj["basis"]],
            gram=np.array(obj["gram"], dtype=float).reshape(len(obj["basis"]), len(obj["basis"])),
            target=Polynomial.from_json(obj["target"]),
            coordinates=None if coords is None else np.array(coords, dtype=float),
            name=obj.get("name", ""),
        )


def extract_certificate(fragment: SosFragment, gram: np.ndarray, target: Polynomial, name: str = "") -> GramCertificate:
    """Package a solved Gram block and check it against ``target`` symbolically."""
    if gram.shape != (len(fragment.basis),) * 2:
        raise DimensionError("Gram matrix does not match the basis")
    cert = GramCertificate(
        basis=list(fragment.basis),
        gram=0.5 * (gram + gram.T),
        target=target,
        coordinates=fragment.coordinates,
        name=name,
    )
    return cert.check()


# program coordinator --------------------------------------------------------------------

@dataclass
class _Sos:
    name: str
    fragment: SosFragment
    block: int


class SosProgram:
    """Collects decision variables, SOS and zero constraints into one SDP."""

    def __init__(self):
        self._nvar = 0
        self._free: dict = {}  # var -> free index
        self._psd: dict = {}  # var -> (block, i, j)
        self._psd_blocks: list = []  # dims of user PSD matrices
        self._sos: list = []
        self._zero: list = []  # (name, monomial, const, lin)
        self._objective: dict = {}

    # variables ---------------------------------------------------------------------------
    def new_free(self, count: int = 1) -> list:
        ids = list(range(self._nvar, self._nvar + count))
        self._nvar += count
        for v in ids:
            self._free[v] = len(self._free)
        return ids

    def new_psd(self, dim: int) -> np.ndarray:
        """Symmetric PSD matrix variable; returns a ``dim x dim`` array of ids."""
        blk = len(self._psd_blocks)
        self._psd_blocks.append(dim)
        ids = np.empty((dim, dim), dtype=object)
        for i in range(dim):
            for j in range(i, dim):
                v = self._nvar
                self._nvar += 1
                self._psd[v] = (blk, i, j)
                ids[i, j] = ids[j, i] = v
        return ids

    # constraints -------------------------------------------------------------------------
    def add_sos(
        self,
        dp,
        basis: Sequence[Monomial] | None = None,
        coordinates=None,
        margin: float = 0.0,
        margin_exponent: int = 2,
        name: str = "",
    ) -> SosFragment:
        """Require ``dp`` (optionally minus ``margin * sum x_i^e``) to be SOS.

        ``coordinates`` is an invertible matrix T; the constraint is compiled
        for ``dp(T y)``, which is SOS exactly when ``dp`` is.
        """
        dp = DecisionPolynomial.coerce(dp)
        if coordinates is not None:
            T = np.asarray(coordinates, dtype=float)
            if T.shape != (dp.nvars, dp.nvars) or abs(np.linalg.det(T)) < 1e-12:
                raise DimensionError("coordinate change must be square and invertible")
            dp = dp.substitute(T)
        if margin:
            n = dp.nvars
            bump = Polynomial(n, {tuple(margin_exponent if i == j else 0 for j in range(n)): 1.0 for i in range(n)})
            dp = dp - DecisionPolynomial.lift(bump.scale(margin))
        if basis is None:
            frag = compile_sos(dp, newton_basis(dp.support(), dp.nvars), strict=False)
        else:
            frag = compile_sos(dp, basis, strict=True)
        frag.coordinates = None if coordinates is None else np.asarray(coordinates, dtype=float)
        self._sos.append(_Sos(name or f"sos{len(self._sos)}", frag, -1))
        return frag

    def add_zero(self, dp, name: str = "") -> int:
        eqs = compile_zero(dp)
        for m, const, lin in eqs:
            self._zero.append((name, m, const, lin))
        return len(eqs)

    def set_objective(self, expr: Mapping):
        """Maximise the affine expression ``{var: weight}``."""
        self._objective = dict(expr)

    # assembly ----------------------------------------------------------------------------
    def _var_terms(self, lin: Mapping, sign: float, psd_offset: int):
        blocks, free = [], []
        for v, w in lin.items():
            w = sign * w
            if v in self._free:
                free.append((self._free[v], w))
            else:
                blk, i, j = self._psd[v]
                blocks.append((psd_offset + blk, i, j, w if i == j else 0.5 * w))
        return blocks, free

    def build(self) -> SdpProblem:
        prob = SdpProblem()
        for d in self._psd_blocks:
            prob.add_block(d)
        prob.add_free(len(self._free))
        for s in self._sos:
            frag = s.fragment
            s.block = prob.add_block(len(frag.basis)) if frag.basis else -1
            for m, pairs in frag.rows.items():
                const, lin = frag.target.coefficient(m)
                gb = [(s.block, k, l, 1.0) for k, l in pairs]
                vb, vf = self._var_terms(lin, -1.0, 0)
                prob.add_equality(gb + vb, vf, const)
            for m in frag.zeros:
                const, lin = frag.target.coefficient(m)
                vb, vf = self._var_terms(lin, 1.0, 0)
                prob.add_equality(vb, vf, -const)
        for _, m, const, lin in self._zero:
            vb, vf = self._var_terms(lin, 1.0, 0)
            prob.add_equality(vb, vf, -const)
        ob, of = self._var_terms(self._objective, 1.0, 0)
        prob.set_objective(ob, of)
        return prob

    def solve(self, settings: SolverSettings | None = None, on_problem=None) -> "SosResult":
        prob = self.build()
        if on_problem is not None:
            on_problem(prob)
        sol = solve(prob, settings)
        return SosResult(self, prob, sol)

    def assignment(self, sol: SdpSolution) -> dict:
        vals = {}
        for v, k in self._free.items():
            vals[v] = float(sol.free_values[k])
        for v, (blk, i, j) in self._psd.items():
            vals[v] = float(sol.block_values[blk][i, j])
        return vals


@dataclass
class SosResult:
    program: SosProgram
    problem: SdpProblem
    solution: SdpSolution

    @property
    def status(self) -> Status:
        return self.solution.status

    @property
    def ok(self) -> bool:
        return self.solution.ok

    @property
    def stalled(self) -> bool:
        """The solver stopped short of its tolerance but close to a solution."""
        sol = self.solution
        return (
            sol.status in (Status.NUMERICAL_FAILURE, Status.MAX_ITERATIONS)
            and max(sol.residuals) <= STALL_RESIDUAL
        )

    @property
    def certified(self) -> bool:
        """True when every SOS constraint has a certificate that checks out."""
        try:
            self.certificates()
        except CertificateRejected:
            return False
        return True

    def values(self) -> dict:
        return self.program.assignment(self.solution)

    def value(self, obj):
        """Numeric value of a variable id, affine dict, or decision polynomial."""
        vals = self.values()
        if isinstance(obj, DecisionPolynomial):
            return obj.value(vals)
        if isinstance(obj, Mapping):
            return sum(w * (1.0 if k is CONST else vals[k]) for k, w in obj.items())
        return vals[obj]

    def certificates(self) -> list:
        """Validated Gram certificates, one per SOS constraint.

        Stalled solves are accepted here too: Gram matrices without a strictly
        feasible point often stop the solver just short of its tolerance, and
        each certificate is checked on its own anyway.
        """
        if not (self.ok or self.stalled):
            raise CertificateRejected(f"solver status {self.status.value}", float("inf"))
        vals = self.values()
        out = []
        for s in self.program._sos:
            frag = s.fragment
            target = frag.target.value(vals)
            gram = self.solution.block_values[s.block] if frag.basis else np.zeros((0, 0))
            out.append(extract_certificate(frag, gram, target, name=s.name))
        return out
