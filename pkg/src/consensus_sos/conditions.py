"""Consensus certificate conditions and the verify / synthesize drivers.

Variables of the decrease conditions are three stacked copies of the agent
state, ``(a, b, c)`` each in R^n. The decrease polynomial vanishes to second
order on ``a == b``, so it is compiled in the coordinates
``(a - b, b, b - c)``. There the polynomial has degree at most two in each of the last two groups and every
term carries ``a - b`` at least twice, so Newton pruning removes the basis
monomials that would otherwise pin Gram eigenvalues at zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poly import DimensionError, Polynomial, PolyVector, gradient, monomials_up_to, substitute_affine
from .sdp import SolverSettings, Status
from .sos import (
    CONST,
    BilinearityError,
    DecisionPolynomial,
    GramCertificate,
    SosProgram,
    dot,
)

PD_MARGIN = 1e-6
SYMMETRY_TOL = 1e-8
PSI_CAP = 1.0  # cap on the lower bound t of lambda_min(Psi) when V is a decision (removes scale freedom)


class DegreeError(ValueError):
    pass


# q-vectors ----------------------------------------------------------------------------

@dataclass(frozen=True)
class QForm:
    """Monomial vector ``q`` and the exponent of the radial lower bound."""

    qhat: tuple
    nvars: int
    exponent_2m: int | None = None

    def __post_init__(self):
        qhat = tuple(tuple(int(e) for e in m) for m in self.qhat)
        object.__setattr__(self, "qhat", qhat)
        if any(len(m) != self.nvars for m in qhat):
            raise DimensionError("q entries must have one exponent per variable")
        if any(sum(m) < 1 for m in qhat):
            raise ValueError("q entries must be monomials of degree >= 1")
        if len(set(qhat)) != len(qhat):
            raise ValueError("q entries must be distinct")
        for i in range(self.nvars):
            unit = tuple(1 if j == i else 0 for j in range(self.nvars))
            if unit not in qhat:
                raise ValueError(f"coordinate monomial x{i + 1} missing from q")
        if self.exponent_2m is None:
            object.__setattr__(self, "exponent_2m", 2 * max(sum(m) for m in qhat))
        if self.exponent_2m < 2 or self.exponent_2m % 2:
            raise ValueError("exponent_2m must be even and >= 2")

    @property
    def size(self) -> int:
        return len(self.qhat)

    def vector(self) -> PolyVector:
        return PolyVector([Polynomial.monomial(m) for m in self.qhat])

    def to_json(self) -> dict:
        return {"qhat": [list(m) for m in self.qhat], "exponent_2m": self.exponent_2m}

    @classmethod
    def from_json(cls, obj, nvars=None) -> "QForm":
        qhat = [tuple(m) for m in obj["qhat"]]
        return cls(qhat, nvars or len(qhat[0]), obj.get("exponent_2m"))


def constant_matrix(values) -> np.ndarray:
    """Affine-expression matrix for a numeric symmetric matrix."""
    M = np.atleast_2d(np.asarray(values, dtype=float))
    out = np.empty(M.shape, dtype=object)
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            out[i, j] = {CONST: float(M[i, j])}
    return out


def psi_variable(prog: SosProgram, dim: int, cap: float | None = None):
    """Decision matrix ``S + t I`` with ``S`` PSD and ``t`` free; returns (matrix, t)."""
    S = prog.new_psd(dim)
    (t,) = prog.new_free(1)
    out = np.empty((dim, dim), dtype=object)
    for i in range(dim):
        for j in range(dim):
            out[i, j] = {S[i, j]: 1.0, t: 1.0} if i == j else {S[i, j]: 1.0}
    if cap is not None:
        # t + s = cap with s >= 0
        s = prog.new_psd(1)[0, 0]
        prog.add_zero(DecisionPolynomial.affine_times({t: 1.0, s: 1.0, CONST: -cap}, Polynomial.constant(1, 1.0)))
    return out, t


def quadratic_form(psi: np.ndarray, u: Sequence[Polynomial], w: Sequence[Polynomial] | None = None) -> DecisionPolynomial:
    """``u^T psi w`` for symmetric ``psi`` of affine expressions."""
    w = u if w is None else w
    k = len(u)
    total = DecisionPolynomial(u[0].nvars)
    for i in range(k):
        for j in range(k):
            total = total + DecisionPolynomial.affine_times(psi[i, j], u[i] * w[j])
    return total


def _selector(n: int, blocks: Sequence[int], copies: int) -> np.ndarray:
    """Matrix mapping ``copies`` stacked n-vectors to ``sum_k sign_k x_k``."""
    T = np.zeros((n, copies * n))
    for k, sign in enumerate(blocks):
        if sign:
            T[:, k * n:(k + 1) * n] = sign * np.eye(n)
    return T


def difference_coordinates(n: int) -> np.ndarray:
    """``(a, b, c) = T (a - b, b, b - c)``."""
    I, Z = np.eye(n), np.zeros((n, n))
    return np.block([[I, I, Z], [Z, I, Z], [Z, I, -I]])


def _as_decision_vector(h) -> list:
    return [DecisionPolynomial.coerce(p) for p in h]


def _substitute(vec, T) -> list:
    return [p.substitute(T) for p in vec]


# condition builders -------------------------------------------------------------------

def build_psd_lower_bound(qf: QForm, psi) -> DecisionPolynomial:
    """``q(x)^T Psi q(x) - sum_i x_i^(2m)``."""
    q = list(qf.vector())
    n = qf.nvars
    radial = Polynomial(n, {tuple(qf.exponent_2m if i == j else 0 for j in range(n)): 1.0 for i in range(n)})
    return quadratic_form(_psi(psi), q) - radial


def _psi(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=object)
    if psi.size and not isinstance(psi.flat[0], dict):
        return constant_matrix(psi.astype(float))
    return psi


def build_first_order_decrease(V, h, qf: QForm, psi) -> DecisionPolynomial:
    """``[grad V(a-c) - grad V(b-c)]^T [h(a) - h(b)] - dq^T Psi dq`` with ``dq = q(a-c) - q(b-c)``."""
    n = qf.nvars
    Vd = DecisionPolynomial.coerce(V)
    hd = _as_decision_vector(h)
    if Vd.nvars != n or len(hd) != n or any(p.nvars != n for p in hd):
        raise DimensionError("V and h must live over the q variables")
    if not Vd.is_constant and not all(p.is_constant for p in hd):
        raise BilinearityError("V and the coupling cannot both be decisions")
    grad = Vd.gradient()
    Tac, Tbc = _selector(n, (1, 0, -1), 3), _selector(n, (0, 1, -1), 3)
    Ta, Tb = _selector(n, (1, 0, 0), 3), _selector(n, (0, 1, 0), 3)
    dV = [x - y for x, y in zip(_substitute(grad, Tac), _substitute(grad, Tbc))]
    dh = [x - y for x, y in zip(_substitute(hd, Ta), _substitute(hd, Tb))]
    q = qf.vector()
    dq = list(q.substitute(Tac) - q.substitute(Tbc))
    return dot(dV, dh) - quadratic_form(_psi(psi), dq)


def build_second_order_decrease(V, h2, qf: QForm, psi) -> DecisionPolynomial:
    """Same shape as the first-order condition with the velocity coupling."""
    return build_first_order_decrease(V, h2, qf, psi)


def symmetry_residual(V: Polynomial, h1: PolyVector, check_degree: bool = True) -> Polynomial:
    """``grad V(a)^T h1(b) - grad V(b)^T h1(a)`` over 2n variables.

    ``check_degree=False`` skips the deg h1 = deg V - 1 precondition, which is
    useful for exploring which coefficients the equality pins down.
    """
    n = V.nvars
    if len(h1) != n or h1.nvars != n:
        raise DimensionError("h1 must have one entry per variable")
    if check_degree and h1.degree != V.degree - 1:
        raise DegreeError(f"deg h1 = {h1.degree} but deg V - 1 = {V.degree - 1}")
    g = gradient(V)
    Ta, Tb = _selector(n, (1, 0), 2), _selector(n, (0, 1), 2)
    return g.substitute(Ta).dot(h1.substitute(Tb)) - g.substitute(Tb).dot(h1.substitute(Ta))


def build_symmetry_equality(V: Polynomial, h1: PolyVector, check_degree: bool = True) -> list:
    """Coefficient equalities ``(monomial, value)`` that must vanish; empty when h1 = grad V."""
    r = symmetry_residual(V, h1, check_degree)
    return [(m, c) for m, c in r.sorted_terms()]


def is_odd(vec: PolyVector, tol: float = 0.0) -> bool:
    return all(abs(c) <= tol for p in vec for m, c in p.items() if sum(m) % 2 == 0)


# results ------------------------------------------------------------------------------

@dataclass
class RoundReport:
    step: str
    status: str
    iterations: int
    residuals: tuple
    objective: float | None
    blocks: tuple

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "status": self.status,
            "iterations": self.iterations,
            "residuals": [float(r) for r in self.residuals],
            "objective": self.objective,
            "blocks": list(self.blocks),
        }


def _report(step, result) -> RoundReport:
    sol = result.solution
    obj = sol.primal_objective if sol.ok else None
    return RoundReport(step, sol.status.value, sol.iterations, tuple(sol.residuals), obj, tuple(result.problem.block_dims))


@dataclass
class FirstOrderCertificate:
    V: Polynomial
    h: PolyVector
    qform: QForm
    psi: np.ndarray
    certs: dict

    @property
    def lambda_min_psi(self) -> float:
        return float(np.linalg.eigvalsh(self.psi)[0])

    def to_json(self) -> dict:
        return {
            "order": 1,
            "V": self.V.to_json(),
            "h": self.h.to_json(),
            "qform": self.qform.to_json(),
            "psi": self.psi.tolist(),
            "lambda_min_psi": self.lambda_min_psi,
            "certificates": {k: c.to_json() for k, c in self.certs.items()},
        }


@dataclass
class SecondOrderCertificate:
    V: Polynomial
    h1: PolyVector
    h2: PolyVector
    qform: QForm
    psi: np.ndarray
    certs: dict
    symmetry_residual: float = 0.0
    symmetry_tol: float = SYMMETRY_TOL

    @property
    def lambda_min_psi(self) -> float:
        return float(np.linalg.eigvalsh(self.psi)[0])

    @property
    def symmetry_ok(self) -> bool:
        return self.symmetry_residual <= self.symmetry_tol

    def to_json(self) -> dict:
        return {
            "order": 2,
            "V": self.V.to_json(),
            "h1": self.h1.to_json(),
            "h2": self.h2.to_json(),
            "qform": self.qform.to_json(),
            "psi": self.psi.tolist(),
            "lambda_min_psi": self.lambda_min_psi,
            "symmetry": {"residual": self.symmetry_residual, "tol": self.symmetry_tol, "ok": self.symmetry_ok},
            "certificates": {k: c.to_json() for k, c in self.certs.items()},
        }


@dataclass
class Outcome:
    """Verification or synthesis outcome; infeasibility is reported, not raised."""

    feasible: bool
    status: str
    certificate: FirstOrderCertificate | SecondOrderCertificate | None = None
    rounds: list = field(default_factory=list)
    message: str = ""

    def to_json(self) -> dict:
        return {
            "feasible": self.feasible,
            "status": self.status,
            "message": self.message,
            "certificate": None if self.certificate is None else self.certificate.to_json(),
            "rounds": [r.to_json() for r in self.rounds],
        }


# program assembly ---------------------------------------------------------------------

def _v_template(prog: SosProgram, n: int, deg: int, even: bool):
    monos = [m for m in monomials_up_to(n, deg, 1) if not even or sum(m) % 2 == 0]
    ids = prog.new_free(len(monos))
    V = DecisionPolynomial(n)
    for v, m in zip(ids, monos):
        V = V + DecisionPolynomial.affine_times({v: 1.0}, Polynomial.monomial(m))
    return V


def _h_template(prog: SosProgram, n: int, deg: int, odd: bool):
    monos = [m for m in monomials_up_to(n, deg, 1) if not odd or sum(m) % 2 == 1]
    out = []
    for _ in range(n):
        ids = prog.new_free(len(monos))
        p = DecisionPolynomial(n)
        for v, m in zip(ids, monos):
            p = p + DecisionPolynomial.affine_times({v: 1.0}, Polynomial.monomial(m))
        out.append(p)
    return out


def _pd_margin_target(V: DecisionPolynomial) -> DecisionPolynomial:
    """``V - V(0)``."""
    zero = tuple([0] * V.nvars)
    const, lin = V.coefficient(zero)
    return V - DecisionPolynomial.affine_times({CONST: const, **lin}, Polynomial.constant(V.nvars, 1.0))


def _assemble(prog, qf, V, coupling, psi, margin):
    n = qf.nvars
    prog.add_sos(_pd_margin_target(DecisionPolynomial.coerce(V)), margin=margin, margin_exponent=2, name="V_positive")
    prog.add_sos(build_psd_lower_bound(qf, psi), name="lower_bound")
    prog.add_sos(
        build_first_order_decrease(V, coupling, qf, psi),
        coordinates=difference_coordinates(n),
        name="decrease",
    )


def _psi_value(result, psi) -> np.ndarray:
    k = psi.shape[0]
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            out[i, j] = result.value(psi[i, j])
    return 0.5 * (out + out.T)


def _numeric_vector(result, vec) -> PolyVector:
    return PolyVector([result.value(DecisionPolynomial.coerce(p)) for p in vec])


def _certs(result) -> dict:
    return {c.name: c for c in result.certificates()}


def verify(
    V: Polynomial,
    coupling: PolyVector,
    qf: QForm,
    h1: PolyVector | None = None,
    psi=None,
    settings: SolverSettings | None = None,
    margin: float = PD_MARGIN,
    symmetry_tol: float = SYMMETRY_TOL,
    on_problem=None,
) -> Outcome:
    """Check fixed polynomials; first order when ``h1`` is None, else second order.

    ``coupling`` is h (first order) or h2 (second order). ``psi`` fixes the
    matrix instead of searching for it.
    """
    prog = SosProgram()
    if psi is None:
        psi_expr, t = psi_variable(prog, qf.size)
        prog.set_objective({t: 1.0})
    else:
        psi_expr = constant_matrix(psi)
    _assemble(prog, qf, V, coupling, psi_expr, margin)
    res = prog.solve(settings, on_problem)
    rounds = [_report("verify", res)]
    sym = None
    if h1 is not None:
        sym = symmetry_residual(V, h1).max_abs_coef()
    if not res.ok:
        return Outcome(False, res.status.value, None, rounds, "SOS conditions not certified")
    certs = _certs(res)
    psi_val = _psi_value(res, psi_expr)
    if h1 is None:
        cert = FirstOrderCertificate(V, PolyVector(coupling), qf, psi_val, certs)
        return Outcome(True, res.status.value, cert, rounds)
    cert = SecondOrderCertificate(V, h1, PolyVector(coupling), qf, psi_val, certs, sym, symmetry_tol)
    if not cert.symmetry_ok:
        return Outcome(False, res.status.value, cert, rounds, f"symmetry residual {sym:.3e} exceeds {symmetry_tol:.1e}")
    return Outcome(True, res.status.value, cert, rounds)


@dataclass
class SynthesisConfig:
    order: int = 2
    deg_v: int = 4
    deg_h: int = 3
    mode: str = "fixed_h"  # or "alternate"
    max_rounds: int = 3
    margin: float = PD_MARGIN
    psi_cap: float = PSI_CAP

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if self.mode not in ("fixed_h", "alternate"):
            raise ValueError("mode must be fixed_h or alternate")
        if self.deg_v < 2 or self.deg_h < 1 or self.max_rounds < 1:
            raise ValueError("degrees and round count must be positive")


def identity_coupling(n: int) -> PolyVector:
    return PolyVector([Polynomial.variable(n, i) for i in range(n)])


def _v_step(cfg, qf, coupling, settings, on_problem=None):
    """Solve for V and Psi with the coupling fixed."""
    n = qf.nvars
    prog = SosProgram()
    psi_expr, t = psi_variable(prog, qf.size, cfg.psi_cap)
    prog.set_objective({t: 1.0})
    V = _v_template(prog, n, cfg.deg_v, even=cfg.order == 2)
    _assemble(prog, qf, V, coupling, psi_expr, cfg.margin)
    res = prog.solve(settings, on_problem)
    return res, V, psi_expr


def _coupling_step(cfg, qf, V, settings, on_problem=None):
    """Solve for the coupling and Psi with V fixed."""
    n = qf.nvars
    prog = SosProgram()
    psi_expr, t = psi_variable(prog, qf.size, cfg.psi_cap)
    prog.set_objective({t: 1.0})
    h = _h_template(prog, n, cfg.deg_h, odd=False)
    _assemble(prog, qf, V, h, psi_expr, cfg.margin)
    res = prog.solve(settings, on_problem)
    return res, h, psi_expr


def _package(cfg, qf, res, V, coupling, psi_expr) -> Outcome | None:
    """Numeric certificate from a solved step, or None when it does not validate."""
    from .sos import CertificateRejected

    try:
        certs = _certs(res)
    except CertificateRejected:
        return None
    Vn = res.value(DecisionPolynomial.coerce(V))
    cn = _numeric_vector(res, coupling)
    psi_val = _psi_value(res, psi_expr)
    if cfg.order == 1:
        cert = FirstOrderCertificate(Vn, cn, qf, psi_val, certs)
    else:
        h1 = gradient(Vn)
        sym = symmetry_residual(Vn, h1).max_abs_coef()
        cert = SecondOrderCertificate(Vn, h1, cn, qf, psi_val, certs, sym)
    return Outcome(True, res.status.value, cert)


def synthesize(
    cfg: SynthesisConfig,
    qf: QForm,
    coupling: PolyVector | None = None,
    v_seed: Polynomial | None = None,
    settings: SolverSettings | None = None,
    on_problem=None,
) -> Outcome:
    """Search for V (and optionally the coupling) with Psi.

    ``coupling`` is h for order 1 and h2 for order 2; it defaults to the
    identity map. In second order h1 is always grad V.
    """
    n = qf.nvars
    coupling = coupling if coupling is not None else identity_coupling(n)
    if cfg.mode == "fixed_h" and not all(DecisionPolynomial.coerce(p).is_constant for p in coupling):
        raise BilinearityError("fixed_h mode needs a numeric coupling")
    rounds = []
    last_status = Status.INFEASIBLE.value
    v_fixed = v_seed if v_seed is not None else Polynomial(n, {tuple(2 if i == j else 0 for j in range(n)): 1.0 for i in range(n)})
    n_rounds = 1 if cfg.mode == "fixed_h" else cfg.max_rounds
    for r in range(n_rounds):
        res, V, psi_expr = _v_step(cfg, qf, coupling, settings, on_problem)
        rounds.append(_report(f"round{r}:V", res))
        last_status = res.status.value
        if res.ok:
            out = _package(cfg, qf, res, V, coupling, psi_expr)
            if out is not None:
                out.rounds = rounds
                return out
            v_fixed = res.value(V)
        if cfg.mode == "fixed_h":
            break
        res, h, psi_expr = _coupling_step(cfg, qf, v_fixed, settings, on_problem)
        rounds.append(_report(f"round{r}:coupling", res))
        last_status = res.status.value
        if not res.ok:
            break
        out = _package(cfg, qf, res, v_fixed, h, psi_expr)
        if out is not None:
            out.rounds = rounds
            return out
        new_coupling = _numeric_vector(res, h)
        if new_coupling.allclose(coupling, 1e-9):
            break
        coupling = new_coupling
    return Outcome(False, last_status, None, rounds, "no validated certificate found")
