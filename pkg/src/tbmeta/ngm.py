"""Disease-free equilibrium, next-generation matrices and R0.

Two independent routes to R0 are provided for standard incidence:

* :func:`r0_closed_form_freq` evaluates the transcribed scalar coefficient
  chain ``a, b, a0..a8, b0..b8`` literally, and
* :func:`r0_numeric` assembles ``F`` and ``V`` and takes ``rho(F V^-1)``.

The numeric route is authoritative. :func:`compare_closed_form` measures the
gap and produces a discrepancy record instead of hiding it.

Because every block of ``V`` is a polynomial in the idempotent rank-one
matrix ``C``, each block of ``V^-1`` has the form ``x I + y C``. Evaluating
``C`` on its two eigenvalues (0 and 1) turns ``V`` into two 3x3 matrices;
:func:`exact_coefficients` uses this to get the pair ``(a8, b8)`` that the
matrix-level next-generation operator actually has.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg
from .dynamics import IncidenceKind, MetapopState, Params, jacobian
from .errors import DegenerateDenominatorError, NumericalError, SingularMatrixError
from .netgen import DegreeDistribution, MixingKernel, connectivity_matrix, uncorrelated_connectivity

CLOSED_FORM_RTOL = 1e-6
_TINY = 1e-300


class R0Method(enum.Enum):
    CLOSED_FORM = "closed_form"
    NUMERIC_NGM = "numeric_ngm"
    POWER_ITERATION_L = "power_iteration_L"


@dataclass
class R0Report:
    value: float
    method: R0Method
    bounds: tuple | None = None
    certificates: dict | None = None
    discrepancy: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    def __float__(self):
        return self.value

    def to_dict(self) -> dict:
        doc = {"value": self.value, "method": self.method.value}
        if self.bounds is not None:
            doc["bounds"] = list(self.bounds)
        if self.certificates is not None:
            doc["certificates"] = {k: asdict(v) for k, v in self.certificates.items()}
        if self.discrepancy is not None:
            doc["discrepancy"] = self.discrepancy
        if self.diagnostics:
            doc["diagnostics"] = self.diagnostics
        return doc


# -- disease-free equilibrium --------------------------------------------

def dfe(p: Params, dist: DegreeDistribution, kernel: MixingKernel | None = None) -> MetapopState:
    """Disease-free equilibrium.

    Uncorrelated networks have the closed form
    ``S0_k = Lambda/(mu+D_S) * (1 + (D_S/mu) k/<k>)``; for a correlated kernel
    the linear system ``(mu+D_S) S0 - D_S C S0 = Lambda`` is solved instead.
    """
    n = dist.n
    if kernel is None or kernel.uncorrelated:
        S0 = p.Lambda / (p.mu + p.D_S) * (1 + (p.D_S / p.mu) * dist.degrees / dist.mean_degree)
    else:
        C = connectivity_matrix(dist, kernel)
        S0 = np.linalg.solve((p.mu + p.D_S) * np.eye(n) - p.D_S * C, np.full(n, p.Lambda))
    return MetapopState(np.vstack([S0, np.zeros((3, n))]))


# -- F and V ----------------------------------------------------------------

def assemble_V(p: Params, C: np.ndarray) -> np.ndarray:
    """Transfer matrix on the infected compartments, block order (E, I, R)."""
    n = C.shape[0]
    Id = np.eye(n)
    a = p.alpha * (1 - p.theta)
    return np.block([
        [p.A_E * Id - p.D_E * C, -p.gamma * Id, np.zeros((n, n))],
        [-a * Id, p.A_I * Id - p.D_I * C, -p.xi * Id],
        [-p.eta * Id, -p.delta * Id, p.A_R * Id - p.D_R * C],
    ])


def assemble_FV(p: Params, dist: DegreeDistribution, kind=IncidenceKind.STANDARD):
    """New-infection matrix ``F`` and transfer matrix ``V`` (both 3n x 3n).

    Only the (E, I) and (I, I) blocks of ``F`` are nonzero: ``beta (1-q)`` and
    ``beta q`` times the identity for standard incidence, times ``diag(S0)``
    for mass action. Re-infection of recovered individuals vanishes at the
    disease-free state and is not a new infection here.
    """
    kind = IncidenceKind.parse(kind)
    n = dist.n
    C = uncorrelated_connectivity(dist)
    if kind is IncidenceKind.STANDARD:
        base = np.eye(n)
    else:
        base = np.diag(dfe(p, dist).S)
    F = np.zeros((3 * n, 3 * n))
    F[0:n, n:2 * n] = p.beta * (1 - p.q) * base
    F[n:2 * n, n:2 * n] = p.beta * p.q * base
    return F, assemble_V(p, C)


# -- coefficient chain ------------------------------------------------------

@dataclass(frozen=True)
class NgmCoefficients:
    A_E: float
    A_I: float
    A_R: float
    a: float
    b: float
    a0: float
    b0: float
    a1: float
    b1: float
    a2: float
    b2: float
    a3: float
    b3: float
    a4: float
    b4: float
    a5: float
    b5: float
    a6: float
    b6: float
    a7: float
    b7: float
    a8: float
    b8: float
    warnings: tuple = ()


def _nz(expr, value):
    if not math.isfinite(value) or abs(value) < 1e-14:
        raise DegenerateDenominatorError(expr, value)
    return value


def ngm_coefficients(p: Params) -> NgmCoefficients:
    """The scalar coefficient chain a0..b8, transcribed term by term.

    No algebraic repair is attempted here; see :func:`exact_coefficients`
    for the pair the matrix operator really has.
    """
    mu, q, eta, d, delta, gamma, xi = p.mu, p.q, p.eta, p.d, p.delta, p.gamma, p.xi
    D_E, D_I, D_R = p.D_E, p.D_I, p.D_R
    A_E, A_I, A_R = p.A_E, p.A_I, p.A_R
    at = p.alpha * (1 - p.theta)
    m = mu + at  # printed as [mu + alpha(1-theta)] in the b1..b3 factors

    _nz("A_E", A_E)
    _nz("mu+eta+alpha(1-theta)", mu + eta + at)
    a = (A_I * (mu + eta + D_E) + at * (mu + d + delta + D_I)) / A_E
    b = (A_E * D_I * (mu + eta + at) + gamma * at * D_E) / (A_E * (mu + eta + at))
    _nz("a", a)
    _nz("a-b", a - b)
    _nz("mu+alpha(1-theta)", m)
    _nz("A_E-D_E", A_E - D_E)
    warnings = []
    if not a > b:
        warnings.append(f"a={a!r} is not greater than b={b!r}")

    a0 = 1 / a
    b0 = b / (a * (a - b))
    ratio = (b * m + a * D_E) / ((a - b) * m)
    a1 = at / (a * A_E)
    b1 = a1 * ratio
    a2 = 1 / (a * A_E)
    b2 = a2 * ratio
    g = a * A_E + gamma * at
    _nz("a A_E + gamma alpha(1-theta)", g)
    a3 = g / (a * A_E ** 2)
    b3 = a3 * ((gamma * at * A_E * (b * m + a * D_E) + (a - b) * D_E * m * g)
               / ((a - b) * g * m ** 2))
    Y = A_R - xi * (eta * a3 + delta * a1)
    X = D_R + xi * (eta * b3 + delta * b1)
    _nz("A_R - xi(eta a3 + delta a1)", Y)
    _nz("[A_R - xi(eta a3 + delta a1)] - [D_R + xi(eta b3 + delta b1)]", Y - X)
    a4 = 1 / Y
    b4 = a4 * X / (Y - X)
    a5 = ((1 - q) * at + q * A_E) / (a * A_E)
    b5 = (((1 - q) * at * (a * D_E + b * (A_E - D_E)) + q * b * A_E * (A_E - D_E))
          / (a * (a - b) * A_E * (A_E - D_E)))
    a6 = 1 + xi * delta * a0 * a4
    b6 = xi * delta * (a0 * b4 + b0 * a4 + b0 * b4)
    s3 = (1 - q) * a3 + q * a2
    t3 = (1 - q) * b3 + q * b2
    a7 = (a6 - 1) * s3
    b7 = (a6 - 1) * t3 + b6 * s3 + b6 * t3
    a8 = a5 * a6 + a7
    b8 = a5 * b6 + b5 * a6 + b5 * b6 + b7
    return NgmCoefficients(A_E, A_I, A_R, a, b, a0, b0, a1, b1, a2, b2, a3, b3,
                           a4, b4, a5, b5, a6, b6, a7, b7, a8, b8, tuple(warnings))


def reduced_V(p: Params, c: float) -> np.ndarray:
    """``V`` with ``C`` replaced by the scalar eigenvalue ``c``."""
    at = p.alpha * (1 - p.theta)
    return np.array([
        [p.A_E - p.D_E * c, -p.gamma, 0.0],
        [-at, p.A_I - p.D_I * c, -p.xi],
        [-p.eta, -p.delta, p.A_R - p.D_R * c],
    ])


@dataclass(frozen=True)
class ExactCoefficients:
    """``(1-q) [V^-1]_{I,E} + q [V^-1]_{I,I} = a8 I + b8 C`` exactly."""

    a8: float
    b8: float

    @property
    def perron(self):
        return self.a8 + self.b8


def exact_coefficients(p: Params) -> ExactCoefficients:
    vals = []
    for c in (0.0, 1.0):
        Vc = reduced_V(p, c)
        linalg._check_invertible(Vc, f"V(C->{c:g})")
        W = np.linalg.inv(Vc)
        vals.append((1 - p.q) * W[1, 0] + p.q * W[1, 1])
    return ExactCoefficients(vals[0], vals[1] - vals[0])


def coefficient_pair(p: Params, source="exact"):
    if source == "exact":
        c = exact_coefficients(p)
        return c.a8, c.b8
    if source == "printed":
        c = ngm_coefficients(p)
        return c.a8, c.b8
    raise ValueError(f"unknown coefficient source {source!r}")


# -- R0 ------------------------------------------------------------------------

def r0_closed_form_freq(p: Params, dist: DegreeDistribution | None = None,
                        source="printed") -> R0Report:
    """``R0 = beta (a8 + b8)`` for standard incidence.

    With ``dist`` given, the numeric next-generation value is computed too and
    any relative gap above 1e-6 is attached as ``discrepancy``.
    """
    a8, b8 = coefficient_pair(p, source)
    report = R0Report(p.beta * (a8 + b8), R0Method.CLOSED_FORM,
                      diagnostics={"coefficients": source})
    if dist is not None:
        report.discrepancy = compare_closed_form(p, dist).as_dict()
        if report.discrepancy["agree"]:
            report.discrepancy = None
    return report


def next_generation_matrix(p: Params, dist: DegreeDistribution, kind=IncidenceKind.STANDARD):
    F, V = assemble_FV(p, dist, kind)
    linalg._check_invertible(V, "V")
    return F @ np.linalg.inv(V)


def r0_numeric(p: Params, dist: DegreeDistribution, kind=IncidenceKind.STANDARD) -> R0Report:
    """``rho(F V^-1)`` from a dense eigensolve."""
    K = next_generation_matrix(p, dist, kind)
    return R0Report(linalg.dense_spectral_radius(K), R0Method.NUMERIC_NGM,
                    diagnostics={"kind": IncidenceKind.parse(kind).value})


@dataclass(frozen=True)
class Discrepancy:
    closed_form: float
    numeric: float
    exact_reduction: float
    rel_error: float
    agree: bool
    printed: dict

    def as_dict(self):
        return asdict(self)


def compare_closed_form(p: Params, dist: DegreeDistribution, rtol=CLOSED_FORM_RTOL) -> Discrepancy:
    """Compare the printed chain against ``rho(F V^-1)`` for standard incidence."""
    co = ngm_coefficients(p)
    closed = p.beta * (co.a8 + co.b8)
    numeric = r0_numeric(p, dist, IncidenceKind.STANDARD).value
    exact = p.beta * exact_coefficients(p).perron
    rel = abs(closed - numeric) / max(abs(numeric), _TINY) if numeric or closed else 0.0
    return Discrepancy(closed, numeric, exact, rel, bool(rel <= rtol),
                       {"a8": co.a8, "b8": co.b8})


def mass_action_L(p: Params, dist: DegreeDistribution, source="exact") -> np.ndarray:
    """``L = beta (a8 diag(S0) + b8 diag(S0) C)``."""
    a8, b8 = coefficient_pair(p, source)
    S0 = dfe(p, dist).S
    C = uncorrelated_connectivity(dist)
    return p.beta * (a8 * np.diag(S0) + b8 * S0[:, None] * C)


def interlacing_check(p: Params, dist: DegreeDistribution, L=None, source="exact") -> dict:
    """Check ``d_1 < lam_1 < d_2 < ... < d_n < lam_n`` for ``d = beta a8 S0``."""
    a8, _ = coefficient_pair(p, source)
    if L is None:
        L = mass_action_L(p, dist, source)
    ev = np.linalg.eigvals(L)
    imag = float(np.max(np.abs(ev.imag)))
    lam = np.sort(ev.real)
    dvals = np.sort(p.beta * a8 * dfe(p, dist).S)
    scale = max(float(np.max(np.abs(lam))), _TINY)
    real = imag <= 1e-10 * scale
    gaps_lo = lam - dvals  # lam_i > d_i
    gaps_hi = dvals[1:] - lam[:-1]  # lam_i < d_{i+1}
    interlaced = bool(np.all(gaps_lo > 0) and np.all(gaps_hi > 0))
    return {
        "eigenvalues": lam.tolist(),
        "diagonal": dvals.tolist(),
        "real": bool(real),
        "positive": bool(lam[0] > 0),
        "simple": bool(np.all(np.diff(lam) > 0)),
        "interlaced": interlaced,
        "max_imag": imag,
        "min_gap": float(min(gaps_lo.min(), gaps_hi.min() if gaps_hi.size else np.inf)),
    }


def r0_mass_structured(p: Params, dist: DegreeDistribution, source="exact",
                       tol=1e-13) -> R0Report:
    """Mass-action R0 as the Perron root of the diagonal-plus-rank-one ``L``."""
    L = mass_action_L(p, dist, source)
    pi = linalg.spectral_radius_power_iteration(L, tol=tol)
    il = interlacing_check(p, dist, L, source)
    diag = {"coefficients": source, "iterations": pi.iterations, "fallback": pi.fallback,
            "interlacing": il}
    if pi.fallback:
        diag["fallback_reason"] = pi.reason
    return R0Report(pi.value, R0Method.POWER_ITERATION_L, diagnostics=diag)


def r0_bounds_mass(p: Params, dist: DegreeDistribution, source="exact"):
    """Lower/upper bounds on the mass-action R0 from the smallest/largest ``S0``."""
    a8, b8 = coefficient_pair(p, source)
    S0 = dfe(p, dist).S
    trace_part = b8 * math.fsum(S0 * dist.degrees * dist.probs) / dist.mean_degree
    return p.beta * (a8 * S0[0] + trace_part), p.beta * (a8 * S0[-1] + trace_part)


@dataclass(frozen=True)
class Certificate:
    holds: bool
    margin: float


def instability_certificates(p: Params, dist: DegreeDistribution, source="exact") -> dict:
    """Sufficient conditions for instability of the mass-action DFE.

    * ``max_degree``: ``beta a8 Lambda (mu<k> + D_S k_max) / (mu <k> (mu+D_S)) > 1``
    * ``max_degree_density``: ``S0_{k_max} > 1 / (beta a8)`` (same condition)
    * ``min_degree_density``: ``S0_{k_min} > (1/a8) [1/beta - b8 sum_k S0_k k p(k)/<k>]``

    Margins are ``lhs - rhs``; positive margin means the condition holds.
    """
    a8, b8 = coefficient_pair(p, source)
    S0 = dfe(p, dist).S
    km = dist.mean_degree
    lhs = p.beta * a8 * p.Lambda * (p.mu * km + p.D_S * dist.k_max) / (p.mu * km * (p.mu + p.D_S))
    out = {"max_degree": Certificate(bool(lhs > 1), lhs - 1)}
    if p.beta > 0 and a8 > 0:
        thr = 1 / (p.beta * a8)
        out["max_degree_density"] = Certificate(bool(S0[-1] > thr), S0[-1] - thr)
        s = math.fsum(S0 * dist.degrees * dist.probs) / km
        thr_min = (1 / p.beta - b8 * s) / a8
        out["min_degree_density"] = Certificate(bool(S0[0] > thr_min), S0[0] - thr_min)
    else:
        out["max_degree_density"] = Certificate(False, -math.inf)
        out["min_degree_density"] = Certificate(False, -math.inf)
    return out


def mass_action_report(p: Params, dist: DegreeDistribution, source="exact") -> R0Report:
    """Structured mass-action R0 with bounds and certificates attached."""
    rep = r0_mass_structured(p, dist, source)
    rep.bounds = r0_bounds_mass(p, dist, source)
    rep.certificates = instability_certificates(p, dist, source)
    return rep


def r0(p: Params, dist: DegreeDistribution, kind=IncidenceKind.STANDARD) -> float:
    """Authoritative R0 (numeric next-generation matrix)."""
    return r0_numeric(p, dist, kind).value


def beta_for_r0(target, p: Params, dist: DegreeDistribution, kind=IncidenceKind.STANDARD) -> float:
    """Transmission coefficient giving ``R0 == target`` (R0 is linear in beta)."""
    unit = r0(p.replace(beta=1.0), dist, kind)
    if unit <= 0:
        raise NumericalError("R0 vanishes at beta = 1; cannot rescale")
    return target / unit


# -- local stability --------------------------------------------------------

def dfe_jacobian(p: Params, dist: DegreeDistribution, kind=IncidenceKind.STANDARD,
                 reinfection=True) -> np.ndarray:
    return jacobian(dfe(p, dist), p, dist, kind, reinfection=reinfection)


def dfe_jacobian_stability(p: Params, dist: DegreeDistribution, kind=IncidenceKind.STANDARD):
    """Spectral abscissa of the full Jacobian at the DFE and whether it is < 0."""
    J = dfe_jacobian(p, dist, kind)
    s = linalg.spectral_abscissa(J)
    return s, bool(s < 0)


def v_inverse_nonnegative(p: Params, dist: DegreeDistribution, atol=1e-14) -> bool:
    _, V = assemble_FV(p, dist)
    try:
        linalg._check_invertible(V, "V")
    except SingularMatrixError:
        return False
    Vi = np.linalg.inv(V)
    return bool(np.all(Vi >= -atol * np.abs(Vi).max()))


def discrepancy_report(draws, rtol=CLOSED_FORM_RTOL) -> dict:
    """Compare the printed chain with the numeric R0 over ``(params, dist)`` draws.

    Each record also carries the exact-reduction value, which localises a
    mismatch to the coefficient chain rather than the matrix assembly.
    """
    records = []
    for p, dist in draws:
        rec = {"params": p.to_dict(), "n": dist.n}
        try:
            rec.update(compare_closed_form(p, dist, rtol).as_dict())
        except NumericalError as exc:
            numeric = r0_numeric(p, dist, IncidenceKind.STANDARD).value
            rec.update(closed_form=None, numeric=numeric,
                       exact_reduction=p.beta * exact_coefficients(p).perron,
                       rel_error=None, agree=False, error=str(exc))
        rec["exact_rel_error"] = (abs(rec["exact_reduction"] - rec["numeric"])
                                  / max(abs(rec["numeric"]), _TINY))
        records.append(rec)
    rels = [r["rel_error"] for r in records if r["rel_error"] is not None]
    agree = sum(r["agree"] for r in records)
    return {
        "draws": len(records),
        "agreeing": agree,
        "systematic_discrepancy": agree < len(records),
        "max_rel_error": max(rels) if rels else None,
        "median_rel_error": float(np.median(rels)) if rels else None,
        "chain_errors": sum("error" in r for r in records),
        "max_exact_rel_error": max(r["exact_rel_error"] for r in records) if records else None,
        "authoritative": "numeric",
        "records": records,
    }
