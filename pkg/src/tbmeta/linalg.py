"""Structured linear algebra: block inverses, low-rank updates and spectral radii.

All matrices are dense numpy arrays; the degree-class counts this package
deals with are small.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import HypothesisViolation, NumericalError, SingularMatrixError, ValidationError

# condition numbers above this are treated as singular
SINGULAR_COND = 1e12
HYPOTHESIS_RTOL = 1e-8


def _check_invertible(M, which):
    cond = np.linalg.cond(M) if M.size else 1.0
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularMatrixError(which, float(cond))
    return cond


def _square(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {M.shape}")
    return M


@dataclass(frozen=True, eq=False)
class Block2x2:
    """The block matrix ``[[N1, N2], [N3, N4]]`` with square diagonal blocks."""

    N1: np.ndarray
    N2: np.ndarray
    N3: np.ndarray
    N4: np.ndarray

    def __post_init__(self):
        N1 = _square(self.N1, "N1")
        N4 = _square(self.N4, "N4")
        N2 = np.asarray(self.N2, dtype=float)
        N3 = np.asarray(self.N3, dtype=float)
        p, q = N1.shape[0], N4.shape[0]
        if N2.shape != (p, q) or N3.shape != (q, p):
            raise ValidationError(
                f"off-diagonal blocks must be {(p, q)} and {(q, p)}, "
                f"got {N2.shape} and {N3.shape}"
            )
        for name, val in zip(("N1", "N2", "N3", "N4"), (N1, N2, N3, N4)):
            object.__setattr__(self, name, val)

    def assemble(self) -> np.ndarray:
        return np.block([[self.N1, self.N2], [self.N3, self.N4]])


def block_2x2_inverse(b: Block2x2) -> np.ndarray:
    """Invert ``[[N1, N2], [N3, N4]]`` through the Schur complement of ``N1``.

    With ``D = N4 - N3 N1^-1 N2`` the inverse is::

        [[N1^-1 + N1^-1 N2 D^-1 N3 N1^-1,  -N1^-1 N2 D^-1],
         [-D^-1 N3 N1^-1,                  D^-1         ]]

    Raises SingularMatrixError naming ``N1`` or ``schur complement``.
    """
    _check_invertible(b.N1, "N1")
    N1inv = np.linalg.inv(b.N1)
    D = b.N4 - b.N3 @ N1inv @ b.N2
    _check_invertible(D, "schur complement")
    Dinv = np.linalg.inv(D)
    top_right = -N1inv @ b.N2 @ Dinv
    bottom_left = -Dinv @ b.N3 @ N1inv
    top_left = N1inv + N1inv @ b.N2 @ Dinv @ b.N3 @ N1inv
    return np.block([[top_left, top_right], [bottom_left, Dinv]])


def rank_one_update_inverse(U, X, W, Z) -> np.ndarray:
    """Inverse of ``U + X W Z`` by the Woodbury identity.

    ``U`` is n x n, ``X`` n x m, ``W`` m x m and ``Z`` m x n; with m = 1 this is
    the Sherman-Morrison rank-one update.
    """
    U = _square(U, "U")
    W = np.atleast_2d(np.asarray(W, dtype=float))
    X = np.asarray(X, dtype=float).reshape(U.shape[0], W.shape[0])
    Z = np.asarray(Z, dtype=float).reshape(W.shape[0], U.shape[0])
    _check_invertible(U, "U")
    _check_invertible(W, "W")
    Uinv = np.linalg.inv(U)
    core = np.linalg.inv(W) + Z @ Uinv @ X
    _check_invertible(core, "W^-1 + Z U^-1 X")
    UinvX = Uinv @ X
    return Uinv - UinvX @ np.linalg.solve(core, Z @ Uinv)


@dataclass(frozen=True)
class BlockRadius:
    value: float
    branch: str  # "general" or "commuting"
    residuals: dict


def block_spectral_radius(M1, M2, M3, M4, rtol=HYPOTHESIS_RTOL) -> BlockRadius:
    """Spectral radius of ``[[M1, M2], [M3, M4]]`` from an n x n reduction.

    When ``M2`` is invertible and ``M2 M3 = M2 M4 M2^-1 M1`` the characteristic
    polynomial factors as ``(-lam)^n det(M1 + M2 M4 M2^-1 - lam I)``, so the
    block matrix has n zero eigenvalues plus those of ``M1 + M2 M4 M2^-1``.
    If moreover ``M2`` and ``M4`` commute, the reduced matrix is ``M1 + M4``.
    Both branches are evaluated in that case and must agree.
    """
    M1, M2, M3, M4 = (_square(M, f"M{i}") for i, M in enumerate((M1, M2, M3, M4), 1))
    if not (M1.shape == M2.shape == M3.shape == M4.shape):
        raise ValidationError("all four blocks must share one shape")
    try:
        cond = _check_invertible(M2, "M2")
    except SingularMatrixError as exc:
        raise HypothesisViolation("M2 is not invertible", {"cond_M2": exc.condition}) from exc
    M2inv = np.linalg.inv(M2)
    conj = M2 @ M4 @ M2inv
    nrm = np.linalg.norm
    res1 = nrm(M2 @ M3 - conj @ M1)
    scale1 = nrm(M2) * nrm(M3) + nrm(conj) * nrm(M1)
    res_comm = nrm(M2 @ M4 - M4 @ M2)
    scale_comm = nrm(M2) * nrm(M4)
    residuals = {"factorization": float(res1), "factorization_scale": float(scale1),
                 "commutator": float(res_comm), "commutator_scale": float(scale_comm),
                 "cond_M2": float(cond)}
    if res1 > rtol * scale1 + 1e-300:
        raise HypothesisViolation(
            f"M2 M3 - M2 M4 M2^-1 M1 has norm {res1:.3e} (scale {scale1:.3e})", residuals
        )
    value = max(0.0, dense_spectral_radius(M1 + conj))
    if res_comm <= rtol * scale_comm:
        commuting = max(0.0, dense_spectral_radius(M1 + M4))
        if abs(commuting - value) > rtol * max(1.0, value):
            raise NumericalError(
                f"commuting branch {commuting!r} disagrees with general branch {value!r}"
            )
        return BlockRadius(commuting, "commuting", residuals)
    return BlockRadius(value, "general", residuals)


def dense_spectral_radius(M) -> float:
    """``max |lambda_i|`` from a general dense eigensolver."""
    M = _square(M, "M")
    if not np.all(np.isfinite(M)):
        raise ValidationError("matrix has non-finite entries")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def spectral_abscissa(M) -> float:
    M = _square(M, "M")
    if not np.all(np.isfinite(M)):
        raise ValidationError("matrix has non-finite entries")
    return float(np.max(np.linalg.eigvals(M).real))


def is_irreducible(M) -> bool:
    M = np.asarray(M)
    if M.shape[0] == 1:
        return True
    ncomp, _ = connected_components(M != 0, directed=True, connection="strong")
    return ncomp == 1


@dataclass(frozen=True)
class PowerIterationResult:
    """Outcome of :func:`spectral_radius_power_iteration`.

    ``lower``/``upper`` are the final Collatz-Wielandt bounds (equal to
    ``value`` when the dense fallback was used).
    """

    value: float
    iterations: int
    fallback: bool
    reason: str = ""
    lower: float = float("nan")
    upper: float = float("nan")
    vector: np.ndarray | None = None

    def __float__(self):
        return self.value


def spectral_radius_power_iteration(M, tol=1e-12, max_iter=100_000) -> PowerIterationResult:
    """Perron root of a nonnegative matrix by power iteration.

    Starts from the all-ones vector. At every step the Collatz-Wielandt
    ratios ``min_i (Mx)_i / x_i <= rho(M) <= max_i (Mx)_i / x_i`` bracket the
    answer; iteration stops once the bracket is narrower than ``tol`` times
    its lower end, so the returned value is within ``tol * rho`` of ``rho(M)``.
    Reducible input and non-convergence fall back to the dense eigensolver and
    set ``fallback``.
    """
    M = _square(M, "M")
    if not np.all(np.isfinite(M)):
        raise ValidationError("matrix has non-finite entries")
    if np.any(M < 0):
        raise ValidationError("power iteration needs an entrywise nonnegative matrix")
    n = M.shape[0]

    def fallback(reason, it=0):
        r = dense_spectral_radius(M)
        return PowerIterationResult(r, it, True, reason, r, r)

    if not np.any(M):
        return PowerIterationResult(0.0, 0, False, "", 0.0, 0.0, np.ones(n) / n)
    if not is_irreducible(M):
        return fallback("reducible")
    # zero trace may mean an imprimitive (periodic) matrix; the unit shift
    # makes it primitive without moving the Perron vector
    shift = 1.0 if np.trace(M) == 0 else 0.0
    x = np.ones(n)
    lo = hi = np.nan
    for it in range(1, max_iter + 1):
        y = M @ x
        ratios = y / x
        lo, hi = ratios.min(), ratios.max()
        if hi - lo <= tol * lo:
            return PowerIterationResult(0.5 * (lo + hi), it, False, "", lo, hi, x / x.sum())
        x = y + shift * x
        x /= x.sum()
        if np.any(x <= 0):
            return fallback("iterate lost positivity", it)
    return fallback("max_iter reached", max_iter)


def column_sum_bounds(M):
    """``(min_j r_j, max_j r_j)`` for column sums ``r_j``; brackets ``rho(M)``."""
    M = _square(M, "M")
    if np.any(M < 0):
        raise ValidationError("column-sum bounds need an entrywise nonnegative matrix")
    r = M.sum(axis=0)
    return float(r.min()), float(r.max())
