"""Endemic equilibria of the mass-action model without re-infection.

In compact form the susceptibles ``x`` and infected block ``y = (E, I, R)``
obey::

    x' = Lambda 1 - diag(B y) x - P(0) x
    y' = sum_i <e_i|B y> <e_i|x> K_i - V y

with ``B = [0, beta I, 0]``, ``P(z) = diag(z) + (mu + D_S) I - D_S C`` and
``K_i`` carrying ``1-q`` and ``q`` into the E and I slots of class i.
Writing ``z = B y`` (the per-class force of infection) an equilibrium is a
fixed point ``z = G (z * x(z))`` where ``x(z) = P(z)^-1 Lambda 1`` and
``G = B V^-1 K``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import linalg
from .dynamics import IncidenceKind, Params, gross_flow, rhs
from .errors import DegenerateDenominatorError, ValidationError
from .netgen import DegreeDistribution, uncorrelated_connectivity
from .ngm import assemble_V, dfe, r0_numeric

EQUILIBRIUM_RTOL = 1e-6


class CompactForm(NamedTuple):
    B: np.ndarray  # n x 3n
    K: np.ndarray  # 3n x n, column i is K_i
    V: np.ndarray  # 3n x 3n
    G: np.ndarray  # B V^-1 K, n x n


def compact_form_vectors(p: Params, dist: DegreeDistribution) -> CompactForm:
    n = dist.n
    B = np.zeros((n, 3 * n))
    B[:, n:2 * n] = p.beta * np.eye(n)
    K = np.zeros((3 * n, n))
    K[np.arange(n), np.arange(n)] = 1 - p.q
    K[n + np.arange(n), np.arange(n)] = p.q
    V = assemble_V(p, uncorrelated_connectivity(dist))
    linalg._check_invertible(V, "V")
    G = B @ np.linalg.solve(V, K)
    return CompactForm(B, K, V, G)


def P_matrix(z, p: Params, dist: DegreeDistribution) -> np.ndarray:
    C = uncorrelated_connectivity(dist)
    return np.diag(np.asarray(z, dtype=float) + p.mu + p.D_S) - p.D_S * C


def P_inverse(z, p: Params, dist: DegreeDistribution) -> np.ndarray:
    """Closed-form inverse of ``P(z)``, a diagonal minus a rank-one matrix.

    ``P(z)^-1 = U [I + D_S C U / (1 - (D_S/<k>) sum_k k p(k) u_k)]`` with
    ``U = diag(u)``, ``u_k = 1 / (z_k + mu + D_S)``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (dist.n,):
        raise ValidationError(f"z must have length {dist.n}")
    if np.any(z < 0):
        raise ValidationError("z must be entrywise nonnegative")
    u = 1.0 / (z + p.mu + p.D_S)
    denom = 1.0 - p.D_S / dist.mean_degree * math.fsum(dist.degrees * dist.probs * u)
    if abs(denom) < 1e-14:
        raise DegenerateDenominatorError("1 - (D_S/<k>) sum_k k p(k)/(z_k+mu+D_S)", denom)
    C = uncorrelated_connectivity(dist)
    return u[:, None] * (np.eye(dist.n) + p.D_S * C * u[None, :] / denom)


def susceptibles(z, p: Params, dist: DegreeDistribution) -> np.ndarray:
    """``x(z) = P(z)^-1 Lambda 1``; equals the DFE at ``z = 0``."""
    return P_inverse(z, p, dist) @ np.full(dist.n, p.Lambda)


def fixed_point_map(z, p, dist, form: CompactForm | None = None) -> np.ndarray:
    form = form or compact_form_vectors(p, dist)
    z = np.asarray(z, dtype=float)
    return form.G @ (z * susceptibles(z, p, dist))


def H(z, p: Params, dist: DegreeDistribution, form: CompactForm | None = None) -> float:
    """Scalar certificate ``H(z) = sum_i z_i x_i(z) s_i / sum_j z_j``.

    ``s_i`` is the total force of infection generated by one new infection
    in class i; ``H(z*) = 1`` at an endemic equilibrium.
    """
    z = np.asarray(z, dtype=float)
    total = math.fsum(z)
    if not total > 0:
        raise ValidationError("H needs sum(z) > 0")
    form = form or compact_form_vectors(p, dist)
    s = form.G.sum(axis=0)
    return math.fsum(z * susceptibles(z, p, dist) * s) / total


def h_limit_zero(p: Params, dist: DegreeDistribution) -> float:
    """``lim_{z->0} H(z) = sum_i x0_i s_i``; an upper bound on the mass-action R0."""
    form = compact_form_vectors(p, dist)
    return math.fsum(dfe(p, dist).S * form.G.sum(axis=0))


def h_limit_ray(p: Params, dist: DegreeDistribution, direction=None) -> float:
    """``lim_{eps->0} H(eps v)``, the ``v``-weighted mean of ``x0_i s_i``.

    The limit of ``H`` at the origin depends on the direction of approach.
    Along ``v = 1`` it is ``h_limit_zero / n``; its supremum over directions
    is ``max_i x0_i s_i``, the largest column sum of :func:`threshold_matrix`.
    """
    v = np.ones(dist.n) if direction is None else np.asarray(direction, dtype=float)
    if v.shape != (dist.n,) or np.any(v < 0) or not v.sum() > 0:
        raise ValidationError("direction must be a nonnegative, nonzero vector per degree class")
    form = compact_form_vectors(p, dist)
    return math.fsum(v * dfe(p, dist).S * form.G.sum(axis=0)) / math.fsum(v)


def threshold_matrix(p: Params, dist: DegreeDistribution) -> np.ndarray:
    """``A = sum_i x0_i B V^-1 K_i e_i^T``, whose spectral radius is the mass-action R0."""
    form = compact_form_vectors(p, dist)
    return form.G * dfe(p, dist).S[None, :]


def h_curve(p: Params, dist: DegreeDistribution, cs) -> list[tuple[float, float]]:
    """``(c, H(c 1))`` along the diagonal ray, for plotting against the line 1."""
    form = compact_form_vectors(p, dist)
    return [(float(c), H(np.full(dist.n, c), p, dist, form)) for c in cs]


def write_h_curve_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "H"])
        for c, h in rows:
            w.writerow([repr(c), repr(h)])


@dataclass
class EndemicSolution:
    z_star: np.ndarray
    x_star: np.ndarray
    y_star: np.ndarray
    residual: float
    h_value: float
    iterations: int
    rhs_residual: float
    floor_projections: int = 0
    r0: float = float("nan")

    def state(self) -> np.ndarray:
        """Full ``(4, n)`` state ``[S; E; I; R]``."""
        n = self.x_star.size
        return np.vstack([self.x_star, self.y_star.reshape(3, n)])

    def to_dict(self) -> dict:
        return {"z_star": self.z_star.tolist(), "x_star": self.x_star.tolist(),
                "y_star": self.y_star.tolist(), "residual": self.residual,
                "h_value": self.h_value, "iterations": self.iterations,
                "rhs_residual": self.rhs_residual,
                "floor_projections": self.floor_projections, "r0": self.r0}


@dataclass
class NoEndemicSolution:
    """Why the fixed-point iteration did not produce an endemic equilibrium.

    ``reason`` is ``"collapsed"`` (iterates went to zero, the disease-free
    state), ``"not_converged"`` or ``"not_equilibrium"`` (converged ``z`` whose
    reconstruction fails the model residual check).
    """

    reason: str
    iterations: int
    last_z: np.ndarray
    residual_history: list = field(default_factory=list)
    floor_projections: int = 0
    r0: float = float("nan")

    def to_dict(self) -> dict:
        return {"reason": self.reason, "iterations": self.iterations,
                "last_z": self.last_z.tolist(), "residual_history": self.residual_history,
                "floor_projections": self.floor_projections, "r0": self.r0}


FLOOR = 1e-14


def equilibrium_residual(state, p: Params, dist: DegreeDistribution) -> float:
    """Largest RHS entry relative to the gross flow through that entry."""
    f = rhs(state, p, dist, IncidenceKind.MASS_ACTION, reinfection=False)
    g = gross_flow(state, p, dist, IncidenceKind.MASS_ACTION, reinfection=False)
    return float(np.max(np.abs(f) / np.maximum(g, 1e-300)))


def reconstruct(z, p: Params, dist: DegreeDistribution, form: CompactForm | None = None):
    """``(x*, y*)`` from a fixed point ``z*``: ``y* = V^-1 K (z * x(z))``."""
    form = form or compact_form_vectors(p, dist)
    x = susceptibles(z, p, dist)
    y = np.linalg.solve(form.V, form.K @ (z * x))
    return x, y


def solve_endemic(p: Params, dist: DegreeDistribution, init, damping=0.5, tol=1e-10,
                  max_iter=100_000, history_every=100, collapse_tol=1e-12):
    """Damped fixed-point iteration ``z <- (1-w) z + w G (z * x(z))``.

    Converged when ``||Phi(z) - z||_inf <= tol (1 + ||z||_inf)`` and also
    ``<= tol ||z||_inf``; the relative condition keeps iterates drifting to the
    disease-free state from passing as converged, and pins ``H(z*)`` to 1
    when ``z*`` is small. Returns an :class:`EndemicSolution` or a
    :class:`NoEndemicSolution`.
    """
    if not 0 < damping <= 1:
        raise ValidationError("damping must lie in (0, 1]")
    z = np.array(init, dtype=float)
    if z.shape != (dist.n,) or np.any(z <= 0):
        raise ValidationError("init must be a positive vector with one entry per degree class")
    r0 = r0_numeric(p, dist, IncidenceKind.MASS_ACTION).value
    form = compact_form_vectors(p, dist)
    x0 = dfe(p, dist).S
    zscale = float(np.max(form.G @ x0)) or 1.0
    history = []
    floors = 0
    for it in range(1, max_iter + 1):
        phi = fixed_point_map(z, p, dist, form)
        res = float(np.max(np.abs(phi - z)))
        if it % history_every == 1:
            history.append(res)
        zmax = float(np.max(z))
        if res <= tol * min(1 + zmax, zmax):
            z = phi
            break
        z = (1 - damping) * z + damping * phi
        if np.any(z < FLOOR):
            floors += int(np.count_nonzero(z < FLOOR))
            z = np.maximum(z, FLOOR)
        if float(np.max(z)) <= collapse_tol * zscale:
            return NoEndemicSolution("collapsed", it, z, history, floors, r0)
    else:
        return NoEndemicSolution("not_converged", max_iter, z, history, floors, r0)

    if float(np.max(z)) <= max(collapse_tol * zscale, 1e3 * FLOOR):
        return NoEndemicSolution("collapsed", it, z, history, floors, r0)
    x, y = reconstruct(z, p, dist, form)
    sol = EndemicSolution(z, x, y, res, H(z, p, dist, form), it, float("nan"), floors, r0)
    sol.rhs_residual = equilibrium_residual(sol.state(), p, dist)
    if sol.rhs_residual > EQUILIBRIUM_RTOL:
        return NoEndemicSolution("not_equilibrium", it, z, history, floors, r0)
    return sol


def multi_start_scan(p: Params, dist: DegreeDistribution, starts=10, seed=0,
                     low=1e-4, high=1e2, dedup_rtol=1e-6, **solver_kw) -> list[EndemicSolution]:
    """Solve from ``starts`` log-uniform initial vectors; return distinct solutions.

    Output is sorted by ``||z*||`` so it does not depend on start order.
    """
    if starts < 1:
        raise ValidationError("starts must be >= 1")
    rng = np.random.default_rng(seed)
    inits = np.exp(rng.uniform(np.log(low), np.log(high), size=(starts, dist.n)))
    found: list[EndemicSolution] = []
    for z0 in inits:
        sol = solve_endemic(p, dist, z0, **solver_kw)
        if not isinstance(sol, EndemicSolution):
            continue
        if any(np.max(np.abs(sol.z_star - s.z_star)) <= dedup_rtol * np.max(np.abs(s.z_star))
               for s in found):
            continue
        found.append(sol)
    found.sort(key=lambda s: float(np.linalg.norm(s.z_star)))
    return found
