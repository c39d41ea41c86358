"""Right-hand sides of the SEIR-type TB metapopulation model.

State layout: a ``(4, n)`` array whose rows are the S, E, I, R densities and
whose columns follow ``dist.degrees``. Flattened states (for integrators and
Jacobians) are row-major, i.e. ``[S; E; I; R]``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .netgen import DegreeDistribution, MixingKernel, connectivity_matrix, uncorrelated_connectivity

COMPARTMENTS = ("S", "E", "I", "R")

# chemoprophylaxis recovery rate; no standard value exists, 0.2 is the package default
DEFAULT_ETA = 0.2

# JSON key -> attribute name
_JSON_KEYS = {"lambda": "Lambda", "beta": "beta", "mu": "mu", "q": "q", "alpha": "alpha",
              "theta": "theta", "delta": "delta", "eta": "eta", "gamma": "gamma", "d": "d",
              "xi": "xi", "D_S": "D_S", "D_E": "D_E", "D_I": "D_I", "D_R": "D_R"}


class IncidenceKind(enum.Enum):
    STANDARD = "standard"
    MASS_ACTION = "mass"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"standard": cls.STANDARD, "freq": cls.STANDARD, "frequency": cls.STANDARD,
                   "mass": cls.MASS_ACTION, "mass_action": cls.MASS_ACTION,
                   "density": cls.MASS_ACTION}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValidationError(f"unknown incidence kind {value!r}") from None


@dataclass(frozen=True)
class Params:
    """Epidemiological and migration rates (per year unless dimensionless).

    Defaults are the standard TB parameter set with diffusion rates 1 and
    ``eta`` set to :data:`DEFAULT_ETA`.
    """

    Lambda: float = 1001.0
    beta: float = 0.0017
    mu: float = 0.017
    q: float = 0.015
    alpha: float = 0.0024
    theta: float = 0.001
    delta: float = 0.7372
    eta: float = DEFAULT_ETA
    gamma: float = 0.7372 / 4
    d: float = 0.0012
    xi: float = 0.0986
    D_S: float = 1.0
    D_E: float = 1.0
    D_I: float = 1.0
    D_R: float = 1.0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValidationError("invalid parameters", problems)

    def problems(self) -> list[str]:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                out.append(f"{f.name}: must be a finite number, got {v!r}")
        if out:
            return out
        for name in ("Lambda", "beta", "alpha", "delta", "eta", "gamma", "d"):
            if getattr(self, name) < 0:
                out.append(f"{name}: must be >= 0")
        if self.mu <= 0:
            out.append("mu: must be > 0")
        for name in ("q", "theta", "xi"):
            if not 0 <= getattr(self, name) <= 1:
                out.append(f"{name}: must lie in [0, 1]")
        for name in ("D_S", "D_E", "D_I", "D_R"):
            if getattr(self, name) <= 0:
                out.append(f"{name}: diffusion rates must be > 0")
        return out

    def replace(self, **changes) -> "Params":
        return dataclasses.replace(self, **changes)

    def with_diffusion(self, D) -> "Params":
        return self.replace(D_S=D, D_E=D, D_I=D, D_R=D)

    @property
    def A_E(self):
        return self.mu + self.eta + self.alpha * (1 - self.theta) + self.D_E

    @property
    def A_I(self):
        return self.mu + self.d + self.gamma + self.delta + self.D_I

    @property
    def A_R(self):
        return self.mu + self.xi + self.D_R

    def to_dict(self) -> dict:
        return {key: getattr(self, attr) for key, attr in _JSON_KEYS.items()}

    @classmethod
    def from_dict(cls, doc: dict, base: "Params | None" = None) -> "Params":
        """Build from a flat JSON object; absent keys keep ``base`` values."""
        if not isinstance(doc, dict):
            raise ValidationError("params document must be a JSON object")
        problems = [f"{k}: unknown parameter" for k in doc if k not in _JSON_KEYS]
        values = dataclasses.asdict(base or cls())
        for key, val in doc.items():
            if key in _JSON_KEYS:
                values[_JSON_KEYS[key]] = val
        obj = object.__new__(cls)
        for k, v in values.items():
            object.__setattr__(obj, k, v)
        problems += obj.problems()
        if problems:
            raise ValidationError("invalid parameters", problems)
        return cls(**{k: float(v) for k, v in values.items()})


class MetapopState:
    """Per-degree-class densities; ``values[c, i]`` for compartment c, class i."""

    __slots__ = ("values",)

    def __init__(self, values):
        v = np.array(values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(4, -1)
        if v.ndim != 2 or v.shape[0] != 4:
            raise ValidationError(f"state must have shape (4, n), got {v.shape}")
        self.values = v

    @classmethod
    def from_compartments(cls, S, E, I, R):
        return cls(np.vstack([S, E, I, R]))

    S = property(lambda self: self.values[0])
    E = property(lambda self: self.values[1])
    I = property(lambda self: self.values[2])
    R = property(lambda self: self.values[3])

    @property
    def total(self):
        return self.values.sum(axis=0)

    @property
    def n(self):
        return self.values.shape[1]

    def flat(self):
        return self.values.ravel().copy()

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __repr__(self):
        return f"MetapopState(n={self.n})"


def as_state_array(state, n=None) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    if x.ndim == 1:
        x = x.reshape(4, -1)
    if x.shape[0] != 4 or (n is not None and x.shape[1] != n):
        raise ValidationError(f"state has shape {x.shape}, expected (4, {n})")
    return x


def _check_state(x):
    if not np.all(np.isfinite(x)):
        raise ValidationError("state has non-finite entries")
    if np.any(x < 0):
        bad = [(COMPARTMENTS[c], int(i)) for c, i in zip(*np.nonzero(x < 0))]
        raise ValidationError("state has negative entries", [f"{c}[{i}]" for c, i in bad])


def weighted_mean(weights, values) -> float:
    """Compensated ``sum_i weights[i] * values[i]``."""
    return math.fsum(np.multiply(weights, values))


def _force(S, E, I, R, beta, kind):
    if kind is IncidenceKind.MASS_ACTION:
        return beta * I
    N = S + E + I + R
    out = np.zeros_like(N)
    # 0/0 limit along nonnegative states is 0 since I <= N
    np.divide(beta * I, N, out=out, where=N > 0)
    return out


def _reaction(x, p, kind, reinfection):
    S, E, I, R = x
    f = _force(S, E, I, R, p.beta, kind)
    inc = f * S
    reinf = (1 - p.xi) * f * R if reinfection else np.zeros_like(R)
    a = p.alpha * (1 - p.theta)
    dS = p.Lambda - inc - p.mu * S
    dE = (1 - p.q) * inc + reinf + p.gamma * I - (p.mu + p.eta + a) * E
    dI = p.q * inc + a * E - (p.mu + p.d + p.gamma + p.delta) * I + p.xi * R
    dR = -reinf + p.eta * E + p.delta * I - (p.mu + p.xi) * R
    return np.vstack([dS, dE, dI, dR])


def _diffusion_rates(p):
    return np.array([p.D_S, p.D_E, p.D_I, p.D_R])[:, None]


def rhs_general(state, p: Params, dist: DegreeDistribution, kernel: MixingKernel,
                kind=IncidenceKind.STANDARD, reinfection=True, C=None) -> np.ndarray:
    """Time derivative for an arbitrary mixing kernel.

    Migration into class ``k`` is ``k D_X sum_k' P(k'|k) rho_{X,k'} / k'``,
    i.e. ``D_X (C rho_X)_k`` with the connectivity matrix ``C``; pass ``C``
    to skip recomputing it. ``reinfection=False`` drops the re-infection of
    recovered individuals.
    """
    kind = IncidenceKind.parse(kind)
    x = as_state_array(state, dist.n)
    _check_state(x)
    if C is None:
        C = connectivity_matrix(dist, kernel)
    D = _diffusion_rates(p)
    return _reaction(x, p, kind, reinfection) - D * x + D * (x @ C.T)


def _rhs_uncorrelated(x, p, dist, kind, reinfection):
    _check_state(x)
    means = np.array([weighted_mean(dist.probs, row) for row in x])
    inflow = np.outer(means, dist.degrees / dist.mean_degree)
    return _reaction(x, p, kind, reinfection) - _diffusion_rates(p) * (x - inflow)


def rhs_uncorrelated_freq(state, p: Params, dist: DegreeDistribution, reinfection=True):
    """Standard incidence on an uncorrelated network.

    Diffusion reduces to ``-D_X (rho_{X,k} - (k/<k>) rho_X)`` with the
    network-average density ``rho_X``.
    """
    return _rhs_uncorrelated(as_state_array(state, dist.n), p, dist,
                             IncidenceKind.STANDARD, reinfection)


def rhs_uncorrelated_mass(state, p: Params, dist: DegreeDistribution, reinfection=True):
    """Mass-action incidence ``beta rho_I rho_S`` on an uncorrelated network."""
    return _rhs_uncorrelated(as_state_array(state, dist.n), p, dist,
                             IncidenceKind.MASS_ACTION, reinfection)


def rhs(state, p, dist, kind=IncidenceKind.STANDARD, kernel=None, reinfection=True):
    """Dispatch to the uncorrelated fast path unless a correlated kernel is given."""
    kind = IncidenceKind.parse(kind)
    if kernel is None or kernel.uncorrelated:
        return _rhs_uncorrelated(as_state_array(state, dist.n), p, dist, kind, reinfection)
    return rhs_general(state, p, dist, kernel, kind, reinfection)


def jacobian(state, p: Params, dist: DegreeDistribution, kind=IncidenceKind.STANDARD,
             kernel=None, reinfection=True) -> np.ndarray:
    """Analytic ``4n x 4n`` Jacobian of :func:`rhs` w.r.t. the flattened state."""
    kind = IncidenceKind.parse(kind)
    x = as_state_array(state, dist.n)
    S, E, I, R = x
    n = dist.n
    if kernel is None or kernel.uncorrelated:
        C = uncorrelated_connectivity(dist)
    else:
        C = connectivity_matrix(dist, kernel)
    Id = np.eye(n)
    a = p.alpha * (1 - p.theta)
    J = np.zeros((4 * n, 4 * n))

    def blk(r, c):
        return J[r * n:(r + 1) * n, c * n:(c + 1) * n]

    decay = (p.mu, p.mu + p.eta + a, p.mu + p.d + p.gamma + p.delta, p.mu + p.xi)
    for c, (Dx, rate) in enumerate(zip((p.D_S, p.D_E, p.D_I, p.D_R), decay)):
        blk(c, c)[:] = -(rate + Dx) * Id + Dx * C
    blk(1, 2)[:] += p.gamma * Id
    blk(2, 1)[:] += a * Id
    blk(2, 3)[:] += p.xi * Id
    blk(3, 1)[:] += p.eta * Id
    blk(3, 2)[:] += p.delta * Id

    f = _force(S, E, I, R, p.beta, kind)
    # df[c] = d(force_k)/d(compartment c at class k)
    if kind is IncidenceKind.MASS_ACTION:
        df = np.zeros((4, n))
        df[2] = p.beta
    else:
        N = S + E + I + R
        df = np.zeros((4, n))
        pos = N > 0
        df[:, pos] = -p.beta * I[pos] / N[pos] ** 2
        df[2, pos] = p.beta * (N[pos] - I[pos]) / N[pos] ** 2
    g = S * df  # gradient of incidence f*S
    g[0] += f
    if reinfection:
        h = (1 - p.xi) * R * df
        h[3] += (1 - p.xi) * f
    else:
        h = np.zeros((4, n))
    for c in range(4):
        blk(0, c)[:] += np.diag(-g[c])
        blk(1, c)[:] += np.diag((1 - p.q) * g[c] + h[c])
        blk(2, c)[:] += np.diag(p.q * g[c])
        blk(3, c)[:] += np.diag(-h[c])
    return J


class Aggregates(NamedTuple):
    rho_S: float
    rho_E: float
    rho_I: float
    rho_R: float
    rho: float


def aggregate(state, dist: DegreeDistribution) -> Aggregates:
    """Network averages ``rho_X = sum_k p(k) rho_{X,k}`` and their total."""
    x = as_state_array(state, dist.n)
    parts = [weighted_mean(dist.probs, row) for row in x]
    return Aggregates(*parts, math.fsum(parts))


class InvariantCheck(NamedTuple):
    ok: bool
    min_entry: float
    rho: float
    bound: float
    margin: float  # bound + tolerance - rho; negative when violated


def check_invariant_region(state, p: Params, dist: DegreeDistribution, rtol=1e-6) -> InvariantCheck:
    """Membership in ``{all densities >= 0, aggregated rho <= Lambda/mu}``."""
    x = as_state_array(state, dist.n)
    rho = aggregate(x, dist).rho
    bound = p.Lambda / p.mu
    margin = bound * (1 + rtol) - rho
    min_entry = float(x.min())
    return InvariantCheck(bool(min_entry >= 0 and margin >= 0), min_entry, rho, bound, margin)


def gross_flow(state, p: Params, dist: DegreeDistribution, kind=IncidenceKind.STANDARD,
               kernel=None, reinfection=True) -> np.ndarray:
    """Sum of absolute values of every term in each RHS entry.

    Used as the scale against which equilibrium residuals are judged.
    """
    kind = IncidenceKind.parse(kind)
    x = as_state_array(state, dist.n)
    S, E, I, R = x
    f = _force(S, E, I, R, p.beta, kind)
    inc = f * S
    reinf = (1 - p.xi) * f * R if reinfection else np.zeros_like(R)
    a = p.alpha * (1 - p.theta)
    if kernel is None or kernel.uncorrelated:
        C = uncorrelated_connectivity(dist)
    else:
        C = connectivity_matrix(dist, kernel)
    D = _diffusion_rates(p)
    mig = D * x + D * (x @ C.T)
    react = np.vstack([
        p.Lambda + inc + p.mu * S,
        (1 - p.q) * inc + reinf + p.gamma * I + (p.mu + p.eta + a) * E,
        p.q * inc + a * E + (p.mu + p.d + p.gamma + p.delta) * I + p.xi * R,
        reinf + p.eta * E + p.delta * I + (p.mu + p.xi) * R,
    ])
    return react + mig


def finite_difference_jacobian(fun, x, h=1e-6):
    """Central differences of ``fun`` around the flat vector ``x`` (relative step)."""
    x = np.asarray(x, dtype=float).ravel()
    f0 = np.asarray(fun(x)).ravel()
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        step = h * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        J[:, j] = (np.asarray(fun(xp)).ravel() - np.asarray(fun(xm)).ravel()) / (2 * step)
    return J
