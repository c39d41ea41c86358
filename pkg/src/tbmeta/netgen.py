"""Degree distributions, mixing kernels and the connectivity matrix.

A network of patches is described only through its degree distribution
``p(k)`` and the conditional probabilities ``P(k'|k)`` that a link leaving a
patch of degree ``k`` ends at a patch of degree ``k'``. Only degrees present
in the network are stored.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NonNormalizableError, ValidationError

NORM_TOL = 1e-12
BALANCE_TOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DegreeDistribution:
    """Probabilities ``probs[i] = p(degrees[i])`` over distinct degrees."""

    degrees: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        degrees = np.asarray(self.degrees)
        probs = np.asarray(self.probs, dtype=float)
        problems = []
        if degrees.ndim != 1 or probs.shape != degrees.shape:
            raise ValidationError("degrees and probs must be 1-D of equal length")
        if degrees.size < 2:
            problems.append("at least two distinct degrees are required")
        if not np.all(np.isfinite(probs)):
            problems.append("probabilities must be finite")
        if np.any(degrees != np.round(degrees)) or np.any(degrees < 1):
            problems.append("degrees must be positive integers")
        if np.any(np.diff(degrees) <= 0):
            problems.append("degrees must be strictly increasing")
        if np.any(probs <= 0):
            problems.append("all probabilities must be > 0 (omit absent degrees)")
        total = math.fsum(probs)
        if abs(total - 1.0) > NORM_TOL:
            problems.append(f"probabilities sum to {total!r}, not 1")
        if problems:
            raise ValidationError("invalid degree distribution", problems)
        object.__setattr__(self, "degrees", _frozen(degrees))
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def n(self) -> int:
        return self.degrees.size

    @property
    def mean_degree(self) -> float:
        return math.fsum(self.degrees * self.probs)

    @property
    def k_min(self) -> int:
        return int(self.degrees[0])

    @property
    def k_max(self) -> int:
        return int(self.degrees[-1])

    @classmethod
    def from_weights(cls, degrees, weights):
        """Normalize nonnegative ``weights`` into a distribution."""
        w = np.asarray(weights, dtype=float)
        return cls(np.asarray(degrees), w / math.fsum(w))


@dataclass(frozen=True, eq=False)
class MixingKernel:
    """Row-stochastic matrix ``matrix[i, j] = P(k_j | k_i)``."""

    matrix: np.ndarray
    uncorrelated: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("kernel must be a square matrix")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValidationError("kernel entries must be finite and nonnegative")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def build_truncated_power_law(exponent: float, k_min: int, k_max: int) -> DegreeDistribution:
    """``p(k) ∝ k**-exponent`` on the integers ``k_min..k_max``.

    >>> d = build_truncated_power_law(3, 3, 4)
    >>> round(float(d.probs[0]), 4)
    0.7033
    """
    if not exponent > 1:
        raise NonNormalizableError(
            f"exponent must be > 1 for a normalizable power law, got {exponent}"
        )
    if int(k_min) != k_min or k_min < 1:
        raise ValidationError(f"k_min must be a positive integer, got {k_min}")
    if int(k_max) != k_max or k_max <= k_min:
        raise ValidationError(f"k_max must be an integer > k_min, got {k_max}")
    ks = np.arange(int(k_min), int(k_max) + 1)
    return DegreeDistribution.from_weights(ks, ks.astype(float) ** (-exponent))


def calibrate_power_law(target_mean, exponent, k_min, k_max_limit=10_000):
    """Search for a truncated power law whose mean degree approaches ``target_mean``.

    ``k_max`` is searched first (the mean grows monotonically with it). When the
    target is out of reach even at ``k_max_limit``, the exponent is lowered at
    that cutoff until the mean matches. Probabilities are never rescaled.

    Returns ``(distribution, info)``; ``info`` records which knob was used.
    """
    if target_mean <= k_min:
        raise ValidationError(f"target mean {target_mean} must exceed k_min={k_min}")

    def mean_for(expo, kmax):
        return build_truncated_power_law(expo, k_min, kmax).mean_degree

    lo, hi = k_min + 1, int(k_max_limit)
    if mean_for(exponent, hi) >= target_mean:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if mean_for(exponent, mid) >= target_mean:
                hi = mid
            else:
                lo = mid
        best = min((lo, hi), key=lambda km: abs(mean_for(exponent, km) - target_mean))
        dist = build_truncated_power_law(exponent, k_min, best)
        return dist, {"method": "k_max", "exponent": exponent, "k_max": best,
                      "mean_degree": dist.mean_degree}

    floor = 1.0 + 1e-9
    if mean_for(floor, hi) < target_mean:
        raise ValidationError(
            f"target mean {target_mean} unreachable with k_min={k_min}, k_max<={hi}"
        )
    expo = brentq(lambda e: mean_for(e, hi) - target_mean, floor, exponent, xtol=1e-14)
    dist = build_truncated_power_law(expo, k_min, hi)
    return dist, {"method": "exponent", "exponent": expo, "k_max": hi,
                  "mean_degree": dist.mean_degree}


def uncorrelated_kernel(dist: DegreeDistribution) -> MixingKernel:
    """Closure ``P(k'|k) = k' p(k') / <k>``; every row is identical."""
    row = dist.degrees * dist.probs / dist.mean_degree
    return MixingKernel(np.tile(row, (dist.n, 1)), uncorrelated=True)


def connectivity_matrix(dist: DegreeDistribution, kernel: MixingKernel) -> np.ndarray:
    """``C[k, k'] = (k / k') P(k'|k)``, the per-link inflow structure."""
    if kernel.n != dist.n:
        raise ValidationError(
            f"kernel is {kernel.n}x{kernel.n} but distribution has {dist.n} degrees"
        )
    k = dist.degrees
    if kernel.uncorrelated:
        # rank-one form k p(k') / <k>, avoids the k/k' round trip
        return np.outer(k, dist.probs) / dist.mean_degree
    return (k[:, None] / k[None, :]) * kernel.matrix


def uncorrelated_connectivity(dist: DegreeDistribution) -> np.ndarray:
    return np.outer(dist.degrees, dist.probs) / dist.mean_degree


def validate_consistency(dist: DegreeDistribution, kernel: MixingKernel) -> list[dict]:
    """List every row-sum and detailed-balance violation (empty when valid).

    Balance is ``k P(k'|k) p(k) == k' P(k|k') p(k')`` within 1e-10; each
    unordered pair is reported once as ``(i, j)`` with ``i < j``.
    """
    if kernel.n != dist.n:
        raise ValidationError("kernel and distribution dimensions differ")
    out = []
    P = kernel.matrix
    for i in range(dist.n):
        s = math.fsum(P[i])
        if abs(s - 1.0) > NORM_TOL:
            out.append({"kind": "row_sum", "row": i, "degree": int(dist.degrees[i]),
                        "value": s, "deviation": s - 1.0})
    flow = (dist.degrees * dist.probs)[:, None] * P
    diff = flow - flow.T
    for i, j in zip(*np.nonzero(np.triu(np.abs(diff) > BALANCE_TOL, k=1))):
        out.append({"kind": "balance", "pair": (int(i), int(j)),
                    "degrees": (int(dist.degrees[i]), int(dist.degrees[j])),
                    "residual": float(diff[i, j])})
    return out


def random_correlated_network(degrees, rng, concentration=1.0):
    """Random ``(dist, kernel)`` pair satisfying detailed balance.

    Draws a symmetric positive joint edge-end matrix ``E``; its row sums fix
    ``k p(k) / <k>`` and hence ``p(k)``, and ``P(k'|k) = E[k, k'] / sum_k' E[k, k']``.
    """
    degrees = np.asarray(degrees)
    n = degrees.size
    G = rng.gamma(concentration, size=(n, n))
    E = G + G.T
    E /= E.sum()
    q = E.sum(axis=1)
    dist = DegreeDistribution.from_weights(degrees, q / degrees)
    kernel = MixingKernel(E / q[:, None])
    return dist, kernel


# -- serialization ---------------------------------------------------------

def network_to_dict(dist: DegreeDistribution, kernel: MixingKernel | None = None) -> dict:
    doc = {"degrees": [int(k) for k in dist.degrees], "probs": dist.probs.tolist()}
    if kernel is None or kernel.uncorrelated:
        doc["uncorrelated"] = True
    else:
        doc["kernel"] = kernel.matrix.tolist()
    return doc


def network_from_dict(doc: dict):
    """Inverse of :func:`network_to_dict`.

    Also accepts ``{"power_law": {"exponent":..,"k_min":..,"k_max":..}}``.
    """
    if not isinstance(doc, dict):
        raise ValidationError("network document must be a JSON object")
    if "power_law" in doc:
        pl = doc["power_law"]
        missing = [f for f in ("exponent", "k_min", "k_max") if f not in pl]
        if missing:
            raise ValidationError("power_law is missing fields", missing)
        dist = build_truncated_power_law(pl["exponent"], pl["k_min"], pl["k_max"])
        return dist, uncorrelated_kernel(dist)
    problems = [f"missing field '{f}'" for f in ("degrees", "probs") if f not in doc]
    if "kernel" in doc and doc.get("uncorrelated"):
        problems.append("give either 'kernel' or 'uncorrelated', not both")
    if problems:
        raise ValidationError("invalid network document", problems)
    dist = DegreeDistribution(np.asarray(doc["degrees"]), np.asarray(doc["probs"], dtype=float))
    if "kernel" in doc:
        kernel = MixingKernel(np.asarray(doc["kernel"], dtype=float))
        violations = validate_consistency(dist, kernel)
        if violations:
            raise ValidationError("kernel inconsistent with distribution",
                                  [json.dumps(v) for v in violations])
    else:
        kernel = uncorrelated_kernel(dist)
    return dist, kernel


def load_network(path):
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def save_network(path, dist, kernel=None):
    with open(path, "w") as fh:
        json.dump(network_to_dict(dist, kernel), fh, indent=2)


def write_connectivity_csv(path, dist, C):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"k'={int(k)}" for k in dist.degrees])
        for k, row in zip(dist.degrees, C):
            w.writerow([int(k)] + [repr(float(x)) for x in row])
