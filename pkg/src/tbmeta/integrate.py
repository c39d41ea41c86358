"""Time integration of the metapopulation model.

Dormand-Prince 5(4) with embedded error control. Accepted states are
projected onto the nonnegative orthant (each clipped entry is counted).
When the problem turns stiff (detected from the last two stages, or from a
collapsing step size), the integrator switches to an implicit trapezoidal
rule with Newton iterations and step doubling for error control, then
returns to the explicit scheme.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (COMPARTMENTS, IncidenceKind, Params, _diffusion_rates, _reaction,
                       aggregate, gross_flow, jacobian)
from .errors import NumericalError, StepSizeUnderflow, ValidationError
from .netgen import DegreeDistribution, MixingKernel, connectivity_matrix

# Dormand-Prince tableau
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

STIFF_RATIO = 3.25
STIFF_RUN = 15


def make_rhs(p: Params, dist: DegreeDistribution, kind=IncidenceKind.STANDARD,
             kernel: MixingKernel | None = None, reinfection=True):
    """Flat-vector RHS ``f(y)`` without input validation, for integrators.

    Negative entries (possible in intermediate Runge-Kutta stages) are
    evaluated as zero.
    """
    kind = IncidenceKind.parse(kind)
    n = dist.n
    D = _diffusion_rates(p)
    if kernel is None or kernel.uncorrelated:
        w = dist.probs
        kk = dist.degrees / dist.mean_degree

        def f(y):
            x = np.maximum(y.reshape(4, n), 0.0)
            means = np.array([math.fsum(w * row) for row in x])
            return (_reaction(x, p, kind, reinfection) - D * (x - np.outer(means, kk))).ravel()
    else:
        CT = connectivity_matrix(dist, kernel).T

        def f(y):
            x = np.maximum(y.reshape(4, n), 0.0)
            return (_reaction(x, p, kind, reinfection) - D * x + D * (x @ CT)).ravel()
    return f


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (T, 4, n)
    degrees: np.ndarray
    probs: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def aggregates(self) -> np.ndarray:
        """``(T, 5)`` array of ``(rho_S, rho_E, rho_I, rho_R, rho)``."""
        dist = DegreeDistribution(self.degrees, self.probs)
        return np.array([aggregate(s, dist) for s in self.states])

    @property
    def clip_count(self) -> int:
        return self.stats.get("clips", 0)

    def to_rows(self):
        """One row per (time, degree) for CSV export."""
        for t, s in zip(self.times, self.states):
            for i, k in enumerate(self.degrees):
                yield [repr(float(t)), int(k)] + [repr(float(v)) for v in s[:, i]]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "k", *COMPARTMENTS])
            w.writerows(self.to_rows())

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "degrees": [int(k) for k in self.degrees],
                "states": self.states.tolist(), "aggregates": self.aggregates.tolist(),
                "stats": self.stats}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def _dopri_step(f, y, h, k1):
    """One Dormand-Prince step; also returns the stiffness ratio ``h |lambda|``.

    The ratio compares the last two stages (both evaluated near ``t + h``),
    as in Hairer's DOPRI5 stiffness test.
    """
    ks = [k1]
    y6 = y
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_A[i], ks))
        if i == 5:
            y6 = yi
        ks.append(f(yi))
    y_new = y + h * sum(b * k for b, k in zip(_B5, ks) if b)
    err = h * sum(e * k for e, k in zip(_E, ks))
    den = np.dot(y_new - y6, y_new - y6)
    num = np.dot(ks[6] - ks[5], ks[6] - ks[5])
    stiff = h * math.sqrt(num / den) if den > 0 else 0.0
    return y_new, err, stiff


def _newton_trapezoid(f, jac, y, fy, h, tol, max_newton=12):
    """Solve ``z = y + h/2 (f(y) + f(z))``; returns ``None`` on failure."""
    z = y + h * fy
    n = y.size
    for _ in range(max_newton):
        G = z - y - 0.5 * h * (fy + f(z))
        J = np.eye(n) - 0.5 * h * jac(np.maximum(z, 0.0))
        try:
            dz = np.linalg.solve(J, -G)
        except np.linalg.LinAlgError:
            return None
        z = z + dz
        if np.all(np.abs(dz) <= tol * (1e-3 + np.abs(z))):
            return z
    return None


def integrate(kind, state0, p: Params, dist: DegreeDistribution, t_end: float,
              kernel: MixingKernel | None = None, rtol=1e-8, atol=None, sample_dt=None,
              times=None, reinfection=True, h0=None, max_steps=5_000_000,
              h_min_rel=1e-12) -> Trajectory:
    """Integrate from ``state0`` at t = 0 to ``t_end`` (years).

    Samples are recorded at ``times`` if given, else every ``sample_dt``
    (default ``t_end / 100``). ``atol`` defaults to ``1e-16 * Lambda/mu``, so the
    control is effectively relative and small densities do not go negative.
    Raises :class:`StepSizeUnderflow` when even the implicit fallback cannot
    make progress with steps above ``h_min_rel * t_end``.
    """
    kind = IncidenceKind.parse(kind)
    if not t_end > 0:
        raise ValidationError("t_end must be > 0")
    y = np.array(state0, dtype=float).reshape(-1)
    if y.size != 4 * dist.n:
        raise ValidationError(f"state0 must have 4*{dist.n} entries")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValidationError("state0 must be finite and nonnegative")
    if times is None:
        dt = sample_dt or t_end / 100
        nsamp = int(round(t_end / dt))
        times = np.linspace(0.0, nsamp * dt, nsamp + 1)
        if times[-1] < t_end * (1 - 1e-12):
            times = np.append(times, t_end)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValidationError("sample times must be strictly increasing and >= 0")
    if atol is None:
        atol = 1e-16 * max(1.0, p.Lambda / p.mu)

    f = make_rhs(p, dist, kind, kernel, reinfection)

    def jac(z):
        return jacobian(z, p, dist, kind, kernel, reinfection)

    t = 0.0
    out_t, out_y = [], []
    si = 0
    while si < times.size and times[si] <= 0:
        out_t.append(times[si])
        out_y.append(y.copy())
        si += 1

    fy = f(y)
    span = times[-1]
    h = h0 or min(span / 100, 0.1)
    h_min = h_min_rel * max(span, 1.0)
    stats = {"steps": 0, "rejected": 0, "clips": 0, "implicit_steps": 0, "fallbacks": 0}
    implicit = False
    h_stable = 0.0  # explicit stability limit estimated when stiffness was detected
    stiff_run = calm = 0

    while si < times.size:
        if stats["steps"] + stats["rejected"] > max_steps:
            raise NumericalError(f"max_steps exceeded at t={t:.6g}")
        target = times[si]
        h_try = min(h, target - t)
        hit = h_try >= target - t

        if implicit:
            full = _newton_trapezoid(f, jac, y, fy, h_try, rtol)
            half = _newton_trapezoid(f, jac, y, fy, 0.5 * h_try, rtol)
            two = None
            if half is not None:
                two = _newton_trapezoid(f, jac, half, f(half), 0.5 * h_try, rtol)
            if full is None or two is None:
                errn = np.inf
            else:
                errn = np.max(np.abs(two - full) / 3 / (atol + rtol * np.abs(two)))
            if errn <= 1.0:
                y_new = two
                stats["implicit_steps"] += 1
                fac = 2.0 if errn == 0 else min(2.0, 0.9 * errn ** (-1 / 3))
                # back to the explicit scheme once it could take the same step
                if h_try * fac < 2 * h_stable:
                    implicit = False
            else:
                h = 0.5 * h_try
                stats["rejected"] += 1
                if h < h_min:
                    raise StepSizeUnderflow(t, h)
                continue
        else:
            y_new, err, stiff = _dopri_step(f, y, h_try, fy)
            errn = np.max(np.abs(err) / (atol + rtol * np.maximum(np.abs(y), np.abs(y_new))))
            if not np.isfinite(errn) or errn > 1.0:
                fac = 0.2 if not np.isfinite(errn) else max(0.2, 0.9 * errn ** (-0.2))
                h = h_try * fac
                stats["rejected"] += 1
                if h < h_min:
                    stats["fallbacks"] += 1
                    implicit, h_stable = True, 0.0
                    h = max(h_min * 1e3, h_try)
                continue
            fac = 5.0 if errn == 0 else min(5.0, 0.9 * errn ** (-0.2))
            # h |lambda| keeps reaching the stability boundary: the step size is
            # limited by stability, not accuracy (six calm steps reset the count)
            if stiff > STIFF_RATIO:
                stiff_run, calm = stiff_run + 1, 0
            else:
                calm += 1
                if calm >= 6:
                    stiff_run = 0
            if stiff_run >= STIFF_RUN:
                stats["fallbacks"] += 1
                implicit, h_stable = True, h_try * STIFF_RATIO / stiff
                stiff_run = 0

        neg = y_new < 0
        if np.any(neg):
            stats["clips"] += int(np.count_nonzero(neg))
            y_new = np.maximum(y_new, 0.0)
        t = target if hit else t + h_try
        y = y_new
        fy = f(y)
        stats["steps"] += 1
        h = h_try * fac if not hit else max(h, h_try * fac)
        if hit:
            out_t.append(t)
            out_y.append(y.copy())
            si += 1

    states = np.array(out_y).reshape(len(out_y), 4, dist.n)
    return Trajectory(np.array(out_t), states, np.asarray(dist.degrees), np.asarray(dist.probs), stats)


def prevalence_by_degree(traj: Trajectory, at: float):
    """``(k, rho_I,k / rho_k)`` at the sample nearest ``at``."""
    if traj.times.size == 0:
        raise ValidationError("empty trajectory")
    i = int(np.argmin(np.abs(traj.times - at)))
    s = traj.states[i]
    N = s.sum(axis=0)
    prev = np.divide(s[2], N, out=np.zeros_like(N), where=N > 0)
    return list(zip((int(k) for k in traj.degrees), prev.tolist()))


@dataclass
class SteadyState:
    state: np.ndarray  # (4, n)
    residual: float  # max |f| / gross flow
    settled: bool
    t_integrated: float
    newton_iterations: int


def steady_state(kind, state0, p: Params, dist: DegreeDistribution, kernel=None,
                 t_settle=2000.0, threshold=1e-9, reinfection=True, rtol=1e-8,
                 max_newton=50) -> SteadyState:
    """Integrate for ``t_settle`` years, then polish the end state with Newton.

    The result counts as settled when the relative RHS residual (each entry
    divided by its gross flow) is below ``threshold`` and the polished state
    stayed nonnegative and within 1e-2 relative of the integrated end state.
    """
    kind = IncidenceKind.parse(kind)
    traj = integrate(kind, state0, p, dist, t_settle, kernel=kernel, rtol=rtol,
                     times=[t_settle], reinfection=reinfection)
    y_end = traj.states[-1].ravel()
    f = make_rhs(p, dist, kind, kernel, reinfection)
    y = y_end.copy()
    it = 0
    for it in range(1, max_newton + 1):
        J = jacobian(y, p, dist, kind, kernel, reinfection)
        try:
            dy = np.linalg.solve(J, -f(y))
        except np.linalg.LinAlgError:
            break
        y = y + dy
        if np.all(np.abs(dy) <= 1e-14 * (1 + np.abs(y))):
            break
    if np.any(y < -1e-9 * np.max(np.abs(y))) or np.max(np.abs(y - y_end)) > 1e-2 * np.max(np.abs(y_end)):
        y = y_end  # Newton wandered off; keep the integrated state
    y = np.maximum(y, 0.0)
    res = float(np.max(np.abs(f(y)) / np.maximum(gross_flow(y, p, dist, kind, kernel, reinfection).ravel(), 1e-300)))
    return SteadyState(y.reshape(4, dist.n), res, bool(res < threshold), t_settle, it)


def initial_condition(p: Params, dist: DegreeDistribution, fraction=0.01, rng=None,
                      kernel: MixingKernel | None = None) -> np.ndarray:
    """Disease-free state with a share of each class moved from S to I.

    The moved share is ``fraction`` in every class, or ``fraction`` times a
    uniform draw from [0.5, 1.5] per class when ``rng`` is given. The total
    density is unchanged, so the start stays in the invariant region.
    """
    from .ngm import dfe

    if not 0 <= fraction <= 1:
        raise ValidationError("fraction must lie in [0, 1]")
    x = dfe(p, dist, kernel).values.copy()
    share = np.full(dist.n, fraction)
    if rng is not None:
        share = np.minimum(1.0, share * rng.uniform(0.5, 1.5, size=dist.n))
    moved = share * x[0]
    x[0] -= moved
    x[2] += moved
    return x
