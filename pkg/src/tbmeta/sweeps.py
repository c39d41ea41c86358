"""Parameter sweeps: R0 phase grids and steady-state prevalence versus migration."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import _JSON_KEYS, IncidenceKind, Params
from .errors import NumericalError, TBMetaError, ValidationError
from .integrate import initial_condition, steady_state
from .netgen import DegreeDistribution, build_truncated_power_law
from .ngm import r0_closed_form_freq, r0_mass_structured, r0_numeric

CROSS_CHECK_FRACTION = 0.05
CROSS_CHECK_RTOL = 1e-6
AXIS_NAMES = tuple(_JSON_KEYS) + ("k_max",)


@dataclass(frozen=True)
class Axis:
    name: str
    min: float
    max: float
    steps: int
    scale: str = "linear"

    def __post_init__(self):
        problems = []
        if self.name not in AXIS_NAMES:
            problems.append(f"axis {self.name!r}: not a parameter name or k_max")
        if not isinstance(self.steps, int) or self.steps < 2:
            problems.append(f"axis {self.name!r}: steps must be an integer >= 2")
        if self.scale not in ("linear", "log"):
            problems.append(f"axis {self.name!r}: scale must be linear or log")
        if not (math.isfinite(self.min) and math.isfinite(self.max)) or self.max < self.min:
            problems.append(f"axis {self.name!r}: need finite min <= max")
        elif self.scale == "log" and self.min <= 0:
            problems.append(f"axis {self.name!r}: log scale needs min > 0")
        if problems:
            raise ValidationError("invalid axis", problems)

    def values(self) -> np.ndarray:
        if self.scale == "log":
            v = np.geomspace(self.min, self.max, self.steps)
        else:
            v = np.linspace(self.min, self.max, self.steps)
        if self.name == "k_max":
            v = np.round(v)
        return v

    @classmethod
    def parse(cls, text: str) -> "Axis":
        """``name:min:max:steps[:linear|log]``."""
        parts = text.split(":")
        if len(parts) not in (4, 5):
            raise ValidationError(f"axis spec {text!r} must be name:min:max:steps[:scale]")
        try:
            lo, hi, steps = float(parts[1]), float(parts[2]), int(parts[3])
        except ValueError:
            raise ValidationError(f"axis spec {text!r} has non-numeric fields") from None
        return cls(parts[0], lo, hi, steps, parts[4] if len(parts) == 5 else "linear")


@dataclass
class SweepSpec:
    axes: list
    kind: str = "standard"
    network: dict = field(default_factory=lambda: {"exponent": 3.0, "k_min": 3, "k_max": 100})
    output: str | None = None

    def __post_init__(self):
        IncidenceKind.parse(self.kind)
        if not 1 <= len(self.axes) <= 2:
            raise ValidationError("a sweep needs one or two axes")
        if len({a.name for a in self.axes}) != len(self.axes):
            raise ValidationError("axis names must differ")


@dataclass
class PhaseGrid:
    axes: list
    values: np.ndarray  # R0 per cell, NaN when invalid
    invalid: dict  # cell index -> error message
    cross_checks: list  # dicts for the sampled cells
    contour: list  # pairs of neighbouring cells on opposite sides of R0 = 1

    def rows(self):
        names = [a.name for a in self.axes]
        grids = [a.values() for a in self.axes]
        checked = {tuple(c["cell"]): c for c in self.cross_checks}
        for idx in np.ndindex(self.values.shape):
            coords = [float(g[i]) for g, i in zip(grids, idx)]
            chk = checked.get(idx)
            yield dict(zip(names, coords), R0=float(self.values[idx]),
                       valid=idx not in self.invalid,
                       numeric=chk["numeric"] if chk else None)

    def write_csv(self, path_or_file):
        names = [a.name for a in self.axes]
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*names, "R0", "valid", "numeric_R0"])
            for row in self.rows():
                num = row["numeric"]
                w.writerow([repr(row[n]) for n in names]
                           + [repr(row["R0"]), int(row["valid"]), "" if num is None else repr(num)])
        finally:
            if own:
                fh.close()

    def to_dict(self) -> dict:
        return {"axes": [dataclasses.asdict(a) for a in self.axes],
                "R0": np.where(np.isnan(self.values), None, self.values).tolist(),
                "invalid": {",".join(map(str, k)): v for k, v in sorted(self.invalid.items())},
                "cross_checks": self.cross_checks,
                "contour": [[list(a), list(b)] for a, b in self.contour]}


def _cell_inputs(spec: SweepSpec, base: Params, coords: dict):
    net = dict(spec.network)
    changes = {}
    for name, v in coords.items():
        if name == "k_max":
            net["k_max"] = int(v)
        else:
            changes[_JSON_KEYS[name]] = float(v)
    p = base.replace(**changes) if changes else base
    dist = build_truncated_power_law(float(net["exponent"]), int(net["k_min"]), int(net["k_max"]))
    return p, dist


def _cell_r0(kind, p, dist):
    if kind is IncidenceKind.STANDARD:
        return r0_closed_form_freq(p, source="exact").value
    return r0_mass_structured(p, dist).value


def _contour(values):
    s = np.sign(values - 1.0)
    pairs = []
    for idx in np.ndindex(values.shape):
        for ax in range(values.ndim):
            nb = list(idx)
            nb[ax] += 1
            nb = tuple(nb)
            if nb[ax] >= values.shape[ax]:
                continue
            a, b = s[idx], s[nb]
            if np.isnan(a) or np.isnan(b):
                continue
            if a != b:
                pairs.append((idx, nb))
    return pairs


def sweep_r0_phase(spec: SweepSpec, base: Params | None = None, seed=0) -> PhaseGrid:
    """R0 over the grid spanned by ``spec.axes``.

    Standard incidence uses the closed form (exact coefficient pair), mass
    action the structured Perron root. A seeded 5% sample of cells is checked
    against the dense next-generation matrix; a gap above 1e-6 relative raises
    :class:`NumericalError`. Cells whose evaluation fails are marked invalid
    and the sweep continues.
    """
    base = base or Params()
    kind = IncidenceKind.parse(spec.kind)
    grids = [a.values() for a in spec.axes]
    shape = tuple(g.size for g in grids)
    values = np.full(shape, np.nan)
    invalid = {}
    cells = list(np.ndindex(shape))
    for idx in cells:
        coords = {a.name: g[i] for a, g, i in zip(spec.axes, grids, idx)}
        try:
            p, dist = _cell_inputs(spec, base, coords)
            values[idx] = _cell_r0(kind, p, dist)
        except TBMetaError as exc:
            invalid[idx] = str(exc)
    rng = np.random.default_rng(seed)
    valid = [c for c in cells if c not in invalid]
    nsample = min(len(valid), max(1, math.ceil(CROSS_CHECK_FRACTION * len(cells))))
    picks = sorted(rng.choice(len(valid), size=nsample, replace=False).tolist()) if valid else []
    checks = []
    for j in picks:
        idx = valid[j]
        coords = {a.name: g[i] for a, g, i in zip(spec.axes, grids, idx)}
        p, dist = _cell_inputs(spec, base, coords)
        num = r0_numeric(p, dist, kind).value
        gap = abs(num - values[idx]) / max(abs(num), 1e-300)
        if num == values[idx] == 0:
            gap = 0.0
        checks.append({"cell": list(idx), "value": float(values[idx]), "numeric": num, "rel_gap": float(gap)})
        if gap > CROSS_CHECK_RTOL:
            raise NumericalError(f"cell {idx}: grid R0 {values[idx]!r} vs numeric {num!r}")
    return PhaseGrid(list(spec.axes), values, invalid, checks, _contour(values))


@dataclass
class MigrationTable:
    D_values: list
    degrees: list
    prevalence: np.ndarray  # (len(D_values), n)
    settled: list
    residuals: list

    def write_csv(self, path_or_file):
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["D", "k", "prevalence", "settled"])
            for i, D in enumerate(self.D_values):
                for j, k in enumerate(self.degrees):
                    w.writerow([repr(float(D)), k, repr(float(self.prevalence[i, j])), int(self.settled[i])])
        finally:
            if own:
                fh.close()

    def to_dict(self) -> dict:
        return {"D": [float(D) for D in self.D_values], "degrees": self.degrees,
                "prevalence": self.prevalence.tolist(), "settled": self.settled,
                "residuals": self.residuals}


def _migration_cell(D, base, dist, kind, fraction, seed, t_settle, threshold, reinfection):
    p = base.with_diffusion(D)
    rng = np.random.default_rng(seed) if seed is not None else None
    x0 = initial_condition(p, dist, fraction, rng)
    ss = steady_state(kind, x0, p, dist, t_settle=t_settle, threshold=threshold,
                      reinfection=reinfection)
    N = ss.state.sum(axis=0)
    return np.divide(ss.state[2], N, out=np.zeros_like(N), where=N > 0), ss.settled, ss.residual


def sweep_migration(D_values, base: Params, dist: DegreeDistribution, kind="mass",
                    fraction=0.01, seed=None, t_settle=2000.0, threshold=1e-9,
                    reinfection=True, workers=None) -> MigrationTable:
    """Steady-state prevalence ``rho_I,k / rho_k`` for each common diffusion rate D.

    Every D is applied to all four compartments. Each run starts from the
    disease-free state with ``fraction`` of every class moved to I (randomised
    per class when ``seed`` is given, with the same draw for every D). Runs whose
    relative RHS residual stays above ``threshold`` are flagged in ``settled``.
    With ``workers > 1`` the runs go to a process pool; results are identical
    to the serial order.
    """
    D_values = [float(D) for D in D_values]
    if not D_values:
        raise ValidationError("need at least one D value")
    bad = [D for D in D_values if not D > 0]
    if bad:
        raise ValidationError("diffusion rates must be > 0", [f"D={D!r}" for D in bad])
    if workers is not None and workers < 1:
        raise ValidationError("workers must be >= 1")
    args = (base, dist, kind, fraction, seed, t_settle, threshold, reinfection)
    if workers and workers > 1 and len(D_values) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_migration_cell, D_values, *([a] * len(D_values) for a in args)))
    else:
        cells = [_migration_cell(D, *args) for D in D_values]
    prev = [c[0] for c in cells]
    settled = [bool(c[1]) for c in cells]
    residuals = [float(c[2]) for c in cells]
    return MigrationTable(D_values, [int(k) for k in dist.degrees], np.array(prev), settled, residuals)


def write_json(path_or_file, doc):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        with open(path_or_file, "w") as fh:
            fh.write(text)
    else:
        path_or_file.write(text)
