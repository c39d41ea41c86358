import csv
import json
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import random_dist, random_params
from oracles import rhs_loops
from tbmeta.dynamics import aggregate, check_invariant_region
from tbmeta.errors import StepSizeUnderflow, ValidationError
from tbmeta.integrate import (initial_condition, integrate, make_rhs,
                              prevalence_by_degree, steady_state)
from tbmeta.netgen import build_truncated_power_law
from tbmeta.ngm import beta_for_r0, dfe


def test_dfe_is_constant(small_dist, defaults):
    x0 = dfe(defaults, small_dist).values
    for kind in ("standard", "mass"):
        traj = integrate(kind, x0, defaults, small_dist, 100.0)
        assert np.max(np.abs(traj.states - x0) / x0.max()) < 1e-8


def test_make_rhs_matches_loop_oracle(rng):
    p, d = random_params(rng), random_dist(rng, n_max=8)
    x = rng.uniform(0, 3, size=(4, d.n))
    for mass in (False, True):
        f = make_rhs(p, d, "mass" if mass else "standard")
        want = rhs_loops(x, p.to_dict(), d.degrees, d.probs, mass, True)
        assert np.allclose(f(x.ravel()).reshape(4, d.n), want, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("kind", ["standard", "mass"])
def test_total_density_follows_closed_form(small_dist, defaults, kind):
    # with no disease deaths the total obeys rho' = Lambda - mu rho
    p = defaults.replace(d=0.0, beta=beta_for_r0(3.0, defaults, small_dist, kind))
    x0 = initial_condition(p, small_dist, 0.05) * 0.5
    rho0 = aggregate(x0, small_dist).rho
    traj = integrate(kind, x0, p, small_dist, 200.0, sample_dt=10.0)
    star = p.Lambda / p.mu
    want = star + (rho0 - star) * np.exp(-p.mu * traj.times)
    assert np.allclose(traj.aggregates[:, 4], want, rtol=1e-7)


def test_invariant_region_and_no_clips(rng):
    for _ in range(3):
        p, d = random_params(rng), random_dist(rng, n_max=10)
        x0 = initial_condition(p, d, 0.1, rng)
        traj = integrate("mass", x0, p, d, 50.0)
        assert traj.clip_count == 0
        assert np.all(traj.states >= 0)
        for s in traj.states[::10]:
            assert check_invariant_region(s, p, d).ok


@pytest.mark.parametrize("kind", ["standard", "mass"])
def test_no_clips_on_default_regime(kind, defaults):
    d = build_truncated_power_law(3, 3, 100)
    x0 = initial_condition(defaults, d, 0.01, np.random.default_rng(0))
    traj = integrate(kind, x0, defaults, d, 500.0, rtol=1e-8)
    assert traj.clip_count == 0
    assert all(check_invariant_region(s, defaults, d).ok for s in traj.states)


# the trapezoid fallback is A- but not L-stable, so fast modes add global error
# of a few hundred rtol; the stiff case is run at a tighter rtol
@pytest.mark.parametrize("D,rtol,bound", [(1.0, 1e-8, 1e-6), (1e5, 1e-10, 1e-7)])
def test_against_radau(small_dist, defaults, D, rtol, bound):
    p = defaults.with_diffusion(D)
    x0 = initial_condition(p, small_dist, 0.05)
    traj = integrate("standard", x0, p, small_dist, 5.0, sample_dt=1.0, rtol=rtol)
    f = make_rhs(p, small_dist, "standard")
    from tbmeta.dynamics import jacobian
    ref = solve_ivp(lambda t, y: f(y), (0, 5.0), x0.ravel(), method="Radau", rtol=1e-12,
                    atol=1e-10, t_eval=traj.times,
                    jac=lambda t, y: jacobian(y, p, small_dist, "standard"))
    got = traj.states.reshape(len(traj.times), -1)
    assert np.max(np.abs(got - ref.y.T) / np.maximum(np.abs(ref.y.T), 1.0)) < bound
    if D == 1e5:
        assert traj.stats["implicit_steps"] > 0


def test_step_underflow(small_dist, defaults):
    p = defaults.with_diffusion(1e5)
    x0 = initial_condition(p, small_dist, 0.05)
    with pytest.raises(StepSizeUnderflow):
        integrate("standard", x0, p, small_dist, 1.0, h_min_rel=0.5, h0=1e-6)


def test_input_validation(small_dist, defaults):
    x0 = dfe(defaults, small_dist).values
    with pytest.raises(ValidationError):
        integrate("standard", x0, defaults, small_dist, 0.0)
    with pytest.raises(ValidationError):
        integrate("standard", -x0, defaults, small_dist, 1.0)
    with pytest.raises(ValidationError):
        integrate("standard", x0[:, :-1], defaults, small_dist, 1.0)
    with pytest.raises(ValidationError):
        integrate("standard", x0, defaults, small_dist, 1.0, times=[0.5, 0.2])
    with pytest.raises(ValidationError):
        initial_condition(defaults, small_dist, 1.5)


def test_initial_condition_preserves_total(small_dist, defaults):
    x = initial_condition(defaults, small_dist, 0.01, np.random.default_rng(0))
    assert np.allclose(x.sum(axis=0), dfe(defaults, small_dist).values.sum(axis=0))
    assert np.all(x[2] > 0)


# -- decay and persistence regimes ----------------------------------------------------

def test_subcritical_standard_decays_to_zero(defaults):
    # standard incidence at beta = 1e-4 is far below threshold
    d = build_truncated_power_law(3, 3, 30)
    p = defaults.replace(beta=1e-4)
    x0 = initial_condition(p, d, 0.01)
    traj = integrate("standard", x0, p, d, 2000.0, sample_dt=100.0)
    rho_I = traj.aggregates[:, 2]
    assert rho_I[-1] < 1e-6
    assert np.all(np.diff(rho_I[5:]) < 0)


def test_supercritical_mass_persists(defaults):
    d = build_truncated_power_law(3, 3, 30)
    p = defaults.replace(beta=1e-4)
    x0 = initial_condition(p, d, 0.01)
    traj = integrate("mass", x0, p, d, 500.0, sample_dt=50.0)
    assert traj.aggregates[-1, 2] > 1.0
    prev = [v for _, v in prevalence_by_degree(traj, 500.0)]
    assert min(prev) > 0


# -- outputs ----------------------------------------------------------------------------

def test_prevalence_by_degree(small_dist, defaults):
    x0 = initial_condition(defaults, small_dist, 0.02)
    traj = integrate("standard", x0, defaults, small_dist, 10.0)
    rows = prevalence_by_degree(traj, 0.0)
    assert [k for k, _ in rows] == [int(k) for k in small_dist.degrees]
    assert np.allclose([v for _, v in rows], 0.02)
    s = traj.states[-1]
    prev = np.array([v for _, v in prevalence_by_degree(traj, 10.0)])
    assert math.fsum(small_dist.probs * prev * s.sum(axis=0)) == pytest.approx(
        aggregate(s, small_dist).rho_I, rel=1e-12)
    dfe_traj = integrate("standard", dfe(defaults, small_dist).values, defaults, small_dist, 1.0)
    assert all(v == 0 for _, v in prevalence_by_degree(dfe_traj, 1.0))


def test_csv_and_json(tmp_path, small_dist, defaults):
    x0 = initial_condition(defaults, small_dist, 0.02)
    traj = integrate("standard", x0, defaults, small_dist, 2.0, sample_dt=1.0)
    traj.write_csv(tmp_path / "t.csv")
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "k", "S", "E", "I", "R"]
    assert len(rows) == 1 + 3 * small_dist.n
    assert float(rows[-1][4]) == traj.states[-1][2, -1]
    traj.write_json(tmp_path / "t.json")
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["times"] == [0.0, 1.0, 2.0]
    assert np.array_equal(np.array(doc["states"]), traj.states)
    again = integrate("standard", x0, defaults, small_dist, 2.0, sample_dt=1.0)
    assert np.array_equal(again.states, traj.states)


def test_steady_state_endemic(small_dist, defaults):
    p = defaults.replace(beta=beta_for_r0(1.5, defaults, small_dist, "mass"))
    ss = steady_state("mass", initial_condition(p, small_dist, 0.01), p, small_dist,
                      t_settle=1500.0)
    assert ss.settled and ss.residual < 1e-9
    assert np.all(ss.state[2] > 0)


def test_steady_state_subcritical(small_dist, defaults):
    p = defaults.replace(beta=1e-4)
    ss = steady_state("standard", initial_condition(p, small_dist, 0.01), p, small_dist)
    assert ss.settled
    assert np.max(ss.state[2]) < 1e-6
