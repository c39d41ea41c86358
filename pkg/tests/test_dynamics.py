import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import dist_st, params_st, random_dist, random_params
from oracles import rhs_loops
from tbmeta.dynamics import (IncidenceKind, MetapopState, Params, aggregate,
                             check_invariant_region, finite_difference_jacobian, gross_flow,
                             jacobian, rhs, rhs_general, rhs_uncorrelated_freq,
                             rhs_uncorrelated_mass)
from tbmeta.errors import ValidationError
from tbmeta.netgen import random_correlated_network, uncorrelated_kernel
from tbmeta.ngm import dfe


def random_state(rng, n, scale=10.0):
    return rng.uniform(0, scale, size=(4, n))


# -- Params ---------------------------------------------------------------------

def test_default_parameters():
    p = Params()
    assert (p.Lambda, p.beta, p.mu, p.q) == (1001.0, 0.0017, 0.017, 0.015)
    assert (p.alpha, p.theta, p.delta, p.d, p.xi) == (0.0024, 0.001, 0.7372, 0.0012, 0.0986)
    assert p.gamma == pytest.approx(0.1843)
    assert p.eta == 0.2
    assert p.A_E == pytest.approx(p.mu + p.eta + p.alpha * (1 - p.theta) + p.D_E)
    assert p.A_I == pytest.approx(p.mu + p.d + p.gamma + p.delta + p.D_I)
    assert p.A_R == pytest.approx(p.mu + p.xi + p.D_R)


def test_params_json_round_trip():
    p = Params(beta=0.3, D_I=2.5)
    doc = json.loads(json.dumps(p.to_dict()))
    assert set(doc) == {"lambda", "beta", "mu", "q", "alpha", "theta", "delta", "eta", "gamma",
                        "d", "xi", "D_S", "D_E", "D_I", "D_R"}
    assert Params.from_dict(doc) == p


def test_params_lists_every_bad_field():
    with pytest.raises(ValidationError) as exc:
        Params.from_dict({"beta": -1, "q": 2, "D_S": 0, "mu": 0, "zeta": 1, "eta": "x"})
    text = " ".join(exc.value.problems)
    for name in ("zeta", "eta"):
        assert name in text
    with pytest.raises(ValidationError) as exc:
        Params.from_dict({"beta": -1, "q": 2, "D_S": 0, "mu": 0})
    assert len(exc.value.problems) == 4


def test_incidence_kind_parse():
    assert IncidenceKind.parse("freq") is IncidenceKind.STANDARD
    assert IncidenceKind.parse("mass_action") is IncidenceKind.MASS_ACTION
    with pytest.raises(ValidationError):
        IncidenceKind.parse("quadratic")


def test_state_container():
    s = MetapopState.from_compartments([1, 2], [3, 4], [5, 6], [7, 8])
    assert np.array_equal(s.total, [16, 20])
    assert s.n == 2
    assert np.array_equal(s.flat(), np.arange(1, 9)[[0, 1, 2, 3, 4, 5, 6, 7]])
    with pytest.raises(ValidationError):
        MetapopState(np.zeros((3, 2)))


# -- RHS --------------------------------------------------------------------------

def test_rhs_rejects_negative_state(small_dist, defaults):
    x = np.ones((4, small_dist.n))
    x[2, 3] = -1e-3
    with pytest.raises(ValidationError) as exc:
        rhs(x, defaults, small_dist)
    assert exc.value.problems == ["I[3]"]


@pytest.mark.parametrize("kind", ["standard", "mass"])
def test_dfe_is_equilibrium(small_dist, defaults, kind):
    x0 = dfe(defaults, small_dist)
    f = rhs(x0, defaults, small_dist, kind)
    assert np.max(np.abs(f)) <= 1e-9 * np.max(x0.values)
    g = rhs_general(x0, defaults, small_dist, uncorrelated_kernel(small_dist), kind)
    assert np.max(np.abs(g)) <= 1e-9 * np.max(x0.values)


def test_beta_zero_decouples_incidence(small_dist, rng):
    p = random_params(rng, beta=0.0)
    x = random_state(rng, small_dist.n)
    f_std = rhs_uncorrelated_freq(x, p, small_dist)
    f_mass = rhs_uncorrelated_mass(x, p, small_dist)
    assert np.array_equal(f_std, f_mass)
    # the I equation is linear in E, I, R only
    a = p.alpha * (1 - p.theta)
    mig = -p.D_I * (x[2] - small_dist.degrees / small_dist.mean_degree
                    * math.fsum(small_dist.probs * x[2]))
    expected = a * x[1] - (p.mu + p.d + p.gamma + p.delta) * x[2] + p.xi * x[3] + mig
    assert np.allclose(f_std[2], expected, rtol=1e-12, atol=1e-12)


def test_uniform_state_diffusion_by_hand(small_dist):
    p = Params(beta=0.0, D_S=1.7, D_E=0.3, D_I=2.0, D_R=0.9, Lambda=0.0)
    c = np.array([2.0, 3.0, 5.0, 7.0])
    x = np.repeat(c[:, None], small_dist.n, axis=1)
    reaction = rhs(x, p.with_diffusion(1e-300), small_dist)
    f = rhs(x, p, small_dist)
    D = np.array([p.D_S, p.D_E, p.D_I, p.D_R])
    k_ratio = small_dist.degrees / small_dist.mean_degree
    expected = reaction - (D * c)[:, None] * (1 - k_ratio)[None, :]
    assert np.allclose(f, expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("mass", [False, True])
def test_rhs_matches_loop_oracle(rng, mass):
    for _ in range(20):
        d = random_dist(rng)
        p = random_params(rng)
        x = random_state(rng, d.n)
        got = rhs(x, p, d, "mass" if mass else "standard")
        want = rhs_loops(x, p.to_dict(), d.degrees.tolist(), d.probs.tolist(), mass=mass)
        assert np.allclose(got, want, rtol=1e-11, atol=1e-11)
        got = rhs(x, p, d, "mass" if mass else "standard", reinfection=False)
        want = rhs_loops(x, p.to_dict(), d.degrees.tolist(), d.probs.tolist(), mass, False)
        assert np.allclose(got, want, rtol=1e-11, atol=1e-11)


def test_empty_class_has_zero_force(small_dist, defaults):
    x = np.ones((4, small_dist.n))
    x[:, 0] = 0.0
    f = rhs_uncorrelated_freq(x, defaults, small_dist)
    assert np.all(np.isfinite(f))
    # only recruitment and immigration act on the empty class
    assert f[0, 0] > 0


@given(params_st(), dist_st(), st.integers(0, 2**32 - 1), st.sampled_from(["standard", "mass"]))
def test_general_equals_uncorrelated(p, d, seed, kind):
    x = random_state(np.random.default_rng(seed), d.n)
    a = rhs_general(x, p, d, uncorrelated_kernel(d), kind)
    b = rhs(x, p, d, kind)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12 * np.max(np.abs(b)))


@given(params_st(), dist_st(), st.integers(0, 2**32 - 1), st.sampled_from(["standard", "mass"]))
def test_total_density_conservation(p, d, seed, kind):
    x = random_state(np.random.default_rng(seed), d.n)
    f = rhs(x, p, d, kind)
    agg = aggregate(x, d)
    dtotal = math.fsum(d.probs * f.sum(axis=0))
    expected = p.Lambda - p.mu * agg.rho - p.d * agg.rho_I
    assert dtotal == pytest.approx(expected, abs=1e-10 * max(1.0, np.max(np.abs(f))))


@given(params_st(), dist_st(), st.integers(0, 2**32 - 1))
def test_aggregated_equations_close(p, d, seed):
    """Averaged standard-incidence RHS equals the network-level system."""
    x = random_state(np.random.default_rng(seed), d.n)
    f = rhs_uncorrelated_freq(x, p, d)
    agg = [math.fsum(d.probs * row) for row in f]
    S, E, I, R = x
    N = x.sum(axis=0)
    force = p.beta * I / N
    a = p.alpha * (1 - p.theta)
    w = d.probs
    inc = math.fsum(w * force * S)
    re = (1 - p.xi) * math.fsum(w * force * R)
    mean = [math.fsum(w * row) for row in x]
    expected = [
        p.Lambda - inc - p.mu * mean[0],
        (1 - p.q) * inc + re + p.gamma * mean[2] - (p.mu + p.eta + a) * mean[1],
        p.q * inc + a * mean[1] - (p.mu + p.d + p.gamma + p.delta) * mean[2] + p.xi * mean[3],
        -re + p.eta * mean[1] + p.delta * mean[2] - (p.mu + p.xi) * mean[3],
    ]
    assert np.allclose(agg, expected, rtol=1e-10, atol=1e-10)


@given(params_st(), dist_st(), st.integers(0, 2**32 - 1), st.sampled_from(["standard", "mass"]))
def test_boundary_derivatives_nonnegative(p, d, seed, kind):
    rng = np.random.default_rng(seed)
    x = random_state(rng, d.n)
    mask = rng.uniform(size=x.shape) < 0.3
    x[mask] = 0.0
    f = rhs(x, p, d, kind)
    assert np.all(f[mask] >= -1e-12)


def test_correlated_general_rhs_conserves(rng):
    d, K = random_correlated_network(np.arange(2, 10), rng)
    p = random_params(rng)
    x = random_state(rng, d.n)
    f = rhs(x, p, d, "standard", kernel=K)
    agg = aggregate(x, d)
    assert math.fsum(d.probs * f.sum(axis=0)) == pytest.approx(
        p.Lambda - p.mu * agg.rho - p.d * agg.rho_I, abs=1e-10)


# -- aggregation and invariant region ----------------------------------------------

def test_aggregate_uniform_and_dfe(small_dist, defaults):
    x = np.full((4, small_dist.n), 3.5)
    agg = aggregate(x, small_dist)
    assert agg.rho_S == pytest.approx(3.5, rel=1e-15)
    assert agg.rho == pytest.approx(14.0, rel=1e-15)
    agg = aggregate(dfe(defaults, small_dist), small_dist)
    assert agg.rho == pytest.approx(defaults.Lambda / defaults.mu, rel=1e-9)
    assert agg.rho_I == 0.0


def test_aggregate_matches_reverse_order_sum(rng):
    d = random_dist(rng)
    x = random_state(rng, d.n)
    agg = aggregate(x, d)
    rev = [sum(d.probs[i] * x[c, i] for i in reversed(range(d.n))) for c in range(4)]
    assert np.allclose(agg[:4], rev, rtol=1e-13)


def test_invariant_region(small_dist, defaults):
    x0 = dfe(defaults, small_dist)
    assert check_invariant_region(x0, defaults, small_dist).ok
    chk = check_invariant_region(2 * x0.values, defaults, small_dist)
    assert not chk.ok
    assert chk.margin == pytest.approx(-defaults.Lambda / defaults.mu * (1 - 1e-6), rel=1e-9)
    neg = x0.values.copy()
    neg[1, 0] = -1
    assert not check_invariant_region(neg, defaults, small_dist).ok


# -- Jacobian -------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["standard", "mass"])
@pytest.mark.parametrize("reinfection", [True, False])
def test_jacobian_matches_finite_differences(rng, kind, reinfection):
    for _ in range(10):
        d = random_dist(rng, n_max=8)
        p = random_params(rng)
        x = random_state(rng, d.n) + 0.5
        J = jacobian(x, p, d, kind, reinfection=reinfection)
        fd = finite_difference_jacobian(
            lambda y: rhs(y, p, d, kind, reinfection=reinfection), x.ravel())
        assert np.allclose(J, fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(J)))


def test_jacobian_correlated_kernel(rng):
    d, K = random_correlated_network(np.arange(2, 7), rng)
    p = random_params(rng)
    x = random_state(rng, d.n) + 0.5
    J = jacobian(x, p, d, "standard", kernel=K)
    fd = finite_difference_jacobian(lambda y: rhs(y, p, d, "standard", kernel=K), x.ravel())
    assert np.allclose(J, fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(J)))


def test_gross_flow_bounds_rhs(rng):
    d = random_dist(rng)
    p = random_params(rng)
    x = random_state(rng, d.n)
    assert np.all(np.abs(rhs(x, p, d, "mass")) <= gross_flow(x, p, d, "mass") * (1 + 1e-12))
