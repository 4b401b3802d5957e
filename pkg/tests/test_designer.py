import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segsearch.designer import (
    certify,
    conditional_means,
    design,
    feasibility_value,
    find_cutoff,
    g_u,
    solve_u_bar,
    theta_lower,
)
from segsearch.equilibrium import solve_equilibrium
from segsearch.errors import CertificateError, DomainError, UnsupportedError, ValidationError
from segsearch.market import (
    UNIFORM_CONTINUUM,
    Prior,
    SurplusSplit,
    make_prior_uniform,
    perfect_segmentation,
    posterior_mean_distribution,
    verify_consistency,
    verify_mpc,
)
from segsearch.meeting import Curvature, MeetingFunction, OddsCurvature
from segsearch.oracle import find_u_bar

from . import oracles
from .conftest import random_segmentation

CES11 = MeetingFunction.ces(1, 1, 1)
URN = MeetingFunction.urnball(1, 1)
CONVEX = [URN, MeetingFunction.urnball(0.5, 0.7), MeetingFunction.ces(1, 1, 2.0), MeetingFunction.ces(0.7, 0.9, 4.0)]
ROOT = 2.0 - math.sqrt(3.0)


@pytest.fixture(scope="module")
def urn101():
    return design(make_prior_uniform(101), URN, 1.0, 1.0)


# -- conditional means -----------------------------------------------------------


@pytest.mark.parametrize("prior, theta, expected", [
    (UNIFORM_CONTINUUM, 0.5, (0.25, 0.75)),
    (UNIFORM_CONTINUUM, 0.0, (0.0, 0.5)),
    (make_prior_uniform(4), 0.375, (0.25, 0.625)),
    (make_prior_uniform(4), 0.875, (0.5, 0.875)),
    (make_prior_uniform(4), 0.125, (0.125, 0.5)),
])
def test_conditional_means_examples(prior, theta, expected):
    assert conditional_means(prior, theta) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("theta", [-0.01, 1.01, 0.1])
def test_conditional_means_out_of_range(theta):
    prior = make_prior_uniform(4) if theta == 0.1 else UNIFORM_CONTINUUM
    with pytest.raises(DomainError):
        conditional_means(prior, theta)


@given(st.integers(1, 30), st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_conditional_means_bracket_theta(n, s, q):
    rng = np.random.default_rng(s)
    p = Prior(np.sort(rng.uniform(0, 1, n)), rng.dirichlet(np.ones(n)))
    theta = float(p.grid[min(int(q * n), n - 1)])
    lo, hi = conditional_means(p, theta)
    assert lo <= theta + 1e-15 and hi >= theta - 1e-15
    assert lo <= p.mean + 1e-15 <= hi + 2e-15


# -- G_u and the cutoff ------------------------------------------------------------


@pytest.mark.parametrize("u", [0.1, 0.3, 0.6])
def test_g_u_affine_closed_form(u):
    for theta in np.linspace(theta_lower(CES11, UNIFORM_CONTINUUM, 1.0, u), 1.0, 25):
        assert g_u(CES11, UNIFORM_CONTINUUM, 1.0, u, theta) == pytest.approx(theta / u - 1.0, abs=1e-8)
    assert g_u(CES11, UNIFORM_CONTINUUM, 1.0, u, u) == pytest.approx(0.0, abs=1e-8)
    assert g_u(CES11, UNIFORM_CONTINUUM, 1.0, u, 1.0) > 0


@pytest.mark.parametrize("mf", CONVEX + [CES11], ids=str)
def test_g_u_increasing(mf):
    u = 0.2 * mf.beta
    lo = theta_lower(mf, UNIFORM_CONTINUUM, 1.0, u)
    vals = [g_u(mf, UNIFORM_CONTINUUM, 1.0, u, th) for th in np.linspace(lo, 1.0, 100)]
    assert np.all(np.diff(vals) > 0)


def test_g_u_domain():
    lo = theta_lower(CES11, UNIFORM_CONTINUUM, 1.0, 0.8)
    assert lo == pytest.approx(0.6)
    with pytest.raises(DomainError):
        g_u(CES11, UNIFORM_CONTINUUM, 1.0, 0.8, lo - 0.05)
    for u in (0.0, 1.0, -0.2):
        with pytest.raises(DomainError):
            g_u(CES11, UNIFORM_CONTINUUM, 1.0, u, 0.9)


def test_find_cutoff_affine_continuum():
    c = find_cutoff(CES11, UNIFORM_CONTINUUM, 1.0, 0.3)
    assert c.theta_c == pytest.approx(0.3, abs=1e-12)
    lo, hi = conditional_means(UNIFORM_CONTINUUM, c.theta_c)
    assert (lo, hi) == pytest.approx((0.15, 0.65), abs=1e-12)
    assert lo <= 0.3 < hi


@given(st.sampled_from(CONVEX + [CES11]), st.floats(0.02, 0.98), st.sampled_from([0, 3, 20, 101]), st.floats(0.3, 1.0))
@settings(max_examples=80)
def test_cutoff_sandwich_and_root(mf, r, n, ell):
    prior = UNIFORM_CONTINUUM if n == 0 else make_prior_uniform(n)
    top = mf.beta * ell * (1.0 if n == 0 else float(prior.grid[-1]))
    u = r * top
    c = find_cutoff(mf, prior, ell, u)
    thr = u / (mf.beta * ell)
    assert c.x_high > thr
    if c.pooled:
        assert g_u(mf, prior, ell, u, c.theta_c, x_high=c.x_high) >= -1e-9
        return
    assert c.x_low <= thr
    val = g_u(mf, prior, ell, u, c.theta_c, x_high=c.x_high)
    lo = theta_lower(mf, prior, ell, u)
    assert abs(val) <= 1e-9 or (c.theta_c == lo and val >= 0)


# -- outer fixed point -------------------------------------------------------------------


def test_affine_continuum_u_bar():
    u, c = solve_u_bar(CES11, UNIFORM_CONTINUUM, 1.0, 1.0)
    assert u == pytest.approx(ROOT, abs=1e-10)
    assert c.theta_c == pytest.approx(ROOT, abs=1e-9)
    assert c.x_high == pytest.approx(0.6339746, abs=1e-7)
    tau_high = float(CES11.g(c.x_high / u))
    assert tau_high == pytest.approx((1 - u) / (2 * u), abs=1e-8)
    assert tau_high == pytest.approx(1.3660254, abs=1e-7)


@pytest.mark.parametrize("u", np.linspace(0.05, 0.95, 7))
def test_vhat_continuum_closed_form(u):
    assert feasibility_value(CES11, UNIFORM_CONTINUUM, 1.0, 1.0, u) == pytest.approx(
        oracles.ces11_vhat_continuum(u), rel=1e-9)


@pytest.mark.parametrize("mf", CONVEX + [CES11], ids=str)
@pytest.mark.parametrize("prior", [UNIFORM_CONTINUUM, make_prior_uniform(7), make_prior_uniform(60)], ids=["cont", "n7", "n60"])
def test_vhat_decreasing(mf, prior):
    top = mf.beta * (1.0 if prior is UNIFORM_CONTINUUM else float(prior.grid[-1]))
    vals = [feasibility_value(mf, prior, 1.0, 1.0, u) for u in np.linspace(0.01, 0.99, 32) * top]
    assert np.all(np.diff(vals) <= 1e-12)


# -- design ----------------------------------------------------------------------------------


def test_concave_returns_perfect():
    p = make_prior_uniform(101)
    res = design(p, MeetingFunction.ces(1, 1, 0.5), 1.0, 1.0)
    assert res.curvature.kind is Curvature.CONCAVE
    assert res.segmentation.size == p.n
    assert np.allclose(res.segmentation.posteriors, np.eye(p.n))
    assert res.cutoff is None and res.certificate is None
    assert res.u_bar == res.equilibrium.u_star


def test_affine_design_n401():
    p = make_prior_uniform(401)
    res = design(p, CES11, 1.0, 1.0)
    assert res.curvature.kind is Curvature.AFFINE
    assert abs(res.u_bar - ROOT) <= 2e-3
    assert abs(res.alternative_surplus - res.surplus) <= 1e-6
    assert res.certificate.ok
    u_bin, _ = solve_u_bar(CES11, p, 1.0, 1.0)
    assert abs(u_bin - res.u_bar) <= 1e-8


def test_convex_design_binary(urn101):
    res = urn101
    p = make_prior_uniform(101)
    assert res.curvature.kind is Curvature.CONVEX
    assert res.segmentation.size == 2
    tau = res.equilibrium.tightness
    assert tau[0] == 0.0 and tau[1] > 0
    assert res.certificate.ok
    assert verify_consistency(p, res.segmentation)[0]
    pts, mass = posterior_mean_distribution(res.segmentation, p)
    assert verify_mpc(pts, mass, p)
    assert abs(res.equilibrium.u_star - res.u_bar) <= 1e-8


def test_convex_design_matches_lp(urn101):
    p = make_prior_uniform(101)
    u_lp = find_u_bar(URN, p, 1.0)
    assert abs(urn101.surplus - u_lp) <= 1e-4


@pytest.mark.parametrize("mf", CONVEX + [CES11, MeetingFunction.ces(1, 1, 0.5)], ids=str)
@pytest.mark.parametrize("ell", [1.0, 0.6])
def test_surplus_times_ell_is_u_bar(mf, ell):
    p = make_prior_uniform(31)
    res = design(p, mf, 1.3, ell)
    assert abs(res.surplus * ell - res.u_bar) <= 1e-8
    assert abs(res.equilibrium.buyer_payoff - res.u_bar) <= 1e-8


@pytest.mark.parametrize("mf", CONVEX, ids=str)
@pytest.mark.parametrize("k", [0.4, 1.0, 3.0])
def test_binary_structure(mf, k):
    p = make_prior_uniform(25)
    res = design(p, mf, k, 0.8)
    pts, mass = posterior_mean_distribution(res.segmentation, p)
    assert verify_mpc(pts, mass, p)
    tau = res.equilibrium.tightness
    if res.segmentation.size == 2:
        assert tau[0] == 0.0 and tau[1] > 0
    else:
        assert res.cutoff.pooled and tau[0] > 0


@pytest.mark.parametrize("mf", [URN, CES11, MeetingFunction.ces(1, 1, 0.5), MeetingFunction.ces(1, 1, 3.0)], ids=str)
def test_no_segmentation_beats_u_bar(mf, rng):
    p = make_prior_uniform(15)
    res = design(p, mf, 1.0, 1.0)
    split = SurplusSplit.constant(1.0)
    for _ in range(30):
        seg = random_segmentation(rng, p)
        assert solve_equilibrium(p, seg, mf, 1.0, split).u_star <= res.u_bar + 1e-8
    for seg in (perfect_segmentation(p), res.segmentation):
        assert solve_equilibrium(p, seg, mf, 1.0, split).u_star <= res.u_bar + 1e-8


def test_design_errors():
    p = make_prior_uniform(5)
    with pytest.raises(ValidationError):
        design(p, URN, 1.0, 0.0)
    with pytest.raises(ValidationError):
        design(p, URN, 1.0, 1.2)
    with pytest.raises(ValidationError):
        design(p, URN, 0.0, 1.0)
    neither = OddsCurvature(Curvature.NEITHER, 1.0, -1.0, 1.0)
    with pytest.raises(UnsupportedError):
        design(p, URN, 1.0, 1.0, allow_oracle=False, curvature=neither)
    res = design(p, URN, 1.0, 1.0, curvature=neither)
    assert res.method == "lp"


# -- certificate ----------------------------------------------------------------------------


def test_certificate_affine():
    p = make_prior_uniform(401)
    u, c = solve_u_bar(CES11, p, 1.0, 1.0)
    cert = certify(CES11, p, 1.0, u, c)
    assert cert.a_envelope and cert.b_support and cert.c_mean and cert.ok
    assert cert.slope == pytest.approx(1.0 / u)


def test_certificate_urnball(urn101):
    p = make_prior_uniform(101)
    cert = certify(URN, p, 1.0, urn101.u_bar, urn101.cutoff)
    assert cert.ok
    probe = np.linspace(0, 1, 1001)
    assert np.all(np.diff(cert.price(probe)) >= -1e-15)


def test_certificate_rejects_wrong_cutoff(urn101):
    p = make_prior_uniform(101)
    wrong = urn101.cutoff.theta_c + 0.1
    cert = certify(URN, p, 1.0, urn101.u_bar, wrong, raise_on_failure=False)
    assert not cert.c_mean
    with pytest.raises(CertificateError) as info:
        certify(URN, p, 1.0, urn101.u_bar, wrong)
    assert info.value.certificate is not None
    assert info.value.violation == pytest.approx(cert.worst_violation)
