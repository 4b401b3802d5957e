"""Constrained-efficient segmentations under a constant buyer share ``ell``.

With a constant share the designer maximises the buyers' reservation value.
The curvature of the odds map ``t/m(t)`` decides the shape of the answer:

* concave odds: full separation is optimal;
* convex odds: a two-submarket split around a cutoff type, with the low
  submarket left empty of buyers;
* affine odds: both are optimal and tie.

For the convex case, fix a candidate reservation value ``u`` and write
``phi(x) = g(ell x / u)`` where that is positive (0 otherwise) for the
tightness a submarket with mean ``x`` attracts.  The high side of the split
is the set of top types whose conditional mean ``X`` makes the tangent of
``phi`` at ``X`` vanish at the boundary type.  The reservation value ``u_bar``
is then the root of the buyer-mass constraint ``k * q * g(ell X / u) = 1``,
where ``q`` is the mass of the high side.

On a grid the boundary may fall inside an atom; that atom is then split
between the two submarkets.  When the tangent already vanishes strictly
between two grid points, no atom is split and the cutoff type is off-grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy.optimize import bisect, brentq

from .equilibrium import EquilibriumOutcome, solve_equilibrium
from .errors import CertificateError, DomainError, SolverError, UnsupportedError, ValidationError
from .market import (
    ContinuousUniform,
    Prior,
    Segmentation,
    SurplusSplit,
    binary_segmentation,
    perfect_segmentation,
    pooled_segmentation,
)
from .meeting import Curvature, MeetingFunction, OddsCurvature, classify_odds

FEASIBILITY_TOL = 1e-10
ENVELOPE_TOL = 1e-9
SUPPORT_TOL = 1e-9
MEAN_TOL = 1e-10
PROBE_POINTS = 1000

AnyPrior = Union[Prior, ContinuousUniform]


@dataclass(frozen=True)
class Cutoff:
    """Binary split at reservation value ``u``.

    ``cutoff_index`` (1-based) and ``split`` (share of that atom sent low) feed
    ``binary_segmentation``; both are None for the continuum and when
    everything is pooled high (``x_low`` is None then).
    """

    theta_c: float
    x_low: float | None
    x_high: float
    high_mass: float
    cutoff_index: int | None = None
    split: float | None = None

    @property
    def pooled(self) -> bool:
        return self.x_low is None


@dataclass(frozen=True)
class PriceCertificate:
    theta_c: float
    slope: float
    intercept: float  # value of the tangent at x = 0
    a_envelope: bool
    b_support: bool
    c_mean: bool
    convex: bool
    envelope_violation: float
    support_violation: float
    mean_violation: float

    @property
    def ok(self) -> bool:
        return self.a_envelope and self.b_support and self.c_mean and self.convex

    @property
    def worst_violation(self) -> float:
        return max(self.envelope_violation, self.support_violation, self.mean_violation)

    def price(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < self.theta_c, 0.0, self.intercept + self.slope * x)

    def to_dict(self) -> dict:
        return {
            "theta_c": self.theta_c,
            "slope": self.slope,
            "intercept": self.intercept,
            "checks": {"a_envelope": self.a_envelope, "b_support": self.b_support,
                       "c_mean": self.c_mean, "convex": self.convex},
            "violations": {"envelope": self.envelope_violation, "support": self.support_violation,
                           "mean": self.mean_violation},
        }


@dataclass(frozen=True, eq=False)
class DesignOutcome:
    curvature: OddsCurvature
    segmentation: Segmentation
    u_bar: float
    equilibrium: EquilibriumOutcome
    cutoff: Cutoff | None = None
    certificate: PriceCertificate | None = None
    alternative_surplus: float | None = None
    method: str = "structural"

    @property
    def surplus(self) -> float:
        return self.equilibrium.total_surplus

    @property
    def cutoff_type(self) -> float | None:
        return None if self.cutoff is None else self.cutoff.theta_c


# -- conditional means and the tangent test ----------------------------------------


def conditional_means(prior: AnyPrior, theta: float) -> tuple[float, float]:
    """Means of the types at or below and at or above ``theta``."""
    theta = float(theta)
    if isinstance(prior, ContinuousUniform):
        if not 0.0 <= theta <= 1.0:
            raise DomainError("theta must lie in [0, 1]", theta=theta)
        return theta / 2.0, (1.0 + theta) / 2.0
    g, w = prior.grid, prior.weights
    if not g[0] <= theta <= g[-1]:
        raise DomainError("theta outside the prior grid range", theta=theta, lo=float(g[0]), hi=float(g[-1]))
    lo, hi = g <= theta, g >= theta
    return (math.fsum(w[lo] * g[lo]) / math.fsum(w[lo]),
            math.fsum(w[hi] * g[hi]) / math.fsum(w[hi]))


def _check_u(mf: MeetingFunction, prior: AnyPrior, ell: float, u: float) -> None:
    if not 0.0 < ell <= 1.0:
        raise ValidationError("ell must lie in (0, 1]", ell=ell)
    top = mf.beta * ell * (1.0 if isinstance(prior, ContinuousUniform) else float(prior.grid[-1]))
    if not 0.0 < u < top:
        raise DomainError("u must lie in (0, beta * ell * max type)", u=u, top=top)


def _tangent(mf: MeetingFunction, ell: float, u: float, x_bar: float):
    """Value and slope of the tangent to ``x -> g(ell x / u)`` at ``x_bar``; None if undefined."""
    y = ell * x_bar / u
    if not mf.beta * y >= 1.0:
        return None
    slope = mf.g_prime(y) * ell / u
    if not math.isfinite(slope):
        return None
    return mf.g(y), slope


def _tangent_at(mf, ell, u, x_bar, x) -> float:
    tg = _tangent(mf, ell, u, x_bar)
    if tg is None:
        return -math.inf
    val, slope = tg
    return val + slope * (x - x_bar)


def theta_lower(mf: MeetingFunction, prior: AnyPrior, ell: float, u: float) -> float:
    """Smallest type whose upper conditional mean reaches ``u / (beta ell)``."""
    _check_u(mf, prior, ell, u)
    thr = u / (mf.beta * ell)
    if isinstance(prior, ContinuousUniform):
        return max(0.0, 2.0 * thr - 1.0)
    t = _tails(prior)
    ok = [j for j in range(prior.n) if t.S[j] / t.Q[j] >= thr]
    return float(prior.grid[ok[0]])


def g_u(mf: MeetingFunction, prior: AnyPrior, ell: float, u: float, theta: float,
        x_high: float | None = None) -> float:
    """Tangent at the upper conditional mean, evaluated at ``theta``.

    ``x_high`` overrides the upper conditional mean (used when an atom at
    ``theta`` is split and only part of it sits on the high side).
    """
    _check_u(mf, prior, ell, u)
    if x_high is None:
        x_high = conditional_means(prior, theta)[1]
    if mf.beta * ell * x_high < u * (1.0 - 1e-15):
        raise DomainError("theta is below the lowest admissible cutoff", theta=theta)
    tg = _tangent(mf, ell, u, x_high)
    if tg is None:  # vertical tangent at the activity threshold
        return -math.inf if theta < x_high else 0.0
    return tg[0] + tg[1] * (theta - x_high)


# -- the cutoff at a given u -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Tails:
    Q: np.ndarray  # Q[j] = mass of types j.. ; Q[n] = 0
    S: np.ndarray  # S[j] = sum of w * theta over types j..


def _tails(prior: Prior) -> _Tails:
    n = prior.n
    wt = prior.weights * prior.grid
    Q = np.array([math.fsum(prior.weights[j:]) for j in range(n)] + [0.0])
    S = np.array([math.fsum(wt[j:]) for j in range(n)] + [0.0])
    return _Tails(Q, S)


def _grid_cutoff(mf: MeetingFunction, prior: Prior, ell: float, u: float, tails: _Tails) -> Cutoff:
    g, w = prior.grid, prior.weights
    Q, S = tails.Q, tails.S
    n = prior.n
    for j in range(n - 1, -1, -1):
        if j == n - 1 or _tangent_at(mf, ell, u, S[j] / Q[j], g[j]) >= 0.0:
            continue  # the top type alone always clears its own tangent
        # the cutoff lies in (Q[j+1], Q[j]); j < n-1 because u < beta ell max(theta)
        x_e = S[j + 1] / Q[j + 1]
        if _tangent_at(mf, ell, u, x_e, g[j]) <= 0.0:
            tg = _tangent(mf, ell, u, x_e)
            root = x_e if tg is None or tg[1] == 0.0 else x_e - tg[0] / tg[1]
            theta_c = min(max(root, g[j]), g[j + 1])
            low_w = w[: j + 1]
            return Cutoff(
                theta_c=float(theta_c),
                x_low=math.fsum(low_w * g[: j + 1]) / math.fsum(low_w),
                x_high=float(x_e),
                high_mass=float(Q[j + 1]),
                cutoff_index=j + 1,
                split=1.0,
            )

        def gq(q):
            return _tangent_at(mf, ell, u, (S[j + 1] + (q - Q[j + 1]) * g[j]) / q, g[j])

        q = bisect(gq, Q[j + 1] + 1e-300, Q[j], xtol=1e-300, rtol=8.9e-16, maxiter=500)
        s_high = min(max((q - Q[j + 1]) / w[j], 0.0), 1.0)
        x_high = (S[j + 1] + s_high * w[j] * g[j]) / (Q[j + 1] + s_high * w[j])
        low_num = math.fsum(np.append(w[:j] * g[:j], (1.0 - s_high) * w[j] * g[j]))
        low_den = math.fsum(np.append(w[:j], (1.0 - s_high) * w[j]))
        return Cutoff(
            theta_c=float(g[j]),
            x_low=low_num / low_den,
            x_high=float(x_high),
            high_mass=float(Q[j + 1] + s_high * w[j]),
            cutoff_index=j + 1,
            split=1.0 - s_high,
        )
    return Cutoff(theta_c=float(g[0]), x_low=None, x_high=prior.mean, high_mass=1.0)


def _continuum_cutoff(mf: MeetingFunction, prior: ContinuousUniform, ell: float, u: float) -> Cutoff:
    lo = theta_lower(mf, prior, ell, u)

    def G(theta):
        return _tangent_at(mf, ell, u, (1.0 + theta) / 2.0, theta)

    if G(lo) >= 0.0:
        theta_c = lo
    else:
        theta_c = bisect(G, lo, 1.0, xtol=1e-15, rtol=8.9e-16, maxiter=500)
    x_low = theta_c / 2.0 if theta_c > 0 else None
    return Cutoff(theta_c=float(theta_c), x_low=x_low, x_high=(1.0 + theta_c) / 2.0, high_mass=1.0 - theta_c)


def find_cutoff(mf: MeetingFunction, prior: AnyPrior, ell: float, u: float) -> Cutoff:
    _check_u(mf, prior, ell, u)
    if isinstance(prior, ContinuousUniform):
        return _continuum_cutoff(mf, prior, ell, u)
    return _grid_cutoff(mf, prior, ell, u, _tails(prior))


# -- outer fixed point -----------------------------------------------------------------


def feasibility_value(mf: MeetingFunction, prior: AnyPrior, ell: float, k: float, u: float,
                      cutoff: Cutoff | None = None) -> float:
    """Buyer mass the binary split at ``u`` absorbs: ``k * q * g(ell X / u)``."""
    c = find_cutoff(mf, prior, ell, u) if cutoff is None else cutoff
    y = ell * c.x_high / u
    return k * c.high_mass * (mf.g(y) if mf.beta * y > 1.0 else 0.0)


def solve_u_bar(mf: MeetingFunction, prior: AnyPrior, ell: float, k: float) -> tuple[float, Cutoff]:
    """Root of ``feasibility_value = 1``; returns ``(u_bar, cutoff at u_bar)``."""
    if not k > 0:
        raise ValidationError("seller mass k must be positive", k=k)
    if not 0.0 < ell <= 1.0:
        raise ValidationError("ell must lie in (0, 1]", ell=ell)
    top = mf.beta * ell * (1.0 if isinstance(prior, ContinuousUniform) else float(prior.grid[-1]))
    if top <= 0:
        raise SolverError("no type generates surplus")
    tails = None if isinstance(prior, ContinuousUniform) else _tails(prior)

    def cut(u):
        if tails is None:
            return _continuum_cutoff(mf, prior, ell, u)
        return _grid_cutoff(mf, prior, ell, u, tails)

    def gap(u):
        return feasibility_value(mf, prior, ell, k, u, cut(u)) - 1.0

    hi = float(np.nextafter(top, 0.0))
    lo = 1e-9 * top
    while gap(lo) <= 0:
        lo *= 1e-3
        if lo < 1e-290:
            raise SolverError("could not bracket u_bar")
    if gap(hi) >= 0:
        raise SolverError("feasibility value does not fall below 1 near the top of the bracket")
    u = brentq(gap, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500)
    resid = gap(u)
    if abs(resid) > FEASIBILITY_TOL:
        raise SolverError("outer feasibility residual above tolerance", residual=resid, u=u)
    return float(u), cut(u)


def cutoff_segmentation(prior: Prior, cutoff: Cutoff) -> Segmentation:
    if cutoff.pooled:
        return pooled_segmentation(prior)
    return binary_segmentation(prior, cutoff.cutoff_index, cutoff.split)


# -- certificate ----------------------------------------------------------------------


def certify(mf: MeetingFunction, prior: Prior, ell: float, u: float,
            cutoff: Cutoff | float | None = None, raise_on_failure: bool = True) -> PriceCertificate:
    """Check that the binary split at ``u`` maximises ``E_H[phi]`` over contractions of the prior.

    The price function is 0 below the cutoff type and the tangent line above
    it.  A float ``cutoff`` replaces only the cutoff type of the split
    computed at ``u``.
    """
    _check_u(mf, prior, ell, u)
    base = find_cutoff(mf, prior, ell, u)
    if cutoff is None:
        cutoff = base
    elif not isinstance(cutoff, Cutoff):
        cutoff = replace(base, theta_c=float(cutoff))
    tg = _tangent(mf, ell, u, cutoff.x_high)
    if tg is None:
        raise DomainError("upper conditional mean is below the activity threshold", u=u)
    val, slope = tg
    intercept = val - slope * cutoff.x_high
    theta_c = cutoff.theta_c

    def price(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < theta_c, 0.0, intercept + slope * x)

    def phi(x):
        y = ell * np.asarray(x, dtype=float) / u
        act = mf.beta * y > 1.0
        out = np.zeros_like(y)
        if act.any():
            out[act] = mf.g(y[act])
        return out

    probe = np.union1d(np.linspace(0.0, 1.0, PROBE_POINTS), prior.grid)
    env = float(np.max(phi(probe) - price(probe)))

    support = [cutoff.x_high] + ([] if cutoff.x_low is None else [cutoff.x_low])
    sup = float(max(abs(float(price(x)) - float(phi(x))) for x in support))

    p_grid = price(prior.grid)
    e_f = math.fsum(prior.weights * p_grid)
    e_h = cutoff.high_mass * float(price(cutoff.x_high))
    if cutoff.x_low is not None:
        e_h += (1.0 - cutoff.high_mass) * float(price(cutoff.x_low))
    mean_gap = abs(e_h - e_f)

    cert = PriceCertificate(
        theta_c=float(theta_c),
        slope=float(slope),
        intercept=float(intercept),
        a_envelope=env <= ENVELOPE_TOL,
        b_support=sup <= SUPPORT_TOL,
        c_mean=mean_gap <= MEAN_TOL,
        convex=bool(slope >= 0.0 and intercept + slope * theta_c >= -ENVELOPE_TOL),
        envelope_violation=max(env, 0.0),
        support_violation=sup,
        mean_violation=mean_gap,
    )
    if raise_on_failure and not cert.ok:
        raise CertificateError("price-function certificate failed", certificate=cert,
                               violation=cert.worst_violation)
    return cert


# -- dispatch --------------------------------------------------------------------------


def design(prior: Prior, mf: MeetingFunction, k: float, ell: float, method: str = "auto",
           mesh: int | None = None, allow_oracle: bool = True,
           curvature: OddsCurvature | None = None) -> DesignOutcome:
    """Constrained-efficient segmentation for a constant buyer share ``ell``.

    ``method="lp"`` bypasses the curvature dispatch and uses the LP oracle.
    """
    if not 0.0 < ell <= 1.0:
        raise ValidationError("ell must lie in (0, 1]", ell=ell)
    if not k > 0:
        raise ValidationError("seller mass k must be positive", k=k)
    if method not in ("auto", "lp"):
        raise ValidationError(f"unknown design method {method!r}")
    split = SurplusSplit.constant(ell)
    curv = classify_odds(mf) if curvature is None else curvature

    if method == "lp" or curv.kind is Curvature.NEITHER:
        if not allow_oracle:
            raise UnsupportedError("odds map is neither convex nor concave and the LP oracle is disabled")
        from .oracle import lp_design

        seg, u_bar = lp_design(prior, mf, k, ell, mesh=mesh)
        eq = solve_equilibrium(prior, seg, mf, k, split)
        return DesignOutcome(curv, seg, u_bar, eq, method="lp")

    if curv.kind is Curvature.CONCAVE:
        seg = perfect_segmentation(prior)
        eq = solve_equilibrium(prior, seg, mf, k, split)
        return DesignOutcome(curv, seg, eq.u_star, eq)

    u_bar, cut = solve_u_bar(mf, prior, ell, k)
    bin_seg = cutoff_segmentation(prior, cut)
    bin_eq = solve_equilibrium(prior, bin_seg, mf, k, split)
    cert = None if cut.pooled else certify(mf, prior, ell, u_bar, cut)
    if curv.kind is Curvature.AFFINE:
        seg = perfect_segmentation(prior)
        eq = solve_equilibrium(prior, seg, mf, k, split)
        return DesignOutcome(curv, seg, eq.u_star, eq, cutoff=cut, certificate=cert,
                             alternative_surplus=bin_eq.total_surplus)
    return DesignOutcome(curv, bin_seg, u_bar, bin_eq, cutoff=cut, certificate=cert)
