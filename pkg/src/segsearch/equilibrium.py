"""Search equilibrium of a fixed segmentation.

Buyers anticipate a reservation value ``u``.  A submarket is entered only if
a buyer's first-entry payoff ``beta * E_s[lambda theta]`` beats ``u``; in an
entered submarket tightness adjusts until the expected payoff
``m(t)/t * E_s[lambda theta]`` equals ``u``, i.e. ``t = g(E_s[lambda theta] / u)``.
Rational expectations close the model: ``u`` must equal the average buyer
payoff ``Phi(u)``.  ``Phi`` is continuous and decreasing, so the fixed point is
a scalar root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, SolverError, ValidationError
from .market import Prior, Segmentation, SurplusSplit, feasibility_residual
from .meeting import MeetingFunction
from .planner import surplus

FIXED_POINT_TOL = 1e-11
FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EquilibriumOutcome:
    u_star: float
    tightness: np.ndarray
    buyer_payoff: float
    total_surplus: float
    active: np.ndarray
    means: np.ndarray
    means_lambda_theta: np.ndarray


def best_response_tightness(mf: MeetingFunction, means_lambda_theta, u: float) -> np.ndarray:
    """Tightness that leaves buyers indifferent at reservation value ``u``; 0 where nobody enters."""
    if not u > 0:
        raise DomainError("reservation value must be positive", u=u)
    e = np.asarray(means_lambda_theta, dtype=float)
    active = mf.beta * e > u
    out = np.zeros_like(e)
    if active.any():
        out[active] = mf.g(np.maximum(e[active] / u, 1.0 / mf.beta))
    return out


def buyer_payoff_of(seg: Segmentation, tightness, split: SurplusSplit, prior: Prior,
                    mf: MeetingFunction, k: float) -> float:
    """Ex-ante buyer payoff ``k * sum_s w_s m(tau_s) E_s[lambda theta]``."""
    tightness = np.asarray(tightness, dtype=float)
    if tightness.shape != seg.weights.shape:
        raise ValidationError("tightness is not aligned with the segmentation")
    e = seg.expect(split.on(prior) * prior.grid, prior)
    return k * math.fsum(seg.weights * mf.m(tightness) * e)


def fixed_point_map(mf: MeetingFunction, seg: Segmentation, means_lambda_theta, k: float):
    """Return ``Phi`` as a callable of ``u``."""
    e = np.asarray(means_lambda_theta, dtype=float)
    w = seg.weights

    def phi(u: float) -> float:
        tau = best_response_tightness(mf, e, u)
        return k * math.fsum(w * mf.m(tau) * e)

    return phi


def _refine_marginal(mf: MeetingFunction, e, w, k: float, u: float):
    """Re-solve with the tightness of the marginal submarket as the unknown.

    Near ``beta * E[lambda theta] = u`` the best response ``g(E / u)`` can be too
    steep for any double-precision ``u`` to meet the tolerance.  With that
    submarket's tightness ``t`` as the unknown, ``u = E / odds(t)`` is smooth.
    ``u`` is kept strictly below the activity threshold so the submarket stays active.
    """
    fallback = (u, best_response_tightness(mf, e, u))
    ratio = mf.beta * e / u
    cand = np.where(ratio >= 1.0 - 1e-6, ratio, np.inf)
    j = int(np.argmin(cand))
    if not np.isfinite(cand[j]):
        return fallback
    ej = float(e[j])
    pivot = np.abs(e - ej) <= 1e-15 * ej
    cap = float(np.nextafter(mf.beta * ej, 0.0))

    def alloc(t):
        uu = min(ej / float(mf.odds(t)), cap)
        tau = best_response_tightness(mf, np.where(pivot, 0.0, e), uu)
        tau[pivot] = t
        return uu, tau

    def h(t):
        uu, tau = alloc(t)
        return k * math.fsum(w * mf.m(tau) * e) - uu

    lo, hi = 1e-300, max(2.0 * float(mf.g(max(ej / u, 1.0 / mf.beta))), 1e-3)
    if h(lo) > 0:
        return fallback
    while h(hi) <= 0:
        hi *= 2.0
        if hi > 1e12:
            return fallback
    return alloc(brentq(h, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500))


def solve_equilibrium(prior: Prior, seg: Segmentation, mf: MeetingFunction, k: float,
                      split: SurplusSplit, bracket: tuple[float, float] | None = None) -> EquilibriumOutcome:
    if not k > 0:
        raise ValidationError("seller mass k must be positive", k=k)
    split.check_nontrivial(prior)
    e = seg.expect(split.on(prior) * prior.grid, prior)
    top = mf.beta * float(e.max())
    phi = fixed_point_map(mf, seg, e, k)

    def gap(u):
        return phi(u) - u

    if bracket is None:
        lo, hi = 1e-12 * top, top
        while gap(lo) <= 0:
            lo *= 1e-3
            if lo < 1e-290:
                raise SolverError("could not bracket the reservation value", k=k)
    else:
        lo, hi = map(float, bracket)
        if not (0 < lo < hi <= top):
            raise ValidationError("bracket must satisfy 0 < lo < hi <= beta * max E[lambda theta]",
                                  lo=lo, hi=hi, top=top)
        if gap(lo) < 0 or gap(hi) > 0:
            raise SolverError("bracket does not contain the fixed point", lo=lo, hi=hi)
    u = brentq(gap, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500)
    tau = best_response_tightness(mf, e, u)
    resid = k * math.fsum(seg.weights * mf.m(tau) * e) - u
    if abs(resid) > FIXED_POINT_TOL:
        u, tau = _refine_marginal(mf, e, seg.weights, k, u)
        resid = k * math.fsum(seg.weights * mf.m(tau) * e) - u
    if abs(resid) > FIXED_POINT_TOL:
        raise SolverError("fixed-point residual above tolerance", residual=resid, u=u)
    feas = feasibility_residual(seg, tau, k)
    if abs(feas) > FEASIBILITY_TOL:
        raise SolverError("equilibrium tightness violates the buyer-mass constraint", residual=feas, u=u)
    return EquilibriumOutcome(
        u_star=float(u),
        tightness=tau,
        buyer_payoff=k * math.fsum(seg.weights * mf.m(tau) * e),
        total_surplus=surplus(prior, seg, tau, mf, k),
        active=tau > 0,
        means=seg.means(prior),
        means_lambda_theta=e,
    )
