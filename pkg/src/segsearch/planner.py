"""First-best allocation of buyers across submarkets.

For a fixed segmentation the planner equalises the marginal value of a buyer,
``m'(tau_s) * E_s[theta]``, at a common multiplier ``eta`` across active
submarkets and leaves a submarket empty when even its first buyer is worth
less than ``eta`` (``beta * E_s[theta] <= eta``).  ``eta`` is pinned down by
the buyer-mass constraint ``k * sum_s w_s tau_s = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import InfeasibleError, SolverError, ValidationError
from .market import Prior, Segmentation, feasibility_residual, perfect_segmentation, segmentation_from_partition
from .meeting import MeetingFunction

PSI_TOL = 1e-10
FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PlannerOutcome:
    eta: float
    tightness: np.ndarray
    total_surplus: float
    means: np.ndarray
    active: np.ndarray


def surplus(prior: Prior, seg: Segmentation, tightness, mf: MeetingFunction, k: float) -> float:
    """Total match surplus ``k * sum_s w_s m(tau_s) E_s[theta]`` of any allocation."""
    tightness = np.asarray(tightness, dtype=float)
    if tightness.shape != seg.weights.shape:
        raise ValidationError("tightness is not aligned with the segmentation")
    means = seg.means(prior)
    return k * math.fsum(seg.weights * mf.m(tightness) * means)


def planner_tightness(mf: MeetingFunction, means, eta: float) -> np.ndarray:
    """Pointwise Lagrangian maximiser: ``f(E/eta)`` where ``beta E > eta``, else 0."""
    means = np.asarray(means, dtype=float)
    active = mf.beta * means > eta
    out = np.zeros_like(means)
    if active.any():
        out[active] = mf.f(np.maximum(means[active] / eta, 1.0 / mf.beta))
    return out


def solve_first_best(prior: Prior, seg: Segmentation, mf: MeetingFunction, k: float) -> PlannerOutcome:
    if not k > 0:
        raise ValidationError("seller mass k must be positive", k=k)
    means = seg.means(prior)
    top = mf.beta * float(means.max())
    if top <= 0:
        raise InfeasibleError("every submarket has zero expected surplus; no multiplier exists")
    w = seg.weights

    def psi(eta):
        return k * math.fsum(w * planner_tightness(mf, means, eta)) - 1.0

    lo = 1e-12 * mf.beta
    while psi(lo) <= 0:
        lo *= 1e-3
        if lo < 1e-290:
            raise SolverError("could not bracket the planner multiplier", k=k)
    eta = brentq(psi, lo, top, xtol=1e-300, rtol=8.9e-16, maxiter=500)
    tau = planner_tightness(mf, means, eta)
    resid = k * math.fsum(w * tau) - 1.0
    if abs(resid) > PSI_TOL:
        eta, tau = _refine_marginal(mf, means, w, k, eta)
        resid = k * math.fsum(w * tau) - 1.0
    if abs(resid) > PSI_TOL:
        raise SolverError("planner multiplier residual above tolerance", residual=resid, eta=eta)
    feas = feasibility_residual(seg, tau, k)
    if abs(feas) > FEASIBILITY_TOL:
        raise SolverError("first-best allocation violates the buyer-mass constraint", residual=feas)
    return PlannerOutcome(
        eta=float(eta),
        tightness=tau,
        total_surplus=surplus(prior, seg, tau, mf, k),
        means=means,
        active=tau > 0,
    )


def _refine_marginal(mf: MeetingFunction, means, w, k: float, eta: float):
    """Re-solve with the tightness of the marginal submarket as the unknown.

    Near ``beta * E = eta`` the map ``eta -> f(E / eta)`` can be so steep that no
    double-precision ``eta`` meets the tolerance (urn-ball: ``f`` leaves 0 like
    ``1 / log``).  Parametrising by that submarket's own tightness ``t``, with
    ``eta = E * m'(t)``, removes the steepness.  ``eta`` is kept strictly below
    the activity threshold so the submarket stays active.
    """
    ratio = mf.beta * means / eta
    cand = np.where(ratio >= 1.0 - 1e-6, ratio, np.inf)
    j = int(np.argmin(cand))
    if not np.isfinite(cand[j]):
        return eta, planner_tightness(mf, means, eta)
    pivot = np.abs(means - means[j]) <= 1e-15 * means[j]
    ej = float(means[j])
    cap = float(np.nextafter(mf.beta * ej, 0.0))

    def alloc(t):
        e = min(ej * float(mf.m_prime(t)), cap)
        tau = planner_tightness(mf, np.where(pivot, 0.0, means), e)
        tau[pivot] = t
        return e, tau

    def h(t):
        return k * math.fsum(w * alloc(t)[1]) - 1.0

    lo, hi = 1e-300, max(2.0 * float(mf.f(max(ej / eta, 1.0 / mf.beta))), 1e-3)
    if h(lo) > 0:
        return eta, planner_tightness(mf, means, eta)
    while h(hi) <= 0:
        hi *= 2.0
        if hi > 1e12:
            return eta, planner_tightness(mf, means, eta)
    t = brentq(h, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500)
    return alloc(t)


def first_best_benchmark(prior: Prior, mf: MeetingFunction, k: float) -> PlannerOutcome:
    """First best under full separation of types, which no other segmentation beats."""
    return solve_first_best(prior, perfect_segmentation(prior), mf, k)


def lower_censorship(prior: Prior, mf: MeetingFunction, k: float) -> Segmentation:
    """Pool the types the planner would leave unserved; keep the rest separate.

    Also first best: the pooled low submarket stays inactive.
    """
    eta = first_best_benchmark(prior, mf, k).eta
    low = [j for j in range(prior.n) if prior.grid[j] <= eta / mf.beta]
    high = [[j] for j in range(prior.n) if prior.grid[j] > eta / mf.beta]
    blocks = ([low] if low else []) + high
    return segmentation_from_partition(prior, blocks)
