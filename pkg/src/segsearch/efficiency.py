"""When does equilibrium under full separation reproduce the first best?

Let ``eta`` be the planner's multiplier under the perfect segmentation and
``c = eta / beta`` the lowest type worth serving.  Equilibrium is efficient
exactly when the buyer share satisfies

* ``lambda(theta) * theta <= lambda(c) * c`` for ``theta <= c``, and
* ``lambda(theta) = lambda(c) * elasticity(f(theta / eta))`` for ``theta > c``.

On a grid the cutoff usually falls between grid points, so ``lambda(c)`` has
to be interpolated.  Interpolating ``lambda`` itself would be only first-order
accurate against the curved right-hand side, so we interpolate the ratio
``lambda(theta) / elasticity(f(max(theta/eta, 1/beta)))``, which is constant
for any table satisfying the condition.  Left of the cutoff the elasticity
factor is ``elasticity(0) = 1`` and the ratio is ``lambda`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .market import Prior, SurplusSplit
from .meeting import MeetingFunction
from .planner import first_best_benchmark

HOSIOS_TOL = 1e-7


@dataclass(frozen=True)
class HosiosReport:
    holds: bool
    eta_ps: float
    cutoff: float
    lambda_at_cutoff: float
    max_violation_below: float
    max_violation_above: float

    def to_dict(self) -> dict:
        return {
            "holds": self.holds,
            "eta_ps": self.eta_ps,
            "cutoff": self.cutoff,
            "lambda_at_cutoff": self.lambda_at_cutoff,
            "violations": {"below": self.max_violation_below, "above": self.max_violation_above},
        }


class HosiosSplit(NamedTuple):
    split: SurplusSplit
    eta_ps: float
    clamped: bool


def _elasticity_factor(mf: MeetingFunction, grid, eta: float) -> np.ndarray:
    y = np.maximum(np.asarray(grid, dtype=float) / eta, 1.0 / mf.beta)
    return mf._elasticity0(mf.f(y))


def check_hosios(prior: Prior, mf: MeetingFunction, k: float, split: SurplusSplit,
                 tol: float = HOSIOS_TOL) -> HosiosReport:
    split.check_nontrivial(prior)
    lam = split.on(prior)
    eta = first_best_benchmark(prior, mf, k).eta
    c = eta / mf.beta
    eps = _elasticity_factor(mf, prior.grid, eta)
    lam_c = float(np.interp(c, prior.grid, lam / eps))
    below = prior.grid <= c
    theta = prior.grid
    viol_below = float(np.max(lam[below] * theta[below] - lam_c * c)) if below.any() else 0.0
    above = ~below
    viol_above = float(np.max(np.abs(lam[above] - lam_c * eps[above]))) if above.any() else 0.0
    return HosiosReport(
        holds=bool(viol_below <= tol and viol_above <= tol),
        eta_ps=float(eta),
        cutoff=float(c),
        lambda_at_cutoff=lam_c,
        max_violation_below=viol_below,
        max_violation_above=viol_above,
    )


def hosios_compatible_split(prior: Prior, mf: MeetingFunction, k: float, lambda_at_cutoff: float) -> HosiosSplit:
    """Buyer-share table under which the perfect-segmentation equilibrium is efficient.

    Below the cutoff the share is held at ``lambda_at_cutoff``.  ``clamped``
    reports whether any value had to be cut back to 1.
    """
    if not (0.0 < lambda_at_cutoff <= 1.0):
        raise ValidationError("lambda_at_cutoff must lie in (0, 1]", lambda_at_cutoff=lambda_at_cutoff)
    eta = first_best_benchmark(prior, mf, k).eta
    raw = lambda_at_cutoff * _elasticity_factor(mf, prior.grid, eta)
    clamped = bool(np.any(raw > 1.0))
    return HosiosSplit(SurplusSplit.table(np.clip(raw, 0.0, 1.0)), float(eta), clamped)
