"""Brute-force cross-checks for the designer.

``lp_value`` maximises ``E_H[phi(., u)]`` over distributions ``H`` of posterior
means supported on a fixed point set, subject to ``H`` being a mean-preserving
contraction of the prior.  Contraction is imposed through hinge moments
``E[max(0, b - X)]`` at every breakpoint ``b``; for atomic distributions that
finite set of inequalities is exact.  ``enumerate_bp`` instead solves the
equilibrium of every partition of a small grid and keeps the best.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.optimize import brentq, linprog

from .equilibrium import solve_equilibrium
from .errors import DomainError, SizeError, SolverError, ValidationError
from .market import Prior, Segmentation, SurplusSplit, segmentation_from_partition
from .meeting import MeetingFunction

MAX_ENUM_N = 12
V_TOL = 1e-8
MASS_FLOOR = 1e-12
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


@dataclass(frozen=True, eq=False)
class LpSolution:
    u: float
    value: float
    points: np.ndarray
    masses: np.ndarray
    duality_gap: float

    @property
    def support(self) -> np.ndarray:
        return self.points[self.masses > MASS_FLOOR]

    @property
    def support_masses(self) -> np.ndarray:
        return self.masses[self.masses > MASS_FLOOR]

    def to_dict(self) -> dict:
        return {
            "u": self.u,
            "value": self.value,
            "support": self.support.tolist(),
            "masses": self.support_masses.tolist(),
            "duality_gap": self.duality_gap,
        }


def phi_values(mf: MeetingFunction, ell: float, u: float, x) -> np.ndarray:
    """Tightness a submarket with mean ``x`` attracts at reservation value ``u``."""
    y = ell * np.asarray(x, dtype=float) / u
    act = mf.beta * y > 1.0
    out = np.zeros_like(y)
    if act.any():
        out[act] = mf.g(y[act])
    return out


def lp_points(prior: Prior, mesh: int | None = None) -> np.ndarray:
    mesh = 4 * prior.n if mesh is None else int(mesh)
    if mesh < prior.n:
        raise ValidationError("mesh must be at least the prior grid size", mesh=mesh, n=prior.n)
    return np.union1d(prior.grid, np.linspace(0.0, 1.0, mesh))


def lp_value(mf: MeetingFunction, prior: Prior, ell: float, u: float, mesh: int | None = None,
             points=None) -> LpSolution:
    if not 0.0 < ell <= 1.0:
        raise ValidationError("ell must lie in (0, 1]", ell=ell)
    if not 0.0 < u < mf.beta * ell:
        raise DomainError("u must lie in (0, beta * ell)", u=u)
    pts = lp_points(prior, mesh) if points is None else np.unique(np.asarray(points, dtype=float))
    if pts.size == 0 or pts.min() < 0.0 or pts.max() > 1.0:
        raise ValidationError("LP points must be a non-empty subset of [0, 1]")
    breaks = np.union1d(pts, prior.grid)
    A_ub = np.maximum(0.0, breaks[:, None] - pts[None, :])
    b_ub = np.array([math.fsum(prior.weights * np.maximum(0.0, b - prior.grid)) for b in breaks])
    A_eq = np.vstack([np.ones_like(pts), pts])
    b_eq = np.array([1.0, prior.mean])
    c = -phi_values(mf, ell, u, pts)
    scale = max(float(np.max(np.abs(c))), 1.0)
    res = linprog(c / scale, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None),
                  method="highs-ds", options=_HIGHS)
    if res.status != 0:
        raise SolverError("contraction LP failed", status=int(res.status), detail=res.message, u=u)
    primal = -float(res.fun) * scale
    dual = -float(b_ub @ res.ineqlin.marginals + b_eq @ res.eqlin.marginals) * scale
    masses = np.clip(res.x, 0.0, None)
    masses = masses / math.fsum(masses)
    return LpSolution(u=float(u), value=primal, points=pts, masses=masses, duality_gap=abs(primal - dual))


def find_u_bar(mf: MeetingFunction, prior: Prior, ell: float, mesh: int | None = None,
               k: float = 1.0, points=None) -> float:
    """Root of ``k * V(u) = 1`` where ``V`` is the LP value."""
    if not k > 0:
        raise ValidationError("seller mass k must be positive", k=k)
    top = mf.beta * ell

    def gap(u):
        return k * lp_value(mf, prior, ell, u, mesh, points).value - 1.0

    hi = float(np.nextafter(top, 0.0))
    lo = 1e-2 * top
    while gap(lo) <= 0:
        lo *= 1e-2
        if lo < 1e-12 * top:
            raise SolverError("could not bracket u_bar for the LP value")
    if gap(hi) >= 0:
        raise SolverError("LP value does not fall below 1/k near the top of the bracket")
    u = brentq(gap, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500)
    resid = gap(u)
    if abs(resid) > V_TOL:
        raise SolverError("LP fixed-point residual above tolerance", residual=resid, u=u)
    return float(u)


def realize_segmentation(prior: Prior, points, masses) -> Segmentation:
    """A segmentation whose posterior means are ``points`` with weights ``masses``.

    Solves for a martingale coupling of the prior and the target distribution;
    one exists exactly when the target is a contraction of the prior.
    """
    pts = np.asarray(points, dtype=float)
    h = np.asarray(masses, dtype=float)
    keep = h > MASS_FLOOR
    pts, h = pts[keep], h[keep] / math.fsum(h[keep])
    n, m = prior.n, pts.size
    # pi[i, j] flattened row-major
    rows = np.kron(np.eye(n), np.ones(m))
    cols = np.kron(np.ones(n), np.eye(m))
    mart = cols * (np.repeat(prior.grid, m) - np.tile(pts, n))
    A_eq = np.vstack([rows, cols, mart])
    b_eq = np.concatenate([prior.weights, h, np.zeros(m)])
    res = linprog(np.zeros(n * m), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds", options=_HIGHS)
    if res.status != 0:
        raise SolverError("no segmentation realizes the target mean distribution", status=int(res.status))
    pi = np.clip(res.x.reshape(n, m), 0.0, None)
    weights = pi.sum(axis=0)
    keep = weights > MASS_FLOOR
    pi, weights = pi[:, keep], weights[keep]
    posts = (pi / weights).T
    posts = posts / posts.sum(axis=1, keepdims=True)
    return Segmentation(weights / math.fsum(weights), posts)


def lp_design(prior: Prior, mf: MeetingFunction, k: float, ell: float, mesh: int | None = None):
    """LP-based design: ``(segmentation, u_bar)``."""
    u_bar = find_u_bar(mf, prior, ell, mesh, k)
    sol = lp_value(mf, prior, ell, u_bar, mesh)
    return realize_segmentation(prior, sol.points, sol.masses), u_bar


# -- enumeration ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BpResult:
    segmentation: Segmentation
    blocks: tuple[tuple[int, ...], ...]
    u_star: float
    surplus: float
    candidates: int

    def to_dict(self) -> dict:
        return {
            "blocks": [list(b) for b in self.blocks],
            "u_star": self.u_star,
            "surplus": self.surplus,
            "candidates": self.candidates,
            "segmentation": self.segmentation.to_dict(),
        }


def interval_partitions(n: int) -> Iterator[tuple[tuple[int, ...], ...]]:
    """All partitions of ``0..n-1`` into runs of consecutive indices."""
    for cuts in itertools.product((False, True), repeat=n - 1):
        blocks, start = [], 0
        for i, cut in enumerate(cuts, start=1):
            if cut:
                blocks.append(tuple(range(start, i)))
                start = i
        blocks.append(tuple(range(start, n)))
        yield tuple(blocks)


def set_partitions(n: int) -> Iterator[tuple[tuple[int, ...], ...]]:
    """All set partitions of ``0..n-1`` via restricted growth strings."""

    def rgs(prefix, top):
        if len(prefix) == n:
            yield prefix
            return
        for b in range(top + 2):
            yield from rgs(prefix + [b], max(top, b))

    for code in rgs([0], 0) if n else iter(()):
        blocks: dict[int, list[int]] = {}
        for i, b in enumerate(code):
            blocks.setdefault(b, []).append(i)
        yield tuple(tuple(blocks[b]) for b in sorted(blocks))


def _encoding(blocks) -> tuple[int, ...]:
    label = {}
    for b, block in enumerate(blocks):
        for i in block:
            label[i] = b
    return tuple(label[i] for i in sorted(label))


def enumerate_bp(prior: Prior, mf: MeetingFunction, k: float, split: SurplusSplit,
                 exhaustive: bool = False, max_n: int = MAX_ENUM_N, tie_tol: float = 1e-12) -> BpResult:
    """Best partitional segmentation by equilibrium total surplus."""
    if prior.n > min(max_n, MAX_ENUM_N):
        raise SizeError("grid too large for enumeration", n=prior.n, max_n=min(max_n, MAX_ENUM_N))
    gen = set_partitions(prior.n) if exhaustive else interval_partitions(prior.n)
    best = None
    count = 0
    for blocks in gen:
        count += 1
        seg = segmentation_from_partition(prior, blocks)
        eq = solve_equilibrium(prior, seg, mf, k, split)
        key = _encoding(blocks)
        if (best is None or eq.total_surplus > best[0] + tie_tol
                or (abs(eq.total_surplus - best[0]) <= tie_tol and key < best[1])):
            best = (eq.total_surplus, key, blocks, seg, eq.u_star)
    surplus, _, blocks, seg, u = best
    return BpResult(seg, blocks, float(u), float(surplus), count)
