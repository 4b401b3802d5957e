"""Priors over seller types, surplus splits and market segmentations.

Everything lives on a finite type grid.  A segmentation is a list of
submarkets, each a weight and a posterior (a probability vector over the
prior grid); it is consistent with the prior when the weighted posteriors add
back up to the prior weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AssumptionError, ValidationError

CONSISTENCY_TOL = 1e-10
MPC_TOL = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Prior:
    grid: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        grid = np.atleast_1d(np.asarray(self.grid, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if grid.ndim != 1 or grid.size == 0:
            raise ValidationError("prior grid must be a non-empty list")
        if weights.shape != grid.shape:
            raise ValidationError("prior grid and weights differ in length",
                                  grid=int(grid.size), weights=int(weights.size))
        if not np.all(np.isfinite(grid)) or grid.min() < 0.0 or grid.max() > 1.0:
            raise ValidationError("prior grid must lie in [0, 1]")
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("prior grid must be strictly increasing")
        if not np.all(weights > 0):
            raise ValidationError("prior weights must be positive")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ValidationError("prior weights must sum to 1", total=math.fsum(weights))
        object.__setattr__(self, "grid", _frozen(grid))
        object.__setattr__(self, "weights", _frozen(weights))

    @property
    def n(self) -> int:
        return int(self.grid.size)

    @property
    def mean(self) -> float:
        return math.fsum(self.grid * self.weights)

    def cdf(self, x):
        """Right-continuous step CDF."""
        x = np.asarray(x, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        return cum[np.searchsorted(self.grid, x, side="right")]

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "weights": self.weights.tolist()}


def make_prior_uniform(n: int) -> Prior:
    """Midpoint grid ``(j - 1/2)/n`` with equal weights."""
    if int(n) != n or n < 1:
        raise ValidationError("uniform prior needs n >= 1", n=n)
    n = int(n)
    return Prior((np.arange(n) + 0.5) / n, np.full(n, 1.0 / n))


@dataclass(frozen=True)
class ContinuousUniform:
    """The uniform distribution on [0, 1]; closed-form benchmark for grid priors."""

    @property
    def mean(self) -> float:
        return 0.5

    def cdf(self, x):
        return np.clip(x, 0.0, 1.0)


UNIFORM_CONTINUUM = ContinuousUniform()


# -- surplus splitting -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SurplusSplit:
    """Buyer share of match surplus: a constant ``ell`` or a table on the prior grid."""

    kind: str
    ell: float | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "constant":
            if self.ell is None or not (0.0 <= float(self.ell) <= 1.0):
                raise ValidationError("constant split needs ell in [0, 1]", ell=self.ell)
            object.__setattr__(self, "ell", float(self.ell))
        elif self.kind == "table":
            vals = np.atleast_1d(np.asarray(self.values, dtype=float))
            if vals.ndim != 1 or not np.all(np.isfinite(vals)) or vals.min() < 0 or vals.max() > 1:
                raise ValidationError("split table values must lie in [0, 1]")
            object.__setattr__(self, "values", _frozen(vals))
        else:
            raise ValidationError(f"unknown split kind {self.kind!r}")

    @classmethod
    def constant(cls, ell: float) -> SurplusSplit:
        return cls("constant", ell=ell)

    @classmethod
    def table(cls, values) -> SurplusSplit:
        return cls("table", values=values)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def on(self, prior: Prior) -> np.ndarray:
        """Values of lambda at each grid point."""
        if self.kind == "constant":
            return np.full(prior.n, self.ell)
        if self.values.size != prior.n:
            raise ValidationError("split table is not aligned with the prior grid",
                                  table=int(self.values.size), grid=prior.n)
        return np.asarray(self.values)

    def prices(self, prior: Prior) -> np.ndarray:
        return (1.0 - self.on(prior)) * prior.grid

    def check_nontrivial(self, prior: Prior) -> None:
        lam = self.on(prior)
        if math.fsum(prior.weights[(lam > 0) & (prior.grid > 0)]) <= 0:
            raise AssumptionError("buyers capture no surplus from any seller type (non-triviality fails)")

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "ell": self.ell}
        return {"kind": "table", "values": self.values.tolist()}


# -- segmentations -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Segmentation:
    weights: np.ndarray
    posteriors: np.ndarray  # shape (submarkets, grid points)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        post = np.asarray(self.posteriors, dtype=float)
        if post.ndim == 1:
            post = post[None, :]
        if post.ndim != 2 or post.shape[0] != w.size or w.size == 0:
            raise ValidationError("segmentation needs one posterior per submarket weight")
        if not np.all(w > 0):
            raise ValidationError("submarket weights must be positive")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValidationError("submarket weights must sum to 1", total=math.fsum(w))
        if not np.all(np.isfinite(post)) or post.min() < 0:
            raise ValidationError("posteriors must be nonnegative")
        sums = post.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > 1e-12:
            raise ValidationError("each posterior must sum to 1", worst=float(np.max(np.abs(sums - 1.0))))
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "posteriors", _frozen(post))

    @property
    def size(self) -> int:
        return int(self.weights.size)

    def _aligned(self, prior: Prior):
        if self.posteriors.shape[1] != prior.n:
            raise ValidationError("segmentation posteriors are not aligned with the prior grid",
                                  posterior_len=int(self.posteriors.shape[1]), grid=prior.n)

    def expect(self, values, prior: Prior) -> np.ndarray:
        """Posterior expectation of a function tabulated on the grid, per submarket."""
        self._aligned(prior)
        values = np.asarray(values, dtype=float)
        return np.array([math.fsum(p * values) for p in self.posteriors])

    def means(self, prior: Prior) -> np.ndarray:
        return self.expect(prior.grid, prior)

    @classmethod
    def from_dict(cls, d: dict) -> Segmentation:
        subs = d.get("submarkets")
        if not isinstance(subs, list) or not subs:
            raise ValidationError("explicit segmentation needs a non-empty 'submarkets' list")
        for s in subs:
            if not isinstance(s, dict) or set(s) != {"weight", "posterior"}:
                raise ValidationError("each submarket needs exactly 'weight' and 'posterior'")
        return cls([s["weight"] for s in subs], [s["posterior"] for s in subs])

    def to_dict(self) -> dict:
        return {
            "kind": "explicit",
            "submarkets": [
                {"weight": float(w), "posterior": p.tolist()} for w, p in zip(self.weights, self.posteriors)
            ],
        }


def perfect_segmentation(prior: Prior) -> Segmentation:
    return Segmentation(prior.weights.copy(), np.eye(prior.n))


def pooled_segmentation(prior: Prior) -> Segmentation:
    return Segmentation([1.0], prior.weights[None, :].copy())


def binary_segmentation(prior: Prior, cutoff_index: int, split: float = 1.0) -> Segmentation:
    """Two-submarket segmentation around a cutoff type.

    ``cutoff_index`` is 1-based.  Types below it go to the low submarket, types
    above it to the high one, and a fraction ``split`` of the cutoff type's
    mass goes low (the rest high).  Low comes first; the low and high posterior
    means are ``seg.means(prior)``.
    """
    n = prior.n
    if int(cutoff_index) != cutoff_index or not (1 <= cutoff_index <= n):
        raise ValidationError("cutoff_index must be in 1..n", cutoff_index=cutoff_index, n=n)
    if not (0.0 <= split <= 1.0):
        raise ValidationError("split must lie in [0, 1]", split=split)
    j = int(cutoff_index) - 1
    low = np.zeros(n)
    low[:j] = prior.weights[:j]
    low[j] = split * prior.weights[j]
    high = prior.weights - low
    wl, wh = math.fsum(low), math.fsum(high)
    if wl <= 0 or wh <= 0:
        raise ValidationError("cutoff leaves a submarket empty", cutoff_index=cutoff_index, split=split)
    return Segmentation([wl, wh], [low / wl, high / wh])


def segmentation_from_partition(prior: Prior, blocks: Sequence[Sequence[int]]) -> Segmentation:
    """One submarket per block of grid indices (0-based); blocks must partition the grid."""
    seen = sorted(i for b in blocks for i in b)
    if seen != list(range(prior.n)):
        raise ValidationError("blocks must partition the grid indices")
    weights, posts = [], []
    for b in blocks:
        idx = list(b)
        w = math.fsum(prior.weights[idx])
        p = np.zeros(prior.n)
        p[idx] = prior.weights[idx] / w
        weights.append(w)
        posts.append(p)
    total = math.fsum(weights)
    return Segmentation(np.array(weights) / total, posts)


def verify_consistency(prior: Prior, seg: Segmentation, tol: float = CONSISTENCY_TOL) -> tuple[bool, float]:
    """Bayes-plausibility: weighted posteriors reproduce the prior. Returns (ok, max residual)."""
    seg._aligned(prior)
    mix = np.array([math.fsum(seg.weights * seg.posteriors[:, j]) for j in range(prior.n)])
    resid = float(np.max(np.abs(mix - prior.weights)))
    return resid <= tol, resid


def posterior_mean_distribution(seg: Segmentation, prior: Prior, merge_tol: float = 1e-12):
    """Distribution of submarket posterior means as sorted ``(points, masses)``.

    Submarkets whose means coincide (within ``merge_tol``) are merged.
    """
    means = seg.means(prior)
    order = np.argsort(means, kind="stable")
    pts: list[float] = []
    mass: list[list[float]] = []
    for i in order:
        if pts and abs(means[i] - pts[-1]) <= merge_tol:
            mass[-1].append(seg.weights[i])
        else:
            pts.append(float(means[i]))
            mass.append([seg.weights[i]])
    return np.array(pts), np.array([math.fsum(m) for m in mass])


def hinge_moment(points, masses, x):
    """E[max(0, x - X)] for an atomic distribution, at each x (the integrated CDF)."""
    points = np.asarray(points, dtype=float)
    masses = np.asarray(masses, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.array([math.fsum(masses * np.maximum(0.0, xi - points)) for xi in x])


def verify_mpc(points, masses, prior: Prior, tol: float = MPC_TOL) -> bool:
    """True iff the atomic distribution is a mean-preserving contraction of the prior.

    Both integrated CDFs are piecewise linear with kinks only at atoms, so
    comparing them at the union of atoms is exact.
    """
    points = np.atleast_1d(np.asarray(points, dtype=float))
    masses = np.atleast_1d(np.asarray(masses, dtype=float))
    if points.shape != masses.shape:
        raise ValidationError("points and masses differ in length")
    if np.any(points < -1e-15) or np.any(points > 1 + 1e-15):
        raise ValidationError("candidate points must lie in [0, 1]")
    if np.any(masses < -1e-15) or abs(math.fsum(masses) - 1.0) > 1e-9:
        raise ValidationError("candidate masses must be a probability vector", total=math.fsum(masses))
    if abs(math.fsum(points * masses) - prior.mean) > tol:
        return False
    xs = np.union1d(points, prior.grid)
    return bool(np.all(hinge_moment(points, masses, xs) <= hinge_moment(prior.grid, prior.weights, xs) + tol))


# -- buyer allocations --------------------------------------------------------


def feasibility_residual(seg: Segmentation, tightness, k: float) -> float:
    """``k * sum_s weight_s * tightness_s - 1`` (zero for a feasible allocation)."""
    tightness = np.asarray(tightness, dtype=float)
    if tightness.shape != seg.weights.shape:
        raise ValidationError("tightness is not aligned with the segmentation",
                              tightness=int(tightness.size), submarkets=seg.size)
    return k * math.fsum(seg.weights * tightness) - 1.0


def buyer_masses(seg: Segmentation, tightness, k: float) -> np.ndarray:
    return k * np.asarray(tightness, dtype=float) * seg.weights
