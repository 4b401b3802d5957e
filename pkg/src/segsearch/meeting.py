"""Bilateral meeting functions and the derived maps the solvers rely on.

A meeting function ``m(t)`` gives the probability that a seller meets a buyer
in a submarket with tightness ``t`` (buyers per seller).  Two parametric
families are supported:

* CES:      ``m(t) = a*b*t / (a**r + (b*t)**r)**(1/r)``
* urn-ball: ``m(t) = b*t * (1 - exp(-a / (b*t)))``

with ``a = m(inf)`` and ``b = lim m(t)/t`` at zero, both in ``(0, 1]``.

Besides ``m`` itself the solvers need ``m'``, the elasticity ``t m'(t)/m(t)``,
the inverse ``f`` of ``t -> 1/m'(t)`` (planner), the inverse ``g`` of the odds
map ``t -> t/m(t)`` (equilibrium) and ``g'`` (designer).  Everything below is
evaluated in a form that stays accurate at both ends of the tightness range,
where the naive formulas cancel catastrophically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError, SolverError, ValidationError

FAMILIES = ("ces", "urnball")


def _out(x, like):
    """Return a Python float when the caller passed a scalar."""
    if np.ndim(like) == 0:
        return float(np.asarray(x).reshape(()))
    return x


def _log_expm1(x):
    """log(exp(x) - 1) for x > 0 without overflow."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        big = x > 30.0
        return np.where(big, x + np.log1p(-np.exp(-np.where(big, x, 30.0))), np.log(np.expm1(np.where(big, 1.0, x))))


def _urn_h(c):
    """1 - exp(-c)(1 + c), accurate for small c via its power series."""
    c = np.asarray(c, dtype=float)
    small = c < 0.1
    cs = np.where(small, c, 0.0)
    # sum_{n>=2} (-1)^n (n-1) c^n / n!
    series = np.zeros_like(cs)
    term = np.ones_like(cs)
    for n in range(1, 16):
        term = term * cs / n
        if n >= 2:
            series += (-1) ** n * (n - 1) * term
    with np.errstate(over="ignore", invalid="ignore"):
        cl = np.where(small, 1.0, c)
        direct = np.where(np.isinf(cl), 1.0, 1.0 - np.exp(-cl) * (1.0 + cl))
    return np.where(small, series, direct)


def _urn_tail(c):
    """exp(-c)(1 + c), accurate for large c."""
    c = np.asarray(c, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        return np.where(np.isinf(c), 0.0, np.exp(-c) * (1.0 + c))


@dataclass(frozen=True)
class MeetingFunction:
    family: str
    alpha: float = 1.0
    beta: float = 1.0
    rho: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown meeting family {self.family!r}", family=self.family)
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValidationError(f"{name} must lie in (0, 1], got {v}", **{name: v})
        if self.family == "ces" and not (self.rho > 0.0 and math.isfinite(self.rho)):
            raise ValidationError(f"rho must be a positive real, got {self.rho}", rho=self.rho)

    @classmethod
    def ces(cls, alpha: float = 1.0, beta: float = 1.0, rho: float = 1.0) -> MeetingFunction:
        return cls("ces", float(alpha), float(beta), float(rho))

    @classmethod
    def urnball(cls, alpha: float = 1.0, beta: float = 1.0) -> MeetingFunction:
        return cls("urnball", float(alpha), float(beta), 1.0)

    @classmethod
    def from_dict(cls, spec: dict) -> MeetingFunction:
        spec = dict(spec)
        family = str(spec.pop("family", "")).lower().replace("-", "").replace("_", "")
        allowed = {"ces": {"alpha", "beta", "rho"}, "urnball": {"alpha", "beta"}}.get(family)
        if allowed is None:
            raise ValidationError(f"unknown meeting family {family!r}", field="meeting.family")
        extra = set(spec) - allowed
        if extra:
            raise ValidationError(f"unknown meeting fields {sorted(extra)}", field="meeting")
        try:
            kwargs = {k: float(v) for k, v in spec.items()}
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"meeting parameters must be numbers: {exc}", field="meeting") from exc
        return cls.ces(**kwargs) if family == "ces" else cls.urnball(**kwargs)

    def to_dict(self) -> dict:
        d = {"family": self.family, "alpha": self.alpha, "beta": self.beta}
        if self.family == "ces":
            d["rho"] = self.rho
        return d

    # -- internal coordinates -------------------------------------------------
    # CES works in log z with z = beta t / alpha; urn-ball in c = alpha / (beta t).

    def _ces_logz(self, t):
        with np.errstate(divide="ignore"):
            return np.log(self.beta * t / self.alpha)

    def _urn_c(self, t):
        with np.errstate(divide="ignore"):
            return self.alpha / (self.beta * t)

    # -- primitives -----------------------------------------------------------

    def m(self, t):
        """Seller meeting probability; ``t = inf`` returns alpha."""
        ta = np.asarray(t, dtype=float)
        if np.any(ta < 0) or np.any(np.isnan(ta)):
            raise DomainError("tightness must be nonnegative", t=_safe(t))
        inf = np.isinf(ta)
        tt = np.where(inf | (ta == 0), 1.0, ta)
        if self.family == "ces":
            # min(alpha, beta t) * (1 + w^rho)^(-1/rho) with w = min(z, 1/z) <= 1, so m never
            # exceeds either bound after rounding
            r = self.rho
            logz = self._ces_logz(tt)
            cap = np.where(logz >= 0.0, self.alpha, self.beta * tt)
            val = cap * np.exp(-np.log1p(np.exp(-r * np.abs(logz))) / r)
        else:
            val = self.beta * tt * -np.expm1(-self._urn_c(tt))
        val = np.where(ta == 0, 0.0, np.where(inf, self.alpha, val))
        return _out(val, t)

    def m_prime(self, t):
        ta = np.asarray(t, dtype=float)
        if np.any(~(ta > 0)):
            raise DomainError("m' requires t > 0", t=_safe(t))
        if self.family == "ces":
            r = self.rho
            val = self.beta * np.exp(-(1.0 + r) / r * np.logaddexp(0.0, r * self._ces_logz(ta)))
        else:
            val = self.beta * _urn_h(self._urn_c(ta))
        return _out(val, t)

    def odds(self, t):
        """Buyer odds ``t/m(t)``; equals ``1/beta`` at ``t = 0``."""
        ta = np.asarray(t, dtype=float)
        if np.any(ta < 0) or np.any(np.isnan(ta)):
            raise DomainError("tightness must be nonnegative", t=_safe(t))
        if self.family == "ces":
            r = self.rho
            val = np.exp(np.logaddexp(0.0, r * self._ces_logz(ta)) / r) / self.beta
        else:
            with np.errstate(divide="ignore"):
                val = 1.0 / (self.beta * -np.expm1(-self._urn_c(ta)))
        return _out(val, t)

    def elasticity(self, t):
        ta = np.asarray(t, dtype=float)
        if np.any(~(ta > 0)):
            raise DomainError("elasticity requires t > 0", t=_safe(t))
        return _out(self._elasticity0(ta), t)

    def _elasticity0(self, t):
        """Elasticity extended continuously to ``t = 0`` (where it equals 1)."""
        t = np.asarray(t, dtype=float)
        tt = np.where(t == 0, 1.0, t)
        if self.family == "ces":
            val = expit(-self.rho * self._ces_logz(tt))
        else:
            c = self._urn_c(tt)
            val = _urn_h(c) / -np.expm1(-c)
        return np.where(t == 0, 1.0, val)

    # -- inverse maps ---------------------------------------------------------

    def _check_y(self, y, name):
        ya = np.asarray(y, dtype=float)
        if np.any(np.isnan(ya)) or np.any(ya * self.beta < 1.0 - 1e-15):
            raise DomainError(f"{name} requires y >= 1/beta = {1.0 / self.beta}", y=_safe(y))
        return np.maximum(ya, 1.0 / self.beta)

    def f(self, y):
        """Inverse of ``t -> 1/m'(t)`` on ``[1/beta, inf)``."""
        ya = self._check_y(y, "f")
        by = self.beta * ya
        if self.family == "ces":
            r = self.rho
            x = r / (1.0 + r) * np.log(by)
            with np.errstate(divide="ignore"):
                z = np.exp(_log_expm1(x) / r)
            val = np.where(by <= 1.0, 0.0, self.alpha * z / self.beta)
        else:
            val = self._urn_f(by)
        return _out(val, y)

    def _urn_f(self, by):
        # m'(t) > 1/y  <=>  h(c) > 1/(beta y); compare whichever side is accurate.
        inv = 1.0 / by
        gap = (by - 1.0) / by

        def above(t):
            c = self._urn_c(t)
            return np.where(inv < 0.5, _urn_h(c) > inv, _urn_tail(c) < gap)

        return _bisect_increasing(above, by)

    def g(self, y):
        """Inverse of the odds map ``t -> t/m(t)`` on ``[1/beta, inf)``."""
        ya = self._check_y(y, "g")
        by = self.beta * ya
        if self.family == "ces":
            r = self.rho
            with np.errstate(divide="ignore"):
                z = np.exp(_log_expm1(r * np.log(by)) / r)
            val = np.where(by <= 1.0, 0.0, self.alpha * z / self.beta)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                c = -np.log1p(-1.0 / by)
                val = np.where(by <= 1.0, 0.0, self.alpha / (self.beta * c))
        return _out(val, y)

    def g_prime(self, y):
        """Derivative of ``g`` from the inverse-function rule, exact in closed form."""
        ya = self._check_y(y, "g'")
        by = self.beta * ya
        if self.family == "ces":
            r = self.rho
            with np.errstate(divide="ignore", invalid="ignore"):
                logz = _log_expm1(r * np.log(by)) / r
                lg = math.log(self.alpha) + (1.0 - r) * logz + (1.0 - 1.0 / r) * np.logaddexp(0.0, r * logz)
                val = np.exp(lg)
            if r == 1.0:
                val = np.full_like(by, self.alpha)
            else:
                val = np.where(by <= 1.0, 0.0 if r < 1.0 else np.inf, val)
        else:
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                c = -np.log1p(-1.0 / by)
                val = (self.alpha / c) * -np.expm1(-c) * np.expm1(c) / c
            val = np.where(by <= 1.0, np.inf, val)
        return _out(val, y)


def _safe(x):
    a = np.asarray(x, dtype=float)
    return float(a) if a.ndim == 0 else a.tolist()


def _bisect_increasing(above, by, rtol: float = 1e-15, max_iter: int = 4000):
    """Vectorised bisection for the t solving a monotone condition.

    ``above(t)`` is True while t is still below the root.  The bracket starts
    at ``[0, 1]`` and its top is doubled until it straddles the root.
    """
    by = np.atleast_1d(np.asarray(by, dtype=float))
    lo = np.zeros_like(by)
    hi = np.ones_like(by)
    for _ in range(2100):
        grow = above(hi)
        if not grow.any():
            break
        hi = np.where(grow, hi * 2.0, hi)
        if np.any(hi > 1e300):
            raise SolverError("could not bracket inverse meeting map", y=by.tolist())
    active = by > 1.0
    for _ in range(max_iter):
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        up = above(mid)
        lo = np.where(active & up, mid, lo)
        hi = np.where(active & ~up, mid, hi)
        active &= (hi - lo) > rtol * hi
    return np.where(by <= 1.0, 0.0, 0.5 * (lo + hi))


# -- operation-style entry points ------------------------------------------------


def eval_m(mf: MeetingFunction, t):
    return mf.m(t)


def eval_m_prime(mf: MeetingFunction, t):
    return mf.m_prime(t)


def eval_elasticity(mf: MeetingFunction, t):
    return mf.elasticity(t)


def eval_f(mf: MeetingFunction, y):
    return mf.f(y)


def eval_g(mf: MeetingFunction, y):
    return mf.g(y)


# -- curvature of the odds map ---------------------------------------------------


class Curvature(str, enum.Enum):
    CONCAVE = "concave"
    CONVEX = "convex"
    AFFINE = "affine"
    NEITHER = "neither"


@dataclass(frozen=True)
class OddsCurvature:
    kind: Curvature
    evidence: float  # most extreme normalised second difference seen on the probe grid
    min_second_diff: float
    max_second_diff: float

    @property
    def concave_ok(self) -> bool:
        return self.kind in (Curvature.CONCAVE, Curvature.AFFINE)

    @property
    def convex_ok(self) -> bool:
        return self.kind in (Curvature.CONVEX, Curvature.AFFINE)


DEFAULT_PROBE = np.geomspace(1e-3, 1e3, 97)


def classify_odds(mf: MeetingFunction, probe_grid=None, tol: float = 1e-9) -> OddsCurvature:
    """Classify ``t -> t/m(t)`` as concave, convex, affine or neither.

    Second divided differences of the odds map are checked on the probe grid,
    normalised by the largest slope so ``tol`` is relative.  For CES the sign
    of ``rho - 1`` decides the class exactly (the odds map is
    ``(1 + (b t/a)**rho)**(1/rho) / b``); the numerical evidence is still
    reported.
    """
    grid = DEFAULT_PROBE if probe_grid is None else np.asarray(probe_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 16:
        raise ValidationError("probe grid needs at least 16 points", size=int(grid.size))
    if np.any(np.diff(grid) <= 0) or grid[0] <= 0:
        raise ValidationError("probe grid must be positive and strictly increasing")
    if grid[0] > 1e-3 * (1 + 1e-12) or grid[-1] < 1e3 * (1 - 1e-12):
        raise ValidationError("probe grid must span at least [1e-3, 1e3]", lo=float(grid[0]), hi=float(grid[-1]))

    h = mf.odds(grid)
    slopes = np.diff(h) / np.diff(grid)
    second = 2.0 * np.diff(slopes) / (grid[2:] - grid[:-2])
    # rounding noise in a slope is ~eps*h/dt; compare second differences on that scale
    scale = max(float(np.max(np.abs(slopes))), 1e-300)
    norm = second * (grid[2:] - grid[:-2]) / scale
    concave = bool(np.all(norm <= tol))
    convex = bool(np.all(norm >= -tol))
    if concave and convex:
        kind = Curvature.AFFINE
    elif concave:
        kind = Curvature.CONCAVE
    elif convex:
        kind = Curvature.CONVEX
    else:
        kind = Curvature.NEITHER
    if mf.family == "ces":
        if mf.rho < 1.0:
            kind = Curvature.CONCAVE
        elif mf.rho > 1.0:
            kind = Curvature.CONVEX
        else:
            kind = Curvature.AFFINE
    evidence = float(norm[np.argmax(np.abs(norm))])
    return OddsCurvature(kind, evidence, float(norm.min()), float(norm.max()))
