"""Survival evaluation statistics: concordance index, Kaplan-Meier curve,
Mantel log-rank test, and median risk stratification.

Censored observations at time t stay in the risk set for events at t
(standard product-limit handling).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class SurvPoint:
    time: float
    event: bool
    risk: float

    def __post_init__(self):
        if not (np.isfinite(self.time) and self.time >= 0):
            raise ValueError("time must be nonnegative and finite")
        if not np.isfinite(self.risk):
            raise ValueError("risk must be finite")


def c_index(points: list[SurvPoint]) -> float:
    """Concordant fraction over pairs (i, j) with t_i < t_j and event_i.

    Tied risks count 0.5. Raises when no pair is comparable.
    """
    t = np.array([p.time for p in points])
    e = np.array([p.event for p in points], dtype=bool)
    r = np.array([p.risk for p in points])
    comparable = (t[:, None] < t[None, :]) & e[:, None]
    n_comp = comparable.sum()
    if n_comp == 0:
        raise ValueError("undefined C-index: no comparable pairs")
    concordant = (r[:, None] > r[None, :]) * 1.0 + (r[:, None] == r[None, :]) * 0.5
    return float((concordant * comparable).sum() / n_comp)


@dataclass
class KMCurve:
    """Product-limit estimate: one step per distinct event time."""

    group: str
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    n_start: int

    def survival_at(self, t: float) -> float:
        idx = np.searchsorted(self.times, t, side="right")
        return 1.0 if idx == 0 else float(self.survival[idx - 1])


def km_curve(points: list[SurvPoint], group: str = "") -> KMCurve:
    if not points:
        raise ValueError("at least one point required")
    t = np.array([p.time for p in points])
    e = np.array([p.event for p in points], dtype=bool)
    order = np.argsort(t, kind="stable")
    t, e = t[order], e[order]
    times, survival, at_risk = [], [], []
    s = 1.0
    total = len(t)
    n = total  # at risk
    i = 0
    while i < total:
        u = t[i]
        block = t == u
        d = int(e[block].sum())
        if d > 0:
            s *= 1.0 - d / n
            times.append(float(u))
            survival.append(s)
            at_risk.append(n)
        n -= int(block.sum())
        i += int(block.sum())
    return KMCurve(
        group=group,
        times=np.asarray(times),
        survival=np.asarray(survival),
        at_risk=np.asarray(at_risk, dtype=np.intp),
        n_start=len(points),
    )


def logrank_test(group_a: list[SurvPoint], group_b: list[SurvPoint]) -> tuple[float, float]:
    """Mantel-Haenszel chi-square statistic and its 1-dof p-value."""
    if not group_a or not group_b:
        raise ValueError("both groups must be nonempty")
    ta = np.array([p.time for p in group_a])
    ea = np.array([p.event for p in group_a], dtype=bool)
    tb = np.array([p.time for p in group_b])
    eb = np.array([p.event for p in group_b], dtype=bool)
    event_times = np.unique(np.concatenate([ta[ea], tb[eb]]))
    if event_times.size == 0:
        raise ValueError("degenerate log-rank: no events")
    o_minus_e = 0.0
    var = 0.0
    for u in event_times:
        n_a = int((ta >= u).sum())
        n_b = int((tb >= u).sum())
        d_a = int((ea & (ta == u)).sum())
        d_b = int((eb & (tb == u)).sum())
        n = n_a + n_b
        d = d_a + d_b
        if n < 2 or d == 0:
            continue
        o_minus_e += d_a - d * n_a / n
        var += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1)
    if var <= 0:
        raise ValueError("degenerate log-rank: zero variance")
    chi2 = o_minus_e**2 / var
    return float(chi2), chi2_sf_1dof(chi2)


def chi2_sf_1dof(x: float) -> float:
    """P(X > x) for chi-square with 1 dof: regularized upper gamma Q(1/2, x/2)."""
    if x < 0:
        raise ValueError("chi-square statistic must be nonnegative")
    return _gammaincc(0.5, x / 2.0)


def _gammaincc(a: float, x: float, tol: float = 1e-12, max_iter: int = 500) -> float:
    """Regularized upper incomplete gamma via series / continued fraction."""
    if x == 0:
        return 1.0
    if x < a + 1.0:
        # lower series, then complement
        term = 1.0 / a
        total = term
        k = a
        for _ in range(max_iter):
            k += 1.0
            term *= x / k
            total += term
            if abs(term) < abs(total) * tol:
                break
        p = total * math.exp(-x + a * math.log(x) - math.lgamma(a))
        return 1.0 - p
    # Lentz continued fraction for the upper function
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def stratify_median(points: list[SurvPoint]) -> tuple[list[SurvPoint], list[SurvPoint]]:
    """Split at the median risk: strictly above -> high, rest -> low."""
    if len(points) < 2:
        raise ValueError("at least two points required")
    med = float(np.median([p.risk for p in points]))
    high = [p for p in points if p.risk > med]
    low = [p for p in points if p.risk <= med]
    return high, low


def write_km_export(path, curves: list[KMCurve]) -> None:
    """Delimited text `group,time,survival,at_risk` suitable for plotting."""
    with open(path, "w") as fh:
        fh.write("group,time,survival,at_risk\n")
        for c in curves:
            if c.times.size == 0 or c.times[0] > 0:
                fh.write(f"{c.group},0.0,1.0,{c.n_start}\n")
            for t, s, n in zip(c.times, c.survival, c.at_risk):
                fh.write(f"{c.group},{float(t)!r},{float(s)!r},{int(n)}\n")
