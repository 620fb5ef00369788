"""Per-user performance measures: strictly increasing maps g(SINR) with g(0) = 0.

Error-type measures (MSE, SER) are handled through the decreasing-measure
transform g(s) = g~(0) - g~(s), so every metric is maximized internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

#: kinds accepted in scenario files
METRIC_KINDS = ("rate", "mse", "ser4qam", "table")

#: bracket and tolerance for the numeric inverse of ser4qam
_SER_INV_HI = 1e8
_SER_INV_ATOL = 1e-10


class MetricRangeError(ValueError):
    """Requested value lies outside the metric's attainable range."""


def gaussian_q(x):
    """Standard Gaussian tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def ser_4qam(sinr):
    """Symbol error rate of Gray-mapped 4-QAM at the given SINR (exact form)."""
    q = gaussian_q(np.sqrt(np.asarray(sinr, dtype=float)))
    return 2.0 * q - q * q


@dataclass(frozen=True)
class PerformanceMetric:
    """Descriptor of one user's performance function.

    kind:
        'rate'     achievable rate log2(1 + s)
        'mse'      1 - MMSE = s / (1 + s)   (decreasing measure g~(s) = 1/(1+s))
        'ser4qam'  0.75 - SER_4QAM(s)       (decreasing measure g~ = exact 4-QAM SER)
        'table'    monotone linear interpolation through `table` breakpoints,
                   a tuple of (sinr, value) pairs starting at (0.0, 0.0)
    """

    kind: str = "rate"
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "table":
            pts = tuple((float(s), float(v)) for s, v in self.table)
            if len(pts) < 2:
                raise ValueError("table metric needs at least two breakpoints")
            if pts[0] != (0.0, 0.0):
                raise ValueError("table metric must start at (0, 0)")
            ss = [p[0] for p in pts]
            vs = [p[1] for p in pts]
            if any(b <= a for a, b in zip(ss, ss[1:])) or any(
                b <= a for a, b in zip(vs, vs[1:])
            ):
                raise ValueError("table breakpoints must be strictly increasing")
            object.__setattr__(self, "table", pts)
        elif self.table:
            raise ValueError("table breakpoints only apply to the 'table' kind")

    @property
    def sup_value(self) -> float:
        """Supremum of g over all SINRs (inf for unbounded metrics)."""
        if self.kind == "rate":
            return math.inf
        if self.kind == "mse":
            return 1.0
        if self.kind == "ser4qam":
            return 0.75
        return self.table[-1][1]

    def value(self, sinr):
        """g(sinr); accepts scalars or arrays, rejects negative SINR."""
        s = np.asarray(sinr, dtype=float)
        if np.any(s < 0):
            raise ValueError("SINR must be nonnegative")
        if self.kind == "rate":
            out = np.log2(1.0 + s)
        elif self.kind == "mse":
            out = s / (1.0 + s)
        elif self.kind == "ser4qam":
            out = 0.75 - ser_4qam(s)
        else:
            ss, vs = zip(*self.table)
            if np.any(s > ss[-1]):
                raise MetricRangeError("SINR beyond last table breakpoint")
            out = np.interp(s, ss, vs)
        return out if out.ndim else float(out)

    def error_measure(self, sinr):
        """The raw decreasing measure g~(sinr), or None for increasing metrics."""
        s = np.asarray(sinr, dtype=float)
        if self.kind == "mse":
            out = 1.0 / (1.0 + s)
        elif self.kind == "ser4qam":
            out = ser_4qam(s)
        else:
            return None
        return out if out.ndim else float(out)

    def inverse(self, value) -> float:
        """The unique SINR s with g(s) = value.

        Raises MetricRangeError when `value` is not attainable (bounded
        metrics saturate; ser4qam is additionally limited to s <= 1e8).
        """
        v = float(value)
        if v < 0:
            raise MetricRangeError("metric values are nonnegative")
        if v == 0.0:
            return 0.0
        if self.kind == "rate":
            return float(np.expm1(v * math.log(2.0)))
        if self.kind == "mse":
            if v >= 1.0:
                raise MetricRangeError(f"mse metric saturates below 1, got {v}")
            return v / (1.0 - v)
        if self.kind == "ser4qam":
            return self._inverse_ser(v)
        ss, vs = zip(*self.table)
        if v > vs[-1]:
            raise MetricRangeError("value beyond last table breakpoint")
        return float(np.interp(v, vs, ss))

    def _inverse_ser(self, v: float) -> float:
        lo, hi = 0.0, _SER_INV_HI
        if v >= 0.75 or v > 0.75 - ser_4qam(hi):
            raise MetricRangeError(f"ser4qam metric cannot reach {v}")
        # monotone bisection; unconditionally convergent
        while hi - lo > _SER_INV_ATOL:
            mid = 0.5 * (lo + hi)
            if 0.75 - ser_4qam(mid) < v:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def g(metric: PerformanceMetric, sinr):
    """Evaluate the performance function of `metric` at `sinr`."""
    return metric.value(sinr)


def g_inverse(metric: PerformanceMetric, value) -> float:
    """Invert the performance function of `metric`."""
    return metric.inverse(value)


def metric_to_dict(metric: PerformanceMetric) -> dict:
    if metric.kind == "table":
        return {"metric": "table", "points": [list(p) for p in metric.table]}
    return {"metric": metric.kind}


def metric_from_dict(data: dict) -> PerformanceMetric:
    kind = data.get("metric")
    if kind == "table":
        return PerformanceMetric("table", tuple(tuple(p) for p in data["points"]))
    return PerformanceMetric(str(kind))
