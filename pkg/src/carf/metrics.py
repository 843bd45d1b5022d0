"""Evaluation metrics: bitrate error and its CDF, BD-rate between RD
curves, encode-time ratios, and bits/quality fluctuation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "RdPoint",
    "bitrate_error",
    "error_cdf",
    "pct_within",
    "bd_rate",
    "time_ratio",
    "geo_mean",
    "time_ratio_geomean",
    "fluctuation",
    "format_bd_table",
]


@dataclass(frozen=True)
class RdPoint:
    bitrate: float  # kbps
    quality: float  # PSNR dB or an externally computed VMAF/SSIM score

    def __post_init__(self):
        if self.bitrate <= 0:
            raise ValueError(f"bitrate must be positive, got {self.bitrate}")


def bitrate_error(actual_kbps: float, target_kbps: float) -> float:
    """|actual - target| / target, in percent."""
    if target_kbps <= 0:
        raise ValueError(f"target must be positive, got {target_kbps}")
    return abs(actual_kbps - target_kbps) / target_kbps * 100.0


def error_cdf(errors: Sequence[float]) -> list[tuple[float, float]]:
    """(threshold, cumulative fraction) pairs over the sorted error values."""
    if not len(errors):
        raise ValueError("empty error list")
    values = np.sort(np.asarray(errors, dtype=np.float64))
    n = len(values)
    out = []
    for i, v in enumerate(values):
        if i + 1 < n and values[i + 1] == v:
            continue  # collapse duplicates onto the last occurrence
        out.append((float(v), (i + 1) / n))
    return out


def pct_within(errors: Sequence[float], threshold: float) -> float:
    """Percent of errors at or below the threshold."""
    if not len(errors):
        raise ValueError("empty error list")
    values = np.asarray(errors, dtype=np.float64)
    return float((values <= threshold).mean() * 100.0)


def _check_curve(points: Sequence[RdPoint], name: str) -> tuple[np.ndarray, np.ndarray]:
    if len(points) < 4:
        raise ValueError(f"{name} curve needs >= 4 points, got {len(points)}")
    rates = np.array([p.bitrate for p in points])
    quality = np.array([p.quality for p in points])
    if not np.all(np.diff(rates) > 0):
        raise ValueError(f"{name} curve must be sorted by strictly increasing bitrate")
    return rates, quality


def bd_rate(anchor: Sequence[RdPoint], test: Sequence[RdPoint],
            method: str = "cubic") -> float:
    """Average bitrate difference of test vs anchor at equal quality (%).

    Negative means the test curve spends less rate. The default fits a
    cubic in quality to log10(rate) and integrates analytically over the
    overlapping quality range; ``method="pchip"`` switches to piecewise
    monotone interpolation.
    """
    a_rate, a_q = _check_curve(anchor, "anchor")
    t_rate, t_q = _check_curve(test, "test")
    lo = max(a_q.min(), t_q.min())
    hi = min(a_q.max(), t_q.max())
    if hi <= lo:
        raise ValueError(f"no quality overlap (anchor [{a_q.min()}, {a_q.max()}], "
                         f"test [{t_q.min()}, {t_q.max()}])")
    a_log = np.log10(a_rate)
    t_log = np.log10(t_rate)

    if method == "cubic":
        p_a = np.polyint(np.polyfit(a_q, a_log, 3))
        p_t = np.polyint(np.polyfit(t_q, t_log, 3))
        int_a = np.polyval(p_a, hi) - np.polyval(p_a, lo)
        int_t = np.polyval(p_t, hi) - np.polyval(p_t, lo)
    elif method == "pchip":
        from scipy import interpolate

        qs = np.linspace(lo, hi, 200)
        v_a = interpolate.pchip_interpolate(a_q, a_log, qs)
        v_t = interpolate.pchip_interpolate(t_q, t_log, qs)
        int_a = np.trapz(v_a, qs)
        int_t = np.trapz(v_t, qs)
    else:
        raise ValueError(f"unknown method {method!r}")

    avg_diff = (int_t - int_a) / (hi - lo)
    return float((10.0**avg_diff - 1.0) * 100.0)


def time_ratio(t_test: float, t_anchor: float, mode: str = "ratio") -> float:
    """Encode-time comparison at one rate point, in percent.

    ``ratio`` reports t_test / t_anchor * 100 (the reading that matches
    published overall runtime tables); ``absdiff`` reports the relative
    absolute difference |t_test - t_anchor| / t_anchor * 100.
    """
    if t_anchor <= 0:
        raise ValueError(f"anchor time must be positive, got {t_anchor}")
    if mode == "ratio":
        return t_test / t_anchor * 100.0
    if mode == "absdiff":
        return abs(t_test - t_anchor) / t_anchor * 100.0
    raise ValueError(f"unknown mode {mode!r}")


def geo_mean(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=np.float64)
    if not len(arr):
        raise ValueError("empty value list")
    if np.any(arr < 0):
        raise ValueError("geometric mean needs nonnegative values")
    if np.any(arr == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(arr))))


def time_ratio_geomean(test_times: Sequence[float], anchor_times: Sequence[float],
                       mode: str = "ratio") -> float:
    """Geometric mean of per-rate-point time comparisons."""
    if len(test_times) != len(anchor_times):
        raise ValueError(f"{len(test_times)} test vs {len(anchor_times)} anchor times")
    return geo_mean([time_ratio(t, a, mode) for t, a in zip(test_times, anchor_times)])


def fluctuation(series: Sequence[float]) -> float:
    """Coefficient of variation (population std / mean) of a per-frame
    bits or quality series."""
    arr = np.asarray(series, dtype=np.float64)
    if not len(arr):
        raise ValueError("empty series")
    mean = arr.mean()
    if mean == 0:
        raise ValueError("series mean is zero")
    return float(arr.std() / mean)


def format_bd_table(rows: Sequence[tuple[str, dict[str, float]]],
                    metrics: Sequence[str], anchor_name: str = "anchor") -> str:
    """Fixed-layout BD-rate table: one row per sequence, one column per
    quality metric, closed by an overall (mean) row."""
    if not rows:
        raise ValueError("no rows")
    lines = [f"Result of BD-Rate(%) over {anchor_name}"]
    header = "sequence".ljust(12) + "".join(m.rjust(10) for m in metrics)
    lines.append(header)
    sums = {m: 0.0 for m in metrics}
    for name, values in rows:
        cells = []
        for m in metrics:
            v = values[m]
            sums[m] += v
            cells.append(f"{v:10.2f}")
        lines.append(name.ljust(12) + "".join(cells))
    overall = "overall".ljust(12) + "".join(
        f"{sums[m] / len(rows):10.2f}" for m in metrics
    )
    lines.append(overall)
    return "\n".join(lines) + "\n"
