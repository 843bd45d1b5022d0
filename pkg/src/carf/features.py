"""Per-GOP feature aggregation and z-score scaling.

A GOP's feature vector blends lookahead cost statistics (computed on
downsampled frames) with raw pixel statistics (computed on the full-res
frames) plus the source bitrate and frame rate. Cost-style features are
normalized to per-block, per-frame means so GOP length and picture size do
not leak into them. The first frame of a span is treated as the I frame;
all later frames as P.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .lookahead import FrameStats
from .video import Frame

__all__ = [
    "FEATURE_NAMES",
    "FEATURE_VERSION",
    "GopFeatures",
    "GopAccumulator",
    "aggregate_gop",
    "FeatureScaler",
    "fit_scaler",
    "apply_scaler",
    "inverse_scaler",
    "features_csv_header",
    "features_csv_row",
]

FEATURE_NAMES = (
    "pred_cost_score",
    "pixel_sum_y",
    "pixel_sum_u",
    "pixel_sum_v",
    "pixel_sqsum_y",
    "pixel_sqsum_u",
    "pixel_sqsum_v",
    "ac_score",
    "intra_mb_pct",
    "mv_len_mean",
    "source_bitrate",
    "fps",
)
FEATURE_VERSION = "gop-features-v1"


@dataclass(frozen=True)
class GopFeatures:
    pred_cost_score: float
    pixel_sum_y: float
    pixel_sum_u: float
    pixel_sum_v: float
    pixel_sqsum_y: float
    pixel_sqsum_u: float
    pixel_sqsum_v: float
    ac_score: float
    intra_mb_pct: float
    mv_len_mean: float
    source_bitrate: float
    fps: float

    def __post_init__(self):
        vec = self.as_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError("features must be finite")
        if np.any(vec < 0):
            raise ValueError("features must be >= 0")
        if not 0.0 <= self.intra_mb_pct <= 100.0:
            raise ValueError("intra_mb_pct outside [0, 100]")

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=np.float64)

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "GopFeatures":
        if len(vec) != len(FEATURE_NAMES):
            raise ValueError(f"expected {len(FEATURE_NAMES)} features, got {len(vec)}")
        return cls(**{n: float(v) for n, v in zip(FEATURE_NAMES, vec)})

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in FEATURE_NAMES}


class GopAccumulator:
    """Streaming aggregation over one GOP's frames.

    Feeding frames one by one (in display order) and finalizing gives
    bit-identical results to batch aggregation, so windowed pipelines can
    reuse it.
    """

    def __init__(self) -> None:
        self._n_frames = 0
        self._cost_score_sum = 0.0
        self._plane_sum = np.zeros(3)
        self._plane_sqsum = np.zeros(3)
        self._ac_sum = 0.0
        self._p_intra_mbs = 0
        self._p_total_mbs = 0
        self._mv_len_sum = 0.0
        self._mv_count = 0

    def add_frame(self, stats: FrameStats, frame: Frame) -> None:
        is_i = self._n_frames == 0  # span opener is the I frame
        cost = stats.intra_cost_total if is_i else stats.inter_cost_total
        self._cost_score_sum += cost / stats.total_mb_count
        for i, plane in enumerate((frame.y, frame.u, frame.v)):
            p = plane.astype(np.int64)
            self._plane_sum[i] += int(p.sum())
            self._plane_sqsum[i] += int((p * p).sum())
        self._ac_sum += stats.ac_energy_total / stats.total_mb_count
        if not is_i:
            self._p_intra_mbs += stats.intra_mb_count
            self._p_total_mbs += stats.total_mb_count
            for mb in stats.mb_list:
                if not mb.is_intra:
                    self._mv_len_sum += float(np.hypot(mb.mv[0], mb.mv[1]))
                    self._mv_count += 1
        self._n_frames += 1

    def finalize(self, fps: float, source_bitrate: float) -> GopFeatures:
        if self._n_frames == 0:
            raise ValueError("empty span")
        n = self._n_frames
        return GopFeatures(
            pred_cost_score=self._cost_score_sum / n,
            pixel_sum_y=self._plane_sum[0] / n,
            pixel_sum_u=self._plane_sum[1] / n,
            pixel_sum_v=self._plane_sum[2] / n,
            pixel_sqsum_y=self._plane_sqsum[0] / n,
            pixel_sqsum_u=self._plane_sqsum[1] / n,
            pixel_sqsum_v=self._plane_sqsum[2] / n,
            ac_score=self._ac_sum / n,
            intra_mb_pct=(
                100.0 * self._p_intra_mbs / self._p_total_mbs
                if self._p_total_mbs
                else 0.0
            ),
            mv_len_mean=(
                self._mv_len_sum / self._mv_count if self._mv_count else 0.0
            ),
            source_bitrate=float(source_bitrate),
            fps=float(fps),
        )


def aggregate_gop(stats: Sequence[FrameStats], frames: Sequence[Frame],
                  fps: float, source_bitrate: float) -> GopFeatures:
    """Aggregate one GOP's per-frame stats and full-res frames.

    ``stats`` and ``frames`` must cover the same contiguous frame run;
    the first entry is the GOP's I frame.
    """
    if not stats:
        raise ValueError("empty span")
    if len(stats) != len(frames):
        raise ValueError(f"{len(stats)} stats vs {len(frames)} frames")
    for prev, cur in zip(stats, stats[1:]):
        if cur.frame_index != prev.frame_index + 1:
            raise ValueError("stats are not contiguous")
    acc = GopAccumulator()
    for s, f in zip(stats, frames):
        acc.add_frame(s, f)
    return acc.finalize(fps, source_bitrate)


# ---------------------------------------------------------------------------
# Scaling


@dataclass(frozen=True)
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray
    version: str = FEATURE_VERSION

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean/std must be matching 1D vectors")
        if np.any(self.std <= 0):
            raise ValueError("std must be positive (degenerate columns get 1)")


def fit_scaler(samples: Iterable[GopFeatures]) -> FeatureScaler:
    """Per-feature population mean/std; constant columns get std 1."""
    mat = np.stack([s.as_vector() for s in samples])
    if mat.shape[0] < 2:
        raise ValueError("need at least 2 samples to fit a scaler")
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)
    std = np.where(std < 1e-9, 1.0, std)
    return FeatureScaler(mean=mean, std=std)


def apply_scaler(scaler: FeatureScaler, features: GopFeatures,
                 version: str = FEATURE_VERSION) -> np.ndarray:
    if scaler.version != version:
        raise ValueError(
            f"feature version mismatch: scaler {scaler.version!r} vs {version!r}"
        )
    return (features.as_vector() - scaler.mean) / scaler.std


def inverse_scaler(scaler: FeatureScaler, scaled: np.ndarray) -> np.ndarray:
    return scaled * scaler.std + scaler.mean


def features_csv_header() -> str:
    return ",".join(FEATURE_NAMES)


def features_csv_row(features: GopFeatures) -> str:
    return ",".join(repr(float(v)) for v in features.as_vector())
