"""Synthetic experiment world: corpora of single-scene clips whose true
CRF-bitrate curves are planted as a fixed, deterministic function of the
clips' own lookahead features.

This gives the training pipeline a ground truth it can in principle
recover exactly, so end-to-end accuracy measures model quality rather
than label noise. The planted curves are kept inside ranges where the
falling branch covers the whole sweep CRF set over sane bitrates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import FEATURE_NAMES, GopFeatures
from .lookahead import LookaheadParams
from .orchestrator import DatasetConfig, _clip_features, _load_clip
from .rate_model import RateModelParams
from .video import (
    FlatPattern,
    SyntheticSpec,
    TranslatePattern,
    save_y4m,
    synth_sequence,
)

__all__ = [
    "planted_params_from_features",
    "CorpusManifest",
    "generate_corpus",
    "load_manifest",
    "save_manifest",
]

# Rough feature location/scale for 64x64 corpus clips; only used to keep
# the latent mixing weights O(1), not fitted to any particular corpus.
_FEATURE_LOC = {
    "pred_cost_score": 900.0,
    "pixel_sum_y": 525000.0,
    "pixel_sum_u": 131000.0,
    "pixel_sum_v": 131000.0,
    "pixel_sqsum_y": 73e6,
    "pixel_sqsum_u": 16.8e6,
    "pixel_sqsum_v": 16.8e6,
    "ac_score": 18000.0,
    "intra_mb_pct": 1.0,
    "mv_len_mean": 2.0,
    "source_bitrate": 2000.0,
    "fps": 38.0,
}
_FEATURE_SCALE = {
    "pred_cost_score": 950.0,
    "pixel_sum_y": 145000.0,
    "pixel_sum_u": 1700.0,
    "pixel_sum_v": 1900.0,
    "pixel_sqsum_y": 35e6,
    "pixel_sqsum_u": 430000.0,
    "pixel_sqsum_v": 470000.0,
    "ac_score": 20000.0,
    "intra_mb_pct": 2.0,
    "mv_len_mean": 1.3,
    "source_bitrate": 1000.0,
    "fps": 14.0,
}
_U_WEIGHTS = {  # spatial-complexity latent
    "ac_score": 1.0,
    "pixel_sqsum_y": 0.5,
    "pred_cost_score": 0.4,
    "intra_mb_pct": 0.3,
}
_V_WEIGHTS = {  # temporal-complexity latent
    "mv_len_mean": 1.0,
    "pred_cost_score": 0.5,
    "source_bitrate": 0.3,
    "fps": -0.3,
}
_LN_1MBPS = math.log(1000.0)


def _latent(features: GopFeatures, weights: dict[str, float]) -> float:
    total = 0.0
    for name, w in weights.items():
        z = (getattr(features, name) - _FEATURE_LOC[name]) / _FEATURE_SCALE[name]
        total += w * z
    return math.tanh(0.6 * total)


def planted_params_from_features(features: GopFeatures) -> RateModelParams:
    """Fixed mapping from a clip's features to its true curve.

    Two squashed complexity latents steer curvature, slope, and the CRF
    anchored at 1 Mbps; by construction every produced curve is strictly
    falling across the sweep CRF range.
    """
    u = _latent(features, _U_WEIGHTS)
    v = _latent(features, _V_WEIGHTS)
    a = 0.10 + 0.02 * u
    b = -6.5 - 0.8 * v
    crf_at_1mbps = 30.0 + 6.0 * u + 3.0 * v
    c = crf_at_1mbps - a * _LN_1MBPS * _LN_1MBPS - b * _LN_1MBPS
    return RateModelParams(a=a, b=b, c=c)


@dataclass(frozen=True)
class _ClipKnobs:
    n_frames: int
    fps: int
    source_bitrate: float
    pattern: object


def _draw_knobs(rng: np.random.Generator) -> _ClipKnobs:
    n_frames = int(rng.integers(75, 141))
    fps = int(rng.choice([24, 25, 30, 50, 60]))
    source_bitrate = float(np.clip(np.exp(rng.normal(np.log(1800.0), 0.5)),
                                   300.0, 9000.0))
    kind = rng.random()
    if kind < 0.12:
        pattern = FlatPattern(luma=int(rng.integers(30, 221)))
    else:
        if kind < 0.70:
            # even shifts track exactly at analysis resolution
            dx, dy = 2 * int(rng.integers(-3, 4)), 2 * int(rng.integers(-3, 4))
            blur = int(rng.choice([3, 5, 7, 9]))
        else:
            # sub-pel phase error stays tolerable only for small shifts
            # on smooth textures; larger ones read as scene churn
            dx, dy = int(rng.integers(-3, 4)), int(rng.integers(-3, 4))
            blur = int(rng.choice([7, 9]))
        pattern = TranslatePattern(
            dx=dx, dy=dy,
            seed=int(rng.integers(0, 2**31)),
            blur=blur,
            contrast=float(rng.uniform(0.3, 1.0)),
            brightness=int(rng.integers(-40, 41)),
            chroma_amp=float(rng.uniform(0.1, 0.5)),
        )
    return _ClipKnobs(n_frames=n_frames, fps=fps,
                      source_bitrate=source_bitrate, pattern=pattern)


@dataclass(frozen=True)
class CorpusManifest:
    """What a generated corpus planted: per-clip true curves plus the
    analyzer settings its features were computed with (dataset builds
    must reuse them for the planted mapping to stay exact)."""

    planted: dict[str, RateModelParams]
    lookahead: LookaheadParams


def generate_corpus(out_dir: str | Path, n_clips: int, seed: int = 0,
                    width: int = 64, height: int = 64,
                    lookahead: LookaheadParams | None = None
                    ) -> CorpusManifest:
    """Write n_clips single-scene y4m clips plus sidecar metadata and a
    planted.json manifest mapping clip ids to their true curves.

    Deterministic for a fixed seed. The default analyzer uses a reduced
    search range; corpus motion never exceeds 3 px at analysis
    resolution.
    """
    if n_clips <= 0:
        raise ValueError("n_clips must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lookahead = lookahead or LookaheadParams(search_range=8)
    config = DatasetConfig(lookahead=lookahead)

    planted: dict[str, RateModelParams] = {}
    for i in range(n_clips):
        clip_id = f"clip{i:05d}"
        path = out_dir / f"{clip_id}.y4m"
        for attempt in range(8):
            rng = np.random.default_rng([seed, i, attempt])
            knobs = _draw_knobs(rng)
            spec = SyntheticSpec(
                width=width, height=height, n_frames=knobs.n_frames,
                pattern=knobs.pattern, fps_num=knobs.fps, fps_den=1,
                source_bitrate=knobs.source_bitrate,
            )
            video = synth_sequence(spec)
            save_y4m(video, path)
            path.with_suffix(".json").write_text(json.dumps(
                {"source_bitrate_kbps": knobs.source_bitrate}, sort_keys=True
            ) + "\n")
            feats, reason = _clip_features(_load_clip(path), clip_id, config)
            if feats is not None:
                planted[clip_id] = planted_params_from_features(feats)
                break
        else:
            raise RuntimeError(
                f"could not draw a single-scene clip for {clip_id}: {reason}"
            )

    manifest = CorpusManifest(planted=planted, lookahead=lookahead)
    save_manifest(manifest, out_dir / "planted.json")
    return manifest


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    la = manifest.lookahead
    doc = {
        "lookahead": {
            "rc_lookahead": la.rc_lookahead,
            "keyint_min": la.keyint_min,
            "keyint_max": la.keyint_max,
            "scenecut_bias": la.scenecut_bias,
            "search_range": la.search_range,
        },
        "clips": {
            cid: {"a": p.a, "b": p.b, "c": p.c}
            for cid, p in manifest.planted.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_manifest(path: str | Path) -> CorpusManifest:
    doc = json.loads(Path(path).read_text())
    return CorpusManifest(
        planted={
            cid: RateModelParams(a=v["a"], b=v["b"], c=v["c"])
            for cid, v in doc["clips"].items()
        },
        lookahead=LookaheadParams(**doc["lookahead"]),
    )


def _feature_stats(samples: list[GopFeatures]) -> dict[str, tuple[float, float]]:
    """Diagnostic helper: per-feature mean/std over a corpus sample."""
    mat = np.stack([s.as_vector() for s in samples])
    return {
        name: (float(mat[:, i].mean()), float(mat[:, i].std()))
        for i, name in enumerate(FEATURE_NAMES)
    }
