"""Dataset factory and experiment driver.

Runs multi-CRF encode sweeps against either a real external encoder
(subprocess with a command template) or a hermetic synthetic encoder
backed by planted CRF-bitrate curves, fits per-clip labels, assembles
JSONL training datasets, and executes per-GOP encode plans.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import os
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CarfError
from .decision import EncodePlan
from .features import GopFeatures, aggregate_gop
from .lookahead import LookaheadParams, analyze_sequence, segment_gops
from .rate_model import (
    RateModelFit,
    RateModelParams,
    RateObservation,
    fit_rate_model,
    solve_bitrate_for_crf,
)
from .video import VideoSequence, load_y4m, save_y4m

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_CRF_SET",
    "ENCODER_ENV_VAR",
    "EncoderError",
    "ClipRef",
    "SyntheticEncoder",
    "ExternalEncoder",
    "run_crf_sweep",
    "DatasetRecord",
    "DatasetConfig",
    "BuildSummary",
    "build_dataset",
    "load_dataset",
    "GopResult",
    "PlanExecution",
    "execute_plan",
    "source_bitrate_from_file",
    "write_manifest",
]

# The sweep the label fits are built from: CRF 12 through 40, step 2.
DEFAULT_CRF_SET = tuple(float(c) for c in range(12, 41, 2))
ENCODER_ENV_VAR = "CARF_ENCODER"


class EncoderError(CarfError):
    """An encode invocation failed (process error, timeout, bad output)."""


@dataclass(frozen=True)
class ClipRef:
    """Handle the backends encode by: an id plus, for file-based encoders,
    a path and duration."""

    clip_id: str
    duration_seconds: float
    path: Path | None = None


def source_bitrate_from_file(path: str | Path, duration_seconds: float) -> float:
    """Fallback source bitrate: container size * 8 / duration, in kbps."""
    if duration_seconds <= 0:
        raise ValueError("duration must be positive")
    return Path(path).stat().st_size * 8.0 / duration_seconds / 1000.0


def _stable_rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True)
class SyntheticEncoder:
    """Hermetic encoder stand-in: each clip owns a planted CRF-bitrate
    curve; sweeps observe it under multiplicative log-normal noise, plan
    execution reads it noise-free."""

    planted: dict[str, RateModelParams]
    noise_sigma: float = 0.05
    seed: int = 0

    def _curve(self, clip_id: str) -> RateModelParams:
        try:
            return self.planted[clip_id]
        except KeyError:
            raise EncoderError(f"no planted curve for clip {clip_id!r}") from None

    def sweep_encode(self, clip: ClipRef, crf: float) -> tuple[float, float]:
        start = time.perf_counter()
        bitrate = solve_bitrate_for_crf(self._curve(clip.clip_id), crf)
        if self.noise_sigma > 0:
            rng = _stable_rng(self.seed, clip.clip_id, f"{crf:.4f}")
            bitrate *= float(np.exp(self.noise_sigma * rng.standard_normal()))
        return bitrate, time.perf_counter() - start

    def plan_encode(self, clip: ClipRef, crf: float) -> tuple[float, float]:
        start = time.perf_counter()
        bitrate = solve_bitrate_for_crf(self._curve(clip.clip_id), crf)
        return bitrate, time.perf_counter() - start


@dataclass(frozen=True)
class ExternalEncoder:
    """Subprocess encoder driven by a command template with {input},
    {crf}, {output} placeholders; bitrate is measured from the output
    file size over the clip duration."""

    command_template: str
    workdir: Path
    timeout_seconds: float = 600.0

    @classmethod
    def from_template(cls, template: str, workdir: str | Path,
                      timeout_seconds: float = 600.0) -> "ExternalEncoder":
        template = os.environ.get(ENCODER_ENV_VAR, template)
        for placeholder in ("{input}", "{crf}", "{output}"):
            if placeholder not in template:
                raise ValueError(f"encoder template is missing {placeholder}")
        return cls(command_template=template, workdir=Path(workdir),
                   timeout_seconds=timeout_seconds)

    def _encode(self, clip: ClipRef, crf: float) -> tuple[float, float]:
        if clip.path is None:
            raise EncoderError(f"clip {clip.clip_id!r} has no input file")
        self.workdir.mkdir(parents=True, exist_ok=True)
        out_path = self.workdir / f"{clip.clip_id}_crf{crf:.1f}.bin"
        cmd = [
            part.format(input=str(clip.path), crf=f"{crf:.1f}",
                        output=str(out_path))
            for part in shlex.split(self.command_template)
        ]
        start = time.perf_counter()
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True,
                                  timeout=self.timeout_seconds)
        except subprocess.TimeoutExpired as exc:
            raise EncoderError(
                f"encoder timed out after {self.timeout_seconds}s: "
                f"{' '.join(cmd)}"
            ) from exc
        elapsed = time.perf_counter() - start
        if proc.returncode != 0:
            raise EncoderError(
                f"encoder exited {proc.returncode}: {' '.join(cmd)}\n"
                f"stderr: {proc.stderr.strip()[-500:]}"
            )
        if not out_path.exists() or out_path.stat().st_size == 0:
            raise EncoderError(
                f"encoder produced no output: {' '.join(cmd)}"
            )
        bitrate = source_bitrate_from_file(out_path, clip.duration_seconds)
        return bitrate, elapsed

    def sweep_encode(self, clip: ClipRef, crf: float) -> tuple[float, float]:
        return self._encode(clip, crf)

    def plan_encode(self, clip: ClipRef, crf: float) -> tuple[float, float]:
        return self._encode(clip, crf)


def run_crf_sweep(backend, clip: ClipRef,
                  crf_set: Sequence[float] = DEFAULT_CRF_SET
                  ) -> list[RateObservation]:
    """Encode the clip once per CRF and return the measured observations."""
    if not crf_set:
        raise ValueError("empty crf_set")
    for c in crf_set:
        if not 0.0 <= c <= 51.0:
            raise ValueError(f"crf {c} outside [0, 51]")
    obs = []
    for crf in crf_set:
        bitrate, _ = backend.sweep_encode(clip, crf)
        obs.append(RateObservation(crf=float(crf), bitrate=float(bitrate)))
    return obs


# ---------------------------------------------------------------------------
# Dataset building


@dataclass(frozen=True)
class DatasetRecord:
    clip_id: str
    n_frames: int
    features: GopFeatures
    label: RateModelParams
    residual_rms: float
    observations: tuple[RateObservation, ...]

    def to_json_line(self) -> str:
        doc = {
            "clip_id": self.clip_id,
            "n_frames": self.n_frames,
            "features": self.features.to_dict(),
            "label": {"a": self.label.a, "b": self.label.b, "c": self.label.c},
            "residual_rms": self.residual_rms,
            "observations": [
                {"crf": o.crf, "bitrate": o.bitrate} for o in self.observations
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "DatasetRecord":
        doc = json.loads(line)
        return cls(
            clip_id=doc["clip_id"],
            n_frames=int(doc["n_frames"]),
            features=GopFeatures(**doc["features"]),
            label=RateModelParams(**doc["label"]),
            residual_rms=float(doc["residual_rms"]),
            observations=tuple(
                RateObservation(crf=o["crf"], bitrate=o["bitrate"])
                for o in doc["observations"]
            ),
        )


@dataclass(frozen=True)
class DatasetConfig:
    crf_set: tuple[float, ...] = DEFAULT_CRF_SET
    lookahead: LookaheadParams = field(default_factory=LookaheadParams)
    workers: int = 1


@dataclass
class BuildSummary:
    records: list[DatasetRecord]
    skipped: list[tuple[str, str]]  # (clip_id, reason)

    def describe(self) -> str:
        lines = [
            f"clips accepted: {len(self.records)}",
            f"clips skipped:  {len(self.skipped)}",
        ]
        if self.records:
            rms = np.array([r.residual_rms for r in self.records])
            frames = np.array([r.n_frames for r in self.records])
            lines.append(f"label fit residual RMS: mean {rms.mean():.4f} "
                         f"max {rms.max():.4f}")
            lines.append(f"clip length frames: min {frames.min()} "
                         f"max {frames.max()}")
        for clip_id, reason in self.skipped:
            lines.append(f"skipped {clip_id}: {reason}")
        return "\n".join(lines)


def _clip_features(video: VideoSequence, clip_id: str,
                   config: DatasetConfig) -> tuple[GopFeatures | None, str]:
    """Single-scene validation plus feature extraction for one clip."""
    stats = analyze_sequence(video, config.lookahead)
    spans = segment_gops(stats, config.lookahead.keyint_min,
                         config.lookahead.keyint_max,
                         config.lookahead.scenecut_bias)
    if len(spans) != 1:
        return None, f"multiple scenes ({len(spans)} GOPs)"
    feats = aggregate_gop(stats, video.frames, video.fps, video.source_bitrate)
    return feats, ""


def _load_clip(path: Path) -> VideoSequence:
    video = load_y4m(path)
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        if "source_bitrate_kbps" in meta:
            return video.with_source_bitrate(float(meta["source_bitrate_kbps"]))
    return video.with_source_bitrate(
        source_bitrate_from_file(path, video.duration_seconds)
    )


def _build_one(path: Path, backend, config: DatasetConfig
               ) -> tuple[str, DatasetRecord | None, str]:
    clip_id = path.stem
    video = _load_clip(path)
    feats, reason = _clip_features(video, clip_id, config)
    if feats is None:
        return clip_id, None, reason
    clip = ClipRef(clip_id=clip_id, duration_seconds=video.duration_seconds,
                   path=path)
    obs = run_crf_sweep(backend, clip, config.crf_set)
    fit: RateModelFit = fit_rate_model(obs)
    record = DatasetRecord(
        clip_id=clip_id,
        n_frames=video.n_frames,
        features=feats,
        label=fit.params,
        residual_rms=fit.residual_rms,
        observations=tuple(obs),
    )
    return clip_id, record, ""


def build_dataset(corpus_dir: str | Path, backend,
                  config: DatasetConfig | None = None,
                  out_path: str | Path | None = None) -> BuildSummary:
    """Turn a directory of single-scene clips into labeled dataset rows.

    Clips that segment into more than one GOP are skipped with a logged
    reason. Output order follows sorted clip filenames regardless of
    worker count, so builds are reproducible.
    """
    config = config or DatasetConfig()
    paths = sorted(Path(corpus_dir).glob("*.y4m"))
    if not paths:
        raise ValueError(f"no .y4m clips under {corpus_dir}")

    results: list[tuple[str, DatasetRecord | None, str]]
    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(config.workers) as pool:
            results = list(
                pool.map(_build_one, paths, [backend] * len(paths),
                         [config] * len(paths))
            )
    else:
        results = [_build_one(p, backend, config) for p in paths]

    records: list[DatasetRecord] = []
    skipped: list[tuple[str, str]] = []
    for clip_id, record, reason in results:
        if record is None:
            log.info("skipped %s: %s", clip_id, reason)
            skipped.append((clip_id, reason))
        else:
            records.append(record)
    if not records:
        raise ValueError("all clips rejected")

    if out_path is not None:
        text = "".join(r.to_json_line() + "\n" for r in records)
        Path(out_path).write_text(text)
    return BuildSummary(records=records, skipped=skipped)


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(DatasetRecord.from_json_line(line))
    return records


# ---------------------------------------------------------------------------
# Plan execution


@dataclass(frozen=True)
class GopResult:
    start_frame: int
    end_frame: int
    crf: float
    bitrate_kbps: float


@dataclass(frozen=True)
class PlanExecution:
    gops: tuple[GopResult, ...]
    total_bitrate_kbps: float
    wall_seconds: float
    target_bitrate_kbps: float


def execute_plan(backend, clip: ClipRef, video: VideoSequence,
                 plan: EncodePlan) -> PlanExecution:
    """Encode each GOP at its planned CRF and report realized bitrates.

    The total is the duration-weighted mean of the per-GOP bitrates. The
    external backend re-invokes the encoder per span on a temporary cut
    of the span's frames.
    """
    if plan.n_frames != video.n_frames:
        raise ValueError(
            f"plan covers {plan.n_frames} frames, video has {video.n_frames}"
        )
    gops = []
    wall = 0.0
    weighted = 0.0
    total_frames = 0
    for entry in plan.entries:
        span = entry.span
        n = span.n_frames
        if isinstance(backend, ExternalEncoder):
            span_seq = VideoSequence(
                width=video.width, height=video.height,
                fps_num=video.fps_num, fps_den=video.fps_den,
                frames=video.frames[span.start_frame : span.end_frame + 1],
            )
            backend.workdir.mkdir(parents=True, exist_ok=True)
            span_path = backend.workdir / (
                f"{clip.clip_id}_g{span.start_frame:06d}.y4m"
            )
            save_y4m(span_seq, span_path)
            span_clip = ClipRef(
                clip_id=f"{clip.clip_id}_g{span.start_frame:06d}",
                duration_seconds=span_seq.duration_seconds,
                path=span_path,
            )
            bitrate, seconds = backend.plan_encode(span_clip, entry.crf)
        else:
            bitrate, seconds = backend.plan_encode(clip, entry.crf)
        gops.append(GopResult(span.start_frame, span.end_frame, entry.crf,
                              bitrate))
        wall += seconds
        weighted += bitrate * n
        total_frames += n
    return PlanExecution(
        gops=tuple(gops),
        total_bitrate_kbps=weighted / total_frames,
        wall_seconds=wall,
        target_bitrate_kbps=plan.target_bitrate,
    )


def write_manifest(run_dir: str | Path, payload: dict) -> Path:
    """Drop a manifest.json describing a run's inputs and artifacts."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path
