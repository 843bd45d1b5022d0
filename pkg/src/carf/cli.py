"""Command-line entry point.

Subcommands cover the whole pipeline: synthetic clip/corpus generation,
lookahead analysis, dataset building, model training, per-GOP CRF
planning, plan execution, and result evaluation/reporting.

Exit codes: 0 success, 1 data/processing error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import CarfError
from . import decision, metrics, network, orchestrator, planted, video
from .features import FEATURE_NAMES
from .lookahead import LookaheadParams, analyze_sequence, frame_stats_record, segment_gops
from .network import TrainConfig, TrainingSample
from .orchestrator import (
    DEFAULT_CRF_SET,
    ClipRef,
    DatasetConfig,
    ExternalEncoder,
    SyntheticEncoder,
    load_dataset,
    source_bitrate_from_file,
)
from .rate_model import RateObservation, fit_rate_model


def _add_lookahead_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rc-lookahead", type=int, default=100,
                   help="lookahead window length in frames")
    p.add_argument("--min-keyint", type=int, default=40,
                   help="minimum GOP length")
    p.add_argument("--max-keyint", type=int, default=250,
                   help="maximum GOP length")
    p.add_argument("--scenecut-bias", type=float, default=0.4,
                   help="scene-cut sensitivity (0 disables)")
    p.add_argument("--search-range", type=int, default=16,
                   help="motion search range in analysis pixels")


def _lookahead_params(args) -> LookaheadParams:
    return LookaheadParams(
        rc_lookahead=args.rc_lookahead,
        keyint_min=args.min_keyint,
        keyint_max=args.max_keyint,
        scenecut_bias=args.scenecut_bias,
        search_range=args.search_range,
    )


def _load_video(path: str, source_bitrate: float | None) -> video.VideoSequence:
    seq = video.load_y4m(path)
    if source_bitrate is not None:
        return seq.with_source_bitrate(source_bitrate)
    return seq.with_source_bitrate(
        source_bitrate_from_file(path, seq.duration_seconds)
    )


def _parse_crf_set(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _make_backend(args) -> SyntheticEncoder | ExternalEncoder:
    if args.backend == "synthetic":
        if not args.planted:
            raise CarfError("synthetic backend needs --planted manifest")
        manifest = planted.load_manifest(args.planted)
        return SyntheticEncoder(planted=manifest.planted,
                                noise_sigma=args.noise_sigma, seed=args.seed)
    if not args.encoder_cmd:
        raise CarfError("external backend needs --encoder-cmd")
    workdir = Path(args.out_dir) / "encodes"
    return ExternalEncoder.from_template(args.encoder_cmd, workdir)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    spec = video.SyntheticSpec(
        width=args.width, height=args.height, n_frames=args.frames,
        pattern=video.pattern_from_string(args.pattern),
        fps_num=args.fps_num, fps_den=args.fps_den,
        source_bitrate=args.source_bitrate,
    )
    seq = video.synth_sequence(spec)
    video.save_y4m(seq, args.out)
    print(f"wrote {args.out}: {seq.n_frames} frames "
          f"{seq.width}x{seq.height} @ {seq.fps:.3f} fps")
    return 0


def cmd_synth_corpus(args) -> int:
    manifest = planted.generate_corpus(
        args.out_dir, args.clips, seed=args.seed,
        width=args.width, height=args.height,
    )
    print(f"wrote {len(manifest.planted)} clips under {args.out_dir} "
          f"(manifest: {Path(args.out_dir) / 'planted.json'})")
    return 0


def cmd_analyze(args) -> int:
    seq = _load_video(args.input, args.source_bitrate)
    params = _lookahead_params(args)
    stats = analyze_sequence(seq, params)
    spans = segment_gops(stats, params.keyint_min, params.keyint_max,
                         params.scenecut_bias)
    if args.stats_out:
        with open(args.stats_out, "w") as fh:
            for st in stats:
                fh.write(json.dumps(frame_stats_record(st), sort_keys=True) + "\n")
    if args.gops_out:
        doc = [
            {"start": s.start_frame, "end": s.end_frame,
             "scenecut": s.scenecut_triggered}
            for s in spans
        ]
        Path(args.gops_out).write_text(json.dumps(doc, indent=2) + "\n")
    print(f"{'gop':>4} {'start':>7} {'end':>7} {'frames':>7} scenecut")
    for i, s in enumerate(spans):
        print(f"{i:>4} {s.start_frame:>7} {s.end_frame:>7} "
              f"{s.n_frames:>7} {str(s.scenecut_triggered).lower()}")
    return 0


def cmd_dataset_build(args) -> int:
    backend = _make_backend(args)
    lookahead = _lookahead_params(args)
    if args.backend == "synthetic" and args.planted:
        # features must be computed the same way the corpus was planted
        lookahead = planted.load_manifest(args.planted).lookahead
    config = DatasetConfig(
        crf_set=_parse_crf_set(args.crf_set),
        lookahead=lookahead,
        workers=args.workers,
    )
    summary = orchestrator.build_dataset(args.corpus, backend, config,
                                         out_path=args.out)
    print(summary.describe())
    print(f"wrote {args.out}")
    return 0


def cmd_fit(args) -> int:
    obs = []
    with open(args.observations) as fh:
        for row in csv.DictReader(fh):
            obs.append(RateObservation(crf=float(row["crf"]),
                                       bitrate=float(row["bitrate"])))
    fit = fit_rate_model(obs)
    p = fit.params
    print(f"a={p.a:.6f} b={p.b:.6f} c={p.c:.6f} "
          f"residual_rms={fit.residual_rms:.4f}")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(
            {"a": p.a, "b": p.b, "c": p.c,
             "residual_rms": fit.residual_rms, "unit": "kbps/ln"},
            sort_keys=True, indent=2) + "\n")
    return 0


def cmd_train(args) -> int:
    records = load_dataset(args.dataset)
    samples = [
        TrainingSample(features=r.features, label=r.label, clip_id=r.clip_id)
        for r in records
    ]
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(samples))
    n_val = max(1, int(len(samples) * args.val_fraction))
    val = [samples[i] for i in order[:n_val]]
    tr = [samples[i] for i in order[n_val:]]
    h1, h2 = (int(v) for v in args.hidden.split(","))
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.learning_rate, seed=args.seed,
        hidden1=h1, hidden2=h2,
    )
    result = network.train(tr, val, config)
    network.save_model(result.model, args.model_out)
    if args.log_out:
        with open(args.log_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            w.writerows(result.history)
    best = result.history[result.best_epoch - 1]
    print(f"trained on {len(tr)} samples, validated on {len(val)}")
    print(f"best epoch {result.best_epoch}: train {best[1]:.4f} "
          f"val {best[2]:.4f} (CRF MAE)")
    print(f"wrote {args.model_out}")
    return 0


def cmd_decide(args) -> int:
    model = network.load_model(args.model)
    seq = _load_video(args.input, args.source_bitrate)
    plan = decision.plan_sequence(seq, model, args.target_bitrate,
                                  _lookahead_params(args))
    if args.plan_out:
        decision.save_plan(plan, args.plan_out)
    if args.encoder_args_out:
        Path(args.encoder_args_out).write_text(json.dumps(
            decision.encoder_args_for_plan(plan), indent=2) + "\n")
    print(f"{'gop':>4} {'start':>7} {'end':>7} {'crf':>6}  model")
    for i, e in enumerate(plan.entries):
        print(f"{i:>4} {e.span.start_frame:>7} {e.span.end_frame:>7} "
              f"{e.crf:>6.1f}  a={e.params.a:.4f} b={e.params.b:.4f} "
              f"c={e.params.c:.4f}")
    if plan.entries[0].extrapolated:
        print(f"note: target {args.target_bitrate} kbps is outside the "
              "trained bitrate range (extrapolated)")
    return 0


def cmd_execute(args) -> int:
    backend = _make_backend(args)
    seq = _load_video(args.input, args.source_bitrate)
    plan = decision.load_plan(args.plan)
    clip = ClipRef(clip_id=Path(args.input).stem,
                   duration_seconds=seq.duration_seconds,
                   path=Path(args.input))
    result = orchestrator.execute_plan(backend, clip, seq, plan)
    err = metrics.bitrate_error(result.total_bitrate_kbps,
                                plan.target_bitrate)
    doc = {
        "target_bitrate_kbps": plan.target_bitrate,
        "total_bitrate_kbps": result.total_bitrate_kbps,
        "bitrate_error_pct": err,
        "wall_seconds": result.wall_seconds,
        "gops": [
            {"start": g.start_frame, "end": g.end_frame, "crf": g.crf,
             "bitrate_kbps": g.bitrate_kbps}
            for g in result.gops
        ],
    }
    if args.results_out:
        Path(args.results_out).write_text(
            json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"total bitrate {result.total_bitrate_kbps:.1f} kbps for target "
          f"{plan.target_bitrate:.1f} kbps (error {err:.2f}%)")
    return 0


def cmd_eval(args) -> int:
    errors = []
    for path in args.results:
        doc = json.loads(Path(path).read_text())
        errors.append(metrics.bitrate_error(doc["total_bitrate_kbps"],
                                            doc["target_bitrate_kbps"]))
    print(f"runs: {len(errors)}")
    print(f"mean bitrate error: {float(np.mean(errors)):.2f}%")
    print(f"within 20%: {metrics.pct_within(errors, 20.0):.1f}%")
    if args.cdf_out:
        with open(args.cdf_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["error_pct", "cumulative_fraction"])
            w.writerows(metrics.error_cdf(errors))
        print(f"wrote {args.cdf_out}")
    return 0


def _read_rd_csv(path: Path) -> dict[str, list[metrics.RdPoint]]:
    curves: dict[str, list[metrics.RdPoint]] = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            curves.setdefault(row["metric_name"], []).append(
                metrics.RdPoint(bitrate=float(row["bitrate_kbps"]),
                                quality=float(row["quality"]))
            )
    for pts in curves.values():
        pts.sort(key=lambda p: p.bitrate)
    return curves


def cmd_report(args) -> int:
    rd_dir = Path(args.rd_dir)
    anchors = sorted(rd_dir.glob("*.anchor.csv"))
    if not anchors:
        raise CarfError(f"no *.anchor.csv files under {rd_dir}")
    rows = []
    metric_names: list[str] = []
    for anchor_path in anchors:
        seq_name = anchor_path.name[: -len(".anchor.csv")]
        test_path = rd_dir / f"{seq_name}.test.csv"
        if not test_path.exists():
            raise CarfError(f"missing {test_path}")
        anchor_curves = _read_rd_csv(anchor_path)
        test_curves = _read_rd_csv(test_path)
        values = {}
        for m in anchor_curves:
            if m not in test_curves:
                continue
            values[m] = metrics.bd_rate(anchor_curves[m], test_curves[m],
                                        method=args.bd_method)
            if m not in metric_names:
                metric_names.append(m)
        rows.append((seq_name, values))
    table = metrics.format_bd_table(rows, metric_names,
                                    anchor_name=args.anchor_name)
    print(table, end="")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "bd_rate_table.txt").write_text(table)
    with open(out_dir / "bd_rate_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence"] + metric_names)
        for name, values in rows:
            w.writerow([name] + [f"{values[m]:.4f}" for m in metric_names])
    if args.errors:
        errors = [float(v) for v in Path(args.errors).read_text().split()]
        with open(out_dir / "error_cdf.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["error_pct", "cumulative_fraction"])
            w.writerows(metrics.error_cdf(errors))
    return 0


def cmd_features(args) -> int:
    records = load_dataset(args.dataset)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", *FEATURE_NAMES])
        for r in records:
            w.writerow([r.clip_id] + [repr(v) for v in r.features.as_vector()])
    print(f"wrote {args.out} ({len(records)} rows)")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carf",
        description="GOP-level single-pass rate control toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate one synthetic y4m clip")
    p.add_argument("--out", required=True)
    p.add_argument("--pattern", default="noise:seed=0",
                   help="e.g. flat:luma=100 | noise:seed=1 | "
                        "translate:dx=4,dy=2,seed=7 | "
                        "hardcut:at=60;a=flat;b=noise:seed=1")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--fps-num", type=int, default=25)
    p.add_argument("--fps-den", type=int, default=1)
    p.add_argument("--source-bitrate", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("synth-corpus",
                       help="generate a corpus with planted curves")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--clips", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("analyze", help="lookahead stats and GOP table")
    p.add_argument("input")
    p.add_argument("--stats-out", help="per-frame JSONL stats dump")
    p.add_argument("--gops-out", help="GOP spans JSON")
    p.add_argument("--source-bitrate", type=float, default=None)
    _add_lookahead_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("dataset-build",
                       help="sweep clips and fit curve labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=["synthetic", "external"],
                   default="synthetic")
    p.add_argument("--planted", help="planted.json manifest (synthetic)")
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--encoder-cmd",
                   help="template with {input} {crf} {output} (external)")
    p.add_argument("--crf-set",
                   default=",".join(str(c) for c in DEFAULT_CRF_SET))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="runs/dataset")
    _add_lookahead_flags(p)
    p.set_defaults(func=cmd_dataset_build)

    p = sub.add_parser("fit", help="fit curve params from a crf,bitrate CSV")
    p.add_argument("--observations", required=True)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", help="train the curve-parameter network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--log-out", help="training log CSV")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", default="64,32")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decide", help="plan per-GOP CRFs for a target")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--target-bitrate", type=float, required=True,
                   help="kbps")
    p.add_argument("--plan-out")
    p.add_argument("--encoder-args-out")
    p.add_argument("--source-bitrate", type=float, default=None)
    _add_lookahead_flags(p)
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("execute", help="encode a plan and measure bitrate")
    p.add_argument("--input", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--backend", choices=["synthetic", "external"],
                   default="external")
    p.add_argument("--planted")
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--encoder-cmd")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="runs/execute")
    p.add_argument("--results-out")
    p.add_argument("--source-bitrate", type=float, default=None)
    p.set_defaults(func=cmd_execute)

    p = sub.add_parser("eval", help="bitrate-error stats over run results")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--cdf-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="BD-rate table and error CDF files")
    p.add_argument("--rd-dir", required=True,
                   help="directory of <seq>.anchor.csv / <seq>.test.csv")
    p.add_argument("--out-dir", default="runs/report")
    p.add_argument("--anchor-name", default="anchor")
    p.add_argument("--bd-method", choices=["cubic", "pchip"],
                   default="cubic")
    p.add_argument("--errors", help="whitespace-separated error list file")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("features", help="dump dataset features to CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CarfError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
