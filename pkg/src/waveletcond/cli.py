"""Command-line surface: wavelet transforms, module application, the toy
trainer/sampler/ablation runner, metric reports, and manifest tooling.

Exit codes: 0 success, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import datakit, metrics, sgtf
from .diffusion import (
    DivergenceError,
    TrainConfig,
    audio_to_windows,
    linear_schedule,
    sample,
    unet_forward,
)
from .msm import AudioEmbedding, MsmParams, msm_forward
from .sfm import SfmParams, sfm_forward
from .tensor import Tensor, set_default_dtype
from .training import (
    ablate,
    config_to_dict,
    load_config,
    make_synthetic_dataset,
    report_to_json,
    train,
)
from .wavelet import BAND_ORDER, SubBands, dwt2, idwt2

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="waveletcond",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None,
                        help="override the seed used by seeded subcommands")
    parser.add_argument("--precision", choices=("f32", "f64"), default="f64",
                        help="default tensor precision")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dwt", help="decompose an SGTF tensor into four sub-band files")
    p.add_argument("input")
    p.add_argument("out_prefix")

    p = sub.add_parser("idwt", help="reassemble a tensor from four sub-band files")
    p.add_argument("in_prefix")
    p.add_argument("output")

    p = sub.add_parser("msm-apply", help="condition an audio embedding on a latent")
    p.add_argument("--audio", required=True)
    p.add_argument("--latent", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sfm-apply", help="filter bottleneck features")
    p.add_argument("--features", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-toy", help="train the toy harness on synthetic clips")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="generate a clip from a trained run directory")
    p.add_argument("--params", required=True, help="run directory from train-toy")
    p.add_argument("--audio", required=True, help="raw audio sample track (SGTF, 1-D)")
    p.add_argument("--ref", required=True, help="reference frame (SGTF, c x h x w)")
    p.add_argument("--seed", type=int, default=0, dest="sample_seed")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="train all module-ablation variants and report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="report path (default: stdout)")

    p = sub.add_parser("metrics", help="score predicted clips against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--mouth-indices", default=None,
                   help="comma/range list of mouth landmark indices, e.g. 48-67")

    p = sub.add_parser("manifest", help="dataset manifest tooling")
    msub = p.add_subparsers(dest="manifest_command", required=True)

    m = msub.add_parser("segment", help="cut sources into 2-second clip records")
    m.add_argument("--sources", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--ratio", type=float, default=0.8)

    m = msub.add_parser("crop", help="recompute crop boxes at a given face ratio")
    m.add_argument("--sources", required=True)
    m.add_argument("--manifest", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--ratio", type=float, default=0.8)

    m = msub.add_parser("split", help="assign subject-disjoint train/test labels")
    m.add_argument("--manifest", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--ratio", default="4:1")

    return parser


# -- subcommand bodies ---------------------------------------------------------------


def cmd_dwt(args) -> int:
    x = Tensor(sgtf.read_tensor(args.input))
    bands = dwt2(x)
    for name, band in zip(BAND_ORDER, bands.bands()):
        sgtf.write_tensor(f"{args.out_prefix}.{name}.sgtf", band)
    return EXIT_OK


def cmd_idwt(args) -> int:
    bands = [Tensor(sgtf.read_tensor(f"{args.in_prefix}.{name}.sgtf")) for name in BAND_ORDER]
    sgtf.write_tensor(args.output, idwt2(SubBands(*bands)))
    return EXIT_OK


def cmd_msm_apply(args) -> int:
    params = sgtf.load_params(args.params)
    audio = sgtf.read_tensor(args.audio)
    latent = sgtf.read_tensor(args.latent)
    if latent.ndim != 4:
        raise ValueError(f"msm-apply: latent must be 4-D, got shape {latent.shape}")
    embedding = AudioEmbedding(Tensor(audio), frames=latent.shape[0])
    out = msm_forward(embedding, Tensor(latent), MsmParams.from_named(params))
    sgtf.write_tensor(args.out, out)
    return EXIT_OK


def cmd_sfm_apply(args) -> int:
    params = sgtf.load_params(args.params)
    features = sgtf.read_tensor(args.features)
    out = sfm_forward(Tensor(features), SfmParams.from_named(params))
    sgtf.write_tensor(args.out, out)
    return EXIT_OK


def config_to_text(cfg: TrainConfig) -> str:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in dataclasses.fields(TrainConfig)]
    return "".join(line + "\n" for line in lines)


def cmd_train_toy(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    dataset = make_synthetic_dataset(cfg.n_clips, cfg.frames, cfg.height, cfg.width,
                                     seed=cfg.seed, samples_per_frame=cfg.samples_per_frame,
                                     amplitude=cfg.amplitude)
    params, losses = train(dataset, cfg,
                           on_step=lambda s, v: print(f"step {s}: loss {v:.6f}"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sgtf.save_params(out / "params", params)
    (out / "config.txt").write_text(config_to_text(cfg))
    (out / "losses.csv").write_text(
        "step,loss\n" + "".join(f"{i},{repr(v)}\n" for i, v in enumerate(losses)))
    print(f"trained {cfg.steps} steps; final loss {losses[-1]:.6f}; run saved to {out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    run = Path(args.params)
    cfg = load_config(run / "config.txt")
    params = sgtf.load_params(run / "params")
    audio = sgtf.read_tensor(args.audio)
    if audio.ndim != 1:
        raise ValueError(f"sample: audio track must be 1-D, got shape {audio.shape}")
    ref = sgtf.read_tensor(args.ref)
    clip = sample(params, audio_to_windows(audio, cfg), ref,
                  linear_schedule(cfg.timesteps), cfg, seed=args.sample_seed)
    sgtf.write_tensor(args.out, clip)
    print(f"sampled clip {clip.shape} -> {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    report = ablate(cfg)
    text = report_to_json(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def parse_index_spec(spec: str) -> list[int]:
    """Comma list with ranges: "48-67" or "1,3,5-8"."""
    out: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, _, hi = part.partition("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError(f"empty index spec: {spec!r}")
    return out


def cmd_metrics(args) -> int:
    records = datakit.read_manifest(args.manifest)
    if not records:
        raise ValueError(f"metrics: empty manifest {args.manifest}")
    mouth = np.asarray(parse_index_spec(args.mouth_indices)) if args.mouth_indices else None
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    rows = []
    for rec in records:
        assets = metrics.ClipAssets(
            clip_id=rec.clip_id,
            pred_frames=sgtf.read_tensor(pred_dir / rec.frames_path),
            gt_frames=sgtf.read_tensor(gt_dir / rec.frames_path),
            pred_landmarks=metrics.load_landmarks_csv(pred_dir / rec.landmark_path),
            gt_landmarks=metrics.load_landmarks_csv(gt_dir / rec.landmark_path),
            beats=metrics.load_beats(gt_dir / rec.beats_path),
            fps=rec.fps,
            mouth_indices=mouth,
        )
        rows.append(metrics.evaluate_clip(assets, peak=args.peak))
    report = metrics.json_safe({
        "report": "clip-metrics",
        "columns": list(metrics.TABLE1_COLUMNS),
        "aggregate": metrics.aggregate_rows(rows),
        "per_clip": rows,
    })
    Path(args.report).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(f"scored {len(rows)} clips -> {args.report}")
    return EXIT_OK


def cmd_manifest(args) -> int:
    if args.manifest_command == "segment":
        sources = datakit.read_sources(args.sources)
        records = [rec for src in sources for rec in datakit.segment_clips(src, ratio=args.ratio)]
        datakit.write_manifest(args.out, records)
        print(f"segmented {len(sources)} sources into {len(records)} clips -> {args.out}")
        return EXIT_OK
    if args.manifest_command == "crop":
        sources = {s.source_id: s for s in datakit.read_sources(args.sources)}
        records = datakit.read_manifest(args.manifest)
        out = []
        for rec in records:
            src = sources.get(rec.source_id)
            if src is None:
                raise ValueError(f"manifest crop: no source metadata for {rec.source_id}")
            box = datakit.bbox_for_frame(src, rec.start_frame)
            crop = (datakit.crop_box(box, src.width, src.height, ratio=args.ratio)
                    if box else rec.crop_box)
            out.append(dataclasses.replace(rec, crop_box=crop))
        datakit.write_manifest(args.out, out)
        print(f"recomputed {len(out)} crop boxes at ratio {args.ratio} -> {args.out}")
        return EXIT_OK
    if args.manifest_command == "split":
        train_parts, _, test_parts = args.ratio.partition(":")
        records = datakit.read_manifest(args.manifest)
        seed = 0 if args.seed is None else args.seed
        labelled = datakit.split_dataset(records, seed=seed,
                                         train_parts=int(train_parts),
                                         test_parts=int(test_parts or 1))
        datakit.write_manifest(args.out, labelled)
        n_train = sum(1 for r in labelled if r.split == "train")
        print(f"split {len(labelled)} clips: {n_train} train / {len(labelled) - n_train} test "
              f"-> {args.out}")
        return EXIT_OK
    raise ValueError(f"unknown manifest command {args.manifest_command!r}")


_COMMANDS = {
    "dwt": cmd_dwt,
    "idwt": cmd_idwt,
    "msm-apply": cmd_msm_apply,
    "sfm-apply": cmd_sfm_apply,
    "train-toy": cmd_train_toy,
    "sample": cmd_sample,
    "ablate": cmd_ablate,
    "metrics": cmd_metrics,
    "manifest": cmd_manifest,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    set_default_dtype(args.precision)
    try:
        return _COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        set_default_dtype("f64")


if __name__ == "__main__":
    sys.exit(main())
