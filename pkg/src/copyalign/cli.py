"""Command-line interface.

Subcommands: gen, train, detect, eval, ablate, export-maps, grad-check.
Defaults can be set in a key=value config file (--config); explicit
flags win. Exit codes: 0 success, 2 usage/config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import checks, dataset
from .alignment import AlignConfig, detect
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, build_config, parse_config_file
from .encoder import SequenceEncoderParams, encode_sequence, spatial_similarity
from .errors import (ConfigError, CopyAlignError, DataError, NumericError,
                     OptimizerError)
from .evaluation import (DetectionRecord, load_annotations, load_detections,
                         precision_recall_sweep, write_report, write_sweep_csv)
from .features import l2_normalize, load_features
from .model import MaskStepParams, TrainSchedule, predict_maps, train

_DEFAULTS = RunConfig()

ABLATION_ARMS = (
    # name, encoder, aligner, weighting, use_mask
    ("HV", False, "hv", "hard", False),
    ("HV+SE", True, "hv", "hard", False),
    ("HV+SE+SW", True, "hv", "soft", False),
    ("SM+SE+SW", True, "sm", "soft", False),
    ("SM+SE+SW+MM", True, "sm", "soft", True),
)

TAU_GRID = (0.1, 0.2, 0.3, 0.4)
SIGMA_GRID = (0.1, 0.2, 0.3, 0.4)
GAMMA_GRID = (10.0, 100.0, 500.0, 1000.0)


def _on_off(value: str | None) -> bool | None:
    if value is None:
        return None
    return value == "on"


def _load_config_values(args) -> dict:
    if getattr(args, "config", None):
        return parse_config_file(args.config)
    return {}


def _align_config(cfg: RunConfig) -> AlignConfig:
    return AlignConfig(
        tau=cfg.tau, sigma=cfg.sigma, gamma=cfg.gamma, gap_limit=cfg.gap_limit,
        weighting=cfg.weighting, hard_min_len=cfg.hard_min_len,
        hv_threshold=cfg.hv_threshold, hv_min_votes=cfg.hv_min_votes,
    )


def _write_json(path: str | None, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    cfg = build_config(
        _load_config_values(args), seed=args.seed, feature_dim=args.dim,
        sequence_length=args.length, raw_length=args.raw_length,
        correlation=args.correlation, perturb_strength=args.perturb)
    spec = dataset.GenerationSpec(
        pairs=args.pairs, heldout=args.heldout, negatives=args.negatives,
        seed=cfg.seed, feature_dim=cfg.feature_dim,
        sequence_length=cfg.sequence_length, raw_length=cfg.raw_length,
        correlation=cfg.correlation, perturb_strength=cfg.perturb_strength)
    manifest = dataset.write_dataset(args.out, spec)
    print(f"wrote {manifest['train_pairs']} training pairs, "
          f"{manifest['heldout_pairs']} held-out and "
          f"{manifest['negative_pairs']} negative pairs to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = build_config(
        _load_config_values(args), seed=args.seed, encoder=_on_off(args.encoder),
        head_count=args.heads, hidden_dim=args.hidden, epochs=args.epochs,
        lr_initial=args.lr_initial, lr_final=args.lr_final,
        momentum=args.momentum, weight_decay=args.weight_decay,
        loss_balance=args.loss_balance, batch_size=args.batch_size)
    pairs = dataset.load_training_pairs(args.data)
    feature_dim = pairs[0].anchor.dim
    rng = np.random.default_rng(cfg.seed)
    encoder = None
    if cfg.encoder:
        encoder = SequenceEncoderParams.create(
            rng, model_dim=feature_dim, head_count=cfg.head_count,
            hidden_dim=cfg.hidden_dim)
    model = MaskStepParams.create(rng)
    schedule = TrainSchedule(
        epochs=cfg.epochs, lr_initial=cfg.lr_initial, lr_final=cfg.lr_final,
        momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        loss_balance=cfg.loss_balance, batch_size=cfg.batch_size, seed=cfg.seed)
    result = train(pairs, encoder, model, schedule)
    metadata = {
        "seed": cfg.seed,
        "feature_dim": feature_dim,
        "epochs": schedule.epochs,
        "lr_initial": schedule.lr_initial,
        "lr_final": schedule.lr_final,
        "momentum": schedule.momentum,
        "weight_decay": schedule.weight_decay,
        "loss_balance": schedule.loss_balance,
        "batch_size": schedule.batch_size,
    }
    save_checkpoint(args.out, encoder, model, metadata)
    loss_csv = args.loss_csv or f"{args.out}.loss.csv"
    with open(loss_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(result.epoch_losses, 1):
            writer.writerow([epoch, f"{value:.6f}"])
    print(f"trained {result.steps} steps; epoch losses "
          f"{result.epoch_losses[0]:.4f} -> {result.epoch_losses[-1]:.4f}; "
          f"checkpoint at {args.out}")
    return 0


# ---------------------------------------------------------------------------
# detect


def _resolve_detect_setup(args, cfg: RunConfig):
    ckpt = load_checkpoint(args.checkpoint)
    encoder_flag = _on_off(args.encoder)
    if encoder_flag is None:
        encoder = ckpt.encoder
    elif encoder_flag:
        if ckpt.encoder is None:
            raise ConfigError("checkpoint was trained without a sequence encoder")
        encoder = ckpt.encoder
    else:
        encoder = None
    use_mask = _on_off(args.mask)
    if use_mask is None:
        use_mask = cfg.use_mask
    return ckpt, encoder, use_mask


def _detect_pair(query_path, ref_path, query_id, ref_id, encoder, model,
                 align_cfg, aligner, use_mask, fps):
    query = load_features(query_path, fps)
    reference = load_features(ref_path, fps)
    results = detect(query, reference, encoder, model, align_cfg,
                     aligner=aligner, use_mask=use_mask)
    return [
        {
            "query_id": query_id,
            "ref_id": ref_id,
            "q_start": float(d.query_segment[0]),
            "q_end": float(d.query_segment[1]),
            "r_start": float(d.ref_segment[0]),
            "r_end": float(d.ref_segment[1]),
            "score": float(d.score),
        }
        for d in results
    ]


def cmd_detect(args) -> int:
    cfg = build_config(
        _load_config_values(args), tau=args.tau, sigma=args.sigma,
        gamma=args.gamma, gap_limit=args.gap_limit, weighting=args.weighting,
        hard_min_len=args.hard_min_len, aligner=args.aligner,
        hv_threshold=args.hv_threshold, hv_min_votes=args.hv_min_votes)
    if bool(args.dataset) == bool(args.query):
        raise ConfigError("pass either --dataset or both --query and --ref")
    if args.query and not args.ref:
        raise ConfigError("--query needs a matching --ref")
    ckpt, encoder, use_mask = _resolve_detect_setup(args, cfg)
    align_cfg = _align_config(cfg)
    records = []
    if args.dataset:
        for stem, query_path, ref_path in dataset.list_heldout_pairs(args.dataset):
            records.extend(_detect_pair(
                query_path, ref_path, f"{stem}.query", f"{stem}.ref",
                encoder, ckpt.model, align_cfg, cfg.aligner, use_mask, args.fps))
    else:
        records = _detect_pair(
            args.query, args.ref, Path(args.query).stem, Path(args.ref).stem,
            encoder, ckpt.model, align_cfg, cfg.aligner, use_mask, args.fps)
    _write_json(args.output, records)
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    dets = load_detections(args.detections)
    gts = load_annotations(args.annotations)
    report = precision_recall_sweep(dets, gts, args.iou)
    if args.output and args.output != "-":
        write_report(args.output, report)
    else:
        _write_json(None, report.to_dict())
    if args.csv:
        write_sweep_csv(args.csv, report)
    print(f"best F1 at IoU>{args.iou:g}: {report.best_f1:.4f} "
          f"({report.total_detections} detections, "
          f"{report.total_ground_truth} ground-truth pairs)", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# ablate


def _run_arm(entries, annotations, ckpt, align_cfg, encoder_on, aligner,
             weighting, use_mask, iou, fps=1.0):
    arm_cfg = AlignConfig(
        tau=align_cfg.tau, sigma=align_cfg.sigma, gamma=align_cfg.gamma,
        gap_limit=align_cfg.gap_limit, weighting=weighting,
        hard_min_len=align_cfg.hard_min_len, hv_threshold=align_cfg.hv_threshold,
        hv_min_votes=align_cfg.hv_min_votes)
    encoder = ckpt.encoder if encoder_on else None
    if encoder_on and ckpt.encoder is None:
        raise ConfigError("ablation arm needs an encoder but the checkpoint has none")
    records = []
    for stem, query_path, ref_path in entries:
        records.extend(_detect_pair(
            query_path, ref_path, f"{stem}.query", f"{stem}.ref",
            encoder, ckpt.model, arm_cfg, aligner, use_mask, fps))
    dets = [
        DetectionRecord(r["query_id"], r["ref_id"],
                        (r["q_start"], r["q_end"]), (r["r_start"], r["r_end"]),
                        r["score"])
        for r in records
    ]
    report = precision_recall_sweep(dets, annotations, iou)
    best = max(report.operating_points, key=lambda p: p[3])
    return report.best_f1, best[1], best[2]


def cmd_ablate(args) -> int:
    cfg = build_config(_load_config_values(args))
    ckpt = load_checkpoint(args.checkpoint)
    entries = dataset.list_heldout_pairs(args.data)
    annotations = load_annotations(Path(args.data) / dataset.ANNOTATIONS_NAME)
    align_cfg = _align_config(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    arm_rows = []
    for name, encoder_on, aligner, weighting, use_mask in ABLATION_ARMS:
        best_f1, precision, recall = _run_arm(
            entries, annotations, ckpt, align_cfg, encoder_on, aligner,
            weighting, use_mask, args.iou)
        arm_rows.append((name, precision, recall, best_f1))
        print(f"{name:14s} SP={precision:.4f} SR={recall:.4f} F1={best_f1:.4f}")
    with open(out_dir / "ablation_arms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "precision", "recall", "best_f1"])
        for name, precision, recall, best_f1 in arm_rows:
            writer.writerow([name, f"{precision:.4f}", f"{recall:.4f}", f"{best_f1:.4f}"])

    sweep_rows = []
    for value in TAU_GRID:
        swept = AlignConfig(**{**align_cfg.__dict__, "tau": value})
        best_f1, _, _ = _run_arm(entries, annotations, ckpt, swept, True, "sm",
                                 "soft", True, args.iou)
        sweep_rows.append(("tau", value, best_f1))
    for value in SIGMA_GRID:
        swept = AlignConfig(**{**align_cfg.__dict__, "sigma": value})
        best_f1, _, _ = _run_arm(entries, annotations, ckpt, swept, True, "sm",
                                 "soft", True, args.iou)
        sweep_rows.append(("sigma", value, best_f1))
    for value in GAMMA_GRID:
        swept = AlignConfig(**{**align_cfg.__dict__, "gamma": value})
        best_f1, _, _ = _run_arm(entries, annotations, ckpt, swept, True, "sm",
                                 "soft", True, args.iou)
        sweep_rows.append(("gamma", value, best_f1))
    with open(out_dir / "parameter_sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "value", "best_f1"])
        for name, value, best_f1 in sweep_rows:
            writer.writerow([name, f"{value:g}", f"{best_f1:.4f}"])
    print(f"wrote {out_dir / 'ablation_arms.csv'} and {out_dir / 'parameter_sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------
# export-maps


def _write_pgm(path, values: np.ndarray) -> None:
    clipped = np.clip(values, 0.0, 1.0)
    pixels = np.round(clipped * 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pixels.tobytes())


def _write_csv_matrix(path, values: np.ndarray, fmt: str = "%.6f") -> None:
    np.savetxt(path, values, fmt=fmt, delimiter=",")


def cmd_export_maps(args) -> int:
    cfg = build_config(_load_config_values(args))
    ckpt, encoder, _ = _resolve_detect_setup(args, cfg)
    query = l2_normalize(load_features(args.query, args.fps))
    reference = l2_normalize(load_features(args.ref, args.fps))
    if encoder is not None:
        query = encode_sequence(query, encoder)
        reference = encode_sequence(reference, encoder)
    sim = spatial_similarity(query, reference)
    mask, step = predict_maps(sim, ckpt.model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv_matrix(out_dir / "similarity.csv", sim.values)
    _write_csv_matrix(out_dir / "mask.csv", mask.values)
    _write_csv_matrix(out_dir / "step.csv", step.categories, fmt="%d")
    _write_pgm(out_dir / "similarity.pgm", (sim.values + 1.0) / 2.0)
    _write_pgm(out_dir / "mask.pgm", mask.values)
    print(f"wrote similarity/mask/step maps to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# grad-check


def cmd_grad_check(args) -> int:
    results = checks.run_all_checks(args.seed)
    failed = False
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status}  {res.name:24s} max rel err {res.max_rel_error:.3e} "
              f"(tolerance {res.tolerance:g}, {res.seconds:.2f}s)")
        failed = failed or not res.passed
    if failed:
        raise NumericError("gradient check failed")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copyalign",
        description="Partial video copy detection from frame-feature sequences.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="key=value config file; flags override it")

    p = sub.add_parser("gen", help="generate a synthetic training dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--pairs", type=int, required=True, help="number of training pairs")
    p.add_argument("--heldout", type=int, default=0, help="held-out positive pairs (default 0)")
    p.add_argument("--negatives", type=int, default=0, help="held-out negative pairs (default 0)")
    p.add_argument("--seed", type=int, help=f"master RNG seed (default {_DEFAULTS.seed})")
    p.add_argument("--dim", type=int, help=f"feature dimension W (default {_DEFAULTS.feature_dim})")
    p.add_argument("--length", type=int,
                   help=f"pair sequence length (default {_DEFAULTS.sequence_length})")
    p.add_argument("--raw-length", type=int, dest="raw_length",
                   help=f"raw 2 fps base length (default {_DEFAULTS.raw_length})")
    p.add_argument("--correlation", type=float,
                   help=f"frame-to-frame drift correlation (default {_DEFAULTS.correlation})")
    p.add_argument("--perturb", type=float,
                   help=f"feature perturbation strength (default {_DEFAULTS.perturb_strength})")
    add_config(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the map predictor (and encoder)")
    p.add_argument("--data", required=True, help="dataset directory from `gen`")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--loss-csv", dest="loss_csv", help="loss curve CSV (default <out>.loss.csv)")
    p.add_argument("--encoder", choices=["on", "off"],
                   help="train the sequence encoder jointly (default on)")
    p.add_argument("--heads", type=int,
                   help=f"encoder attention heads (default {_DEFAULTS.head_count})")
    p.add_argument("--hidden", type=int,
                   help=f"encoder feed-forward hidden size (default {_DEFAULTS.hidden_dim})")
    p.add_argument("--epochs", type=int, help=f"training epochs (default {_DEFAULTS.epochs})")
    p.add_argument("--lr-initial", type=float, dest="lr_initial",
                   help=f"learning rate, first half (default {_DEFAULTS.lr_initial:g})")
    p.add_argument("--lr-final", type=float, dest="lr_final",
                   help=f"learning rate, second half (default {_DEFAULTS.lr_final:g})")
    p.add_argument("--momentum", type=float,
                   help=f"SGD momentum (default {_DEFAULTS.momentum})")
    p.add_argument("--weight-decay", type=float, dest="weight_decay",
                   help=f"SGD weight decay (default {_DEFAULTS.weight_decay:g})")
    p.add_argument("--loss-balance", type=float, dest="loss_balance",
                   help=f"step-loss weight lambda (default {_DEFAULTS.loss_balance})")
    p.add_argument("--batch-size", type=int, dest="batch_size",
                   help=f"pairs per SGD step (default {_DEFAULTS.batch_size})")
    p.add_argument("--seed", type=int, help=f"RNG seed (default {_DEFAULTS.seed})")
    add_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="detect copied segments between sequences")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--query", help="query feature file (binary or CSV)")
    p.add_argument("--ref", help="reference feature file (binary or CSV)")
    p.add_argument("--dataset", help="run over every held-out pair of a dataset directory")
    p.add_argument("--output", help="detections JSON path ('-' for stdout, the default)")
    p.add_argument("--fps", type=float, default=1.0,
                   help="frame rate for CSV inputs (default 1.0)")
    p.add_argument("--tau", type=float,
                   help=f"start-point threshold tau on the mask map (default {_DEFAULTS.tau})")
    p.add_argument("--sigma", type=float,
                   help=f"similarity floor sigma on s*t (default {_DEFAULTS.sigma})")
    p.add_argument("--gamma", type=float,
                   help=f"soft-weight temperature gamma (default {_DEFAULTS.gamma:g})")
    p.add_argument("--weighting", choices=["soft", "hard"],
                   help=f"path confidence mode (default {_DEFAULTS.weighting})")
    p.add_argument("--aligner", choices=["sm", "hv"],
                   help="step-map walker or Hough-voting baseline (default sm)")
    p.add_argument("--encoder", choices=["on", "off"],
                   help="apply the sequence encoder (default: as trained)")
    p.add_argument("--mask", choices=["on", "off"],
                   help="use the mask map for starts and scoring (default on)")
    p.add_argument("--gap-limit", type=int, dest="gap_limit",
                   help=f"consecutive misses ending a walk (default {_DEFAULTS.gap_limit})")
    p.add_argument("--hard-min-len", type=int, dest="hard_min_len",
                   help=f"minimum span kept in hard mode (default {_DEFAULTS.hard_min_len})")
    p.add_argument("--hv-threshold", type=float, dest="hv_threshold",
                   help=f"similarity threshold for Hough votes (default {_DEFAULTS.hv_threshold})")
    p.add_argument("--hv-min-votes", type=int, dest="hv_min_votes",
                   help=f"votes needed per Hough lag (default {_DEFAULTS.hv_min_votes})")
    add_config(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="segment-level precision/recall evaluation")
    p.add_argument("--detections", required=True, help="detections JSON")
    p.add_argument("--annotations", required=True, help="ground-truth JSON")
    p.add_argument("--iou", type=float, default=0.0, choices=[0.0, 0.3, 0.5, 0.7],
                   help="per-axis IoU threshold; 0 means any shared frames (default 0)")
    p.add_argument("--output", help="report JSON path ('-' for stdout, the default)")
    p.add_argument("--csv", help="also write the threshold sweep as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation arms and parameter sweep")
    p.add_argument("--data", required=True, help="dataset directory with a held-out split")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--out", required=True, help="output directory for CSV tables")
    p.add_argument("--iou", type=float, default=0.0, choices=[0.0, 0.3, 0.5, 0.7],
                   help="evaluation IoU threshold (default 0)")
    add_config(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-maps", help="dump similarity, mask and step maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--encoder", choices=["on", "off"],
                   help="apply the sequence encoder (default: as trained)")
    p.add_argument("--mask", choices=["on", "off"], help=argparse.SUPPRESS)
    add_config(p)
    p.set_defaults(func=cmd_export_maps)

    p = sub.add_parser("grad-check", help="verify gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, OptimizerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except CopyAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
