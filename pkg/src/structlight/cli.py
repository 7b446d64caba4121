"""Command-line entry points: make-data, train, enhance, eval.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime error
(including training divergence).
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import torch

from .config import RunConfig, config_to_dict, load_run_config, save_run_config
from .data import (
    CannyConfig,
    DegradeConfig,
    build_dataset,
    load_batch,
    load_manifest,
    pad_to_multiple,
    unpad,
)
from .errors import CheckpointError, ConfigError, DataError, TrainingDiverged
from .image_io import load_png, save_png
from .metrics import MetricReport, edge_metrics, psnr, ssim
from .training import (
    build_state,
    forward_pipeline,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)

ABLATION_FLAGS = (
    "disable_appearance",
    "disable_structure",
    "disable_guidance",
    "disable_gan",
    "baseline_edge_net",
)

LOSS_COLUMNS = ("step", "loss_a", "loss_s", "loss_g", "loss_d", "loss_m", "loss_total")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="structlight",
        description="Low-light enhancement with edge-structure modeling and guidance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="build a paired dataset from normal-light PNGs")
    p.add_argument("--src", required=True, help="directory of source PNGs")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--gain", type=float, default=0.25)
    p.add_argument("--gamma", type=float, default=1.2)
    p.add_argument("--read-noise", type=float, default=0.01)
    p.add_argument("--shot-noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--canny-low", type=float, default=0.1)
    p.add_argument("--canny-high", type=float, default=0.2)
    p.add_argument("--canny-sigma", type=float, default=1.0)

    p = sub.add_parser("train", help="train the full framework on a dataset")
    p.add_argument("--data", required=True, help="dataset directory with manifest.json")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument(
        "--ablation", action="append", choices=ABLATION_FLAGS, default=[],
        help="enable an ablation switch (repeatable)",
    )

    p = sub.add_parser("enhance", help="enhance images with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inputs", required=True, nargs="+", help="image files or a directory")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-intermediates", action="store_true")

    p = sub.add_parser("eval", help="compute metrics between prediction and target dirs")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred-edges", help="directory of predicted edge maps")
    p.add_argument("--gt-edges", help="directory of ground-truth edge maps")
    p.add_argument("--out", required=True)
    return parser


def cmd_make_data(args):
    degrade_cfg = DegradeConfig(
        exposure_gain=args.gain,
        gamma=args.gamma,
        read_noise_sigma=args.read_noise,
        shot_noise_scale=args.shot_noise,
        seed=args.seed,
    )
    canny_cfg = CannyConfig(
        low_thresh=args.canny_low, high_thresh=args.canny_high, sigma=args.canny_sigma
    )
    manifest = build_dataset(args.src, args.out, degrade_cfg, canny_cfg)
    print(
        f"built {manifest['count']} pairs in {args.out} "
        f"(hash {manifest['config_hash']}, skipped {len(manifest['skipped'])})"
    )
    return 0


def _apply_train_overrides(cfg, args):
    if args.steps is not None:
        cfg.train.steps = args.steps
    if args.batch_size is not None:
        cfg.train.batch_size = args.batch_size
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.checkpoint_every is not None:
        cfg.train.checkpoint_every = args.checkpoint_every
    for flag in args.ablation:
        setattr(cfg.train, flag, True)
    cfg.train.__post_init__()
    return cfg


def plot_losses(csv_path, png_path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(8, 5))
    for col in LOSS_COLUMNS[1:]:
        ax.plot(steps, [float(r[col]) for r in rows], label=col)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)


def cmd_train(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.resume:
        state = load_checkpoint(args.resume)
        cfg = state.config
        _apply_train_overrides(cfg, args)
    else:
        cfg = load_run_config(args.config) if args.config else RunConfig()
        _apply_train_overrides(cfg, args)
        state = build_state(cfg)

    save_run_config(cfg, out / "config.json")
    manifest = load_manifest(args.data)
    if not manifest["ids"]:
        raise DataError("dataset manifest lists no images")
    pad_multiple = cfg.model.size_multiple

    def load_fn(ids):
        return load_batch(args.data, ids, manifest=manifest, pad_multiple=pad_multiple)

    csv_path = out / "losses.csv"
    new_file = not csv_path.exists()
    csv_file = open(csv_path, "a", newline="")
    writer = csv.DictWriter(csv_file, fieldnames=LOSS_COLUMNS)
    if new_file:
        writer.writeheader()

    every = cfg.train.checkpoint_every

    def on_step(log):
        writer.writerow(log)
        csv_file.flush()
        if every and log["step"] % every == 0:
            save_checkpoint(state, out / f"ckpt_{log['step']:06d}.npz")

    try:
        train_loop(state, load_fn, manifest["ids"], cfg.train.steps, on_step=on_step)
    except TrainingDiverged as exc:
        diag = {"error": str(exc), "step": state.step, "losses": exc.diagnostics}
        (out / "divergence.json").write_text(json.dumps(diag, indent=2))
        print(f"training diverged at step {state.step}: {exc}", file=sys.stderr)
        return 2
    finally:
        csv_file.close()

    save_checkpoint(state, out / "final.npz")
    plot_losses(csv_path, out / "loss_curve.png")
    print(f"trained {cfg.train.steps} steps -> {out / 'final.npz'}")
    return 0


def _collect_inputs(inputs):
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.png")))
        else:
            paths.append(p)
    return paths


def cmd_enhance(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        print(f"checkpoint not found: {ckpt}", file=sys.stderr)
        return 1
    state = load_checkpoint(ckpt)
    for module in state.named_modules_for_checkpoint().values():
        module.eval()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "enhance_config.json").write_text(
        json.dumps(
            {
                "checkpoint": str(ckpt),
                "dump_intermediates": bool(args.dump_intermediates),
                "config": config_to_dict(state.config),
            },
            indent=2,
        )
    )

    paths = _collect_inputs(args.inputs)
    if not paths:
        print("no input images found", file=sys.stderr)
        return 1
    mult = state.config.model.size_multiple
    for path in paths:
        img = load_png(path)[None]
        padded, pad = pad_to_multiple(img, mult)
        with torch.no_grad():
            enhanced, restored, edge = forward_pipeline(state, padded, dump=True)
        save_png(unpad(enhanced, pad)[0], out / f"{path.stem}.png")
        if args.dump_intermediates:
            save_png(unpad(restored, pad)[0], out / f"{path.stem}_restored.png")
            save_png(unpad(edge, pad)[0], out / f"{path.stem}_edge.png")
    print(f"enhanced {len(paths)} images -> {out}")
    return 0


def _dir_ids(directory):
    return {p.stem: p for p in sorted(Path(directory).glob("*.png"))}


def cmd_eval(args):
    pred = _dir_ids(args.pred)
    gt = _dir_ids(args.gt)
    missing_pred = sorted(set(gt) - set(pred))
    missing_gt = sorted(set(pred) - set(gt))
    if missing_pred or missing_gt:
        if missing_pred:
            print(f"ids missing from pred dir: {missing_pred}", file=sys.stderr)
        if missing_gt:
            print(f"ids missing from gt dir: {missing_gt}", file=sys.stderr)
        return 1

    edge_pairs = {}
    if args.pred_edges and args.gt_edges:
        pe = _dir_ids(args.pred_edges)
        ge = _dir_ids(args.gt_edges)
        edge_pairs = {k: (pe[k], ge[k]) for k in pe if k in ge}

    report = MetricReport()
    for image_id in sorted(pred):
        a = load_png(pred[image_id])[None]
        b = load_png(gt[image_id])[None]
        entry = {
            "psnr_val": float(psnr(a, b)[0]),
            "ssim_val": float(ssim(a, b)[0]),
        }
        if image_id in edge_pairs:
            pe_img = load_png(edge_pairs[image_id][0])[None]
            ge_img = load_png(edge_pairs[image_id][1])[None]
            ce, l2 = edge_metrics(pe_img, ge_img)
            entry["ce_val"] = float(ce[0])
            entry["l2_val"] = float(l2[0])
        report.add(image_id, **entry)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["id", "psnr", "ssim"] + (["edge_ce", "edge_l2"] if edge_pairs else [])
        writer.writerow(header)
        for i, image_id in enumerate(report.ids):
            row = [image_id, report.psnr[i], report.ssim[i]]
            if edge_pairs:
                row += [report.edge_ce[i], report.edge_l2[i]]
            writer.writerow(row)
    means = report.means()
    print(json.dumps({"mean": means}))
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "make-data": cmd_make_data,
        "train": cmd_train,
        "enhance": cmd_enhance,
        "eval": cmd_eval,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
