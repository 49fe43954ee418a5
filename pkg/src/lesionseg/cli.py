"""Command-line surface: prepare, train, eval, predict, count-params, plot.

Exit codes: 0 success, 1 user error (bad inputs, bad config), 2 internal
error.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from .arch import PRESET_NAMES, build_model, parameter_counts, preset
from .config import ConfigError, parse_config
from .io import (
    DataError,
    find_case_file,
    load_case,
    load_volume,
    read_manifest,
    save_volume,
)
from .pipeline import CROP_COLS, CROP_ROWS, SplitSpec, split_dataset
from .store import load_store, write_store
from .train import (
    CheckpointError,
    checkpoint_load,
    load_history,
    train as run_training,
    evaluate,
)
from . import kernels


@click.group()
def cli():
    """Stroke lesion segmentation toolkit."""


@cli.command()
@click.option("--manifest", required=True, type=click.Path())
@click.option("--root", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--size", default=192, show_default=True,
              help="Side length of the preprocessed stacks.")
def prepare(manifest, root, out_dir, size):
    """Preprocess cases from a manifest into a stack store."""
    ids = read_manifest(manifest)
    if not ids:
        raise DataError(f"manifest {manifest} lists no cases")
    cases = [load_case(find_case_file(root, cid)) for cid in ids]
    index = write_store(cases, out_dir, size=size)
    total = sum(c.depth for c in cases)
    click.echo(f"prepared {len(cases)} case(s), {total} stack(s) -> {index}")


def _load_training_stacks(cfg):
    if cfg.data.store:
        stacks, index = load_store(cfg.data.store)
        if index["size"] != cfg.spec.input_shape[0]:
            raise ConfigError(
                f"store size {index['size']} does not match architecture "
                f"input {cfg.spec.input_shape[0]}")
        return stacks
    if not (cfg.data.manifest and cfg.data.root):
        raise ConfigError("data section needs either 'store' or both "
                          "'manifest' and 'root'")
    from .pipeline import build_stacks

    ids = read_manifest(cfg.data.manifest)
    stacks = []
    for cid in ids:
        case = load_case(find_case_file(cfg.data.root, cid))
        stacks.extend(build_stacks(case, out_size=cfg.spec.input_shape[0]))
    return stacks


@cli.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--resume", "resume_path", type=click.Path(), default=None)
def train_cmd(config_path, out_dir, seed, resume_path):
    """Train a model per the run config; writes checkpoint, history, manifest."""
    cfg = parse_config(config_path)
    if seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=seed)
    stacks = _load_training_stacks(cfg)
    model, history = run_training(cfg.spec, stacks, cfg.train,
                                  out_dir=out_dir, resume_from=resume_path)
    last = history[-1]
    out = Path(out_dir)
    (out / "manifest.json").write_text(
        json.dumps({**cfg.effective_dict(),
                    "spec_hash": cfg.spec.content_hash(),
                    "parameters": parameter_counts(model),
                    "backend": kernels.ACTIVE_BACKEND,
                    "num_stacks": len(stacks)},
                   indent=2, sort_keys=True) + "\n")
    click.echo(f"trained {cfg.train.epochs} epoch(s); final loss "
               f"{last.loss:.6f}, train DSC {last.dsc:.4f}")
    click.echo(f"checkpoint: {out / 'checkpoint.npz'}")


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--manifest", required=True, type=click.Path())
@click.option("--root", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--threshold", default=0.5, show_default=True)
@click.option("--method-name", default=None,
              help="Row label for the results table.")
def eval_cmd(checkpoint, manifest, root, out_dir, threshold, method_name):
    """Evaluate a checkpoint over the manifest's cases."""
    model, _ = checkpoint_load(checkpoint)
    ids = read_manifest(manifest)
    if not ids:
        raise DataError(f"manifest {manifest} lists no cases")
    cases = [load_case(find_case_file(root, cid)) for cid in ids]
    report = evaluate(model, cases, threshold=threshold)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    label = method_name or _variant_label(model.spec)
    table = (report.table_header() + "\n"
             + report.table_row(label, parameter_counts(model)["total"]) + "\n")
    (out / "table.tsv").write_text(table)
    click.echo(table.rstrip())


def _variant_label(spec) -> str:
    if spec.variant != "dunet":
        return spec.variant.replace("_", "-")
    stages = "".join(str(s) for s in spec.fusion_stages)
    return f"{'se-' if spec.use_se else ''}add-{stages}"


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--threshold", default=0.5, show_default=True)
def predict(checkpoint, image_path, out_path, threshold):
    """Segment one image volume; the mask matches the input dimensions."""
    from .kernels import bilinear_resize2d
    from .train import predict_case_volume

    model, _ = checkpoint_load(checkpoint)
    image, spacing = load_volume(image_path)
    probs = predict_case_volume(model, image)
    h, w, depth = image.shape
    rows = CROP_ROWS[1] - CROP_ROWS[0]
    cols = CROP_COLS[1] - CROP_COLS[0]
    mask = np.zeros(image.shape, dtype=np.float32)
    for k in range(depth):
        window = bilinear_resize2d(np.ascontiguousarray(probs[:, :, k]), rows, cols)
        mask[CROP_ROWS[0]:CROP_ROWS[1], CROP_COLS[0]:CROP_COLS[1], k] = window
    save_volume(out_path, (mask >= threshold).astype(np.float32), spacing)
    click.echo(f"wrote mask {image.shape} -> {out_path}")


@cli.command("count-params")
@click.option("--arch", "arch_name", default=None,
              help=f"One of: {', '.join(PRESET_NAMES)}.")
@click.option("--all", "count_all", is_flag=True,
              help="One row per known variant.")
@click.option("--input-size", default=192, show_default=True)
def count_params(arch_name, count_all, input_size):
    """Print exact parameter totals (trainable + batch-norm statistics)."""
    if not arch_name and not count_all:
        raise click.UsageError("pass --arch NAME or --all")
    names = list(PRESET_NAMES) if count_all else [arch_name]
    click.echo(f"{'architecture':18s} {'total':>12s} {'trainable':>12s} "
               f"{'non-trainable':>14s}")
    for name in names:
        spec = preset(name, input_shape=(input_size, input_size, 4))
        counts = parameter_counts(build_model(spec))
        click.echo(f"{name:18s} {counts['total']:>12,} "
                   f"{counts['trainable']:>12,} {counts['non_trainable']:>14,}")


@cli.command()
@click.option("--history", "history_files", multiple=True, type=click.Path(),
              help="History TSVs; one labeled curve each.")
@click.option("--report", "report_file", type=click.Path(), default=None,
              help="Evaluation report JSON for a per-case DSC box plot.")
@click.option("--out", "out_path", required=True, type=click.Path())
def plot(history_files, report_file, out_path):
    """Render DSC training curves or a per-case DSC box plot."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not history_files and not report_file:
        raise click.UsageError("pass --history file(s) and/or --report")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if history_files:
        for path in history_files:
            hist = load_history(path)
            ax.plot([r.epoch for r in hist], [r.dsc for r in hist],
                    label=Path(path).stem)
        ax.set_xlabel("epoch")
        ax.set_ylabel("training DSC")
        ax.set_ylim(0, 1)
        ax.legend()
    else:
        doc = json.loads(Path(report_file).read_text())
        dscs = [m["dsc"] for m in doc["per_case"].values()]
        ax.boxplot([dscs], tick_labels=["per-case DSC"])
        ax.set_ylabel("DSC")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    click.echo(f"wrote {out_path}")


@cli.command()
@click.option("--manifest", required=True, type=click.Path())
@click.option("--ratio", default=0.8, show_default=True)
@click.option("--seed", default=0, show_default=True)
def split(manifest, ratio, seed):
    """Deterministic case-level train/validation split of a manifest."""
    ids = read_manifest(manifest)
    train_ids, val_ids = split_dataset(ids, SplitSpec(train_ratio=ratio, seed=seed))
    click.echo(f"train ({len(train_ids)}): {' '.join(train_ids)}")
    click.echo(f"val   ({len(val_ids)}): {' '.join(val_ids)}")


USER_ERRORS = (ConfigError, DataError, CheckpointError, FileNotFoundError,
               ValueError, KeyError)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.BadParameter) as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except USER_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # internal failure
        click.echo(f"internal error: {exc!r}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
