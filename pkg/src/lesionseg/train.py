"""Training, evaluation, loss comparison, and checkpointing.

Runs are deterministic for a fixed seed: weight init, epoch shuffling,
dropout, and per-sample augmentation all derive from (seed, epoch, index),
so resuming from a checkpoint continues the exact trajectory. An epoch is
one shuffled pass over all training stacks; the per-epoch dice score pools
thresholded predictions over the whole epoch.
"""

from __future__ import annotations

import json
import time
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .arch import ArchSpec, Model, build_model, parameter_counts
from .engine.optim import SGD
from .engine.tensor import backward
from .io import VolumeCase
from .kernels import ACTIVE_BACKEND
from .losses import LossParams, get_loss
from .metrics import ConfusionCounts, MetricsReport, aggregate, binarize, confusion
from .metrics import dsc as metrics_dsc
from .pipeline import AugmentConfig, SliceStack, augment, normalize_input


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-6
    momentum: float = 0.9
    epochs: int = 150
    batch_size: int = 36
    seed: int = 0
    loss: str = "eml"
    loss_params: LossParams = field(default_factory=LossParams)
    augment: bool = False
    augment_config: AugmentConfig = field(default_factory=AugmentConfig)
    checkpoint_every: int = 0     # epochs between checkpoints; 0 = final only
    threshold: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        get_loss(self.loss)

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "loss": self.loss,
            "loss_params": self.loss_params.to_dict(),
            "augment": self.augment,
            "augment_config": self.augment_config.to_dict(),
            "checkpoint_every": self.checkpoint_every,
            "threshold": self.threshold,
        }


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    dsc: float
    seconds: float


History = list


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(1, epoch)))


def _sample_seed(seed: int, epoch: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(2, epoch, index))
    return int(ss.generate_state(1)[0])


def _stack_arrays(stacks: list[SliceStack]):
    x = np.stack([s.input for s in stacks]).astype(np.float32)
    y = np.stack([s.target for s in stacks]).astype(np.float32)
    return x, y


def train(spec: ArchSpec, stacks: list[SliceStack], cfg: TrainConfig,
          out_dir=None, resume_from=None) -> tuple[Model, History]:
    """Fit a freshly built (or resumed) model on the given stacks."""
    if not stacks:
        raise ValueError("no training stacks")
    for st in stacks:
        if st.input.shape != (spec.input_shape[0], spec.input_shape[1], 4):
            raise ValueError(
                f"stack {st.case_id}[{st.target_index}] shape {st.input.shape} "
                f"does not match architecture input {spec.input_shape}")

    history: History = []
    start_epoch = 0
    if resume_from is not None:
        model, extras = checkpoint_load(resume_from, expected_spec=spec)
        start_epoch = extras.get("epoch", 0)
        optimizer = SGD(model.params(), cfg.learning_rate, cfg.momentum)
        if extras.get("velocity"):
            optimizer.load_state_dict(extras["velocity"])
        history = list(extras.get("history", []))
    else:
        model = build_model(spec, seed=cfg.seed)
        optimizer = SGD(model.params(), cfg.learning_rate, cfg.momentum)

    loss_fn = get_loss(cfg.loss)
    m = len(stacks)
    raw_inputs, targets = _stack_arrays(stacks)
    if not cfg.augment:
        norm_inputs = np.stack([normalize_input(v) for v in raw_inputs])

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(out_dir / "manifest.json", spec, cfg,
                       extra={"num_stacks": m,
                              "parameters": parameter_counts(model),
                              "resumed_from":
                              str(resume_from) if resume_from else None})

    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        rng = _epoch_rng(cfg.seed, epoch)
        perm = rng.permutation(m)
        pooled = ConfusionCounts(0, 0, 0, 0)
        losses = []
        for lo in range(0, m, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            if cfg.augment:
                aug = [augment(stacks[i], _sample_seed(cfg.seed, epoch, int(i)),
                               cfg.augment_config) for i in idx]
                xb = np.stack([a.input for a in aug])
                yb = np.stack([a.target for a in aug]).astype(np.float32)
            else:
                xb = norm_inputs[idx]
                yb = targets[idx]
            out = model.forward_tensor(xb, training=True, rng=rng)
            p = out.data.reshape(-1).astype(np.float64)
            g = yb.reshape(-1).astype(np.float64)
            value, dp = loss_fn(p, g, cfg.loss_params)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, batch "
                    f"{lo // cfg.batch_size} (stacks {idx.tolist()})")
            model.zero_grads()
            backward(out, dp.reshape(out.data.shape).astype(np.float32))
            optimizer.step(model.grads())
            losses.append(value)
            pooled = pooled + confusion(binarize(out.data[..., 0], cfg.threshold),
                                        yb.astype(np.uint8))
        rec = EpochRecord(epoch=epoch + 1,
                          loss=float(np.mean(losses)),
                          dsc=metrics_dsc(pooled),
                          seconds=time.perf_counter() - t0)
        history.append(rec)
        if (out_dir is not None and cfg.checkpoint_every
                and (epoch + 1) % cfg.checkpoint_every == 0):
            checkpoint_save(out_dir / f"checkpoint_ep{epoch + 1:04d}.npz",
                            model, optimizer=optimizer, epoch=epoch + 1,
                            cfg=cfg, history=history)

    if out_dir is not None:
        checkpoint_save(out_dir / "checkpoint.npz", model, optimizer=optimizer,
                        epoch=cfg.epochs, cfg=cfg, history=history)
        save_history(out_dir / "history.tsv", history)
    return model, history


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def predict_case_volume(model: Model, image: np.ndarray,
                        batch_size: int = 8) -> np.ndarray:
    """Probability volume (s, s, depth) for a raw image volume."""
    from .pipeline import STACK_OFFSETS, preprocess_image_volume

    size = model.spec.input_shape[0]
    img = preprocess_image_volume(image, size)
    depth = img.shape[2]
    stacks = np.empty((depth, size, size, 4), dtype=np.float32)
    for i in range(depth):
        for ch, off in enumerate(STACK_OFFSETS):
            stacks[i, :, :, ch] = img[:, :, min(max(i + off, 0), depth - 1)]
        stacks[i] = normalize_input(stacks[i])
    probs = np.empty((size, size, depth), dtype=np.float32)
    for lo in range(0, depth, batch_size):
        hi = min(lo + batch_size, depth)
        out = model.forward(stacks[lo:hi], training=False)
        probs[:, :, lo:hi] = np.moveaxis(out[..., 0], 0, -1)
    return probs


def evaluate(model: Model, cases: list[VolumeCase],
             threshold: float = 0.5, batch_size: int = 8) -> MetricsReport:
    """Per-case and voxel-pooled metrics against preprocessed labels.

    Read-only: parameters and batch-norm statistics are never touched.
    """
    from .pipeline import preprocess_label_volume

    if not cases:
        raise ValueError("no cases to evaluate")
    size = model.spec.input_shape[0]
    counts = {}
    for case in cases:
        probs = predict_case_volume(model, case.image, batch_size)
        pred = binarize(probs, threshold)
        gt = preprocess_label_volume(case.label, size)
        counts[case.case_id] = confusion(pred, gt)
    return aggregate(counts)


def evaluate_stacks(model: Model, stacks: list[SliceStack],
                    threshold: float = 0.5, batch_size: int = 8) -> MetricsReport:
    """Metrics over prebuilt stacks, grouped back into their cases.

    Every case must contribute a contiguous run of slice indices starting
    at 0, otherwise the reassembled volume would have holes.
    """
    if not stacks:
        raise ValueError("no stacks to evaluate")
    by_case: dict[str, list[SliceStack]] = {}
    for st in stacks:
        by_case.setdefault(st.case_id, []).append(st)
    counts = {}
    for cid, case_stacks in by_case.items():
        case_stacks = sorted(case_stacks, key=lambda s: s.target_index)
        indices = [s.target_index for s in case_stacks]
        if indices != list(range(len(case_stacks))):
            raise ValueError(f"case {cid}: missing slices (have {indices})")
        x = np.stack([normalize_input(s.input) for s in case_stacks])
        gt = np.stack([s.target for s in case_stacks])
        preds = []
        for lo in range(0, len(case_stacks), batch_size):
            out = model.forward(x[lo:lo + batch_size], training=False)
            preds.append(out[..., 0])
        counts[cid] = confusion(binarize(np.concatenate(preds), threshold), gt)
    return aggregate(counts)


# ---------------------------------------------------------------------------
# Loss comparison
# ---------------------------------------------------------------------------

@dataclass
class CurveBundle:
    curves: dict[str, History]

    def epochs_to_dsc(self, threshold: float) -> dict[str, int | None]:
        """First 1-based epoch whose training dice reaches the threshold."""
        out = {}
        for name, hist in self.curves.items():
            hit = next((r.epoch for r in hist if r.dsc >= threshold), None)
            out[name] = hit
        return out

    def to_dict(self) -> dict:
        return {name: [vars(r) for r in hist]
                for name, hist in self.curves.items()}


def compare_losses(spec: ArchSpec, stacks: list[SliceStack], cfg: TrainConfig,
                   losses=("fl", "dl", "eml")) -> CurveBundle:
    """Identical seed/data/architecture, one training run per loss."""
    curves = {}
    for name in losses:
        run_cfg = replace(cfg, loss=name)
        _, hist = train(spec, stacks, run_cfg)
        curves[name] = hist
    lengths = {len(h) for h in curves.values()}
    if len(lengths) != 1:
        raise RuntimeError(f"curve lengths diverged: {lengths}")
    return CurveBundle(curves)


# ---------------------------------------------------------------------------
# Checkpoints, history, manifests
# ---------------------------------------------------------------------------

def checkpoint_save(path, model: Model, optimizer: SGD | None = None,
                    epoch: int | None = None, cfg: TrainConfig | None = None,
                    history: History | None = None) -> None:
    arrays = {}
    for name, arr in model.params().items():
        arrays["param/" + name] = arr
    for name, arr in model.buffers().items():
        arrays["buffer/" + name] = arr
    if optimizer is not None:
        for name, arr in optimizer.state_dict().items():
            arrays["velocity/" + name] = arr
    meta = {
        "format": "lesionseg-checkpoint-v1",
        "spec": model.spec.to_dict(),
        "spec_hash": model.spec.content_hash(),
        "epoch": epoch,
        "cfg": cfg.to_dict() if cfg is not None else None,
        "history": [vars(r) for r in history] if history else [],
        "version": __version__,
    }
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def checkpoint_load(path, expected_spec: ArchSpec | None = None,
                    seed: int = 0) -> tuple[Model, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            arrays = {k: data[k] for k in data.files if k != "meta"}
    except (zipfile.BadZipFile, ValueError, KeyError, OSError, EOFError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if meta.get("format") != "lesionseg-checkpoint-v1":
        raise CheckpointError(f"{path}: unknown checkpoint format")
    spec = ArchSpec.from_dict(meta["spec"])
    if spec.content_hash() != meta.get("spec_hash"):
        raise CheckpointError(f"{path}: spec hash mismatch inside checkpoint")
    if expected_spec is not None and expected_spec.content_hash() != meta["spec_hash"]:
        raise CheckpointError(
            f"{path}: checkpoint was built for a different architecture "
            f"({meta['spec']} vs {expected_spec.to_dict()})")
    model = build_model(spec, seed=seed)
    params = {k[len("param/"):]: v for k, v in arrays.items()
              if k.startswith("param/")}
    buffers = {k[len("buffer/"):]: v for k, v in arrays.items()
               if k.startswith("buffer/")}
    velocity = {k[len("velocity/"):]: v for k, v in arrays.items()
                if k.startswith("velocity/")}
    try:
        model.load_state(params, buffers)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    extras = {
        "epoch": meta.get("epoch") or 0,
        "velocity": velocity,
        "cfg": meta.get("cfg"),
        "history": [EpochRecord(**r) for r in meta.get("history", [])],
    }
    return model, extras


def save_history(path, history: History) -> None:
    lines = ["epoch\tloss\tdsc\tseconds"]
    for r in history:
        lines.append(f"{r.epoch}\t{r.loss:.8f}\t{r.dsc:.6f}\t{r.seconds:.3f}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_history(path) -> History:
    lines = Path(path).read_text().strip().splitlines()
    out = []
    for line in lines[1:]:
        e, l, d, s = line.split("\t")
        out.append(EpochRecord(int(e), float(l), float(d), float(s)))
    return out


def write_manifest(path, spec: ArchSpec, cfg: TrainConfig,
                   extra: dict | None = None) -> None:
    doc = {
        "spec": spec.to_dict(),
        "spec_hash": spec.content_hash(),
        "train": cfg.to_dict(),
        "seed": cfg.seed,
        "backend": ACTIVE_BACKEND,
        "version": __version__,
        "parameters": None,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
