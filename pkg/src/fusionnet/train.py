"""Training loop, evaluation and multi-split summaries."""
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DEFAULT_CLASS_WEIGHTS, apply_augmentation, class_weights, draw_augmentation
from .metrics import Metrics
from .models import build_model, logits, model_bands, normalise_model_spec
from .optim import Adam
from .tensor import AnomalyError, Tensor, detect_anomaly, no_grad

# Defaults chosen here rather than taken from the method description; echoed into run metadata.
ASSUMED_DEFAULTS = ("lr", "batch_size")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, op, detail=None):
        extra = f" ({detail})" if detail else ""
        super().__init__(f"loss became non-finite in epoch {epoch}; first non-finite op: {op}{extra}")
        self.epoch = epoch
        self.op = op
        self.detail = detail


@dataclass
class TrainConfig:
    epochs: int = 150
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    class_weights: list = field(default_factory=lambda: list(DEFAULT_CLASS_WEIGHTS))
    class_weight_mode: str = "fixed"
    repetitions: int = 5
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    augment: bool = True
    early_stop_patience: int = 0
    select_best_val: bool = False
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs batch statistics)")
        if len(self.seeds) != self.repetitions:
            raise ValueError(f"need exactly one seed per repetition ({self.repetitions}), got {len(self.seeds)}")
        if self.class_weight_mode not in ("fixed", "auto"):
            raise ValueError(f"unknown class_weight_mode {self.class_weight_mode!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: object
    model_spec: dict
    norm: dict
    history: list
    best_epoch: int = None


def input_norm(dataset, idx, bands):
    """Per-band, per-channel mean and std over the given sites."""
    out = {}
    for b in bands:
        x = dataset.images[b][idx].astype(np.float64)
        mean = x.mean(axis=(0, 2, 3))
        std = x.std(axis=(0, 2, 3))
        out[b] = {"mean": mean.tolist(), "std": np.where(std > 0, std, 1.0).tolist()}
    return out


def normalise(x, stats):
    mean = np.asarray(stats["mean"]).reshape(1, -1, 1, 1)
    std = np.asarray(stats["std"]).reshape(1, -1, 1, 1)
    return (x.astype(np.float64) - mean) / std


def _batch(dataset, idx, bands, norm, rng=None):
    xs = [dataset.images[b][idx] for b in bands]
    if rng is not None:
        xs = [x.copy() for x in xs]
        for j in range(len(idx)):
            params = draw_augmentation(rng)
            for x in xs:
                x[j] = apply_augmentation(x[j], params)
    return [normalise(x, norm[b]) for b, x in zip(bands, xs)]


def predict(model, dataset, idx, bands, norm, batch_size=256):
    """Eval-mode logits for the given sites, in index order."""
    model.eval()
    out = []
    with no_grad():
        for s in range(0, len(idx), batch_size):
            sel = idx[s:s + batch_size]
            out.append(logits(model, _batch(dataset, sel, bands, norm)).data)
    return np.concatenate(out) if out else np.zeros((0, 2))


def evaluate_model(model, dataset, idx, bands, norm, weights=DEFAULT_CLASS_WEIGHTS, batch_size=256):
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) == 0:
        raise ValueError("cannot evaluate an empty split")
    z = predict(model, dataset, idx, bands, norm, batch_size)
    y = dataset.labels[idx]
    loss = ops.weighted_cross_entropy(Tensor(z), y, weights).item()
    return Metrics.from_predictions(y, z.argmax(axis=1)), loss


def _batches(order, batch_size):
    """Consecutive batches; a trailing singleton is folded into the previous batch."""
    out = [order[s:s + batch_size] for s in range(0, len(order), batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def train(model_spec, dataset, split, config, seed=0, log=None):
    """Train on ``split.train``; validation metrics are recorded every epoch.

    Deterministic for a given seed: shuffling and augmentation draw from a
    generator seeded with ``seed``; parameter init comes from the ModelSpec.
    """
    model_spec = normalise_model_spec(model_spec)
    bands = model_bands(model_spec)
    missing = set(bands) - set(dataset.bands)
    if missing:
        raise ValueError(f"dataset lacks bands required by the model: {sorted(missing)}")
    model = build_model(model_spec)
    train_idx = np.asarray(split.train, dtype=np.int64)
    val_idx = np.asarray(split.val, dtype=np.int64)
    if len(train_idx) < 1:
        raise ValueError("training split is empty")
    if config.class_weight_mode == "auto":
        weights = class_weights(dataset.labels[train_idx], "auto")
    else:
        weights = list(config.class_weights)
    norm = input_norm(dataset, train_idx, bands)
    opt = Adam(model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps)
    rng = np.random.default_rng(seed)
    history = []
    best = (np.inf, None, None)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = train_idx[rng.permutation(len(train_idx))]
        tot_loss, tot_w, correct = 0.0, 0.0, 0
        for sel in _batches(order, config.batch_size):
            xs = _batch(dataset, sel, bands, norm, rng if config.augment else None)
            y = dataset.labels[sel]
            out = logits(model, xs)
            loss = ops.weighted_cross_entropy(out, y, weights)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(epoch, *_first_bad_op(model, xs, y, weights))
            opt.zero_grad()
            loss.backward()
            opt.step()
            w = float(np.asarray(weights)[y].sum())
            tot_loss += loss.item() * w
            tot_w += w
            correct += int((out.data.argmax(axis=1) == y).sum())
        record = {"epoch": epoch, "train_loss": tot_loss / tot_w, "train_accuracy": correct / len(train_idx)}
        if len(val_idx):
            vm, vloss = evaluate_model(model, dataset, val_idx, bands, norm, weights, config.eval_batch_size)
            record.update(val_loss=vloss, val_accuracy=vm.accuracy)
            if vloss < best[0]:
                best = (vloss, epoch, model.state_dict() if config.select_best_val else None)
                stale = 0
            else:
                stale += 1
        history.append(record)
        if log is not None:
            log(record)
        if config.early_stop_patience and stale >= config.early_stop_patience:
            break
    if config.select_best_val and best[2] is not None:
        model.load_state_dict(best[2])
    model.eval()
    return TrainResult(model, model_spec, norm, history, best[1])


def _first_bad_op(model, xs, y, weights):
    """Replay the batch in anomaly mode; return ``(op, detail)``."""
    try:
        with detect_anomaly():
            ops.weighted_cross_entropy(logits(model, xs), y, weights)
    except AnomalyError as err:
        if err.source is None:
            return err.op, None
        bad = next((n for n, p in model.named_parameters() if not np.all(np.isfinite(p.data))), None)
        return err.op, f"non-finite parameter {bad}" if bad else "non-finite input"
    return "unknown", None


# ----------------------------------------------------------------------
# artifacts

def save_run(result, out_dir, config, seed, extra_meta=None):
    """Write checkpoint, per-epoch history (JSON lines) and a config echo."""
    os.makedirs(out_dir, exist_ok=True)
    meta = {"input_norm": result.norm, "train_config": config.to_dict(), "seed": seed,
            "assumed_defaults": {k: getattr(config, k) for k in ASSUMED_DEFAULTS}}
    meta.update(extra_meta or {})
    ckpt = os.path.join(out_dir, "checkpoint.fckp")
    save_checkpoint(ckpt, result.model, result.model_spec, meta)
    with open(os.path.join(out_dir, "history.jsonl"), "w") as fh:
        for rec in result.history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return ckpt


def evaluate(checkpoint, dataset, idx, batch_size=256):
    """Metrics of a saved checkpoint on the given sites (eval mode, running BN stats)."""
    model, header = load_checkpoint(checkpoint)
    bands = model_bands(header["model_spec"])
    m, _ = evaluate_model(model, dataset, idx, bands, header["meta"]["input_norm"], batch_size=batch_size)
    return m
