"""Ablation suites: mean test accuracy per backbone variant and band over several seeds."""
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .backbones import VARIANTS
from .data import parse_bands, stratified_split, synth_dataset
from .models import DESK_BRANCH, backbone_model_spec
from .train import TrainConfig, evaluate_model, train

VARIANT_ORDER = ("CNN5", "MPCNN5", "GCNN5", "DCNN5", "DGCNN")


@dataclass
class AblationSuite:
    variants: list = field(default_factory=lambda: list(VARIANT_ORDER))
    bands: list = field(default_factory=lambda: ["B76"])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    n_cement: int = 160
    n_landcover: int = 640
    size: int = 32
    preset: str = "hard"
    epochs: int = 12
    lr: float = 1e-3
    batch_size: int = 32
    backbone: dict = field(default_factory=lambda: dict(DESK_BRANCH))

    def __post_init__(self):
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ValueError(f"unknown variants {sorted(unknown)}")
        self.bands = list(parse_bands(self.bands))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ablation suite keys: {sorted(unknown)}")
        return cls(**d)


def run_cell(suite, variant, band, seed):
    ds = synth_dataset(suite.n_cement, suite.n_landcover, [band], suite.size, seed, suite.preset)
    split = stratified_split(ds.labels, seed)
    spec = backbone_model_spec(variant, band=band, seed=seed, **suite.backbone)
    cfg = TrainConfig(epochs=suite.epochs, lr=suite.lr, batch_size=suite.batch_size, repetitions=1, seeds=[seed])
    res = train(spec, ds, split, cfg, seed=seed)
    metrics, _ = evaluate_model(res.model, ds, split.test, (band,), res.norm)
    return metrics.accuracy


def run_ablation(suite, log=None):
    """Return ``{"cells": [...], "table": {variant: {band: mean_acc}}, "sd": {...}}``.

    Every variant sees the same data and split for a given (band, seed).
    Cells run in fixed order: band, variant, seed.
    """
    cells = []
    for band in suite.bands:
        for variant in suite.variants:
            for seed in suite.seeds:
                acc = run_cell(suite, variant, band, seed)
                cell = {"variant": variant, "band": band, "seed": seed, "accuracy": acc}
                cells.append(cell)
                if log is not None:
                    log(cell)
    table, sd = {}, {}
    for variant in suite.variants:
        table[variant], sd[variant] = {}, {}
        for band in suite.bands:
            accs = np.array([c["accuracy"] for c in cells if c["variant"] == variant and c["band"] == band])
            table[variant][band] = float(accs.mean())
            sd[variant][band] = float(accs.std())
    return {"suite": asdict(suite), "cells": cells, "table": table, "sd": sd}


def format_table(result):
    bands = result["suite"]["bands"]
    lines = ["| Model | " + " | ".join(bands) + " | Mean |", "|---" * (len(bands) + 2) + "|"]
    for variant, row in result["table"].items():
        vals = [row[b] * 100 for b in bands]
        lines.append(f"| {variant} | " + " | ".join(f"{v:.1f}" for v in vals) + f" | {np.mean(vals):.1f} |")
    return "\n".join(lines)
