"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py`` or as a script with
``python3 tests/test_acceptance.py``.
"""
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from fusionnet import ops
from fusionnet.ablation import AblationSuite, format_table, run_ablation
from fusionnet.cam import cam
from fusionnet.data import (BANDS, CEMENT, class_weights, draw_augmentation, site_labels, stratified_split,
                            synth_dataset)
from fusionnet.fusion import ChannelAttention
from fusionnet.gabor import init_bank
from fusionnet.layers import DEFAULT_RATES, alpha_schedule, dilated_block, mix_pool
from fusionnet.models import DESK_BRANCH, backbone_model_spec, fusion_model_spec
from fusionnet.nn import BatchNorm2d
from fusionnet.optim import AdamState, adam_step
from fusionnet.tensor import Tensor
from fusionnet.train import TrainConfig, evaluate_model, normalise, train

import oracles

# Separable end-to-end gate: 2,000 sites (4:1) with all five band chips each.
GATE_SITES = (400, 1600)
GATE_EPOCHS = 8
GATE_SEED = 0


_capture = {"manager": None}


def _emit(text):
    mgr = _capture["manager"]
    if mgr is not None:
        with mgr.global_and_fixture_disabled():
            print("\n" + text, flush=True)
    else:
        print(text, flush=True)


def report(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} - {detail}"
    _emit(line)
    return line


# ----------------------------------------------------------------------
# 1. gradient soundness

def criterion_1():
    t0 = time.time()
    proc = subprocess.run([sys.executable, "-m", "fusionnet", "gradcheck", "--module", "all"],
                          capture_output=True, text=True)
    elapsed = time.time() - t0
    lines = [ln for ln in proc.stdout.splitlines() if ln.startswith(("PASS", "FAIL"))]
    failed = [ln for ln in lines if ln.startswith("FAIL")]
    names = " ".join(lines)
    covered = all(k in names for k in ("conv2d", "pool2d", "batch_norm", "weighted_cross_entropy", "gabor",
                                       "mix_pool", "dilated block", "channel attention"))
    ok = proc.returncode == 0 and not failed and covered and elapsed < 60
    return ok, f"{len(lines) - len(failed)}/{len(lines)} checks passed, exit {proc.returncode}, {elapsed:.1f}s"


# ----------------------------------------------------------------------
# 2. oracle equivalence

def criterion_2(trials=100):
    rng = np.random.default_rng(2024)
    worst = {}

    def note(key, err):
        worst[key] = max(worst.get(key, 0.0), float(err))

    for d in (1, 3, 6, 9):
        for _ in range(trials):
            b, cin, cout = rng.integers(1, 3), rng.integers(1, 5), rng.integers(1, 5)
            h, w = rng.integers(1, 9, size=2)
            k = int(rng.choice([1, 3]))
            pad = d * (k - 1) // 2
            x = rng.standard_normal((b, cin, h, w))
            wt = rng.standard_normal((cout, cin, k, k))
            bias = rng.standard_normal(cout)
            out = ops.conv2d(Tensor(x), Tensor(wt), Tensor(bias), 1, pad, d).data
            note(f"conv2d d={d}", np.abs(out - oracles.conv2d_loops(x, wt, bias, 1, pad, d)).max())
    for _ in range(trials):
        b, c = rng.integers(1, 3), rng.integers(1, 5)
        h, w = rng.integers(2, 9, size=2)
        win = int(rng.integers(1, 3))
        stride = int(rng.integers(1, 3))
        x = rng.standard_normal((b, c, h, w))
        for mode in ("max", "avg"):
            out = ops.pool2d(Tensor(x), mode, win, stride).data
            note("pool2d", np.abs(out - oracles.pool2d_loops(x, mode, win, stride)).max())
    for _ in range(trials):
        b, c = rng.integers(2, 3), rng.integers(1, 5)
        h, w = rng.integers(1, 9, size=2)
        x = rng.standard_normal((b, c, h, w))
        gamma, beta = rng.uniform(0.5, 2, c), rng.standard_normal(c)
        g = rng.standard_normal(x.shape)
        bn = BatchNorm2d(c)
        bn.weight.data[:] = gamma
        bn.bias.data[:] = beta
        xt = Tensor(x, requires_grad=True)
        y = bn(xt)
        (y * Tensor(g)).sum().backward()
        ref = oracles.batch_norm_formula(x, gamma, beta)[0]
        note("batch_norm", max(np.abs(y.data - ref).max(),
                               np.abs(xt.grad - oracles.batch_norm_grad_formula(x, gamma, g)).max()))
    for _ in range(trials):
        n = int(rng.integers(1, 33))
        z = rng.standard_normal((n, 2)) * 3
        y = rng.integers(0, 2, n)
        wts = rng.uniform(0.5, 4, 2)
        got = ops.weighted_cross_entropy(Tensor(z), y, wts).item()
        note("weighted_cross_entropy", abs(got - oracles.weighted_ce_scalar(z, y, wts)))
    for _ in range(trials):
        p0 = float(rng.standard_normal())
        grads = list(rng.standard_normal(int(rng.integers(1, 6))))
        lr = float(rng.uniform(1e-4, 1e-1))
        p = np.array([p0])
        state = AdamState([(1,)], lr=lr)
        ref = oracles.adam_scalar(p0, grads, lr=lr)
        for g, r in zip(grads, ref):
            adam_step([p], [np.array([g])], state)
            note("adam", abs(p[0] - r))
    tol = {k: (1e-12 if k in ("weighted_cross_entropy", "adam") else 1e-10) for k in worst}
    ok = all(worst[k] <= tol[k] for k in worst)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return ok, f"{trials} trials each; max abs err: {detail}"


# ----------------------------------------------------------------------
# 3. layer identities

def criterion_3():
    rng = np.random.default_rng(3)
    checks = {}
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    checks["mixpool endpoints"] = (np.array_equal(mix_pool(x, 1.0).data, ops.pool2d(x, "max", 2).data)
                                   and np.array_equal(mix_pool(x, 0.0).data, ops.pool2d(x, "avg", 2).data))
    w = np.arange(18.0).reshape(1, 2, 3, 3) - 6.0
    x1 = Tensor(np.full((1, 2, 1, 1), 2.0))
    m = ops.relu(ops.conv2d(x1, Tensor(w), padding=1)).data
    h = dilated_block(x1, [Tensor(w) for _ in DEFAULT_RATES]).data
    checks["H = 2M"] = bool(m.item() > 0 and np.array_equal(h, 2.0 * m))
    att = ChannelAttention(8, 4, rng=rng)
    for p in att.parameters():
        p.data[:] = 0.0
    f = rng.standard_normal((2, 8, 4, 4))
    checks["attention 1.5F"] = bool(np.abs(att(Tensor(f)).data - 1.5 * f).max() <= 1e-12)
    bank = init_bank(5, 8, 7, seed=0)
    checks["bank init"] = (abs(bank.omega.data[0] - math.pi / 2) <= 1e-12
                           and abs(bank.theta.data[7] - 7 * math.pi / 8) <= 1e-12
                           and abs(bank.sigma.data[0] - 2.0) <= 1e-12)
    ok = all(checks.values())
    return ok, ", ".join(f"{k} {'ok' if v else 'MISMATCH'}" for k, v in checks.items())


# ----------------------------------------------------------------------
# 4. protocol fixtures

def criterion_4():
    labels = site_labels(899, 2807, seed=0)
    sp = stratified_split(labels, seed=0)
    n_test_cement = int((labels[sp.test] == CEMENT).sum())
    weights = class_weights(labels)
    alphas = alpha_schedule(5)
    rng = np.random.default_rng(4)
    draws = np.array([[d[0] > 0, d[1], d[2]] for d in (draw_augmentation(rng) for _ in range(10000))], float)
    rates = draws.mean(axis=0)
    ok = (n_test_cement == 180 and weights == [3.0, 1.0] and alphas == (1.0, 0.8, 0.6, 0.4, 0.2)
          and np.all(np.abs(rates - [0.9, 0.5, 0.1]) <= 0.02))
    return ok, (f"cement test {n_test_cement}, weights {weights}, alpha {alphas}, "
                f"augmentation rates {np.round(rates, 4).tolist()}")


# ----------------------------------------------------------------------
# 5 and 8. separable end-to-end gate and its determinism

def gate_run(seed=GATE_SEED):
    with threadpool_limits(1):
        t0 = time.time()
        ds = synth_dataset(*GATE_SITES, BANDS, 32, seed=seed, preset="separable")
        split = stratified_split(ds.labels, seed)
        spec = fusion_model_spec("DGCNN", seed=seed, **DESK_BRANCH)
        cfg = TrainConfig(epochs=GATE_EPOCHS, repetitions=1, seeds=[seed])
        res = train(spec, ds, split, cfg, seed=seed)
        metrics, loss = evaluate_model(res.model, ds, split.test, BANDS, res.norm)
        elapsed = time.time() - t0
    doc = {"seed": seed, "epochs": GATE_EPOCHS, "test": metrics.to_dict(), "test_loss": loss,
           "history": res.history}
    return json.dumps(doc, sort_keys=True), metrics, elapsed


_GATE = {}


def gate_once():
    if "first" not in _GATE:
        _GATE["first"] = gate_run()
    return _GATE["first"]


def criterion_5():
    text, m, elapsed = gate_once()
    ok = m.accuracy >= 0.95 and m.recall[CEMENT] >= 0.90 and GATE_EPOCHS <= 30 and elapsed < 15 * 60
    return ok, (f"{sum(GATE_SITES)} sites x 5 bands, {GATE_EPOCHS} epochs, test accuracy {m.accuracy:.4f}, "
                f"cement recall {m.recall[CEMENT]:.4f}, {elapsed:.0f}s on one thread")


def criterion_8():
    first, _, _ = gate_once()
    second, _, _ = gate_run()
    ok = first == second
    return ok, f"metrics JSON {'bit-identical' if ok else 'DIFFERS'} across two runs ({len(first)} bytes)"


# ----------------------------------------------------------------------
# 6. ablation trend

def criterion_6():
    with threadpool_limits(1):
        result = run_ablation(AblationSuite())
    _emit("\n" + format_table(result))
    acc = {v: row["B76"] for v, row in result["table"].items()}
    margin = 0.01
    ok = all(acc["DGCNN"] >= acc[v] - margin for v in ("CNN5", "MPCNN5", "GCNN5", "DCNN5"))
    detail = ", ".join(f"{v} {100 * a:.1f}%" for v, a in acc.items())
    return ok, f"hard preset, B76, 3 seeds: {detail}"


# ----------------------------------------------------------------------
# 7. CAM localisation

def criterion_7(n_chips=50, band="B10", seed=0):
    with threadpool_limits(1):
        ds = synth_dataset(*GATE_SITES, [band], 32, seed=seed, preset="separable")
        split = stratified_split(ds.labels, seed)
        spec = backbone_model_spec("DGCNN", band=band, seed=seed, **DESK_BRANCH)
        res = train(spec, ds, split, TrainConfig(epochs=GATE_EPOCHS, repetitions=1, seeds=[seed]), seed=seed)
        held = [i for i in split.test if ds.labels[i] == CEMENT][:n_chips]
        hits = 0
        for i in held:
            x = normalise(ds.images[band][i:i + 1], res.norm[band])[0]
            heat, _ = cam(res.model, x, target=CEMENT)
            mask = ds.masks[i]
            hits += heat[mask].mean() > heat[~mask].mean()
    frac = hits / len(held)
    ok = len(held) == n_chips and frac >= 0.9
    return ok, f"{hits}/{len(held)} held-out cement chips ({100 * frac:.0f}%) have more CAM mass inside the mask"


CRITERIA = [
    (1, "gradient soundness", criterion_1),
    (2, "oracle equivalence", criterion_2),
    (3, "layer identities", criterion_3),
    (4, "protocol fixtures", criterion_4),
    (5, "separable end-to-end gate", criterion_5),
    (6, "ablation trend", criterion_6),
    (7, "CAM localisation", criterion_7),
    (8, "determinism", criterion_8),
]


@pytest.mark.slow
@pytest.mark.parametrize("number,title,fn", CRITERIA, ids=[f"criterion_{n}" for n, _, _ in CRITERIA])
def test_criterion(number, title, fn, pytestconfig):
    _capture["manager"] = pytestconfig.pluginmanager.getplugin("capturemanager")
    ok, detail = fn()
    report(number, title, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    results = [fn() for _, _, fn in CRITERIA]
    for (number, title, _), (ok, detail) in zip(CRITERIA, results):
        report(number, title, ok, detail)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
