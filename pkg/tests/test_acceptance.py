"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v``; the summary section at the end
lists every criterion with its measured values.
"""
import io
import math
import time

import numpy as np
import pytest

from wignet import checks, cli
from wignet.data import make_dataset
from wignet.graph import knn_global, knn_oracle, knn_windows
from wignet.layers import FFNLayer, GrapherLayer
from wignet.model import REFERENCE_SIZES, build, count_macs, count_params
from wignet.profiler import knn_cost
from wignet.tensor import Tensor
from wignet.train import predict, train
from wignet.windowing import FeatureGrid, cyclic_shift, pad_grid, partition, region_map


def _windows(feats, M, shifted):
    B, H, W, C = feats.shape
    g, ph, pw = pad_grid(FeatureGrid(Tensor(feats)), M)
    S = M // 2 if shifted else 0
    if S:
        g = cyclic_shift(g, S)
    return partition(g, M), region_map(H, W, M, S, bool(S), ph, pw)


# ----------------------------------------------------------------------

def test_c1_complexity_law(report):
    M, F = 8, 2
    rng = np.random.default_rng(0)
    win_pairs, glob_pairs, ok = [], [], True
    for n in (16, 32, 64, 128):
        x = rng.standard_normal((1, n, n, F)).astype(np.float32)
        ws, r = _windows(x, M, False)
        _, s = knn_windows(ws, r, 9, adaptive=False)
        _, g = knn_global(FeatureGrid(Tensor(x)), 9)
        ok &= s.distance_pairs_evaluated == n * n * M * M == knn_cost("wignet_knn", n, n, M, F).pairs
        ok &= g.distance_pairs_evaluated == (n * n) ** 2 == knn_cost("global_knn", n, n, M, F).pairs
        win_pairs.append(knn_cost("wignet_knn", n, n, M, F).macs)
        glob_pairs.append(knn_cost("global_knn", n, n, M, F).macs)
    wr = [b / a for a, b in zip(win_pairs, win_pairs[1:])]
    gr = [b / a for a, b in zip(glob_pairs, glob_pairs[1:])]
    ok &= wr == [4.0] * 3 and gr == [16.0] * 3
    report("1", "complexity law", ok, f"windowed ratios {wr}, global ratios {gr}, measured pairs exact")
    assert ok


def test_c2_oracle_equivalence(report):
    r = np.random.default_rng(2024)
    mismatches, edges, combos, instances = 0, 0, set(), 0
    for _ in range(200):
        M = int(r.integers(1, 6))
        H, W = int(r.integers(1, 3 * M + 1)), int(r.integers(1, 3 * M + 1))
        B, C = int(r.integers(1, 3)), int(r.integers(1, 5))
        if r.random() < 0.5:
            feats = r.standard_normal((B, H, W, C)).astype(np.float32)
        else:
            feats = r.integers(-2, 3, size=(B, H, W, C)).astype(np.float32)
        shifted = bool(r.random() < 0.5) and M > 1
        adaptive = bool(r.random() < 0.5)
        k = int(r.integers(1, 10))
        ws, rm = _windows(feats, M, shifted)
        fast, _ = knn_windows(ws, rm, k, adaptive)
        mismatches += fast.mismatches(knn_oracle(ws, rm, k, adaptive))
        edges += int(fast.valid.sum())
        combos.add((shifted, adaptive, bool((rm.labels < 0).any())))
        instances += 1
    ok = mismatches == 0 and len(combos) == 8 and instances >= 200
    report("2", "oracle equivalence", ok,
           f"{instances} instances, {len(combos)}/8 shifted/adaptive/padded combos, {edges} edges, {mismatches} mismatches")
    assert ok


def test_c3_mask_soundness(report):
    feats = np.random.default_rng(3).standard_normal((1, 16, 16, 3)).astype(np.float32)
    ws, r = _windows(feats, 8, True)
    t, _ = knn_windows(ws, r, 9, adaptive=True)
    cross = self_edges = 0
    per_size: dict[int, set] = {}
    for w in range(r.labels.shape[0]):
        for i in range(64):
            nb = t.indices[0, w, i][t.valid[0, w, i]]
            cross += int(np.sum(r.labels[w, nb] != r.labels[w, i]))
            self_edges += int(np.sum(nb == i))
            per_size.setdefault(int((r.labels[w] == r.labels[w, i]).sum()), set()).add(len(nb))
    ok = cross == 0 and self_edges == 0 and per_size == {64: {9}, 32: {4}, 16: {2}}
    report("3", "mask soundness", ok, f"cross-region {cross}, self {self_edges}, k_i by region size {per_size}")
    assert ok


def test_c4_gradient_correctness(report):
    results = {scope: checks.SUITES[scope](0) for scope in ("ops", "block", "model")}
    worst = {scope: max(e for _, e in res) for scope, res in results.items()}
    ok = all(worst[s] < checks.THRESHOLDS[s] for s in worst)
    detail = ", ".join(f"{s} worst {worst[s]:.2e} (< {checks.THRESHOLDS[s]:.0e})" for s in worst)
    report("4", "gradient correctness", ok, detail)
    assert ok


def test_c5_residual_identities(report):
    r = np.random.default_rng(5)
    g = GrapherLayer(8, 4, 4, r, shifted=True)
    f = FFNLayer(8, 4, r)
    for p in (g.fc_out.weight, g.fc_out.bias, f.fc2.weight, f.fc2.bias):
        p.data[...] = 0
    exact_g = exact_f = 0
    for _ in range(20):
        x = Tensor(r.standard_normal((2, 8, 8, 8)).astype(np.float32))
        exact_g += bool(np.array_equal(g(x).data, x.data))
        exact_f += bool(np.array_equal(f(x).data, x.data))
    ok = exact_g == 20 and exact_f == 20
    report("5", "residual identities", ok, f"Grapher {exact_g}/20, FFN {exact_f}/20 bit-exact")
    assert ok


def test_c6_size_introspection(report):
    ok, parts = True, []
    for v, (tp, tm) in REFERENCE_SIZES.items():
        m = build(v, input_resolution=(256, 256))
        p, macs = count_params(m) / 1e6, count_macs(m) / 1e9
        dp, dm = (p - tp) / tp, (macs - tm) / tm
        ok &= abs(dp) <= 0.15 and abs(dm) <= 0.20
        parts.append(f"{v} {p:.2f}M ({dp:+.1%}) {macs:.2f}B ({dm:+.1%})")
    report("6", "parameter and MAC introspection", ok, "; ".join(parts))
    assert ok


def test_c7_linear_scaling(report):
    ratios = {H: count_macs(build("Ti"), 2 * H) / count_macs(build("Ti"), H) for H in (128, 256)}
    ok = all(3.9 < q < 4.3 for q in ratios.values())
    report("7", "model-level linear scaling", ok, ", ".join(f"{2 * H}/{H}: {q:.4f}" for H, q in ratios.items()))
    assert ok


# ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_training(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    data = make_dataset(2000, 4, seed=7)
    model = build("toy-narrow", seed=7)
    t0 = time.perf_counter()
    result = train(model, data, epochs=20, seed=7, out_dir=out, log=lambda s: None)
    elapsed = time.perf_counter() - t0
    return data, model, result, elapsed


def test_c8_toy_training(report, toy_training):
    data, model, result, elapsed = toy_training
    accs = [row["val_acc"] for row in result.metrics]
    # second seeded run: the first two epochs of the same 20-epoch schedule
    rerun = train(build("toy-narrow", seed=7), make_dataset(2000, 4, seed=7), epochs=20, seed=7,
                  log=lambda s: None, halt_after=2)
    n = len(rerun.step_losses)
    reproducible = rerun.step_losses == result.step_losses[:n] and rerun.metrics == result.metrics[:2]
    ok = max(accs) >= 0.90 and len(accs) == 20 and elapsed < 15 * 60 and reproducible
    first = next(i + 1 for i, a in enumerate(accs) if a >= 0.90) if max(accs) >= 0.90 else None
    report("8", "toy training", ok,
           f"best val_acc {max(accs):.4f} (>= 0.90 first at epoch {first}), {elapsed:.0f}s, "
           f"loss curve bit-identical over {n} rerun steps: {reproducible}")
    assert ok


def test_c8_predict_on_training_images(report, toy_training):
    data, model, result, _ = toy_training
    xtr, ytr = data.split("train")
    idx = np.random.default_rng(0).choice(len(ytr), 200, replace=False)
    ids, scores = predict(model, xtr[idx])
    top1 = float(np.mean(ids[:, 0] == ytr[idx]))
    ok = top1 >= 0.90 and np.allclose(scores.sum(axis=1), 1.0)
    report("8b", "predict on training images", ok, f"top-1 {top1:.3f} on 200 sampled training images")
    assert ok


def test_c9_non_reproducibility_and_ablation(report):
    statement = (
        "ImageNet Top-1 (78.4/78.8/82.0/83.0) and CelebA-HQ results are NOT reproduced at desk scale; "
        "criteria 1-8 stand in for them"
    )
    runs = {}
    for name, flags in {
        "shift on": ["--shift", "on"],
        "shift off": ["--shift", "off"],
        "adaptive-k off": ["--adaptive-k", "off"],
    }.items():
        buf = io.StringIO()
        code = cli.main(["train", "--variant", "toy-deep", "--samples", "400", "--epochs", "2",
                         "--seed", "7", *flags], out=buf)
        losses = [float(line.split("train_loss")[1].split()[0]) for line in buf.getvalue().splitlines()
                  if line.startswith("epoch")]
        runs[name] = (code, losses)
    m_on, m_off = build("toy-deep"), build("toy-deep", shift=False)
    # shifting engages on the multi-window stages only when enabled
    shifts_on = [g.geometry(16 >> s, 16 >> s)[1] for s, g in zip((0, 0, 1, 1, 2, 2, 3, 3), m_on.graphers())]
    shifts_off = [g.geometry(16 >> s, 16 >> s)[1] for s, g in zip((0, 0, 1, 1, 2, 2, 3, 3), m_off.graphers())]
    ok = all(code == 0 and len(ls) == 2 and all(math.isfinite(v) for v in ls) for code, ls in runs.values())
    ok &= any(shifts_on) and not any(shifts_off)
    detail = "; ".join(f"{k}: exit {c}, train_loss {ls}" for k, (c, ls) in runs.items())
    report("9", "non-reproducibility statement + ablation mechanism", ok,
           f"{statement}. Ablation on toy-deep: {detail}; shift sizes on={shifts_on} off={shifts_off}")
    assert ok
