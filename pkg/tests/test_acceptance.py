"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Criteria 5-7 and 10 share one CLI run on a 9000-contract synthetic
portfolio (see ``e2e_run`` in conftest), which takes several minutes.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from tsnerisk.baselines import KINDS, LINEAR_KINDS, compare_spaces
from tsnerisk.dataset import SyntheticConfig, claims_of, encode_features, parse_contracts
from tsnerisk.metrics import group_stats, roc_auc, top_fraction_table
from tsnerisk.neuralnet import MlpSpec, TrainConfig, fit_nn_tsne, forward, init_mlp, \
    mse_loss_and_gradients
from tsnerisk.pipeline import RiskPipeline
from tsnerisk.surface import GridGeometry, smooth3x3, surface_from_network
from tsnerisk.tsne import (
    TsneConfig,
    conditional_affinities,
    gradient_and_kl,
    kl_divergence,
    kl_gradient,
    low_dim_affinities,
    pairwise_sq_distances,
    run_tsne,
    symmetrize,
)

from conftest import MULTI_THREAD_ENV, SINGLE_THREAD_ENV, knn_purity, make_blobs, run_cli

H = 1e-5


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


def _rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def _central_diff(f, theta):
    g = np.zeros_like(theta)
    for k in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up.flat[k] += H
        down.flat[k] -= H
        g.flat[k] = (f(up) - f(down)) / (2 * H)
    return g


def _random_p(rng, n):
    d = pairwise_sq_distances(rng.standard_normal((n, 4)))
    p_cond, _, _ = conditional_affinities(d, perplexity=min(5.0, n - 2.5))
    return symmetrize(p_cond)


def test_criterion_1_gradient_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_tsne = worst_fast = worst_mlp = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 13))
        p = _random_p(rng, n)
        y = rng.standard_normal((n, 2))
        fd = _central_diff(lambda yy: kl_divergence(p, low_dim_affinities(yy)[0]), y)
        worst_tsne = max(worst_tsne, _rel_err(kl_gradient(p, y), fd))
        pc = p[np.triu_indices(n, 1)]
        worst_fast = max(worst_fast, _rel_err(gradient_and_kl(pc, y)[0], fd))

    for _ in range(20):
        sizes = (int(rng.integers(1, 5)), int(rng.integers(2, 7)), int(rng.integers(1, 4)))
        net = init_mlp(MlpSpec(sizes), seed=int(rng.integers(1 << 30)))
        net.biases = [rng.standard_normal(b.shape) * 0.5 for b in net.biases]
        x = rng.standard_normal((7, sizes[0]))
        t = rng.standard_normal((7, sizes[-1]))
        _, gw, gb = mse_loss_and_gradients(net, x, t)
        for k in range(len(net.weights)):
            def loss_w(w, k=k):
                saved = net.weights[k]
                net.weights[k] = w
                out = mse_loss_and_gradients(net, x, t)[0]
                net.weights[k] = saved
                return out

            def loss_b(b, k=k):
                saved = net.biases[k]
                net.biases[k] = b
                out = mse_loss_and_gradients(net, x, t)[0]
                net.biases[k] = saved
                return out

            worst_mlp = max(worst_mlp, _rel_err(gw[k], _central_diff(loss_w, net.weights[k].copy())),
                            _rel_err(gb[k], _central_diff(loss_b, net.biases[k].copy())))
    elapsed = time.perf_counter() - t0
    worst = max(worst_tsne, worst_fast, worst_mlp)
    verdict(1, worst <= 1e-5 and elapsed < 10,
            f"max relative error t-SNE {worst_tsne:.2e}, fast path {worst_fast:.2e}, "
            f"MLP {worst_mlp:.2e}; {elapsed:.1f}s")


def test_criterion_2_perplexity_calibration(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, warnings = 0.0, 0
    for _ in range(10):
        d = pairwise_sq_distances(rng.standard_normal((50, 14)))
        for target in (5, 15, 30):
            p, _, warned = conditional_affinities(d, target)
            warnings += warned.size
            with np.errstate(divide="ignore", invalid="ignore"):
                h = -np.nansum(np.where(p > 0, p * np.log2(p), 0.0), axis=1)
            worst = max(worst, float(np.abs(h - math.log2(target)).max()))
    elapsed = time.perf_counter() - t0
    verdict(2, worst <= 1e-3 and warnings == 0 and elapsed < 5,
            f"max |log2 perplexity error| {worst:.2e}, warnings {warnings}; {elapsed:.2f}s")


def _pair_count_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = ties = 0
    for a in pos:
        for b in neg:
            if a > b:
                wins += 1
            elif a == b:
                ties += 1
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def test_criterion_3_auc_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, max(2, n // 4), n) / 7.0
        if roc_auc(scores, labels) != _pair_count_auc(scores, labels):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    verdict(3, mismatches == 0 and elapsed < 5,
            f"{mismatches} mismatches in 200 tied instances; {elapsed:.2f}s")


def test_criterion_4_cluster_recovery(verdict):
    t0 = time.perf_counter()
    x, labels = make_blobs(200, seed=4)
    rng = np.random.default_rng(4)
    held = np.zeros(labels.size, dtype=bool)
    for c in range(3):
        held[rng.choice(np.flatnonzero(labels == c), 50, replace=False)] = True
    x_tr, y_tr, x_ho, y_ho = x[~held], labels[~held], x[held], labels[held]
    mean, std = x_tr.mean(0), x_tr.std(0)
    x_tr, x_ho = (x_tr - mean) / std, (x_ho - mean) / std
    emb = run_tsne(x_tr, TsneConfig(perplexity=30, n_iterations=1000, seed=0)).y
    purity = knn_purity(emb, y_tr)
    net = fit_nn_tsne(x_tr, emb, TrainConfig(epochs=300, seed=0))
    mapped = forward(net, x_ho)
    held_purity = knn_purity(mapped, y_ho, ref_points=emb, ref_labels=y_tr)
    elapsed = time.perf_counter() - t0
    verdict(4, purity >= 0.95 and held_purity >= 0.90 and elapsed < 120,
            f"t-SNE 5-NN purity {purity:.3f} on {y_tr.size} points, NN_tsne held-out purity "
            f"{held_purity:.3f} on {y_ho.size} points; {elapsed:.1f}s")


def _load(run: Path):
    pipe = RiskPipeline.loads((run / "artifact.json").read_text())
    test = parse_contracts((run / "test.csv").read_text())
    return pipe, test


def _planted_boundaries(scores):
    # score quantiles at the cumulative planted cluster weights
    w = np.cumsum(SyntheticConfig().cluster_weights)[:-1]
    return tuple(float(v) for v in np.quantile(scores, w))


def _groups_ok(g):
    r = g.ratios
    increasing = all(b > a for a, b in zip(r, r[1:]))
    return increasing and r[-1] - r[0] >= 0.08


def test_criterion_5_planted_risk_recovery(e2e_run, verdict):
    pipe, test = _load(e2e_run["run"])
    scores = pipe.predict(test)
    claims = claims_of(test)
    report = pipe.evaluate(test)
    kept = ~np.isnan(scores)
    default = report.groups
    planted = group_stats(scores[kept], claims[kept], _planted_boundaries(scores[kept]))
    chosen = default if _groups_ok(default) else planted
    out_rate = report.n_out_of_surface / report.n_submitted
    ok = (_groups_ok(chosen) and report.ours.pearson >= 0.10 and report.ours.auc >= 0.60
          and out_rate < 0.02 and e2e_run["seconds"] < 600)
    fmt = lambda g: "/".join(f"{100 * r:.2f}%" for r in g.ratios)  # noqa: E731
    verdict(5, ok,
            f"groups at 0.3/0.5 {fmt(default)}, at planted quantiles "
            f"{'/'.join(f'{b:.3f}' for b in planted.boundaries)} {fmt(planted)}; "
            f"pearson {report.ours.pearson:.4f}, auc {report.ours.auc:.4f}, "
            f"out of surface {100 * out_rate:.2f}%; train+evaluate {e2e_run['seconds']:.0f}s")


def test_criterion_6_space_comparison(e2e_run, verdict):
    t0 = time.perf_counter()
    pipe, test = _load(e2e_run["run"])
    train = parse_contracts((e2e_run["run"] / "train.csv").read_text())
    x_train = pipe.normalizer_.transform(encode_features(train))
    x_test = pipe.normalizer_.transform(encode_features(test))
    tables = compare_spaces(x_train, claims_of(train), x_test, claims_of(test), pipe.nn_tsne_)
    auc2 = {r["model"]: r["auc"] for r in tables["2d"]}
    auc14 = {r["model"]: r["auc"] for r in tables["14d"]}
    close = all(auc14[k] >= auc2[k] - 0.02 for k in KINDS)
    nonlinear = max(v for k, v in auc2.items() if k not in LINEAR_KINDS)
    linear = max(v for k, v in auc2.items() if k in LINEAR_KINDS)
    elapsed = time.perf_counter() - t0
    verdict(6, close and nonlinear >= linear and elapsed < 600,
            "2D/14D auc " + ", ".join(f"{k} {auc2[k]:.3f}/{auc14[k]:.3f}" for k in KINDS)
            + f"; best nonlinear 2D {nonlinear:.3f} vs linear {linear:.3f}; {elapsed:.0f}s")


def test_criterion_7_insurer_comparison(e2e_run, verdict):
    t0 = time.perf_counter()
    pipe, test = _load(e2e_run["run"])
    report = pipe.evaluate(test, insurer=True)
    top20 = {r["fraction"]: r["claim_ratio"] for r in report.ours.top_fractions}[0.2]
    ins20 = {r["fraction"]: r["claim_ratio"] for r in report.insurer.top_fractions}[0.2]
    elapsed = time.perf_counter() - t0
    verdict(7, report.ours.auc > report.insurer.auc and top20 > ins20 and elapsed < 300,
            f"auc ours {report.ours.auc:.4f} vs insurer {report.insurer.auc:.4f}; top-20% claim "
            f"ratio ours {100 * top20:.2f}% vs insurer {100 * ins20:.2f}%; {elapsed:.1f}s on top "
            f"of the shared {e2e_run['seconds']:.0f}s training run")


def test_criterion_8_surface_invariants(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    problems = []
    for trial in range(10):
        emb = rng.standard_normal((300, 2)) * rng.uniform(0.5, 20)
        net = init_mlp(MlpSpec((2, 5, 1)), seed=trial)
        net.biases = [rng.standard_normal(b.shape) for b in net.biases]
        s = surface_from_network(net, emb, GridGeometry.from_embedding(emb))
        if s.grid.min() < 0 or s.grid.max() > 1:
            problems.append(f"trial {trial}: grid outside [0,1]")
        if np.any(s.grid[~s.valid] != 0):
            problems.append(f"trial {trial}: nonzero outside the valid mask")
        if np.isnan(s.score(emb)).any():
            problems.append(f"trial {trial}: training point out of surface")
    peak = np.zeros((100, 100))
    peak[40, 60] = 1.0
    smoothed = smooth3x3(peak)
    if smoothed[40, 60] != 1.0 / 9.0:
        problems.append(f"isolated peak smoothed to {smoothed[40, 60]!r}")
    elapsed = time.perf_counter() - t0
    verdict(8, not problems and elapsed < 5,
            ("; ".join(problems) or "10 random surfaces clean, unit peak -> 1/9") + f"; {elapsed:.2f}s")


def test_criterion_9_metric_identities(verdict):
    t0 = time.perf_counter()
    contracts, claims = (8592, 302, 1055), (464, 38, 236)
    scores, labels = [], []
    for level, n, c in zip((0.1, 0.4, 0.8), contracts, claims):
        scores += [level] * n
        labels += [1] * c + [0] * (n - c)
    g = group_stats(scores, labels, (0.3, 0.5))
    pct = [round(100 * r, 2) for r in g.ratios]
    overall = top_fraction_table(scores, labels, (1.0,))[0]["claim_ratio"]
    exact = overall == sum(claims) / sum(contracts)
    elapsed = time.perf_counter() - t0
    verdict(9, pct == [5.40, 12.58, 22.37] and g.contracts == list(contracts) and exact
            and elapsed < 1,
            f"group ratios {pct}, top-100% equals overall ratio: {exact}; {elapsed:.3f}s")


def test_criterion_10_determinism(e2e_run, verdict):
    t0 = time.perf_counter()
    root, first = e2e_run["root"], e2e_run["run"]
    second = root / "run2"
    run_cli(["train", e2e_run["data"], "--seed", 0, "--out", second], MULTI_THREAD_ENV)
    run_cli(["evaluate", second / "artifact.json", second / "test.csv", "--insurer",
             "--out", second / "eval"], MULTI_THREAD_ENV)
    elapsed = time.perf_counter() - t0
    names = ["artifact.json", "train.csv", "test.csv", "embedding.csv", "kl_trace.csv",
             "eval/report.json", "eval/report.txt", "eval/thresholds.csv",
             "eval/insurer_thresholds.csv", "eval/insurer_surface.pgm"]
    differing = [n for n in names if (first / n).read_bytes() != (second / n).read_bytes()]
    # artifact round trip: load -> dump reproduces the bytes
    text = (first / "artifact.json").read_text()
    roundtrip = RiskPipeline.loads(text).dumps() == text
    verdict(10, not differing and roundtrip and elapsed < 2 * max(e2e_run["seconds"], 1),
            f"single- vs multi-threaded outputs differing: {differing or 'none'}; artifact "
            f"round trip identical: {roundtrip}; second run {elapsed:.0f}s vs first "
            f"{e2e_run['seconds']:.0f}s")
