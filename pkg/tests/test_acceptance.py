"""Acceptance criteria: each test checks its tolerance and its runtime budget
and prints one PASS/FAIL line, visible even without ``-s``."""

import math
import time

import numpy as np
import pytest

from pogdiff.config import ExperimentConfig, stream
from pogdiff.density import DensityVae, VaeConfig, elbo, fit, psi_weight
from pogdiff.metrics import CoverageReport, IdentityCoverage, grecall, toy_fid
from pogdiff.neighbors import img_similarity
from pogdiff.pipeline import make_dataset, run_experiment, train_stage
from pogdiff.verify import check_forward_marginals, check_gradients, check_lemma, check_pog_grid


@pytest.fixture
def report(capsys):
    def emit(number, title, passed, detail, elapsed, budget):
        ok = passed and elapsed < budget
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}: {detail} "
                  f"({elapsed:.2f}s, budget {budget:g}s)")
        assert passed, detail
        assert elapsed < budget, f"took {elapsed:.2f}s, budget {budget}s"
    return emit


def test_01_lemma_identity(report):
    t0 = time.perf_counter()
    c = check_lemma(n=10_000, max_dim=8, tol=1e-9)
    report(1, "PoG completing-the-square identity", c.passed, c.line(), time.perf_counter() - t0, 1.0)


def test_02_pog_grid_oracle(report):
    t0 = time.perf_counter()
    c = check_pog_grid(n_pairs=100, tol=1e-6, points=100_000)
    report(2, "PoG closed form vs grid integration", c.passed, c.line(), time.perf_counter() - t0, 5.0)


def test_03_gradients(report):
    t0 = time.perf_counter()
    c = check_gradients(n=100, tol=1e-4)
    report(3, "loss gradients vs finite differences", c.passed, c.line(), time.perf_counter() - t0, 30.0)


def test_04_zero_psi_reduces_to_vanilla(report):
    t0 = time.perf_counter()
    base = ExperimentConfig().validate()
    zero = ExperimentConfig().validate()
    zero.training.psi_override = 0.0
    ds = make_dataset(base, 0)
    mv, tv, _ = train_stage(base, ds, "vanilla", 0)
    mp, tp, _ = train_stage(zero, ds, "pogdiff", 0)
    same_trace = [r.term1 for r in tv] == [r.total for r in tp] and all(r.term2 == 0.0 for r in tp)
    same_params = all(np.array_equal(p.data, mp.parameters()[k].data) for k, p in mv.parameters().items())
    detail = f"{len(tv)} steps, trace identical={same_trace}, parameters identical={same_params}"
    report(4, "zero-weight reduction to vanilla", same_trace and same_params, detail, time.perf_counter() - t0, 10.0)


def _coverage(majority, minority):
    return CoverageReport({"maj": IdentityCoverage(list(range(30)), set(range(majority)), 0, 0),
                           "min": IdentityCoverage(list(range(2)), set(range(minority)), 0, 0)}, 0.7)


def test_05_grecall_worked_values(report):
    t0 = time.perf_counter()
    got = [grecall(_coverage(18, 2)), grecall(_coverage(1, 0)), grecall(_coverage(16, 0))]
    passed = got[0] == 0.8 and abs(got[1] - 0.0167) <= 1e-4 and abs(got[2] - 0.2667) <= 1e-4
    detail = "values " + ", ".join(f"{v:.6f}" for v in got) + " vs 0.8, 0.0167, 0.2667"
    report(5, "gRecall worked examples", passed, detail, time.perf_counter() - t0, 1.0)


def test_06_psi_worked_example(report):
    t0 = time.perf_counter()
    same, diff = img_similarity(0.4, True), img_similarity(0.4, False)
    w_same = psi_weight(0.4, True, 0.0).psi
    passed = same == 0.4 and w_same == 0.4 and abs(diff - 0.16) < 1e-15
    detail = f"same identity {same!r}, different identity {diff!r}"
    report(6, "similarity weight worked example", passed, detail, time.perf_counter() - t0, 1.0)


def test_07_density_ordering(report):
    t0 = time.perf_counter()
    cfg = ExperimentConfig().validate()
    v, a3 = cfg.vae, cfg.psi.resolved_a3(cfg.dataset.cond_dim)
    outcomes = []
    for seed in cfg.eval.seeds:
        ds = make_dataset(cfg, seed)
        rng = stream(seed, "vae")
        vae = DensityVae(ds.cond_dim, v.latent_dim, v.hidden, rng=rng)
        fit(vae, ds.y, VaeConfig(v.latent_dim, v.hidden, v.epochs, v.lr), rng)
        e = elbo(vae, ds.y)
        maj, mino = ds.members("A"), ds.members("B")
        inv = np.exp(-e) / a3
        outcomes.append((e[maj].mean() > e[mino].mean() and inv[mino].mean() > inv[maj].mean(),
                         e[maj].mean(), e[mino].mean()))
    passed = all(o[0] for o in outcomes)
    detail = "; ".join(f"seed {s}: ELBO maj {m:.2f} vs min {n:.2f}" for s, (_, m, n) in zip(cfg.eval.seeds, outcomes))
    report(7, "density ordering majority vs minority", passed, detail, time.perf_counter() - t0, 60.0)


@pytest.mark.slow
def test_08_ab_experiment(report, tmp_path):
    t0 = time.perf_counter()
    cfg = ExperimentConfig().validate()
    few = {"vanilla": [], "pogdiff": []}
    for seed in cfg.eval.seeds:
        for method in few:
            rec = run_experiment(cfg, method, seed, tmp_path / f"{method}_{seed}")
            few[method].append(next(r["value"] for r in rec.metrics if r["shot"] == "few" and r["metric"] == "grecall"))
    mv, mp = float(np.mean(few["vanilla"])), float(np.mean(few["pogdiff"]))
    detail = f"few-shot gRecall seed-mean pogdiff {mp:.3f} vs vanilla {mv:.3f} (per seed {few['pogdiff']} / {few['vanilla']})"
    report(8, "A/B few-shot gRecall", mp >= mv, detail, time.perf_counter() - t0, 600.0)


def test_09_forward_marginals(report):
    t0 = time.perf_counter()
    c = check_forward_marginals(n=100_000)
    report(9, "stepwise chain vs closed-form marginals", c.passed, c.line(), time.perf_counter() - t0, 10.0)


def _whitened(rng, n, dim):
    """Draws recentred and whitened so the sample mean is 0 and the sample covariance is exactly I."""
    x = rng.standard_normal((n, dim))
    x -= x.mean(axis=0)
    w, v = np.linalg.eigh(np.cov(x, rowvar=False))
    return x @ (v / np.sqrt(w)) @ v.T


def test_10_fid_properties(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    n, dim = 10_000, 5
    a = rng.standard_normal((n, dim))
    b = rng.standard_normal((n, dim)) + 0.5
    self_fid = toy_fid(a, a)
    asym = abs(toy_fid(a, b) - toy_fid(b, a))
    worst = 0.0
    for d in (0.5, 1.0, 2.0, 3.0):
        offset = np.full(dim, d / math.sqrt(dim))
        for left, right in ((a, a + offset), (_whitened(rng, n, dim), _whitened(rng, n, dim) + offset)):
            worst = max(worst, abs(toy_fid(left, right) - d ** 2) / d ** 2)
    passed = self_fid <= 1e-10 and asym <= 1e-10 and worst < 0.02
    detail = f"fid(A,A)={self_fid:.1e}, asymmetry={asym:.1e}, worst relative error vs d^2 {worst:.2e}"
    report(10, "toy FID properties", passed, detail, time.perf_counter() - t0, 10.0)
