"""End-to-end acceptance suite.

Each test checks one numbered criterion and records a PASS/FAIL line that is
printed in the terminal summary (see conftest.py).  The self-tuning criteria
(5-10) pretrain augmenters once per session and take on the order of an hour
on one CPU.  Set TSAP_ACCEPT_CACHE to a directory to keep pretrained
augmenters and finished runs between sessions.
"""

import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from oracles import enumerate_f1, pair_auroc, permutation_ot
from test_inject import oracle_inject
from tsap.experiment import ExperimentConfig, evaluate, load_phi, stage_generate, stage_pretrain, tune_runs
from tsap.inject import NEUTRAL_LEVEL, AnomalyType, AugParams, desk_domain, inject, sample_params
from tsap.metrics import ScoredSet, auroc, best_f1
from tsap.ot import SinkhornConfig, cost_matrix, exact_ot, normalize_embeddings, sinkhorn_distance
from tsap.tensor import Tensor

pytestmark = pytest.mark.acceptance

TESTS = Path(__file__).parent
SEEDS = (0, 1, 2)


def check(n, ok, detail):
    record(n, ok, detail)
    assert ok, f"criterion {n}: {detail}"


# ---------------------------------------------------------------------------
# fast criteria
# ---------------------------------------------------------------------------

def test_c01_injection_semantics():
    rng = np.random.default_rng(2024)
    types = list(AnomalyType)
    t0 = time.perf_counter()
    bad = 0
    for i in range(1000):
        t = types[i % len(types)]
        K = int(rng.integers(16, 300))
        x = rng.normal(size=K)
        a = sample_params(desk_domain(t, K=K), rng)
        out = inject(x, a)
        lo, hi = a.window(K)
        outside = np.ones(K, bool)
        outside[lo:hi] = False
        bad += not np.array_equal(out[outside], x[outside])
        bad += not np.array_equal(out, oracle_inject(x, a))
        if t in NEUTRAL_LEVEL:
            b = AugParams(t, a.location, a.length, NEUTRAL_LEVEL[t])
            bad += not np.array_equal(inject(x, b), x)
    dt = time.perf_counter() - t0
    check(1, bad == 0 and dt < 5.0, f"{bad} violations over 1000 pairs in {dt:.2f}s")


def test_c02_autodiff():
    nodes = [
        "tests/test_tensor.py::TestGradcheck",
        "tests/test_models.py::TestAugmenter::test_loss_gradcheck",
        "tests/test_models.py::TestDetector::test_composite_gradcheck",
        "tests/test_selftune.py::TestHypergradient::test_analytic_instance",
        "tests/test_selftune.py::TestHypergradient::test_two_phase_pipeline",
    ]
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *nodes],
                          cwd=TESTS.parent, capture_output=True, text=True)
    dt = time.perf_counter() - t0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    check(2, proc.returncode == 0 and dt < 60.0, f"{tail} ({dt:.1f}s incl. startup)")


def test_c03_optimal_transport():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst_gap, worst_sym, worst_scale = -np.inf, 0.0, 0.0
    for _ in range(200):
        n, d = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        A, B = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        C = cost_matrix(Tensor(A), Tensor(B)).data
        eps = max(0.01 * float(np.median(C)), 1e-4)
        cfg = SinkhornConfig(epsilon=eps, max_iter=1000, tol=1e-8)
        s_ab = float(sinkhorn_distance(Tensor(A), Tensor(B), cfg).data)
        ex = exact_ot(A, B)
        if n <= 6:
            assert abs(ex - permutation_ot(A, B)) < 1e-9
        worst_gap = max(worst_gap, abs(s_ab - ex) - (eps * (math.log(n) + 1) + 1e-6))
        s_ba = float(sinkhorn_distance(Tensor(B), Tensor(A), cfg).data)
        worst_sym = max(worst_sym, abs(s_ab - s_ba))
        c = float(rng.uniform(0.1, 10))
        na, nca = normalize_embeddings(A), normalize_embeddings(c * A)
        worst_scale = max(worst_scale, float(np.abs(na.data - nca.data).max()))
    dt = time.perf_counter() - t0
    ok = worst_gap <= 0 and worst_sym <= 1e-9 and worst_scale <= 1e-9 and dt < 30
    check(3, ok, f"bound slack {worst_gap:.2e}, symmetry {worst_sym:.1e}, scale {worst_scale:.1e}, {dt:.1f}s")


def test_c04_metrics():
    rng = np.random.default_rng(11)
    worst, count = 0.0, 0
    while count < 500:
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, size=n)
        if y.min() == y.max():
            continue
        s = rng.integers(0, 6, size=n) / 5.0 if count % 2 else rng.normal(size=n)
        ss = ScoredSet(s, y)
        worst = max(worst, abs(auroc(ss) - pair_auroc(s, y)), abs(best_f1(ss) - enumerate_f1(list(s), list(y))))
        count += 1
    check(4, worst <= 1e-12, f"max deviation {worst:.1e} over 500 sets")


# ---------------------------------------------------------------------------
# self-tuning criteria
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def cache(tmp_path_factory):
    root = os.environ.get("TSAP_ACCEPT_CACHE")
    path = Path(root) if root else tmp_path_factory.mktemp("acceptance")
    path.mkdir(parents=True, exist_ok=True)
    return path


def config(task: dict, cache: Path, seed=0, inits=None, candidates=None, **selftune) -> ExperimentConfig:
    family = task.get("family", "ecg")
    d = {"task": task, "seed": seed, "phi_dir": str(cache / f"phi_{family}"), "selftune": selftune}
    if inits is not None:
        d["a_inits"] = inits
    if candidates:
        d["candidates"] = candidates
    return ExperimentConfig.from_dict(d)


def tune(cfg: ExperimentConfig, cache: Path) -> list[dict]:
    """Run (or reload) every (type, init) run of ``cfg``; one summary dict per run."""
    memo = cache / f"runs_{cfg.digest()}.json"
    if memo.exists():
        return json.loads(memo.read_text())
    for t in cfg.candidates:
        try:
            load_phi(cfg, t, cfg.phi_dir)
        except FileNotFoundError:
            Path(cfg.phi_dir).mkdir(parents=True, exist_ok=True)
            stage_pretrain(cfg, t, cfg.phi_dir)
    split = stage_generate(cfg)
    t0 = time.perf_counter()
    runs = tune_runs(cfg, split, cfg.phi_dir)
    per_run = (time.perf_counter() - t0) / len(runs)
    det = cfg.detector()
    out = []
    for name, res in runs:
        traj = res.trajectory
        out.append({"name": name, "type": res.anomaly_type.value, "a": res.a, "init": res.a_init,
                    "score": traj.smoothed_l_val(cfg.selftune.smooth_window),
                    "level": traj.column("a_level").tolist(), "seconds": per_run,
                    **evaluate(det, res.theta, split)})
    memo.write_text(json.dumps(out))
    return out


PLATFORM = {"anomaly_type": "platform", "level": {"fixed": 0.2}}
TREND = {"anomaly_type": "trend", "level": {"fixed": 0.1}}
TREND_INIT = [{"level": 0.15}]


def test_c05_continuous_tuning(cache):
    near = tune(config(PLATFORM, cache, inits=[{"level": -0.4}, {"level": 0.6}]), cache)
    far = tune(config(PLATFORM, cache, inits=[{"level": 0.8}, {"level": -0.8}]), cache)
    finals = [r["a"]["level"] for r in near]
    converged = [abs(a - 0.2) <= 0.1 for a in finals]
    near_score = np.mean([r["score"] for r in near])
    far_score = np.mean([r["score"] for r in far])
    aurocs = [r["auroc"] for r, c in zip(near, converged) if c]
    slowest = max(r["seconds"] for r in near + far)
    ok = all(converged) and near_score < far_score and all(a >= 0.9 for a in aurocs) and slowest < 600
    check(5, ok, f"final levels {np.round(finals, 3).tolist()}, score {near_score:.4f} vs {far_score:.4f}, "
                 f"auroc {np.round([r['auroc'] for r in near], 3).tolist()}, {slowest:.0f}s/run")


def test_c06_two_hyperparameters(cache):
    task = {**PLATFORM, "length": {"fixed": 0.3}}
    inits = [{"level": -0.4, "length": 0.15}, {"level": 0.6, "length": 0.35},
             {"level": 0.6, "length": 0.15}, {"level": -0.4, "length": 0.35}]
    runs = tune(config(task, cache, inits=inits, tuned=["level", "length"]), cache)
    finals = [(round(r["a"]["level"], 3), round(r["a"]["length"], 3)) for r in runs]
    ok = any(abs(lv - 0.2) <= 0.1 and abs(ln - 0.3) <= 0.1 for lv, ln in finals)
    check(6, ok, f"final (level, length) {finals}")


def test_c07_type_selection(cache):
    picked = {}
    for true in ("platform", "frequency_shift"):
        task = {"anomaly_type": true, "family": "gait"}
        runs = tune(config(task, cache, candidates=["platform", "frequency_shift"]), cache)
        picked[true] = min(runs, key=lambda r: r["score"])["type"]
    check(7, all(k == v for k, v in picked.items()), f"true -> selected {picked}")


def test_c08_random_vs_tuned(cache):
    tuned, rand = [], []
    for seed in SEEDS:
        tuned += tune(config(PLATFORM, cache, seed=seed), cache)
        rand += tune(config(PLATFORM, cache, seed=seed, freeze_a=True).with_overrides(random_a=True), cache)
    t, r = np.mean([x["auroc"] for x in tuned]), np.mean([x["auroc"] for x in rand])
    check(8, t - r >= 0.05, f"tuned auroc {t:.3f}, frozen random {r:.3f}")


def test_c09_pointwise_loss(cache):
    pw = [tune(config(TREND, cache, seed=s, inits=TREND_INIT, loss="pointwise"), cache)[0] for s in SEEDS]
    ws = [tune(config(TREND, cache, seed=s, inits=TREND_INIT), cache)[0] for s in SEEDS]
    a_pw = np.mean([r["a"]["level"] for r in pw])
    a_ws = np.mean([r["a"]["level"] for r in ws])
    check(9, abs(a_pw) < 0.05 and 0.05 <= a_ws <= 0.15, f"pointwise a {a_pw:.3f}, wasserstein a {a_ws:.3f}")


def test_c10_second_order_and_normalization(cache):
    def stats(**kw):
        runs = [tune(config(TREND, cache, seed=s, inits=TREND_INIT, **kw), cache)[0] for s in SEEDS]
        return np.mean([np.var(r["level"][-50:]) for r in runs]), np.mean([r["auroc"] for r in runs])

    v0, a0 = stats()
    lines, ok = [], True
    for name, kw in (("first-order", {"second_order": False}), ("no-normalize", {"normalize": False})):
        v, a = stats(**kw)
        ratio = v / v0 if v0 > 0 else math.inf
        ok &= ratio >= 2 or a0 - a >= 0.05
        lines.append(f"{name}: var ratio {ratio:.2f}, auroc {a:.3f} vs {a0:.3f}")
    check(10, ok, "; ".join(lines))


def test_c11_determinism(cache, tmp_path):
    from tsap.cli import main

    tiny = {"task": PLATFORM, "K": 128, "n_trn": 32, "n_test": 20, "n_faug": 16, "seed": 5,
            "faug": {"epochs": 1, "batch_size": 8},
            "selftune": {"T": 3, "L": 2, "warm_epochs": 1, "batch_size": 16}}
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps(tiny))
    outs = []
    for name in ("a", "b"):
        assert main(["evaluate", "--config", str(cfg_file), "--out", str(tmp_path / name)]) == 0
        outs.append(tmp_path / name)
    csvs = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    same = [(outs[0] / p).read_bytes() == (outs[1] / p).read_bytes() for p in csvs]
    check(11, bool(csvs) and all(same), f"{sum(same)}/{len(csvs)} CSV files byte-identical")
