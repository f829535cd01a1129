"""Acceptance checks: exactness properties plus desk-scale trend replication.

Every check prints one ``criterion N ...: PASS|FAIL`` line (also collected into
the pytest terminal summary). The trend checks share cached runs of the
configuration in ``configs/desk_scale.toml``; each reported runtime is the sum
of the wall-clock time of the runs a check consumes, cached or not.
"""

from __future__ import annotations

import math
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from fclsim import load_config, run_experiment
from fclsim.federation import (
    ServerKind,
    ServerOptState,
    aggregate_pseudo_gradient,
    local_train,
    server_step,
    update_second_moment,
)
from fclsim.metrics import AccuracyMatrix, acc, bwt_f, spike_ratios
from fclsim.model import BackboneSpec, init_model, loss_and_grad
from fclsim.numerics import ParamVector, derive_stream
from fclsim.schedule import OrderingCase, assignment_table, build_schedule, schedule_stream

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk_scale.toml"
SEEDS = range(5)
REPORT: list[str] = []


def report(n: int, name: str, ok: bool, detail: str, seconds: float) -> None:
    line = f"criterion {n:2d} {name}: {'PASS' if ok else 'FAIL'} ({detail}) [{seconds:.1f} s]"
    REPORT.append(line)
    print(line)


@lru_cache(maxsize=None)
def _desk_run(seed: int, items: tuple):
    cfg = load_config(DESK, dict(items, seed=seed))
    return run_experiment(cfg), cfg.Q


def desk_runs(**overrides):
    """Five-seed runs of the desk-scale setup; returns (results, Q, seconds)."""
    items = tuple(sorted(overrides.items()))
    out = [_desk_run(s, items) for s in SEEDS]
    return [r for r, _ in out], out[0][1], sum(r.wall_seconds for r, _ in out)


def mean_acc(runs):
    return float(np.mean([r.acc for r in runs]))


# 1 -------------------------------------------------------------------------

def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def test_c01_gradient_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    comps = 0
    for seed in range(20):
        rs = np.random.default_rng(seed)
        L = int(rs.integers(2, 4))
        dims = tuple(int(d) for d in rs.integers(1, 9, size=L))
        spec = BackboneSpec(int(rs.integers(1, 9)), dims, "tanh" if seed % 2 else "relu", int(rs.integers(1, L)))
        classes = int(rs.integers(2, 6))
        model = init_model(spec, 1, classes, derive_stream(seed, 0, 0, 0))
        v = model.adapter_vector(0)
        model = model.with_adapter_vector(0, ParamVector(v.layout, v.data + 0.5 * rs.normal(size=len(v))))
        v = model.adapter_vector(0)
        X = rs.normal(size=(4, spec.input_dim))
        y = rs.integers(0, classes, size=4)
        _, grad = loss_and_grad(model, 0, (X, y))
        eps = 1e-5
        for i in range(len(v)):
            e = np.zeros(len(v))
            e[i] = eps
            lp, _ = loss_and_grad(model.with_adapter_vector(0, ParamVector(v.layout, v.data + e)), 0, (X, y))
            lm, _ = loss_and_grad(model.with_adapter_vector(0, ParamVector(v.layout, v.data - e)), 0, (X, y))
            worst = max(worst, relative_error(grad.data[i], (lp - lm) / (2 * eps)))
            comps += 1
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 5
    report(1, "gradient oracle", ok, f"{comps} components, worst relative error {worst:.2e}", dt)
    assert ok


# 2 -------------------------------------------------------------------------

def test_c02_fedavg_fixed_point():
    t0 = time.perf_counter()
    spec = BackboneSpec(6, (8, 8), "tanh", 1)
    model = init_model(spec, 1, 3, derive_stream(0, 0, 0, 0))
    rs = np.random.default_rng(0)
    start = model.adapter_vector(0)
    updates, finals, counts = [], [], []
    for c, n in enumerate([5, 11, 17, 8]):
        X = rs.normal(size=(n, 6))
        y = rs.integers(0, 3, size=n)
        update, _ = local_train(model, 0, (X, y), 2, 0.1, 4, derive_stream(0, 1, c, 7), client_id=c)
        updates.append(update)
        finals.append((start + update.delta).data)
        counts.append(n)
    g = aggregate_pseudo_gradient(updates, "sample_weighted")
    state = ServerOptState(ServerKind.FEDSGD, eta=1.0, beta1=0.0)
    _, new = server_step(state, start, 0, g)
    expected = sum(n * f for n, f in zip(counts, finals)) / sum(counts)
    rel = float(np.max(np.abs(new.data - expected)) / np.max(np.abs(expected)))
    dt = time.perf_counter() - t0
    ok = rel <= 1e-12 and dt < 1
    report(2, "FedAvg fixed point", ok, f"max relative deviation {rel:.1e}", dt)
    assert ok


# 3 -------------------------------------------------------------------------

def test_c03_centralized_equivalence():
    t0 = time.perf_counter()
    cfg = load_config(None, dict(classes=10, dim=16, per_class=20, tasks=5, clients=1, rounds=50, local_epochs=1,
                                 batch_size=0, server="fedsgd", eta=1.0, case="sync_fcl", client_lr=0.05,
                                 layer_dims=(8, 8), seed=3))
    trajectory = []
    result = run_experiment(cfg, round_hook=lambda r, m: trajectory.append(m))

    # plain centralized loop: one full-batch SGD step per round on the active task
    from fclsim.data import split_tasks, synth_blobs
    from fclsim.numerics import PURPOSE_DATA, PURPOSE_INIT, PURPOSE_SPLIT

    ds = synth_blobs(10, 16, 20, cfg.spread, derive_stream(3, 0, 0, PURPOSE_DATA))
    split = split_tasks(ds, 5, cfg.test_fraction, derive_stream(3, 0, 0, PURPOSE_SPLIT))
    model = init_model(BackboneSpec(16, (8, 8), cfg.activation, 1), 5, 2, derive_stream(3, 0, 0, PURPOSE_INIT))
    worst = 0.0
    for r in range(1, 51):
        t = (r - 1) // cfg.Q
        task = split[t]
        _, grad = loss_and_grad(model, t, (task.train.X, task.train.y))
        model = model.with_adapter_vector(t, model.adapter_vector(t) - 0.05 * grad)
        for s in range(5):
            a, b = trajectory[r - 1].adapter_vector(s).data, model.adapter_vector(s).data
            worst = max(worst, float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and len(trajectory) == 50 and result.acc >= 0 and dt < 10
    report(3, "centralized equivalence", ok, f"50 rounds, max relative deviation {worst:.1e}", dt)
    assert ok


# 4 -------------------------------------------------------------------------

def scalar_v(kind, v, d, beta2):
    v, d2 = float(v), float(d) * float(d)
    if kind == "adagrad":
        return v + d2
    if kind == "yogi":
        s = 1.0 if v > d2 else (-1.0 if v < d2 else 0.0)
        return v - (1 - beta2) * d2 * s
    return beta2 * v + (1 - beta2) * d2


def test_c04_second_moment_rules():
    t0 = time.perf_counter()
    rs = np.random.default_rng(4)
    v = rs.uniform(0, 4, size=10_000)
    d = rs.normal(scale=2, size=10_000)
    beta2 = 0.99
    ada = update_second_moment(ServerKind.FEDADAGRAD, v, d, beta2)
    adam = update_second_moment(ServerKind.FEDADAM, v, d, beta2)
    yogi = update_second_moment(ServerKind.FEDYOGI, v, d, beta2)
    mono = bool(np.all(ada >= v))
    lo, hi = np.minimum(v, d * d), np.maximum(v, d * d)
    convex = bool(np.all((adam >= lo * (1 - 1e-15)) & (adam <= hi * (1 + 1e-15))))
    exact = all(yogi[i] == scalar_v("yogi", v[i], d[i], beta2) for i in range(len(v)))
    exact &= all(ada[i] == scalar_v("adagrad", v[i], d[i], beta2) for i in range(len(v)))
    exact &= all(adam[i] == scalar_v("adam", v[i], d[i], beta2) for i in range(len(v)))
    dt = time.perf_counter() - t0
    ok = mono and convex and exact and dt < 1
    report(4, "second-moment rules", ok, f"adagrad monotone={mono}, adam bounded={convex}, scalar match={exact}", dt)
    assert ok


# 5 -------------------------------------------------------------------------

def test_c05_scheduler_laws():
    t0 = time.perf_counter()
    R, T, N = 100, 5, 7
    sync = np.array(assignment_table(build_schedule(R, T, N, OrderingCase.SYNC_FCL, schedule_stream(1))))
    single = all(len(set(row)) == 1 for row in sync.tolist())
    exact_q = all(np.sum(sync[:, 0] == t) == R // T for t in range(T))
    asyn = np.array(assignment_table(build_schedule(R, T, N, OrderingCase.ASYNC_FCL, schedule_stream(2))))
    budget = all(np.sum(asyn[:, c] == t) == R // T for c in range(N) for t in range(T))
    fmtl = np.array(assignment_table(build_schedule(20_000, T, 5, OrderingCase.FMTL, schedule_stream(3))))
    p = stats.chisquare(np.bincount(fmtl.ravel(), minlength=T)).pvalue
    dt = time.perf_counter() - t0
    ok = single and exact_q and budget and p > 0.01 and dt < 5
    report(5, "scheduler laws", ok,
           f"case 2 single task={single}, exact Q={exact_q}; case 3 budgets={budget}; case 1 chi2 p={p:.3f}", dt)
    assert ok


# 6 -------------------------------------------------------------------------

def test_c06_metric_units():
    t0 = time.perf_counter()
    example = AccuracyMatrix.from_array([[0.5, 0.6, 0.4, 0.5], [0.1, 0.2, 0.3, 0.4]])
    b = bwt_f(example, 2)
    expected = ((0.6 - 0.5) + (0.5 - 0.4) + (0.2 - 0.1) + (0.4 - 0.3)) / 4
    a = acc(AccuracyMatrix.from_array([[0.3, 0.8], [0.2, 0.6]]))
    ones = acc(AccuracyMatrix.from_array(np.ones((3, 4))))
    const = bwt_f(AccuracyMatrix.from_array(np.full((4, 12), 0.37)), 3)
    dt = time.perf_counter() - t0
    ok = b == expected and abs(b - 0.1) < 1e-15 and a == (0.8 + 0.6) / 2 and ones == 1.0 and const == 0.0
    report(6, "metric units", ok, f"bwt example {float(b)!r}, acc example {float(a)!r}, constant bwt {float(const)!r}", dt)
    assert ok


# 7 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c07_task_ordering_trend():
    fmtl, _, s1 = desk_runs(case="fmtl")
    sync, _, s2 = desk_runs(case="sync_fcl")
    asyn, _, s3 = desk_runs(case="async_fcl")
    a1, a2, a3 = mean_acc(fmtl), mean_acc(sync), mean_acc(asyn)
    dt = s1 + s2 + s3
    ok = a1 > a2 > a3 and dt < 300
    report(7, "task ordering trend", ok, f"mean ACC fmtl {a1:.4f} > sync {a2:.4f} > async {a3:.4f}", dt)
    assert ok


# 8 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c08_adaptive_optimizer_trend():
    adam, _, s1 = desk_runs(case="async_fcl")
    sgd, _, s2 = desk_runs(case="async_fcl", server="fedsgd", eta=1.0)
    b_adam = float(np.mean([abs(r.bwt_f) for r in adam]))
    b_sgd = float(np.mean([abs(r.bwt_f) for r in sgd]))
    a_adam, a_sgd = mean_acc(adam), mean_acc(sgd)
    dt = s1 + s2
    ok = b_adam < b_sgd and a_adam >= a_sgd - 0.005 and dt < 300
    report(8, "adaptive optimizer trend", ok,
           f"mean |BWT_f| fedadam {b_adam:.5f} vs fedsgd {b_sgd:.5f}; mean ACC fedadam {a_adam:.4f} vs fedsgd {a_sgd:.4f}",
           dt)
    assert ok


# 9 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c09_non_iid_degradation():
    skewed, _, s1 = desk_runs(partition="dirichlet", alpha=0.5)
    mild, _, s2 = desk_runs(partition="dirichlet", alpha=8.0)
    a_skew, a_mild = mean_acc(skewed), mean_acc(mild)
    dt = s1 + s2
    ok = a_skew < a_mild and dt < 300
    report(9, "non-IID degradation", ok, f"mean ACC alpha=0.5 {a_skew:.4f} < alpha=8 {a_mild:.4f}", dt)
    assert ok


# 10 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c10_straggler_robustness():
    base, _, s1 = desk_runs(case="async_fcl")
    drop, _, s2 = desk_runs(case="async_fcl", drop_prob=0.2)
    gap = mean_acc(base) - mean_acc(drop)
    dt = s1 + s2
    ok = abs(gap) <= 0.10 and all(math.isfinite(r.acc) for r in drop) and dt < 300
    report(10, "straggler robustness", ok,
           f"mean ACC drop_prob=0 {mean_acc(base):.4f}, drop_prob=0.2 {mean_acc(drop):.4f}, gap {100 * gap:.2f} pp", dt)
    assert ok


# 11 ------------------------------------------------------------------------

def test_c11_determinism(tmp_path):
    t0 = time.perf_counter()
    names = ["accuracy_matrix.csv", "drift.csv", "summary.json", "accuracy.svg", "cosine_drift.svg"]
    overrides = dict(per_class=100, rounds=20, seed=11, output_dir=str(tmp_path / "run"), emit_svg=True)
    snapshots = []
    for _ in range(2):
        run_experiment(load_config(DESK, overrides))
        snapshots.append({n: (tmp_path / "run" / n).read_bytes() for n in names})
    same = snapshots[0] == snapshots[1]
    dt = time.perf_counter() - t0
    ok = same and dt < 120
    report(11, "determinism", ok, f"{len(names)} files byte-identical={same}", dt)
    assert ok


# 12 ------------------------------------------------------------------------

def task_ratios(run, Q):
    return [x for x in spike_ratios(run.drift.cosine_matrix(), Q, run.updated) if x is not None]


@pytest.mark.slow
def test_c12_drift_visibility():
    sgd, Q, s1 = desk_runs(case="async_fcl", server="fedsgd", eta=1.0)
    adam, _, s2 = desk_runs(case="async_fcl")
    details, ok = [], True
    for seed, (rs, ra) in enumerate(zip(sgd, adam)):
        r_sgd, r_adam = task_ratios(rs, Q), task_ratios(ra, Q)
        spiky = sum(x >= 2 for x in r_sgd)
        m_sgd, m_adam = float(np.median(r_sgd)), float(np.median(r_adam))
        ok &= spiky > 0.5 * len(r_sgd) and m_adam < m_sgd
        details.append(f"seed {seed}: {spiky}/{len(r_sgd)} tasks >= 2, median ratio fedsgd {m_sgd:.1f} vs fedadam {m_adam:.2f}")
    dt = s1 + s2
    ok &= dt < 300
    report(12, "drift visibility", ok, "; ".join(details), dt)
    assert ok
