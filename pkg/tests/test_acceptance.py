"""Acceptance suite: one pass/fail line per criterion, printed and summarised.

Each test records its outcome through ``conftest.record`` before asserting,
so the summary lists every criterion even when one fails.
"""

import math
import time

import numpy as np
import pytest

from conftest import ball_data, record
from srm_dyn.complexity import DiscretizationGrid, general_penalty_mc, lookup_q, nn_penalty, rkhs_penalty
from srm_dyn.core import Dataset, OptConfig, clip
from srm_dyn.dynamics import (double_pendulum_energy, get_system, linear_test_system, rk4_step, simulate)
from srm_dyn.experiment import build_hierarchy, load_config, run_experiment, with_overrides
from srm_dyn.nn import MlpPredictor, NnClassSpec, layer_shapes, loss_and_gradients, max_frob_norm, train_constrained
from srm_dyn.rkhs import Kernel, RkhsClassSpec, fit_constrained, gram, objective_and_gradient, rkhs_norm
from srm_dyn.srm import epsilon_table

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3, 4)


def rel_gap(g, fd):
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8))


def degenerate(g, fd):
    """Locally constant loss: the exact gradient is zero and differences are round-off."""
    return not np.any(g) and np.linalg.norm(fd) < 1e-8


def central_gradient(fun, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def near_kink(Z, Y, B, tol=1e-6):
    """Outputs on the clipping sphere or residuals at zero make the loss non-smooth."""
    return (np.any(np.abs(np.linalg.norm(Z, axis=1) - B) < tol)
            or np.any(np.linalg.norm(clip(Z, B) - Y, axis=1) < tol))


@pytest.fixture(scope="module")
def pendulum_runs(tmp_path_factory):
    """The bundled double-pendulum RKHS config on five seeds."""
    cfg = load_config("double_pendulum_rkhs")
    h = build_hierarchy(cfg.hierarchy)
    runs = {}
    for s in SEEDS:
        out = tmp_path_factory.mktemp(f"rkhs_seed{s}")
        report, paths = run_experiment(with_overrides(cfg, seed=s, out_dir=str(out), threads=1), plot=False)
        runs[s] = (report, paths)
    return cfg, h, runs


def test_criterion_1_penalty_formulas():
    S = Dataset(np.zeros((100, 6, 4)), 1.0)
    got_rkhs = rkhs_penalty(Kernel.gaussian(1.0), S, 1.0)
    want_rkhs = 8 * math.sqrt(2) / 10
    Z = Dataset(np.zeros((4, 2, 1)), 1.0)
    got_nn = nn_penalty(1, 2.0, Z)
    want_nn = 2 * math.sqrt(2) * (math.sqrt(2 * math.log(2)) + 1)
    ok = abs(got_rkhs - want_rkhs) <= 1e-12 and abs(got_nn - want_nn) <= 1e-12
    record(1, ok, f"rkhs {got_rkhs:.15f} vs {want_rkhs:.15f}; nn {got_nn:.15f} vs {want_nn:.15f}")
    assert ok


def test_criterion_2_sandwich_oracle():
    rng = np.random.default_rng(2024)
    failures, n_rkhs, n_nn = [], 0, 0
    start = time.perf_counter()
    for i in range(20):
        N, n, T = int(rng.integers(2, 9)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        S = ball_data(rng, N, T, n)
        k = Kernel.gaussian(float(rng.uniform(0.2, 3.0)))
        bound = float(rng.uniform(0.2, 3.0))
        v, se = general_penalty_mc(RkhsClassSpec(k, bound), S, draws=2000, seed=i)
        closed = rkhs_penalty(k, S, bound)
        n_rkhs += 1
        if not v <= closed + 3 * se:
            failures.append(f"rkhs#{i} {v:.4f}>{closed:.4f}+3*{se:.4f}")
    for i in range(10):
        N, n, T = int(rng.integers(2, 9)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        S = ball_data(rng, N, T, n)
        D, H = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        bound = float(rng.uniform(0.5, 2.0))
        v, se = general_penalty_mc(NnClassSpec(D, H, bound), S, draws=2000, seed=i, inner_iters=100)
        closed = nn_penalty(D, bound, S)
        n_nn += 1
        if not v <= closed + 3 * se:
            failures.append(f"nn#{i} {v:.4f}>{closed:.4f}+3*{se:.4f}")
    elapsed = time.perf_counter() - start
    ok = not failures and n_rkhs >= 20 and n_nn >= 10
    record(2, ok, f"{n_rkhs} rkhs + {n_nn} nn instances, {len(failures)} violations, {elapsed:.0f}s "
                  + "; ".join(failures))
    assert ok


def test_criterion_3_gradient_checks():
    rng = np.random.default_rng(3)
    worst_rkhs = worst_nn = 0.0
    done_rkhs = flat = 0
    while done_rkhs < 50:
        N, n = int(rng.integers(2, 7)), int(rng.integers(1, 3))
        X = rng.uniform(-1, 1, size=(N, n))
        k = Kernel.gaussian(rng.uniform(0.3, 2.0)) if rng.random() < 0.7 else Kernel.polynomial(1.0, 2)
        G = gram(k, X)
        alphas = rng.normal(size=(N, n))
        Y = rng.uniform(-0.5, 0.5, size=(N, n))
        if near_kink(G @ alphas, Y, 1.0):
            continue
        _, g = objective_and_gradient(alphas, G, Y, 1.0)
        fd = central_gradient(lambda a: objective_and_gradient(a, G, Y, 1.0)[0], alphas)
        if degenerate(g, fd):
            flat += 1
            continue
        worst_rkhs = max(worst_rkhs, rel_gap(g, fd))
        done_rkhs += 1

    done_nn = 0
    while done_nn < 50:
        n, D, H = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        Ws = [rng.normal(size=s) for s in layer_shapes(n, D, H)]
        X = rng.uniform(-1, 1, size=(6, n))
        Y = rng.uniform(-0.5, 0.5, size=(6, n))
        a = np.concatenate([X, np.ones((6, 1))], axis=1)
        kink = False
        for W in Ws[:-1]:
            h = a @ W.T
            kink |= bool(np.any(np.abs(h) < 1e-6))
            a = np.maximum(h, 0.0)
        if kink or near_kink(a @ Ws[-1].T, Y, 1.0):
            continue
        f = MlpPredictor(tuple(Ws))
        _, grads = loss_and_gradients(f, X, Y, 1.0)
        if not any(np.any(g) for g in grads):
            flat += 1
            continue
        for d in range(len(Ws)):
            def value(W, d=d):
                trial = list(Ws)
                trial[d] = W
                return loss_and_gradients(MlpPredictor(tuple(trial)), X, Y, 1.0)[0]

            worst_nn = max(worst_nn, rel_gap(grads[d], central_gradient(value, Ws[d])))
        done_nn += 1
    ok = worst_rkhs <= 1e-4 and worst_nn <= 1e-4
    record(3, ok, f"{done_rkhs} rkhs + {done_nn} nn instances, worst relative gap "
                  f"rkhs {worst_rkhs:.2e}, nn {worst_nn:.2e} ({flat} zero-gradient draws skipped)")
    assert ok


def test_criterion_4_class_membership():
    rng = np.random.default_rng(4)
    violations, fits = [], 0
    for i in range(60):
        S = ball_data(rng, int(rng.integers(2, 8)), int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                      B=float(rng.uniform(0.5, 2.5)))
        bound = float(rng.uniform(0.01, 5.0))
        k = Kernel.gaussian(rng.uniform(0.05, 10.0)) if i % 3 else Kernel.polynomial(1.0, 2)
        f = fit_constrained(S, k, bound, opt=OptConfig(step=float(rng.choice([1e-2, 1.0])), max_iter=100), seed=i)
        norms = [rkhs_norm(f, j) for j in range(S.n)]
        grid = DiscretizationGrid.from_spacing(bound / 20, bound)
        try:
            lookup_q(max(norms), grid)
        except Exception as exc:
            violations.append(f"rkhs#{i} lookup {exc}")
        if max(norms) > bound * (1 + 1e-8):
            violations.append(f"rkhs#{i} norm {max(norms)} > {bound}")
        fits += 1
    for i in range(60):
        S = ball_data(rng, int(rng.integers(2, 8)), int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                      B=float(rng.uniform(0.5, 2.5)))
        spec = NnClassSpec(int(rng.integers(1, 4)), int(rng.integers(1, 8)), float(rng.uniform(0.01, 5.0)))
        f = train_constrained(S, spec, opt=OptConfig(step=float(rng.choice([1e-2, 0.5])), max_iter=20), seed=i)
        m = max_frob_norm(f)
        try:
            lookup_q(m, DiscretizationGrid.from_spacing(spec.bound / 20, spec.bound))
        except Exception as exc:
            violations.append(f"nn#{i} lookup {exc}")
        if m > spec.bound * (1 + 1e-8):
            violations.append(f"nn#{i} norm {m} > {spec.bound}")
        fits += 1
    ok = fits >= 100 and not violations
    record(4, ok, f"{fits} fits, {len(violations)} violations " + "; ".join(violations))
    assert ok


def test_criterion_5_integrator():
    sys = linear_test_system(-1.0, 1)
    errs = []
    for steps in (10, 20, 40):
        x = np.array([1.0])
        for _ in range(steps):
            x = rk4_step(sys, x, 1.0 / steps)
        errs.append(abs(x[0] - math.exp(-1.0)))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]

    pend = get_system("double_pendulum")
    x0 = np.random.default_rng(5).uniform(-0.5, 0.5, size=(500, 4))
    traj = simulate(pend, x0, 5, 0.05, 10)  # 0.25 s at dt = 0.005
    E = double_pendulum_energy(traj)
    drift = float(np.max(np.abs(E - E[:, :1]) / np.abs(E[:, :1])))

    x = np.zeros(4)
    for _ in range(200):
        x = rk4_step(pend, x, 0.005)
    eq = float(np.max(np.abs(x)))

    ok = all(3.8 <= p <= 4.2 for p in orders) and drift < 1e-6 and eq <= 1e-14
    record(5, ok, f"observed orders {[round(p, 3) for p in orders]}, energy drift {drift:.2e}, "
                  f"equilibrium {eq:.1e}")
    assert ok


def test_criterion_6_qualitative_reproduction(pendulum_runs):
    _, h, runs = pendulum_runs
    K = h.K
    lines, ok_all, near = [], True, 0
    for s, (report, _) in runs.items():
        train = [r.training_error for r in report.rows]
        true = [r.true_error_mean for r in report.rows]
        k_star = report.selected_k
        k_true = int(np.nanargmin(true))
        a = all(train[k + 1] <= train[k] * 1.05 for k in range(K - 1))
        b = 0 < k_star < K - 1
        c = 0.001 <= true[k_star] <= 0.06
        near += abs(k_star - k_true) <= 1
        ok_all &= a and b and c
        lines.append(f"seed {s}: k*={k_star} true-argmin={k_true} true(k*)={true[k_star]:.4f} "
                     f"monotone={a} interior={b} band={c}")
    ok = ok_all and near >= 3
    record(6, ok, f"selection within +-1 of true argmin on {near}/5 seeds; " + " | ".join(lines))
    assert ok


def test_criterion_7_empirical_guarantee(pendulum_runs):
    cfg, h, runs = pendulum_runs
    worst_margin, ok = math.inf, True
    for report, _ in runs.values():
        et = epsilon_table(report, cfg.delta, h)
        sel = report.rows[report.selected_k]
        lhs = sel.true_error_mean - 3 * sel.true_error_se
        rhs = min(r.true_error_mean + 3 * r.true_error_se + 2 * eps
                  for r, eps in zip(report.rows, et.epsilon_guarantee))
        worst_margin = min(worst_margin, rhs - lhs)
        ok &= lhs <= rhs
    record(7, ok, f"{len(runs)} runs at delta={cfg.delta}, smallest margin rhs-lhs {worst_margin:.3f}")
    assert ok


def test_criterion_8_determinism(pendulum_runs, tmp_path):
    _, _, runs = pendulum_runs
    details, ok = [], True
    first = runs[0][1]["report"].read_bytes()
    _, paths = run_experiment(with_overrides(load_config("double_pendulum_rkhs"), out_dir=str(tmp_path / "rkhs"),
                                             threads=1), plot=False)
    same = paths["report"].read_bytes() == first
    details.append(f"double_pendulum_rkhs identical={same}")
    ok &= same
    for name in ("double_pendulum_nn", "linear_single_class"):
        cfg = load_config(name)
        a = run_experiment(with_overrides(cfg, out_dir=str(tmp_path / f"{name}_a"), threads=1), plot=False)[1]
        b = run_experiment(with_overrides(cfg, out_dir=str(tmp_path / f"{name}_b"), threads=1), plot=False)[1]
        same = a["report"].read_bytes() == b["report"].read_bytes()
        details.append(f"{name} identical={same}")
        ok &= same
    record(8, ok, "; ".join(details))
    assert ok
