"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
The saddle batch (10^4 paths, N = 1000, seed 42) is simulated once and shared
by criteria 3, 4, 5, 8 and 9; its wall time is charged to each of them.
"""
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import conftest  # noqa: E402
from conftest import coupled_spec, hyperbolic_P_spec, tanh_sigma_spec  # noqa: E402
from lqgame import sim  # noqa: E402
from lqgame.duopoly import DuopolyParams, build_duopoly, compute_ring_j  # noqa: E402
from lqgame.filter import discrete_kalman_oracle, run_filter  # noqa: E402
from lqgame.solvers import solve_P, solve_game, solve_sigma  # noqa: E402
from lqgame.synthesis import build_laws  # noqa: E402

PATHS = 10_000
SEED = 42


def report(k: int, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def game():
    params = DuopolyParams.default()
    spec = build_duopoly(params)
    solved = solve_game(spec, compute_ring_j(params))
    return params, spec, solved, build_laws(spec, solved.theta, solved.nu)


@pytest.fixture(scope="module")
def saddle_batch(game):
    _, _, solved, laws = game
    t0 = time.perf_counter()
    b = sim.run_batch(solved, laws, sim.Strategy.saddle(), PATHS, SEED)
    return b, time.perf_counter() - t0


def test_criterion_1_duopoly_solve():
    t0 = time.perf_counter()
    params = DuopolyParams.default()
    spec = build_duopoly(params)
    s = solve_game(spec, compute_ring_j(params))
    dt = time.perf_counter() - t0
    P, S, p = s.P.values, s.sigma.values, s.p.values
    checks = {
        "P(T)": np.array_equal(P[-1], np.diag([-1.0, 1.0])),
        "P sym": np.array_equal(P[:, 0, 1], P[:, 1, 0]),
        "Sigma sym": np.array_equal(S[:, 0, 1], S[:, 1, 0]),
        "Sigma psd": np.linalg.eigvalsh(S).min() >= -1e-10,
        "p(T)": np.array_equal(p[-1], [2.0, -2.0]),
        "runtime": dt < 1.0,
    }
    bad = [k for k, v in checks.items() if not v]
    report(1, not bad, f"N={spec.grid.N} structure {'ok' if not bad else bad}, "
                       f"min eig Sigma {np.linalg.eigvalsh(S).min():.2e}, {dt:.2f}s (<1s)")


def _sigma_err(N):
    spec = tanh_sigma_spec(N)
    return np.abs(solve_sigma(spec).values[:, 0, 0] - np.tanh(spec.grid.t)).max()


def _P_err(N):
    spec = hyperbolic_P_spec(N)
    P, _ = solve_P(spec)
    return np.abs(P.values[:, 0, 0] - 1.0 / (1.0 + spec.grid.T - spec.grid.t)).max()


def test_criterion_2_riccati_oracles():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, err in (("Sigma=tanh", _sigma_err), ("P=1/(1+T-t)", _P_err)):
        e1000 = err(1000)
        e = [err(N) for N in (25, 50, 100)]
        r = [e[0] / e[1], e[1] / e[2]]
        ok &= e1000 <= 1e-8 and all(12 <= x <= 20 for x in r)
        parts.append(f"{name} err {e1000:.1e} ratios {r[0]:.1f},{r[1]:.1f}")
    dt = time.perf_counter() - t0
    ok &= dt < 1.0
    report(2, ok, f"{'; '.join(parts)} (<=1e-8, ratios in [12,20]), {dt:.2f}s (<1s)")


def test_criterion_3_filter(game, saddle_batch):
    params, spec, solved, laws = game
    batch, tb = saddle_batch
    t0 = time.perf_counter()
    Nf, P = 2000, 10
    fine = build_duopoly(params.with_steps(Nf))
    dW, dWb = sim.noise_batch(5, range(P), fine.grid, spec.d, spec.dbar)
    errs = []
    for N in (250, 500, 1000, 2000):
        f = Nf // N
        sp = build_duopoly(params.with_steps(N))
        s = solve_game(sp)
        lw = build_laws(sp, s.theta, s.nu)
        b = sim.simulate(sp, s.sigma, lw, sim.Strategy.saddle(),
                         dW.reshape(P, N, f, spec.d).sum(2), dWb.reshape(P, N, f, spec.dbar).sum(2))
        dy = np.diff(b.y, axis=1)
        m, _ = discrete_kalman_oracle(dy, b.u, sp)
        xhat, _ = run_filter(dy, b.u, sp, s.sigma)
        errs.append(np.abs(xhat - m).max())
    r = np.array(errs[:-1]) / np.array(errs[1:])
    stats = sim.filter_statistics(solved, batch)
    covT = stats["covariance"][-1]
    dt = time.perf_counter() - t0 + tb
    ok = bool(np.all((1.5 <= r) & (r <= 2.5))) and covT["node"] == spec.grid.N and covT["ok"] and dt < 60
    report(3, ok, f"oracle ratios {', '.join(f'{x:.2f}' for x in r)} (in [1.5,2.5]); "
                  f"cov(xtilde(T)) rel Frobenius {covT['relative_frobenius']:.4f} (<=0.05), {dt:.1f}s (<60s)")


def test_criterion_4_value(game, saddle_batch):
    _, spec, solved, _ = game
    batch, tb = saddle_batch
    t0 = time.perf_counter()
    est = sim.estimate_cost(spec, batch)
    sm = solved.summary
    zv = est["J"].z(sm.gamma / 2 + sm.jtilde)
    zs = est["J - Jhat"].z(sm.jtilde)
    dt = time.perf_counter() - t0 + tb
    ok = abs(zv) <= 3 and abs(zs) <= 3 and dt < 60
    report(4, ok, f"J_MC {est['J'].mean:.5f}+-{est['J'].std_error:.5f} vs Gamma/2+Jtilde "
                  f"{sm.gamma / 2 + sm.jtilde:.5f} (z {zv:+.2f}); J-Jhat vs Jtilde {sm.jtilde:.5f} "
                  f"(z {zs:+.2f}); {dt:.1f}s (<60s)")


def test_criterion_5_saddle_gaps(game, saddle_batch):
    _, _, solved, laws = game
    batch, tb = saddle_batch
    t0 = time.perf_counter()
    reps = [sim.verify_saddle(solved, laws, 0.5, 0.5, PATHS, SEED, form=f, saddle_batch=batch) for f in ("I", "II")]
    dt = time.perf_counter() - t0 + tb
    r = reps[0]
    ok = all(x.passed for x in reps) and dt < 120
    report(5, ok, f"gap p2 {r.gap_p2.mean:+.4f}+-{r.gap_p2.std_error:.4f} vs +0.125 (z {r.z_p2:+.2f}); "
                  f"gap p1 {r.gap_p1.mean:+.4f}+-{r.gap_p1.std_error:.4f} vs -0.125 (z {r.z_p1:+.2f}); "
                  f"orderings {'ok' if all(all(x.checks.values()) for x in reps) else 'violated'} "
                  f"(forms I, II); {dt:.1f}s (<120s)")


def test_criterion_6_coincidence(game):
    _, _, solved, laws = game
    t0 = time.perf_counter()
    d_duo = sim.coincidence_check(solved, laws, 100, 7)
    cspec = coupled_spec(N=1000)
    cs = solve_game(cspec)
    d_cpl = sim.coincidence_check(cs, build_laws(cspec, cs.theta, cs.nu), 100, 7)
    dt = time.perf_counter() - t0
    ok = max(d_duo, d_cpl) <= 1e-10 and dt < 10
    report(6, ok, f"max |u(phi1,psi2)-u(psi1,phi2)| duopoly {d_duo:.1e}, R21!=0 spec {d_cpl:.1e} "
                  f"(<=1e-10, 100 paths); {dt:.1f}s (<10s)")


def test_criterion_7_decomposition(game):
    _, spec, solved, _ = game
    t0 = time.perf_counter()
    t = spec.grid.t
    u = np.column_stack([np.sin(3 * t), 1.0 - t])
    noise = sim.NoisePath.generate(SEED, 0, spec.grid, spec.d, spec.dbar)
    r = sim.decomposition_check(spec, u, noise, solved.sigma)
    coarse = sim.decomposition_check(spec.with_grid(500), u[::2], noise.coarsen(2))
    dt = time.perf_counter() - t0
    ok = max(r["max_x"], r["max_y"]) <= 1e-8 and dt < 1.0
    report(7, ok, f"max |x^u-x^0-xi| {r['max_x']:.1e}, |y^u-y^0-eta| {r['max_y']:.1e} (<=1e-8); "
                  f"vs RK4 ODE {r['max_x_rk4']:.1e}/{r['max_y_rk4']:.1e} "
                  f"(N=500: {coarse['max_x_rk4']:.1e}/{coarse['max_y_rk4']:.1e}); {dt:.2f}s (<1s)")


def test_criterion_8_completion_of_squares(game, saddle_batch):
    _, spec, solved, laws = game
    batch, tb = saddle_batch
    t0 = time.perf_counter()
    kept = sim.run_batch(solved, laws, sim.Strategy.saddle(), 100, SEED, keep=True)
    pen = float(np.abs(sim.penalty_integrand(solved, kept.bundle)).max())
    res = sim.CostEstimate.of(batch.residual, "residual")
    z = res.z(0.0)
    rows = sim.residual_refinement(spec, steps=(250, 500, 1000), paths=1000, seed=3)
    m = np.array([abs(row["mean"]) for row in rows])
    ratios = m[:-1] / m[1:]
    dt = time.perf_counter() - t0 + tb
    ok = pen <= 1e-9 and abs(z) <= 3 and bool(np.all((1.5 <= ratios) & (ratios <= 2.5))) and dt < 60
    report(8, ok, f"penalty max {pen:.1e} (<=1e-9); residual {res.mean:+.2e}+-{res.std_error:.1e} "
                  f"(z {z:+.2f}); QV-corrected mean ratios {', '.join(f'{x:.2f}' for x in ratios)} "
                  f"(in [1.5,2.5]); {dt:.1f}s (<60s)")


def test_criterion_9_control_increment_correlation(saddle_batch):
    batch, _ = saddle_batch
    c = batch.ucorr
    frac = float(np.mean(c < 0))
    ok = c.size >= 100 and frac > 0.5
    report(9, ok, f"mean corr(du1*, du2*) {c.mean():+.4f}, negative on {100 * frac:.1f}% of {c.size} paths "
                  f"(need majority negative)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
