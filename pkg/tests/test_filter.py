import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from lqgame import sim
from lqgame.duopoly import build_duopoly
from lqgame.errors import DataError
from lqgame.filter import (discrete_kalman_oracle, filter_step, initial_state, run_filter,
                           write_filter_csv)
from lqgame.solvers import solve_game
from lqgame.synthesis import build_laws
from lqgame import io


def _observations(spec, solved, laws, paths, seed):
    dW, dWb = sim.noise_batch(seed, range(paths), spec.grid, spec.d, spec.dbar)
    b = sim.simulate(spec, solved.sigma, laws, sim.Strategy.saddle(), dW, dWb)
    return b, np.diff(b.y, axis=1)


def test_run_filter_reproduces_simulator(duopoly):
    spec, s, laws = duopoly
    b, dy = _observations(spec, s, laws, 3, 11)
    xhat, What = run_filter(dy, b.u, spec, s.sigma)
    assert_allclose(xhat, b.xhat, atol=1e-12)
    assert_allclose(What, b.What, atol=1e-12)


def test_single_path_and_batch_agree(duopoly):
    spec, s, laws = duopoly
    b, dy = _observations(spec, s, laws, 2, 3)
    one, _ = run_filter(dy[1], b.u[1], spec, s.sigma)
    assert_allclose(one, b.xhat[1], atol=1e-13)


def test_initial_state(duopoly):
    spec = duopoly[0]
    st = initial_state(spec, 4)
    assert st.xhat.shape == (4, 2) and st.j == 0
    assert_array_equal(st.xhat[2], spec.a)


def test_step_increments_innovation(duopoly):
    spec, s, _ = duopoly
    st = initial_state(spec)
    dy = np.array([0.01, -0.02])
    nxt, dW = filter_step(st, np.zeros(2), dy, spec, s.sigma)
    dt = spec.grid.dt
    expect = np.linalg.solve(spec.nodes.K[0], dy - (spec.nodes.H[0] @ spec.a + spec.nodes.h[0]) * dt)
    assert_allclose(dW, expect)
    assert nxt.j == 1 and nxt.t == spec.grid.t[1]


def test_oracle_agreement_first_order(duopoly_params):
    # same Brownian paths on each grid via coarsening
    Nf, P = 2000, 10
    fine = build_duopoly(duopoly_params.with_steps(Nf))
    dW, dWb = sim.noise_batch(5, range(P), fine.grid, 2, 1)
    errs, cov_errs = [], []
    for N in (250, 500, 1000, 2000):
        f = Nf // N
        spec = build_duopoly(duopoly_params.with_steps(N))
        s = solve_game(spec)
        laws = build_laws(spec, s.theta, s.nu)
        b = sim.simulate(spec, s.sigma, laws, sim.Strategy.saddle(),
                         dW.reshape(P, N, f, 2).sum(2), dWb.reshape(P, N, f, 1).sum(2))
        dy = np.diff(b.y, axis=1)
        m, cov = discrete_kalman_oracle(dy, b.u, spec)
        xhat, _ = run_filter(dy, b.u, spec, s.sigma)
        errs.append(np.abs(xhat - m).max())
        cov_errs.append(np.abs(cov - s.sigma.values).max())
    for e in (errs, cov_errs):
        r = np.array(e[:-1]) / np.array(e[1:])
        assert np.all((1.5 <= r) & (r <= 2.5)), e


def test_shape_errors(duopoly):
    spec, s, _ = duopoly
    N = spec.grid.N
    with pytest.raises(DataError, match="observation"):
        run_filter(np.zeros((N - 1, 2)), np.zeros((N, 2)), spec, s.sigma)
    with pytest.raises(DataError, match="controls"):
        run_filter(np.zeros((N, 2)), np.zeros((N, 3)), spec, s.sigma)


def test_filter_csv(tmp_path, duopoly):
    spec, s, laws = duopoly
    b, _ = _observations(spec, s, laws, 2, 1)
    write_filter_csv(tmp_path / "one.csv", spec.grid.t, b.xhat[0], b.What[0], {"seed": 1})
    header, data = io.read_csv(tmp_path / "one.csv")
    assert header == ["t", "xhat_1", "xhat_2", "What_1", "What_2"]
    write_filter_csv(tmp_path / "many.csv", spec.grid.t, b.xhat, b.What)
    header, data = io.read_csv(tmp_path / "many.csv")
    assert header[0] == "path" and data.shape[0] == 2 * (spec.grid.N + 1)
    assert_array_equal(np.unique(data[:, 0]), [0, 1])


def test_mc_covariance_matches_sigma(duopoly):
    spec, s, laws = duopoly
    batch = sim.run_batch(s, laws, sim.Strategy.saddle(), 2000, 8)
    stats = sim.filter_statistics(s, batch, cov_rtol=0.1)
    assert all(c["ok"] for c in stats["covariance"]), stats["covariance"]
    assert stats["orthogonality"]["ok"]
    assert stats["innovation"]["ok"]
