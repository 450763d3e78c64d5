import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from lqgame.errors import BlowUpError
from lqgame.solvers import (compute_jtilde, solve_game, solve_P, solve_p, solve_sigma,
                            write_solution_csvs)
from lqgame import io

from conftest import coupled_spec, hyperbolic_P_spec, make_spec, tanh_sigma_spec


def sigma_error(N):
    spec = tanh_sigma_spec(N)
    return np.abs(solve_sigma(spec).values[:, 0, 0] - np.tanh(spec.grid.t)).max()


def P_error(N):
    spec = hyperbolic_P_spec(N)
    P, _ = solve_P(spec)
    return np.abs(P.values[:, 0, 0] - 1.0 / (1.0 + spec.grid.T - spec.grid.t)).max()


def test_sigma_tanh_oracle():
    assert sigma_error(1000) <= 1e-8


def test_P_hyperbolic_oracle():
    assert P_error(1000) <= 1e-8


@pytest.mark.parametrize("err", [sigma_error, P_error])
def test_rk4_order(err):
    e = [err(N) for N in (25, 50, 100)]
    assert 12 <= e[0] / e[1] <= 20
    assert 12 <= e[1] / e[2] <= 20


def test_zero_noise_keeps_sigma_zero():
    spec = make_spec(N=50, A=[[0.3]])
    assert_array_equal(solve_sigma(spec).values, 0.0)


def test_D_gain_formula(coupled):
    spec, solved, _ = coupled
    nd = spec.nodes
    j = 77
    expect = nd.C[j] + solved.sigma.values[j] @ (np.linalg.inv(nd.K[j]) @ nd.H[j]).T
    assert_allclose(solved.sigma.D[j], expect, atol=1e-14)


def test_duopoly_structure(duopoly):
    spec, solved, _ = duopoly
    P, S = solved.P.values, solved.sigma.values
    assert_array_equal(P[-1], np.diag([-1.0, 1.0]))
    assert_array_equal(solved.p.values[-1], [2.0, -2.0])
    assert_array_equal(P[:, 0, 1], P[:, 1, 0])
    assert_array_equal(S[:, 0, 1], S[:, 1, 0])
    assert_array_equal(S[0], 0.0)
    assert np.linalg.eigvalsh(S).min() >= -1e-12


def test_duopoly_Jtilde_is_terminal_trace(duopoly):
    spec, solved, _ = duopoly
    assert solved.summary.jtilde == pytest.approx(0.5 * np.trace(spec.G @ solved.sigma.values[-1]), abs=1e-15)


def test_theta_and_nu_definitions(coupled):
    spec, solved, _ = coupled
    nd = spec.nodes
    assert_allclose(solved.theta.theta, np.swapaxes(nd.B, 1, 2) @ solved.P.values + nd.S, atol=1e-14)
    nu = np.einsum("jnk,jn->jk", nd.B, solved.p.values) + nd.rho
    assert_allclose(solved.nu.nu, nu, atol=1e-14)


def test_p_solver_matches_closed_form():
    # scalar: P = 1/(1+T-t), b = beta, rho = 0: -p' = P beta - P^2 p (B^T R^-1 B = 1)
    # substitution p = P w gives w' = -beta, so p = P (g + beta (T - t))
    beta, g = 0.4, 0.25
    spec = hyperbolic_P_spec(N=400).replace(b=make_spec(b=[beta]).b, g=np.array([g]))
    P, th = solve_P(spec)
    p, _ = solve_p(spec, P, th)
    t = spec.grid.t
    Pe = 1.0 / (1.0 + 1.0 - t)
    assert_allclose(p.values[:, 0], Pe * (g + beta * (1.0 - t)), atol=1e-9)


def test_gamma_deterministic_scalar():
    # no noise, no offsets: Gamma = P(0) a^2 = a^2 / (1 + T)
    spec = hyperbolic_P_spec(N=200, a0=1.0)
    s = solve_game(spec)
    assert s.summary.gamma == pytest.approx(0.5, abs=1e-9)
    assert s.summary.jtilde == 0.0
    assert s.summary.value == pytest.approx(0.25, abs=1e-9)


def test_gamma_and_jtilde_second_order(duopoly_params):
    from lqgame.duopoly import build_duopoly
    vals = []
    for N in (20, 40, 80, 160):
        s = solve_game(build_duopoly(duopoly_params.with_steps(N)))
        vals.append((s.summary.gamma, s.summary.jtilde))
    vals = np.array(vals)
    # Gamma carries the trapezoid error of its integral
    d = np.abs(np.diff(vals[:, 0]))
    assert np.all((3 <= d[:-1] / d[1:]) & (d[:-1] / d[1:] <= 5)), d
    # Q = 0 leaves only tr(G Sigma(T)), which inherits the RK4 order
    d = np.abs(np.diff(vals[:, 1]))
    assert np.all(d[:-1] / d[1:] >= 3), d


def test_blow_up_escape_time():
    # B2 = 0: -P' = +P^2 from P(2) = 1 escapes at t = 1
    spec = make_spec(N=400, T=2.0, G=[[1.0]], B1=[[1.0]], R11=[[-1.0]])
    with pytest.raises(BlowUpError) as info:
        solve_P(spec, blowup=1e6)
    assert info.value.time == pytest.approx(1.0, abs=0.01)
    assert info.value.exit_code == 3


def test_solution_csvs(tmp_path, duopoly):
    spec, solved, _ = duopoly
    paths = write_solution_csvs(solved, tmp_path, {"seed": 1})
    assert [p.name for p in paths] == ["P.csv", "p.csv", "Sigma.csv", "Theta.csv", "nu.csv"]
    header, data = io.read_csv(tmp_path / "P.csv")
    assert header == ["t", "P11", "P12", "P21", "P22"]
    assert_array_equal(data[:, 2], data[:, 3])
    assert (tmp_path / "P.csv").read_text().startswith("# seed=1\n")


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-1, 1), c=st.floats(0, 1.5), cb=st.floats(0, 1.5), k=st.floats(0.5, 2), hh=st.floats(-2, 2),
       off=st.floats(-0.5, 0.5))
def test_sigma_symmetric_psd(a, c, cb, k, hh, off):
    spec = make_spec(n=2, d=2, dbar=1, N=40, A=[[a, off], [0.0, -a]], C=[[c, 0.0], [0.0, 0.5 * c]],
                     Cbar=[[cb], [0.3]], H=[[hh, 0.0], [0.1, 1.0]], K=[[k, 0.0], [0.2, 1.0]])
    S = solve_sigma(spec).values
    assert_array_equal(S, np.swapaxes(S, 1, 2))
    assert np.linalg.eigvalsh(S).min() >= -1e-10


def test_sampled_coefficients_match_constants():
    spec = coupled_spec(N=50)
    from lqgame.model import CoefficientPath
    sampled = spec.replace(A=CoefficientPath.sampled(spec.A.sample(spec.grid)))
    a, b = solve_game(spec), solve_game(sampled)
    assert_allclose(a.P.values, b.P.values, atol=1e-13)
    assert a.summary.gamma == pytest.approx(b.summary.gamma, abs=1e-12)


def test_compute_jtilde_with_Q():
    spec = tanh_sigma_spec(N=200).replace(Q=make_spec(Q=[[2.0]]).Q, G=np.array([[1.0]]))
    s = solve_sigma(spec)
    # 1/2 (tanh(1) + 2 log cosh(1))
    assert compute_jtilde(spec, s) == pytest.approx(0.5 * (np.tanh(1) + 2 * np.log(np.cosh(1))), abs=1e-5)
