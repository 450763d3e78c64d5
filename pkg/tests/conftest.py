import numpy as np
import pytest

from lqgame.duopoly import DuopolyParams, build_duopoly, compute_ring_j
from lqgame.model import CoefficientPath, ProblemSpec, TimeGrid
from lqgame.solvers import solve_game
from lqgame.synthesis import build_laws


def make_spec(n=1, k1=1, k2=1, d=1, dbar=1, T=1.0, N=100, **kw) -> ProblemSpec:
    """Spec with zero defaults, identity H and K; override any field by keyword."""
    z = np.zeros
    base = dict(
        a=z(n), G=z((n, n)), g=z(n),
        Q=z((n, n)), q=z(n), S1=z((k1, n)), S2=z((k2, n)),
        R11=-np.eye(k1), R21=z((k2, k1)), R22=np.eye(k2),
        rho1=z(k1), rho2=z(k2),
        A=z((n, n)), B1=z((n, k1)), B2=z((n, k2)), b=z(n),
        C=z((n, d)), Cbar=z((n, dbar)), H=np.eye(d, n), h=z(d), K=np.eye(d),
    )
    base.update(kw)
    paths = {k: (v if isinstance(v, CoefficientPath) else CoefficientPath.const(v))
             for k, v in base.items() if k not in ("a", "G", "g")}
    return ProblemSpec(n=n, k1=k1, k2=k2, d=d, dbar=dbar, a=base["a"], G=base["G"], g=base["g"],
                       grid=TimeGrid(T, N), **paths)


def tanh_sigma_spec(N=1000):
    # Sigma' = 1 - Sigma^2, Sigma(0) = 0  ->  tanh(t)
    return make_spec(N=N, Cbar=[[1.0]], H=[[1.0]], K=[[1.0]])


def hyperbolic_P_spec(N=1000, T=1.0, a0=0.0):
    # -P' = -P^2 (B1^2/R11 + B2^2/R22 = 1), P(T) = 1  ->  1 / (1 + T - t)
    return make_spec(N=N, T=T, a=[a0], G=[[1.0]], B1=[[1.0]], B2=[[np.sqrt(2.0)]],
                     R11=[[-1.0]], R22=[[1.0]])


def coupled_spec(N=200, **kw):
    """Two-dimensional game with R21 != 0 satisfying Conditions (I) and (II)."""
    base = dict(
        n=2, d=2, dbar=1, N=N,
        a=[0.5, -0.2], G=[[0.4, 0.1], [0.1, -0.3]], g=[0.2, 0.1],
        Q=[[0.2, 0.05], [0.05, 0.1]], q=[0.1, -0.1],
        S1=[[0.1, 0.0]], S2=[[0.0, 0.2]],
        R11=[[-2.0]], R21=[[1.0]], R22=[[3.0]], rho1=[0.3], rho2=[-0.2],
        A=[[0.1, 0.2], [-0.1, 0.05]], B1=[[1.0], [0.3]], B2=[[0.2], [1.0]], b=[0.1, 0.2],
        C=[[0.5, 0.1], [0.0, 0.4]], Cbar=[[0.2], [0.1]],
        H=[[1.0, 0.0], [0.3, 1.0]], h=[0.05, 0.0], K=[[1.0, 0.2], [0.0, 0.8]],
    )
    base.update(kw)
    return make_spec(**base)


@pytest.fixture(scope="session")
def duopoly_params():
    return DuopolyParams.default()


@pytest.fixture(scope="session")
def duopoly(duopoly_params):
    spec = build_duopoly(duopoly_params)
    solved = solve_game(spec, compute_ring_j(duopoly_params))
    laws = build_laws(spec, solved.theta, solved.nu)
    return spec, solved, laws


@pytest.fixture(scope="session")
def coupled():
    spec = coupled_spec()
    solved = solve_game(spec)
    laws = build_laws(spec, solved.theta, solved.nu)
    return spec, solved, laws


# one line per acceptance criterion in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
