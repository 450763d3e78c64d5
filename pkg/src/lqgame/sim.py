"""Euler-Maruyama simulation of state, observation, filter and controls.

Controls only ever see the filter estimate ``xhat``, which for this
linear-Gaussian model is the conditional mean given the observations.  All
comparative estimators reuse the same noise (common random numbers): path
``i`` of a batch seeded with ``seed`` always draws from
``SeedSequence(seed, spawn_key=(i,))``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ConditionError, DataError, SimulationError
from .filter import FilterState, filter_step
from .integrate import trapezoid
from .model import ProblemSpec, TimeGrid
from .solvers import SigmaPath, SolvedGame
from .synthesis import FeedbackLaws, inv_checked

log = logging.getLogger(__name__)

RNG_DESCRIPTION = "numpy.random.PCG64; path i seeded with SeedSequence(seed, spawn_key=(i,))"
DEFAULT_CHUNK = 1000


# --------------------------------------------------------------------------
# noise

@dataclass(frozen=True)
class NoisePath:
    """Brownian increments of one path; entries are N(0, dt)."""

    seed: int
    index: int
    dW: np.ndarray  # (N, d)
    dWbar: np.ndarray  # (N, dbar)

    @classmethod
    def generate(cls, seed: int, index: int, grid: TimeGrid, d: int, dbar: int) -> "NoisePath":
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
        z = np.random.Generator(np.random.PCG64(ss)).standard_normal((grid.N, d + dbar))
        z *= np.sqrt(grid.dt)
        return cls(int(seed), int(index), z[:, :d], z[:, d:])

    def coarsen(self, factor: int) -> "NoisePath":
        """Increments of the same Brownian path on a grid ``factor`` times coarser."""
        N = self.dW.shape[0]
        if N % factor:
            raise DataError(f"cannot coarsen {N} steps by {factor}")
        sumv = lambda a: a.reshape(N // factor, factor, a.shape[1]).sum(axis=1)
        return NoisePath(self.seed, self.index, sumv(self.dW), sumv(self.dWbar))


def noise_batch(seed: int, indices, grid: TimeGrid, d: int, dbar: int) -> tuple[np.ndarray, np.ndarray]:
    paths = [NoisePath.generate(seed, i, grid, d, dbar) for i in indices]
    return np.stack([p.dW for p in paths]), np.stack([p.dWbar for p in paths])


# --------------------------------------------------------------------------
# strategies

STRATEGY_TAGS = ("saddle", "explicit_implicit", "implicit_explicit", "perturbed_p1", "perturbed_p2", "open_loop")


def _as_node_path(value, N: int, width: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full((N + 1, width), float(arr))
    if arr.ndim == 1 and arr.shape[0] == width and width != N + 1:
        return np.broadcast_to(arr, (N + 1, width)).copy()
    if arr.ndim == 1 and arr.shape[0] == N + 1 and width == 1:
        return arr[:, None].copy()
    if arr.shape == (N + 1, width):
        return arr.copy()
    raise DataError(f"{what} must be a scalar, a {width}-vector or an ({N + 1}, {width}) path; got shape {arr.shape}")


@dataclass(frozen=True)
class Strategy:
    """How the two players pick controls from the filter estimate.

    ``form`` selects the law pair that the perturbations are built on:
    "I" uses (phi1, psi2), "II" uses (psi1, phi2).

    * ``perturbed_p2``: Player 2 plays its implicit law plus ``delta`` while
      Player 1 responds through its law; the controls deviate from the
      saddle laws only by ``delta`` through Player 2.
    * ``perturbed_p1``: the mirror image for Player 1.
    * ``open_loop``: ``delta`` is the full deterministic control path.
    """

    tag: str = "saddle"
    delta: np.ndarray | None = None  # (N+1, width)
    form: str = "I"

    def __post_init__(self):
        if self.tag not in STRATEGY_TAGS:
            raise DataError(f"unknown strategy {self.tag!r}")
        if self.form not in ("I", "II"):
            raise DataError(f"unknown law form {self.form!r}")

    @classmethod
    def saddle(cls):
        return cls("saddle")

    @classmethod
    def perturbed_p1(cls, delta, grid: TimeGrid, k1: int, form: str = "I"):
        return cls("perturbed_p1", _as_node_path(delta, grid.N, k1, "delta1"), form)

    @classmethod
    def perturbed_p2(cls, delta, grid: TimeGrid, k2: int, form: str = "I"):
        return cls("perturbed_p2", _as_node_path(delta, grid.N, k2, "delta2"), form)

    @classmethod
    def open_loop(cls, u, grid: TimeGrid, k: int):
        return cls("open_loop", _as_node_path(u, grid.N, k, "open-loop control"))

    def controls(self, laws: FeedbackLaws | None, j: int, xhat: np.ndarray) -> np.ndarray:
        tag = self.tag
        if tag == "open_loop":
            return np.broadcast_to(self.delta[j], xhat.shape[:-1] + self.delta.shape[1:])
        if laws is None:
            raise DataError(f"strategy {tag!r} needs feedback laws")
        if tag == "saddle":
            return laws.ustar_node(j, xhat)
        if tag == "explicit_implicit" or (tag.startswith("perturbed") and self.form == "I"):
            u2 = laws.psi2_node(j, xhat)
            if tag == "perturbed_p2":
                u2 = u2 + self.delta[j]
            u1 = laws.phi1_node(j, xhat, u2)
            if tag == "perturbed_p1":
                u1 = u1 + self.delta[j]
        else:
            u1 = laws.psi1_node(j, xhat)
            if tag == "perturbed_p1":
                u1 = u1 + self.delta[j]
            u2 = laws.phi2_node(j, xhat, u1)
            if tag == "perturbed_p2":
                u2 = u2 + self.delta[j]
        return np.concatenate([u1, u2], axis=-1)


def predicted_gap(spec: ProblemSpec, strategy: Strategy) -> float:
    """Deterministic cost change ``1/2 int <M delta, delta> dt`` of a perturbed strategy.

    ``M`` is the penalty weight of the deviating player's square:
    ``R11`` / ``R22 - R21 R11^-1 R21^T`` under form I and
    ``R11 - R21^T R22^-1 R21`` / ``R22`` under form II.
    """
    if strategy.tag == "saddle":
        return 0.0
    if strategy.tag not in ("perturbed_p1", "perturbed_p2"):
        raise DataError(f"no predicted gap for strategy {strategy.tag!r}")
    nd = spec.nodes
    R11, R21, R22 = nd.R11, nd.R21, nd.R22
    R21T = np.swapaxes(R21, -1, -2)
    if strategy.form == "I":
        M = R11 if strategy.tag == "perturbed_p1" else R22 - R21 @ inv_checked(R11, "R11") @ R21T
    else:
        M = R11 - R21T @ inv_checked(R22, "R22") @ R21 if strategy.tag == "perturbed_p1" else R22
    dl = strategy.delta
    return float(0.5 * trapezoid(np.einsum("ja,jab,jb->j", dl, M, dl), spec.grid.dt))


# --------------------------------------------------------------------------
# trajectories

@dataclass
class TrajectoryBundle:
    """Trajectories of a set of paths; every array has a leading paths axis."""

    t: np.ndarray
    x: np.ndarray  # (P, N+1, n)
    y: np.ndarray  # (P, N+1, d)
    xhat: np.ndarray  # (P, N+1, n)
    u: np.ndarray  # (P, N+1, k)
    dWhat: np.ndarray  # (P, N, d)
    dW: np.ndarray  # (P, N, d)
    dWbar: np.ndarray  # (P, N, dbar)
    seed: int | None = None
    indices: np.ndarray | None = None

    @property
    def paths(self) -> int:
        return self.x.shape[0]

    @property
    def xtilde(self) -> np.ndarray:
        return self.x - self.xhat

    @property
    def What(self) -> np.ndarray:
        P, N, d = self.dWhat.shape
        out = np.zeros((P, N + 1, d))
        np.cumsum(self.dWhat, axis=1, out=out[:, 1:])
        return out

    def path(self, i: int) -> "TrajectoryBundle":
        sl = slice(i, i + 1)
        idx = None if self.indices is None else self.indices[sl]
        return TrajectoryBundle(self.t, self.x[sl], self.y[sl], self.xhat[sl], self.u[sl],
                                self.dWhat[sl], self.dW[sl], self.dWbar[sl], self.seed, idx)


def simulate(spec: ProblemSpec, sigma: SigmaPath, laws: FeedbackLaws | None, strategy: Strategy,
             dW: np.ndarray, dWbar: np.ndarray) -> TrajectoryBundle:
    """Simulate every path of ``dW``/``dWbar`` (shapes ``(P, N, d)``, ``(P, N, dbar)``).

    Per step: the controls are read from the current estimate, the observation
    increment is produced by the current true state, the filter advances, and
    the true state advances under the same controls.
    """
    nd = spec.nodes
    N, dt = spec.grid.N, spec.grid.dt
    dW = np.asarray(dW, dtype=float)
    dWbar = np.asarray(dWbar, dtype=float)
    if dW.ndim == 2:
        dW, dWbar = dW[None], dWbar[None]
    P = dW.shape[0]
    if dW.shape[1:] != (N, spec.d) or dWbar.shape != (P, N, spec.dbar):
        raise DataError(f"noise shapes {dW.shape}, {dWbar.shape} do not match grid N={N}, d={spec.d}, dbar={spec.dbar}")
    x = np.empty((P, N + 1, spec.n))
    y = np.zeros((P, N + 1, spec.d))
    xhat = np.empty((P, N + 1, spec.n))
    u = np.empty((P, N + 1, spec.k))
    dWhat = np.empty((P, N, spec.d))
    x[:, 0] = spec.a
    xhat[:, 0] = spec.a
    state = FilterState(0, 0.0, xhat[:, 0])
    for j in range(N):
        xj = x[:, j]
        uj = strategy.controls(laws, j, state.xhat)
        u[:, j] = uj
        dy = (xj @ nd.H[j].T + nd.h[j]) * dt + dW[:, j] @ nd.K[j].T
        y[:, j + 1] = y[:, j] + dy
        state, dWhat[:, j] = filter_step(state, uj, dy, spec, sigma)
        xhat[:, j + 1] = state.xhat
        x[:, j + 1] = xj + (xj @ nd.A[j].T + uj @ nd.B[j].T + nd.b[j]) * dt \
            + dW[:, j] @ nd.C[j].T + dWbar[:, j] @ nd.Cbar[j].T
    u[:, N] = strategy.controls(laws, N, state.xhat)
    for name, arr in (("x", x), ("xhat", xhat), ("u", u)):
        finite = np.isfinite(arr).all(axis=(0, 2))
        if not finite.all():
            raise SimulationError(f"{name} became non-finite at node {int(np.flatnonzero(~finite)[0])}")
    return TrajectoryBundle(spec.grid.t, x, y, xhat, u, dWhat, dW, dWbar)


def simulate_path(spec: ProblemSpec, sigma: SigmaPath, laws: FeedbackLaws | None, strategy: Strategy,
                  noise: NoisePath) -> TrajectoryBundle:
    bundle = simulate(spec, sigma, laws, strategy, noise.dW[None], noise.dWbar[None])
    bundle.seed = noise.seed
    bundle.indices = np.array([noise.index])
    return bundle


# --------------------------------------------------------------------------
# cost functionals

def running_cost(spec: ProblemSpec, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Node values of ``<Q x,x> + 2<S x,u> + <R u,u> + 2<q,x> + 2<rho,u>`` (shape ``(P, N+1)``)."""
    nd = spec.nodes
    return (np.einsum("pjn,jnm,pjm->pj", x, nd.Q, x)
            + 2.0 * np.einsum("pjk,jkn,pjn->pj", u, nd.S, x)
            + np.einsum("pjk,jkl,pjl->pj", u, nd.R, u)
            + 2.0 * np.einsum("jn,pjn->pj", nd.q, x)
            + 2.0 * np.einsum("jk,pjk->pj", nd.rho, u))


def functional(spec: ProblemSpec, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Per-path quadratic functional evaluated on ``x`` with trapezoidal time quadrature."""
    xT = x[:, -1]
    terminal = np.einsum("pn,nm,pm->p", xT, spec.G, xT) + 2.0 * xT @ spec.g
    return 0.5 * (terminal + trapezoid(running_cost(spec, x, u), spec.grid.dt, axis=1))


def path_costs(spec: ProblemSpec, bundle: TrajectoryBundle) -> tuple[np.ndarray, np.ndarray]:
    """Per-path ``J`` (on the true state) and ``Jhat`` (on the filter estimate)."""
    return functional(spec, bundle.x, bundle.u), functional(spec, bundle.xhat, bundle.u)


def _delta_u(solved: SolvedGame, xhat: np.ndarray) -> np.ndarray:
    th = solved.theta.theta
    return np.einsum("jkn,pjn->pjk", th, xhat) + solved.nu.nu


def penalty_integrand(solved: SolvedGame, bundle: TrajectoryBundle) -> np.ndarray:
    """``<R w, w>`` with ``w = u + R^-1 (Theta xhat + nu)`` per path and node."""
    R = solved.spec.nodes.R
    Delta = _delta_u(solved, bundle.xhat)
    w = bundle.u + np.linalg.solve(R[None], Delta[..., None])[..., 0]
    return np.einsum("pjk,jkl,pjl->pj", w, R, w)


def completion_of_squares_residual(solved: SolvedGame, bundle: TrajectoryBundle,
                                   quadratic_variation: bool = False) -> np.ndarray:
    """Pathwise residual of the completion-of-squares identity.

    With ``V = <P xhat, xhat> + 2 <p, xhat>`` Ito's formula turns
    ``2 * Jhat_path - Gamma`` into the penalty integral plus the martingale
    ``int 2 <P xhat + p, D dWhat>``.  The residual

        ell(xhat, u) - Gamma - int <R w, w> dt - sum_j 2 <P_j xhat_j + p_j, D_j dWhat_j>

    uses left-point (Ito) sums for the running terms, matching the
    Euler-Maruyama step.  It has mean O(dt).

    With ``quadratic_variation`` the mean-zero second-order term
    ``sum_j <P_j D_j dWhat_j, D_j dWhat_j> - tr(D_j^T P_j D_j) dt`` is also
    subtracted.  The mean is unchanged to O(dt) but the pathwise spread drops
    from O(sqrt(dt)) to O(dt), which exposes the discretization bias.
    """
    spec = solved.spec
    dt = spec.grid.dt
    xh = bundle.xhat
    xT = xh[:, -1]
    terminal = np.einsum("pn,nm,pm->p", xT, spec.G, xT) + 2.0 * xT @ spec.g
    running = running_cost(spec, xh, bundle.u)[:, :-1].sum(axis=1) * dt
    pen = penalty_integrand(solved, bundle)[:, :-1].sum(axis=1) * dt
    Pv, pv, D = solved.P.values[:-1], solved.p.values[:-1], solved.sigma.D[:-1]
    grad = np.einsum("jnm,pjm->pjn", Pv, xh[:, :-1]) + pv
    mart = 2.0 * np.einsum("pjn,jnd,pjd->p", grad, D, bundle.dWhat)
    res = terminal + running - solved.summary.gamma - pen - mart
    if quadratic_variation:
        V = np.einsum("jnd,pjd->pjn", D, bundle.dWhat)
        res -= np.einsum("pjn,jnm,pjm->p", V, Pv, V) - dt * np.einsum("jnd,jnm,jmd->", D, Pv, D)
    return res


def residual_refinement(spec: ProblemSpec, steps=(250, 500, 1000), paths: int = 1000, seed: int = 0,
                        quadratic_variation: bool = True) -> list[dict]:
    """Saddle-path residual statistics on successively refined grids.

    Noise is drawn on the finest grid and summed onto the coarser ones, so
    every level sees the same Brownian paths.
    """
    from .solvers import solve_game
    from .synthesis import build_laws

    steps = sorted(int(s) for s in steps)
    fine = spec.with_grid(steps[-1])
    dW, dWbar = noise_batch(seed, range(paths), fine.grid, spec.d, spec.dbar)
    out = []
    for N in steps:
        if steps[-1] % N:
            raise DataError(f"grid {N} does not divide {steps[-1]}")
        f = steps[-1] // N
        sp = spec.with_grid(N)
        solved = solve_game(sp)
        laws = build_laws(sp, solved.theta, solved.nu)
        cw = dW.reshape(paths, N, f, spec.d).sum(axis=2)
        cb = dWbar.reshape(paths, N, f, spec.dbar).sum(axis=2)
        bundle = simulate(sp, solved.sigma, laws, Strategy.saddle(), cw, cb)
        est = CostEstimate.of(completion_of_squares_residual(solved, bundle, quadratic_variation), "residual")
        out.append({"N": N, "dt": sp.grid.dt, "mean": est.mean, "std_error": est.std_error})
    return out


def increment_correlation(u: np.ndarray, a: int = 0, b: int = 1) -> np.ndarray:
    """Per-path sample correlation between increments of control components ``a`` and ``b``."""
    du = np.diff(u, axis=1)
    x = du[..., a] - du[..., a].mean(axis=1, keepdims=True)
    y = du[..., b] - du[..., b].mean(axis=1, keepdims=True)
    den = np.sqrt((x * x).sum(axis=1) * (y * y).sum(axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, (x * y).sum(axis=1) / den, 0.0)


# --------------------------------------------------------------------------
# batches

@dataclass(frozen=True)
class CostEstimate:
    mean: float
    std_error: float
    paths: int
    which: str  # "J", "Jhat", "J - Jhat", "penalty", ...

    @classmethod
    def of(cls, samples: np.ndarray, which: str) -> "CostEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        if n < 2:
            raise DataError("a cost estimate needs at least two paths")
        return cls(float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(n)), n, which)

    def z(self, target: float) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.mean == target else float(np.sign(self.mean - target) * np.inf)
        return (self.mean - target) / self.std_error

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "paths": self.paths, "which": self.which}


@dataclass
class SimulationBatch:
    """Per-path scalars of a batch, optionally with the full trajectories."""

    seed: int
    indices: np.ndarray
    strategy: str
    grid: TimeGrid
    J: np.ndarray
    Jhat: np.ndarray
    penalty: np.ndarray  # 1/2 int <R w, w> dt (trapezoid)
    residual: np.ndarray
    xtilde: dict  # node index -> (P, n)
    xhat_T: np.ndarray
    What_T: np.ndarray
    ucorr: np.ndarray
    bundle: TrajectoryBundle | None = None
    meta: dict = field(default_factory=dict)

    @property
    def paths(self) -> int:
        return self.J.size


def _chunk_summary(solved, bundle, nodes):
    spec = solved.spec
    J, Jhat = path_costs(spec, bundle)
    pen = 0.5 * trapezoid(penalty_integrand(solved, bundle), spec.grid.dt, axis=1)
    res = completion_of_squares_residual(solved, bundle)
    xt = {j: bundle.xtilde[:, j].copy() for j in nodes}
    corr = increment_correlation(bundle.u, 0, spec.k1) if spec.k >= 2 else np.zeros(bundle.paths)
    return J, Jhat, pen, res, xt, bundle.xhat[:, -1].copy(), bundle.dWhat.sum(axis=1), corr


def run_batch(solved: SolvedGame, laws: FeedbackLaws | None, strategy: Strategy, paths: int, seed: int,
              first_index: int = 0, chunk: int = DEFAULT_CHUNK, keep: bool = False, workers: int = 1) -> SimulationBatch:
    """Simulate ``paths`` paths in chunks and reduce them in path-index order."""
    spec = solved.spec
    grid = spec.grid
    if paths < 1:
        raise DataError("paths must be positive")
    N = grid.N
    nodes = sorted({N // 4, N // 2, N})
    starts = list(range(first_index, first_index + paths, chunk))

    def work(start):
        idx = np.arange(start, min(start + chunk, first_index + paths))
        dW, dWbar = noise_batch(seed, idx, grid, spec.d, spec.dbar)
        bundle = simulate(spec, solved.sigma, laws, strategy, dW, dWbar)
        bundle.seed, bundle.indices = seed, idx
        return _chunk_summary(solved, bundle, nodes), (bundle if keep else None)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(s) for s in starts]

    parts = [r[0] for r in results]
    cat = lambda i: np.concatenate([p[i] for p in parts])
    bundle = None
    if keep:
        bs = [r[1] for r in results]
        bundle = TrajectoryBundle(grid.t, *(np.concatenate([getattr(b, f) for b in bs])
                                            for f in ("x", "y", "xhat", "u", "dWhat", "dW", "dWbar")),
                                  seed=seed, indices=np.concatenate([b.indices for b in bs]))
    return SimulationBatch(
        seed=int(seed), indices=np.arange(first_index, first_index + paths), strategy=strategy.tag, grid=grid,
        J=cat(0), Jhat=cat(1), penalty=cat(2), residual=cat(3),
        xtilde={j: np.concatenate([p[4][j] for p in parts]) for j in nodes},
        xhat_T=cat(5), What_T=cat(6), ucorr=cat(7), bundle=bundle,
        meta={"rng": RNG_DESCRIPTION, "seed": int(seed), "paths": paths, "N": N, "T": grid.T,
              "strategy": strategy.tag, "form": strategy.form, "chunk": chunk},
    )


def estimate_cost(spec: ProblemSpec, batch) -> dict[str, CostEstimate]:
    """Monte Carlo means and standard errors of ``J``, ``Jhat`` and ``J - Jhat``.

    ``batch`` is a :class:`SimulationBatch` or a :class:`TrajectoryBundle`.
    """
    if isinstance(batch, TrajectoryBundle):
        J, Jhat = path_costs(spec, batch)
    else:
        J, Jhat = batch.J, batch.Jhat
    return {"J": CostEstimate.of(J, "J"), "Jhat": CostEstimate.of(Jhat, "Jhat"),
            "J - Jhat": CostEstimate.of(J - Jhat, "J - Jhat")}


def write_costs_csv(path: str | Path, batch: SimulationBatch, meta=None) -> Path:
    rows = ([str(int(i)), j, jh] for i, j, jh in zip(batch.indices, batch.J, batch.Jhat))
    return io.write_csv(path, ["path", "J", "Jhat"], rows, meta)


# --------------------------------------------------------------------------
# verification

@dataclass
class SaddleReport:
    form: str
    paths: int
    seed: int
    J_saddle: CostEstimate
    J_p1: CostEstimate
    J_p2: CostEstimate
    gap_p1: CostEstimate  # paired J(p1) - J(saddle)
    gap_p2: CostEstimate  # paired J(p2) - J(saddle)
    predicted_p1: float
    predicted_p2: float
    value: float
    sigma_bound: float = 3.0

    @property
    def z_p1(self) -> float:
        return self.gap_p1.z(self.predicted_p1)

    @property
    def z_p2(self) -> float:
        return self.gap_p2.z(self.predicted_p2)

    @property
    def checks(self) -> dict[str, bool]:
        k = self.sigma_bound
        return {
            "gap_p1_matches_prediction": abs(self.z_p1) <= k,
            "gap_p2_matches_prediction": abs(self.z_p2) <= k,
            "J(p1) <= J(saddle)": self.gap_p1.mean <= k * self.gap_p1.std_error,
            "J(saddle) <= J(p2)": -self.gap_p2.mean <= k * self.gap_p2.std_error,
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_dict(self) -> dict:
        return {
            "form": self.form, "paths": self.paths, "seed": self.seed, "value_formula": self.value,
            "J_saddle": self.J_saddle.as_dict(), "J_perturbed_p1": self.J_p1.as_dict(),
            "J_perturbed_p2": self.J_p2.as_dict(),
            "gaps": [
                {"player": 1, "measured": self.gap_p1.mean, "paired_se": self.gap_p1.std_error,
                 "predicted": self.predicted_p1, "z": self.z_p1},
                {"player": 2, "measured": self.gap_p2.mean, "paired_se": self.gap_p2.std_error,
                 "predicted": self.predicted_p2, "z": self.z_p2},
            ],
            "checks": self.checks, "passed": self.passed,
        }


def verify_saddle(solved: SolvedGame, laws: FeedbackLaws, delta1, delta2, paths: int = 10_000, seed: int = 42,
                  form: str = "I", chunk: int = DEFAULT_CHUNK, workers: int = 1,
                  saddle_batch: SimulationBatch | None = None) -> SaddleReport:
    """Three common-noise batches: saddle, Player 1 deviates by ``delta1``, Player 2 by ``delta2``.

    The deviations are additive on top of the feedback laws, so the expected
    cost change is the deterministic :func:`predicted_gap`.  A saddle batch
    already simulated with the same ``seed`` and ``paths`` can be passed in.
    """
    spec = solved.spec
    if form not in laws.families:
        raise ConditionError(f"law pair for Condition ({form}) unavailable")
    s0 = Strategy.saddle()
    s1 = Strategy.perturbed_p1(delta1, spec.grid, spec.k1, form)
    s2 = Strategy.perturbed_p2(delta2, spec.grid, spec.k2, form)
    if saddle_batch is not None and (saddle_batch.seed != seed or saddle_batch.paths != paths
                                     or saddle_batch.strategy != "saddle"):
        raise DataError("precomputed saddle batch does not match seed/paths")
    b0 = saddle_batch or run_batch(solved, laws, s0, paths, seed, chunk=chunk, workers=workers)
    b1, b2 = (run_batch(solved, laws, s, paths, seed, chunk=chunk, workers=workers) for s in (s1, s2))
    return SaddleReport(
        form=form, paths=paths, seed=int(seed),
        J_saddle=CostEstimate.of(b0.J, "J"), J_p1=CostEstimate.of(b1.J, "J"), J_p2=CostEstimate.of(b2.J, "J"),
        gap_p1=CostEstimate.of(b1.J - b0.J, "paired gap p1"), gap_p2=CostEstimate.of(b2.J - b0.J, "paired gap p2"),
        predicted_p1=predicted_gap(spec, s1), predicted_p2=predicted_gap(spec, s2),
        value=solved.summary.value - solved.summary.ring_j,
    )


def decomposition_check(spec: ProblemSpec, u, noise: NoisePath, sigma: SigmaPath | None = None) -> dict[str, float]:
    """Compare ``x^u - x^0`` and ``y^u - y^0`` with the control-driven ODEs.

    ``xi' = A xi + B u``, ``eta' = H xi`` (zero initial values).  ``max_x`` and
    ``max_y`` use the same one-step map as the simulator (so only roundoff
    remains); ``max_x_rk4`` / ``max_y_rk4`` integrate the ODEs with RK4 and
    carry the O(dt) Euler-Maruyama discretization error.
    """
    from .integrate import integrate_forward
    from .solvers import solve_sigma

    grid = spec.grid
    N, dt = grid.N, grid.dt
    sigma = sigma or solve_sigma(spec)
    strat = Strategy.open_loop(u, grid, spec.k)
    zero = Strategy.open_loop(0.0, grid, spec.k)
    bu = simulate_path(spec, sigma, None, strat, noise)
    b0 = simulate_path(spec, sigma, None, zero, noise)
    dx = bu.x[0] - b0.x[0]
    dy = bu.y[0] - b0.y[0]

    nd = spec.nodes
    up = strat.delta
    xi = np.zeros((N + 1, spec.n))
    eta = np.zeros((N + 1, spec.d))
    for j in range(N):
        xi[j + 1] = xi[j] + (nd.A[j] @ xi[j] + nd.B[j] @ up[j]) * dt
        eta[j + 1] = eta[j] + nd.H[j] @ xi[j] * dt

    n = spec.n

    def rhs(t, z):
        c = spec.coefficients(t)
        jj, w = grid.locate(t)
        ut = up[jj] if w == 0.0 else (1 - w) * up[jj] + w * up[jj + 1]
        return np.concatenate([c.A @ z[:n] + c.B @ ut, c.H @ z[:n]])

    z = integrate_forward(rhs, np.zeros(n + spec.d), grid, name="xi")
    return {
        "max_x": float(np.abs(dx - xi).max()),
        "max_y": float(np.abs(dy - eta).max()),
        "max_x_rk4": float(np.abs(dx - z[:, :n]).max()),
        "max_y_rk4": float(np.abs(dy - z[:, n:]).max()),
    }


def coincidence_check(solved: SolvedGame, laws: FeedbackLaws, paths: int = 100, seed: int = 7) -> float:
    """Largest control difference between the (phi1, psi2) and (psi1, phi2) closed loops."""
    if not {"I", "II"} <= laws.families:
        raise ConditionError("coincidence check needs Condition (I & II)")
    spec = solved.spec
    dW, dWbar = noise_batch(seed, range(paths), spec.grid, spec.d, spec.dbar)
    a = simulate(spec, solved.sigma, laws, Strategy("explicit_implicit"), dW, dWbar)
    b = simulate(spec, solved.sigma, laws, Strategy("implicit_explicit"), dW, dWbar)
    return float(np.abs(a.u - b.u).max())


def _mean_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = samples.shape[0]
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / np.sqrt(n)


def filter_statistics(solved: SolvedGame, batch: SimulationBatch, cov_rtol: float = 0.05,
                      z_bound: float = 4.0) -> dict:
    """Covariance, orthogonality and innovation checks on a simulated batch."""
    S = solved.sigma.values
    dt = solved.grid.dt
    out: dict = {"covariance": [], "paths": batch.paths}
    for j, xt in sorted(batch.xtilde.items()):
        emp = np.cov(xt, rowvar=False).reshape(S.shape[1:])
        rel = float(np.linalg.norm(emp - S[j]) / np.linalg.norm(S[j]))
        out["covariance"].append({"node": j, "t": j * dt, "relative_frobenius": rel, "ok": rel <= cov_rtol})
    xT = batch.xtilde[max(batch.xtilde)]
    prod = np.einsum("pa,pb->pab", batch.xhat_T, xT)
    m, se = _mean_se(prod)
    zo = np.where(se > 0, m / np.where(se > 0, se, 1), 0.0)
    out["orthogonality"] = {"mean": m, "se": se, "z": zo, "ok": bool(np.all(np.abs(zo) <= z_bound))}
    W = batch.What_T
    T = solved.grid.T
    centered = W - W.mean(axis=0)
    sq = np.einsum("pa,pb->pab", centered, centered)
    cm, cse = _mean_se(sq)
    target = T * np.eye(W.shape[1])
    zw = np.where(cse > 0, (cm - target) / np.where(cse > 0, cse, 1), 0.0)
    wm, wse = _mean_se(W)
    out["innovation"] = {"mean": wm, "mean_se": wse, "cov": cm, "cov_se": cse, "z": zw,
                         "ok": bool(np.all(np.abs(zw) <= z_bound) and np.all(np.abs(wm) <= z_bound * wse))}
    out["passed"] = all(c["ok"] for c in out["covariance"]) and out["orthogonality"]["ok"] and out["innovation"]["ok"]
    return out
