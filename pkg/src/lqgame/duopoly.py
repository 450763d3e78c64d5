"""Two-firm cash-balance game with stock-price observations.

Firm ``i``'s cash balance earns interest ``a_rate`` and is driven by both
policymakers' controls; the observation is the pair of log stock prices.
Player 1 maximizes

    1/2 E{ M2 |x2(T) - m2|^2 - M1 |x1(T) - m1|^2
           + int R2 |u2 - r2|^2 - R1 |u1 - r1|^2 dt }

and Player 2 minimizes it.  Expanding the squares gives the generic
quadratic functional plus the constant :func:`compute_ring_j`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import io
from .errors import DataError
from .integrate import trapezoid
from .model import CoefficientPath, ProblemSpec, TimeGrid
from .sim import TrajectoryBundle
from .solvers import SolvedGame

DEFAULT_STEPS = 1000
SCALAR_PATHS = ("a_rate", "R1", "R2", "r1", "r2")


@dataclass(frozen=True)
class DuopolyParams:
    """Model inputs.  Entries of ``SCALAR_PATHS`` are a float or ``N + 1`` node values."""

    T: float = 1.0
    N: int = DEFAULT_STEPS
    M1: float = 1.0
    M2: float = 1.0
    m1: float = 2.0
    m2: float = 2.0
    a_rate: Any = 0.03
    R1: Any = 1.0
    R2: Any = 1.0
    r1: Any = 1.0
    r2: Any = 1.0
    B: Any = ((1.0, 0.5), (0.5, 1.0))
    b: Any = (0.5, 0.3)
    C: Any = ((1.0, 0.5), (0.5, 1.0))
    Cbar: Any = (0.5, 0.3)
    f: Any = (1.0, 1.0)
    h: Any = (0.0, 0.0)
    K: Any = ((1.0, 0.5), (0.5, 1.0))
    x0: Any = (1.0, 1.0)
    label: str = field(default="duopoly", compare=False)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "DuopolyParams":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise DataError(f"unknown duopoly parameters: {unknown}")
        return cls(**dict(doc))

    @classmethod
    def load(cls, path: str | Path) -> "DuopolyParams":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)

    @classmethod
    def default(cls) -> "DuopolyParams":
        """The parameter file shipped with the package."""
        text = resources.files("lqgame").joinpath("data/duopoly.json").read_text()
        return cls.from_dict(json.loads(text))

    def with_steps(self, N: int) -> "DuopolyParams":
        if any(np.ndim(getattr(self, s)) for s in SCALAR_PATHS):
            raise DataError("cannot regrid duopoly parameters given as node paths")
        return DuopolyParams(**{**asdict(self), "N": int(N)})

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(float(self.T), int(self.N))

    def scalar_path(self, name: str) -> np.ndarray:
        """``name`` sampled at every node, shape ``(N + 1,)``."""
        v = np.asarray(getattr(self, name), dtype=float)
        N = int(self.N)
        if v.ndim == 0:
            return np.full(N + 1, float(v))
        if v.shape != (N + 1,):
            raise DataError(f"{name} must be a scalar or have {N + 1} node values, got shape {v.shape}")
        return v

    def to_dict(self) -> dict:
        return {k: (np.asarray(v).tolist() if not isinstance(v, str) else v) for k, v in asdict(self).items()}


def _check(params: DuopolyParams) -> None:
    problems = []
    if not params.T > 0:
        problems.append("T must be positive")
    for name in ("M1", "M2"):
        if not float(getattr(params, name)) >= 0:
            problems.append(f"{name} must be nonnegative")
    for name in ("R1", "R2"):
        v = params.scalar_path(name)
        if not np.all(v > 0):
            problems.append(f"{name} must be positive at every node (min {v.min():g})")
    for name, shape in (("B", (2, 2)), ("C", (2, 2)), ("K", (2, 2)), ("b", (2,)), ("Cbar", (2,)),
                        ("f", (2,)), ("h", (2,)), ("x0", (2,))):
        if np.shape(getattr(params, name)) != shape:
            problems.append(f"{name} must have shape {shape}, got {np.shape(getattr(params, name))}")
    if problems:
        raise DataError("invalid duopoly parameters: " + "; ".join(problems))


def _coef(values: np.ndarray) -> CoefficientPath:
    """Constant coefficient when every node agrees, sampled otherwise."""
    if np.all(values == values[0]):
        return CoefficientPath.const(values[0])
    return CoefficientPath.sampled(values)


def build_duopoly(params: DuopolyParams) -> ProblemSpec:
    _check(params)
    grid = params.grid
    R1, R2, r1, r2 = (params.scalar_path(s) for s in ("R1", "R2", "r1", "r2"))
    arate = params.scalar_path("a_rate")
    B = np.asarray(params.B, dtype=float)
    M1, M2, m1, m2 = (float(getattr(params, s)) for s in ("M1", "M2", "m1", "m2"))
    n = 2
    eye = np.eye(n)
    return ProblemSpec(
        n=n, k1=1, k2=1, d=2, dbar=1,
        a=np.asarray(params.x0, dtype=float),
        G=np.diag([-M1, M2]),
        g=np.array([M1 * m1, -M2 * m2]),
        Q=CoefficientPath.zeros((n, n)),
        q=CoefficientPath.zeros((n,)),
        S1=CoefficientPath.zeros((1, n)),
        S2=CoefficientPath.zeros((1, n)),
        R11=_coef(-R1[:, None, None]),
        R21=CoefficientPath.zeros((1, 1)),
        R22=_coef(R2[:, None, None]),
        rho1=_coef((R1 * r1)[:, None]),
        rho2=_coef((-R2 * r2)[:, None]),
        A=_coef(arate[:, None, None] * eye),
        B1=CoefficientPath.const(B[:, :1]),
        B2=CoefficientPath.const(B[:, 1:]),
        b=CoefficientPath.const(params.b),
        C=CoefficientPath.const(params.C),
        Cbar=CoefficientPath.const(np.asarray(params.Cbar, dtype=float).reshape(n, 1)),
        H=CoefficientPath.const(np.diag(np.asarray(params.f, dtype=float))),
        h=CoefficientPath.const(params.h),
        K=CoefficientPath.const(params.K),
        grid=grid,
        label=params.label,
    )


def duopoly_spec(N: int = DEFAULT_STEPS) -> ProblemSpec:
    """Spec built from the shipped defaults on an ``N``-step grid."""
    return build_duopoly(DuopolyParams.default().with_steps(N))


def compute_ring_j(params: DuopolyParams) -> float:
    """Constant dropped when the squared deviations are expanded."""
    M1, M2, m1, m2 = (float(getattr(params, s)) for s in ("M1", "M2", "m1", "m2"))
    R1, R2, r1, r2 = (params.scalar_path(s) for s in ("R1", "R2", "r1", "r2"))
    running = trapezoid(R2 * r2**2 - R1 * r1**2, params.grid.dt)
    return float(0.5 * (M2 * m2**2 - M1 * m1**2 + running))


def duopoly_cost(params: DuopolyParams, bundle: TrajectoryBundle) -> np.ndarray:
    """Per-path value of the original (unexpanded) functional on the true state."""
    M1, M2, m1, m2 = (float(getattr(params, s)) for s in ("M1", "M2", "m1", "m2"))
    R1, R2, r1, r2 = (params.scalar_path(s) for s in ("R1", "R2", "r1", "r2"))
    xT = bundle.x[:, -1]
    u1, u2 = bundle.u[..., 0], bundle.u[..., 1]
    terminal = M2 * (xT[:, 1] - m2) ** 2 - M1 * (xT[:, 0] - m1) ** 2
    running = R2 * (u2 - r2) ** 2 - R1 * (u1 - r1) ** 2
    return 0.5 * (terminal + trapezoid(running, params.grid.dt, axis=1))


def explicit_closed_loop(params: DuopolyParams, solved: SolvedGame) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop filter drift written out for this model: ``(A_cl (N+1,2,2), b_cl (N+1,2))``."""
    B = np.asarray(params.B, dtype=float)
    R1, R2, r1, r2 = (params.scalar_path(s) for s in ("R1", "R2", "r1", "r2"))
    B1, B2 = B[:, 0], B[:, 1]
    W = np.outer(B1, B1)[None] / R1[:, None, None] - np.outer(B2, B2)[None] / R2[:, None, None]
    A_cl = params.scalar_path("a_rate")[:, None, None] * np.eye(2) + W @ solved.P.values
    b_cl = (np.einsum("jab,jb->ja", W, solved.p.values) + r1[:, None] * B1 + r2[:, None] * B2
            + np.asarray(params.b, dtype=float))
    return A_cl, b_cl


def explicit_laws(params: DuopolyParams, solved: SolvedGame, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The saddle laws in closed form at every node for states ``x`` ``(N+1, 2)``."""
    B = np.asarray(params.B, dtype=float)
    R1, R2, r1, r2 = (params.scalar_path(s) for s in ("R1", "R2", "r1", "r2"))
    z = np.einsum("jab,jb->ja", solved.P.values, x) + solved.p.values
    return z @ B[:, 0] / R1 + r1, -(z @ B[:, 1]) / R2 + r2


FIGURE_FILES = ("fig1_P.csv", "fig2_p.csv", "fig3_Sigma.csv", "fig4_xhat.csv", "fig5_controls.csv")


def emit_figures(solved: SolvedGame, bundle: TrajectoryBundle, out_dir: str | Path, path: int = 0,
                 meta: Mapping[str, Any] | None = None) -> list[Path]:
    """Write the five figure tables; the trajectory tables use path ``path`` of ``bundle``."""
    out = Path(out_dir)
    t = solved.grid.t
    meta = dict(meta or {})
    if bundle.seed is not None:
        meta.setdefault("seed", bundle.seed)
    if bundle.indices is not None:
        meta["path_index"] = int(bundle.indices[path])
    return [
        io.write_path_csv(out / FIGURE_FILES[0], t, {"P": solved.P.values}, meta),
        io.write_path_csv(out / FIGURE_FILES[1], t, {"p": solved.p.values}, meta),
        io.write_path_csv(out / FIGURE_FILES[2], t, {"Sigma": solved.sigma.values}, meta),
        io.write_csv(out / FIGURE_FILES[3], ["t", "xhat_1", "xhat_2"], np.column_stack([t, bundle.xhat[path]]), meta),
        io.write_csv(out / FIGURE_FILES[4], ["t", "u1", "u2"], np.column_stack([t, bundle.u[path]]), meta),
    ]
