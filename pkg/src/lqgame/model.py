"""Problem data for partially observed LQ zero-sum games.

A :class:`ProblemSpec` bundles every coefficient of the state equation

    dx = (A x + B1 u1 + B2 u2 + b) dt + C dW + Cbar dWbar,   x(0) = a,

the observation equation

    dy = (H x + h) dt + K dW,   y(0) = 0,

and the quadratic functional with weights G, g, Q, q, S = (S1; S2),
R = [[R11, R21^T], [R21, R22]] and rho = (rho1; rho2).  Player 1 maximizes,
Player 2 minimizes.

Time-dependent coefficients live on a shared uniform :class:`TimeGrid` as
:class:`CoefficientPath` objects; constant coefficients are stored once.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import SimpleNamespace
from typing import Any, Mapping

import numpy as np

from .errors import DataError, SingularMatrixError

DEFAULT_MARGIN = 1e-8
DEFAULT_K_COND_BOUND = 1e8

#: Coefficient name -> shape template in terms of the problem dimensions.
COEFFICIENT_SHAPES: dict[str, tuple[str, ...]] = {
    "Q": ("n", "n"),
    "q": ("n",),
    "S1": ("k1", "n"),
    "S2": ("k2", "n"),
    "R11": ("k1", "k1"),
    "R21": ("k2", "k1"),
    "R22": ("k2", "k2"),
    "rho1": ("k1",),
    "rho2": ("k2",),
    "A": ("n", "n"),
    "B1": ("n", "k1"),
    "B2": ("n", "k2"),
    "b": ("n",),
    "C": ("n", "d"),
    "Cbar": ("n", "dbar"),
    "H": ("d", "n"),
    "h": ("d",),
    "K": ("d", "d"),
}
# keys that may be omitted from a JSON document
OPTIONAL_ZERO = ("q", "rho1", "rho2", "b", "h")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_j = j * dt`` on ``[0, T]`` with ``N`` steps."""

    T: float
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise DataError(f"horizon T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 2:
            raise DataError(f"number of steps N must be an integer >= 2, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @cached_property
    def t(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        return t

    def locate(self, t: float) -> tuple[int, float]:
        """Return ``(j, w)`` with ``t = t_j + w * dt``, ``0 <= w < 1``.

        Times outside ``[0, T]`` are clamped.
        """
        s = min(max(t / self.dt, 0.0), float(self.N))
        j = int(round(s))
        if abs(s - j) < 1e-9:
            return (j, 0.0) if j < self.N else (self.N, 0.0)
        j = int(np.floor(s))
        return j, s - j

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.N * factor)


@dataclass(frozen=True)
class CoefficientPath:
    """A matrix- or vector-valued coefficient sampled on a grid.

    ``values`` has shape ``(N + 1, *shape)`` for a sampled path and ``shape``
    for a constant.  Between nodes the path is linearly interpolated.
    """

    values: np.ndarray
    constant: bool = True

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @classmethod
    def const(cls, value) -> "CoefficientPath":
        return cls(np.array(value, dtype=float), True)

    @classmethod
    def sampled(cls, values) -> "CoefficientPath":
        return cls(np.array(values, dtype=float), False)

    @classmethod
    def zeros(cls, shape) -> "CoefficientPath":
        return cls(np.zeros(shape), True)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape if self.constant else self.values.shape[1:]

    @property
    def count(self) -> int | None:
        return None if self.constant else self.values.shape[0]

    def node(self, j: int) -> np.ndarray:
        return self.values if self.constant else self.values[j]

    def at(self, t: float, grid: TimeGrid) -> np.ndarray:
        if self.constant:
            return self.values
        j, w = grid.locate(t)
        if w == 0.0:
            return self.values[j]
        return (1.0 - w) * self.values[j] + w * self.values[j + 1]

    def sample(self, grid: TimeGrid) -> np.ndarray:
        if self.constant:
            return np.broadcast_to(self.values, (grid.N + 1, *self.values.shape))
        return self.values

    def resample(self, old: TimeGrid, new: TimeGrid) -> "CoefficientPath":
        if self.constant:
            return self
        flat = self.values.reshape(self.values.shape[0], -1)
        cols = [np.interp(new.t, old.t, flat[:, i]) for i in range(flat.shape[1])]
        return CoefficientPath.sampled(np.stack(cols, axis=1).reshape(new.N + 1, *self.shape))

    def to_json(self):
        key = "constant" if self.constant else "path"
        return {key: self.values.tolist()}


def _as_path(value) -> CoefficientPath:
    if isinstance(value, CoefficientPath):
        return value
    return CoefficientPath.const(value)


@dataclass(frozen=True)
class ProblemSpec:
    """All coefficients of the game, the observation and the functional."""

    n: int
    k1: int
    k2: int
    d: int
    dbar: int
    a: np.ndarray
    G: np.ndarray
    g: np.ndarray
    Q: CoefficientPath
    q: CoefficientPath
    S1: CoefficientPath
    S2: CoefficientPath
    R11: CoefficientPath
    R21: CoefficientPath
    R22: CoefficientPath
    rho1: CoefficientPath
    rho2: CoefficientPath
    A: CoefficientPath
    B1: CoefficientPath
    B2: CoefficientPath
    b: CoefficientPath
    C: CoefficientPath
    Cbar: CoefficientPath
    H: CoefficientPath
    h: CoefficientPath
    K: CoefficientPath
    grid: TimeGrid
    label: str = field(default="", compare=False)

    def __post_init__(self):
        for name in ("a", "G", "g"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        for name in COEFFICIENT_SHAPES:
            object.__setattr__(self, name, _as_path(getattr(self, name)))

    @property
    def k(self) -> int:
        return self.k1 + self.k2

    @property
    def dims(self) -> dict[str, int]:
        return {"n": self.n, "k1": self.k1, "k2": self.k2, "d": self.d, "dbar": self.dbar}

    def expected_shape(self, name: str) -> tuple[int, ...]:
        dims = self.dims
        if name in ("a", "g"):
            return (self.n,)
        if name == "G":
            return (self.n, self.n)
        return tuple(dims[s] for s in COEFFICIENT_SHAPES[name])

    def coefficients(self, t: float) -> SimpleNamespace:
        """Coefficients at time ``t`` (interpolated between nodes).

        Besides the raw coefficients the namespace carries the assembled
        blocks ``B = (B1, B2)``, ``S = (S1; S2)``, ``R`` and ``rho``.
        """
        if self.is_constant:
            return self._constant_coefficients
        g = self.grid
        c = SimpleNamespace(**{name: getattr(self, name).at(t, g) for name in COEFFICIENT_SHAPES})
        _assemble_blocks(c)
        return c

    @cached_property
    def is_constant(self) -> bool:
        return all(getattr(self, name).constant for name in COEFFICIENT_SHAPES)

    @cached_property
    def _constant_coefficients(self) -> SimpleNamespace:
        c = SimpleNamespace(**{name: getattr(self, name).values for name in COEFFICIENT_SHAPES})
        _assemble_blocks(c)
        return c

    @cached_property
    def nodes(self) -> SimpleNamespace:
        """Every coefficient sampled at all grid nodes, leading axis ``N + 1``.

        Also carries ``Kinv``; the arrays are shared and must not be mutated.
        """
        g = self.grid
        c = SimpleNamespace(**{name: getattr(self, name).sample(g) for name in COEFFICIENT_SHAPES})
        _assemble_blocks(c)
        c.Kinv = np.linalg.inv(c.K)
        return c

    def with_grid(self, N: int) -> "ProblemSpec":
        """Same problem on a grid with ``N`` steps; sampled paths are re-interpolated."""
        new = TimeGrid(self.grid.T, N)
        changes = {name: getattr(self, name).resample(self.grid, new) for name in COEFFICIENT_SHAPES}
        return dataclasses.replace(self, grid=new, **changes)

    def replace(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "dims": self.dims,
            "grid": {"T": self.grid.T, "N": self.grid.N},
            "initial_state": self.a.tolist(),
            "G": {"constant": self.G.tolist()},
            "g": {"constant": self.g.tolist()},
        }
        for name in COEFFICIENT_SHAPES:
            doc[name] = getattr(self, name).to_json()
        if self.label:
            doc["label"] = self.label
        return doc


def _assemble_blocks(c: SimpleNamespace) -> None:
    c.B = np.concatenate([c.B1, c.B2], axis=-1)
    c.S = np.concatenate([c.S1, c.S2], axis=-2)
    top = np.concatenate([c.R11, np.swapaxes(c.R21, -1, -2)], axis=-1)
    bottom = np.concatenate([c.R21, c.R22], axis=-1)
    c.R = np.concatenate([top, bottom], axis=-2)
    c.rho = np.concatenate([c.rho1, c.rho2], axis=-1)


# --------------------------------------------------------------------------
# JSON ingestion

def _coefficient_from_json(name: str, value, grid: TimeGrid) -> CoefficientPath:
    if isinstance(value, Mapping):
        if set(value) == {"constant"}:
            return CoefficientPath.const(value["constant"])
        if set(value) == {"path"}:
            path = CoefficientPath.sampled(value["path"])
            if path.values.shape[0] != grid.N + 1:
                raise DataError(
                    f"coefficient {name}: path has {path.values.shape[0]} entries, expected N+1 = {grid.N + 1}"
                )
            return path
        raise DataError(f"coefficient {name}: expected exactly one of 'constant' or 'path', got {sorted(value)}")
    return CoefficientPath.const(value)


def spec_from_dict(doc: Mapping[str, Any]) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from the JSON document layout.

    Top-level keys: ``dims``, ``grid``, ``initial_state``, ``G``, ``g`` and one
    key per coefficient, each ``{"constant": ...}`` or ``{"path": [...]}``.
    Missing ``q``, ``rho1``, ``rho2``, ``b``, ``h`` and ``g`` default to zero.
    """
    try:
        dims = {k: int(doc["dims"][k]) for k in ("n", "k1", "k2", "d", "dbar")}
        grid = TimeGrid(float(doc["grid"]["T"]), int(doc["grid"]["N"]))
        a = np.asarray(doc["initial_state"], dtype=float)
    except KeyError as exc:
        raise DataError(f"problem document is missing required key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise DataError(f"malformed problem document header: {exc}") from None

    known = {"dims", "grid", "initial_state", "G", "g", "label", *COEFFICIENT_SHAPES}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise DataError(f"unknown keys in problem document: {unknown}")

    shapes = {name: tuple(dims[s] for s in tmpl) for name, tmpl in COEFFICIENT_SHAPES.items()}
    coeffs = {}
    for name in COEFFICIENT_SHAPES:
        if name in doc:
            coeffs[name] = _coefficient_from_json(name, doc[name], grid)
        elif name in OPTIONAL_ZERO:
            coeffs[name] = CoefficientPath.zeros(shapes[name])
        else:
            raise DataError(f"problem document is missing coefficient {name!r}")

    def constant(name, default_shape, required):
        if name not in doc:
            if required:
                raise DataError(f"problem document is missing {name!r}")
            return np.zeros(default_shape)
        value = doc[name]
        if isinstance(value, Mapping):
            if set(value) != {"constant"}:
                raise DataError(f"{name} must be a constant")
            value = value["constant"]
        return np.asarray(value, dtype=float)

    G = constant("G", (dims["n"], dims["n"]), True)
    g = constant("g", (dims["n"],), False)
    return ProblemSpec(**dims, a=a, G=G, g=g, **coeffs, grid=grid, label=str(doc.get("label", "")))


def load_spec(path: str | Path) -> ProblemSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from None
    return spec_from_dict(doc)


# --------------------------------------------------------------------------
# validation and structural conditions

@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _asym(M: np.ndarray) -> np.ndarray:
    """Per-node asymmetry relative to size, shape ``(...)``."""
    diff = np.abs(M - np.swapaxes(M, -1, -2)).max(axis=(-1, -2))
    scale = 1.0 + np.abs(M).max(axis=(-1, -2))
    return diff / scale


def validate_spec(spec: ProblemSpec, k_cond_bound: float = DEFAULT_K_COND_BOUND) -> ValidationResult:
    """Check shapes, path lengths, finiteness, symmetry and invertibility of K.

    Returns every violation found; never raises for bad data.
    """
    v: list[str] = []
    N = spec.grid.N
    for name in ("a", "G", "g"):
        arr = getattr(spec, name)
        if arr.shape != spec.expected_shape(name):
            v.append(f"{name} has shape {arr.shape}, expected {spec.expected_shape(name)}")
        elif not np.all(np.isfinite(arr)):
            v.append(f"{name} has non-finite entries")
    shapes_ok = not v
    for name in COEFFICIENT_SHAPES:
        path: CoefficientPath = getattr(spec, name)
        want = spec.expected_shape(name)
        if path.shape != want:
            v.append(f"{name} has shape {path.shape}, expected {want}")
            shapes_ok = False
            continue
        if not path.constant and path.count != N + 1:
            v.append(f"{name} has {path.count} samples, expected N+1 = {N + 1}")
            shapes_ok = False
            continue
        bad = np.flatnonzero(~np.isfinite(path.values.reshape(path.count or 1, -1)).all(axis=1))
        if bad.size:
            v.append(f"{name} has non-finite entries at node {int(bad[0])}")
            shapes_ok = False
    if not shapes_ok:
        return ValidationResult(tuple(v))

    if _asym(spec.G) > 1e-12:
        v.append("G not symmetric")
    for name in ("Q", "R11", "R22"):
        path = getattr(spec, name)
        asym = np.atleast_1d(_asym(path.values))
        bad = np.flatnonzero(asym > 1e-12)
        if bad.size:
            v.append(f"{name} not symmetric at node {int(bad[0])}")

    K = spec.K.values if not spec.K.constant else spec.K.values[None]
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(K)
    bad = np.flatnonzero(~(np.isfinite(cond) & (cond < k_cond_bound)))
    if bad.size:
        j = int(bad[0])
        if not np.isfinite(cond[j]) or np.linalg.matrix_rank(K[j]) < K.shape[-1]:
            v.append(f"K not invertible at node {j}")
        else:
            v.append(f"K condition number {cond[j]:.3g} exceeds bound {k_cond_bound:.3g} at node {j}")
    return ValidationResult(tuple(v))


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of the uniform-definiteness checks on the control weight R.

    ``margins`` maps each block name (``"R11"``, ``"R22"``, ``"schur_I"`` for
    ``R22 - R21 R11^-1 R21^T`` and ``"schur_II"`` for ``R11 - R21^T R22^-1 R21``)
    to an ``(N + 1, 2)`` array of the smallest and largest eigenvalue per node.
    Nodes where a Schur complement could not be formed hold NaN.
    """

    condI: bool
    condII: bool
    condIandII: bool
    delta: float
    margins: dict[str, np.ndarray]
    failing_nodes: dict[str, tuple[int, ...]]

    def holds(self, which: str) -> bool:
        return {"I": self.condI, "II": self.condII, "I&II": self.condIandII}[which]

    def describe(self, which: str) -> str:
        return "; ".join(f"{k} fails at nodes {v[:5]}" for k, v in self.failing_nodes.items() if v and k in _PARTS[which]) or "ok"


_PARTS = {"I": ("R11 <= -delta", "schur_I >= delta"),
          "II": ("R22 >= delta", "schur_II <= -delta"),
          "I&II": ("R11 <= -delta", "R22 >= delta")}


def _eig_bounds(M: np.ndarray) -> np.ndarray:
    out = np.full(M.shape[:1] + (2,), np.nan)
    finite = np.all(np.isfinite(M), axis=(-1, -2))
    if finite.any():
        ev = np.linalg.eigvalsh(0.5 * (M[finite] + np.swapaxes(M[finite], -1, -2)))
        out[finite, 0] = ev[:, 0]
        out[finite, 1] = ev[:, -1]
    return out


def _safe_inv(M: np.ndarray) -> np.ndarray:
    out = np.full_like(M, np.nan)
    for j in range(M.shape[0]):
        try:
            inv = np.linalg.inv(M[j])
        except np.linalg.LinAlgError:
            continue
        if np.abs(M[j] @ inv - np.eye(M.shape[-1])).max() <= 1e-9:
            out[j] = inv
    return out


def check_conditions(spec: ProblemSpec, delta: float = DEFAULT_MARGIN) -> ConditionReport:
    """Evaluate Conditions (I), (II) and (I & II) node-wise with margin ``delta``.

    (I):     R11 <= -delta I  and  R22 - R21 R11^-1 R21^T >= delta I
    (II):    R22 >= delta I   and  R11 - R21^T R22^-1 R21 <= -delta I
    (I&II):  R11 <= -delta I  and  R22 >= delta I
    """
    if not delta > 0:
        raise DataError("definiteness margin must be positive")
    nd = spec.nodes
    R11, R21, R22 = (np.array(x) for x in (nd.R11, nd.R21, nd.R22))
    R21T = np.swapaxes(R21, -1, -2)
    schur_I = R22 - R21 @ _safe_inv(R11) @ R21T
    schur_II = R11 - R21T @ _safe_inv(R22) @ R21
    margins = {
        "R11": _eig_bounds(R11),
        "R22": _eig_bounds(R22),
        "schur_I": _eig_bounds(schur_I),
        "schur_II": _eig_bounds(schur_II),
    }
    with np.errstate(invalid="ignore"):
        tests = {
            "R11 <= -delta": margins["R11"][:, 1] <= -delta,
            "R22 >= delta": margins["R22"][:, 0] >= delta,
            "schur_I >= delta": margins["schur_I"][:, 0] >= delta,
            "schur_II <= -delta": margins["schur_II"][:, 1] <= -delta,
        }
    failing = {k: tuple(int(j) for j in np.flatnonzero(~ok)) for k, ok in tests.items()}
    condI = bool(tests["R11 <= -delta"].all() and tests["schur_I >= delta"].all())
    condII = bool(tests["R22 >= delta"].all() and tests["schur_II <= -delta"].all())
    condIandII = bool(tests["R11 <= -delta"].all() and tests["R22 >= delta"].all())
    return ConditionReport(condI, condII, condIandII, delta, margins, failing)


def assemble_R(spec: ProblemSpec, j: int, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Return ``R(t_j)`` and its inverse.

    Raises :class:`SingularMatrixError` when ``|R R^-1 - I| > tol``.
    """
    R = np.array(spec.nodes.R[j])
    R = 0.5 * (R + R.T)
    try:
        Rinv = np.linalg.inv(R)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(f"R is singular at node {j}") from None
    if np.abs(R @ Rinv - np.eye(spec.k)).max() > tol:
        raise SingularMatrixError(f"R is numerically singular at node {j}")
    return R, Rinv
