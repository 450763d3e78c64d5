"""Saddle-point feedback laws from the solved Riccati data.

With ``Theta = (Theta1; Theta2)`` and ``nu = (nu1; nu2)`` the four laws are

    phi1(t, x, u2) = -R11^-1 [R21^T u2 + Theta1 x + nu1]
    psi2(t, x)     = -S_I^-1 {Theta2 x + nu2 - R21 R11^-1 (Theta1 x + nu1)}
    psi1(t, x)     = -S_II^-1 {Theta1 x + nu1 - R21^T R22^-1 (Theta2 x + nu2)}
    phi2(t, x, u1) = -R22^-1 [R21 u1 + Theta2 x + nu2]

where ``S_I = R22 - R21 R11^-1 R21^T`` and ``S_II = R11 - R21^T R22^-1 R21``.
``(phi1, psi2)`` needs Condition (I), ``(psi1, phi2)`` Condition (II).  Every
gain is precomputed per node; evaluation between nodes interpolates gains
linearly and times outside ``[0, T]`` are clamped.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import ConditionError, SingularMatrixError
from .model import DEFAULT_MARGIN, ConditionReport, ProblemSpec, TimeGrid, check_conditions
from .solvers import NuPath, ThetaPath


def _T(M):
    return np.swapaxes(M, -1, -2)


def inv_checked(M: np.ndarray, what: str, tol: float = 1e-9) -> np.ndarray:
    """Batched inverse with the residual check ``|M M^-1 - I| <= tol``."""
    M = np.asarray(M)
    try:
        inv = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        # numpy fails the whole stack; redo node by node to locate the culprit
        flat = M.reshape(-1, *M.shape[-2:])
        inv = np.full(flat.shape, np.nan)
        for j, Mj in enumerate(flat):
            try:
                inv[j] = np.linalg.inv(Mj)
            except np.linalg.LinAlgError:
                pass
        inv = inv.reshape(M.shape)
    eye = np.eye(M.shape[-1])
    res = np.abs(M @ inv - eye).max(axis=(-1, -2))
    bad = np.flatnonzero(~(res <= tol))
    if bad.size:
        raise SingularMatrixError(f"{what} is numerically singular at node {int(bad[0])}")
    return inv


@dataclass(frozen=True)
class Diagonalization:
    """``E R E^T = Lambda`` with ``E`` block unit triangular, ``Lambda`` block diagonal."""

    which: str  # "E1L1" or "E2L2"
    E: np.ndarray
    Lam: np.ndarray
    residual: float


def _require(report: ConditionReport, which: str) -> None:
    if not report.holds(which):
        raise ConditionError(f"Condition ({which}) does not hold (delta = {report.delta:g}): {report.describe(which)}")


def diagonalize(spec: ProblemSpec, which: str = "E1L1", delta: float = DEFAULT_MARGIN,
                report: ConditionReport | None = None) -> Diagonalization:
    """Factor ``R = E^-1 Lambda (E^T)^-1`` node-wise.

    ``E1L1`` eliminates the coupling through ``R11`` (Condition (I));
    ``E2L2`` through ``R22`` (Condition (II)).
    """
    if which not in ("E1L1", "E2L2"):
        raise ValueError(f"unknown factorization {which!r}")
    report = report or check_conditions(spec, delta)
    _require(report, "I" if which == "E1L1" else "II")
    nd = spec.nodes
    N1 = spec.grid.N + 1
    k1, k2 = spec.k1, spec.k2
    R11, R21, R22 = nd.R11, nd.R21, nd.R22
    E = np.broadcast_to(np.eye(spec.k), (N1, spec.k, spec.k)).copy()
    Lam = np.zeros((N1, spec.k, spec.k))
    if which == "E1L1":
        L = R21 @ inv_checked(R11, "R11")
        E[:, k1:, :k1] = -L
        Lam[:, :k1, :k1] = R11
        Lam[:, k1:, k1:] = R22 - L @ _T(R21)
    else:
        U = _T(R21) @ inv_checked(R22, "R22")
        E[:, :k1, k1:] = -U
        Lam[:, :k1, :k1] = R11 - U @ R21
        Lam[:, k1:, k1:] = R22
    residual = float(np.abs(E @ nd.R @ _T(E) - Lam).max())
    return Diagonalization(which, E, Lam, residual)


class FeedbackLaws:
    """Node-sampled gains for phi1, psi2, psi1, phi2 and the combined law.

    Each law is affine: ``law(x, v) = X x + U v + c``.  Methods ending in
    ``_node`` take a node index and accept ``x`` of shape ``(n,)`` or
    ``(paths, n)``; the plain methods take a time and interpolate.
    """

    def __init__(self, grid: TimeGrid, k1: int, k2: int, families: frozenset, gains: dict):
        self.grid = grid
        self.k1, self.k2 = k1, k2
        self.families = families
        self._g = gains

    # -- combined law u* = -R^-1 (Theta x + nu)
    @property
    def ustar_gain(self) -> np.ndarray:
        """``R^-1 Theta`` per node, so ``u* = -(gain x) - R^-1 nu``."""
        return -self._g["ustar_x"]

    def gain(self, name: str) -> np.ndarray:
        self._need(name)
        return self._g[name]

    def _need(self, name: str):
        if self._g.get(name) is None:
            fam = "I" if name.startswith(("phi1", "psi2")) else "II"
            raise ConditionError(f"law {name.split('_')[0]} unavailable: Condition ({fam}) was not established")

    def _at(self, name: str, t: float) -> np.ndarray:
        self._need(name)
        arr = self._g[name]
        j, w = self.grid.locate(t)
        return arr[j] if w == 0.0 else (1 - w) * arr[j] + w * arr[j + 1]

    @staticmethod
    def _apply(X, x, c, U=None, v=None):
        out = np.asarray(x) @ X.T + c
        if U is not None:
            out = out + np.asarray(v) @ U.T
        return out

    def phi1_node(self, j, x, u2):
        self._need("phi1_x")
        g = self._g
        return self._apply(g["phi1_x"][j], x, g["phi1_c"][j], g["phi1_u"][j], u2)

    def psi2_node(self, j, x):
        self._need("psi2_x")
        return self._apply(self._g["psi2_x"][j], x, self._g["psi2_c"][j])

    def psi1_node(self, j, x):
        self._need("psi1_x")
        return self._apply(self._g["psi1_x"][j], x, self._g["psi1_c"][j])

    def phi2_node(self, j, x, u1):
        self._need("phi2_x")
        g = self._g
        return self._apply(g["phi2_x"][j], x, g["phi2_c"][j], g["phi2_u"][j], u1)

    def ustar_node(self, j, x):
        return self._apply(self._g["ustar_x"][j], x, self._g["ustar_c"][j])

    def phi1(self, t, x, u2):
        return self._apply(self._at("phi1_x", t), x, self._at("phi1_c", t), self._at("phi1_u", t), u2)

    def psi2(self, t, x):
        return self._apply(self._at("psi2_x", t), x, self._at("psi2_c", t))

    def psi1(self, t, x):
        return self._apply(self._at("psi1_x", t), x, self._at("psi1_c", t))

    def phi2(self, t, x, u1):
        return self._apply(self._at("phi2_x", t), x, self._at("phi2_c", t), self._at("phi2_u", t), u1)

    def ustar(self, t, x):
        return self._apply(self._at("ustar_x", t), x, self._at("ustar_c", t))


def build_laws(spec: ProblemSpec, theta: ThetaPath, nu: NuPath, families=None,
               delta: float = DEFAULT_MARGIN, report: ConditionReport | None = None) -> FeedbackLaws:
    """Precompute the gains of every requested law family.

    ``families`` is a subset of ``{"I", "II"}``; by default every family whose
    condition holds is built.  A requested family whose condition fails, or
    no family at all, raises :class:`ConditionError`.
    """
    report = report or check_conditions(spec, delta)
    if families is None:
        families = {f for f in ("I", "II") if report.holds(f)}
        if not families:
            raise ConditionError("neither Condition (I) nor Condition (II) holds: "
                                 f"{report.describe('I')}; {report.describe('II')}")
    families = frozenset(families)
    for fam in families:
        _require(report, fam)

    nd = spec.nodes
    R11, R21, R22 = nd.R11, nd.R21, nd.R22
    th1, th2 = theta.theta1, theta.theta2
    nu1, nu2 = nu.nu1[..., None], nu.nu2[..., None]
    g: dict = {}
    if "I" in families:
        R11i = inv_checked(R11, "R11")
        L = R21 @ R11i
        SIi = inv_checked(R22 - L @ _T(R21), "R22 - R21 R11^-1 R21^T")
        g["phi1_x"] = -R11i @ th1
        g["phi1_u"] = -R11i @ _T(R21)
        g["phi1_c"] = -(R11i @ nu1)[..., 0]
        g["psi2_x"] = -SIi @ (th2 - L @ th1)
        g["psi2_c"] = -(SIi @ (nu2 - L @ nu1))[..., 0]
    if "II" in families:
        R22i = inv_checked(R22, "R22")
        U = _T(R21) @ R22i
        SIIi = inv_checked(R11 - U @ R21, "R11 - R21^T R22^-1 R21")
        g["psi1_x"] = -SIIi @ (th1 - U @ th2)
        g["psi1_c"] = -(SIIi @ (nu1 - U @ nu2))[..., 0]
        g["phi2_x"] = -R22i @ th2
        g["phi2_u"] = -R22i @ R21
        g["phi2_c"] = -(R22i @ nu2)[..., 0]
    Ri = inv_checked(nd.R, "R")
    g["ustar_x"] = -Ri @ theta.theta
    g["ustar_c"] = -(Ri @ nu.nu[..., None])[..., 0]
    g["nu"] = nu.nu
    return FeedbackLaws(spec.grid, spec.k1, spec.k2, families, g)


@dataclass(frozen=True)
class ClosedLoopCoefficients:
    """Drift of the filter under the saddle laws: ``dxhat = (A_cl xhat + b_cl) dt + D dWhat``."""

    A_cl: np.ndarray  # (N+1, n, n)
    b_cl: np.ndarray  # (N+1, n)
    form: str
    expanded_discrepancy: float


def closed_loop(spec: ProblemSpec, theta: ThetaPath, nu: NuPath, form: str | None = None,
                delta: float = DEFAULT_MARGIN, report: ConditionReport | None = None) -> ClosedLoopCoefficients:
    """Closed-loop drift ``A - B R^-1 Theta`` and ``b - B R^-1 nu``.

    Also evaluates the nested two-player expression for the chosen law pair
    (``form`` "I" for (phi1, psi2), "II" for (psi1, phi2)) and records the
    largest discrepancy between the two.
    """
    report = report or check_conditions(spec, delta)
    if form is None:
        form = "I" if report.condI else "II"
    _require(report, form)
    nd = spec.nodes
    A, b, B, B1, B2 = nd.A, nd.b, nd.B, nd.B1, nd.B2
    R11, R21, R22 = nd.R11, nd.R21, nd.R22
    th1, th2 = theta.theta1, theta.theta2
    nu1, nu2 = nu.nu1[..., None], nu.nu2[..., None]

    Ri = inv_checked(nd.R, "R")
    A_cl = A - B @ Ri @ theta.theta
    b_cl = b - (B @ Ri @ nu.nu[..., None])[..., 0]

    if form == "I":
        R11i = inv_checked(R11, "R11")
        L = R21 @ R11i
        SIi = inv_checked(R22 - L @ _T(R21), "R22 - R21 R11^-1 R21^T")
        W = B2 - B1 @ R11i @ _T(R21)
        A_x = (A - B1 @ R11i @ th1) - W @ SIi @ (th2 - L @ th1)
        b_x = (b[..., None] - B1 @ R11i @ nu1) - W @ SIi @ (nu2 - L @ nu1)
    else:
        R22i = inv_checked(R22, "R22")
        U = _T(R21) @ R22i
        SIIi = inv_checked(R11 - U @ R21, "R11 - R21^T R22^-1 R21")
        W = B1 - B2 @ R22i @ R21
        A_x = (A - B2 @ R22i @ th2) - W @ SIIi @ (th1 - U @ th2)
        b_x = (b[..., None] - B2 @ R22i @ nu2) - W @ SIIi @ (nu1 - U @ nu2)
    disc = max(float(np.abs(A_cl - A_x).max()), float(np.abs(b_cl - b_x[..., 0]).max()))
    return ClosedLoopCoefficients(A_cl, b_cl, form, disc)


def write_gains_csv(path: str | Path, laws: FeedbackLaws, meta=None) -> Path:
    """Per-node combined gain ``R^-1 Theta`` (columns ``K..``) and ``nu``."""
    return io.write_path_csv(path, laws.grid.t, {"K": laws.ustar_gain, "nu": laws.gain("nu")}, meta)
