"""Deterministic equations of the game: filtering Riccati, game Riccati, the
adjoint offset ODE, and the scalar value components.

    Sigma' = F Sigma + Sigma F^T - Sigma H^T (K K^T)^-1 H Sigma + Cbar Cbar^T,
             F = A - C K^-1 H,  Sigma(0) = 0
    -P'    = P A + A^T P + Q - Theta^T R^-1 Theta,   Theta = B^T P + S,  P(T) = G
    -p'    = A^T p + P b + q - Theta^T R^-1 nu,      nu = B^T p + rho,   p(T) = g

All three are integrated with RK4 on the problem grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import BlowUpError, DataError
from .integrate import integrate_backward, integrate_forward, symmetrize, trapezoid
from .model import ProblemSpec, TimeGrid

DEFAULT_BLOWUP = 1e8


@dataclass(frozen=True)
class SigmaPath:
    """Filtering error covariance and filter gain ``D = C + Sigma (K^-1 H)^T``."""

    grid: TimeGrid
    values: np.ndarray  # (N+1, n, n)
    D: np.ndarray  # (N+1, n, d)


@dataclass(frozen=True)
class PPath:
    grid: TimeGrid
    values: np.ndarray  # (N+1, n, n)
    dP: np.ndarray  # time derivative at the nodes

    def at(self, t: float) -> np.ndarray:
        """Cubic Hermite interpolant; exact at nodes."""
        j, w = self.grid.locate(t)
        if w == 0.0:
            return self.values[j]
        h = self.grid.dt
        w2, w3 = w * w, w * w * w
        return ((2 * w3 - 3 * w2 + 1) * self.values[j] + (w3 - 2 * w2 + w) * h * self.dP[j]
                + (-2 * w3 + 3 * w2) * self.values[j + 1] + (w3 - w2) * h * self.dP[j + 1])


@dataclass(frozen=True)
class ThetaPath:
    theta1: np.ndarray  # (N+1, k1, n)
    theta2: np.ndarray  # (N+1, k2, n)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.theta1, self.theta2], axis=1)


@dataclass(frozen=True)
class pPath:
    grid: TimeGrid
    values: np.ndarray  # (N+1, n)


@dataclass(frozen=True)
class NuPath:
    nu1: np.ndarray  # (N+1, k1)
    nu2: np.ndarray  # (N+1, k2)

    @property
    def nu(self) -> np.ndarray:
        return np.concatenate([self.nu1, self.nu2], axis=1)


@dataclass(frozen=True)
class ScalarSummary:
    gamma: float
    jtilde: float
    ring_j: float = 0.0

    @property
    def value(self) -> float:
        """Game value ``Gamma / 2 + J~`` (plus any constant offset)."""
        return 0.5 * self.gamma + self.jtilde + self.ring_j

    def as_dict(self) -> dict:
        return {"Gamma": self.gamma, "Jtilde": self.jtilde, "ring_J": self.ring_j, "value": self.value}


@dataclass(frozen=True)
class SolvedGame:
    spec: ProblemSpec
    sigma: SigmaPath
    P: PPath
    theta: ThetaPath
    p: pPath
    nu: NuPath
    summary: ScalarSummary

    @property
    def grid(self) -> TimeGrid:
        return self.spec.grid


def solve_sigma(spec: ProblemSpec, blowup: float = DEFAULT_BLOWUP) -> SigmaPath:
    """Forward filtering Riccati from ``Sigma(0) = 0``."""
    n = spec.n

    def rhs(t, S):
        c = spec.coefficients(t)
        KinvH = np.linalg.solve(c.K, c.H)
        F = c.A - c.C @ KinvH
        return F @ S + S @ F.T - S @ (KinvH.T @ KinvH) @ S + c.Cbar @ c.Cbar.T

    S = integrate_forward(rhs, np.zeros((n, n)), spec.grid, post_step=symmetrize, blowup=blowup, name="Sigma")
    nd = spec.nodes
    KinvH = nd.Kinv @ nd.H
    D = nd.C + S @ np.swapaxes(KinvH, -1, -2)
    return SigmaPath(spec.grid, S, D)


def _riccati_rhs(spec: ProblemSpec):
    def rhs(t, P):
        c = spec.coefficients(t)
        Theta = c.B.T @ P + c.S
        return -(P @ c.A + c.A.T @ P + c.Q - Theta.T @ np.linalg.solve(c.R, Theta))
    return rhs


def solve_P(spec: ProblemSpec, blowup: float = DEFAULT_BLOWUP) -> tuple[PPath, ThetaPath]:
    """Backward game Riccati from ``P(T) = G``.

    The caller is responsible for having checked that ``R`` is invertible
    (Condition (I) or (II)).  Raises :class:`BlowUpError` when ``|P|`` leaves
    ``blowup`` before reaching ``t = 0``.
    """
    rhs = _riccati_rhs(spec)
    P = integrate_backward(rhs, symmetrize(spec.G), spec.grid, post_step=symmetrize, blowup=blowup, name="P")
    P[-1] = spec.G
    dP = np.stack([rhs(t, Pj) for t, Pj in zip(spec.grid.t, P)])
    nd = spec.nodes
    theta1 = np.swapaxes(nd.B1, -1, -2) @ P + nd.S1
    theta2 = np.swapaxes(nd.B2, -1, -2) @ P + nd.S2
    return PPath(spec.grid, P, dP), ThetaPath(theta1, theta2)


def solve_p(spec: ProblemSpec, P: PPath, theta: ThetaPath | None = None) -> tuple[pPath, NuPath]:
    """Backward linear ODE for ``p`` from ``p(T) = g``.

    ``P`` between nodes comes from its cubic Hermite interpolant so the
    RK4 stages keep fourth-order accuracy.
    """
    def rhs(t, p):
        c = spec.coefficients(t)
        Pt = P.at(t)
        Theta = c.B.T @ Pt + c.S
        nu = c.B.T @ p + c.rho
        return -(c.A.T @ p + Pt @ c.b + c.q - Theta.T @ np.linalg.solve(c.R, nu))

    p = integrate_backward(rhs, spec.g, spec.grid, name="p")
    p[-1] = spec.g
    nd = spec.nodes
    nu1 = np.einsum("jni,jn->ji", nd.B1, p) + nd.rho1
    nu2 = np.einsum("jni,jn->ji", nd.B2, p) + nd.rho2
    return pPath(spec.grid, p), NuPath(nu1, nu2)


def gamma_integrand(spec: ProblemSpec, P: PPath, p: pPath, nu: NuPath, sigma: SigmaPath) -> np.ndarray:
    """Node values of ``2<p, b> + tr(D D^T P) - <R^-1 nu, nu>``."""
    nd = spec.nodes
    D = sigma.D
    nuv = nu.nu
    Rinv_nu = np.linalg.solve(nd.R, nuv[..., None])[..., 0]
    return (2.0 * np.einsum("jn,jn->j", p.values, nd.b)
            + np.einsum("jnd,jnm,jmd->j", D, P.values, D)
            - np.einsum("jk,jk->j", Rinv_nu, nuv))


def compute_gamma(spec: ProblemSpec, P: PPath, p: pPath, nu: NuPath, sigma: SigmaPath) -> float:
    """Completion-of-squares constant

    ``Gamma = <P(0) a, a> + 2 <p(0), a> + int_0^T (2<p,b> + tr(D D^T P) - <R^-1 nu, nu>) dt``

    with the integral by the trapezoidal rule on the grid.
    """
    a = spec.a
    boundary = a @ P.values[0] @ a + 2.0 * p.values[0] @ a
    return float(boundary + trapezoid(gamma_integrand(spec, P, p, nu, sigma), spec.grid.dt))


def compute_jtilde(spec: ProblemSpec, sigma: SigmaPath) -> float:
    """Irreducible filtering cost ``(tr(G Sigma(T)) + int tr(Q Sigma) dt) / 2``."""
    S = sigma.values
    running = np.einsum("jnm,jmn->j", spec.nodes.Q, S)
    return float(0.5 * (np.trace(spec.G @ S[-1]) + trapezoid(running, spec.grid.dt)))


def solve_game(spec: ProblemSpec, ring_j: float = 0.0, blowup: float = DEFAULT_BLOWUP) -> SolvedGame:
    """Solve every deterministic equation and the value components."""
    sigma = solve_sigma(spec, blowup)
    P, theta = solve_P(spec, blowup)
    p, nu = solve_p(spec, P, theta)
    for name, arr in (("p", p.values), ("nu", nu.nu)):
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{name} has non-finite values")
    gamma = compute_gamma(spec, P, p, nu, sigma)
    jtilde = compute_jtilde(spec, sigma)
    return SolvedGame(spec, sigma, P, theta, p, nu, ScalarSummary(gamma, jtilde, ring_j))


def check_sigma_psd(sigma: SigmaPath, tol: float = 1e-10) -> None:
    ev = np.linalg.eigvalsh(sigma.values)
    bad = np.flatnonzero(ev[:, 0] < -tol)
    if bad.size:
        raise BlowUpError(f"Sigma lost positive semidefiniteness at node {int(bad[0])}", node=int(bad[0]))


def write_solution_csvs(solved: SolvedGame, out_dir: str | Path, meta=None) -> list[Path]:
    """Emit ``P.csv``, ``p.csv``, ``Sigma.csv``, ``Theta.csv`` and ``nu.csv``."""
    out = Path(out_dir)
    t = solved.grid.t
    return [
        io.write_path_csv(out / "P.csv", t, {"P": solved.P.values}, meta),
        io.write_path_csv(out / "p.csv", t, {"p": solved.p.values}, meta),
        io.write_path_csv(out / "Sigma.csv", t, {"Sigma": solved.sigma.values}, meta),
        io.write_path_csv(out / "Theta.csv", t, {"Theta": solved.theta.theta}, meta),
        io.write_path_csv(out / "nu.csv", t, {"nu": solved.nu.nu}, meta),
    ]
