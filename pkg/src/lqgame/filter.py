"""Kalman-Bucy filtering of the game state from the common observation.

The filter uses the precomputed ``Sigma`` and ``D`` from
:func:`lqgame.solvers.solve_sigma`; one Euler-Maruyama step is

    dWhat = K^-1 [dy - (H xhat + h) dt]
    xhat <- xhat + (A xhat + B u + b) dt + D dWhat

:func:`discrete_kalman_oracle` is an independent check: the textbook
discrete Kalman filter for the Euler-discretized state/observation pair,
propagating its own covariance.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import DataError
from .model import ProblemSpec
from .solvers import SigmaPath


@dataclass(frozen=True)
class FilterState:
    j: int
    t: float
    xhat: np.ndarray  # (n,) or (paths, n)


def initial_state(spec: ProblemSpec, paths: int | None = None) -> FilterState:
    xhat = spec.a.copy() if paths is None else np.tile(spec.a, (paths, 1))
    return FilterState(0, 0.0, xhat)


def filter_step(state: FilterState, u: np.ndarray, dy: np.ndarray, spec: ProblemSpec,
                sigma: SigmaPath) -> tuple[FilterState, np.ndarray]:
    """Advance the filter over ``[t_j, t_j + dt]``; returns the new state and ``dWhat``."""
    nd = spec.nodes
    j = state.j
    dt = spec.grid.dt
    xhat = state.xhat
    dWhat = (dy - (xhat @ nd.H[j].T + nd.h[j]) * dt) @ nd.Kinv[j].T
    nxt = xhat + (xhat @ nd.A[j].T + u @ nd.B[j].T + nd.b[j]) * dt + dWhat @ sigma.D[j].T
    return FilterState(j + 1, spec.grid.t[j + 1], nxt), dWhat


def _check_inputs(dy, u, spec):
    dy = np.asarray(dy, dtype=float)
    u = np.asarray(u, dtype=float)
    N = spec.grid.N
    if dy.ndim < 2 or dy.shape[-2:] != (N, spec.d):
        raise DataError(f"observation increments must have shape (..., {N}, {spec.d}), got {dy.shape}")
    if u.ndim < 2 or u.shape[-1] != spec.k or u.shape[-2] not in (N, N + 1):
        raise DataError(f"controls must have shape (..., {N} or {N + 1}, {spec.k}), got {u.shape}")
    return dy, u


def run_filter(dy, u, spec: ProblemSpec, sigma: SigmaPath) -> tuple[np.ndarray, np.ndarray]:
    """Fold :func:`filter_step` over the grid.

    ``dy`` holds the observation increments ``(..., N, d)``; ``u`` the controls
    applied on each step.  Returns ``xhat`` ``(..., N + 1, n)`` and the
    innovation path ``What`` ``(..., N + 1, d)`` with ``What(0) = 0``.
    """
    dy, u = _check_inputs(dy, u, spec)
    N = spec.grid.N
    batch = dy.shape[:-2]
    xhat = np.empty(batch + (N + 1, spec.n))
    What = np.zeros(batch + (N + 1, spec.d))
    state = FilterState(0, 0.0, np.broadcast_to(spec.a, batch + (spec.n,)).copy())
    xhat[..., 0, :] = state.xhat
    for j in range(N):
        state, dW = filter_step(state, u[..., j, :], dy[..., j, :], spec, sigma)
        xhat[..., j + 1, :] = state.xhat
        What[..., j + 1, :] = What[..., j, :] + dW
    if not np.all(np.isfinite(xhat)):
        raise DataError("filter produced non-finite estimates")
    return xhat, What


def discrete_kalman_oracle(dy, u, spec: ProblemSpec) -> tuple[np.ndarray, np.ndarray]:
    """Exact Kalman filter of the Euler-discretized system.

    ``x_{j+1} = (I + A dt) x_j + (B u_j + b) dt + w_j``, ``z_j = (H x_j + h) dt + v_j``
    with ``Cov(w) = (C C^T + Cbar Cbar^T) dt``, ``Cov(v) = K K^T dt`` and
    ``Cov(w, v) = C K^T dt`` (both driven by the same ``dW``).  Returns the
    estimate ``(..., N + 1, n)`` and covariance ``(N + 1, n, n)``.
    """
    dy, u = _check_inputs(dy, u, spec)
    nd = spec.nodes
    N, dt, n = spec.grid.N, spec.grid.dt, spec.n
    batch = dy.shape[:-2]
    m = np.empty(batch + (N + 1, n))
    cov = np.empty((N + 1, n, n))
    m[..., 0, :] = spec.a
    cov[0] = 0.0
    eye = np.eye(n)
    for j in range(N):
        F = eye + nd.A[j] * dt
        H, K, C, Cb = nd.H[j], nd.K[j], nd.C[j], nd.Cbar[j]
        Pj = cov[j]
        Sxz = (F @ Pj @ H.T + C @ K.T) * dt
        Szz = H @ Pj @ H.T * dt * dt + K @ K.T * dt
        try:
            gain = np.linalg.solve(Szz.T, Sxz.T).T
        except np.linalg.LinAlgError:
            raise DataError(f"singular innovation covariance at node {j}") from None
        mj = m[..., j, :]
        innov = dy[..., j, :] - (mj @ H.T + nd.h[j]) * dt
        m[..., j + 1, :] = mj @ F.T + (u[..., j, :] @ nd.B[j].T + nd.b[j]) * dt + innov @ gain.T
        Pn = F @ Pj @ F.T + (C @ C.T + Cb @ Cb.T) * dt - gain @ Sxz.T
        cov[j + 1] = 0.5 * (Pn + Pn.T)
    return m, cov


def write_filter_csv(path: str | Path, t: np.ndarray, xhat: np.ndarray, What: np.ndarray, meta=None) -> Path:
    """``t, xhat_1.., What_1..`` per node, with a leading ``path`` column when batched."""
    n, d = xhat.shape[-1], What.shape[-1]
    names = [f"xhat_{i + 1}" for i in range(n)] + [f"What_{i + 1}" for i in range(d)]
    if xhat.ndim == 2:
        return io.write_csv(path, ["t", *names], np.column_stack([t, xhat, What]), meta)
    rows = []
    for i in range(xhat.shape[0]):
        rows.append(np.column_stack([np.full(t.shape, i), t, xhat[i], What[i]]))
    header = ["path", "t", *names]
    table = np.vstack(rows)
    return io.write_csv(path, header, ([str(int(r[0])), *r[1:]] for r in table), meta)
