"""Fixed-step classical Runge-Kutta integration on a :class:`TimeGrid`."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import BlowUpError, DataError
from .model import TimeGrid

Rhs = Callable[[float, np.ndarray], np.ndarray]


def _march(rhs: Rhs, start: np.ndarray, grid: TimeGrid, backward: bool,
           post_step=None, blowup: float | None = None, name: str = "solution") -> np.ndarray:
    t = grid.t
    N = grid.N
    y = np.empty((N + 1,) + np.shape(start))
    order = range(N, 0, -1) if backward else range(N)
    first = N if backward else 0
    y[first] = start
    for j in order:
        nxt = j - 1 if backward else j + 1
        t0, t1 = t[j], t[nxt]
        h = t1 - t0
        yj = y[j]
        k1 = rhs(t0, yj)
        k2 = rhs(t0 + 0.5 * h, yj + 0.5 * h * k1)
        k3 = rhs(t0 + 0.5 * h, yj + 0.5 * h * k2)
        k4 = rhs(t1, yj + h * k3)
        ynew = yj + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if post_step is not None:
            ynew = post_step(ynew)
        if not np.all(np.isfinite(ynew)):
            if blowup is not None:
                raise BlowUpError(f"{name} became non-finite at node {nxt} (t = {t1:.6g})", node=nxt, time=t1)
            raise DataError(f"{name} became non-finite at node {nxt} (t = {t1:.6g})")
        if blowup is not None and np.abs(ynew).max() > blowup:
            raise BlowUpError(
                f"{name} exceeded blow-up bound {blowup:.3g} at node {nxt} (escape time t = {t1:.6g})",
                node=nxt, time=t1,
            )
        y[nxt] = ynew
    return y


def integrate_forward(rhs: Rhs, y0, grid: TimeGrid, post_step=None, blowup=None, name="solution") -> np.ndarray:
    """Integrate ``y' = rhs(t, y)`` from ``y(0) = y0``; returns ``(N + 1, *shape)``.

    ``post_step`` is applied to every new node value (e.g. symmetrization).
    """
    return _march(rhs, np.asarray(y0, dtype=float), grid, False, post_step, blowup, name)


def integrate_backward(rhs: Rhs, yT, grid: TimeGrid, post_step=None, blowup=None, name="solution") -> np.ndarray:
    """Integrate ``y' = rhs(t, y)`` backward from ``y(T) = yT``."""
    return _march(rhs, np.asarray(yT, dtype=float), grid, True, post_step, blowup, name)


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def trapezoid(values: np.ndarray, dt: float, axis: int = 0) -> np.ndarray:
    """Composite trapezoidal rule on a uniform grid along ``axis``."""
    v = np.moveaxis(np.asarray(values), axis, 0)
    return dt * (v.sum(axis=0) - 0.5 * (v[0] + v[-1]))
