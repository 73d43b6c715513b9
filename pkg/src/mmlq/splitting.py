"""Common/local/stochastic decomposition of controls, states and observations.

Given a batch of rollouts, the control is split into its conditional mean
given the common information and the remainder; the state is then split into
the parts driven by each control component and the control-free part driven by
the primitive noise.  ``zcom = xcom + xstoc`` and ``zloc_i = xloc_i + xstoc_i``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .simulation import Trajectory, rollout

__all__ = [
    "SplitError",
    "SplitTrajectory",
    "split_controls",
    "propagate_splits",
    "split_trajectory",
    "common_information",
    "local_information",
    "static_reduction_residual",
    "splits_to_csv",
    "MIN_REGRESSION_TRIALS",
]

MIN_REGRESSION_TRIALS = 100


class SplitError(ValueError):
    pass


def common_information(s, traj: Trajectory, t: int) -> np.ndarray:
    """``I^com(t) = [x_0(1:t), u_0(1:t-1)]`` flattened to ``(N, k)``."""
    topo = s.topology
    N = traj.N
    return np.concatenate(
        [traj.x[:, :t, topo.xs[0]].reshape(N, -1), traj.u[:, : t - 1, topo.us[0]].reshape(N, -1)], axis=1
    )


def local_information(s, traj: Trajectory, t: int, i: int) -> np.ndarray:
    """``I_i(t) = [x_0(1:t), y_i(1:t), u_0(1:t-1), u_i(1:t-1)]`` flattened to ``(N, k)``."""
    topo = s.topology
    N = traj.N
    return np.concatenate(
        [
            traj.x[:, :t, topo.xs[0]].reshape(N, -1),
            traj.y[:, :t, topo.ys[i - 1]].reshape(N, -1),
            traj.u[:, : t - 1, topo.us[0]].reshape(N, -1),
            traj.u[:, : t - 1, topo.us[i]].reshape(N, -1),
        ],
        axis=1,
    )


def split_controls(s, traj: Trajectory, mode: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Return ``(ucom, uloc)``, each ``(N, T-1, nu)``.

    ``mode="exact"`` uses the common control the strategy exposed during the
    rollout.  ``mode="regression"`` fits, for each ``t``, a least-squares
    regression of ``u(t)`` on ``[1, x_0(1:t), u_0(1:t-1)]`` across the batch;
    it needs at least ``MIN_REGRESSION_TRIALS`` trials.  ``"auto"`` picks exact
    when available.  The major agent's control is common by definition.
    """
    if mode == "auto":
        mode = "exact" if traj.ucom is not None else "regression"
    if mode == "exact":
        if traj.ucom is None:
            raise SplitError("strategy did not expose its common control; use regression mode")
        ucom = traj.ucom.copy()
    elif mode == "regression":
        if traj.N < MIN_REGRESSION_TRIALS:
            raise SplitError(
                f"regression split needs at least {MIN_REGRESSION_TRIALS} trajectories, got {traj.N}"
            )
        ucom = np.empty_like(traj.u)
        sw = None if traj.weights is None else np.sqrt(traj.weights)[:, None]
        for t in range(1, s.T):
            F = np.concatenate([np.ones((traj.N, 1)), common_information(s, traj, t)], axis=1)
            target = traj.u[:, t - 1]
            if sw is None:
                coef, *_ = np.linalg.lstsq(F, target, rcond=None)
            else:
                coef, *_ = np.linalg.lstsq(F * sw, target * sw, rcond=None)
            ucom[:, t - 1] = F @ coef
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    us0 = s.topology.us[0]
    ucom[:, :, us0] = traj.u[:, :, us0]
    return ucom, traj.u - ucom


@dataclass(eq=False)
class SplitTrajectory:
    """Split components for a batch; state arrays are ``(N, T, nx)``,
    control arrays ``(N, T-1, nu)``, observation arrays ``(N, T, ny)``."""

    ucom: np.ndarray
    uloc: np.ndarray
    xcom: np.ndarray
    xloc: np.ndarray
    xstoc: np.ndarray
    ycom: np.ndarray
    yloc: np.ndarray
    ystoc: np.ndarray

    @property
    def zcom(self) -> np.ndarray:
        return self.xcom + self.xstoc

    @property
    def zloc(self) -> np.ndarray:
        """``xloc + xstoc`` for every block; only minor blocks are meaningful."""
        return self.xloc + self.xstoc


def propagate_splits(s, traj: Trajectory, ucom: np.ndarray, uloc: np.ndarray, tol: float = 1e-8) -> SplitTrajectory:
    """Run the three state recursions and split the observations.

    Raises :class:`SplitError` if ``x`` is not reproduced to ``tol`` relative.
    """
    A, B, C = s.A, s.B, s.C
    N, T, nx = traj.x.shape
    if ucom.shape != traj.u.shape or uloc.shape != traj.u.shape:
        raise SplitError("control split shapes do not match the trajectory")
    xcom = np.zeros((N, T, nx))
    xloc = np.zeros((N, T, nx))
    xstoc = np.empty((N, T, nx))
    xstoc[:, 0] = traj.draw.x1
    for k in range(T - 1):
        xcom[:, k + 1] = xcom[:, k] @ A.T + ucom[:, k] @ B.T
        xloc[:, k + 1] = xloc[:, k] @ A.T + uloc[:, k] @ B.T
        xstoc[:, k + 1] = xstoc[:, k] @ A.T + traj.draw.w[:, k]
    resid = np.abs(xcom + xloc + xstoc - traj.x)
    scale = 1.0 + np.abs(traj.x)
    if np.any(resid > tol * scale):
        raise SplitError(f"state reconstruction residual {float((resid / scale).max()):.3g} exceeds {tol:g}")
    ycom = xcom @ C.T
    yloc = xloc @ C.T
    ystoc = xstoc @ C.T + traj.draw.v
    return SplitTrajectory(ucom, uloc, xcom, xloc, xstoc, ycom, yloc, ystoc)


def split_trajectory(s, traj: Trajectory, mode: str = "auto") -> SplitTrajectory:
    ucom, uloc = split_controls(s, traj, mode)
    return propagate_splits(s, traj, ucom, uloc)


def static_reduction_residual(s, strategy, traj: Trajectory, sp: SplitTrajectory, filter_config=None) -> float:
    """Rebuild every ``I_i(t)`` from ``x^stoc_0(1:t)`` and ``y^stoc_i(1:t)`` alone.

    The map re-runs the strategy on surrogate primitives: the major agent's
    initial state and noise are read off ``x^stoc_0``; every minor agent starts
    at zero with no process noise and sees surrogate observation noise
    ``y^stoc_i - C_ii h_i`` where ``h_i`` is the response of ``x_i`` to
    ``x^stoc_0``.  Both inputs are functions of the control-free signals only.
    Returns the largest relative mismatch of the rebuilt information vectors.
    """
    topo = s.topology
    xs, ys = topo.xs, topo.ys
    N, T = traj.N, s.T
    x0s = sp.xstoc[:, :, xs[0]]
    x1 = np.zeros((N, topo.nx))
    x1[:, xs[0]] = x0s[:, 0]
    w = np.zeros((N, T - 1, topo.nx))
    w[:, :, xs[0]] = x0s[:, 1:] - x0s[:, :-1] @ s.sys.A00.T
    v = np.empty((N, T, topo.ny))
    for i in range(1, topo.n + 1):
        Aii, Ai0, _, _, C = s.local(i)
        h = np.zeros((N, T, topo.dx[i]))
        for k in range(T - 1):
            h[:, k + 1] = h[:, k] @ Aii.T + x0s[:, k] @ Ai0.T
        v[:, :, ys[i - 1]] = sp.ystoc[:, :, ys[i - 1]] - h @ C.T
    surrogate = replace(traj.draw, x1=x1, w=w, v=v)
    rebuilt = rollout(s, strategy, surrogate, filter_config=filter_config)
    worst = 0.0
    for t in range(1, T + 1):
        for i in range(1, topo.n + 1):
            a = local_information(s, traj, t, i)
            b = local_information(s, rebuilt, t, i)
            worst = max(worst, float((np.abs(a - b) / (1.0 + np.abs(a))).max(initial=0.0)))
    return worst


def splits_to_csv(s, sp: SplitTrajectory, trial: int = 0) -> str:
    """Long-format rows ``(t, component, agent, entry, value)`` for one trial."""
    topo = s.topology
    buf = io.StringIO()
    wr = csv.writer(buf)
    wr.writerow(["t", "component", "agent", "entry", "value"])
    T = sp.xcom.shape[1]
    series = [
        ("xcom", sp.xcom, topo.xs, range(topo.n + 1)),
        ("xloc", sp.xloc, topo.xs, range(topo.n + 1)),
        ("xstoc", sp.xstoc, topo.xs, range(topo.n + 1)),
        ("ucom", sp.ucom, topo.us, range(topo.n + 1)),
        ("uloc", sp.uloc, topo.us, range(topo.n + 1)),
        ("ycom", sp.ycom, topo.ys, range(1, topo.n + 1)),
        ("yloc", sp.yloc, topo.ys, range(1, topo.n + 1)),
        ("ystoc", sp.ystoc, topo.ys, range(1, topo.n + 1)),
    ]
    for t in range(1, T + 1):
        for name, arr, slices, agents in series:
            if t > arr.shape[1]:
                continue
            for i in agents:
                sl = slices[i - 1] if name.startswith("y") else slices[i]
                for e, val in enumerate(arr[trial, t - 1, sl]):
                    wr.writerow([t, name, i, e, repr(float(val))])
    return buf.getvalue()

