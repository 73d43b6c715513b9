"""Riccati and filter operators, and the backward gain recursions.

Time indices in this module are 1-based in the public accessors and stored
0-based: ``Scom[t - 1]`` is S^com(t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

__all__ = [
    "RiccatiError",
    "op_R",
    "op_G",
    "op_K",
    "op_F",
    "GainSchedule",
    "solve_global",
    "solve_local",
    "solve_schedule",
    "gain_schedule",
]


class RiccatiError(ArithmeticError):
    """A matrix that should be positive definite could not be factored."""


def _spd_solve(M: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    M = 0.5 * (M + M.T)
    try:
        factor = cho_factor(M)
    except LinAlgError as exc:
        raise RiccatiError(f"{what} is singular or not positive definite") from exc
    return cho_solve(factor, rhs)


def _m(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def op_G(P, A, B, R) -> np.ndarray:
    """Gain ``(R + B'PB)^{-1} B'PA``."""
    P, A, B, R = map(_m, (P, A, B, R))
    return _spd_solve(R + B.T @ P @ B, B.T @ P @ A, "R + B'PB")


def op_R(P, A, B, Q, R) -> np.ndarray:
    """One backward Riccati step ``Q + A'PA - A'PB (R + B'PB)^{-1} B'PA``, symmetrized."""
    P, A, B, Q, R = map(_m, (P, A, B, Q, R))
    PA = P @ A
    L = _spd_solve(R + B.T @ P @ B, B.T @ PA, "R + B'PB")
    out = Q + A.T @ PA - (B.T @ PA).T @ L
    return 0.5 * (out + out.T)


def _innovation(P, A, C, Sw, Sv):
    P, A, C, Sw, Sv = map(_m, (P, A, C, Sw, Sv))
    M = A @ P @ A.T + Sw
    M = 0.5 * (M + M.T)
    S = C @ M @ C.T + Sv
    return M, C, S


def op_K(P, A, C, Sw, Sv) -> np.ndarray:
    """Predictor-form gain ``M C' (C M C' + Sv)^{-1}`` with ``M = A P A' + Sw``."""
    M, C, S = _innovation(P, A, C, Sw, Sv)
    return _spd_solve(S, C @ M, "innovation covariance").T


def op_F(P, A, C, Sw, Sv) -> np.ndarray:
    """Posterior covariance ``M - K (C M C' + Sv) K'``, symmetrized."""
    M, C, S = _innovation(P, A, C, Sw, Sv)
    K = _spd_solve(S, C @ M, "innovation covariance").T
    out = M - K @ S @ K.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Global and per-minor Riccati solutions, gains and Δ matrices.

    Array layout: ``Scom`` is ``(T, nx, nx)``; ``Lcom`` is ``(T-1, nu, nx)``;
    ``DeltaCom`` is ``(T-1, nu, nu)``.  ``Sloc[i-1]`` and friends hold the same
    for minor agent ``i``.
    """

    T: int
    Scom: np.ndarray
    Lcom: np.ndarray
    DeltaCom: np.ndarray
    Sloc: tuple[np.ndarray, ...]
    Lloc: tuple[np.ndarray, ...]
    DeltaLoc: tuple[np.ndarray, ...]
    xs: tuple[slice, ...] = ()
    us: tuple[slice, ...] = ()

    def S(self, t: int) -> np.ndarray:
        return self.Scom[t - 1]

    def L(self, t: int) -> np.ndarray:
        return self.Lcom[t - 1]

    def L_row(self, t: int, i: int) -> np.ndarray:
        """Rows of L^com(t) belonging to agent ``i``'s control."""
        return self.Lcom[t - 1][self.us[i]]

    def S_loc(self, i: int, t: int) -> np.ndarray:
        return self.Sloc[i - 1][t - 1]

    def L_loc(self, i: int, t: int) -> np.ndarray:
        return self.Lloc[i - 1][t - 1]

    def to_dict(self) -> dict:
        def arr(a):
            return [m.tolist() for m in a]

        return {
            "T": self.T,
            "Scom": arr(self.Scom),
            "Lcom": arr(self.Lcom),
            "DeltaCom": arr(self.DeltaCom),
            "Sloc": [arr(s) for s in self.Sloc],
            "Lloc": [arr(s) for s in self.Lloc],
            "DeltaLoc": [arr(s) for s in self.DeltaLoc],
        }


def solve_schedule(A, B, Q, R, QT, T: int):
    """Backward recursion from ``S(T) = QT``; returns ``(S, L, Delta)`` stacks."""
    A, B, Q, R, QT = map(_m, (A, B, Q, R, QT))
    if T < 2:
        raise ValueError("horizon must be at least 2")
    nx, nu = B.shape
    S = np.empty((T, nx, nx))
    L = np.empty((T - 1, nu, nx))
    D = np.empty((T - 1, nu, nu))
    S[T - 1] = 0.5 * (QT + QT.T)
    for k in range(T - 2, -1, -1):
        P = S[k + 1]
        D[k] = R + B.T @ P @ B
        D[k] = 0.5 * (D[k] + D[k].T)
        L[k] = op_G(P, A, B, R)
        S[k] = op_R(P, A, B, Q, R)
    return S, L, D


def solve_global(s):
    """``(Scom, Lcom, DeltaCom)`` for the full system."""
    return solve_schedule(s.A, s.B, s.Qs, s.Rs, s.QTs, s.T)


def solve_local(s, i: int):
    """``(Sloc_i, Lloc_i, DeltaLoc_i)`` for minor agent ``i`` (1-based)."""
    Aii, _, Bii, _, _ = s.local(i)
    return solve_schedule(Aii, Bii, s.Qii(i), s.Rii(i), s.QTii(i), s.T)


def gain_schedule(s) -> GainSchedule:
    Sc, Lc, Dc = solve_global(s)
    loc = [solve_local(s, i) for i in range(1, s.n + 1)]
    return GainSchedule(
        T=s.T,
        Scom=Sc,
        Lcom=Lc,
        DeltaCom=Dc,
        Sloc=tuple(x[0] for x in loc),
        Lloc=tuple(x[1] for x in loc),
        DeltaLoc=tuple(x[2] for x in loc),
        xs=s.topology.xs,
        us=s.topology.us,
    )

