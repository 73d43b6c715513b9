"""Brute-force exact oracle for finite-support scenarios.

Every primitive variable is enumerated, so expectations are finite weighted
sums and conditional expectations are group averages over outcomes that share
the same information.  The closed-loop rollout here is written independently
of :mod:`mmlq.simulation` and :mod:`mmlq.estimators`: estimates come from
grouping (conditional means) and weighted least squares (linear estimates),
never from the recursive filters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .noise import PointMass
from .riccati import GainSchedule, gain_schedule
from .simulation import PrimitiveDraw
from .verification import KEY_DECIMALS, conditional_mean, group_ids

__all__ = [
    "OracleError",
    "is_finite_support",
    "outcome_count",
    "enumerate_primitives",
    "ExactLaw",
    "ExactRollout",
    "exact_rollout",
    "certainty_equivalent_policy",
    "affine_policy",
]

MAX_OUTCOMES = 1_000_000


class OracleError(ValueError):
    pass


def is_finite_support(s) -> bool:
    nz = s.noise
    return all(isinstance(d, PointMass) for d in (*nz.x1, *nz.w, *nz.v))


def _variables(s):
    """``(kind, agent, t, distribution)`` for every primitive variable."""
    nz, n, T = s.noise, s.n, s.T
    out = [("x1", i, 0, nz.x1[i]) for i in range(n + 1)]
    out += [("w", i, t, nz.w[i]) for i in range(n + 1) for t in range(1, T)]
    out += [("v", i, t, nz.v[i - 1]) for i in range(1, n + 1) for t in range(1, T + 1)]
    return out


def outcome_count(s) -> int:
    count = 1
    for *_, d in _variables(s):
        count *= d.probs.size
    return count


def enumerate_primitives(s, guard: int = MAX_OUTCOMES) -> PrimitiveDraw:
    """Every joint outcome of the primitive variables, with its probability."""
    if not is_finite_support(s):
        raise OracleError("exact enumeration needs finite-support (point_mass) noise everywhere")
    variables = _variables(s)
    sizes = [d.probs.size for *_, d in variables]
    total = outcome_count(s)
    if total > guard:
        raise OracleError(f"{total} outcomes exceed the enumeration guard of {guard}")
    idx = np.unravel_index(np.arange(total), sizes) if sizes else ()
    topo, T = s.topology, s.T
    x1 = np.zeros((total, topo.nx))
    w = np.zeros((total, T - 1, topo.nx))
    v = np.zeros((total, T, topo.ny))
    prob = np.ones(total)
    for (kind, i, t, d), k in zip(variables, idx):
        prob *= d.probs[k]
        vals = d.atoms[k]
        if kind == "x1":
            x1[:, topo.xs[i]] = vals
        elif kind == "w":
            w[:, t - 1, topo.xs[i]] = vals
        else:
            v[:, t - 1, topo.ys[i - 1]] = vals
    keep = prob > 0
    return PrimitiveDraw(x1[keep], w[keep], v[keep], prob[keep])


class ExactLaw:
    """Exact law of the primitives with conditional-expectation queries."""

    def __init__(self, s, guard: int = MAX_OUTCOMES):
        self.s = s
        self.draw = enumerate_primitives(s, guard)
        self.p = self.draw.weights

    @property
    def size(self) -> int:
        return self.p.size

    def expect(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.p, values, axes=1)

    def cond_expect(self, values: np.ndarray, info: np.ndarray) -> np.ndarray:
        """``E[values | info]`` at every outcome; ``info`` is ``(M, k)``."""
        return conditional_mean(values, group_ids(info, KEY_DECIMALS), self.p)

    def linear_estimate(self, values: np.ndarray, info: np.ndarray) -> np.ndarray:
        """Orthogonal projection of ``values`` onto the affine span of ``info``."""
        F = np.concatenate([info, np.ones((info.shape[0], 1))], axis=1)
        sw = np.sqrt(self.p)[:, None]
        coef, *_ = np.linalg.lstsq(F * sw, values.reshape(len(values), -1) * sw, rcond=None)
        return (F @ coef).reshape(values.shape)


@dataclass
class ExactRollout:
    """Outcome-by-outcome closed loop with exact estimates at every step."""

    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    cost: np.ndarray
    xhat_c: np.ndarray
    mmse: list
    llms: list
    p: np.ndarray

    @property
    def J(self) -> float:
        return float(self.p @ self.cost)


def exact_rollout(s, policy: Callable, law: ExactLaw | None = None) -> ExactRollout:
    """Run ``policy(t, est)`` on every outcome.

    ``est`` is a dict with ``x0`` (the major state at ``t``), ``xhat_c``
    (``E[x(t) | I^com(t)]``), ``mmse[i-1]`` (``E[x_i(t) | I_i(t)]``) and
    ``llms[i-1]`` (the linear estimate of ``x_i(t)`` from ``I_i(t)``).
    It returns ``(u0, [u_1, ..., u_n])``.
    """
    law = law or ExactLaw(s)
    topo, T = s.topology, s.T
    xs, us, ys = topo.xs, topo.us, topo.ys
    d, M = law.draw, law.size
    A, B = s.A, s.B
    x = np.empty((M, T, topo.nx))
    u = np.zeros((M, T - 1, topo.nu))
    y = np.empty((M, T, topo.ny))
    xhat_c = np.empty((M, T, topo.nx))
    mmse = [np.empty((M, T, topo.dx[i])) for i in range(1, topo.n + 1)]
    llms = [np.empty((M, T, topo.dx[i])) for i in range(1, topo.n + 1)]
    cost = np.zeros(M)
    x[:, 0] = d.x1
    for t in range(1, T + 1):
        k = t - 1
        for i in range(1, topo.n + 1):
            Cii = s.sys.Cii[i - 1]
            y[:, k, ys[i - 1]] = x[:, k, xs[i]] @ Cii.T + d.v[:, k, ys[i - 1]]
        Icom = np.concatenate([x[:, :t, xs[0]].reshape(M, -1), u[:, :k, us[0]].reshape(M, -1)], axis=1)
        xhat_c[:, k] = law.cond_expect(x[:, k], Icom)
        for i in range(1, topo.n + 1):
            Ii = np.concatenate(
                [Icom, y[:, :t, ys[i - 1]].reshape(M, -1), u[:, :k, us[i]].reshape(M, -1)], axis=1
            )
            mmse[i - 1][:, k] = law.cond_expect(x[:, k, xs[i]], Ii)
            llms[i - 1][:, k] = law.linear_estimate(x[:, k, xs[i]], Ii)
        xt = x[:, k]
        if t == T:
            cost += np.einsum("na,ab,nb->n", xt, s.QTs, xt)
            break
        est = {
            "x0": xt[:, xs[0]],
            "xhat_c": xhat_c[:, k],
            "mmse": [m[:, k] for m in mmse],
            "llms": [m[:, k] for m in llms],
        }
        u0, ui = policy(t, est)
        u[:, k, us[0]] = u0
        for i in range(1, topo.n + 1):
            u[:, k, us[i]] = ui[i - 1]
        uk = u[:, k]
        cost += np.einsum("na,ab,nb->n", xt, s.Qs, xt) + np.einsum("na,ab,nb->n", uk, s.Rs, uk)
        x[:, k + 1] = xt @ A.T + uk @ B.T + d.w[:, k]
    return ExactRollout(x, u, y, cost, xhat_c, mmse, llms, law.p)


def certainty_equivalent_policy(s, sched: GainSchedule | None = None, estimate: str = "mmse") -> Callable:
    """Certainty-equivalent policy with exact estimates (``"mmse"`` or ``"llms"``)."""
    sched = sched or gain_schedule(s)
    xs = s.topology.xs

    def policy(t, est):
        xc = est["xhat_c"]
        u0 = -xc @ sched.L_row(t, 0).T
        ui = []
        for i in range(1, s.n + 1):
            corr = est[estimate][i - 1] - xc[:, xs[i]]
            ui.append(-xc @ sched.L_row(t, i).T - corr @ sched.L_loc(i, t).T)
        return u0, ui

    return policy


def affine_policy(a: float, b: float) -> Callable:
    """Scalar competitor ``u_0 = a x_0(t)``, ``u_1 = b x̂_1(t|1)`` (linear estimate)."""

    def policy(t, est):
        return a * est["x0"], [b * est["llms"][0]]

    return policy
