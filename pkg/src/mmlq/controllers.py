"""Control strategies.

A strategy sees the world through two views per time step.  The major agent
gets a :class:`CommonView` (its own state and action history plus the
common-information estimate).  Minor agent ``i`` gets the same common view and
a :class:`LocalView` built only from its own observations and actions.  The
simulator builds these views, so a strategy cannot read another agent's
private signals.

Strategies that know their own common control ``E[u_i(t) | I^com(t)]`` in
closed form return it alongside the action; the common-information estimate
and the exact control split both depend on it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .estimators import DensityState, LlmsState, density_mean
from .noise import PointMass
from .riccati import GainSchedule, gain_schedule

__all__ = [
    "StrategyError",
    "CommonView",
    "LocalView",
    "Strategy",
    "act_major",
    "act_minor_optimal",
    "act_minor_linear",
    "act_minor_state_feedback",
    "is_state_feedback",
    "CertaintyEquivalent",
    "optimal",
    "best_linear",
    "state_feedback",
    "CustomLinear",
    "FunctionStrategy",
]


class StrategyError(ValueError):
    pass


@dataclass
class CommonView:
    """Common information at time ``t`` for a batch of ``N`` trials.

    ``x0`` is ``(N, t, d0)``, ``u0`` is ``(N, t-1, du0)``; ``xhat_c`` is the
    common-information estimate of the full state, or ``None`` when the
    strategy does not expose common controls.
    """

    t: int
    x0: np.ndarray
    u0: np.ndarray
    xhat_c: np.ndarray | None


@dataclass
class LocalView:
    """Private information of minor agent ``i`` at time ``t``.

    ``bayes`` and ``llms`` are the agent's own filter estimates of ``x_i(t)``
    (``None`` unless the strategy asked for them).
    """

    t: int
    i: int
    y: np.ndarray
    u: np.ndarray
    bayes: np.ndarray | None = None
    llms: np.ndarray | None = None


class Strategy:
    """Base class.  ``needs`` lists the minor-agent filters to run."""

    name: str = "strategy"
    needs: frozenset = frozenset()
    exposes_ucom: bool = True

    def major(self, t: int, com: CommonView) -> np.ndarray:
        raise NotImplementedError

    def minor(self, t: int, i: int, com: CommonView, loc: LocalView) -> tuple[np.ndarray, np.ndarray | None]:
        """Return ``(u_i, ucom_i)``; ``ucom_i`` may be ``None`` if unknown."""
        raise NotImplementedError


# ------------------------------------------------------------ primitive actions


def act_major(t: int, sched: GainSchedule, xhat_c: np.ndarray) -> np.ndarray:
    """``u_0(t) = -L^com_0(t) x̂(t|c)`` for a batch ``(N, nx)``."""
    return -xhat_c @ sched.L_row(t, 0).T


def _common_part(t, i, sched, xhat_c):
    return -xhat_c @ sched.L_row(t, i).T


def _correction(t, i, sched, xhat_i, xhat_c):
    return -(xhat_i - xhat_c[:, sched.xs[i]]) @ sched.L_loc(i, t).T


def act_minor_optimal(t: int, i: int, sched: GainSchedule, xhat_c, d: DensityState) -> np.ndarray:
    """``u_i = -L^com_i x̂(t|c) - L^loc_i (E[x_i | I_i] - x̂_i(t|c))`` with the Bayes-filter mean."""
    return _common_part(t, i, sched, xhat_c) + _correction(t, i, sched, density_mean(d), xhat_c)


def act_minor_linear(t: int, i: int, sched: GainSchedule, xhat_c, st: LlmsState) -> np.ndarray:
    """As :func:`act_minor_optimal` with the LLMS estimate in place of the conditional mean."""
    return _common_part(t, i, sched, xhat_c) + _correction(t, i, sched, st.xhat, xhat_c)


def is_state_feedback(s, i: int | None = None) -> bool:
    """True when minor agents observe their states exactly (``C_ii = I``, ``v_i ≡ 0``)."""
    agents = range(1, s.n + 1) if i is None else [i]
    for k in agents:
        C = s.sys.Cii[k - 1]
        v = s.noise.v[k - 1]
        if C.shape[0] != C.shape[1] or not np.array_equal(C, np.eye(C.shape[0])):
            return False
        if not (isinstance(v, PointMass) and np.all(v.atoms == 0)):
            return False
    return True


def act_minor_state_feedback(s, t: int, i: int, sched: GainSchedule, xhat_c, x_i) -> np.ndarray:
    """``u_i = -L^com_i x̂(t|c) - L^loc_i (x_i - x̂_i(t|c))``; needs perfect observations."""
    if not is_state_feedback(s, i):
        raise StrategyError(f"minor agent {i} does not observe its state perfectly (need C_ii = I, v_i = 0)")
    return _common_part(t, i, sched, xhat_c) + _correction(t, i, sched, np.atleast_2d(x_i), xhat_c)


# ------------------------------------------------------------ strategies


class CertaintyEquivalent(Strategy):
    """``u_0 = -L^com_0 x̂(t|c)``, ``u_i = -L^com_i x̂(t|c) - L^loc_i (x̂_i - x̂_i(t|c))``.

    ``estimator`` picks the minor agents' estimate ``x̂_i``: ``"bayes"`` (the
    conditional mean, giving the optimal strategy), ``"llms"`` (the best
    linear strategy) or ``"state"`` (perfect observations).  Gains may be
    overridden, e.g. to build perturbed competitors.

    The common control is exact for any gains: the local correction has zero
    conditional mean given the common information.
    """

    def __init__(self, s, estimator: str = "bayes", sched: GainSchedule | None = None, name: str | None = None):
        if estimator not in ("bayes", "llms", "state"):
            raise ValueError(f"unknown estimator {estimator!r}")
        if estimator == "state" and not is_state_feedback(s):
            raise StrategyError("state-feedback strategy needs C_ii = I and v_i = 0 for every minor agent")
        self.s = s
        self.estimator = estimator
        self.sched = sched or gain_schedule(s)
        self.needs = frozenset({estimator} & {"bayes", "llms"})
        self.name = name or {"bayes": "optimal", "llms": "best-linear", "state": "state-feedback"}[estimator]

    def with_gains(self, Lcom=None, Lloc=None, name=None) -> "CertaintyEquivalent":
        sch = self.sched
        new = GainSchedule(
            sch.T,
            sch.Scom,
            sch.Lcom if Lcom is None else np.asarray(Lcom, float),
            sch.DeltaCom,
            sch.Sloc,
            sch.Lloc if Lloc is None else tuple(np.asarray(x, float) for x in Lloc),
            sch.DeltaLoc,
            sch.xs,
            sch.us,
        )
        return CertaintyEquivalent(self.s, self.estimator, new, name or f"{self.name}-perturbed")

    def major(self, t, com):
        return act_major(t, self.sched, com.xhat_c)

    def minor(self, t, i, com, loc):
        xi = {"bayes": loc.bayes, "llms": loc.llms, "state": loc.y[:, -1]}[self.estimator]
        ucom = _common_part(t, i, self.sched, com.xhat_c)
        return ucom + _correction(t, i, self.sched, xi, com.xhat_c), ucom


def optimal(s, sched=None) -> CertaintyEquivalent:
    return CertaintyEquivalent(s, "bayes", sched)


def best_linear(s, sched=None) -> CertaintyEquivalent:
    return CertaintyEquivalent(s, "llms", sched)


def state_feedback(s, sched=None) -> CertaintyEquivalent:
    return CertaintyEquivalent(s, "state", sched)


@dataclass
class CustomLinear(Strategy):
    """Affine strategy over a fixed feature vector.

    Features at time ``t`` are ``[x_0(t-W+1..t); x̂(t|c); x̂_i(t|i); 1]`` for
    minor agent ``i`` (LLMS estimate) and the same without the local estimate
    for the major agent.  Missing history before ``t = 1`` is zero-padded.
    ``major_gains[t-1]`` is ``du0 x F0`` and ``minor_gains[i-1][t-1]`` is
    ``du_i x F_i``.

    The common control follows by replacing ``x̂_i(t|i)`` with ``x̂_i(t|c)``,
    its conditional mean given the common information.
    """

    window: int
    major_gains: list
    minor_gains: list
    name: str = "custom"
    needs: frozenset = field(default=frozenset({"llms"}), init=False)
    exposes_ucom: bool = field(default=True, init=False)

    def __post_init__(self):
        self.major_gains = [np.atleast_2d(np.asarray(g, float)) for g in self.major_gains]
        self.minor_gains = [[np.atleast_2d(np.asarray(g, float)) for g in gi] for gi in self.minor_gains]

    @staticmethod
    def feature_sizes(s, window: int) -> tuple[int, list[int]]:
        topo = s.topology
        base = window * topo.dx[0] + topo.nx
        return base + 1, [base + topo.dx[i] + 1 for i in range(1, topo.n + 1)]

    @classmethod
    def zeros(cls, s, window: int = 1, name: str = "custom") -> "CustomLinear":
        f0, fi = cls.feature_sizes(s, window)
        du = s.topology.du
        return cls(
            window,
            [np.zeros((du[0], f0)) for _ in range(s.T - 1)],
            [[np.zeros((du[i], fi[i - 1])) for _ in range(s.T - 1)] for i in range(1, s.n + 1)],
            name,
        )

    def _window(self, com: CommonView) -> np.ndarray:
        N, t, d0 = com.x0.shape
        hist = com.x0[:, max(0, t - self.window):, :]
        if hist.shape[1] < self.window:
            pad = np.zeros((N, self.window - hist.shape[1], d0))
            hist = np.concatenate([pad, hist], axis=1)
        return hist.reshape(N, -1)

    def major(self, t, com):
        N = com.x0.shape[0]
        feats = np.concatenate([self._window(com), com.xhat_c, np.ones((N, 1))], axis=1)
        return feats @ self.major_gains[t - 1].T

    def minor(self, t, i, com, loc):
        N = com.x0.shape[0]
        base = np.concatenate([self._window(com), com.xhat_c], axis=1)
        one = np.ones((N, 1))
        G = self.minor_gains[i - 1][t - 1]
        u = np.concatenate([base, loc.llms, one], axis=1) @ G.T
        ucom = np.concatenate([base, self._xhat_ci(com, i), one], axis=1) @ G.T
        return u, ucom

    def _xhat_ci(self, com, i):
        return com.xhat_c[:, self._xs[i]]

    def bind(self, s) -> "CustomLinear":
        """Attach the scenario's state slices and check gain shapes."""
        f0, fi = self.feature_sizes(s, self.window)
        du = s.topology.du
        if len(self.major_gains) != s.T - 1 or len(self.minor_gains) != s.n:
            raise StrategyError("custom gains need T-1 major entries and one list per minor agent")
        for g in self.major_gains:
            if g.shape != (du[0], f0):
                raise StrategyError(f"major gain has shape {g.shape}, expected {(du[0], f0)}")
        for i, gi in enumerate(self.minor_gains, start=1):
            if len(gi) != s.T - 1:
                raise StrategyError(f"minor agent {i} needs T-1 gain matrices")
            for g in gi:
                if g.shape != (du[i], fi[i - 1]):
                    raise StrategyError(f"minor agent {i} gain has shape {g.shape}, expected {(du[i], fi[i - 1])}")
        self._xs = s.topology.xs
        return self

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "name": self.name,
            "major_gains": [g.tolist() for g in self.major_gains],
            "minor_gains": [[g.tolist() for g in gi] for gi in self.minor_gains],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CustomLinear":
        extra = set(d) - {"window", "name", "major_gains", "minor_gains"}
        if extra:
            raise StrategyError(f"unknown keys in custom strategy: {sorted(extra)}")
        return cls(int(d["window"]), d["major_gains"], d["minor_gains"], d.get("name", "custom"))

    @classmethod
    def load(cls, path) -> "CustomLinear":
        return cls.from_dict(json.loads(Path(path).read_text()))


class FunctionStrategy(Strategy):
    """Arbitrary strategy from callables; the common control is unknown.

    ``major_fn(t, com)`` and ``minor_fn(t, i, com, loc)`` return actions.  The
    common view carries no ``xhat_c``; the control split for such strategies
    is estimated by regression across a batch.
    """

    exposes_ucom = False

    def __init__(self, major_fn: Callable, minor_fn: Callable, needs=(), name: str = "function"):
        self.major_fn, self.minor_fn = major_fn, minor_fn
        self.needs = frozenset(needs)
        self.name = name

    def major(self, t, com):
        return self.major_fn(t, com)

    def minor(self, t, i, com, loc):
        return self.minor_fn(t, i, com, loc), None
