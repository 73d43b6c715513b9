"""Ready-made scenarios used by the tests, scripts and examples."""

from __future__ import annotations

import numpy as np

from .model import AgentTopology, CostSpec, NoiseSpec, Scenario, SystemMatrices
from .noise import Gaussian, PointMass, point_mass_at_zero

__all__ = [
    "scalar",
    "scalar_gaussian",
    "deterministic",
    "micro_instance",
    "bimodal_observation",
    "two_minor_binary",
    "state_feedback_scenario",
    "random_scenario",
    "BUILDERS",
]


def _binary(a: float = 1.0) -> PointMass:
    return PointMass([[-a], [a]], [0.5, 0.5])


def scalar(
    n: int = 1,
    A00=1.0,
    Ai0=0.5,
    Aii=1.0,
    B00=1.0,
    Bi0=0.0,
    Bii=1.0,
    C=1.0,
    Q=None,
    R=None,
    QT=None,
    x1=None,
    w=None,
    v=None,
    T: int = 10,
    seed: int | None = None,
    name: str = "",
) -> Scenario:
    """All-scalar scenario with ``n`` identical minor agents.

    Per-minor parameters may be scalars or length-``n`` sequences; noise
    arguments may be a single distribution or one per agent.
    """
    per = lambda v: list(np.broadcast_to(np.asarray(v, float), (n,)))  # noqa: E731
    topo = AgentTopology(n, [1] * (n + 1), [1] * (n + 1), [1] * n)
    sysm = SystemMatrices(A00, per(Ai0), per(Aii), B00, per(Bi0), per(Bii), per(C))
    Q = np.eye(n + 1) if Q is None else Q
    R = np.eye(n + 1) if R is None else R
    QT = Q if QT is None else QT

    def agents(d, count, default):
        if d is None:
            return tuple(default() for _ in range(count))
        if isinstance(d, (list, tuple)):
            return tuple(d)
        return (d,) * count

    noise = NoiseSpec(
        agents(x1, n + 1, lambda: Gaussian([[1.0]])),
        agents(w, n + 1, lambda: Gaussian([[1.0]])),
        agents(v, n, lambda: Gaussian([[1.0]])),
    )
    return Scenario(topo, sysm, CostSpec(Q, R, QT), noise, T, seed, name)


def scalar_gaussian(T: int = 10, seed: int | None = 0) -> Scenario:
    """One minor agent, scalar dynamics, Gaussian noise everywhere."""
    Q = np.array([[1.0, 0.3], [0.3, 1.0]])
    return scalar(
        1,
        A00=0.9,
        Ai0=0.5,
        Aii=1.0,
        B00=1.0,
        Bi0=0.3,
        Bii=1.0,
        C=1.0,
        Q=Q,
        R=np.diag([1.0, 0.5]),
        x1=(Gaussian([[1.0]]), Gaussian([[1.0]])),
        w=(Gaussian([[0.5]]), Gaussian([[0.5]])),
        v=Gaussian([[0.8]]),
        T=T,
        seed=seed,
        name="scalar-gaussian",
    )


def deterministic(n: int = 1, T: int = 5) -> Scenario:
    """Every primitive variable is the point mass at zero.

    Zero-mean noise forces ``x(1) = 0``; tests that need a nonzero start pass
    their own :class:`~mmlq.simulation.PrimitiveDraw` to the rollout.
    """
    zero = point_mass_at_zero(1)
    return scalar(n, x1=zero, w=zero, v=zero, T=T, name="deterministic")


def micro_instance(T: int = 3) -> Scenario:
    """n = 1, binary initial states, asymmetric binary observation noise, no process noise."""
    v = PointMass([[-1.0], [3.0]], [0.75, 0.25])
    Q = np.array([[1.0, 0.2], [0.2, 1.0]])
    return scalar(
        1,
        A00=1.0,
        Ai0=0.5,
        Aii=1.0,
        B00=1.0,
        Bi0=0.3,
        Bii=1.0,
        C=1.0,
        Q=Q,
        R=np.diag([1.0, 0.5]),
        x1=(_binary(1.0), _binary(1.0)),
        w=point_mass_at_zero(1),
        v=v,
        T=T,
        name="micro-instance",
    )


def bimodal_observation(T: int = 10, seed: int | None = 0) -> Scenario:
    """Observation noise ``±2`` with equal probability; Gaussian process noise."""
    return scalar(
        1,
        A00=0.9,
        Ai0=0.5,
        Aii=1.0,
        B00=1.0,
        Bi0=0.3,
        Bii=1.0,
        C=1.0,
        Q=np.eye(2),
        R=np.diag([1.0, 0.3]),
        x1=(Gaussian([[1.0]]), Gaussian([[1.0]])),
        w=(Gaussian([[0.25]]), Gaussian([[0.25]])),
        v=_binary(2.0),
        T=T,
        seed=seed,
        name="bimodal-observation",
    )


def two_minor_binary(T: int = 2) -> Scenario:
    """Two minor agents, binary initial states and observation noise."""
    Q = np.array([[1.0, 0.2, 0.1], [0.2, 1.0, 0.3], [0.1, 0.3, 1.0]])
    return scalar(
        2,
        A00=1.0,
        Ai0=[0.5, -0.4],
        Aii=[1.0, 0.8],
        B00=1.0,
        Bi0=[0.3, 0.2],
        Bii=[1.0, 0.7],
        C=[1.0, 1.0],
        Q=Q,
        R=np.diag([1.0, 0.5, 0.8]),
        x1=(_binary(1.0), _binary(1.0), _binary(0.5)),
        w=(_binary(0.5), point_mass_at_zero(1), point_mass_at_zero(1)),
        v=(PointMass([[-1.0], [3.0]], [0.75, 0.25]), _binary(1.0)),
        T=T,
        name="two-minor-binary",
    )


def state_feedback_scenario(n: int = 2, T: int = 8, seed: int | None = 0) -> Scenario:
    """Minor agents observe their own state exactly (``C = 1``, ``v = 0``)."""
    return scalar(
        n,
        A00=0.95,
        Ai0=np.linspace(0.5, -0.3, n),
        Aii=np.linspace(1.0, 0.7, n),
        Bi0=0.2,
        Q=np.eye(n + 1) + 0.1,
        x1=Gaussian([[1.0]]),
        w=Gaussian([[0.3]]),
        v=point_mass_at_zero(1),
        T=T,
        seed=seed,
        name="state-feedback",
    )


def random_scenario(rng: np.random.Generator, max_dim: int = 3, max_n: int = 3, max_T: int = 20) -> Scenario:
    """Random valid scenario: block dimensions up to ``max_dim``, up to ``max_n`` minors."""
    n = int(rng.integers(1, max_n + 1))
    dx = [int(rng.integers(1, max_dim + 1)) for _ in range(n + 1)]
    du = [int(rng.integers(1, max_dim + 1)) for _ in range(n + 1)]
    dy = [int(rng.integers(1, max_dim + 1)) for _ in range(n)]
    T = int(rng.integers(2, max_T + 1))
    g = lambda r, c, scale=0.6: scale * rng.standard_normal((r, c))  # noqa: E731
    sysm = SystemMatrices(
        g(dx[0], dx[0]),
        [g(dx[i], dx[0]) for i in range(1, n + 1)],
        [g(dx[i], dx[i]) for i in range(1, n + 1)],
        g(dx[0], du[0]),
        [g(dx[i], du[0]) for i in range(1, n + 1)],
        [g(dx[i], du[i]) for i in range(1, n + 1)],
        [g(dy[i - 1], dx[i], 1.0) for i in range(1, n + 1)],
    )
    nx, nu = sum(dx), sum(du)

    def psd(k, rank=None):
        F = rng.standard_normal((k, rank or k))
        return F @ F.T / k

    Q = psd(nx, int(rng.integers(1, nx + 1)))
    QT = psd(nx)
    R = psd(nu) + 0.1 * np.eye(nu)
    topo = AgentTopology(n, dx, du, dy)

    def cov(k):
        return psd(k) + 0.05 * np.eye(k)

    noise = NoiseSpec(
        tuple(Gaussian(cov(d)) for d in dx),
        tuple(Gaussian(cov(d)) for d in dx),
        tuple(Gaussian(cov(d)) for d in dy),
    )
    return Scenario(topo, sysm, CostSpec(Q, R, QT), noise, T, None, "random")


BUILDERS = {
    "scalar-gaussian": scalar_gaussian,
    "micro-instance": micro_instance,
    "bimodal-observation": bimodal_observation,
    "two-minor-binary": two_minor_binary,
    "state-feedback": state_feedback_scenario,
    "deterministic": deterministic,
}
