"""Primitive draws, closed-loop rollouts and Monte Carlo cost evaluation.

Everything is batched: a :class:`PrimitiveDraw` and a :class:`Trajectory`
hold ``N`` trials along their leading axis.  Trial ``k`` of a run with seed
``s`` always sees the same primitive variables, whatever the chunking, so
strategies evaluated with the same seed are compared on common random numbers.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .controllers import CommonView, LocalView, Strategy
from .estimators import (
    cached_filter,
    FilterConfig,
    FilterDegeneracyError,
    common_filter_init,
    common_filter_step,
    density_mean,
    llms_filter_init,
    llms_filter_step,
    llms_schedule,
)
from .rng import uniforms

__all__ = [
    "PrimitiveDraw",
    "Trajectory",
    "CostReport",
    "draw_batch",
    "draw_primitives",
    "rollout",
    "run_batch",
    "evaluate",
    "replay_residual",
    "paired_difference",
    "mean_and_se",
    "DEFAULT_CHUNK",
]

DEFAULT_CHUNK = 4000


@dataclass(frozen=True, eq=False)
class PrimitiveDraw:
    """Initial states ``x1 (N, nx)``, process noise ``w (N, T-1, nx)`` and
    observation noise ``v (N, T, ny)``.

    ``weights`` is ``None`` for Monte Carlo draws; exact enumerations set it
    to the outcome probabilities.  ``seed`` and ``trial_start`` identify the
    draws for any auxiliary randomness (particle filters).
    """

    x1: np.ndarray
    w: np.ndarray
    v: np.ndarray
    weights: np.ndarray | None = None
    seed: int = 0
    trial_start: int = 0

    @property
    def N(self) -> int:
        return self.x1.shape[0]

    def take(self, idx) -> "PrimitiveDraw":
        return replace(
            self,
            x1=self.x1[idx],
            w=self.w[idx],
            v=self.v[idx],
            weights=None if self.weights is None else self.weights[idx],
        )


def draw_batch(s, seed: int, start: int, count: int) -> PrimitiveDraw:
    """Draws for trials ``start .. start + count - 1``."""
    topo, nz, T = s.topology, s.noise, s.T
    x1 = np.empty((count, topo.nx))
    w = np.empty((count, T - 1, topo.nx))
    v = np.empty((count, T, topo.ny))
    for i in range(topo.n + 1):
        d = nz.x1[i]
        x1[:, topo.xs[i]] = d.transform(uniforms(seed, "x1", i, 0, start, count, d.n_uniforms))
        d = nz.w[i]
        for t in range(1, T):
            w[:, t - 1, topo.xs[i]] = d.transform(uniforms(seed, "w", i, t, start, count, d.n_uniforms))
    for i in range(1, topo.n + 1):
        d = nz.v[i - 1]
        for t in range(1, T + 1):
            v[:, t - 1, topo.ys[i - 1]] = d.transform(uniforms(seed, "v", i, t, start, count, d.n_uniforms))
    return PrimitiveDraw(x1, w, v, None, seed, start)


def draw_primitives(s, seed: int, trial_index: int) -> PrimitiveDraw:
    """The single trial ``trial_index`` (a batch of size one)."""
    return draw_batch(s, seed, trial_index, 1)


@dataclass(eq=False)
class Trajectory:
    """A batch of closed-loop rollouts.

    ``x (N, T, nx)``, ``u (N, T-1, nu)``, ``y (N, T, ny)``; ``stage_cost``
    ``(N, T)`` with the terminal cost in the last column.  ``ucom`` is the
    strategy's exact common control (``None`` if it does not expose one);
    ``xhat_c`` the common-information estimate; ``bayes`` and ``llms`` the
    per-minor filter estimates ``(N, T, dx_i)`` that were run.
    """

    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    stage_cost: np.ndarray
    draw: PrimitiveDraw
    ucom: np.ndarray | None = None
    xhat_c: np.ndarray | None = None
    bayes: list | None = None
    llms: list | None = None
    strategy: str = ""

    @property
    def N(self) -> int:
        return self.x.shape[0]

    @property
    def cost(self) -> np.ndarray:
        return self.stage_cost.sum(axis=1)

    @property
    def weights(self):
        return self.draw.weights

    @staticmethod
    def concat(parts: list["Trajectory"]) -> "Trajectory":
        if len(parts) == 1:
            return parts[0]

        def cat(get):
            vals = [get(p) for p in parts]
            if vals[0] is None:
                return None
            if isinstance(vals[0], list):
                return [np.concatenate(v) for v in zip(*vals)]
            return np.concatenate(vals)

        d0 = parts[0].draw
        draw = PrimitiveDraw(
            cat(lambda p: p.draw.x1),
            cat(lambda p: p.draw.w),
            cat(lambda p: p.draw.v),
            cat(lambda p: p.draw.weights),
            d0.seed,
            d0.trial_start,
        )
        return Trajectory(
            cat(lambda p: p.x),
            cat(lambda p: p.u),
            cat(lambda p: p.y),
            cat(lambda p: p.stage_cost),
            draw,
            cat(lambda p: p.ucom),
            cat(lambda p: p.xhat_c),
            cat(lambda p: p.bayes),
            cat(lambda p: p.llms),
            parts[0].strategy,
        )


def rollout(
    s,
    strategy: Strategy,
    draw: PrimitiveDraw,
    record: tuple[str, ...] = (),
    filter_config: FilterConfig | None = None,
) -> Trajectory:
    """Simulate the closed loop for every trial in ``draw``.

    ``record`` names extra minor-agent filters (``"bayes"``, ``"llms"``) to run
    and store even if the strategy does not use them; the verification
    harness needs both estimates.  Filter degeneracy is re-raised with the
    global trial indices attached.
    """
    topo, T, N = s.topology, s.T, draw.N
    xs, us, ys = topo.xs, topo.us, topo.ys
    n = topo.n
    A, B, C = s.A, s.B, s.C
    Q, R, QT = s.Qs, s.Rs, s.QTs
    if hasattr(strategy, "bind"):
        strategy.bind(s)
    run = set(strategy.needs) | set(record)
    exposes = strategy.exposes_ucom

    x = np.empty((N, T, topo.nx))
    u = np.zeros((N, T - 1, topo.nu))
    y = np.empty((N, T, topo.ny))
    cost = np.empty((N, T))
    ucom = np.zeros((N, T - 1, topo.nu)) if exposes else None
    xhat_c = np.empty((N, T, topo.nx)) if exposes else None
    bayes = [np.empty((N, T, topo.dx[i])) for i in range(1, n + 1)] if "bayes" in run else None
    llms = [np.empty((N, T, topo.dx[i])) for i in range(1, n + 1)] if "llms" in run else None

    bf = [cached_filter(s, i, filter_config, draw.seed) for i in range(1, n + 1)] if bayes is not None else None
    ls = [llms_schedule(s, i) for i in range(1, n + 1)] if llms is not None else None
    bstate = [None] * n
    lstate = [None] * n

    x[:, 0] = draw.x1
    if exposes:
        xhat_c[:, 0] = common_filter_init(s, draw.x1[:, xs[0]])
    for t in range(1, T + 1):
        k = t - 1
        xt = x[:, k]
        y[:, k] = xt @ C.T + draw.v[:, k]
        for i in range(1, n + 1):
            yi = y[:, k, ys[i - 1]]
            if t == 1:
                prev = None
            else:
                prev = (x[:, k - 1, xs[0]], u[:, k - 1, us[i]], u[:, k - 1, us[0]])
            try:
                if bayes is not None:
                    bstate[i - 1] = bf[i - 1].init(yi, draw.trial_start) if prev is None else bf[i - 1].step(bstate[i - 1], yi, *prev)
                    bayes[i - 1][:, k] = density_mean(bstate[i - 1])
            except FilterDegeneracyError as exc:
                raise FilterDegeneracyError(f"minor agent {i}: {exc}", exc.trials) from exc
            if llms is not None:
                if prev is None:
                    lstate[i - 1] = llms_filter_init(ls[i - 1], yi)
                else:
                    lstate[i - 1] = llms_filter_step(s, i, ls[i - 1], lstate[i - 1], yi, *prev)
                llms[i - 1][:, k] = lstate[i - 1].xhat
        if t == T:
            cost[:, k] = np.einsum("ni,ij,nj->n", xt, QT, xt)
            break

        com = CommonView(t, x[:, :t, xs[0]], u[:, : t - 1, us[0]], xhat_c[:, k] if exposes else None)
        u[:, k, us[0]] = strategy.major(t, com)
        for i in range(1, n + 1):
            loc = LocalView(
                t,
                i,
                y[:, :t, ys[i - 1]],
                u[:, : t - 1, us[i]],
                bayes[i - 1][:, k] if bayes is not None else None,
                llms[i - 1][:, k] if llms is not None else None,
            )
            ui, uci = strategy.minor(t, i, com, loc)
            u[:, k, us[i]] = ui
            if exposes:
                if uci is None:
                    raise ValueError(f"strategy {strategy.name!r} claims to expose u^com but returned None")
                ucom[:, k, us[i]] = uci
        uk = u[:, k]
        cost[:, k] = np.einsum("ni,ij,nj->n", xt, Q, xt) + np.einsum("ni,ij,nj->n", uk, R, uk)
        x[:, k + 1] = xt @ A.T + uk @ B.T + draw.w[:, k]
        if exposes:
            ucom[:, k, us[0]] = uk[:, us[0]]
            xhat_c[:, k + 1] = common_filter_step(
                s,
                xhat_c[:, k],
                x[:, k + 1, xs[0]],
                xt[:, xs[0]],
                uk[:, us[0]],
                [ucom[:, k, us[i]] for i in range(1, n + 1)],
            )
    return Trajectory(x, u, y, cost, draw, ucom, xhat_c, bayes, llms, getattr(strategy, "name", ""))


def _chunks(N: int, chunk: int):
    return [(a, min(chunk, N - a)) for a in range(0, N, chunk)]


def run_batch(
    s,
    strategy: Strategy,
    N: int,
    seed: int,
    chunk: int = DEFAULT_CHUNK,
    record=(),
    filter_config=None,
    parallel: bool = False,
    workers: int | None = None,
) -> Trajectory:
    """Roll out trials ``0..N-1`` in chunks and return one concatenated batch."""
    parts = _map_chunks(
        lambda a, c: rollout(s, strategy, draw_batch(s, seed, a, c), record, filter_config),
        N,
        chunk,
        parallel,
        workers,
    )
    return Trajectory.concat(parts)


def _map_chunks(fn, N, chunk, parallel, workers):
    jobs = _chunks(N, chunk)
    if parallel and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(lambda job: fn(*job), jobs))
    return [fn(a, c) for a, c in jobs]


def mean_and_se(values: np.ndarray, weights: np.ndarray | None = None) -> tuple[float, float]:
    """Sample mean and standard error; with ``weights`` the exact mean and 0."""
    values = np.asarray(values, float)
    if weights is not None:
        return float(np.dot(weights, values)), 0.0
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


@dataclass
class CostReport:
    """Monte Carlo (or exact) cost of one strategy.

    ``parts`` maps ``"J"``, ``"Jcom"``, ``"Jloc[i]"``, ``"Jstoc"`` and
    ``"residual"`` to per-trial arrays when a decomposition was requested.
    """

    strategy: str
    N: int
    seed: int
    mean: float
    se: float
    per_trial: np.ndarray
    parallel: bool = False
    parts: dict = field(default_factory=dict)
    weights: np.ndarray | None = None

    def summary(self) -> dict:
        out = {
            "strategy": self.strategy,
            "N": self.N,
            "seed": self.seed,
            "mode": "parallel" if self.parallel else "sequential",
            "J": {"mean": self.mean, "se": self.se},
        }
        if self.parts:
            dec = {}
            for k, v in self.parts.items():
                m, se = mean_and_se(v, self.weights)
                dec[k] = {"mean": m, "se": se}
            out["decomposition"] = dec
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf)
        keys = list(self.parts)
        wr.writerow(["trial", "J", *[k for k in keys if k != "J"]])
        for k in range(self.N):
            wr.writerow([k, repr(float(self.per_trial[k])), *[repr(float(self.parts[c][k])) for c in keys if c != "J"]])
        return buf.getvalue()


def evaluate(
    s,
    strategy: Strategy,
    N: int,
    seed: int,
    chunk: int = DEFAULT_CHUNK,
    parallel: bool = False,
    decompose: bool = False,
    workers: int | None = None,
    filter_config=None,
) -> CostReport:
    """Mean and standard error of the total cost over ``N`` trials.

    Trials are streamed in chunks; only per-trial scalars are kept.  With
    ``decompose`` the per-trial common, local and stochastic terms of the
    completion-of-squares identity are returned as well.
    """
    if N < 1:
        raise ValueError("need at least one trial")
    from .verification import total_decomposition_terms

    def work(a, c):
        tr = rollout(s, strategy, draw_batch(s, seed, a, c), (), filter_config)
        if decompose:
            return total_decomposition_terms(s, tr)
        return {"J": tr.cost}

    parts = _map_chunks(work, N, chunk, parallel, workers)
    merged = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    J = merged["J"]
    m, se = mean_and_se(J)
    return CostReport(
        getattr(strategy, "name", ""), N, seed, m, se, J, parallel, merged if decompose else {}
    )


def replay_residual(s, traj: Trajectory) -> float:
    """Largest violation of the dynamics and observation equations along ``traj``."""
    x, u, y, d = traj.x, traj.u, traj.y, traj.draw
    r1 = np.abs(x[:, 0] - d.x1).max(initial=0.0)
    pred = x[:, :-1] @ s.A.T + u @ s.B.T + d.w
    r2 = np.abs(x[:, 1:] - pred).max(initial=0.0)
    r3 = np.abs(y - (x @ s.C.T + d.v)).max(initial=0.0)
    return float(max(r1, r2, r3))


def paired_difference(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of ``a - b`` for per-trial costs on common draws."""
    return mean_and_se(np.asarray(a) - np.asarray(b))
