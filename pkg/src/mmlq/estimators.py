"""State estimators used by the strategies.

Three filters live here:

* the common-information estimate ``x̂(t|c)``, a linear recursion driven by the
  major agent's state and the minor agents' common controls;
* the minor agent's LLMS estimate, a Kalman-type recursion whose gains and
  error covariances are precomputed because they do not depend on controls;
* the minor agent's conditional-mean estimate, computed by a Bayes filter.

All filters are batched: leading axis ``N`` runs over independent trials.

The Bayes filter works in relative coordinates.  Write ``x_i(t) = a_i(t) +
ξ_i(t)`` where the anchor ``a_i`` follows the noise-free dynamics driven by the
realized inputs and ``ξ_i(1) = x_i(1)``, ``ξ_i(t+1) = A_ii ξ_i(t) + w_i(t)``.
Then ``y_i(t) - C_ii a_i(t) = C_ii ξ_i(t) + v_i(t)``, so the posterior of ``ξ_i``
is control-free and a grid can be laid out once per time step for every trial.
The major agent's transition density is constant in ``x_i`` and is dropped.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .noise import Distribution, Gaussian, PointMass
from .riccati import op_F, op_K
from .rng import uniforms

__all__ = [
    "FilterDegeneracyError",
    "common_filter_init",
    "common_filter_step",
    "LlmsSchedule",
    "LlmsState",
    "llms_schedule",
    "llms_filter_init",
    "llms_filter_step",
    "FilterConfig",
    "DensityState",
    "BayesFilter",
    "cached_filter",
    "bayes_filter_init",
    "bayes_filter_step",
    "density_mean",
    "density_to_csv",
    "schedules_to_json",
]


class FilterDegeneracyError(FloatingPointError):
    """Observation has (numerically) zero likelihood under the filter's support."""

    def __init__(self, message: str, trials=None):
        super().__init__(message)
        self.trials = trials


# ------------------------------------------------------------ common estimate


def common_filter_init(s, x0_1: np.ndarray) -> np.ndarray:
    """``x̂(1|c) = [x_0(1); 0; ...; 0]`` for a batch ``x0_1`` of shape ``(N, d0)``."""
    x0_1 = np.atleast_2d(x0_1)
    out = np.zeros((x0_1.shape[0], s.topology.nx))
    out[:, s.topology.xs[0]] = x0_1
    return out


def common_filter_step(s, xhat_c, x0_next, x0_now, u0, ucom_minors) -> np.ndarray:
    """One step of the common-information estimate.

    Parameters
    ----------
    xhat_c : (N, nx) estimate at ``t``.
    x0_next, x0_now : (N, d0) realized major states at ``t+1`` and ``t``.
    u0 : (N, du0) major action at ``t``.
    ucom_minors : sequence of (N, du_i), the minors' common controls at ``t``.
    """
    topo = s.topology
    cur = np.array(xhat_c, dtype=float, copy=True)
    cur[:, topo.xs[0]] = x0_now
    u = np.concatenate([u0, *ucom_minors], axis=1)
    nxt = cur @ s.A.T + u @ s.B.T
    # Adding w0 = x0_next - A00 x0 - B00 u0 makes component 0 equal x0_next.
    nxt[:, topo.xs[0]] = x0_next
    return nxt


# ------------------------------------------------------------ LLMS filter


@dataclass(frozen=True, eq=False)
class LlmsSchedule:
    """Gains ``K[t-1]`` and error covariances ``P[t-1]`` for ``t = 1..T``."""

    K: np.ndarray
    P: np.ndarray

    def to_dict(self):
        return {"K": self.K.tolist(), "P": self.P.tolist()}


def llms_schedule(s, i: int) -> LlmsSchedule:
    """Precompute the LLMS gains of minor agent ``i``.

    At ``t = 1`` the first observation is folded in with the prior covariance
    ``Σx_i`` (no process noise yet); afterwards the predictor-form operators run.
    """
    Aii, _, _, _, C = s.local(i)
    Sx, Sw, Sv = s.noise.Sigma_x(i), s.noise.Sigma_w(i), s.noise.Sigma_v(i)
    d = Aii.shape[0]
    K = np.empty((s.T, d, C.shape[0]))
    P = np.empty((s.T, d, d))
    K[0] = op_K(Sx, np.eye(d), C, np.zeros((d, d)), Sv)
    P[0] = op_F(Sx, np.eye(d), C, np.zeros((d, d)), Sv)
    for k in range(1, s.T):
        K[k] = op_K(P[k - 1], Aii, C, Sw, Sv)
        P[k] = op_F(P[k - 1], Aii, C, Sw, Sv)
    return LlmsSchedule(K, P)


@dataclass(frozen=True, eq=False)
class LlmsState:
    t: int
    xhat: np.ndarray
    P: np.ndarray
    K: np.ndarray


def llms_filter_init(sched: LlmsSchedule, y1: np.ndarray) -> LlmsState:
    y1 = np.atleast_2d(y1)
    return LlmsState(1, y1 @ sched.K[0].T, sched.P[0], sched.K[0])


def llms_filter_step(s, i, sched: LlmsSchedule, st: LlmsState, y_i, x0_prev, u_i_prev, u0_prev) -> LlmsState:
    Aii, Ai0, Bii, Bi0, C = s.local(i)
    pred = st.xhat @ Aii.T + x0_prev @ Ai0.T + u_i_prev @ Bii.T + u0_prev @ Bi0.T
    k = st.t  # index of t+1 in 0-based storage
    innov = y_i - pred @ C.T
    return LlmsState(st.t + 1, pred + innov @ sched.K[k].T, sched.P[k], sched.K[k])


# ------------------------------------------------------------ Bayes filter


@dataclass(frozen=True)
class FilterConfig:
    grid_nodes: int = 1025
    grid_width: float = 8.0
    n_particles: int = 4096
    resample_threshold: float = 0.5
    max_atoms: int = 20000
    pmf_tol: float = 1e-9
    closed_form_gaussian: bool = True
    kernel_rank_tol: float = 1e-14


@dataclass(frozen=True, eq=False)
class DensityState:
    """Posterior of ``ξ_i(t)`` for a batch of trials.

    ``points`` is either shared, ``(J, d)``, or per trial, ``(N, J, d)``;
    ``weights`` is ``(N, J)`` with rows summing to one.  ``anchor`` is
    ``(N, d)``; the state estimate is ``anchor + Σ_j weights_j points_j``.
    ``bounds`` records the grid support when ``tag == "grid"``.
    """

    tag: str
    t: int
    anchor: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    bounds: tuple[float, float] | None = None
    trial_start: int = 0

    @property
    def shared(self) -> bool:
        return self.points.ndim == 2


def density_mean(d: DensityState) -> np.ndarray:
    """Posterior mean of ``x_i(t)`` for every trial, ``(N, d)``."""
    if d.shared:
        rel = d.weights @ d.points
    else:
        rel = np.einsum("nj,njd->nd", d.weights, d.points)
    return d.anchor + rel


def _normalize(logw: np.ndarray, t: int, start: int):
    """Turn per-trial log masses into weights; raise on vanishing total mass."""
    peak = logw.max(axis=1, keepdims=True)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(under="ignore"):
        w = np.exp(logw - safe)
    mass = w.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        total = safe + np.log(mass)
    _raise_if_degenerate(total, t, start)
    w /= mass
    return w


def _normalize_scaled(logl: np.ndarray, dens: np.ndarray, t: int, start: int):
    """Weights proportional to ``exp(logl) * dens`` with ``dens >= 0``; same checks as :func:`_normalize`."""
    peak = logl.max(axis=1, keepdims=True)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(under="ignore"):
        w = np.exp(logl - safe)
    w *= dens
    mass = w.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        total = safe + np.log(mass)
    _raise_if_degenerate(total, t, start)
    w /= mass
    return w


def _raise_if_degenerate(total: np.ndarray, t: int, start: int) -> None:
    bad = ~np.isfinite(total[:, 0]) | (total[:, 0] < np.log(1e-300))
    if np.any(bad):
        idx = (np.flatnonzero(bad) + start).tolist()
        raise FilterDegeneracyError(
            f"filter degeneracy at t={t}: observation has zero likelihood under the "
            f"filter support (trials {idx[:5]}{'...' if len(idx) > 5 else ''})",
            trials=idx,
        )


def _systematic(weights: np.ndarray, u: np.ndarray, m: int) -> np.ndarray:
    """Systematic resampling indices ``(N, m)`` from ``weights`` ``(N, J)`` and one uniform per row."""
    cdf = np.cumsum(weights, axis=1)
    cdf[:, -1] = 1.0
    pos = (np.arange(m)[None, :] + u[:, None]) / m
    idx = np.empty((weights.shape[0], m), dtype=np.int64)
    for n in range(weights.shape[0]):
        idx[n] = np.searchsorted(cdf[n], pos[n], side="right")
    return np.minimum(idx, weights.shape[1] - 1)


class BayesFilter:
    """Conditional-mean filter for minor agent ``i``.

    The representation is picked once from the noise families:

    * ``gaussian`` when the initial state, process noise and observation
      noise of agent ``i`` are all Gaussian (and ``closed_form_gaussian`` is
      set): the conditional mean is then the Kalman recursion, stored as a
      single point of unit weight per trial;
    * ``atoms`` when the observation noise is discrete, or when both the
      initial state and the process noise are discrete (exact finite support);
    * ``grid`` for scalar states with continuous noise;
    * ``particles`` otherwise.

    Grid mode lays ``grid_nodes`` trapezoid nodes over ``±grid_width`` prior
    standard deviations of ``ξ_i(t)``.  Particle mode uses a bootstrap filter
    with systematic resampling whenever the effective sample size drops below
    ``resample_threshold * n_particles``.
    """

    def __init__(self, s, i: int, config: FilterConfig | None = None, seed: int = 0):
        self.s, self.i = s, i
        self.cfg = config or FilterConfig()
        self.seed = seed
        Aii, Ai0, Bii, Bi0, C = s.local(i)
        self.Aii, self.Ai0, self.Bii, self.Bi0, self.C = Aii, Ai0, Bii, Bi0, C
        self.d = Aii.shape[0]
        self.x1: Distribution = s.noise.x1[i]
        self.w: Distribution = s.noise.w[i]
        self.v: Distribution = s.noise.v[i - 1]
        gauss = all(isinstance(dist, Gaussian) for dist in (self.x1, self.w, self.v))
        if gauss and self.cfg.closed_form_gaussian:
            self.mode = "gaussian"
            self.kalman = llms_schedule(s, i)
        elif self.v.discrete or (self.x1.discrete and self.w.discrete):
            self.mode = "atoms"
        elif self.d == 1:
            self.mode = "grid"
        else:
            self.mode = "particles"
        if self.v.discrete and not (self.x1.discrete and self.w.discrete):
            if C.shape[0] != C.shape[1] or np.linalg.matrix_rank(C) < self.d:
                raise ValueError(
                    "discrete observation noise with a continuous state needs an invertible C_ii"
                )
            self.Cinv = np.linalg.inv(C)
        # Prior variance of ξ_i(t) sets the grid support.
        V = [np.atleast_2d(self.x1.cov())]
        for _ in range(1, s.T):
            V.append(Aii @ V[-1] @ Aii.T + self.w.cov())
        self.V = V
        self._nodes: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._kernels: dict[tuple, np.ndarray] = {}

    # ---- helpers

    def nodes(self, t: int):
        """Grid nodes ``(J, 1)`` and trapezoid weights ``(J,)`` at time ``t``."""
        if t not in self._nodes:
            half = self.cfg.grid_width * float(np.sqrt(self.V[t - 1][0, 0]))
            xs = np.linspace(-half, half, self.cfg.grid_nodes)
            q = np.full(xs.size, xs[1] - xs[0])
            q[[0, -1]] *= 0.5
            self._nodes[t] = (xs[:, None], q)
        return self._nodes[t]

    def _log_obs(self, resid: np.ndarray) -> np.ndarray:
        if isinstance(self.v, PointMass):
            return self.v.log_pmf(resid, tol=self.cfg.pmf_tol)
        return self.v.logpdf(resid)

    def _prior_log_density(self, t: int, pts: np.ndarray, prev: DensityState | None) -> np.ndarray:
        """Log predictive density of ξ(t) at ``pts`` (``(N, K, d)`` or ``(K, d)``)."""
        if t == 1:
            return self.x1.logpdf(pts)
        A = self.Aii
        src = prev.points @ A.T
        if prev.shared and pts.ndim == 2:
            with np.errstate(divide="ignore"):
                return np.log(self._shared_prior_density(t, pts, prev))
        if pts.ndim == 2:
            pts = np.broadcast_to(pts, (prev.weights.shape[0],) + pts.shape)
        if src.ndim == 2:
            src = np.broadcast_to(src, (prev.weights.shape[0],) + src.shape)
        diff = pts[:, :, None, :] - src[:, None, :, :]
        with np.errstate(divide="ignore"):
            logm = np.log(prev.weights)
        return logsumexp(self.w.logpdf(diff) + logm[:, None, :], axis=2)

    def _shared_prior_density(self, t: int, pts: np.ndarray, prev: DensityState) -> np.ndarray:
        """Predictive density ``(N, K)`` at shared points ``(K, d)`` from a shared-support posterior."""
        src = prev.points @ self.Aii.T
        key = ("shared", t, id(prev.points), pts.shape)
        kern = self._kernels.get(key)
        if kern is None:
            kern = self._factor_kernel(np.exp(self.w.logpdf(pts[:, None, :] - src[None, :, :])))
            self._kernels[key] = kern
        if isinstance(kern, tuple):
            right, left = kern
            return np.maximum((prev.weights @ right) @ left, 0.0)
        return prev.weights @ kern.T

    def _factor_kernel(self, kern: np.ndarray):
        """Truncated SVD of a transition kernel when it pays off.

        Smooth process-noise densities give kernels of low numerical rank; the
        product with the posterior weights is then done through the factors,
        dropping singular values below ``kernel_rank_tol`` times the largest.
        Returns the dense kernel otherwise.
        """
        tol = self.cfg.kernel_rank_tol
        if tol <= 0:
            return kern
        U, sv, Vt = np.linalg.svd(kern, full_matrices=False)
        r = int((sv > tol * sv[0]).sum())
        if 2 * r * (kern.shape[0] + kern.shape[1]) >= kern.shape[0] * kern.shape[1]:
            return kern
        return Vt[:r].T.copy(), (U[:, :r] * sv[:r]).T.copy()

    def _prior_atoms(self, t: int, prev: DensityState | None, N: int):
        """Discrete predictive: points and log masses, or ``None`` if continuous."""
        if t == 1:
            if not self.x1.discrete:
                return None
            with np.errstate(divide="ignore"):
                return self.x1.atoms, np.broadcast_to(np.log(self.x1.probs), (N, self.x1.probs.size))
        if not self.w.discrete:
            return None
        moved = prev.points @ self.Aii.T
        a_w = self.w.atoms
        if prev.shared:
            pts = (moved[:, None, :] + a_w[None, :, :]).reshape(-1, self.d)
        else:
            pts = (moved[:, :, None, :] + a_w[None, None, :, :]).reshape(N, -1, self.d)
        with np.errstate(divide="ignore"):
            logm = (np.log(prev.weights)[:, :, None] + np.log(self.w.probs)[None, None, :]).reshape(N, -1)
        return pts, logm

    # ---- public steps

    def init(self, y1: np.ndarray, trial_start: int = 0) -> DensityState:
        y1 = np.atleast_2d(y1)
        anchor = np.zeros((y1.shape[0], self.d))
        return self._update(1, anchor, y1, None, trial_start)

    def step(self, d: DensityState, y_i, x0_prev, u_i_prev, u0_prev) -> DensityState:
        anchor = d.anchor @ self.Aii.T + x0_prev @ self.Ai0.T + u_i_prev @ self.Bii.T + u0_prev @ self.Bi0.T
        return self._update(d.t + 1, anchor, np.atleast_2d(y_i), d, d.trial_start)

    def _update(self, t, anchor, y, prev, start) -> DensityState:
        N = y.shape[0]
        y_rel = y - anchor @ self.C.T
        if self.mode == "particles":
            return self._particle_update(t, anchor, y_rel, prev, start)
        if self.mode == "gaussian":
            K = self.kalman.K[t - 1]
            if prev is None:
                xi = y_rel @ K.T
            else:
                pred = prev.points[:, 0] @ self.Aii.T
                xi = pred + (y_rel - pred @ self.C.T) @ K.T
            return DensityState("gaussian", t, anchor, xi[:, None, :], np.ones((N, 1)), trial_start=start)
        atoms = self._prior_atoms(t, prev, N)
        if atoms is not None:
            pts, logm = atoms
            if pts.shape[-2] > self.cfg.max_atoms:
                raise ValueError(
                    f"exact support grew to {pts.shape[-2]} atoms at t={t}; "
                    "raise FilterConfig.max_atoms or use continuous noise"
                )
            resid = y_rel[:, None, :] - pts @ self.C.T
            logw = logm + self._log_obs(resid)
            return DensityState("atoms", t, anchor, pts, _normalize(logw, t, start), trial_start=start)
        if self.v.discrete:
            # Continuous predictive, discrete observation noise: ξ = C^{-1}(y_rel - a_k).
            a_v = self.v.atoms
            pts = (y_rel[:, None, :] - a_v[None, :, :]) @ self.Cinv.T
            logw = np.log(self.v.probs)[None, :] + self._prior_log_density(t, pts, prev)
            return DensityState("atoms", t, anchor, pts, _normalize(logw, t, start), trial_start=start)
        nodes, q = self.nodes(t)
        resid = y_rel[:, None, :] - nodes @ self.C.T
        if prev is not None and prev.shared:
            # Stay in linear space for the predictive density: it comes out of a
            # kernel product and a log/exp round trip would only cost time.
            dens = self._shared_prior_density(t, nodes, prev)
            dens *= q
            w = _normalize_scaled(self._log_obs(resid), dens, t, start)
        else:
            with np.errstate(divide="ignore"):
                logw = np.log(q)[None, :] + self._prior_log_density(t, nodes, prev) + self._log_obs(resid)
            w = _normalize(logw, t, start)
        return DensityState("grid", t, anchor, nodes, w, bounds=(nodes[0, 0], nodes[-1, 0]), trial_start=start)

    def _particle_update(self, t, anchor, y_rel, prev, start) -> DensityState:
        N, P = y_rel.shape[0], self.cfg.n_particles
        nu_x = self.x1.n_uniforms if t == 1 else self.w.n_uniforms
        u = uniforms(self.seed, "pf", self.i, t, start, N, P * nu_x + 2)
        if t == 1:
            pts = self.x1.transform(u[:, : P * nu_x].reshape(N, P, nu_x))
            logm = np.full((N, P), -np.log(P))
        else:
            src, wts = prev.points, prev.weights
            if src.ndim == 2:
                src = np.broadcast_to(src, (N,) + src.shape)
            ess = 1.0 / np.sum(wts**2, axis=1)
            resample = (ess < self.cfg.resample_threshold * P) | (wts.shape[1] != P)
            logm = np.empty((N, P))
            base = np.empty((N, P, self.d))
            if np.any(resample):
                r = np.flatnonzero(resample)
                idx = _systematic(wts[r], u[r, -1], P)
                base[r] = np.take_along_axis(src[r], idx[:, :, None], axis=1)
                logm[r] = -np.log(P)
            keep = ~resample
            if np.any(keep):
                base[keep] = src[keep]
                with np.errstate(divide="ignore"):
                    logm[keep] = np.log(wts[keep])
            noise = self.w.transform(u[:, : P * nu_x].reshape(N, P, nu_x))
            pts = base @ self.Aii.T + noise
        resid = y_rel[:, None, :] - pts @ self.C.T
        logw = logm + self._log_obs(resid)
        return DensityState("particles", t, anchor, pts, _normalize(logw, t, start), trial_start=start)


@lru_cache(maxsize=16)
def cached_filter(s, i: int, config: FilterConfig | None = None, seed: int = 0) -> BayesFilter:
    """Shared filter object so grids and kernels are built once per scenario."""
    return BayesFilter(s, i, config, seed)


def bayes_filter_init(s, i, y1, config: FilterConfig | None = None, seed: int = 0, trial_start: int = 0):
    """Convenience wrapper returning ``(filter, state at t=1)``."""
    f = BayesFilter(s, i, config, seed)
    return f, f.init(y1, trial_start)


def bayes_filter_step(f: BayesFilter, d: DensityState, y_i, x0_prev, u_i_prev, u0_prev) -> DensityState:
    return f.step(d, y_i, x0_prev, u_i_prev, u0_prev)


def density_to_csv(d: DensityState, trial: int = 0) -> str:
    """Rows ``(node..., weight)`` of one trial's posterior in absolute coordinates."""
    pts = d.points if d.shared else d.points[trial]
    pts = pts + d.anchor[trial]
    buf = io.StringIO()
    wr = csv.writer(buf)
    wr.writerow([f"x{k}" for k in range(pts.shape[1])] + ["weight"])
    for p, w in zip(pts, d.weights[trial]):
        wr.writerow([*map(repr, p.tolist()), repr(float(w))])
    return buf.getvalue()


def schedules_to_json(schedules) -> str:
    return json.dumps([sch.to_dict() for sch in schedules], indent=2)
