"""Zero-mean noise families used for initial states, process noise and
observation noise.

Every family is parameterised so that its mean is known in closed form, and
every family samples by transforming a fixed number of uniforms per draw.  The
fixed count is what lets the counter-based streams in :mod:`mmlq.rng` hand out
the same numbers to a trial regardless of how trials are chunked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtri

__all__ = [
    "Distribution",
    "PointMass",
    "Gaussian",
    "Uniform",
    "Laplace",
    "GaussianMixture",
    "distribution_from_dict",
    "point_mass_at_zero",
]

_LOG_2PI = np.log(2.0 * np.pi)


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    return arr


class Distribution:
    """Base class for a zero-mean random vector of dimension ``dim``."""

    family: str = ""
    discrete: bool = False

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def n_uniforms(self) -> int:
        """Uniforms consumed per sample."""
        raise NotImplementedError

    def mean(self) -> np.ndarray:
        return np.zeros(self.dim)

    def cov(self) -> np.ndarray:
        raise NotImplementedError

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms of shape ``(..., n_uniforms)`` to samples ``(..., dim)``."""
        raise NotImplementedError

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """Log density at points ``(..., dim)``; continuous families only."""
        raise NotImplementedError(f"{self.family} has no density")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.transform(rng.random((size, self.n_uniforms)))

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class PointMass(Distribution):
    """Finite mixture of point masses: ``atoms`` is ``(k, d)``, ``probs`` is ``(k,)``."""

    atoms: np.ndarray
    probs: np.ndarray
    family: str = field(default="point_mass", init=False)
    discrete: bool = field(default=True, init=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        probs = np.asarray(self.probs, dtype=float).ravel()
        if atoms.ndim != 2 or atoms.shape[0] != probs.size or probs.size == 0:
            raise ValueError("point_mass needs k atoms and k probabilities")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("point_mass probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def n_uniforms(self) -> int:
        return 1

    def mean(self) -> np.ndarray:
        return self.probs @ self.atoms

    def cov(self) -> np.ndarray:
        return np.einsum("k,ki,kj->ij", self.probs, self.atoms, self.atoms)

    def transform(self, u):
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, u[..., 0], side="right")
        return self.atoms[np.minimum(idx, len(cdf) - 1)]

    def log_pmf(self, x: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Log probability mass at ``x``; atoms match within ``tol`` (scaled)."""
        x = np.asarray(x, dtype=float)
        scale = 1.0 + np.abs(self.atoms).max()
        hit = np.all(np.abs(x[..., None, :] - self.atoms) <= tol * scale, axis=-1)
        with np.errstate(divide="ignore"):
            return np.log(hit @ self.probs)

    def to_dict(self):
        return {"family": self.family, "atoms": self.atoms.tolist(), "probs": self.probs.tolist()}


def point_mass_at_zero(dim: int) -> PointMass:
    return PointMass(np.zeros((1, dim)), np.ones(1))


@dataclass(frozen=True, eq=False)
class Gaussian(Distribution):
    cov_: np.ndarray
    family: str = field(default="gaussian", init=False)

    def __post_init__(self):
        c = _as_matrix(self.cov_, "cov")
        if c.shape[0] != c.shape[1]:
            raise ValueError("gaussian cov must be square")
        object.__setattr__(self, "cov_", c)

    @property
    def dim(self):
        return self.cov_.shape[0]

    @property
    def n_uniforms(self):
        return self.dim

    def cov(self):
        return self.cov_

    def _root(self) -> np.ndarray:
        vals, vecs = np.linalg.eigh(0.5 * (self.cov_ + self.cov_.T))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))

    def transform(self, u):
        # Elementwise reduction rather than a BLAS product: each row is computed
        # the same way whatever the batch size, so chunked draws are bitwise equal.
        return (ndtri(u)[..., None, :] * self._root()).sum(-1)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        chol = np.linalg.cholesky(self.cov_)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        if self.dim == 1:
            quad = (x[..., 0] / chol[0, 0]) ** 2
        else:
            z = x @ np.linalg.inv(chol).T
            quad = (z**2).sum(-1)
        return -0.5 * (quad + logdet + self.dim * _LOG_2PI)

    def to_dict(self):
        return {"family": self.family, "cov": self.cov_.tolist()}


@dataclass(frozen=True, eq=False)
class Uniform(Distribution):
    """Independent components, component ``k`` uniform on ``[-a_k, a_k]``."""

    half_width: np.ndarray
    family: str = field(default="uniform", init=False)

    def __post_init__(self):
        object.__setattr__(self, "half_width", np.atleast_1d(np.asarray(self.half_width, float)))

    @property
    def dim(self):
        return self.half_width.size

    @property
    def n_uniforms(self):
        return self.dim

    def cov(self):
        return np.diag(self.half_width**2 / 3.0)

    def transform(self, u):
        return (2.0 * u - 1.0) * self.half_width

    def logpdf(self, x):
        inside = np.all(np.abs(x) <= self.half_width, axis=-1)
        return np.where(inside, -np.log(2.0 * self.half_width).sum(), -np.inf)

    def to_dict(self):
        return {"family": self.family, "half_width": self.half_width.tolist()}


@dataclass(frozen=True, eq=False)
class Laplace(Distribution):
    scale: np.ndarray
    family: str = field(default="laplace", init=False)

    def __post_init__(self):
        object.__setattr__(self, "scale", np.atleast_1d(np.asarray(self.scale, float)))

    @property
    def dim(self):
        return self.scale.size

    @property
    def n_uniforms(self):
        return self.dim

    def cov(self):
        return np.diag(2.0 * self.scale**2)

    def transform(self, u):
        c = u - 0.5
        return -self.scale * np.sign(c) * np.log1p(-2.0 * np.abs(c))

    def logpdf(self, x):
        return -(np.log(2.0 * self.scale) + np.abs(x) / self.scale).sum(-1)

    def to_dict(self):
        return {"family": self.family, "scale": self.scale.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianMixture(Distribution):
    """Mixture of Gaussians.  ``covs`` is ``(k, d, d)``, or ``(k, d)`` for
    diagonal components, or ``(k,)`` in the scalar case."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    family: str = field(default="gaussian_mixture", init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, float).ravel()
        m = np.asarray(self.means, float)
        if m.ndim == 1:
            m = m[:, None]
        c = np.asarray(self.covs, float)
        if c.ndim == 1:
            c = c[:, None, None]
        elif c.ndim == 2:
            # One row of variances per component: diagonal covariances.
            c = c[:, :, None] * np.eye(c.shape[1])
        if not (w.size == m.shape[0] == c.shape[0]) or c.shape[1:] != (m.shape[1],) * 2:
            raise ValueError("gaussian_mixture weights, means and covs disagree in shape")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("gaussian_mixture weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", c)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_uniforms(self):
        return 1 + self.dim

    def mean(self):
        return self.weights @ self.means

    def cov(self):
        second = self.covs + np.einsum("ki,kj->kij", self.means, self.means)
        return np.einsum("k,kij->ij", self.weights, second)

    def transform(self, u):
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        k = np.minimum(np.searchsorted(cdf, u[..., 0], side="right"), len(cdf) - 1)
        vals, vecs = np.linalg.eigh(self.covs)
        roots = vecs * np.sqrt(np.clip(vals, 0.0, None))[:, None, :]
        z = ndtri(u[..., 1:])
        return self.means[k] + np.einsum("...ij,...j->...i", roots[k], z)

    def logpdf(self, x):
        x = np.asarray(x, float)
        parts = [
            np.log(wk) + Gaussian(ck).logpdf(x - mk)
            for wk, mk, ck in zip(self.weights, self.means, self.covs)
            if wk > 0
        ]
        return logsumexp(np.stack(parts), axis=0)

    def to_dict(self):
        return {
            "family": self.family,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }


_FAMILY_KEYS = {
    "point_mass": ({"atoms", "probs"}, lambda d: PointMass(d["atoms"], d["probs"])),
    "gaussian": ({"cov"}, lambda d: Gaussian(d["cov"])),
    "uniform": ({"half_width"}, lambda d: Uniform(d["half_width"])),
    "laplace": ({"scale"}, lambda d: Laplace(d["scale"])),
    "gaussian_mixture": (
        {"weights", "means", "covs"},
        lambda d: GaussianMixture(d["weights"], d["means"], d["covs"]),
    ),
}


def distribution_from_dict(d: dict) -> Distribution:
    """Build a distribution from its JSON form; raises ``ValueError`` on bad input."""
    if not isinstance(d, dict) or "family" not in d:
        raise ValueError("distribution must be an object with a 'family' key")
    family = d["family"]
    if family not in _FAMILY_KEYS:
        raise ValueError(f"unknown distribution family {family!r}")
    keys, build = _FAMILY_KEYS[family]
    extra = set(d) - keys - {"family"}
    missing = keys - set(d)
    if extra or missing:
        raise ValueError(f"{family}: unknown keys {sorted(extra)}, missing keys {sorted(missing)}")
    return build(d)
