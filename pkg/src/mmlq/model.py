"""Problem instances: one major agent (index 0) and ``n`` minor agents.

The major agent's state and action drive every minor agent; minor agents never
affect each other or the major agent.  The global dynamics matrices are
therefore block lower-triangular with a single nonzero column of off-diagonal
blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .noise import Distribution, PointMass, distribution_from_dict

__all__ = [
    "AgentTopology",
    "SystemMatrices",
    "CostSpec",
    "NoiseSpec",
    "Scenario",
    "Violation",
    "ValidationReport",
    "ScenarioError",
    "validate_scenario",
    "assemble_global",
    "scenario_from_dict",
    "scenario_to_dict",
    "load_scenario",
    "save_scenario",
]

ASYM_TOL = 1e-12
PSD_TOL = 1e-9
PD_TOL = 1e-9
MEAN_TOL = 1e-12


class ScenarioError(ValueError):
    """Raised when a scenario cannot be built or used.

    ``report`` carries the full validation report when one is available.
    """

    def __init__(self, message: str, report: "ValidationReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class AgentTopology:
    n: int
    dx: tuple[int, ...]
    du: tuple[int, ...]
    dy: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dx", tuple(int(v) for v in self.dx))
        object.__setattr__(self, "du", tuple(int(v) for v in self.du))
        object.__setattr__(self, "dy", tuple(int(v) for v in self.dy))

    @staticmethod
    def _slices(dims) -> tuple[slice, ...]:
        edges = np.concatenate([[0], np.cumsum(dims)]).astype(int)
        return tuple(slice(a, b) for a, b in zip(edges[:-1], edges[1:]))

    @cached_property
    def xs(self) -> tuple[slice, ...]:
        """State slice of each agent ``0..n`` inside the stacked state."""
        return self._slices(self.dx)

    @cached_property
    def us(self) -> tuple[slice, ...]:
        return self._slices(self.du)

    @cached_property
    def ys(self) -> tuple[slice, ...]:
        """Observation slice of minor agent ``i`` at position ``i - 1``."""
        return self._slices(self.dy)

    @property
    def nx(self) -> int:
        return sum(self.dx)

    @property
    def nu(self) -> int:
        return sum(self.du)

    @property
    def ny(self) -> int:
        return sum(self.dy)


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    """Dynamics blocks.  Per-minor lists are indexed ``i - 1``.

    ``forbidden`` holds any blocks outside the allowed sparsity pattern that
    came in through :meth:`from_dense`; a valid scenario has none that are
    nonzero.
    """

    A00: np.ndarray
    Ai0: tuple[np.ndarray, ...]
    Aii: tuple[np.ndarray, ...]
    B00: np.ndarray
    Bi0: tuple[np.ndarray, ...]
    Bii: tuple[np.ndarray, ...]
    Cii: tuple[np.ndarray, ...]
    forbidden: dict = field(default_factory=dict)

    def __post_init__(self):
        m = lambda a: np.atleast_2d(np.asarray(a, dtype=float))  # noqa: E731
        object.__setattr__(self, "A00", m(self.A00))
        object.__setattr__(self, "B00", m(self.B00))
        for name in ("Ai0", "Aii", "Bi0", "Bii", "Cii"):
            object.__setattr__(self, name, tuple(m(a) for a in getattr(self, name)))

    @classmethod
    def from_dense(cls, A, B, C, topo: AgentTopology) -> "SystemMatrices":
        """Split dense global ``A``, ``B`` and block-diagonal ``C`` into blocks.

        ``C`` is ``ny x nx`` with the major agent's columns included.  Nonzero
        blocks outside the allowed pattern are kept in ``forbidden`` so the
        validator can report them.
        """
        A, B, C = (np.atleast_2d(np.asarray(a, float)) for a in (A, B, C))
        xs, us, ys = topo.xs, topo.us, topo.ys
        if A.shape != (topo.nx, topo.nx) or B.shape != (topo.nx, topo.nu) or C.shape != (topo.ny, topo.nx):
            raise ScenarioError(
                f"dense matrices have shapes A{A.shape} B{B.shape} C{C.shape}; expected "
                f"A{(topo.nx, topo.nx)} B{(topo.nx, topo.nu)} C{(topo.ny, topo.nx)}"
            )
        forbidden = {}
        for i in range(topo.n + 1):
            for j in range(1, topo.n + 1):
                if i != j:
                    forbidden[("A", i, j)] = A[xs[i], xs[j]]
                    forbidden[("B", i, j)] = B[xs[i], us[j]]
        for i in range(1, topo.n + 1):
            for j in range(topo.n + 1):
                if i != j:
                    forbidden[("C", i, j)] = C[ys[i - 1], xs[j]]
        n = topo.n
        return cls(
            A00=A[xs[0], xs[0]],
            Ai0=tuple(A[xs[i], xs[0]] for i in range(1, n + 1)),
            Aii=tuple(A[xs[i], xs[i]] for i in range(1, n + 1)),
            B00=B[xs[0], us[0]],
            Bi0=tuple(B[xs[i], us[0]] for i in range(1, n + 1)),
            Bii=tuple(B[xs[i], us[i]] for i in range(1, n + 1)),
            Cii=tuple(C[ys[i - 1], xs[i]] for i in range(1, n + 1)),
            forbidden=forbidden,
        )


@dataclass(frozen=True, eq=False)
class CostSpec:
    Q: np.ndarray
    R: np.ndarray
    QT: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R", "QT"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Per-agent distributions: ``x1`` and ``w`` for agents ``0..n``, ``v`` for ``1..n``."""

    x1: tuple[Distribution, ...]
    w: tuple[Distribution, ...]
    v: tuple[Distribution, ...]

    def __post_init__(self):
        for name in ("x1", "w", "v"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def all_discrete(self) -> bool:
        return all(d.discrete for d in (*self.x1, *self.w, *self.v))

    def Sigma_x(self, i):
        return self.x1[i].cov()

    def Sigma_w(self, i):
        return self.w[i].cov()

    def Sigma_v(self, i):
        """Observation-noise variance of minor agent ``i`` (1-based)."""
        return self.v[i - 1].cov()


@dataclass(frozen=True, eq=False)
class Scenario:
    topology: AgentTopology
    sys: SystemMatrices
    cost: CostSpec
    noise: NoiseSpec
    T: int
    seed: int | None = None
    name: str = ""

    @property
    def n(self) -> int:
        return self.topology.n

    @cached_property
    def AB(self) -> tuple[np.ndarray, np.ndarray]:
        return assemble_global(self)

    @property
    def A(self) -> np.ndarray:
        return self.AB[0]

    @property
    def B(self) -> np.ndarray:
        return self.AB[1]

    @cached_property
    def C(self) -> np.ndarray:
        """Block observation matrix, ``ny x nx`` (zero columns for the major agent)."""
        topo = self.topology
        C = np.zeros((topo.ny, topo.nx))
        for i in range(1, topo.n + 1):
            C[topo.ys[i - 1], topo.xs[i]] = self.sys.Cii[i - 1]
        return C

    @cached_property
    def Qs(self) -> np.ndarray:
        return _sym(self.cost.Q)

    @cached_property
    def Rs(self) -> np.ndarray:
        return _sym(self.cost.R)

    @cached_property
    def QTs(self) -> np.ndarray:
        return _sym(self.cost.QT)

    def Qii(self, i: int) -> np.ndarray:
        s = self.topology.xs[i]
        return self.Qs[s, s]

    def Rii(self, i: int) -> np.ndarray:
        s = self.topology.us[i]
        return self.Rs[s, s]

    def QTii(self, i: int) -> np.ndarray:
        s = self.topology.xs[i]
        return self.QTs[s, s]

    def local(self, i: int):
        """``(A_ii, A_i0, B_ii, B_i0, C_ii)`` of minor agent ``i``."""
        k = i - 1
        sy = self.sys
        return sy.Aii[k], sy.Ai0[k], sy.Bii[k], sy.Bi0[k], sy.Cii[k]


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class Violation:
    field: str
    message: str

    def __str__(self):
        return f"{self.field}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, fieldname: str, message: str):
        self.violations.append(Violation(fieldname, message))

    def messages(self) -> list[str]:
        return [str(v) for v in self.violations]

    def __str__(self):
        return "pass" if self.ok else "\n".join(self.messages())


def _check_shape(report, name, M, shape):
    if np.shape(M) != tuple(shape):
        report.add(name, f"dimension mismatch: got {np.shape(M)}, expected {tuple(shape)}")
        return False
    return True


def _check_semidefinite(report, name, M, strict: bool):
    M = np.asarray(M, float)
    norm = np.linalg.norm(M, 2) if M.size else 0.0
    if norm > 0 and np.linalg.norm(M - M.T, 2) > ASYM_TOL * norm:
        report.add(name, f"{name} not symmetric")
        return
    lo = np.linalg.eigvalsh(_sym(M)).min()
    if strict:
        if not (lo > 0 and lo >= PD_TOL * norm):
            report.add(name, f"{name} not positive definite (min eigenvalue {lo:.3g})")
    elif lo < -PSD_TOL * norm:
        report.add(name, f"{name} not positive semi-definite (min eigenvalue {lo:.3g})")


def _check_noise(report, name, dist, dim):
    if not isinstance(dist, Distribution):
        report.add(name, "not a distribution")
        return
    if dist.dim != dim:
        report.add(name, f"dimension mismatch: distribution has dim {dist.dim}, expected {dim}")
        return
    mean = dist.mean()
    scale = 1.0
    if isinstance(dist, PointMass):
        scale += np.abs(dist.atoms).max()
    elif hasattr(dist, "means"):
        scale += np.abs(dist.means).max()
    if np.abs(mean).max() > MEAN_TOL * scale:
        report.add(name, f"non-zero-mean noise (mean {np.round(mean, 12).tolist()})")
    cov = dist.cov()
    if not np.all(np.isfinite(cov)):
        report.add(name, "noise variance not finite")
    elif np.linalg.eigvalsh(_sym(cov)).min() < -PSD_TOL * max(np.abs(cov).max(), 1e-300):
        report.add(name, "noise covariance not positive semi-definite")


def validate_scenario(s: Scenario) -> ValidationReport:
    """Collect every problem with ``s``; never raises."""
    report = ValidationReport()
    topo = s.topology
    if topo.n < 1:
        report.add("topology.n", "need at least one minor agent")
    if len(topo.dx) != topo.n + 1:
        report.add("topology.dx", f"expected {topo.n + 1} entries")
    if len(topo.du) != topo.n + 1:
        report.add("topology.du", f"expected {topo.n + 1} entries")
    if len(topo.dy) != topo.n:
        report.add("topology.dy", f"expected {topo.n} entries (minor agents only)")
    if any(d < 1 for d in (*topo.dx, *topo.du, *topo.dy)):
        report.add("topology", "all dimensions must be at least 1")
    if not isinstance(s.T, (int, np.integer)) or s.T < 2:
        report.add("horizon", "horizon T must be an integer >= 2")
    if not report.ok:
        return report

    n, dx, du, dy = topo.n, topo.dx, topo.du, topo.dy
    sy = s.sys
    _check_shape(report, "A00", sy.A00, (dx[0], dx[0]))
    _check_shape(report, "B00", sy.B00, (dx[0], du[0]))
    for name in ("Ai0", "Aii", "Bi0", "Bii", "Cii"):
        if len(getattr(sy, name)) != n:
            report.add(name, f"expected {n} blocks, got {len(getattr(sy, name))}")
    if report.ok:
        for i in range(1, n + 1):
            k = i - 1
            _check_shape(report, f"Ai0[{i}]", sy.Ai0[k], (dx[i], dx[0]))
            _check_shape(report, f"Aii[{i}]", sy.Aii[k], (dx[i], dx[i]))
            _check_shape(report, f"Bi0[{i}]", sy.Bi0[k], (dx[i], du[0]))
            _check_shape(report, f"Bii[{i}]", sy.Bii[k], (dx[i], du[i]))
            _check_shape(report, f"Cii[{i}]", sy.Cii[k], (dy[k], dx[i]))
    for (mat, i, j), block in sorted(sy.forbidden.items()):
        if np.any(np.asarray(block) != 0):
            if mat == "C":
                msg = "cross observation forbidden"
            elif i == 0:
                msg = "minor-to-major coupling forbidden"
            else:
                msg = "minor-minor coupling forbidden"
            report.add(f"{mat}[{i},{j}]", msg)

    c = s.cost
    if _check_shape(report, "Q", c.Q, (topo.nx, topo.nx)):
        _check_semidefinite(report, "Q", c.Q, strict=False)
    if _check_shape(report, "QT", c.QT, (topo.nx, topo.nx)):
        _check_semidefinite(report, "QT", c.QT, strict=False)
    if _check_shape(report, "R", c.R, (topo.nu, topo.nu)):
        _check_semidefinite(report, "R", c.R, strict=True)

    nz = s.noise
    for name, dists, count in (("x1", nz.x1, n + 1), ("w", nz.w, n + 1), ("v", nz.v, n)):
        if len(dists) != count:
            report.add(f"noise.{name}", f"expected {count} distributions, got {len(dists)}")
            continue
        for k, dist in enumerate(dists):
            agent = k + 1 if name == "v" else k
            dim = dy[k] if name == "v" else dx[k]
            _check_noise(report, f"noise.{name}[{agent}]", dist, dim)
    return report


def assemble_global(s: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Stack the blocks into the global ``(A, B)``."""
    topo, sy = s.topology, s.sys
    xs, us = topo.xs, topo.us
    A = np.zeros((topo.nx, topo.nx))
    B = np.zeros((topo.nx, topo.nu))

    def put(M, rows, cols, block, name):
        if block.shape != (rows.stop - rows.start, cols.stop - cols.start):
            raise ScenarioError(
                f"block {name} has shape {block.shape}, expected "
                f"{(rows.stop - rows.start, cols.stop - cols.start)}"
            )
        M[rows, cols] = block

    put(A, xs[0], xs[0], sy.A00, "A00")
    put(B, xs[0], us[0], sy.B00, "B00")
    for i in range(1, topo.n + 1):
        k = i - 1
        put(A, xs[i], xs[0], sy.Ai0[k], f"Ai0[{i}]")
        put(A, xs[i], xs[i], sy.Aii[k], f"Aii[{i}]")
        put(B, xs[i], us[0], sy.Bi0[k], f"Bi0[{i}]")
        put(B, xs[i], us[i], sy.Bii[k], f"Bii[{i}]")
    return A, B


# ---------------------------------------------------------------- JSON

_TOP_KEYS = {"topology", "matrices", "cost", "noise", "horizon", "seed", "name"}
_REQUIRED = {"topology", "matrices", "cost", "noise", "horizon"}
_BLOCK_KEYS = {"A00", "Ai0", "Aii", "B00", "Bi0", "Bii", "Cii"}
_DENSE_KEYS = {"A", "B", "C"}


def scenario_from_dict(d: dict) -> Scenario:
    """Build a scenario from its JSON form.

    Structural problems (unknown or missing keys, bad distributions) raise
    :class:`ScenarioError` with a report attached.  Semantic problems are left
    for :func:`validate_scenario`.
    """
    report = ValidationReport()
    if not isinstance(d, dict):
        report.add("<root>", "scenario must be a JSON object")
        raise ScenarioError(str(report), report)
    for key in sorted(set(d) - _TOP_KEYS):
        report.add(key, "unknown key")
    for key in sorted(_REQUIRED - set(d)):
        report.add(key, "missing key")
    if not report.ok:
        raise ScenarioError(str(report), report)

    try:
        t = d["topology"]
        extra = set(t) - {"n", "dx", "du", "dy"}
        if extra:
            report.add("topology", f"unknown keys {sorted(extra)}")
        topo = AgentTopology(int(t["n"]), t["dx"], t["du"], t["dy"])

        m = d["matrices"]
        keys = set(m)
        if keys == _DENSE_KEYS:
            sysm = SystemMatrices.from_dense(m["A"], m["B"], m["C"], topo)
        elif keys == _BLOCK_KEYS:
            sysm = SystemMatrices(**{k: m[k] for k in _BLOCK_KEYS})
        else:
            report.add("matrices", f"expected keys {sorted(_BLOCK_KEYS)} or {sorted(_DENSE_KEYS)}")
            sysm = None

        c = d["cost"]
        if set(c) != {"Q", "R", "QT"}:
            report.add("cost", "expected exactly the keys Q, R, QT")
        cost = CostSpec(c["Q"], c["R"], c["QT"])

        nz = d["noise"]
        if set(nz) != {"x1", "w", "v"}:
            report.add("noise", "expected exactly the keys x1, w, v")
        noise = NoiseSpec(
            tuple(distribution_from_dict(x) for x in nz["x1"]),
            tuple(distribution_from_dict(x) for x in nz["w"]),
            tuple(distribution_from_dict(x) for x in nz["v"]),
        )
        horizon = d["horizon"]
        if isinstance(horizon, bool) or not isinstance(horizon, int):
            report.add("horizon", "horizon must be an integer")
        seed = d.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
            report.add("seed", "seed must be a nonnegative integer")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError) and exc.report:
            report.violations.extend(exc.report.violations)
        else:
            report.add("<structure>", f"{type(exc).__name__}: {exc}")
    if not report.ok:
        raise ScenarioError(str(report), report)
    return Scenario(topo, sysm, cost, noise, int(horizon), seed, d.get("name", ""))


def scenario_to_dict(s: Scenario) -> dict:
    sy = s.sys
    lst = lambda blocks: [b.tolist() for b in blocks]  # noqa: E731
    out = {
        "topology": {
            "n": s.topology.n,
            "dx": list(s.topology.dx),
            "du": list(s.topology.du),
            "dy": list(s.topology.dy),
        },
        "matrices": {
            "A00": sy.A00.tolist(),
            "Ai0": lst(sy.Ai0),
            "Aii": lst(sy.Aii),
            "B00": sy.B00.tolist(),
            "Bi0": lst(sy.Bi0),
            "Bii": lst(sy.Bii),
            "Cii": lst(sy.Cii),
        },
        "cost": {"Q": s.cost.Q.tolist(), "R": s.cost.R.tolist(), "QT": s.cost.QT.tolist()},
        "noise": {
            "x1": [x.to_dict() for x in s.noise.x1],
            "w": [x.to_dict() for x in s.noise.w],
            "v": [x.to_dict() for x in s.noise.v],
        },
        "horizon": s.T,
    }
    if s.seed is not None:
        out["seed"] = s.seed
    if s.name:
        out["name"] = s.name
    return out


def load_scenario(path) -> Scenario:
    """Read a scenario file.  ``json.JSONDecodeError`` propagates unchanged."""
    text = Path(path).read_text()
    return scenario_from_dict(json.loads(text))


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")
