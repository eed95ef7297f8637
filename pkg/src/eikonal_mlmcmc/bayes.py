"""Observation model, forward maps and the data-mismatch potential."""
from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .fmm import solve_at
from .grid import DEFAULT_MEMORY_BUDGET, Domain, Grid, build_grid


@dataclass(frozen=True, eq=False)
class Observation:
    """Point observations of travel times for one or more sources.

    ``data`` is ordered source-major: the block for source 0 first, each
    block following ``points``.
    """

    points: np.ndarray
    sources: np.ndarray
    data: np.ndarray
    sigma: np.ndarray
    noiseless: np.ndarray | None = None
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        src = np.atleast_2d(np.asarray(self.sources, dtype=float))
        data = np.asarray(self.data, dtype=float).ravel()
        n = pts.shape[0] * src.shape[0]
        if data.size != n:
            raise ValueError(f"data has {data.size} entries, expected {n} (points x sources)")
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = float(sigma) * np.eye(n)
        if sigma.shape != (n, n):
            raise ValueError(f"covariance must be {n}x{n}")
        try:
            chol = cholesky(sigma, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("noise covariance is not symmetric positive definite") from exc
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "chol", chol)

    @property
    def size(self) -> int:
        return self.data.size

    def with_data(self, data) -> "Observation":
        return Observation(self.points, self.sources, data, self.sigma, self.noiseless)

    def whiten(self, r) -> np.ndarray:
        return solve_triangular(self.chol, np.asarray(r, dtype=float), lower=True)

    def potential(self, predicted) -> float:
        z = self.whiten(self.data - np.asarray(predicted, dtype=float))
        return 0.5 * float(z @ z)

    def isotropic_scale(self) -> float | None:
        """``c`` if the covariance is ``c * I``, else ``None``."""
        d = np.diag(self.sigma)
        if np.all(d == d[0]) and np.count_nonzero(self.sigma - np.diag(d)) == 0:
            return float(d[0])
        return None


@dataclass(frozen=True)
class LevelSpec:
    level: int
    J: int
    grid: Grid

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J_l must be >= 1")


def j_default(q: float) -> Callable[[int], int]:
    """``J_l = max(1, ceil(2**(l / (2 q))))``."""
    if q <= 0:
        raise ValueError("q must be positive")
    return lambda l: max(1, math.ceil(2 ** (l / (2 * q))))


def j_binary(l: int) -> int:
    return 2 * math.ceil(2 ** (l / 2))


def j_fixed(n: int) -> Callable[[int], int]:
    return lambda l: n


def eight_points(domain: Domain) -> np.ndarray:
    """Two points on each side at a quarter and three quarters of its length."""
    ref = [(-0.5, -1), (0.5, -1), (-0.5, 1), (0.5, 1), (-1, -0.5), (-1, 0.5), (1, -0.5), (1, 0.5)]
    return _from_reference(domain, ref)


def five_sources(domain: Domain) -> np.ndarray:
    """Centre plus the four points at half-way to each corner."""
    ref = [(0, 0), (-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
    return _from_reference(domain, ref)


def _from_reference(domain: Domain, ref) -> np.ndarray:
    ref = np.asarray(ref, dtype=float)
    lo = np.asarray(domain.lower)
    size = np.array([domain.width, domain.height])
    return lo + (ref + 1.0) / 2.0 * size


def boundary_points(domain: Domain, spacing: float) -> np.ndarray:
    """Points every ``spacing`` along the boundary, counter-clockwise from the lower-left corner."""
    perim = 2 * (domain.width + domain.height)
    n = int(round(perim / spacing))
    if abs(n * spacing - perim) > 1e-9 * perim:
        raise ValueError(f"spacing {spacing} does not divide the perimeter {perim}")
    (x0, y0), (x1, y1) = domain.lower, domain.upper
    out = []
    for k in range(n):
        d = k * spacing
        if d < domain.width:
            out.append((x0 + d, y0))
        elif d < domain.width + domain.height:
            out.append((x1, y0 + d - domain.width))
        elif d < 2 * domain.width + domain.height:
            out.append((x1 - (d - domain.width - domain.height), y1))
        else:
            out.append((x0, y1 - (d - 2 * domain.width - domain.height)))
    return np.array(out)


def forward_map(u, level: LevelSpec, obs: Observation, template) -> np.ndarray:
    """Travel times at the observation points, concatenated over sources."""
    grid = level.grid
    s = template.with_coeffs(u).on_grid(grid, level.J) if hasattr(template, "with_coeffs") else template.on_grid(grid)
    targets = np.array([grid.node_at(p) for p in obs.points], dtype=np.int64)
    out = []
    for src in obs.sources:
        vals, _, _ = solve_at(grid, s, grid.node_at(src), targets)
        out.append(vals)
    return np.concatenate(out)


def mismatch(u, data, level: LevelSpec, obs: Observation, template) -> float:
    """``0.5 |data - G(u)|_Sigma^2``."""
    return obs.with_data(data).potential(forward_map(u, level, obs, template))


def generate_observations(
    reference,
    points,
    sources,
    noise_cov,
    ref_level: int,
    domain: Domain,
    rng: np.random.Generator,
    sigma=None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> Observation:
    """Synthetic data: a fine-level forward solve of ``reference`` plus Gaussian noise.

    ``noise_cov`` drives the noise draw (zero gives noiseless data);
    ``sigma`` is the covariance stored for inversion and defaults to
    ``noise_cov``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    n = points.shape[0] * sources.shape[0]
    grid = build_grid(domain, ref_level, memory_budget)
    s = reference.on_grid(grid)
    targets = np.array([grid.node_at(p) for p in points], dtype=np.int64)
    clean = np.concatenate(
        [solve_at(grid, s, grid.node_at(src), targets)[0] for src in sources]
    )
    cov = np.asarray(noise_cov, dtype=float)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(n)
    if np.any(cov != 0):
        noise = cholesky(cov, lower=True) @ rng.standard_normal(n)
    else:
        noise = np.zeros(n)
    return Observation(points, sources, clean + noise, cov if sigma is None else sigma, clean)


def save_observation(obs: Observation, path, noiseless: bool = False) -> Path:
    """Write ``source,x,y,value`` rows plus a covariance side file (``<path>.cov``)."""
    path = Path(path)
    values = obs.noiseless if noiseless else obs.data
    if values is None:
        raise ValueError("observation carries no noiseless values")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "x", "y", "value"])
        i = 0
        for si in range(obs.sources.shape[0]):
            for p in obs.points:
                w.writerow([si, repr(float(p[0])), repr(float(p[1])), repr(float(values[i]))])
                i += 1
    with open(path.with_suffix(path.suffix + ".sources"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "x", "y"])
        for si, s in enumerate(obs.sources):
            w.writerow([si, repr(float(s[0])), repr(float(s[1]))])
    cov_path = path.with_suffix(path.suffix + ".cov")
    scale = obs.isotropic_scale()
    if scale is not None:
        cov_path.write_text(f"scalar_identity {scale!r}\n")
    else:
        np.savetxt(cov_path, obs.sigma, fmt="%.17g", header="matrix", comments="")
    return path


def load_observation(path) -> Observation:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    with open(path.with_suffix(path.suffix + ".sources"), newline="") as fh:
        srows = list(csv.DictReader(fh))
    sources = np.array([[float(r["x"]), float(r["y"])] for r in srows])
    n_src = len(srows)
    per = len(rows) // n_src
    points = np.array([[float(r["x"]), float(r["y"])] for r in rows[:per]])
    data = np.array([float(r["value"]) for r in rows])
    text = path.with_suffix(path.suffix + ".cov").read_text()
    first = text.split("\n", 1)[0].split()
    if first[0] == "scalar_identity":
        sigma = float(first[1]) * np.eye(data.size)
    else:
        sigma = np.loadtxt(path.with_suffix(path.suffix + ".cov"), skiprows=1, ndmin=2)
    return Observation(points, sources, data, sigma)


@dataclass(frozen=True, eq=False)
class QoI:
    """Quantity of interest: travel time from ``source`` or slowness, at ``points``."""

    kind: str
    points: np.ndarray
    source: tuple[float, float] | None = None
    shape: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("solution", "slowness"):
            raise ValueError(f"unknown QoI kind {self.kind!r}")
        if self.kind == "solution" and self.source is None:
            raise ValueError("a solution QoI needs a source point")
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @classmethod
    def solution_at(cls, x, source) -> "QoI":
        return cls("solution", [x], tuple(source))

    @classmethod
    def slowness_at(cls, x) -> "QoI":
        return cls("slowness", [x])

    @classmethod
    def solution_grid(cls, domain: Domain, m: int, source) -> "QoI":
        return cls("solution", cell_centres(domain, m), tuple(source), (m, m))

    @classmethod
    def slowness_grid(cls, domain: Domain, m: int) -> "QoI":
        return cls("slowness", cell_centres(domain, m), None, (m, m))

    def reshape(self, values):
        values = np.asarray(values)
        return values.reshape(self.shape) if self.shape else values


def cell_centres(domain: Domain, m: int) -> np.ndarray:
    """``m x m`` points at the centres of a uniform partition, row-major in ``y``."""
    xs = domain.lower[0] + (np.arange(m) + 0.5) * domain.width / m
    ys = domain.lower[1] + (np.arange(m) + 0.5) * domain.height / m
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


@dataclass
class WorkCounter:
    solves: int = 0
    nodes: int = 0
    updates: int = 0


class Problem:
    """A posterior problem at every discretisation level.

    Holds the prior template, the observation, the truncation schedule and
    an optional quantity of interest.  Travel-time solves are memoised per
    ``(u, level, source)``; each solve stops once all nodes needed from that
    source (observation and QoI points) are final.
    """

    def __init__(
        self,
        template,
        obs: Observation,
        domain: Domain,
        j_of_level: Callable[[int], int],
        qoi: QoI | None = None,
        memory_budget: int = DEFAULT_MEMORY_BUDGET,
        cache_size: int = 256,
    ):
        self.template = template
        self.obs = obs
        self.domain = domain
        self.j_of_level = j_of_level
        self.qoi = qoi
        self.memory_budget = memory_budget
        self.cache_size = cache_size
        self.work = WorkCounter()
        self._grids: dict[int, Grid] = {}
        self._cache: OrderedDict = OrderedDict()
        self._nodes: dict[tuple, tuple] = {}

        sources: list[tuple[float, float]] = [tuple(map(float, s)) for s in obs.sources]
        if qoi is not None and qoi.kind == "solution" and tuple(qoi.source) not in sources:
            sources.append(tuple(map(float, qoi.source)))
        self._sources = sources
        self._targets: dict[int, np.ndarray] = {}
        for si, s in enumerate(sources):
            pts = []
            if si < obs.sources.shape[0]:
                pts.extend(map(tuple, obs.points))
            if qoi is not None and qoi.kind == "solution" and tuple(qoi.source) == s:
                pts.extend(map(tuple, qoi.points))
            self._targets[si] = np.array(sorted(set(pts)))
        self._obs_slots = {
            si: self._slots(si, obs.points) for si in range(obs.sources.shape[0])
        }
        if qoi is not None and qoi.kind == "solution":
            qsi = sources.index(tuple(map(float, qoi.source)))
            self._qoi_source = qsi
            self._qoi_slots = self._slots(qsi, qoi.points)

    def _slots(self, si, points):
        tg = [tuple(p) for p in self._targets[si]]
        return np.array([tg.index(tuple(p)) for p in points], dtype=np.int64)

    def J(self, level: int) -> int:
        """Truncation at ``level``, capped at the number of basis terms."""
        return min(self.j_of_level(level), self.template.basis.max_terms)

    def grid(self, level: int) -> Grid:
        g = self._grids.get(level)
        if g is None:
            g = build_grid(self.domain, level, self.memory_budget)
            self._grids[level] = g
        return g

    def level_spec(self, level: int) -> LevelSpec:
        return LevelSpec(level, self.J(level), self.grid(level))

    def validate_level(self, level: int) -> None:
        """Raise if any source or target point is not a node at ``level``."""
        for si in range(len(self._sources)):
            self._node_indices(level, si)

    def _node_indices(self, level: int, si: int):
        key = (level, si)
        out = self._nodes.get(key)
        if out is None:
            g = self.grid(level)
            src = g.node_at(self._sources[si])
            tg = np.array([g.node_at(p) for p in self._targets[si]], dtype=np.int64)
            out = (src, tg)
            self._nodes[key] = out
        return out

    def _coeffs(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim != 1:
            raise ValueError("parameter vector must be 1-D")
        return u

    def slowness_on_grid(self, u, level: int) -> np.ndarray:
        return self.template.with_coeffs(u).on_grid(self.grid(level), self.J(level))

    def _times(self, u, level: int, sources: Sequence[int]) -> dict[int, np.ndarray]:
        u = self._coeffs(u)
        ukey = u.tobytes()
        out = {}
        missing = []
        for si in sources:
            key = (ukey, level, si)
            hit = self._cache.get(key)
            if hit is None:
                missing.append(si)
            else:
                self._cache.move_to_end(key)
                out[si] = hit
        if missing:
            s = self.slowness_on_grid(u, level)
            g = self.grid(level)
            for si in missing:
                src, tg = self._node_indices(level, si)
                vals, n_acc, n_upd = solve_at(g, s, src, tg)
                self.work.solves += 1
                self.work.nodes += n_acc
                self.work.updates += n_upd
                self._cache[(ukey, level, si)] = vals
                out[si] = vals
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return out

    def forward(self, u, level: int) -> np.ndarray:
        n_obs = self.obs.sources.shape[0]
        times = self._times(u, level, range(n_obs))
        return np.concatenate([times[si][self._obs_slots[si]] for si in range(n_obs)])

    def potential(self, u, level: int) -> float:
        return self.obs.potential(self.forward(u, level))

    def qoi_value(self, u, level: int) -> np.ndarray:
        """The QoI at ``level``: ``T^l`` at the QoI points or ``s^{J_l}`` there."""
        q = self.qoi
        if q is None:
            raise ValueError("problem has no quantity of interest")
        if q.kind == "solution":
            return self._times(u, level, [self._qoi_source])[self._qoi_source][self._qoi_slots]
        field_ = self.template.with_coeffs(self._coeffs(u))
        return np.asarray(field_.evaluate(q.points[:, 0], q.points[:, 1], self.J(level)), dtype=float)
