"""Regular lattices over axis-aligned rectangles.

Level ``l`` splits the domain width into ``2**l`` cells of side ``h``; the
height must be a whole number of cells.  Nodes are stored row-major with the
row index running along ``y``, so ``values.reshape(grid.shape)`` gives a
matrix whose rows are grid rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Rough per-node footprint of a solve: travel time, slowness, state flag,
# node kind and an amortised share of the heap arrays.
BYTES_PER_NODE = 48
DEFAULT_MEMORY_BUDGET = 2 * 1024**3

INTERIOR, EDGE, CORNER = 0, 1, 2


class MemoryBudgetError(ValueError):
    """Raised when a grid level would not fit in the memory budget."""


@dataclass(frozen=True)
class Domain:
    lower: tuple[float, float]
    upper: tuple[float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != 2 or len(hi) != 2:
            raise ValueError("domain corners must be 2-D points")
        if not (lo[0] < hi[0] and lo[1] < hi[1]):
            raise ValueError(f"domain lower {lo} must be < upper {hi} componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def width(self) -> float:
        return self.upper[0] - self.lower[0]

    @property
    def height(self) -> float:
        return self.upper[1] - self.lower[1]

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x[..., 0] >= self.lower[0] - tol)
            and np.all(x[..., 0] <= self.upper[0] + tol)
            and np.all(x[..., 1] >= self.lower[1] - tol)
            and np.all(x[..., 1] <= self.upper[1] + tol)
        )


@dataclass(frozen=True)
class Grid:
    """Lattice ``G_h`` of a :class:`Domain` at a dyadic level.

    Boundary nodes only couple to interior neighbours.  Corners have no
    interior neighbour, so they couple to the two adjacent edge nodes
    instead; this keeps every lattice node solvable.
    """

    domain: Domain
    level: int
    h: float
    nx: int
    ny: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny + 1, self.nx + 1)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_interior(self) -> int:
        return (self.nx - 1) * (self.ny - 1)

    @property
    def n_boundary(self) -> int:
        return self.n_nodes - self.n_interior

    @property
    def x(self) -> np.ndarray:
        return self.domain.lower[0] + self.h * np.arange(self.nx + 1)

    @property
    def y(self) -> np.ndarray:
        return self.domain.lower[1] + self.h * np.arange(self.ny + 1)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays ``(X, Y)`` of shape :attr:`shape`."""
        return np.meshgrid(self.x, self.y)

    def index(self, ix: int, iy: int) -> int:
        return iy * (self.nx + 1) + ix

    def unravel(self, idx: int) -> tuple[int, int]:
        iy, ix = divmod(int(idx), self.nx + 1)
        return ix, iy

    def node_coords(self, idx: int) -> tuple[float, float]:
        ix, iy = self.unravel(idx)
        return (self.domain.lower[0] + ix * self.h, self.domain.lower[1] + iy * self.h)

    def kinds(self) -> np.ndarray:
        """Per-node kind (``INTERIOR``, ``EDGE`` or ``CORNER``) as a 2-D array."""
        kind = np.full(self.shape, INTERIOR, dtype=np.int8)
        kind[0, :] = kind[-1, :] = EDGE
        kind[:, 0] = kind[:, -1] = EDGE
        kind[0, 0] = kind[0, -1] = kind[-1, 0] = kind[-1, -1] = CORNER
        return kind

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.kinds() != INTERIOR

    def _kind(self, ix: int, iy: int) -> int:
        on_x = ix == 0 or ix == self.nx
        on_y = iy == 0 or iy == self.ny
        if on_x and on_y:
            return CORNER
        if on_x or on_y:
            return EDGE
        return INTERIOR

    def neighbors(self, idx: int) -> list[tuple[int, float]]:
        """The neighbour set ``N_alpha`` of a node with edge lengths."""
        ix, iy = self.unravel(idx)
        own = self._kind(ix, iy)
        out = []
        for jx, jy in ((ix - 1, iy), (ix + 1, iy), (ix, iy - 1), (ix, iy + 1)):
            if not (0 <= jx <= self.nx and 0 <= jy <= self.ny):
                continue
            other = self._kind(jx, jy)
            if own == INTERIOR or (own == EDGE and other == INTERIOR) or (
                own == CORNER and other == EDGE
            ):
                out.append((self.index(jx, jy), self.h))
        return out

    def snap_point(self, x) -> int:
        """Index of the nearest node; ties go to the lowest index."""
        x = np.asarray(x, dtype=float)
        if not self.domain.contains(x, tol=1e-12 * max(self.domain.width, 1.0)):
            raise ValueError(f"point {tuple(x)} lies outside the domain {self.domain}")
        fx = (x[0] - self.domain.lower[0]) / self.h
        fy = (x[1] - self.domain.lower[1]) / self.h
        ix = min(max(math.ceil(fx - 0.5), 0), self.nx)
        iy = min(max(math.ceil(fy - 0.5), 0), self.ny)
        return self.index(ix, iy)

    def node_at(self, x, tol: float = 1e-9) -> int:
        """Index of the node located exactly at ``x``; raise if there is none."""
        idx = self.snap_point(x)
        nx_, ny_ = self.node_coords(idx)
        if abs(nx_ - x[0]) > tol * self.h or abs(ny_ - x[1]) > tol * self.h:
            raise ValueError(
                f"point {tuple(float(v) for v in x)} is not a node of the level-{self.level} grid"
            )
        return idx


def estimate_memory(domain: Domain, level: int) -> int:
    n = 2**level
    ny = n * domain.height / domain.width
    return int((n + 1) * (ny + 1) * BYTES_PER_NODE)


def build_grid(domain: Domain, level: int, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> Grid:
    if level < 1:
        raise ValueError(f"level must be >= 1, got {level}")
    need = estimate_memory(domain, level)
    if need > memory_budget:
        raise MemoryBudgetError(
            f"level {level} needs about {need / 1024**2:.0f} MiB, "
            f"budget is {memory_budget / 1024**2:.0f} MiB"
        )
    nx = 2**level
    h = domain.width / nx
    ny_f = domain.height / h
    ny = int(round(ny_f))
    if ny < 2 or abs(ny - ny_f) > 1e-9 * ny_f:
        raise ValueError(
            f"domain height {domain.height} is not a whole number of level-{level} cells (h={h})"
        )
    return Grid(domain=domain, level=level, h=h, nx=nx, ny=ny)
