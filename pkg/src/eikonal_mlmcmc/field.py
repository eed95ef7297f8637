"""Log-normal slowness fields built from a Karhunen-Loeve type expansion.

The slowness is ``s(x, u) = s_star(x) + exp(s_bar(x) + sum_k u_k psi_k(x))``.
Truncating at ``J`` keeps the first ``J`` coefficients; coefficients that were
never stored count as zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .grid import Domain, Grid

_INT64_MAX = 2**63 - 1


def cantor_index(i: int, j: int) -> int:
    """One-based Cantor pairing ``k = (i+j)(i+j+1)/2 + j + 1``."""
    if i < 0 or j < 0:
        raise ValueError(f"indices must be non-negative, got ({i}, {j})")
    k = (i + j) * (i + j + 1) // 2 + j + 1
    if k > _INT64_MAX:
        raise OverflowError(f"Cantor index of ({i}, {j}) exceeds the 64-bit range")
    return k


def cantor_unindex(k: int) -> tuple[int, int]:
    if k < 1:
        raise ValueError(f"Cantor index must be >= 1, got {k}")
    if k > _INT64_MAX:
        raise OverflowError(f"Cantor index {k} exceeds the 64-bit range")
    z = k - 1
    w = (math.isqrt(8 * z + 1) - 1) // 2
    j = z - w * (w + 1) // 2
    return w - j, j


class GridFunction:
    """Scalar function tabulated on a regular node lattice, bilinear in between."""

    def __init__(self, domain: Domain, values):
        self.domain = domain
        self.values = np.asarray(values, dtype=float)
        ny, nx = self.values.shape
        xs = np.linspace(domain.lower[0], domain.upper[0], nx)
        ys = np.linspace(domain.lower[1], domain.upper[1], ny)
        self._interp = RegularGridInterpolator((ys, xs), self.values, method="linear")

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        pts = np.stack([y.ravel(), x.ravel()], axis=-1)
        return self._interp(pts).reshape(x.shape)


Scalar = Union[float, GridFunction]


def _eval_scalar(f: Scalar, x, y):
    if isinstance(f, GridFunction):
        return f(x, y)
    return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(f))


@dataclass(frozen=True)
class SineBasis:
    """Tensor sine basis enumerated by the Cantor pairing.

    Term ``k`` with ``(i, j) = cantor_unindex(k)`` is::

        kappa / ((i+1)**2 + (j+1)**2)**2 * sin((i+1) pi xr) * sin((j+1) pi yr)

    where ``(xr, yr) = (x - origin) / scale`` maps the physical domain onto the
    reference coordinates.  ``origin=(0, 0), scale=(1, 1)`` uses the physical
    coordinates directly.
    """

    kappa: float = 1.0
    max_terms: int = 64
    origin: tuple[float, float] = (0.0, 0.0)
    scale: tuple[float, float] = (1.0, 1.0)
    p: float = 2.0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be >= 1")

    @classmethod
    def on_unit_square(cls, domain: Domain, **kwargs) -> "SineBasis":
        return cls(origin=domain.lower, scale=(domain.width, domain.height), **kwargs)

    def amplitude(self, k: int) -> float:
        i, j = cantor_unindex(k)
        return self.kappa / ((i + 1) ** 2 + (j + 1) ** 2) ** 2

    def sup_norm(self, k: int) -> float:
        return self.amplitude(k)

    def _factors(self, k: int, x, y):
        i, j = cantor_unindex(k)
        xr = (np.asarray(x, float) - self.origin[0]) / self.scale[0]
        yr = (np.asarray(y, float) - self.origin[1]) / self.scale[1]
        return np.sin((i + 1) * np.pi * xr), np.sin((j + 1) * np.pi * yr)

    def evaluate(self, k: int, x, y):
        sx, sy = self._factors(k, x, y)
        return self.amplitude(k) * sx * sy

    def combine_on_grid(self, coeffs: np.ndarray, grid: Grid) -> np.ndarray:
        """``sum_k coeffs[k-1] psi_k`` at the nodes of ``grid``.

        Uses separability: the sum is ``Sy.T @ W @ Sx`` with one row of sines
        per frequency.
        """
        out = np.zeros(grid.shape)
        if len(coeffs) == 0:
            return out
        pairs = [cantor_unindex(k) for k in range(1, len(coeffs) + 1)]
        ni = max(p[0] for p in pairs) + 1
        nj = max(p[1] for p in pairs) + 1
        W = np.zeros((nj, ni))
        for c, (i, j) in zip(coeffs, pairs):
            W[j, i] += c * self.kappa / ((i + 1) ** 2 + (j + 1) ** 2) ** 2
        xr = (grid.x - self.origin[0]) / self.scale[0]
        yr = (grid.y - self.origin[1]) / self.scale[1]
        Sx = np.sin(np.pi * np.outer(np.arange(1, ni + 1), xr))
        Sy = np.sin(np.pi * np.outer(np.arange(1, nj + 1), yr))
        return Sy.T @ W @ Sx


@dataclass(frozen=True, eq=False)
class TabulatedBasis:
    """Basis functions given by node values on a regular lattice over ``domain``."""

    domain: Domain
    tables: np.ndarray = field(repr=False)
    p: float = 2.0

    def __post_init__(self):
        t = np.asarray(self.tables, dtype=float)
        if t.ndim != 3 or t.shape[0] < 1:
            raise ValueError("tables must have shape (terms, ny, nx)")
        object.__setattr__(self, "tables", t)
        object.__setattr__(
            self, "_funcs", tuple(GridFunction(self.domain, t[k]) for k in range(t.shape[0]))
        )

    @property
    def max_terms(self) -> int:
        return self.tables.shape[0]

    def sup_norm(self, k: int) -> float:
        return float(np.abs(self.tables[k - 1]).max())

    def evaluate(self, k: int, x, y):
        return self._funcs[k - 1](x, y)

    def combine_on_grid(self, coeffs: np.ndarray, grid: Grid) -> np.ndarray:
        X, Y = grid.coordinates()
        out = np.zeros(grid.shape)
        for k, c in enumerate(coeffs, start=1):
            if c != 0.0:
                out += c * self.evaluate(k, X, Y)
        return out


KLBasis = Union[SineBasis, TabulatedBasis]


def basis_eval(k: int, x, kappa: float, origin=(0.0, 0.0), scale=(1.0, 1.0)):
    """Evaluate the ``k``-th analytic sine basis function at ``x``."""
    x = np.asarray(x, dtype=float)
    return SineBasis(kappa=kappa, origin=tuple(origin), scale=tuple(scale)).evaluate(
        k, x[..., 0], x[..., 1]
    )


@dataclass(frozen=True, eq=False)
class SlownessField:
    basis: KLBasis
    u: np.ndarray
    s_star: Scalar = 0.0
    s_bar: Scalar = 0.0

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float)).copy()
        if u.ndim != 1 or not np.all(np.isfinite(u)):
            raise ValueError("coefficients must be a finite 1-D vector")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        if not isinstance(self.s_star, GridFunction) and self.s_star < 0:
            raise ValueError("s_star must be non-negative")

    def with_coeffs(self, u) -> "SlownessField":
        return replace(self, u=u)

    def truncated(self, J: int | None) -> np.ndarray:
        if J is None:
            return self.u
        if J < 0:
            raise ValueError("truncation level must be non-negative")
        return self.u[:J]

    def evaluate(self, x, y, J: int | None = None):
        coeffs = self.truncated(J)
        expo = _eval_scalar(self.s_bar, x, y)
        for k, c in enumerate(coeffs, start=1):
            if c != 0.0:
                expo = expo + c * self.basis.evaluate(k, x, y)
        return _eval_scalar(self.s_star, x, y) + np.exp(expo)

    def on_grid(self, grid: Grid, J: int | None = None) -> np.ndarray:
        X = Y = None
        if isinstance(self.s_bar, GridFunction) or isinstance(self.s_star, GridFunction):
            X, Y = grid.coordinates()
        expo = self.basis.combine_on_grid(self.truncated(J), grid)
        if isinstance(self.s_bar, GridFunction):
            expo += self.s_bar(X, Y)
        else:
            expo += float(self.s_bar)
        s = np.exp(expo)
        if isinstance(self.s_star, GridFunction):
            s += self.s_star(X, Y)
        else:
            s += float(self.s_star)
        return s


def slowness_eval(field: SlownessField, x, J: int | None = None):
    x = np.asarray(x, dtype=float)
    return field.evaluate(x[..., 0], x[..., 1], J)


def sample_prior(J: int, rng: np.random.Generator) -> np.ndarray:
    if J < 1:
        raise ValueError("J must be >= 1")
    return rng.standard_normal(J)


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float
    value: float


@dataclass(frozen=True)
class BinaryField:
    """Piecewise-constant slowness: disks of given value on a background.

    Later inclusions win where disks overlap.
    """

    inclusions: Sequence[Disk]
    background: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        if self.background <= 0 or any(d.value <= 0 for d in self.inclusions):
            raise ValueError("binary slowness values must be strictly positive")

    def evaluate(self, x, y, J: int | None = None):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        out = np.full(x.shape, float(self.background))
        for d in self.inclusions:
            inside = (x - d.center[0]) ** 2 + (y - d.center[1]) ** 2 <= d.radius**2
            out[inside] = d.value
        return out

    def on_grid(self, grid: Grid, J: int | None = None) -> np.ndarray:
        X, Y = grid.coordinates()
        return self.evaluate(X, Y)
