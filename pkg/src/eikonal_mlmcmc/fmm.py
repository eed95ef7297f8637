"""Fast Marching solver for the discrete eikonal system on a :class:`Grid`.

At every node ``a`` with neighbour set ``N_a`` the scheme solves::

    sum_{b in N_a} [((T_a - T_b) / h)^+]^2 = s_a^2

Nodes are finalised in increasing order of travel time through a binary
min-heap.  Stale heap entries are skipped on pop instead of being removed
(lazy deletion); equal keys are ordered by node index so solves are
bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np
from scipy.interpolate import RectBivariateSpline

from .grid import Grid

PAD = 3
_FAR, _TRIAL, _KNOWN = 0, 1, 2


def local_update(neighbor_times, h: float, s: float) -> float:
    """Solve ``sum_b [((t - T_b)/h)^+]^2 = s^2`` for ``t``.

    Only finite neighbour values take part.  Values are added in increasing
    order and the quadratic is re-solved while the root exceeds the next
    value, so the result is the unique root of the monotone left-hand side.
    """
    if s <= 0:
        raise ValueError("slowness must be positive")
    vals = sorted(float(v) for v in neighbor_times if np.isfinite(v))
    if not vals:
        raise ValueError("local_update needs at least one finite neighbour value")
    # work with offsets from the smallest value to avoid cancellation
    hs2 = (h * s) ** 2
    d = [v - vals[0] for v in vals]
    s1 = s2 = 0.0
    tau = h * s
    k = 1
    while k < len(d) and tau > d[k]:
        s1 += d[k]
        s2 += d[k] ** 2
        k += 1
        disc = s1 * s1 - k * (s2 - hs2)
        tau = (s1 + np.sqrt(max(disc, 0.0))) / k
    return vals[0] + tau


@nb.njit(cache=True, inline="always")
def _before(k1, i1, k2, i2):
    return k1 < k2 or (k1 == k2 and i1 < i2)


@nb.njit(cache=True, inline="always")
def _couples(kb, kc):
    # is c in the neighbour set of b?
    return (kb == 0 and kc != 3) or (kb == 1 and kc == 0) or (kb == 2 and kc == 1)


@nb.njit(cache=True)
def _march(kind, slow, stride, h, source, targets, record):
    """FMM on a padded lattice.

    ``kind`` and ``slow`` are flattened padded arrays with row length
    ``stride``; ``kind`` is 3 on the padding ring.
    Returns ``(T, order, n_accepted, n_updates)``.
    """
    n = kind.size
    T = np.full(n, np.inf)
    state = np.zeros(n, np.int8)
    cap = 1024
    hk = np.empty(cap)
    hi = np.empty(cap, np.int64)
    T[source] = 0.0
    hk[0] = 0.0
    hi[0] = source
    size = 1

    is_target = np.zeros(n, np.bool_)
    remaining = 0
    for t in targets:
        if not is_target[t]:
            is_target[t] = True
            remaining += 1
    stop_early = remaining > 0

    order = np.empty(n if record else 1)
    n_acc = 0
    n_upd = 0
    offs = np.array([-1, 1, -stride, stride])
    vals = np.empty(4)

    while size > 0:
        key = hk[0]
        a = hi[0]
        size -= 1
        if size > 0:
            lk = hk[size]
            li = hi[size]
            pos = 0
            while True:
                c = 2 * pos + 1
                if c >= size:
                    break
                if c + 1 < size and _before(hk[c + 1], hi[c + 1], hk[c], hi[c]):
                    c += 1
                if _before(hk[c], hi[c], lk, li):
                    hk[pos] = hk[c]
                    hi[pos] = hi[c]
                    pos = c
                else:
                    break
            hk[pos] = lk
            hi[pos] = li
        if state[a] == _KNOWN or key > T[a]:
            continue
        state[a] = _KNOWN
        if record:
            order[n_acc] = key
        n_acc += 1
        if stop_early and is_target[a]:
            remaining -= 1
            if remaining == 0:
                break
        ka = kind[a]
        for q in range(4):
            b = a + offs[q]
            kb = kind[b]
            if kb == 3 or state[b] == _KNOWN or not (_couples(kb, ka) or a == source):
                continue
            cnt = 0
            for r in range(4):
                c = b + offs[r]
                if state[c] != _KNOWN:
                    continue
                if kb != 0 and not (_couples(kb, kind[c]) or c == source):
                    continue
                v = T[c]
                j = cnt
                while j > 0 and vals[j - 1] > v:
                    vals[j] = vals[j - 1]
                    j -= 1
                vals[j] = v
                cnt += 1
            n_upd += 1
            hs = h * slow[b]
            hs2 = hs * hs
            v0 = vals[0]
            s1 = 0.0
            s2 = 0.0
            tau = hs
            kk = 1
            while kk < cnt and tau > vals[kk] - v0:
                dk = vals[kk] - v0
                s1 += dk
                s2 += dk * dk
                kk += 1
                disc = s1 * s1 - kk * (s2 - hs2)
                if disc < 0.0:
                    disc = 0.0
                tau = (s1 + np.sqrt(disc)) / kk
            tt = v0 + tau
            if tt < key:
                tt = key
            if tt < T[b]:
                T[b] = tt
                state[b] = _TRIAL
                if size == cap:
                    cap *= 2
                    nk = np.empty(cap)
                    ni = np.empty(cap, np.int64)
                    nk[:size] = hk[:size]
                    ni[:size] = hi[:size]
                    hk = nk
                    hi = ni
                pos = size
                size += 1
                while pos > 0:
                    p = (pos - 1) >> 1
                    if _before(tt, b, hk[p], hi[p]):
                        hk[pos] = hk[p]
                        hi[pos] = hi[p]
                        pos = p
                    else:
                        break
                hk[pos] = tt
                hi[pos] = b
    return T, order[:n_acc] if record else order[:0], n_acc, n_upd


def _padded_kind(grid: Grid) -> np.ndarray:
    kind = np.full((grid.ny + 3, grid.nx + 3), PAD, dtype=np.int8)
    kind[1:-1, 1:-1] = grid.kinds()
    return kind


_KIND_CACHE: dict[tuple, np.ndarray] = {}


def _kind_for(grid: Grid) -> np.ndarray:
    key = (grid.nx, grid.ny)
    kind = _KIND_CACHE.get(key)
    if kind is None:
        kind = _padded_kind(grid).ravel()
        if grid.n_nodes <= 1 << 20:
            _KIND_CACHE[key] = kind
    return kind


def _to_padded(grid: Grid, idx):
    ix = np.asarray(idx) % (grid.nx + 1)
    iy = np.asarray(idx) // (grid.nx + 1)
    return (iy + 1) * (grid.nx + 3) + ix + 1


@dataclass
class TravelTimeField:
    grid: Grid
    source: int
    values: np.ndarray
    n_accepted: int
    n_updates: int
    order: np.ndarray | None = None

    def at(self, x) -> float:
        return float(self.values.flat[self.grid.node_at(x)])

    def save_matrix(self, path) -> Path:
        path = Path(path)
        np.savetxt(path, self.values, fmt="%.17g")
        return path


def _check_slowness(grid: Grid, node_slowness) -> np.ndarray:
    s = np.asarray(node_slowness, dtype=float).reshape(grid.shape)
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        bad = np.flatnonzero(~(s.ravel() > 0) | ~np.isfinite(s.ravel()))
        raise ValueError(
            f"slowness must be finite and positive; {bad.size} bad node(s), first at {bad[0]}"
        )
    return s


def _run(grid: Grid, s: np.ndarray, source: int, targets, record: bool):
    padded = np.ones((grid.ny + 3, grid.nx + 3))
    padded[1:-1, 1:-1] = s
    tgt = np.empty(0, np.int64) if targets is None else _to_padded(grid, targets).astype(np.int64)
    T, order, n_acc, n_upd = _march(
        _kind_for(grid), padded.ravel(), grid.nx + 3, float(grid.h), int(_to_padded(grid, source)), tgt, record
    )
    T = T.reshape(grid.ny + 3, grid.nx + 3)[1:-1, 1:-1]
    return T, order, n_acc, n_upd


def fmm_solve(grid: Grid, node_slowness, source: int, record_order: bool = False) -> TravelTimeField:
    """First-arrival times from ``source`` (a node index) on every node."""
    s = _check_slowness(grid, node_slowness)
    if not 0 <= source < grid.n_nodes:
        raise ValueError(f"source index {source} outside grid")
    T, order, n_acc, n_upd = _run(grid, s, source, None, record_order)
    return TravelTimeField(grid, int(source), T, n_acc, n_upd, order if record_order else None)


def solve_at(grid: Grid, node_slowness, source: int, targets) -> tuple[np.ndarray, int, int]:
    """Travel times at the ``targets`` node indices only.

    Marching stops once every target is final; values are identical to the
    corresponding entries of :func:`fmm_solve`.
    """
    s = _check_slowness(grid, node_slowness)
    targets = np.asarray(targets, dtype=np.int64)
    T, _, n_acc, n_upd = _run(grid, s, source, targets, False)
    return T.ravel()[targets].copy(), n_acc, n_upd


def discrete_residual(grid: Grid, T: np.ndarray, node_slowness) -> np.ndarray:
    """Relative residual of the discrete equation at each interior node."""
    T = np.asarray(T, dtype=float).reshape(grid.shape)
    s = np.asarray(node_slowness, dtype=float).reshape(grid.shape)
    c = T[1:-1, 1:-1]
    lhs = np.zeros_like(c)
    for nbr in (T[1:-1, :-2], T[1:-1, 2:], T[:-2, 1:-1], T[2:, 1:-1]):
        lhs += (np.maximum(c - nbr, 0.0) / grid.h) ** 2
    s2 = s[1:-1, 1:-1] ** 2
    return np.abs(lhs - s2) / s2


class BicubicField:
    """Bicubic spline through samples on a tensor grid of points."""

    def __init__(self, xs, ys, values):
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (self.ys.size, self.xs.size):
            raise ValueError("values must have shape (len(ys), len(xs))")
        if min(values.shape) < 4:
            raise ValueError("bicubic interpolation needs at least 4 samples per axis")
        self._spline = RectBivariateSpline(self.ys, self.xs, values, kx=3, ky=3, s=0)

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        tol = 1e-12 * (self.xs[-1] - self.xs[0])
        if (
            x.min() < self.xs[0] - tol
            or x.max() > self.xs[-1] + tol
            or y.min() < self.ys[0] - tol
            or y.max() > self.ys[-1] + tol
        ):
            raise ValueError("query outside the sampled region")
        return self._spline.ev(y.ravel(), x.ravel()).reshape(x.shape)


def interpolate_field(xs, ys, values) -> BicubicField:
    return BicubicField(xs, ys, values)
