import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eikonal_mlmcmc.bayes import eight_points
from eikonal_mlmcmc.field import SineBasis, SlownessField
from eikonal_mlmcmc.fmm import discrete_residual, fmm_solve, interpolate_field, local_update, solve_at
from eikonal_mlmcmc.grid import Domain, build_grid
from eikonal_mlmcmc.presets import SYMMETRIC, one_parameter_template

# travel times at the eight observation points, u = 0.4, source (0, 0), level 12
GOLDEN_L12 = np.array(
    [1.26138165, 0.9933087, 0.9933087, 1.26138165, 1.26138165, 0.9933087, 0.9933087, 1.26138165]
)
# C in |T_l - T| <= C 2^{-l/2}, from the level-6 constant-slowness error bound 0.08
C_RATE = 0.08 * 2**3


def _centre_solve(level, s=None, domain=SYMMETRIC):
    g = build_grid(domain, level)
    s = np.ones(g.shape) if s is None else s
    return g, fmm_solve(g, s, g.node_at((0.0, 0.0)))


def _full_residual(grid, T, s, source):
    """Relative residual at every non-source node, from the neighbour lists."""
    T, s = T.ravel(), s.ravel()
    out = np.zeros(grid.n_nodes)
    for a in range(grid.n_nodes):
        if a == source:
            continue
        nbrs = list(grid.neighbors(a))
        # the source value is upwind data for every lattice neighbour of the source
        (ax, ay), (sx, sy) = grid.unravel(a), grid.unravel(source)
        if abs(ax - sx) + abs(ay - sy) == 1 and source not in [b for b, _ in nbrs]:
            nbrs.append((source, grid.h))
        lhs = sum(max(T[a] - T[b], 0.0) ** 2 / h**2 for b, h in nbrs)
        out[a] = abs(lhs - s[a] ** 2) / s[a] ** 2
    return out


def _smooth_field(seed, terms=10):
    b = SineBasis(kappa=4, max_terms=terms, origin=(-1, -1), scale=(2, 2))
    return SlownessField(b, np.random.default_rng(seed).standard_normal(terms))


def test_local_update_examples():
    assert local_update([0, np.inf], 1, 1) == 1.0
    assert local_update([0, 0], 1, 1) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert local_update([0, 0.5], 1, 1) == pytest.approx((1 + math.sqrt(7)) / 4, abs=1e-15)


def test_local_update_ignores_large_neighbours():
    assert local_update([0.0, 5.0], 1.0, 1.0) == 1.0


def test_local_update_errors():
    with pytest.raises(ValueError):
        local_update([0.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        local_update([np.inf, np.inf], 1.0, 1.0)


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(0, 10), min_size=1, max_size=4),
    st.floats(1e-3, 1.0),
    st.floats(0.1, 10),
)
def test_local_update_solves_quadratic(vals, h, s):
    t = local_update(vals, h, s)
    assert t >= min(vals)
    assert t <= min(vals) + h * s + 1e-12
    lhs = sum(max(t - v, 0.0) ** 2 for v in vals) / h**2
    assert lhs == pytest.approx(s * s, rel=1e-10)


def test_constant_slowness_level6_error():
    g, T = _centre_solve(6)
    X, Y = g.coordinates()
    assert np.abs(T.values - np.hypot(X, Y)).max() <= 0.08


def test_doubling_slowness_doubles_times_exactly():
    g, T1 = _centre_solve(6)
    _, T2 = _centre_solve(6, 2 * np.ones(g.shape))
    assert np.array_equal(T2.values, 2 * T1.values)


def test_source_zero_and_times_nonnegative():
    g, T = _centre_solve(5, _smooth_field(0).on_grid(build_grid(SYMMETRIC, 5)))
    assert T.values.flat[T.source] == 0.0
    assert np.all(T.values >= 0)
    assert np.all(np.isfinite(T.values))


def test_accept_order_monotone():
    g = build_grid(SYMMETRIC, 6)
    s = _smooth_field(1).on_grid(g)
    T = fmm_solve(g, s, g.node_at((0.25, -0.5)), record_order=True)
    assert T.order.size == g.n_nodes == T.n_accepted
    assert np.all(np.diff(T.order) >= 0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_discrete_residual(seed):
    g = build_grid(SYMMETRIC, 6)
    s = _smooth_field(seed).on_grid(g)
    src = g.node_at((0.5, 0.25))
    T = fmm_solve(g, s, src)
    assert _full_residual(g, T.values, s, src).max() <= 1e-10
    r = discrete_residual(g, T.values, s)
    mask = np.ones(r.shape, bool)
    iy, ix = divmod(src, g.nx + 1)
    mask[iy - 1, ix - 1] = False
    assert r[mask].max() <= 1e-10


def test_source_on_boundary():
    g = build_grid(SYMMETRIC, 5)
    s = np.ones(g.shape)
    src = g.node_at((-1.0, -1.0))
    T = fmm_solve(g, s, src)
    assert _full_residual(g, T.values, s, src).max() <= 1e-10
    X, Y = g.coordinates()
    assert np.abs(T.values - np.hypot(X + 1, Y + 1)).max() <= 0.2


def test_lipschitz_between_coupled_neighbours():
    g = build_grid(SYMMETRIC, 5)
    s = _smooth_field(3).on_grid(g)
    T = fmm_solve(g, s, g.node_at((0.0, 0.0))).values.ravel()
    smax = s.max()
    for a in range(g.n_nodes):
        for b, h in g.neighbors(a):
            assert abs(T[a] - T[b]) <= h * smax * (1 + 1e-12)


def test_solve_at_matches_full_solve():
    g = build_grid(SYMMETRIC, 7)
    s = _smooth_field(4).on_grid(g)
    src = g.node_at((0.0, 0.0))
    targets = [g.node_at(p) for p in eight_points(SYMMETRIC)]
    vals, n_acc, n_upd = solve_at(g, s, src, targets)
    full = fmm_solve(g, s, src)
    assert np.array_equal(vals, full.values.ravel()[targets])
    assert n_acc <= full.n_accepted and n_upd <= full.n_updates


def test_bit_reproducible():
    g = build_grid(SYMMETRIC, 6)
    s = _smooth_field(5).on_grid(g)
    a = fmm_solve(g, s, 100, record_order=True)
    b = fmm_solve(g, s, 100, record_order=True)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.order, b.order)


def test_rejects_bad_slowness():
    g = build_grid(SYMMETRIC, 3)
    s = np.ones(g.shape)
    s[2, 2] = 0.0
    with pytest.raises(ValueError, match="positive"):
        fmm_solve(g, s, 0)
    s[2, 2] = np.nan
    with pytest.raises(ValueError):
        fmm_solve(g, s, 0)
    with pytest.raises(ValueError):
        fmm_solve(g, np.ones(g.shape), g.n_nodes)


def test_rectangular_domain():
    dom = Domain((0, 0), (2, 1))
    g = build_grid(dom, 6)
    T = fmm_solve(g, np.ones(g.shape), g.node_at((1.0, 0.5)))
    X, Y = g.coordinates()
    assert np.abs(T.values - np.hypot(X - 1, Y - 0.5)).max() <= 0.08


def test_order_on_smooth_slowness():
    f = one_parameter_template().with_coeffs([0.4])
    ref_grid, ref = _centre_solve(12, f.on_grid(build_grid(SYMMETRIC, 12)))
    errs = []
    for level in range(4, 10):
        g, T = _centre_solve(level, f.on_grid(build_grid(SYMMETRIC, level)))
        stride = 2 ** (12 - level)
        errs.append(np.abs(T.values - ref.values[::stride, ::stride]).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 0.4) & (orders <= 1.1)), orders


def _golden(level):
    f = one_parameter_template().with_coeffs([0.4])
    g = build_grid(SYMMETRIC, level, memory_budget=4 * 1024**3)
    targets = [g.node_at(p) for p in eight_points(SYMMETRIC)]
    vals, _, _ = solve_at(g, f.on_grid(g), g.node_at((0.0, 0.0)), targets)
    return vals


def test_golden_vector_level12():
    assert np.allclose(_golden(12), GOLDEN_L12, rtol=0, atol=1e-8)


@pytest.mark.slow
def test_golden_vector_cross_validated_level13():
    v13 = _golden(13)
    assert np.abs(v13 - GOLDEN_L12).max() <= 2 * C_RATE * 2.0**-6


def test_bicubic_reproduces_constants_and_bilinear():
    xs = np.linspace(0, 1, 6)
    ys = np.linspace(0, 2, 5)
    X, Y = np.meshgrid(xs, ys)
    q = np.random.default_rng(0).uniform(0, 1, (2, 50)) * np.array([[1], [2]])
    c = interpolate_field(xs, ys, np.full(X.shape, 3.5))
    assert np.allclose(c(q[0], q[1]), 3.5, atol=1e-12)
    b = interpolate_field(xs, ys, 1 + 2 * X - Y + 0.5 * X * Y)
    assert np.allclose(b(q[0], q[1]), 1 + 2 * q[0] - q[1] + 0.5 * q[0] * q[1], atol=1e-12)


def test_bicubic_sine_accuracy():
    xs = np.linspace(0, 1, 8)
    X, Y = np.meshgrid(xs, xs)
    f = interpolate_field(xs, xs, np.sin(np.pi * X) * np.sin(np.pi * Y))
    p = np.linspace(0, 1, 64)
    PX, PY = np.meshgrid(p, p)
    assert np.abs(f(PX, PY) - np.sin(np.pi * PX) * np.sin(np.pi * PY)).max() <= 0.05


def test_bicubic_errors():
    xs = np.linspace(0, 1, 4)
    f = interpolate_field(xs, xs, np.zeros((4, 4)))
    with pytest.raises(ValueError, match="outside"):
        f(1.5, 0.5)
    with pytest.raises(ValueError):
        interpolate_field(xs[:3], xs, np.zeros((4, 3)))


def test_travel_time_field_helpers(tmp_path):
    g, T = _centre_solve(4)
    assert T.at((1.0, 0.0)) == T.values[g.shape[0] // 2, -1]
    path = T.save_matrix(tmp_path / "t.txt")
    assert np.array_equal(np.loadtxt(path), T.values)
