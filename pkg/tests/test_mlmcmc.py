import math

import numpy as np
import pytest

from eikonal_mlmcmc.bayes import Problem, QoI, boundary_points, five_sources, generate_observations, j_fixed
from eikonal_mlmcmc.field import BinaryField, Disk, SineBasis, SlownessField
from eikonal_mlmcmc.mcmc import ChainConfig, Independence, run_chain, stream_seed
from eikonal_mlmcmc.mlmcmc import (
    UPPER,
    MLConfig,
    a_terms,
    indicator,
    level_schedule,
    mlmcmc_estimate,
    qoi_increment,
    sample_count,
)
from eikonal_mlmcmc.oracle import gh_posterior_expectation, laplace_rule, quadrature_ml_estimate
from eikonal_mlmcmc.presets import UNIT


class FakeProblem:
    """Potentials and QoI values looked up by level."""

    def __init__(self, phi, q):
        self.phi, self.q = phi, q

    def potential(self, u, level):
        return self.phi[level]

    def qoi_value(self, u, level):
        return np.atleast_1d(self.q[level])


def table1(a, L, l, lp, l0):
    """Sample sizes written out row by row from the sample-size table."""
    if l == l0 and lp == l0:
        m = {0: 2**L / L**4, 2: 2**L / L**2, 3: 2**L / L, 4: 2**L / max(math.log(L), 1) ** 2}[a]
    elif lp == l0:
        m = {0: 2 ** (L - l) / L**2, 2: 2 ** (L - l), 3: l * 2 ** (L - l), 4: l**2 * 2 ** (L - l)}[a]
    elif l == l0:
        m = {0: 2 ** (L - lp) / L**2, 2: 2 ** (L - lp), 3: lp * 2 ** (L - lp), 4: lp**2 * 2 ** (L - lp)}[a]
    else:
        m = (l + lp) ** a * 2 ** (L - (l + lp))
    return max(1, math.ceil(m - 1e-9))


def test_indicator_examples():
    assert indicator(1.0, 1.0) == 1
    assert indicator(1.1, 1.0) == 0
    assert indicator(0.9, 1.0) == 1
    with pytest.raises(ValueError):
        indicator(math.nan, 0.0)


def test_a_terms_equal_potentials():
    p = FakeProblem({3: 2.0, 2: 2.0}, {2: 0.7, 1: 0.4})
    A = a_terms(np.zeros(1), 3, 2, p, l0=1)[:, 0]
    Q = 0.7 - 0.4
    assert A[0] == A[1] == A[2] == A[4] == 0.0
    assert A[3] + A[6] == pytest.approx(Q)
    assert A[5] + A[7] == pytest.approx(Q)


def test_a_terms_branches():
    up = a_terms(np.zeros(1), 3, 1, FakeProblem({3: 1.0, 2: 1.5}, {1: 2.0}), l0=1)[:, 0]
    assert up[1] == up[4] == up[6] == up[7] == 0.0
    e = math.exp(-0.5)
    assert up[0] == pytest.approx((1 - e) * 2.0)
    assert up[2] == pytest.approx(e - 1)
    assert up[3] == 2.0 and up[5] == pytest.approx(2 * e)
    lo = a_terms(np.zeros(1), 3, 1, FakeProblem({3: 1.5, 2: 1.0}, {1: 2.0}), l0=1)[:, 0]
    assert lo[0] == lo[2] == lo[3] == lo[5] == 0.0
    assert lo[1] == pytest.approx((e - 1) * 2.0)
    assert lo[4] == pytest.approx(1 - e)
    assert lo[6] == 2.0 and lo[7] == pytest.approx(2 * e)


def test_a_terms_require_level_above_l0():
    with pytest.raises(ValueError):
        a_terms(np.zeros(1), 2, 2, FakeProblem({2: 0, 1: 0}, {2: 0}), l0=2)


def test_a_terms_bound_random(small_setup):
    prob = small_setup.problem()
    rng = np.random.default_rng(0)
    for _ in range(1000):
        u = rng.standard_normal(1)
        d = prob.potential(u, 4) - prob.potential(u, 3)
        A = a_terms(u, 4, 3, prob, l0=2)
        Q = qoi_increment(prob, u, 3, 2)
        if indicator(prob.potential(u, 4), prob.potential(u, 3)):
            assert np.all(np.abs(A[0]) <= abs(d) * 2 * np.abs(Q) + 1e-15)
        assert np.all(np.abs(A[2]) <= 1) and np.all(np.abs(A[4]) <= 1)


def test_schedule_examples():
    assert sample_count(0, 6, 2, 3, l0=1) == 2
    assert sample_count(3, 6, 2, 3, l0=1) == 250
    assert sample_count(3, 8, 1, 1, l0=1) == 32
    sched = level_schedule(MLConfig(l0=1, L=8, a=3, coarsest_overrides=(5000, 10000)))
    assert sched.M[(1, 1)] == 10000


def test_schedule_unsupported_a():
    with pytest.raises(ValueError, match=r"\(0, 2, 3, 4\)"):
        sample_count(1, 6, 2, 3, l0=1)


@pytest.mark.parametrize("a", [0, 2, 3, 4])
def test_schedule_matches_table(a):
    for L in range(2, 11):
        for l0 in range(1, L + 1):
            sched = level_schedule(MLConfig(l0=l0, L=L, a=a, lprime="full"))
            for l in range(l0, L + 1):
                for lp in range(l0, L + 1):
                    assert sched.M[(l, lp)] == table1(a, L, l, lp, l0)
                    assert sched.M[(l, lp)] >= 1


def test_schedule_sparse_columns():
    sched = level_schedule(MLConfig(l0=2, L=6, a=3))
    assert sched.L_prime == {l: 6 - l for l in range(2, 7)}
    assert sched.columns(2) == [2, 3, 4]
    assert sched.columns(5) == [2]
    assert (6, 2) in sched.M and (5, 3) not in sched.M


def test_single_level_reduces_to_chain_average(small_setup):
    prob = small_setup.problem()
    cfg = MLConfig(l0=3, L=3, base_seed=5, burn_in=10)
    res = mlmcmc_estimate(cfg, prob)
    M = level_schedule(cfg).M[(3, 3)]
    chain = run_chain(
        ChainConfig(Independence(), M, burn_in=10, seed=stream_seed(5, 0, 3, 3, 3, UPPER)),
        lambda u: prob.potential(u, 3),
        [lambda u: prob.qoi_value(u, 3)],
        dim=1,
    )
    assert len(res.chains) == 1
    assert np.array_equal(res.estimate, chain.means[0])


def test_quadrature_telescoping_full(small_setup):
    prob = small_setup.problem()
    rule = laplace_rule(lambda x: prob.potential(np.array([x]), 4))
    est = quadrature_ml_estimate(MLConfig(l0=2, L=4, lprime="full"), prob, rule)
    direct = gh_posterior_expectation(
        lambda x: prob.qoi_value(np.array([x]), 4), lambda x: prob.potential(np.array([x]), 4), rule
    )
    assert abs(est[0] - direct[0]) <= 1e-8


def test_quadrature_telescoping_sparse(small_setup):
    prob = small_setup.problem()
    rule = laplace_rule(lambda x: prob.potential(np.array([x]), 4))
    cfg = MLConfig(l0=2, L=5)
    sched = level_schedule(cfg)

    def E(l, lp):
        return gh_posterior_expectation(
            lambda x: prob.qoi_value(np.array([x]), lp), lambda x: prob.potential(np.array([x]), l), rule
        )[0]

    # sum over the sparse index set of mixed differences, plus the coarse term
    direct = 0.0
    for l in range(2, 6):
        for lp in sched.columns(l):
            d = E(l, lp) - (E(l - 1, lp) if l > 2 else 0.0)
            if lp > 2:
                d -= E(l, lp - 1) - (E(l - 1, lp - 1) if l > 2 else 0.0)
            direct += d
    est = quadrature_ml_estimate(cfg, prob, rule)
    assert abs(est[0] - direct) <= 1e-8


def test_estimate_deterministic_and_counts_work(small_setup):
    prob = small_setup.problem()
    cfg = MLConfig(l0=2, L=4, base_seed=1)
    a = mlmcmc_estimate(cfg, prob)
    b = mlmcmc_estimate(cfg, small_setup.problem())
    assert np.array_equal(a.estimate, b.estimate)
    assert a.node_updates > 0 and a.solves > 0
    assert sum(c.node_updates for c in a.chains) == a.node_updates
    # one upper/lower pair per (l, l') with l > l0, one chain per column at l0
    sched = level_schedule(cfg)
    n_pairs = sum(len(sched.columns(l)) for l in range(3, 5))
    assert len(a.chains) == len(sched.columns(2)) + 2 * n_pairs


def _grid_problem():
    rng = np.random.default_rng(0)
    truth = BinaryField([Disk((0.5, 0.5), 0.25, 1.5)])
    obs = generate_observations(truth, boundary_points(UNIT, 1 / 4), five_sources(UNIT), 1e-4, 6, UNIT, rng)
    tpl = SlownessField(SineBasis(kappa=20, max_terms=64), np.zeros(64))
    return Problem(tpl, obs, UNIT, j_fixed(4), QoI.slowness_grid(UNIT, 8))


def test_grid_qoi_estimate():
    prob = _grid_problem()
    res = mlmcmc_estimate(MLConfig(l0=2, L=3, a=2, j_schedule="fixed:4"), prob)
    assert res.estimate.shape == (64,)
    assert np.all(np.isfinite(res.estimate))
    assert prob.qoi.reshape(res.estimate).shape == (8, 8)


def test_chain_failure_names_pair(small_setup):
    prob = small_setup.problem()

    orig = prob.potential

    def potential(u, level):
        if level == 4:
            raise FloatingPointError("boom")
        return orig(u, level)

    prob.potential = potential
    with pytest.raises(RuntimeError, match=r"l=4, l'=2"):
        mlmcmc_estimate(MLConfig(l0=2, L=4), prob)


def test_config_validation():
    with pytest.raises(ValueError):
        MLConfig(l0=3, L=2)
    with pytest.raises(ValueError):
        MLConfig(l0=0, L=2)
    with pytest.raises(ValueError):
        MLConfig(l0=1, L=2, j_schedule="weird")
    with pytest.raises(ValueError):
        MLConfig(l0=1, L=2, lprime="dense")
