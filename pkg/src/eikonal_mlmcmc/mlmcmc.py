"""Multilevel MCMC estimator with indicator-truncated level corrections."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bayes import Problem, j_binary, j_default, j_fixed
from .mcmc import ChainConfig, Independence, SamplerKind, run_chain, stream_seed

SUPPORTED_A = (0, 2, 3, 4)
UPPER, LOWER = 0, 1


@dataclass(frozen=True)
class MLConfig:
    """Level range, sample-size exponent and sampling options.

    ``coarsest_overrides`` replaces ``(burn_in, M_{l0 l0})`` for the coarsest
    chain.  ``j_schedule`` is ``"default"``, ``"binary"`` or ``"fixed:N"``.
    ``lprime`` is ``"sparse"`` (``L'(l) = L - l``) or ``"full"``
    (``L'(l) = L``).
    """

    l0: int
    L: int
    a: float = 3
    q: float = 1.0
    base_seed: int = 0
    replicates: int = 1
    sampler: SamplerKind = field(default_factory=Independence)
    burn_in: int = 0
    coarsest_overrides: tuple[int, int] | None = None
    j_schedule: str = "default"
    lprime: str = "sparse"

    def __post_init__(self):
        if self.l0 < 1:
            raise ValueError("l0 must be >= 1")
        if self.L < self.l0:
            raise ValueError("L must be >= l0")
        if self.a < 0:
            raise ValueError("a must be non-negative")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.lprime not in ("sparse", "full"):
            raise ValueError("lprime must be 'sparse' or 'full'")
        self.j_of_level()

    def j_of_level(self) -> Callable[[int], int]:
        spec = self.j_schedule
        if spec == "default":
            return j_default(self.q)
        if spec == "binary":
            return j_binary
        if spec.startswith("fixed:"):
            return j_fixed(int(spec.split(":", 1)[1]))
        raise ValueError(f"unknown J schedule {spec!r}")

    def L_prime(self, l: int) -> int:
        return self.L if self.lprime == "full" else self.L - l


def indicator(phi_l: float, phi_lm1: float) -> int:
    if math.isnan(phi_l) or math.isnan(phi_lm1):
        raise ValueError("potential is NaN")
    return 1 if phi_l - phi_lm1 <= 0 else 0


def sample_count(a: float, L: int, l: int, lp: int, l0: int) -> int:
    """``M_{l l'}`` from the sample-size table, rounded up to at least one."""
    if a not in SUPPORTED_A:
        raise ValueError(f"a={a} has no sample-size row; supported values are {SUPPORTED_A}")
    if l == l0 and lp == l0:
        if a == 0:
            m = 2.0**L / L**4
        elif a == 2:
            m = 2.0**L / L**2
        elif a == 3:
            m = 2.0**L / L
        else:
            m = 2.0**L / max(math.log(L), 1.0) ** 2
    elif l == l0 or lp == l0:
        k = max(l, lp)
        base = 2.0 ** (L - k)
        m = {0: base / L**2, 2: base, 3: k * base, 4: k**2 * base}[a]
    else:
        m = (l + lp) ** a * 2.0 ** (L - (l + lp))
    return max(1, math.ceil(m - 1e-9))


@dataclass(frozen=True)
class Schedule:
    l0: int
    L: int
    L_prime: dict[int, int]
    M: dict[tuple[int, int], int]

    def columns(self, l: int) -> list[int]:
        return [self.l0] + list(range(self.l0 + 1, self.L_prime[l] + 1))

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.M)


def level_schedule(config: MLConfig) -> Schedule:
    l0, L = config.l0, config.L
    lprime = {l: config.L_prime(l) for l in range(l0, L + 1)}
    M = {}
    for l in range(l0, L + 1):
        for lp in [l0] + list(range(l0 + 1, lprime[l] + 1)):
            M[(l, lp)] = sample_count(config.a, L, l, lp, l0)
    if config.coarsest_overrides is not None:
        M[(l0, l0)] = int(config.coarsest_overrides[1])
    return Schedule(l0, L, lprime, M)


def qoi_increment(problem: Problem, u, lp: int, l0: int) -> np.ndarray:
    """``Q^{l'} - Q^{l'-1}`` for ``l' > l0``, plain ``Q^{l0}`` otherwise."""
    q = problem.qoi_value(u, lp)
    if lp > l0:
        q = q - problem.qoi_value(u, lp - 1)
    return q


def a_terms(u, l: int, lp: int, problem: Problem, l0: int) -> np.ndarray:
    """Rows ``A_1 .. A_8`` (shape ``(8, n_qoi)``) for the level pair ``(l, l')``.

    Each exponential is only formed on the branch where the indicator keeps
    it, so every factor stays bounded by one.
    """
    if l <= l0:
        raise ValueError("A-terms exist only for l > l0")
    phi_l = problem.potential(u, l)
    phi_lm1 = problem.potential(u, l - 1)
    Q = qoi_increment(problem, u, lp, l0)
    out = np.zeros((8, Q.size))
    if indicator(phi_l, phi_lm1):
        e = math.exp(phi_l - phi_lm1)
        out[0] = (1.0 - e) * Q
        out[2] = e - 1.0
        out[3] = Q
        out[5] = e * Q
    else:
        e = math.exp(phi_lm1 - phi_l)
        out[1] = (e - 1.0) * Q
        out[4] = 1.0 - e
        out[6] = Q
        out[7] = e * Q
    return out


@dataclass
class ChainSummary:
    l: int
    lp: int
    role: int
    level: int
    M: int
    mean: np.ndarray
    mean_state: np.ndarray | None = None
    final_state: np.ndarray | None = None
    acceptance_rate: float = float("nan")
    node_updates: int = 0


# average(l, l', role, level, integrand, M, init, burn_in) -> ChainSummary
Averager = Callable[..., ChainSummary]


def assemble_estimate(config: MLConfig, schedule: Schedule, problem: Problem, average: Averager):
    """Combine level averages into the multilevel estimate.

    Returns ``(estimate, summaries)``.  ``average`` supplies every
    expectation; the Markov chain version is :func:`mlmcmc_estimate`.
    """
    l0, L = config.l0, config.L
    summaries: list[ChainSummary] = []
    total = None

    def add(x):
        nonlocal total
        total = x.copy() if total is None else total + x

    if config.coarsest_overrides is not None:
        burn0 = int(config.coarsest_overrides[0])
    else:
        burn0 = config.burn_in
    ref = average(l0, l0, UPPER, l0, lambda u: qoi_increment(problem, u, l0, l0),
                  schedule.M[(l0, l0)], None, burn0)
    summaries.append(ref)
    add(ref.mean)
    for lp in schedule.columns(l0)[1:]:
        s = average(l0, lp, UPPER, l0, lambda u, lp=lp: qoi_increment(problem, u, lp, l0),
                    schedule.M[(l0, lp)], ref.mean_state, config.burn_in)
        summaries.append(s)
        add(s.mean)

    for l in range(l0 + 1, L + 1):
        next_ref = None
        for lp in schedule.columns(l):
            M = schedule.M[(l, lp)]
            f = lambda u, l=l, lp=lp: a_terms(u, l, lp, problem, l0)
            up = average(l, lp, UPPER, l, f, M, ref.mean_state, config.burn_in)
            lo = average(l, lp, LOWER, l - 1, f, M, ref.final_state, config.burn_in)
            summaries.extend([up, lo])
            A, B = up.mean, lo.mean
            add(A[0] + B[1] + A[2] * (B[3] + B[7]) + B[4] * (A[5] + A[6]))
            if lp == l0:
                next_ref = up
        ref = next_ref
    return total, summaries


@dataclass
class MLResult:
    estimate: np.ndarray
    chains: list[ChainSummary]
    node_updates: int
    nodes_accepted: int
    solves: int
    wall_time: float


def mlmcmc_estimate(config: MLConfig, problem: Problem, replicate: int = 0) -> MLResult:
    """One multilevel estimate of the problem's QoI."""
    if problem.qoi is None:
        raise ValueError("problem has no quantity of interest")
    schedule = level_schedule(config)
    for lvl in range(config.l0, config.L + 1):
        problem.validate_level(lvl)
    dim = max(problem.J(lvl) for lvl in range(config.l0, config.L + 1))
    w0 = (problem.work.updates, problem.work.nodes, problem.work.solves)
    t0 = time.perf_counter()

    def average(l, lp, role, level, integrand, M, init, burn_in):
        cfg = ChainConfig(
            sampler=config.sampler,
            length=M,
            burn_in=burn_in,
            seed=stream_seed(config.base_seed, replicate, config.L, l, lp, role),
            init="prior" if init is None else init,
        )
        u0 = problem.work.updates
        try:
            res = run_chain(cfg, lambda u: problem.potential(u, level), [integrand], dim)
        except Exception as exc:
            raise RuntimeError(f"chain (l={l}, l'={lp}, role={role}) failed: {exc}") from exc
        return ChainSummary(l, lp, role, level, M, res.means[0], res.mean_state,
                            res.final_state, res.acceptance_rate, problem.work.updates - u0)

    est, chains = assemble_estimate(config, schedule, problem, average)
    return MLResult(
        estimate=est,
        chains=chains,
        node_updates=problem.work.updates - w0[0],
        nodes_accepted=problem.work.nodes - w0[1],
        solves=problem.work.solves - w0[2],
        wall_time=time.perf_counter() - t0,
    )
