"""Quadrature references for one-parameter posteriors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import minimize_scalar

from .bayes import Problem
from .mlmcmc import ChainSummary, MLConfig, assemble_estimate, level_schedule


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights integrating against the standard Gaussian."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return self.nodes.size

    def integrate(self, f: Callable[[float], float]) -> float:
        return float(sum(w * f(x) for x, w in zip(self.nodes, self.weights)))


def gauss_hermite(n: int = 40) -> QuadratureRule:
    """Gauss-Hermite rule for ``N(0, 1)`` from the Jacobi matrix eigenproblem."""
    if n < 2:
        raise ValueError("quadrature order must be >= 2")
    off = np.sqrt(np.arange(1, n, dtype=float))
    nodes = eigh_tridiagonal(np.zeros(n), off, eigvals_only=True)
    # Christoffel numbers 1 / sum_k p_k(x)^2 with orthonormal p_k; unlike the
    # squared eigenvector entries these keep full relative accuracy in the tails
    p_prev = np.zeros(n)
    p = np.ones(n)
    acc = np.ones(n)
    for k in range(1, n):
        p_prev, p = p, (nodes * p - math.sqrt(k - 1) * p_prev) / math.sqrt(k)
        acc += p * p
    weights = 1.0 / acc
    weights /= weights.sum()
    return QuadratureRule(nodes, weights)


def shifted_rule(base: QuadratureRule, center: float, scale: float) -> QuadratureRule:
    """Rule for ``N(0, 1)`` with nodes placed at ``center + scale * z``.

    Weights pick up the density ratio of the standard Gaussian against the
    shifted one, so the rule still integrates against the prior.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    u = center + scale * base.nodes
    return QuadratureRule(u, base.weights * scale * np.exp(0.5 * (base.nodes**2 - u**2)))


def laplace_rule(potential: Callable[[float], float], n: int = 40, bracket=(-5.0, 5.0)) -> QuadratureRule:
    """Gauss-Hermite rule centred and scaled on the Laplace fit of ``exp(-phi) N(0,1)``."""
    f = lambda u: potential(u) + 0.5 * u * u
    res = minimize_scalar(f, bounds=bracket, method="bounded", options={"xatol": 1e-6})
    m = float(res.x)
    d = 1e-3
    curv = (f(m + d) - 2 * f(m) + f(m - d)) / d**2
    scale = 1.0 / math.sqrt(curv) if curv > 1e-8 else 1.0
    return shifted_rule(gauss_hermite(n), m, scale)


def _likelihood(phi: np.ndarray, rule: QuadratureRule) -> tuple[np.ndarray, float]:
    """Shifted likelihood ``exp(-(phi - min phi))`` and its quadrature sum."""
    phi = np.asarray(phi, dtype=float)
    if np.any(np.isnan(phi)):
        raise ValueError("potential is NaN at a quadrature node")
    if not np.isfinite(phi.min()):
        raise ValueError("potential is infinite at every quadrature node")
    e = np.exp(-(phi - phi.min()))
    z = float(rule.weights @ e)
    if not z > 0:
        raise ValueError("all quadrature weights underflow; the data are degenerate")
    return e, z


def gh_posterior_expectation(integrand, potential, rule: QuadratureRule):
    """``sum w e^{-phi} f / sum w e^{-phi}`` over the rule nodes.

    Works for scalar or vector-valued integrands.
    """
    phi = np.array([potential(x) for x in rule.nodes])
    e, z = _likelihood(phi, rule)
    vals = np.array([np.asarray(integrand(x), dtype=float) for x in rule.nodes])
    out = np.tensordot(rule.weights * e, vals, axes=1) / z
    return float(out) if out.ndim == 0 else out


def hellinger_distance_1d(phi_a, phi_b, rule: QuadratureRule) -> float:
    pa = np.array([phi_a(x) for x in rule.nodes], dtype=float)
    pb = np.array([phi_b(x) for x in rule.nodes], dtype=float)
    ea, za = _likelihood(pa, rule)
    eb, zb = _likelihood(pb, rule)
    # square roots of the two normalised densities at the nodes
    ra = np.sqrt(ea / za)
    rb = np.sqrt(eb / zb)
    d2 = 0.5 * float(np.sum(rule.weights * (ra - rb) ** 2))
    return min(1.0, math.sqrt(max(d2, 0.0)))


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def quadrature_ml_estimate(config: MLConfig, problem: Problem, rule: QuadratureRule) -> np.ndarray:
    """The multilevel combination with every chain average replaced by quadrature.

    One-parameter problems only.
    """
    if any(problem.J(l) != 1 for l in range(config.l0, config.L + 1)):
        raise ValueError("quadrature estimate needs a one-parameter problem")
    schedule = level_schedule(config)

    def average(l, lp, role, level, integrand, M, init, burn_in):
        mean = gh_posterior_expectation(
            lambda x: integrand(_vec(x)), lambda x: problem.potential(_vec(x), level), rule
        )
        return ChainSummary(l, lp, role, level, M, np.asarray(mean))

    est, _ = assemble_estimate(config, schedule, problem, average)
    return est
