"""Metropolis-Hastings chains with prior-reversible proposals."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Independence:
    """Proposal is a fresh draw from the prior."""


@dataclass(frozen=True)
class PCN:
    """Preconditioned Crank-Nicolson proposal ``sqrt(1 - beta^2) u + beta xi``."""

    beta: float

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"pCN beta must lie in (0, 1], got {self.beta}")


SamplerKind = Union[Independence, PCN]


def make_rng(seed) -> np.random.Generator:
    """Generator from an int or a ``SeedSequence``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.default_rng(seed)


def stream_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Independent child stream of ``master`` labelled by ``key``."""
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))


def propose(kind: SamplerKind, u, rng: np.random.Generator) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    xi = rng.standard_normal(u.shape)
    if isinstance(kind, Independence):
        return xi
    if isinstance(kind, PCN):
        return math.sqrt(1.0 - kind.beta**2) * u + kind.beta * xi
    raise TypeError(f"unknown sampler {kind!r}")


def accept(phi_current: float, phi_proposal: float, rng: np.random.Generator) -> bool:
    """Metropolis test with probability ``min(1, exp(phi_current - phi_proposal))``.

    One uniform is drawn per call whatever the outcome, which keeps the
    stream position independent of the potentials.
    """
    if math.isnan(phi_current) or math.isnan(phi_proposal):
        raise ValueError("potential is NaN")
    v = rng.random()
    d = phi_current - phi_proposal
    if d >= 0:
        return True
    return math.log1p(-v) < d


@dataclass(frozen=True)
class ChainConfig:
    sampler: SamplerKind
    length: int
    burn_in: int = 0
    seed: int | np.random.SeedSequence = 0
    init: str | np.ndarray = "prior"

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("chain length must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn-in must be non-negative")
        if isinstance(self.init, str) and self.init != "prior":
            raise ValueError(f"unknown init {self.init!r}; use 'prior' or a parameter vector")


@dataclass
class ChainResult:
    means: list[np.ndarray]
    acceptance_rate: float
    final_state: np.ndarray
    mean_state: np.ndarray
    n_samples: int
    samples: list[np.ndarray] | None = None
    trace: list[tuple] | None = None

    def std_errors(self, n_batches: int | None = None) -> list[np.ndarray]:
        """Batch-means standard errors of the integrand means."""
        if self.samples is None:
            raise ValueError("run the chain with keep_samples=True")
        return [batch_means_se(s, n_batches) for s in self.samples]


def batch_means_se(samples, n_batches: int | None = None) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    b = n_batches or max(2, int(math.isqrt(n)))
    size = n // b
    if size < 1:
        raise ValueError("too few samples for batch means")
    means = x[: b * size].reshape((b, size) + x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(b)


def run_chain(
    config: ChainConfig,
    potential: Callable[[np.ndarray], float],
    integrands: Sequence[Callable[[np.ndarray], np.ndarray]],
    dim: int,
    keep_samples: bool = False,
    record_trace: bool = False,
) -> ChainResult:
    """Run one chain and average ``integrands`` over the post-burn-in states.

    The states averaged are those after each of the ``length`` transitions
    following burn-in.  Integrands are evaluated once per distinct state.
    """
    if not integrands:
        raise ValueError("need at least one integrand")
    rng = make_rng(config.seed)
    if isinstance(config.init, str):
        u = rng.standard_normal(dim)
    else:
        u = np.array(config.init, dtype=float)
        if u.shape != (dim,):
            raise ValueError(f"initial state has shape {u.shape}, expected ({dim},)")
    phi = potential(u)
    vals = None
    sums = None
    kept: list[list] | None = [[] for _ in integrands] if keep_samples else None
    trace = [] if record_trace else None
    state_sum = np.zeros(dim)
    n_acc = 0
    total = config.burn_in + config.length
    for it in range(total):
        v = propose(config.sampler, u, rng)
        phi_v = potential(v)
        ok = accept(phi, phi_v, rng)
        if ok:
            u, phi = v, phi_v
            vals = None
            n_acc += 1
        if it < config.burn_in:
            continue
        if vals is None:
            vals = [np.atleast_1d(np.asarray(f(u), dtype=float)) for f in integrands]
        if sums is None:
            sums = [np.zeros_like(x) for x in vals]
        for s, x in zip(sums, vals):
            s += x
        state_sum += u
        if kept is not None:
            for bucket, x in zip(kept, vals):
                bucket.append(x)
        if trace is not None:
            trace.append((it, ok, phi, np.concatenate([x.ravel() for x in vals])))
    n = config.length
    return ChainResult(
        means=[s / n for s in sums],
        acceptance_rate=n_acc / total,
        final_state=u.copy(),
        mean_state=state_sum / n,
        n_samples=n,
        samples=[np.array(b) for b in kept] if kept is not None else None,
        trace=trace,
    )


def write_trace(path, result: ChainResult) -> Path:
    """Dump ``iteration, accepted, potential, f0, f1, ...`` rows."""
    if result.trace is None:
        raise ValueError("chain was run without record_trace=True")
    path = Path(path)
    width = result.trace[0][3].size if result.trace else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "accepted", "potential"] + [f"f{i}" for i in range(width)])
        for it, ok, phi, vals in result.trace:
            w.writerow([it, int(ok), repr(float(phi))] + [repr(float(v)) for v in vals])
    return path
