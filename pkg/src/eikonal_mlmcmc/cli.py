"""Command-line driver for forward solves, data generation and MLMCMC studies."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from .bayes import Observation, load_observation, save_observation
from .fmm import discrete_residual, fmm_solve, solve_at
from .grid import MemoryBudgetError, build_grid
from .mcmc import ChainConfig, run_chain, stream_seed, write_trace
from .mlmcmc import mlmcmc_estimate
from .oracle import gh_posterior_expectation, laplace_rule

log = logging.getLogger("eikonal_mlmcmc")

OUT_ENV = "EIKONAL_MLMCMC_OUT"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _out_dir(cfg: C.ExperimentConfig, override: str | None) -> Path:
    path = Path(override or os.environ.get(OUT_ENV) or cfg["output.dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return path


def _write_matrix(path: Path, m) -> Path:
    np.savetxt(path, np.atleast_2d(m), fmt="%.17g")
    return path


def _observation(cfg: C.ExperimentConfig, out: Path) -> Observation:
    """Load the configured observation file, or generate the data and save a copy in ``out``."""
    if cfg["observations.file"]:
        return load_observation(cfg["observations.file"])
    obs = C.build_observation(cfg)
    save_observation(obs, out / "observations.csv")
    return obs


def _workers(cfg: C.ExperimentConfig, threads: int | None) -> int:
    n = threads if threads is not None else cfg["run.threads"]
    return n if n > 0 else (os.cpu_count() or 1)


# replicate fan-out


def _replicate(args):
    cfg_text, obs, L, seed, rep = args
    t0 = time.process_time()
    cfg = C.parse_config(cfg_text)
    problem = C.build_problem(cfg, obs)
    res = mlmcmc_estimate(C.build_mlconfig(cfg, L, seed), problem, replicate=rep)
    return L, rep, res.estimate, res.wall_time, res.node_updates, time.process_time() - t0


def _run_replicates(cfg, obs, Ls, seed, workers):
    jobs = [(cfg.to_ini(), obs, L, seed, r) for L in Ls for r in range(cfg["inversion.replicates"])]
    if workers <= 1 or len(jobs) == 1:
        out = []
        for j in jobs:
            out.append(_replicate(j))
            log.info("L=%d replicate %d done in %.2fs", out[-1][0], out[-1][1], out[-1][3])
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replicate, jobs))


# commands


def cmd_forward(cfg, out: Path, seed: int, workers: int) -> int:
    level = cfg["forward.level"]
    grid = build_grid(C.build_domain(cfg), level, cfg.memory_budget)
    ref = C.build_reference(cfg)
    s = ref.on_grid(grid)
    src = grid.node_at(cfg["forward.source"])
    t0 = time.perf_counter()
    tt = fmm_solve(grid, s, src)
    dt = time.perf_counter() - t0
    tt.save_matrix(out / "travel_time.txt")
    res = discrete_residual(grid, tt.values, s)
    _write_csv(
        out / "forward_summary.csv",
        ["level", "nodes", "accepted", "updates", "seconds", "max_interior_residual"],
        [(level, grid.n_nodes, tt.n_accepted, tt.n_updates, dt, float(_residual_off_source(grid, res, src)))],
    )
    return EXIT_OK


def _residual_off_source(grid, res, src) -> float:
    ix, iy = grid.unravel(src)
    mask = np.ones_like(res, dtype=bool)
    if 0 < ix < grid.nx and 0 < iy < grid.ny:
        mask[iy - 1, ix - 1] = False
    return res[mask].max() if mask.any() else 0.0


def cmd_generate_data(cfg, out: Path, seed: int, workers: int) -> int:
    obs = C.build_observation(cfg)
    save_observation(obs, out / "observations.csv")
    save_observation(obs, out / "observations_noiseless.csv", noiseless=True)
    return EXIT_OK


def cmd_mcmc(cfg, out: Path, seed: int, workers: int) -> int:
    obs = _observation(cfg, out)
    problem = C.build_problem(cfg, obs)
    level = cfg["inversion.chain_level"]
    problem.validate_level(level)
    dim = problem.J(level)
    chain = ChainConfig(
        sampler=C.build_sampler(cfg),
        length=cfg["inversion.chain_length"],
        burn_in=cfg["inversion.burn_in"],
        seed=stream_seed(seed, 0, level),
    )
    res = run_chain(
        chain,
        lambda u: problem.potential(u, level),
        [lambda u: problem.qoi_value(u, level)],
        dim,
        keep_samples=True,
        record_trace=cfg["output.trace"],
    )
    se = res.std_errors()[0]
    rows = [(i, float(m), float(e)) for i, (m, e) in enumerate(zip(res.means[0], se))]
    _write_csv(out / "mcmc_summary.csv", ["qoi_index", "mean", "std_error"], rows)
    _write_csv(
        out / "mcmc_diagnostics.csv",
        ["level", "length", "burn_in", "acceptance_rate", "solves"],
        [(level, chain.length, chain.burn_in, res.acceptance_rate, problem.work.solves)],
    )
    if cfg["output.trace"]:
        write_trace(out / "mcmc_trace.csv", res)
    return EXIT_OK


def _reference_value(cfg, problem) -> np.ndarray:
    """Quadrature posterior mean of the QoI at the reference level (one parameter)."""
    lvl = cfg["inversion.reference_level"]
    if problem.J(lvl) != 1:
        raise C.ConfigError("basis.max_terms", "the quadrature reference needs a one-parameter problem")
    fit_level = min(lvl, max(cfg["inversion.L"]) + 1)
    rule = laplace_rule(lambda x: problem.potential(np.atleast_1d(x), fit_level), cfg["inversion.quadrature_order"])
    return np.atleast_1d(
        gh_posterior_expectation(
            lambda x: problem.qoi_value(np.atleast_1d(x), lvl),
            lambda x: problem.potential(np.atleast_1d(x), lvl),
            rule,
        )
    )


def _estimate_rows(results, reference):
    rows = []
    for L, rep, est, wall, upd, cpu in results:
        err = float(np.max(np.abs(est - reference))) if reference is not None else float("nan")
        value = float(est[0]) if est.size == 1 else float(np.mean(est))
        rows.append((rep, L, value, err, wall, cpu, upd))
    return rows


def cmd_mlmcmc(cfg, out: Path, seed: int, workers: int) -> int:
    obs = _observation(cfg, out)
    problem = C.build_problem(cfg, obs)
    ref_spec = cfg["inversion.reference"]
    if ref_spec == "none":
        reference = None
    elif ref_spec == "quadrature":
        reference = _reference_value(cfg, problem)
    else:
        reference = np.atleast_1d(float(ref_spec))
    results = _run_replicates(cfg, obs, cfg["inversion.L"], seed, workers)
    _write_csv(
        out / "mlmcmc_results.csv",
        ["replicate", "L", "estimate", "abs_error", "wall_seconds", "cpu_seconds", "node_updates"],
        _estimate_rows(results, reference),
    )
    if problem.qoi.shape:
        _write_grid_outputs(out, problem.qoi, results, "mlmcmc")
    return EXIT_OK


def _write_grid_outputs(out: Path, qoi, results, stem: str):
    by_L: dict[int, list] = {}
    for L, rep, est, *_ in results:
        _write_matrix(out / f"{stem}_L{L}_rep{rep}.txt", qoi.reshape(est))
        by_L.setdefault(L, []).append(est)
    means = {}
    for L, ests in by_L.items():
        means[L] = np.mean(ests, axis=0)
        _write_matrix(out / f"{stem}_L{L}_mean.txt", qoi.reshape(means[L]))
    return means


def best_fit_slope(Ls, errors) -> float | None:
    """Rate ``-d log2(err) / dL`` of a least-squares line; ``None`` with fewer than two points."""
    if len(Ls) < 2:
        return None
    return float(-np.polyfit(np.asarray(Ls, float), np.log2(np.asarray(errors, float)), 1)[0])


def cmd_convergence_study(cfg, out: Path, seed: int, workers: int) -> int:
    obs = _observation(cfg, out)
    problem = C.build_problem(cfg, obs)
    if problem.qoi.size != 1:
        raise C.ConfigError("inversion.qoi", "the convergence study needs a scalar QoI")
    ref_spec = cfg["inversion.reference"]
    if ref_spec in ("none", "quadrature"):
        reference = _reference_value(cfg, problem)
    else:
        reference = np.atleast_1d(float(ref_spec))
    Ls = sorted(cfg["inversion.L"])
    results = _run_replicates(cfg, obs, Ls, seed, workers)
    rows, errs = [], []
    for L in Ls:
        e = [abs(float(est[0]) - float(reference[0])) for LL, _, est, *_ in results if LL == L]
        cpu = sum(r[5] for r in results if r[0] == L)
        upd = sum(r[4] for r in results if r[0] == L)
        errs.append(float(np.mean(e)))
        rows.append((L, len(e), errs[-1], float(np.std(e)), cpu, upd))
    _write_csv(
        out / "convergence.csv",
        ["L", "replicates", "mean_abs_error", "std_abs_error", "cpu_seconds", "node_updates"],
        rows,
    )
    slope = best_fit_slope(Ls, errs)
    (out / "slope.txt").write_text(
        f"reference {float(reference[0])!r}\nslope {'not-available' if slope is None else repr(slope)}\n"
    )
    print(f"slope: {'not-available' if slope is None else f'{slope:.4f}'}")
    return EXIT_OK


def cmd_recover(cfg, out: Path, seed: int, workers: int) -> int:
    obs = _observation(cfg, out)
    problem = C.build_problem(cfg, obs)
    qoi = problem.qoi
    results = _run_replicates(cfg, obs, cfg["inversion.L"], seed, workers)
    means = _write_grid_outputs(out, qoi, results, "recovered")
    truth = _true_qoi(cfg, qoi)
    _write_matrix(out / "reference_qoi.txt", qoi.reshape(truth))
    rows = []
    for L, m in sorted(means.items()):
        rows.append((L, float(np.max(np.abs(m - truth))), float(np.mean(np.abs(m - truth)))))
    _write_csv(out / "recover_summary.csv", ["L", "max_abs_error", "mean_abs_error"], rows)
    return EXIT_OK


def _true_qoi(cfg, qoi) -> np.ndarray:
    ref = C.build_reference(cfg)
    if qoi.kind == "slowness":
        return np.asarray(ref.evaluate(qoi.points[:, 0], qoi.points[:, 1]), dtype=float)
    grid = build_grid(C.build_domain(cfg), cfg["observations.ref_level"], cfg.memory_budget)
    targets = np.array([grid.node_at(p) for p in qoi.points], dtype=np.int64)
    vals, _, _ = solve_at(grid, ref.on_grid(grid), grid.node_at(qoi.source), targets)
    return vals


def cmd_timing(cfg, out: Path, seed: int, workers: int) -> int:
    obs = _observation(cfg, out)
    Ls = sorted(cfg["inversion.L"])
    results = _run_replicates(cfg, obs, Ls, seed, 1)
    rows = []
    for L in Ls:
        sel = [r for r in results if r[0] == L]
        rows.append((L, len(sel), sum(r[5] for r in sel), sum(r[3] for r in sel), sum(r[4] for r in sel)))
    _write_csv(out / "timing.csv", ["L", "replicates", "cpu_seconds", "wall_seconds", "node_updates"], rows)
    # single forward solve per level for the m log m check
    domain = C.build_domain(cfg)
    ref = C.build_reference(cfg)
    frows = []
    for lvl in range(cfg["inversion.l0"], max(Ls) + 1):
        grid = build_grid(domain, lvl, cfg.memory_budget)
        s = ref.on_grid(grid)
        src = grid.node_at(cfg["forward.source"])
        fmm_solve(grid, s, src)
        best = math.inf
        for _ in range(3):
            t0 = time.perf_counter()
            fmm_solve(grid, s, src)
            best = min(best, time.perf_counter() - t0)
        frows.append((lvl, grid.n_nodes, best))
    _write_csv(out / "forward_timing.csv", ["level", "nodes", "seconds"], frows)
    return EXIT_OK


COMMANDS = {
    "forward": cmd_forward,
    "generate-data": cmd_generate_data,
    "mcmc": cmd_mcmc,
    "mlmcmc": cmd_mlmcmc,
    "convergence-study": cmd_convergence_study,
    "recover": cmd_recover,
    "timing": cmd_timing,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eikonal-mlmcmc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="experiment configuration file")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides [run] seed)")
        sp.add_argument("--out", default=None, help=f"output directory (overrides ${OUT_ENV} and [output] dir)")
        sp.add_argument("--threads", type=int, default=None, help="worker processes (0 = all cores)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = C.load_config(args.config)
        if args.seed is not None:
            cfg = cfg.replace(run__seed=args.seed)
        if args.threads is not None:
            cfg = cfg.replace(run__threads=args.threads)
        out = _out_dir(cfg, args.out)
        code = COMMANDS[args.command](cfg, out, cfg["run.seed"], _workers(cfg, args.threads))
        cfg.write(out / "effective.ini")
        return code
    except (C.ConfigError, MemoryBudgetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
