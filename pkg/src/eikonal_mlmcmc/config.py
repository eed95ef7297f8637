"""Experiment configuration: a sectioned ``key = value`` file.

Every key has a type and a default; unknown sections or keys are rejected.
Lists are comma separated, point lists are ``x y`` pairs separated by
semicolons.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from io import StringIO
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .bayes import (
    Observation,
    Problem,
    QoI,
    boundary_points,
    eight_points,
    five_sources,
    generate_observations,
    load_observation,
)
from .field import BinaryField, Disk, SineBasis, SlownessField
from .grid import Domain, MemoryBudgetError, estimate_memory
from .mcmc import PCN, Independence
from .mlmcmc import SUPPORTED_A, MLConfig, sample_count


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"[{key}] {msg}")
        self.key = key


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _point(s: str) -> tuple[float, float]:
    v = _floats(s)
    if len(v) != 2:
        raise ValueError("expected two comma-separated numbers")
    return v


def _points(s: str) -> tuple[tuple[float, ...], ...]:
    out = []
    for item in s.split(";"):
        if item.strip():
            out.append(tuple(float(v) for v in item.replace(",", " ").split()))
    return tuple(out)


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _opt(conv: Callable) -> Callable:
    return lambda s: None if s.strip().lower() in ("", "none") else conv(s)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(" ".join(repr(float(c)) for c in p) for p in v)
        return ", ".join(repr(x) for x in v)
    return str(v)


# (section, key) -> (parser, default)
SCHEMA: dict[tuple[str, str], tuple[Callable, Any]] = {
    ("domain", "lower"): (_point, (-1.0, -1.0)),
    ("domain", "upper"): (_point, (1.0, 1.0)),
    ("basis", "kappa"): (float, 20.0),
    ("basis", "p"): (float, 2.0),
    ("basis", "max_terms"): (int, 64),
    ("basis", "origin"): (_point, (0.0, 0.0)),
    ("basis", "scale"): (_point, (1.0, 1.0)),
    ("basis", "s_star"): (float, 0.0),
    ("basis", "s_bar"): (float, 0.0),
    ("reference", "kind"): (str, "kl"),
    ("reference", "coefficients"): (_opt(_floats), None),
    ("reference", "seed"): (int, 1),
    ("reference", "value"): (float, 1.0),
    ("reference", "background"): (float, 1.0),
    ("reference", "inclusions"): (_points, ()),
    ("observations", "points"): (str, "eight"),
    ("observations", "spacing"): (float, 0.125),
    ("observations", "sources"): (str, "center"),
    ("observations", "noise_std"): (float, 0.1),
    ("observations", "likelihood_std"): (_opt(float), None),
    ("observations", "ref_level"): (int, 12),
    ("observations", "seed"): (_opt(int), None),
    ("observations", "file"): (_opt(str), None),
    ("forward", "level"): (int, 8),
    ("forward", "source"): (_point, (0.0, 0.0)),
    ("inversion", "sampler"): (str, "independence"),
    ("inversion", "beta"): (float, 0.5),
    ("inversion", "l0"): (int, 2),
    ("inversion", "L"): (_ints, (6,)),
    ("inversion", "a"): (float, 3.0),
    ("inversion", "replicates"): (int, 1),
    ("inversion", "burn_in"): (int, 0),
    ("inversion", "coarsest_burn_in"): (_opt(int), None),
    ("inversion", "coarsest_samples"): (_opt(int), None),
    ("inversion", "j_schedule"): (str, "default"),
    ("inversion", "lprime"): (str, "sparse"),
    ("inversion", "qoi"): (str, "solution_at"),
    ("inversion", "qoi_point"): (_point, (0.5, 0.5)),
    ("inversion", "qoi_source"): (_point, (0.0, 0.0)),
    ("inversion", "qoi_m"): (int, 8),
    ("inversion", "chain_level"): (int, 6),
    ("inversion", "chain_length"): (int, 1000),
    ("inversion", "quadrature_order"): (int, 40),
    ("inversion", "reference_level"): (int, 12),
    ("inversion", "reference"): (str, "none"),
    ("run", "seed"): (int, 0),
    ("run", "threads"): (int, 0),
    ("run", "memory_mb"): (int, 2048),
    ("output", "dir"): (str, "out"),
    ("output", "trace"): (_bool, False),
}

_CHOICES = {
    ("reference", "kind"): ("kl", "binary", "constant"),
    ("inversion", "sampler"): ("independence", "pcn"),
    ("inversion", "lprime"): ("sparse", "full"),
    ("inversion", "qoi"): ("solution_at", "slowness_at", "solution_grid", "slowness_grid"),
}


@dataclass
class ExperimentConfig:
    values: dict[tuple[str, str], Any]

    def __getitem__(self, key: str):
        sec, k = key.split(".")
        return self.values[(sec, k)]

    def replace(self, **updates) -> "ExperimentConfig":
        vals = dict(self.values)
        for key, v in updates.items():
            sec, k = key.split("__")
            vals[(sec, k)] = v
        return validate(ExperimentConfig(vals))

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for (sec, k), v in self.values.items():
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, k, _fmt(v))
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_ini())
        return path

    @property
    def memory_budget(self) -> int:
        return self["run.memory_mb"] * 1024**2


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from exc
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for sec in cp.sections():
        for k, raw in cp.items(sec):
            key = (sec, k)
            if key not in SCHEMA:
                raise ConfigError(f"{sec}.{k}", "unknown key")
            try:
                values[key] = SCHEMA[key][0](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{sec}.{k}", f"cannot parse {raw!r}: {exc}") from exc
    return validate(ExperimentConfig(values))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("file", f"config file {path} not found")
    return parse_config(path.read_text())


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    for key, allowed in _CHOICES.items():
        if cfg.values[key] not in allowed:
            raise ConfigError(".".join(key), f"must be one of {allowed}")
    try:
        Domain(cfg["domain.lower"], cfg["domain.upper"])
    except ValueError as exc:
        raise ConfigError("domain.lower", str(exc)) from exc
    for key in ("basis.kappa", "observations.spacing", "reference.background", "reference.value"):
        if not cfg[key] > 0:
            raise ConfigError(key, "must be positive")
    if cfg["basis.p"] <= 1:
        raise ConfigError("basis.p", "decay exponent must exceed 1")
    if cfg["basis.max_terms"] < 1:
        raise ConfigError("basis.max_terms", "must be >= 1")
    if cfg["basis.s_star"] < 0:
        raise ConfigError("basis.s_star", "must be non-negative")
    if cfg["observations.noise_std"] < 0:
        raise ConfigError("observations.noise_std", "must be non-negative")
    for p in cfg["reference.inclusions"]:
        if len(p) != 4 or p[2] <= 0 or p[3] <= 0:
            raise ConfigError("reference.inclusions", "each inclusion is 'cx cy radius value' with radius, value > 0")
    if not 0 < cfg["inversion.beta"] <= 1:
        raise ConfigError("inversion.beta", "must lie in (0, 1]")
    if cfg["inversion.a"] not in SUPPORTED_A:
        raise ConfigError("inversion.a", f"supported values are {SUPPORTED_A}")
    l0 = cfg["inversion.l0"]
    Ls = cfg["inversion.L"]
    if l0 < 1:
        raise ConfigError("inversion.l0", "must be >= 1")
    if not Ls or any(L < l0 for L in Ls):
        raise ConfigError("inversion.L", "every finest level must be >= l0")
    for key in ("inversion.replicates", "inversion.chain_length", "inversion.qoi_m", "run.memory_mb"):
        if cfg[key] < 1:
            raise ConfigError(key, "must be >= 1")
    ref = cfg["inversion.reference"]
    if ref not in ("none", "quadrature"):
        try:
            float(ref)
        except ValueError:
            raise ConfigError("inversion.reference", "use 'none', 'quadrature' or a number") from None
    if cfg["inversion.quadrature_order"] < 2:
        raise ConfigError("inversion.quadrature_order", "must be >= 2")
    if cfg["inversion.burn_in"] < 0:
        raise ConfigError("inversion.burn_in", "must be non-negative")
    js = cfg["inversion.j_schedule"]
    if js not in ("default", "binary") and not (js.startswith("fixed:") and js[6:].isdigit() and int(js[6:]) >= 1):
        raise ConfigError("inversion.j_schedule", "use 'default', 'binary' or 'fixed:N'")
    if cfg["run.threads"] < 0:
        raise ConfigError("run.threads", "must be >= 0 (0 means all cores)")
    dom = Domain(cfg["domain.lower"], cfg["domain.upper"])
    budget = cfg.memory_budget
    for key, levels in (
        ("forward.level", [cfg["forward.level"]]),
        ("observations.ref_level", [cfg["observations.ref_level"]]),
        ("inversion.L", list(Ls)),
        ("inversion.chain_level", [cfg["inversion.chain_level"]]),
        ("inversion.reference_level", [cfg["inversion.reference_level"]]),
    ):
        for lvl in levels:
            if lvl < 1:
                raise ConfigError(key, "levels must be >= 1")
            if estimate_memory(dom, lvl) > budget:
                raise ConfigError(
                    key, f"level {lvl} exceeds the memory budget of {cfg['run.memory_mb']} MiB"
                )
    return cfg


# builders


def build_domain(cfg: ExperimentConfig) -> Domain:
    return Domain(cfg["domain.lower"], cfg["domain.upper"])


def build_basis(cfg: ExperimentConfig) -> SineBasis:
    return SineBasis(
        kappa=cfg["basis.kappa"],
        max_terms=cfg["basis.max_terms"],
        origin=cfg["basis.origin"],
        scale=cfg["basis.scale"],
        p=cfg["basis.p"],
    )


def build_template(cfg: ExperimentConfig) -> SlownessField:
    return SlownessField(
        build_basis(cfg), np.zeros(cfg["basis.max_terms"]), cfg["basis.s_star"], cfg["basis.s_bar"]
    )


def build_reference(cfg: ExperimentConfig):
    kind = cfg["reference.kind"]
    if kind == "binary":
        disks = [Disk((p[0], p[1]), p[2], p[3]) for p in cfg["reference.inclusions"]]
        return BinaryField(disks, cfg["reference.background"])
    if kind == "constant":
        return BinaryField([], cfg["reference.value"])
    coeffs = cfg["reference.coefficients"]
    if coeffs is None:
        rng = np.random.default_rng(cfg["reference.seed"])
        coeffs = rng.standard_normal(cfg["basis.max_terms"])
    return build_template(cfg).with_coeffs(np.asarray(coeffs, dtype=float))


def _geometry(cfg: ExperimentConfig, key: str, domain: Domain) -> np.ndarray:
    spec = cfg[key].strip()
    if spec == "eight":
        return eight_points(domain)
    if spec == "five":
        return five_sources(domain)
    if spec == "center":
        return np.array([[(domain.lower[0] + domain.upper[0]) / 2, (domain.lower[1] + domain.upper[1]) / 2]])
    if spec == "boundary":
        try:
            return boundary_points(domain, cfg["observations.spacing"])
        except ValueError as exc:
            raise ConfigError("observations.spacing", str(exc)) from exc
    try:
        pts = np.array(_points(spec), dtype=float)
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse point list: {exc}") from exc
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ConfigError(key, "expected 'x y; x y; ...' or a named geometry")
    return pts


def build_observation(cfg: ExperimentConfig) -> Observation:
    if cfg["observations.file"]:
        return load_observation(cfg["observations.file"])
    domain = build_domain(cfg)
    points = _geometry(cfg, "observations.points", domain)
    sources = _geometry(cfg, "observations.sources", domain)
    seed = cfg["observations.seed"]
    rng = np.random.default_rng(cfg["run.seed"] if seed is None else seed)
    noise = cfg["observations.noise_std"] ** 2
    lik = cfg["observations.likelihood_std"]
    if lik is None and noise == 0:
        raise ConfigError("observations.likelihood_std", "required when noise_std is zero")
    n = points.shape[0] * sources.shape[0]
    sigma = None if lik is None else lik**2 * np.eye(n)
    return generate_observations(
        build_reference(cfg), points, sources, noise, cfg["observations.ref_level"], domain, rng,
        sigma=sigma, memory_budget=cfg.memory_budget,
    )


def build_qoi(cfg: ExperimentConfig) -> QoI:
    kind = cfg["inversion.qoi"]
    domain = build_domain(cfg)
    if kind == "solution_at":
        return QoI.solution_at(cfg["inversion.qoi_point"], cfg["inversion.qoi_source"])
    if kind == "slowness_at":
        return QoI.slowness_at(cfg["inversion.qoi_point"])
    if kind == "solution_grid":
        return QoI.solution_grid(domain, cfg["inversion.qoi_m"], cfg["inversion.qoi_source"])
    return QoI.slowness_grid(domain, cfg["inversion.qoi_m"])


def build_sampler(cfg: ExperimentConfig):
    return PCN(cfg["inversion.beta"]) if cfg["inversion.sampler"] == "pcn" else Independence()


def build_mlconfig(cfg: ExperimentConfig, L: int, seed: int | None = None) -> MLConfig:
    over = None
    if cfg["inversion.coarsest_burn_in"] is not None or cfg["inversion.coarsest_samples"] is not None:
        l0 = cfg["inversion.l0"]
        burn = cfg["inversion.coarsest_burn_in"]
        m = cfg["inversion.coarsest_samples"]
        over = (
            cfg["inversion.burn_in"] if burn is None else burn,
            sample_count(cfg["inversion.a"], L, l0, l0, l0) if m is None else m,
        )
    return MLConfig(
        l0=cfg["inversion.l0"],
        L=L,
        a=cfg["inversion.a"],
        q=cfg["basis.p"] - 1,
        base_seed=cfg["run.seed"] if seed is None else seed,
        replicates=cfg["inversion.replicates"],
        sampler=build_sampler(cfg),
        burn_in=cfg["inversion.burn_in"],
        coarsest_overrides=over,
        j_schedule=cfg["inversion.j_schedule"],
        lprime=cfg["inversion.lprime"],
    )


def build_problem(cfg: ExperimentConfig, obs: Observation) -> Problem:
    domain = build_domain(cfg)
    ml = build_mlconfig(cfg, max(cfg["inversion.L"]))
    problem = Problem(
        build_template(cfg), obs, domain, ml.j_of_level(), build_qoi(cfg), memory_budget=cfg.memory_budget
    )
    try:
        problem.validate_level(cfg["inversion.l0"])
    except ValueError as exc:
        raise ConfigError("observations.points", f"not resolvable on the coarsest grid: {exc}") from exc
    return problem


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "MemoryBudgetError",
    "build_domain",
    "build_mlconfig",
    "build_observation",
    "build_problem",
    "build_qoi",
    "build_reference",
    "build_template",
    "load_config",
    "parse_config",
]
