"""Ready-made problem set-ups used by the experiments and the test-suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes import Observation, Problem, QoI, boundary_points, eight_points, five_sources, generate_observations, j_fixed
from .field import BinaryField, Disk, SineBasis, SlownessField
from .grid import Domain

SYMMETRIC = Domain((-1.0, -1.0), (1.0, 1.0))
UNIT = Domain((0.0, 0.0), (1.0, 1.0))


def one_parameter_template() -> SlownessField:
    """``exp(u sin(pi x / 2) sin(pi y / 2))`` on the symmetric square."""
    basis = SineBasis(kappa=4.0, max_terms=1, origin=(0.0, 0.0), scale=(2.0, 2.0))
    return SlownessField(basis, np.zeros(1))


@dataclass
class Setup:
    domain: Domain
    template: SlownessField
    obs: Observation
    truth: object
    qoi: QoI

    def problem(self, j_of_level=None, **kwargs) -> Problem:
        return Problem(self.template, self.obs, self.domain, j_of_level or j_fixed(1), self.qoi, **kwargs)


def one_parameter_setup(
    seed: int = 1, noise_std: float = 0.1, ref_level: int = 12, qoi_point=(0.5, 0.5)
) -> Setup:
    """Eight boundary observations of the centred-source travel time."""
    rng = np.random.default_rng(seed)
    u_true = rng.standard_normal(1)
    template = one_parameter_template()
    truth = template.with_coeffs(u_true)
    source = np.array([[0.0, 0.0]])
    obs = generate_observations(
        truth, eight_points(SYMMETRIC), source, noise_std**2, ref_level, SYMMETRIC, rng
    )
    return Setup(SYMMETRIC, template, obs, truth, QoI.solution_at(qoi_point, (0.0, 0.0)))


def binary_setup(
    seed: int = 7,
    kappa: float = 20.0,
    inclusions=(Disk((0.5, 0.5), 0.2, 1.5),),
    background: float = 1.0,
    spacing: float = 1 / 8,
    noise_std: float = 1e-2,
    ref_level: int = 12,
    m: int = 8,
) -> Setup:
    """Binary inclusions on the unit square, five sources, slowness-grid QoI."""
    rng = np.random.default_rng(seed)
    truth = BinaryField(list(inclusions), background)
    template = SlownessField(SineBasis(kappa=kappa, max_terms=64), np.zeros(64))
    obs = generate_observations(
        truth, boundary_points(UNIT, spacing), five_sources(UNIT), noise_std**2, ref_level, UNIT, rng
    )
    return Setup(UNIT, template, obs, truth, QoI.slowness_grid(UNIT, m))
