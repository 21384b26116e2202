"""Comparison designs: OMP-based hybrid factorization and the fully-digital
energy-efficiency reference."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hbf import HybridBeamformer, _ls_or_pinv
from .metrics import DigitalBeamformer, dissipated_power, sum_rate
from .model import ChannelSet, ScenarioConfig, steering_from_cos


@dataclass
class SteeringDictionary:
    """Steering atoms on a grid uniform in cos(theta)."""

    atoms: np.ndarray    # (N_t, G) unit-norm columns
    angles: np.ndarray   # (G,) physical radians

    @property
    def size(self) -> int:
        return self.atoms.shape[1]


def build_dictionary(n_tx: int, grid_factor: int = 4, spacing: float = 0.5,
                     wavelength: float = 1.0) -> SteeringDictionary:
    g = grid_factor * n_tx
    cos_grid = np.linspace(-1.0, 1.0, g, endpoint=False)
    atoms = steering_from_cos(cos_grid, n_tx, spacing, wavelength).T  # (N_t, G)
    return SteeringDictionary(atoms=atoms, angles=np.arccos(cos_grid))


def omp_hybrid(target: DigitalBeamformer, dictionary: SteeringDictionary,
               m_t: int, p_max: float = None) -> HybridBeamformer:
    """Greedy steering-dictionary factorization.

    Selects m_t distinct atoms by residual correlation, keeps their phase-only
    (unit-modulus) versions as the analog columns, computes the LS baseband,
    and rescales to the power budget when one is given.
    """
    if dictionary.size < m_t:
        raise ValueError(
            f"dictionary holds {dictionary.size} atoms; need at least {m_t}")
    t_mat = target.matrix
    n_tx = t_mat.shape[0]
    residual = t_mat.copy()
    chosen = []
    for _ in range(m_t):
        corr = np.sum(np.abs(dictionary.atoms.conj().T @ residual) ** 2, axis=1)
        corr[chosen] = -1.0
        best = int(np.argmax(corr))
        chosen.append(best)
        f_rf = np.exp(1j * np.angle(dictionary.atoms[:, chosen]))
        f_bb = _ls_or_pinv(f_rf, t_mat)
        residual = t_mat - f_rf @ f_bb
    f_rf = np.exp(1j * np.angle(dictionary.atoms[:, chosen]))
    f_bb = _ls_or_pinv(f_rf, t_mat)
    if p_max is not None:
        power = float(np.sum(np.abs(f_rf @ f_bb) ** 2))
        if power > p_max:
            f_bb = f_bb * math.sqrt(p_max / power)
    return HybridBeamformer(analog=f_rf, baseband=f_bb)


def fully_digital_ee(channels: ChannelSet, f: DigitalBeamformer,
                     cfg: ScenarioConfig) -> float:
    """Energy efficiency of a fully-digital implementation: one RF chain per
    antenna, so the static power term scales with n_tx."""
    rate = sum_rate(channels, f, cfg.noise_power)
    power = dissipated_power(f, cfg.amplifier_efficiency, cfg.n_tx,
                             cfg.rfc_static_power)
    return rate / power
