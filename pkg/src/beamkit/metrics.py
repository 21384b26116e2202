"""Performance functionals of a beamformer: SINR, rate, beampattern gain,
dissipated power, energy efficiency, and the SDR data matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ChannelSet, ScenarioConfig, steering_vector


@dataclass
class DigitalBeamformer:
    """Fully-digital beamformer F with K columns of length N_t.

    Column layout: the first M columns serve users, the last L serve targets.
    """

    matrix: np.ndarray  # (N_t, K) complex

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.ndim != 2:
            raise ValueError("beamformer matrix must be 2-D (N_t x K)")
        if not np.all(np.isfinite(self.matrix.view(float))):
            raise ValueError("beamformer entries must be finite")

    @property
    def n_tx(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_streams(self) -> int:
        return self.matrix.shape[1]

    @property
    def columns(self):
        return [self.matrix[:, n] for n in range(self.n_streams)]

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2))

    def scaled_columns(self, scales) -> "DigitalBeamformer":
        return DigitalBeamformer(self.matrix * np.asarray(scales)[None, :])


def sinr(channels: ChannelSet, f: DigitalBeamformer, m: int, noise: float) -> float:
    """SINR of user m: |h_m^H f_m|^2 / (sum_{n != m} |h_m^H f_n|^2 + sigma^2)."""
    if not 0 <= m < channels.n_users:
        raise IndexError(f"user index {m} out of range")
    g = channels.rows[m] @ f.matrix
    p = np.abs(g) ** 2
    return float(p[m] / (np.sum(p) - p[m] + noise))


def all_sinr(channels: ChannelSet, f: DigitalBeamformer, noise: float) -> np.ndarray:
    """SINR of every user at once; user m is served by column m."""
    g = channels.rows @ f.matrix  # (M, K)
    p = np.abs(g) ** 2
    m_users = channels.n_users
    own = p[np.arange(m_users), np.arange(m_users)]
    interf = p.sum(axis=1) - own
    return own / (interf + noise)


def sum_rate(channels: ChannelSet, f: DigitalBeamformer, noise: float) -> float:
    """Achievable sum rate: sum_m log2(1 + SINR_m) in bits/s/Hz."""
    return float(np.sum(np.log2(1.0 + all_sinr(channels, f, noise))))


def beampattern_gain(theta, f: DigitalBeamformer, spacing: float = 0.5,
                     wavelength: float = 1.0) -> float:
    """Transmit beampattern gain a^H(theta) F F^H a(theta) (real, >= 0)."""
    a = steering_vector(theta, f.n_tx, spacing, wavelength)
    return float(np.sum(np.abs(a.conj() @ f.matrix) ** 2))


def dissipated_power(f: DigitalBeamformer, eta: float, n_rfc: int, p_static: float) -> float:
    """Power model: eta * sum_n ||f_n||^2 + n_rfc * P_c."""
    return float(eta * f.total_power + n_rfc * p_static)


def energy_efficiency(channels: ChannelSet, f: DigitalBeamformer, cfg: ScenarioConfig) -> float:
    """Ratio of achievable sum rate to dissipated power, bits/Hz/J."""
    return sum_rate(channels, f, cfg.noise_power) / dissipated_power(
        f, cfg.amplifier_efficiency, cfg.n_rfc, cfg.rfc_static_power
    )


def build_q(channels: ChannelSet, f_prev: DigitalBeamformer, m: int, noise: float) -> np.ndarray:
    """Rank-one SDR data matrix Q_m = h_m h_m^H / Phi_m.

    Phi_m is the scalar interference-plus-noise at the previous beamformer:
    sum_{n != m} |h_m^H f_n|^2 + sigma^2.  With this construction
    f_m^H Q_m f_m equals the SINR when Q is built at f_prev = f.
    """
    if not 0 <= m < channels.n_users:
        raise IndexError(f"user index {m} out of range")
    row = channels.rows[m]
    g = row @ f_prev.matrix
    p = np.abs(g) ** 2
    phi = float(np.sum(p) - p[m] + noise)
    h = row.conj()  # column vector h_m
    return np.outer(h, h.conj()) / phi


@dataclass
class DesignReport:
    """Summary of one full design run."""

    energy_efficiency: float
    sum_rate: float
    per_user_sinr: list
    per_target_gain: list
    dissipated_power: float
    lambda_trace: list
    factorization_error: float
    iterations: dict = field(default_factory=dict)
    wall_time: float = 0.0
    feasible: bool = True
    tx_power: float = 0.0
    rank_one_defects: list = field(default_factory=list)

    def validate(self, tol: float = 1e-12):
        ee = self.sum_rate / self.dissipated_power
        if abs(ee - self.energy_efficiency) > tol * max(1.0, abs(ee)):
            raise ValueError("energy_efficiency must equal sum_rate / dissipated_power")
        lam = np.asarray(self.lambda_trace)
        if lam.size > 1 and np.any(np.diff(lam) < -1e-6 * np.abs(lam[:-1])):
            raise ValueError("lambda_trace must be non-decreasing")

    def to_dict(self) -> dict:
        return {
            "energy_efficiency": self.energy_efficiency,
            "sum_rate": self.sum_rate,
            "per_user_sinr": list(map(float, self.per_user_sinr)),
            "per_target_gain": list(map(float, self.per_target_gain)),
            "dissipated_power": self.dissipated_power,
            "lambda_trace": list(map(float, self.lambda_trace)),
            "factorization_error": self.factorization_error,
            "iterations": dict(self.iterations),
            "wall_time": self.wall_time,
            "feasible": self.feasible,
            "tx_power": self.tx_power,
            "rank_one_defects": list(map(float, self.rank_one_defects)),
        }
