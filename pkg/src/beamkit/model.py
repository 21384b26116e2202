"""Scenario configuration, ULA steering vectors and randomized mmWave multipath channels.

Angle conventions: internally every angle is the physical ULA angle theta in
radians, where the array phase progression is proportional to cos(theta)
(broadside = 90 deg).  Config files written in the "figure" convention use
theta' = theta - 90 deg in degrees, so that users quoted at [30, 60] deg land
where the result plots put them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

C_LIGHT = 299_792_458.0
DEFAULT_WAVELENGTH = C_LIGHT / 28e9  # 28 GHz carrier


class ConfigError(ValueError):
    """Raised when a scenario configuration is invalid or fails to parse."""


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (np.asarray(x_db) / 10.0)


def dbm_to_watts(x_dbm: float) -> float:
    return 10.0 ** ((np.asarray(x_dbm) - 30.0) / 10.0)


def figure_deg_to_physical_rad(angle_deg):
    """Map figure-axis degrees (theta') onto physical radians (theta' + 90 deg)."""
    return np.deg2rad(np.asarray(angle_deg, dtype=float) + 90.0)


def physical_rad_to_figure_deg(angle_rad):
    return np.rad2deg(np.asarray(angle_rad, dtype=float)) - 90.0


@dataclass
class ScenarioConfig:
    """All physical and algorithmic constants of one design scenario.

    Stored values are linear/SI: powers in watts, thresholds as linear
    ratios, angles as physical radians.  Only the path-loss parameters stay
    in dB because the path-loss model itself is a dB-domain law.
    """

    n_tx: int = 64
    n_rfc: int = 4
    n_users: int = 2
    n_targets: int = 2
    n_paths_per_user: int = 10
    carrier_wavelength: float = DEFAULT_WAVELENGTH
    antenna_spacing: float = DEFAULT_WAVELENGTH / 2
    noise_power: float = dbm_to_watts(-91.0)
    max_tx_power: float = 100.0  # 20 dB re 1 W
    sinr_thresholds: tuple = (10.0, 10.0)  # 10 dB
    beampattern_thresholds: tuple = (10 ** 0.5, 10 ** 0.5)  # 5 dB
    amplifier_efficiency: float = 0.3
    rfc_static_power: float = 1.0  # 30 dBm
    user_angles: tuple = tuple(figure_deg_to_physical_rad([30.0, 60.0]))
    target_angles: tuple = tuple(figure_deg_to_physical_rad([-60.0, -20.0]))
    user_distances: tuple = (50.0, 50.0)
    pathloss_intercept: float = 61.4  # dB
    pathloss_exponent: float = 2.0
    shadowing_std: float = 5.8  # dB
    tol_dinkelbach: float = 1e-3
    tol_factorization: float = 1e-3
    tol_power: float = 1e-3
    rng_seed: int = 1
    angle_convention: str = "figure"
    aod_mean_uniform: bool = False
    q_inner_loop: bool = False
    penalty_paper_form: bool = False

    def __post_init__(self):
        for name in ("carrier_wavelength", "antenna_spacing", "noise_power",
                     "max_tx_power", "amplifier_efficiency", "rfc_static_power",
                     "pathloss_intercept", "pathloss_exponent", "shadowing_std",
                     "tol_dinkelbach", "tol_factorization", "tol_power"):
            setattr(self, name, float(getattr(self, name)))
        for name in ("n_tx", "n_rfc", "n_users", "n_targets", "n_paths_per_user",
                     "rng_seed"):
            setattr(self, name, int(getattr(self, name)))
        self.sinr_thresholds = tuple(float(x) for x in np.atleast_1d(self.sinr_thresholds))
        self.beampattern_thresholds = tuple(
            float(x) for x in np.atleast_1d(self.beampattern_thresholds)
        )
        self.user_angles = tuple(float(x) for x in np.atleast_1d(self.user_angles))
        self.target_angles = tuple(float(x) for x in np.atleast_1d(self.target_angles))
        self.user_distances = tuple(float(x) for x in np.atleast_1d(self.user_distances))
        self.validate()

    @property
    def n_streams(self) -> int:
        return self.n_users + self.n_targets

    def validate(self):
        if self.n_tx < 1:
            raise ConfigError("n_tx must be a positive integer")
        if self.n_rfc < self.n_streams:
            raise ConfigError(
                f"n_rfc={self.n_rfc} must be at least n_streams={self.n_streams}"
            )
        if self.n_rfc > self.n_tx:
            raise ConfigError("n_rfc must not exceed n_tx")
        if self.n_paths_per_user < 1:
            raise ConfigError("n_paths_per_user must be positive")
        for name in ("carrier_wavelength", "antenna_spacing", "noise_power",
                     "max_tx_power", "rfc_static_power", "tol_dinkelbach",
                     "tol_factorization", "tol_power"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")
        if not 0.0 <= self.amplifier_efficiency <= 1.0:
            raise ConfigError("amplifier_efficiency must lie in [0, 1]")
        if len(self.user_angles) != self.n_users:
            raise ConfigError("user_angles length must equal n_users")
        if len(self.target_angles) != self.n_targets:
            raise ConfigError("target_angles length must equal n_targets")
        if len(self.user_distances) != self.n_users:
            raise ConfigError("user_distances length must equal n_users")
        if len(self.sinr_thresholds) != self.n_users:
            raise ConfigError("sinr_thresholds length must equal n_users")
        if len(self.beampattern_thresholds) != self.n_targets:
            raise ConfigError("beampattern_thresholds length must equal n_targets")
        for tau in self.sinr_thresholds:
            if not tau > 0:
                raise ConfigError("sinr_thresholds must be strictly positive")
        for gam in self.beampattern_thresholds:
            if not gam > 0:
                raise ConfigError("beampattern_thresholds must be strictly positive")
        for ang in list(self.user_angles) + list(self.target_angles):
            if not -math.pi < ang <= math.pi:
                raise ConfigError(f"angle {ang} rad outside (-pi, pi]")
        for d in self.user_distances:
            if not d > 0:
                raise ConfigError("user_distances must be strictly positive")
        if self.angle_convention not in ("figure", "physical"):
            raise ConfigError("angle_convention must be 'figure' or 'physical'")

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)


# JSON fields carrying dB/dBm values (Table-style units), converted once at load.
_DB_FIELDS = {"max_tx_power": "db", "noise_power": "dbm", "rfc_static_power": "dbm"}
_DB_LIST_FIELDS = ("sinr_thresholds", "beampattern_thresholds")
_REQUIRED_FIELDS = (
    "n_tx", "n_users", "n_targets", "user_angles", "target_angles",
    "noise_power", "max_tx_power", "sinr_thresholds", "beampattern_thresholds",
)


def config_from_dict(doc: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed JSON document.

    The document's field names match the dataclass verbatim; unknown fields
    are rejected.  dB-valued fields (noise_power in dBm, max_tx_power in dB,
    rfc_static_power in dBm, thresholds in dB) are converted to linear watts
    or ratios here, exactly once.  Angles are degrees, in the convention
    named by the optional ``angle_convention`` field (default "figure").
    """
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config field: {unknown[0]}")
    missing = [name for name in _REQUIRED_FIELDS if name not in doc]
    if missing:
        raise ConfigError(f"missing config field: {missing[0]}")

    kwargs = dict(doc)
    n_users = int(kwargs["n_users"])
    n_targets = int(kwargs["n_targets"])

    def broadcast(value, n):
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.size == 1:
            arr = np.repeat(arr, n)
        return arr

    kwargs["max_tx_power"] = float(db_to_linear(kwargs["max_tx_power"]))
    kwargs["noise_power"] = float(dbm_to_watts(kwargs["noise_power"]))
    if "rfc_static_power" in kwargs:
        kwargs["rfc_static_power"] = float(dbm_to_watts(kwargs["rfc_static_power"]))
    kwargs["sinr_thresholds"] = tuple(db_to_linear(broadcast(kwargs["sinr_thresholds"], n_users)))
    kwargs["beampattern_thresholds"] = tuple(
        db_to_linear(broadcast(kwargs["beampattern_thresholds"], n_targets))
    )
    if "user_distances" in kwargs:
        kwargs["user_distances"] = tuple(broadcast(kwargs["user_distances"], n_users))

    convention = kwargs.get("angle_convention", "figure")
    if convention == "figure":
        to_rad = figure_deg_to_physical_rad
    elif convention == "physical":
        to_rad = lambda deg: np.deg2rad(np.asarray(deg, dtype=float))
    else:
        raise ConfigError("angle_convention must be 'figure' or 'physical'")
    kwargs["user_angles"] = tuple(to_rad(broadcast(kwargs["user_angles"], n_users)))
    kwargs["target_angles"] = tuple(to_rad(broadcast(kwargs["target_angles"], n_targets)))

    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:  # pragma: no cover - defensive
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def steering_vector(theta, n_tx: int, spacing: float = 0.5, wavelength: float = 1.0):
    """ULA steering vector: element n is exp(j*(2pi/lambda)*b*n*cos(theta))/sqrt(N)."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    if n_tx < 1:
        raise ValueError("n_tx must be at least 1")
    if wavelength <= 0 or spacing <= 0:
        raise ValueError("wavelength and spacing must be positive")
    return steering_from_cos(math.cos(theta), n_tx, spacing, wavelength)


def steering_from_cos(cos_theta, n_tx: int, spacing: float = 0.5, wavelength: float = 1.0):
    """Steering vector parameterized directly by cos(theta); vectorized over cos_theta."""
    cos_theta = np.asarray(cos_theta, dtype=float)
    n = np.arange(n_tx)
    phase = (2.0 * np.pi / wavelength) * spacing * np.multiply.outer(cos_theta, n)
    return np.exp(1j * phase) / math.sqrt(n_tx)


def path_loss_db(distance: float, intercept: float, exponent: float, shadowing: float) -> float:
    """Large-scale path loss in dB: intercept + 10*exponent*log10(d) + shadowing.

    The shadowing draw is supplied by the caller; this function is pure.
    """
    if not distance > 0:
        raise ValueError("distance must be strictly positive")
    return float(intercept + 10.0 * exponent * math.log10(distance) + shadowing)


@dataclass(frozen=True)
class ChannelSet:
    """Per-user multipath parameters and the resulting M x N_t channel rows.

    ``rows[m]`` is h_m^H, i.e. the conjugated channel laid out as a row, so
    that ``rows[m] @ f`` computes h_m^H f directly.
    """

    rows: np.ndarray          # (M, N_t) complex
    path_gains: np.ndarray    # (M, Np) complex
    path_angles: np.ndarray   # (M, Np) physical radians
    pathloss_db: np.ndarray   # (M,) realized PL(d_m) incl. shadowing

    @property
    def n_users(self) -> int:
        return self.rows.shape[0]

    @property
    def n_tx(self) -> int:
        return self.rows.shape[1]

    def regenerated_rows(self, spacing: float = 0.5, wavelength: float = 1.0) -> np.ndarray:
        """Recompute the channel rows from the stored path gains and angles."""
        n_tx = self.n_tx
        out = np.zeros_like(self.rows)
        for m in range(self.n_users):
            atoms = steering_from_cos(np.cos(self.path_angles[m]), n_tx, spacing, wavelength)
            out[m] = self.path_gains[m] @ atoms.conj()
        return out


def _truncated_laplace(rng, mean, scale, halfwidth, size):
    """Inverse-CDF draw from a Laplace(mean, scale) truncated to +/- halfwidth."""
    edge = 0.5 * math.exp(-halfwidth / scale)
    u = edge + (1.0 - 2.0 * edge) * rng.uniform(size=size)
    low = u < 0.5
    x = np.empty(size)
    x[low] = mean + scale * np.log(2.0 * u[low])
    x[~low] = mean - scale * np.log(2.0 * (1.0 - u[~low]))
    return x


def generate_channels(cfg: ScenarioConfig, rng=None) -> ChannelSet:
    """Draw a multipath channel realization for every user.

    Path gains are CN(0, beta^2 * 10^(-PL/10)) with beta = sqrt(N_t/Np);
    departure angles follow a truncated Laplacian around the configured user
    angle (or a uniformly-random mean when cfg.aod_mean_uniform is set) with
    standard deviation pi/(2*N_t), truncated at +/- pi/2.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    n_tx, n_p = cfg.n_tx, cfg.n_paths_per_user
    m_users = cfg.n_users
    beta_sq = n_tx / n_p
    aod_scale = math.pi / (2.0 * n_tx) / math.sqrt(2.0)  # Laplace scale for std pi/(2 N_t)

    rows = np.zeros((m_users, n_tx), dtype=complex)
    gains = np.zeros((m_users, n_p), dtype=complex)
    angles = np.zeros((m_users, n_p))
    pl = np.zeros(m_users)
    for m in range(m_users):
        shadow = rng.normal(0.0, cfg.shadowing_std)  # one link-scale draw per user
        pl[m] = path_loss_db(cfg.user_distances[m], cfg.pathloss_intercept,
                             cfg.pathloss_exponent, shadow)
        var = beta_sq * 10.0 ** (-0.1 * pl[m])
        g = math.sqrt(var / 2.0) * (rng.standard_normal(n_p) + 1j * rng.standard_normal(n_p))
        mean_angle = rng.uniform(-math.pi, math.pi) if cfg.aod_mean_uniform else cfg.user_angles[m]
        theta = _truncated_laplace(rng, mean_angle, aod_scale, math.pi / 2.0, n_p)
        atoms = steering_from_cos(np.cos(theta), n_tx, cfg.antenna_spacing, cfg.carrier_wavelength)
        rows[m] = g @ atoms.conj()
        gains[m] = g
        angles[m] = theta
    return ChannelSet(rows=rows, path_gains=gains, path_angles=angles, pathloss_db=pl)
