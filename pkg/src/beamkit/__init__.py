"""beamkit: energy-efficient hybrid beamforming designer for ISAC mmWave MIMO."""

__version__ = "0.1.0"

from .model import (
    ChannelSet,
    ConfigError,
    ScenarioConfig,
    config_from_dict,
    generate_channels,
    load_config,
    path_loss_db,
    steering_vector,
)
from .metrics import (
    DesignReport,
    DigitalBeamformer,
    beampattern_gain,
    build_q,
    dissipated_power,
    energy_efficiency,
    sinr,
    sum_rate,
)
from .sdpcore import (
    CovariancePool,
    InfeasibleDesignError,
    SdrProblem,
    embed_real,
    rank_one_extract,
    repair_feasibility,
    solve_linear_sdp,
    solve_sdr,
)

__all__ = [name for name in dir() if not name.startswith("_")]
