"""Configuration, experiment runs, sweeps, artefact files and the command line."""
from .config import ExperimentConfig, config_from_dict, config_to_dict, dump_config, load_config, loads_config
from .runner import (
    RunRecord,
    SnrSweepResult,
    SweepResult,
    run_gamma_mu_sweep,
    run_lambda_sweep,
    run_single,
    run_snr_sweep,
)

__all__ = [
    "ExperimentConfig", "RunRecord", "SnrSweepResult", "SweepResult", "config_from_dict", "config_to_dict",
    "dump_config", "load_config", "loads_config", "run_gamma_mu_sweep", "run_lambda_sweep", "run_single",
    "run_snr_sweep",
]
