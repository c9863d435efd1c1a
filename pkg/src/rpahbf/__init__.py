"""Hybrid beamforming with reconfigurable-pattern antennas."""

from .baselines import (GreedyConfig, exhaustive_pattern_select, fixed_pattern,
                        greedy_pattern_select, hbf_solve, random_pattern)
from .channel import (ArrayGeometry, ConfigError, DomainError, EmCsiTensor, PatternCodebook,
                      SystemConfig, apply_pattern, build_emcsi, sample_emcsi)
from .config import RunConfig, desk_config, dump_config, load_config, parse_config
from .dataset import generate_dataset, generate_samples, read_dataset
from .precoding import BeamformingSolution, dbm_to_watts, sum_se, validate_analog
from .prhbfnet import PrHbfNet, PrHbfNetConfig, evaluate, load_model, save_model, train

__version__ = "0.1.0"
