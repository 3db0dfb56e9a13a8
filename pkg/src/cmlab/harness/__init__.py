"""Sweep orchestration, trace files and the command-line interface."""

from .config import SweepConfig, load_config
from .sweep import decode_trace, gen_trace, run_air_sweep, run_ber_sweep, run_sweep
from .tracefile import load_traces, save_traces

__all__ = [
    "SweepConfig", "load_config", "run_sweep", "run_ber_sweep", "run_air_sweep",
    "gen_trace", "decode_trace", "save_traces", "load_traces",
]
