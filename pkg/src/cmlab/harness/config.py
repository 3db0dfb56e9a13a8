"""Sweep configuration: flat ``key=value`` files with command-line overrides."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError

SCHEMES = ("ttcm", "ldpc")
CODEWORD_LENGTHS = (21600, 64800)
DEFAULT_ITERATIONS = {"ttcm": 10, "ldpc": 50}


@dataclass
class SweepConfig:
    """Parameters of one BER/AIR sweep.

    ``codewords`` is the number of codewords simulated per SNR point.  When
    fewer than ``min_errors`` post-FEC bit errors were seen, further batches of
    ``codewords`` are run until ``max_codewords`` is reached; a point that
    still misses the error target is flagged as censored.
    """

    scheme: str = "ttcm"
    snr_start: float = 5.5
    snr_stop: float = 7.5
    snr_step: float = 0.1
    snr_list: tuple = ()
    n_s: int = 64800
    codewords: int = 200
    max_codewords: int = 0
    min_errors: int = 100
    iterations: int = 0
    seed: int = 1
    interleaver_seed: int = 0
    spread: int = 0
    first_mode: str = "marginal"
    early_stop: bool = True
    air_codewords: int = 16
    realizations: int = 0
    target_snr: float = math.nan
    workers: int = 1
    out: str = ""

    def __post_init__(self):
        if self.iterations == 0 and self.scheme in DEFAULT_ITERATIONS:
            self.iterations = DEFAULT_ITERATIONS[self.scheme]
        self.snr_list = tuple(float(s) for s in self.snr_list)
        self.validate()

    def validate(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.n_s not in CODEWORD_LENGTHS:
            raise ConfigError(f"n_s must be one of {CODEWORD_LENGTHS}, got {self.n_s}")
        if self.codewords < 1:
            raise ConfigError("codewords must be >= 1")
        if self.max_codewords and self.max_codewords < self.codewords:
            raise ConfigError("max_codewords must be 0 or >= codewords")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.first_mode not in ("marginal", "sum"):
            raise ConfigError(f"first_mode must be 'marginal' or 'sum', got {self.first_mode!r}")
        if self.realizations < 0:
            raise ConfigError("realizations must be >= 0")
        grid = self.grid()
        if len(grid) == 0:
            raise ConfigError("empty SNR grid")
        if np.any(np.diff(grid) <= 0):
            raise ConfigError("SNR grid must be strictly increasing")

    def grid(self) -> np.ndarray:
        """SNR points in dB; an explicit ``snr_list`` wins over start/stop/step."""
        if self.snr_list:
            return np.array(self.snr_list, dtype=float)
        if self.snr_step <= 0:
            raise ConfigError("snr_step must be positive")
        n = int(math.floor((self.snr_stop - self.snr_start) / self.snr_step + 1e-9)) + 1
        # rounding keeps grid labels like 6.3 instead of 6.300000000000001
        return np.round(self.snr_start + self.snr_step * np.arange(n), 10)

    @property
    def budget(self) -> int:
        return max(self.codewords, self.max_codewords)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["snr_list"] = list(self.snr_list)
        return d

    def fingerprint(self) -> str:
        """Stable JSON of every field that influences results."""
        d = self.to_dict()
        for k in ("workers", "out"):
            d.pop(k)
        return json.dumps(d, sort_keys=True)


_FIELDS = {f.name: f for f in dataclasses.fields(SweepConfig)}


def _coerce(name: str, raw):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    default = _FIELDS[name].default
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = _coerce(key, value)
    return values


def load_config(path=None, **overrides) -> SweepConfig:
    """Build a config from an optional file, then apply non-None overrides."""
    values = {}
    if path is not None:
        try:
            values.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for key, value in overrides.items():
        if value is not None:
            values[key] = _coerce(key, value)
    try:
        return SweepConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
