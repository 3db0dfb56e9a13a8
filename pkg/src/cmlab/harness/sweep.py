"""Monte Carlo BER/AIR sweeps, trace generation and trace decoding.

Every codeword draws its randomness from ``SeedSequence(seed, spawn_key=key)``
with a key built from (SNR index, codeword index) or (trace index,
realization index).  Per-codeword statistics are summed in index order, so
results do not depend on how many worker processes ran them.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..air import (
    AirAccumulator, awgn_capacity, min_ber_bound, point_indices, postfec_mi_hd,
    postfec_sd_terms,
)
from ..channel import Trace, apply_awgn, estimate_covariance, rx_noise_load, sigma_from_snr
from ..errors import ConfigError, SchemeMismatchError, TraceFormatError
from ..ldpc import _split_lanes, bicm_decode, bicm_encode, build_bit_interleaver, build_dvbs2_r23
from ..modulation import build_8psk, hard_demap
from ..ttcm import build_interleaver, ttcm_decode, ttcm_encode
from .config import SweepConfig
from .tracefile import load_traces, save_traces

FIELDS = (
    "scheme", "nominal_snr_db", "snr_db", "n_s", "n_codewords", "iterations",
    "pre_fec_ber", "post_fec_ber", "ber_1", "ber_2", "bit_errors", "frame_errors",
    "censored", "mi", "gmi", "i_sd", "i_hd", "awgn_capacity", "ber_bound_mi",
    "ber_bound_gmi", "seed", "trace",
)
_INT_FIELDS = {"n_s", "n_codewords", "iterations", "bit_errors", "frame_errors", "seed", "trace"}


# --------------------------------------------------------------------------
# Codec wrapper
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SchemeSpec:
    """Hashable description of an encoder/decoder pair."""

    scheme: str
    n_s: int
    iterations: int
    interleaver_seed: int = 0
    spread: int = 0
    first_mode: str = "marginal"
    early_stop: bool = True

    @classmethod
    def from_config(cls, cfg: SweepConfig) -> "SchemeSpec":
        return cls(cfg.scheme, cfg.n_s, cfg.iterations, cfg.interleaver_seed, cfg.spread,
                   cfg.first_mode, cfg.early_stop)


class Codec:
    """Encoder and decoder for one scheme at one codeword length."""

    def __init__(self, spec: SchemeSpec):
        self.spec = spec
        self.n_data = 2 * spec.n_s
        if spec.scheme == "ttcm":
            self.c = build_8psk("natural")
            self.il = build_interleaver(spec.n_s, spec.spread or None, seed=spec.interleaver_seed)
            self.blocks = 1
        elif spec.scheme == "ldpc":
            self.c = build_8psk("brgc")
            self.code = build_dvbs2_r23()
            self.lanes = 3 * spec.n_s // self.code.n
            # the single-codeword mode runs without a bit interleaver
            self.il = (build_bit_interleaver(self.lanes * self.code.n, spec.interleaver_seed)
                       if self.lanes > 1 else None)
            self.blocks = self.lanes
        else:
            raise ConfigError(f"unknown scheme {spec.scheme!r}")

    def encode(self, data) -> np.ndarray:
        if self.spec.scheme == "ttcm":
            return ttcm_encode(data, self.il, self.c)
        return bicm_encode(data, self.code, self.il, self.c, self.lanes)

    def decode(self, rx, sigma):
        """Returns (data bits, data-bit LLRs (N_s, 2), mean iterations)."""
        if self.spec.scheme == "ttcm":
            out = ttcm_decode(rx, sigma, self.il, self.spec.iterations, self.c, self.spec.first_mode)
            return out.data_bits, out.lam, float(out.iterations)
        out = bicm_decode(rx, sigma, self.code, self.il, self.spec.iterations, self.c,
                          self.lanes, self.spec.early_stop)
        return out.data_bits, out.lam, float(np.mean(out.iterations))

    def block_errors(self, err: np.ndarray) -> int:
        """Number of component codewords with at least one data-bit error."""
        if self.spec.scheme == "ttcm":
            return int(err.any())
        return int(np.count_nonzero(_split_lanes(err, self.lanes).any(axis=1)))


@lru_cache(maxsize=4)
def get_codec(spec: SchemeSpec) -> Codec:
    return Codec(spec)


# --------------------------------------------------------------------------
# Per-codeword statistics
# --------------------------------------------------------------------------

@dataclass
class CodewordStats:
    pre_errors: int
    pre_bits: int
    post_errors: np.ndarray  # (2,) per data-bit position
    n_pairs: int
    block_errors: int
    n_blocks: int
    sd_sums: np.ndarray  # (2,)
    signal: float
    noise: float
    iterations: float
    air: AirAccumulator | None


def evaluate(codec: Codec, tx, rx, data, sigma, sigma_air=None, want_air=False) -> CodewordStats:
    """Decode one received block and collect every per-codeword metric.

    ``sigma`` drives the decoder; ``sigma_air`` (default ``sigma``) is the
    auxiliary channel used for MI/GMI.
    """
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    data = np.asarray(data, dtype=np.uint8).ravel()
    idx = point_indices(tx, codec.c)
    _, hard_bits = hard_demap(rx, codec.c)
    pre_errors = int(np.count_nonzero(hard_bits != codec.c.labels[idx]))

    bits, lam, iters = codec.decode(rx, sigma)
    err = bits != data
    air = None
    if want_air:
        # GMI always refers to the Gray labeling; MI ignores labels
        brgc = build_8psk("brgc")
        air = AirAccumulator(brgc, sigma if sigma_air is None else sigma_air)
        air.add(point_indices(tx, brgc), rx - tx)
    return CodewordStats(
        pre_errors=pre_errors,
        pre_bits=hard_bits.size,
        post_errors=err.reshape(-1, 2).sum(axis=0),
        n_pairs=data.size // 2,
        block_errors=codec.block_errors(err),
        n_blocks=codec.blocks,
        sd_sums=postfec_sd_terms(data, lam).sum(axis=0),
        signal=float(np.sum(tx**2)),
        noise=float(np.sum((rx - tx) ** 2)),
        iterations=iters,
        air=air,
    )


def generate_codeword(codec: Codec, snr_db: float, seed: int, key: tuple):
    """Random data, transmitted symbols and AWGN-corrupted symbols for one codeword."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
    data = rng.integers(0, 2, codec.n_data, dtype=np.uint8)
    tx = codec.encode(data)
    rx = apply_awgn(tx, sigma_from_snr(snr_db, codec.c), rng)
    return data, tx, rx


def simulate_codeword(task) -> CodewordStats:
    """Worker entry point: ``(spec, snr_db, seed, key, want_air)``."""
    spec, snr_db, seed, key, want_air = task
    codec = get_codec(spec)
    data, tx, rx = generate_codeword(codec, snr_db, seed, key)
    return evaluate(codec, tx, rx, data, sigma_from_snr(snr_db, codec.c), want_air=want_air)


def _loaded_codeword(task) -> CodewordStats:
    """Worker entry point for one receiver noise-loading realization."""
    spec, base, target, seed, key, r = task
    codec = get_codec(spec)
    t = rx_noise_load(base, target, r + 1, seed, key)[r]
    sigma = estimate_covariance(t)
    return evaluate(codec, t.tx, t.rx, t.data_bits, sigma, want_air=True)


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------

def _bound(air):
    if not math.isfinite(air):
        return math.nan
    return min_ber_bound(min(max(air, 0.0), 2.0))


def summarize(stats: list[CodewordStats], spec: SchemeSpec, nominal_snr_db: float, seed: int,
              min_errors: int = 0, trace: int = -1) -> dict:
    """One result row from per-codeword statistics (summed in list order)."""
    pre_errors = sum(s.pre_errors for s in stats)
    pre_bits = sum(s.pre_bits for s in stats)
    post = np.zeros(2, dtype=np.int64)
    sd = np.zeros(2)
    n_pairs = 0
    signal = noise = 0.0
    air = None
    for s in stats:
        post += s.post_errors
        sd += s.sd_sums
        n_pairs += s.n_pairs
        signal += s.signal
        noise += s.noise
        if s.air is not None:
            if air is None:
                air = AirAccumulator(s.air.c, np.eye(s.air.c.n_dims))
            air.merge(s.air)
    ber_q = post / n_pairs
    mi = air.mi() if air is not None else math.nan
    gmi = air.gmi() if air is not None else math.nan
    snr = 10 * math.log10(signal / noise) if noise > 0 else math.inf
    bit_errors = int(post.sum())
    return {
        "scheme": spec.scheme,
        "nominal_snr_db": float(nominal_snr_db),
        "snr_db": snr,
        "n_s": spec.n_s,
        "n_codewords": len(stats),
        "iterations": spec.iterations,
        "pre_fec_ber": pre_errors / pre_bits,
        "post_fec_ber": bit_errors / (2 * n_pairs),
        "ber_1": float(ber_q[0]),
        "ber_2": float(ber_q[1]),
        "bit_errors": bit_errors,
        "frame_errors": sum(s.block_errors for s in stats),
        "censored": bit_errors < min_errors,
        "mi": mi,
        "gmi": gmi,
        "i_sd": float(np.sum(1.0 - sd / n_pairs)),
        "i_hd": postfec_mi_hd(min(ber_q[0], 0.5), min(ber_q[1], 0.5)),
        "awgn_capacity": awgn_capacity(snr),
        "ber_bound_mi": _bound(mi),
        "ber_bound_gmi": _bound(gmi),
        "seed": int(seed),
        "trace": int(trace),
    }


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_row(raw: dict) -> dict:
    row = {}
    for k in FIELDS:
        v = raw[k]
        if k == "scheme":
            row[k] = v
        elif k == "censored":
            row[k] = v == "1"
        elif k in _INT_FIELDS:
            row[k] = int(v)
        else:
            row[k] = float(v)
    return row


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [_parse_row(r) for r in csv.DictReader(fh)]


def sort_rows(rows: list[dict]) -> list[dict]:
    return sorted(rows, key=lambda r: (r["scheme"], r["nominal_snr_db"], r["seed"], r["trace"]))


def write_rows(rows: list[dict], path):
    """Atomically write sorted rows with a header."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for r in sort_rows(rows):
            w.writerow([_fmt(r[k]) for k in FIELDS])
    os.replace(tmp, path)


def _append_row(row: dict, path: Path):
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(FIELDS)
        w.writerow([_fmt(row[k]) for k in FIELDS])
        fh.flush()
        os.fsync(fh.fileno())


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _resume(cfg: SweepConfig, path: Path) -> dict:
    """Rows of an interrupted run with the same configuration, keyed by nominal SNR."""
    side = _sidecar(path)
    if not (path.exists() and side.exists()):
        return {}
    try:
        if json.loads(side.read_text()).get("fingerprint") != cfg.fingerprint():
            return {}
        return {r["nominal_snr_db"]: r for r in read_rows(path)}
    except (ValueError, KeyError, OSError):
        return {}


def _prepare_output(cfg: SweepConfig):
    if not cfg.out:
        return None, {}
    path = Path(cfg.out)
    if not path.parent.exists():
        raise OSError(f"output directory {path.parent} does not exist")
    done = _resume(cfg, path)
    if not done:
        with open(path, "w", encoding="utf-8"):
            pass
        _sidecar(path).write_text(json.dumps(
            {"fingerprint": cfg.fingerprint(), "config": cfg.to_dict()}, indent=1, sort_keys=True))
    return path, done


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

class _Serial:
    def map(self, fn, tasks):
        return map(fn, tasks)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _executor(workers: int):
    return _Serial() if workers == 1 else ProcessPoolExecutor(max_workers=workers)


def run_sweep(cfg: SweepConfig, progress=None) -> list[dict]:
    """Simulate every SNR point of ``cfg``; returns rows sorted by SNR.

    With ``cfg.out`` set, each finished point is appended to the CSV at once
    and the file is rewritten sorted at the end.  A rerun with an identical
    configuration skips points already on disk.
    """
    spec = SchemeSpec.from_config(cfg)
    path, done = _prepare_output(cfg)
    rows = []
    with _executor(cfg.workers) as ex:
        for i, snr in enumerate(cfg.grid()):
            snr = float(snr)
            if snr in done:
                rows.append(done[snr])
                continue
            stats: list[CodewordStats] = []
            while True:
                start = len(stats)
                stop = min(start + cfg.codewords, cfg.budget)
                tasks = [(spec, snr, cfg.seed, (i, j), j < cfg.air_codewords)
                         for j in range(start, stop)]
                stats.extend(ex.map(simulate_codeword, tasks))
                errors = sum(int(s.post_errors.sum()) for s in stats)
                if errors >= cfg.min_errors or len(stats) >= cfg.budget:
                    break
            row = summarize(stats, spec, snr, cfg.seed, cfg.min_errors)
            rows.append(row)
            if path is not None:
                _append_row(row, path)
            if progress is not None:
                progress(row)
    if path is not None:
        write_rows(rows, path)
    return sort_rows(rows)


def run_ber_sweep(cfg: SweepConfig, progress=None) -> list[dict]:
    """BER waterfall sweep; MI/GMI come from the first ``cfg.air_codewords`` codewords."""
    return run_sweep(cfg, progress)


def run_air_sweep(cfg: SweepConfig, progress=None) -> list[dict]:
    """AIR sweep: MI/GMI from every simulated codeword plus post-FEC I_SD/I_HD."""
    return run_sweep(replace(cfg, air_codewords=cfg.budget), progress)


# --------------------------------------------------------------------------
# Trace files
# --------------------------------------------------------------------------

def gen_trace(cfg: SweepConfig, snr_db: float, count: int, path) -> list[Trace]:
    """Write ``count`` AWGN codewords of ``cfg.scheme`` at ``snr_db`` to a trace file."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    spec = SchemeSpec.from_config(cfg)
    codec = get_codec(spec)
    traces = []
    for j in range(count):
        data, tx, rx = generate_codeword(codec, snr_db, cfg.seed, (0, j))
        traces.append(Trace(tx, rx, data_bits=data, scheme=cfg.scheme, seed=cfg.seed,
                            nominal_snr_db=snr_db))
    save_traces(traces, path, interleaver_seed=cfg.interleaver_seed, spread=cfg.spread)
    return traces


def decode_trace(path, scheme: str, cfg: SweepConfig, progress=None) -> list[dict]:
    """Decode every trace in a file with the covariance estimated from the trace itself.

    With ``cfg.realizations > 0`` each trace is first noise-loaded to
    ``cfg.target_snr`` and the row aggregates all realizations.
    """
    traces, head = load_traces(path)
    if head["scheme"] != scheme:
        raise SchemeMismatchError(
            f"trace file holds {head['scheme']!r} traces but decoder {scheme!r} was requested")
    if head["n_s"] not in (21600, 64800) or head["n_dims"] != 2:
        raise TraceFormatError(
            f"{scheme} decoding needs 2-D traces of 21600 or 64800 symbols, got "
            f"n_dims={head['n_dims']}, n_s={head['n_s']}")
    if traces[0].data_bits is None:
        raise TraceFormatError(f"missing data-bit sidecar {path}.bits")
    if cfg.realizations and not math.isfinite(cfg.target_snr):
        raise ConfigError("noise loading needs a finite target_snr")
    spec = SchemeSpec(scheme, head["n_s"], cfg.iterations, head["interleaver_seed"],
                      head["spread"], cfg.first_mode, cfg.early_stop)
    codec = get_codec(spec)
    rows = []
    with _executor(cfg.workers) as ex:
        for i, t in enumerate(traces):
            if cfg.realizations == 0:
                sigma = estimate_covariance(t)
                stats = [evaluate(codec, t.tx, t.rx, t.data_bits, sigma, want_air=True)]
                nominal = t.nominal_snr_db
            else:
                tasks = [(spec, t, cfg.target_snr, cfg.seed, (i,), r)
                         for r in range(cfg.realizations)]
                stats = list(ex.map(_loaded_codeword, tasks))
                nominal = cfg.target_snr
            row = summarize(stats, spec, nominal, cfg.seed, cfg.min_errors, trace=i)
            rows.append(row)
            if progress is not None:
                progress(row)
    if cfg.out:
        write_rows(rows, cfg.out)
    return sort_rows(rows)
