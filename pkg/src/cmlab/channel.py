"""Correlated AWGN channel: noise generation, SNR bookkeeping and covariance estimation."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConditioningError, LengthError

# eigenvalue ratio beyond which a covariance is treated as singular
MAX_CONDITION = 1e12
EIG_FLOOR = 1e-15


@dataclass(frozen=True)
class Covariance:
    """Noise covariance matrix ``S`` of the memoryless Gaussian channel.

    ``degenerate`` is set when the matrix came from a noiseless trace and must
    not be inverted.
    """

    matrix: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if mat.shape[0] != mat.shape[1]:
            raise ValueError(f"covariance must be square, got {mat.shape}")
        if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "matrix", 0.5 * (mat + mat.T))

    @property
    def n_dims(self) -> int:
        return self.matrix.shape[0]

    def _eig(self):
        if self.degenerate:
            raise ConditioningError("covariance is degenerate (zero-noise trace)")
        w, v = np.linalg.eigh(self.matrix)
        if w[-1] <= 0 or w[0] <= w[-1] / MAX_CONDITION:
            raise ConditioningError(
                f"covariance is not positive-definite (eigenvalues {w.tolist()})"
            )
        w = np.maximum(w, EIG_FLOOR * np.trace(self.matrix))
        return w, v

    def precision(self) -> np.ndarray:
        """Inverse covariance."""
        w, v = self._eig()
        return (v / w) @ v.T

    def sqrt(self) -> np.ndarray:
        """Symmetric square root, used to colour standard normal samples."""
        w, v = self._eig()
        return (v * np.sqrt(w)) @ v.T

    def logdet(self) -> float:
        w, _ = self._eig()
        return float(np.sum(np.log(w)))


def as_covariance(sigma) -> Covariance:
    if isinstance(sigma, Covariance):
        return sigma
    return Covariance(np.asarray(sigma, dtype=float))


@dataclass
class Trace:
    """Paired transmitted/received symbol sequences of one codeword.

    ``tx`` and ``rx`` have shape (N_s, N_D).  ``data_bits`` holds the
    2*N_s information bits when the trace carries a coded scheme.
    """

    tx: np.ndarray
    rx: np.ndarray
    data_bits: np.ndarray | None = None
    scheme: str = "raw"
    seed: int = 0
    nominal_snr_db: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tx = np.asarray(self.tx, dtype=float)
        self.rx = np.asarray(self.rx, dtype=float)
        if self.tx.shape != self.rx.shape:
            raise LengthError(f"tx shape {self.tx.shape} != rx shape {self.rx.shape}")
        if self.data_bits is not None:
            self.data_bits = np.asarray(self.data_bits, dtype=np.uint8)

    @property
    def n_s(self) -> int:
        return self.tx.shape[0]

    @property
    def n_dims(self) -> int:
        return self.tx.shape[1]

    @property
    def noise(self) -> np.ndarray:
        return self.rx - self.tx


def snr_db_to_linear(snr_db):
    return 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)


def sigma_from_snr(snr_db: float, c) -> Covariance:
    """Circular covariance giving ``E|X|^2 / E|Z|^2`` equal to ``snr_db``."""
    n_dims = c.n_dims
    var = c.mean_energy / snr_db_to_linear(snr_db) / n_dims
    return Covariance(float(var) * np.eye(n_dims))


def apply_awgn(symbols, sigma, rng) -> np.ndarray:
    """Add zero-mean Gaussian noise with covariance ``sigma``.

    ``rng`` is a seed, ``SeedSequence`` or ``Generator``.
    """
    sigma = as_covariance(sigma)
    symbols = np.asarray(symbols, dtype=float)
    rng = np.random.default_rng(rng)
    white = rng.standard_normal(symbols.shape)
    return symbols + white @ sigma.sqrt()


def estimate_covariance(t: Trace) -> Covariance:
    """Data-aided sample covariance of ``rx - tx`` (mean removed, 1/N_s)."""
    if t.n_s < 2:
        raise LengthError("covariance estimation needs at least 2 symbols")
    z = t.noise
    z = z - z.mean(axis=0)
    mat = z.T @ z / t.n_s
    degenerate = not np.any(mat)
    return Covariance(mat, degenerate=degenerate)


def measure_snr(t: Trace) -> float:
    """Measured SNR in dB; ``inf`` when the trace is noiseless."""
    signal = np.mean(np.sum(t.tx**2, axis=1))
    noise = np.mean(np.sum(t.noise**2, axis=1))
    if noise == 0:
        return float("inf")
    return float(10 * np.log10(signal / noise))


class NoiseLoadedTraces(Sequence):
    """Lazily generated receiver-side noise loadings of one trace.

    Realization r uses a seed derived from ``(seed, r)``, so any subset can be
    generated independently and in any order.
    """

    def __init__(self, base: Trace, target_snr_db: float, n_realizations: int, seed: int,
                 key: tuple = ()):
        current = measure_snr(base)
        if not target_snr_db < current:
            raise ValueError(
                f"target SNR {target_snr_db:.3f} dB must be below the trace SNR "
                f"{current:.3f} dB; noise cannot be removed"
            )
        self.base = base
        self.target_snr_db = float(target_snr_db)
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._n = int(n_realizations)
        signal = np.mean(np.sum(base.tx**2, axis=1))
        existing = np.mean(np.sum(base.noise**2, axis=1))
        target = signal / snr_db_to_linear(target_snr_db)
        self.added_variance = float(target - existing) / base.n_dims

    def __len__(self):
        return self._n

    def seed_sequence(self, r: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=self.key + (r,))

    def __getitem__(self, r):
        if isinstance(r, slice):
            return [self[i] for i in range(*r.indices(self._n))]
        if r < 0:
            r += self._n
        if not 0 <= r < self._n:
            raise IndexError(r)
        rng = np.random.default_rng(self.seed_sequence(r))
        noise = np.sqrt(self.added_variance) * rng.standard_normal(self.base.rx.shape)
        meta = dict(self.base.meta, realization=r)
        return replace(
            self.base, rx=self.base.rx + noise, nominal_snr_db=self.target_snr_db, meta=meta
        )


def rx_noise_load(t: Trace, target_snr_db: float, n_realizations: int, seed: int,
                  key: tuple = ()):
    """Receiver-side digital noise loading of a recovered trace.

    Adds circular AWGN so that the measured SNR of each realization lands on
    ``target_snr_db``.  Returns a lazy sequence of ``n_realizations`` traces.
    ``key`` prefixes the per-realization spawn key, which lets several traces
    share one master seed without sharing noise.
    """
    return NoiseLoadedTraces(t, target_snr_db, n_realizations, seed, key)
