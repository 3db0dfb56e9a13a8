"""Achievable information rates.

MI and GMI use Monte Carlo averages over a trace, grouped per transmitted
constellation point.  Two independent evaluation routes are provided: the
closed forms written in terms of ``d_ij = x_i - x_j`` and the noise sample
``z``, and the generic forms that evaluate the Gaussian channel density
directly.  Rates are in bits per symbol.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import logsumexp

from .channel import Trace, as_covariance
from .modulation import Constellation

LOG2E = 1.0 / math.log(2.0)
SD_CLIP = 50.0
MATCH_TOL = 1e-9


def point_indices(tx: np.ndarray, c: Constellation) -> np.ndarray:
    """Constellation index of every transmitted vector; rejects off-grid symbols."""
    tx = np.asarray(tx, dtype=float)
    d2 = np.sum((tx[:, None, :] - c.points) ** 2, axis=-1)
    idx = np.argmin(d2, axis=1)
    if tx.size and np.max(d2[np.arange(idx.size), idx]) > MATCH_TOL:
        raise ValueError("trace contains transmitted symbols that are not constellation points")
    return idx


def _check_coverage(counts: np.ndarray, c: Constellation):
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        i = int(missing[0])
        raise ValueError(
            f"constellation point {i} (label {''.join(map(str, c.labels[i]))}, "
            f"x={c.points[i].round(6).tolist()}) never appears in the trace"
        )


class AirAccumulator:
    """Running per-point sums for the closed-form MI and GMI.

    Feeding the codewords of a sweep point one by one gives the same result
    as evaluating the concatenated trace.
    """

    def __init__(self, c: Constellation, sigma):
        self.c = c
        prec = as_covariance(sigma).precision()
        d = c.points[:, None, :] - c.points[None, :, :]
        self._quad = -0.5 * np.einsum("ijk,kl,ijl->ij", d, prec, d)
        self._lin = d @ prec  # (M, M, N_D), row i: (S^-1 d_ij)^T
        self.counts = np.zeros(c.M, dtype=np.int64)
        self.mi_sums = np.zeros(c.M)
        self.gmi_sums = np.zeros(c.M)

    def add(self, tx_idx, z):
        tx_idx = np.asarray(tx_idx)
        z = np.asarray(z, dtype=float)
        c = self.c
        # exponent of every j for symbol n: -0.5 d'S^-1 d - d'S^-1 z
        expo = self._quad[tx_idx] - np.einsum("njk,nk->nj", self._lin[tx_idx], z)
        total = logsumexp(expo, axis=1)
        gmi_terms = np.zeros(total.shape)
        for k in range(c.m):
            in_set = c.labels[:, k][None, :] == c.labels[tx_idx, k][:, None]
            part = logsumexp(np.where(in_set, expo, -np.inf), axis=1)
            gmi_terms += total - part
        self.counts += np.bincount(tx_idx, minlength=c.M)
        self.mi_sums += np.bincount(tx_idx, weights=total, minlength=c.M)
        self.gmi_sums += np.bincount(tx_idx, weights=gmi_terms, minlength=c.M)

    def merge(self, other: "AirAccumulator"):
        """Fold in the sums of another accumulator built for the same channel."""
        self.counts += other.counts
        self.mi_sums += other.mi_sums
        self.gmi_sums += other.gmi_sums

    def add_trace(self, t: Trace):
        self.add(point_indices(t.tx, self.c), t.noise)

    def _average(self, sums):
        _check_coverage(self.counts, self.c)
        return float(np.mean(sums / self.counts)) * LOG2E

    def mi(self) -> float:
        return self.c.m - self._average(self.mi_sums)

    def gmi(self) -> float:
        return self.c.m - self._average(self.gmi_sums)


def mi_closed_form(t: Trace, c: Constellation, sigma) -> float:
    """Closed-form Monte Carlo MI of the correlated Gaussian channel."""
    acc = AirAccumulator(c, sigma)
    acc.add_trace(t)
    return acc.mi()


def gmi_closed_form(t: Trace, c: Constellation, sigma) -> float:
    """Closed-form Monte Carlo GMI for the labeling of ``c``."""
    acc = AirAccumulator(c, sigma)
    acc.add_trace(t)
    return acc.gmi()


def _log_density(y: np.ndarray, c: Constellation, sigma) -> np.ndarray:
    """Full Gaussian log-density log f(y | x_j), shape (N, M)."""
    cov = as_covariance(sigma)
    prec = cov.precision()
    diff = y[:, None, :] - c.points[None, :, :]
    quad = np.einsum("njk,kl,njl->nj", diff, prec, diff)
    const = 0.5 * (cov.n_dims * math.log(2 * math.pi) + cov.logdet())
    return -0.5 * quad - const


def _per_point_mean(values, idx, c):
    counts = np.bincount(idx, minlength=c.M)
    _check_coverage(counts, c)
    sums = np.bincount(idx, weights=values, minlength=c.M)
    return float(np.mean(sums / counts))


def mi_generic_mc(t: Trace, c: Constellation, sigma) -> float:
    """Monte Carlo MI from the channel density itself (oracle for the closed form)."""
    idx = point_indices(t.tx, c)
    logf = _log_density(t.rx, c, sigma)
    ratio = logf[np.arange(idx.size), idx] - logsumexp(logf, axis=1)
    return c.m + _per_point_mean(ratio * LOG2E, idx, c)


def gmi_generic_mc(t: Trace, c: Constellation, sigma) -> float:
    """Monte Carlo GMI from the channel density itself (oracle for the closed form)."""
    idx = point_indices(t.tx, c)
    logf = _log_density(t.rx, c, sigma)
    denom = logsumexp(logf, axis=1)
    acc = np.zeros(idx.size)
    for k in range(c.m):
        for bit in (0, 1):
            members = c.bit_sets(k, bit)
            rows = c.labels[idx, k] == bit
            acc[rows] += logsumexp(logf[rows][:, members], axis=1) - denom[rows]
    return c.m + _per_point_mean(acc * LOG2E, idx, c)


def gauss_hermite_mi_gmi(snr_db: float, c: Constellation, nodes: int = 32):
    """MI and GMI of ``c`` over circular 2-D AWGN by Gauss-Hermite quadrature."""
    if c.n_dims != 2:
        raise ValueError("quadrature reference is implemented for 2-D constellations")
    var = c.mean_energy / 10 ** (snr_db / 10) / 2
    x, w = hermgauss(nodes)
    # z = sqrt(2 var) * (u, v) turns the Gaussian expectation into Hermite weights
    u, v = np.meshgrid(x, x, indexing="ij")
    z = math.sqrt(2 * var) * np.stack([u.ravel(), v.ravel()], axis=1)
    weight = np.outer(w, w).ravel() / math.pi
    d = c.points[:, None, :] - c.points[None, :, :]
    mi_loss = 0.0
    gmi_loss = 0.0
    for i in range(c.M):
        # exponent for every node and every j: -(|d_ij + z|^2 - |z|^2) / (2 var)
        dz = d[i][None, :, :] + z[:, None, :]
        expo = -(np.sum(dz**2, axis=-1) - np.sum(z**2, axis=-1)[:, None]) / (2 * var)
        total = logsumexp(expo, axis=1)
        mi_loss += weight @ total
        for k in range(c.m):
            members = c.bit_sets(k, c.labels[i, k])
            gmi_loss += weight @ (total - logsumexp(expo[:, members], axis=1))
    mi = c.m - mi_loss / c.M * LOG2E
    gmi = c.m - gmi_loss / c.M * LOG2E
    return float(mi), float(gmi)


def postfec_sd_terms(data_bits, lam) -> np.ndarray:
    """Per-bit ``log2(1 + exp(-(-1)^c lam))``, shape (N, 2)."""
    data_bits = np.asarray(data_bits, dtype=np.int64).reshape(-1, 2)
    lam = np.asarray(lam, dtype=float).reshape(-1, 2)
    if data_bits.shape != lam.shape:
        raise ValueError(f"{data_bits.size} data bits but {lam.size} LLRs")
    signed = np.where(data_bits == 0, lam, -lam)
    arg = np.clip(-signed, -SD_CLIP, SD_CLIP)
    return np.logaddexp(0.0, arg) * LOG2E


def postfec_mi_sd(data_bits, lam) -> float:
    """Post-FEC soft-decision MI from data-bit LLRs (positive favours 0)."""
    terms = postfec_sd_terms(data_bits, lam)
    return float(np.sum(1.0 - terms.mean(axis=0)))


def binary_entropy(p) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def postfec_mi_hd(ber_1, ber_2) -> float:
    """Post-FEC hard-decision MI of the two data-bit positions."""
    for b in (ber_1, ber_2):
        if not 0.0 <= b <= 0.5:
            raise ValueError(f"BER {b} outside [0, 0.5]")
    return (1 - binary_entropy(ber_1)) + (1 - binary_entropy(ber_2))


def min_ber_bound(air: float, tol: float = 1e-12) -> float:
    """Smallest BER compatible with ``air`` bits per symbol carrying 2 data bits."""
    if not 0.0 <= air <= 2.0:
        raise ValueError(f"AIR {air} outside [0, 2]")
    target = 1.0 - air / 2.0
    lo, hi = 0.0, 0.5
    if target <= 0.0:
        return 0.0
    if target >= 1.0:
        return 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if binary_entropy(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def awgn_capacity(snr_db: float) -> float:
    """``log2(1 + SNR)``."""
    if snr_db == -math.inf:
        return 0.0
    return math.log2(1 + 10 ** (snr_db / 10))


def snr_at_level(snr_db, values, level: float, log: bool = False) -> float:
    """SNR where a monotone curve first crosses ``level``, by linear interpolation.

    With ``log=True`` the interpolation runs on ``log10(values)`` (BER curves).
    Returns NaN when the curve never crosses.
    """
    x = np.asarray(snr_db, dtype=float)
    y = np.asarray(values, dtype=float)
    if log:
        y = np.log10(y)
        level = math.log10(level)
    for i in range(len(x) - 1):
        if y[i] == level:
            return float(x[i])
        if (y[i] - level) * (y[i + 1] - level) < 0:
            return float(x[i] + (level - y[i]) * (x[i + 1] - x[i]) / (y[i + 1] - y[i]))
    if len(x) and y[-1] == level:
        return float(x[-1])
    return float("nan")
