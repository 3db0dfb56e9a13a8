"""8PSK constellations, bit mapping and soft/hard demapping.

Points are indexed counter-clockwise from angle 0.  Labels are stored as bit
triples ``(b1, b2, b3)`` with ``b1`` the most significant bit, so the integer
value of a label is ``4*b1 + 2*b2 + b3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .channel import as_covariance
from .errors import LengthError

LL_CLIP = 300.0
TIE_TOL = 1e-12
LABELINGS = ("natural", "brgc")


@dataclass(frozen=True)
class Constellation:
    """M unit-energy points in N_D real dimensions and their bit labels.

    Attributes
    ----------
    points : (M, N_D) float array
    labels : (M, m) uint8 array, ``labels[i]`` is the bit triple of point i
    labeling : name of the labeling rule
    """

    points: np.ndarray
    labels: np.ndarray
    labeling: str
    label_to_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        values = self.labels @ (1 << np.arange(self.m - 1, -1, -1))
        lut = np.empty(self.M, dtype=np.int64)
        lut[values] = np.arange(self.M)
        object.__setattr__(self, "label_to_index", lut)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.labels.shape[1]

    @property
    def n_dims(self) -> int:
        return self.points.shape[1]

    @property
    def mean_energy(self) -> float:
        return float(np.mean(np.sum(self.points**2, axis=1)))

    @property
    def label_values(self) -> np.ndarray:
        """Integer value of each point's label."""
        return self.labels @ (1 << np.arange(self.m - 1, -1, -1))

    def bit_sets(self, k: int, bit: int) -> np.ndarray:
        """Indices of points whose k-th label bit (0-based) equals ``bit``."""
        return np.flatnonzero(self.labels[:, k] == bit)


def build_8psk(labeling: str = "natural") -> Constellation:
    """Unit-energy 8PSK with natural or binary-reflected Gray labeling."""
    if labeling not in LABELINGS:
        raise ValueError(f"unknown labeling {labeling!r}, expected one of {LABELINGS}")
    k = np.arange(8)
    angles = 2 * np.pi * k / 8
    points = np.column_stack([np.cos(angles), np.sin(angles)])
    values = k if labeling == "natural" else k ^ (k >> 1)
    labels = ((values[:, None] >> np.array([2, 1, 0])) & 1).astype(np.uint8)
    return Constellation(points=points, labels=labels, labeling=labeling)


def bits_to_indices(bits, c: Constellation) -> np.ndarray:
    """Point index for each consecutive group of ``c.m`` bits."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % c.m:
        raise LengthError(f"bit count {bits.size} is not a multiple of {c.m}")
    groups = bits.reshape(-1, c.m)
    values = groups @ (1 << np.arange(c.m - 1, -1, -1))
    return c.label_to_index[values]


def map_bits(bits, c: Constellation) -> np.ndarray:
    """Map consecutive bit triples to constellation points, shape (N, N_D)."""
    return c.points[bits_to_indices(bits, c)]


def symbol_log_likelihoods(y, c: Constellation, sigma) -> np.ndarray:
    """Log-likelihood of every constellation point given received vector(s) ``y``.

    Entry i is ``-0.5 (y - x_i)^T S^-1 (y - x_i)``; the Gaussian normalising
    constant is dropped.  ``y`` may be a single vector or an (N, N_D) batch.
    """
    precision = as_covariance(sigma).precision()
    y = np.asarray(y, dtype=float)
    diff = y[..., None, :] - c.points
    quad = np.einsum("...i,ij,...j->...", diff, precision, diff)
    return -0.5 * quad


def clip_ll(ll: np.ndarray) -> np.ndarray:
    """Shift each LL vector so its maximum is 0 and clip at -LL_CLIP."""
    ll = np.asarray(ll, dtype=float)
    shifted = ll - ll.max(axis=-1, keepdims=True)
    return np.maximum(shifted, -LL_CLIP)


def bitwise_llrs(ll, c: Constellation) -> np.ndarray:
    """Marginalize symbol LLs to per-bit LLRs (positive favours bit 0)."""
    ll = clip_ll(ll)
    out = np.empty(ll.shape[:-1] + (c.m,))
    for k in range(c.m):
        zero = logsumexp(ll[..., c.bit_sets(k, 0)], axis=-1)
        one = logsumexp(ll[..., c.bit_sets(k, 1)], axis=-1)
        out[..., k] = zero - one
    return out


def hard_demap(y, c: Constellation):
    """Nearest-point decision.

    Returns ``(index, bits)``; ties go to the lowest index.
    """
    y = np.asarray(y, dtype=float)
    d2 = np.sum((y[..., None, :] - c.points) ** 2, axis=-1)
    # distances equal up to rounding count as ties
    best = d2.min(axis=-1, keepdims=True)
    idx = np.argmax(d2 <= best + TIE_TOL * (1.0 + best), axis=-1)
    return idx, c.labels[idx]
