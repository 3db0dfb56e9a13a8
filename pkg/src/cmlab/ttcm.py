"""Turbo trellis-coded 8PSK (two punctured 8-state RSC encoders, natural mapping).

Positions are 1-based in the description below: odd positions carry the
parity of RSC1, even positions the (de-interleaved) parity of RSC2.  Arrays
are 0-based, so "odd position" means an even array index.

Pair beliefs are length-4 log-probability vectors over the data pair
``u = 2*c1 + c2``.  A symbol label is ``(c1, c2, p)``, i.e. natural index
``2*u + p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np
from scipy.special import logsumexp

from .errors import InterleaverError, LengthError
from .modulation import Constellation, build_8psk, clip_ll, symbol_log_likelihoods

N_STATES = 8
BELIEF_CLIP = 50.0
SPREAD_FACTOR = 0.95


# --------------------------------------------------------------------------
# RSC encoder
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RscState:
    s1: int = 0
    s2: int = 0
    s3: int = 0

    def to_int(self) -> int:
        return 4 * self.s1 + 2 * self.s2 + self.s3

    @classmethod
    def from_int(cls, v: int) -> "RscState":
        return cls((v >> 2) & 1, (v >> 1) & 1, v & 1)


def rsc_step(state: RscState, pair) -> tuple[RscState, int]:
    """Advance the shift register by one data pair ``(b1, b2)``."""
    b1, b2 = int(pair[0]), int(pair[1])
    parity = state.s3
    nxt = RscState(state.s3, state.s1 ^ b2, state.s2 ^ b1)
    return nxt, parity


def _trellis_tables():
    next_state = np.empty((N_STATES, 4), dtype=np.int64)
    parity = np.empty((N_STATES, 4), dtype=np.int64)
    for s in range(N_STATES):
        for u in range(4):
            nxt, p = rsc_step(RscState.from_int(s), (u >> 1, u & 1))
            next_state[s, u] = nxt.to_int()
            parity[s, u] = p
    return next_state, parity


NEXT_STATE, PARITY = _trellis_tables()
LABEL = 2 * np.arange(4)[None, :] + PARITY


@numba.njit(cache=True)
def _rsc_parity(u, next_state, parity):
    out = np.empty(u.size, dtype=np.uint8)
    s = 0
    for n in range(u.size):
        out[n] = parity[s, u[n]]
        s = next_state[s, u[n]]
    return out


def rsc_encode(pairs) -> np.ndarray:
    """Parity stream of the RSC for a sequence of pair values ``u = 2*b1 + b2``."""
    u = np.asarray(pairs, dtype=np.int64)
    return _rsc_parity(u, NEXT_STATE, PARITY)


# --------------------------------------------------------------------------
# Odd/even s-random interleaver
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OddEvenInterleaver:
    """Parity-preserving s-random permutation.

    Interleaving reads ``v[t] = u[pi[t]]``.
    """

    pi: np.ndarray
    spread: int
    seed: int

    @property
    def n(self) -> int:
        return self.pi.size

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.pi)
        inv[self.pi] = np.arange(self.pi.size)
        return inv

    def interleave(self, x):
        return np.asarray(x)[self.pi]

    def deinterleave(self, x):
        x = np.asarray(x)
        out = np.empty_like(x)
        out[self.pi] = x
        return out


def default_spread(n_s: int) -> int:
    return int(SPREAD_FACTOR * math.sqrt(n_s / 2))


@numba.njit(cache=True)
def _fits(pi, n, spread, i, v, skip):
    lo = max(0, i - spread)
    hi = min(n - 1, i + spread)
    for j in range(lo, hi + 1):
        if j != i and j != skip and abs(pi[j] - v) <= spread:
            return False
    return True


@numba.njit(cache=True)
def _s_random(n, spread, seed, max_sweeps, max_trials):
    np.random.seed(seed)
    pools = (np.random.permutation(np.arange(0, n, 2)), np.random.permutation(np.arange(1, n, 2)))
    sizes = np.array([pools[0].size, pools[1].size])
    pi = np.full(n, -4 * n - 4, dtype=np.int64)
    # greedy pass: first fitting candidate among a bounded random window
    for i in range(n):
        p = i % 2
        pool = pools[p]
        sz = sizes[p]
        found = 0
        for k in range(min(sz, 64)):
            cand = pool[k]
            good = True
            for j in range(max(0, i - spread), i):
                if abs(pi[j] - cand) <= spread:
                    good = False
                    break
            if good:
                found = k
                break
        pi[i] = pool[found]
        pool[found] = pool[sz - 1]
        sizes[p] = sz - 1
    # repair pass: swap violators with random same-parity positions
    half = n // 2
    for sweep in range(max_sweeps):
        n_bad = 0
        for i in range(n):
            if _fits(pi, n, spread, i, pi[i], -1):
                continue
            n_bad += 1
            for trial in range(max_trials):
                j = np.random.randint(0, half) * 2 + (i % 2)
                if j == i:
                    continue
                a = pi[i]
                b = pi[j]
                if abs(i - j) <= spread and abs(a - b) <= spread:
                    continue
                if _fits(pi, n, spread, i, b, j) and _fits(pi, n, spread, j, a, i):
                    pi[i] = b
                    pi[j] = a
                    break
        if n_bad == 0:
            return pi, True
    return pi, False


@numba.njit(cache=True)
def _min_spread_violation(pi, spread):
    n = pi.size
    count = 0
    for i in range(n):
        for j in range(i + 1, min(n, i + spread + 1)):
            if abs(pi[i] - pi[j]) <= spread:
                count += 1
    return count


def spread_violations(pi, spread: int) -> int:
    """Number of pairs with ``|i-j| <= S`` and ``|pi(i)-pi(j)| <= S`` (exhaustive scan)."""
    return int(_min_spread_violation(np.asarray(pi, dtype=np.int64), int(spread)))


@lru_cache(maxsize=16)
def build_interleaver(n_s: int, spread: int | None = None, seed: int = 0,
                      max_restarts: int = 8) -> OddEvenInterleaver:
    """Random parity-preserving s-random interleaver, deterministic in ``seed``.

    ``spread`` defaults to ``default_spread(n_s)``.
    """
    if n_s <= 0 or n_s % 2:
        raise ValueError(f"n_s must be a positive even number, got {n_s}")
    limit = int(math.isqrt(n_s // 2))
    if spread is None:
        spread = default_spread(n_s)
    if spread < 0 or spread > limit:
        raise ValueError(f"spread {spread} outside feasible range [0, {limit}]")
    seq = np.random.SeedSequence(seed)
    for attempt, child in enumerate(seq.spawn(max_restarts)):
        numba_seed = int(child.generate_state(1, dtype=np.uint32)[0])
        pi, ok = _s_random(n_s, spread, numba_seed, 60, 2000)
        if ok:
            return OddEvenInterleaver(pi=pi, spread=spread, seed=seed)
    raise InterleaverError(
        f"no s-random interleaver with S={spread} for n_s={n_s} after "
        f"{max_restarts} restarts; use a smaller spread"
    )


# --------------------------------------------------------------------------
# Encoder
# --------------------------------------------------------------------------

def data_to_pairs(data) -> np.ndarray:
    data = np.asarray(data, dtype=np.int64).ravel()
    if data.size % 2:
        raise LengthError(f"data length {data.size} is odd")
    return 2 * data[0::2] + data[1::2]


def ttcm_labels(data, il: OddEvenInterleaver) -> np.ndarray:
    """Natural label value of every transmitted symbol."""
    u = data_to_pairs(data)
    if u.size != il.n:
        raise LengthError(f"expected {2 * il.n} data bits, got {2 * u.size}")
    p1 = rsc_encode(u)
    p2 = il.deinterleave(rsc_encode(il.interleave(u)))
    parity = np.where(np.arange(u.size) % 2 == 0, p1, p2)
    return 2 * u + parity


def ttcm_encode(data, il: OddEvenInterleaver, c: Constellation | None = None) -> np.ndarray:
    """Encode 2*N_s data bits into N_s naturally-mapped 8PSK symbols."""
    c = c or build_8psk("natural")
    labels = ttcm_labels(data, il)
    return c.points[c.label_to_index[labels]]


# --------------------------------------------------------------------------
# Decoder
# --------------------------------------------------------------------------

def normalize_beliefs(b: np.ndarray) -> np.ndarray:
    return b - logsumexp(b, axis=-1, keepdims=True)


def _clip_beliefs(b: np.ndarray) -> np.ndarray:
    b = b - b.max(axis=-1, keepdims=True)
    return normalize_beliefs(np.maximum(b, -BELIEF_CLIP))


@numba.njit(cache=True)
def _extrinsic(post, la, clip):
    """Normalized, clipped ``post - la`` (same result as ``_clip_beliefs``)."""
    n = post.shape[0]
    out = np.empty((n, 4))
    for t in range(n):
        mx = -np.inf
        for u in range(4):
            out[t, u] = post[t, u] - la[t, u]
            mx = max(mx, out[t, u])
        tot = 0.0
        for u in range(4):
            out[t, u] = max(out[t, u] - mx, -clip)
            tot += math.exp(out[t, u])
        lt = math.log(tot)
        for u in range(4):
            out[t, u] -= lt
    return out


def first_iteration_a_priori(ll, mode: str = "marginal") -> np.ndarray:
    """A priori pair beliefs for BCJR1 at the first iteration.

    At even positions the belief of pair u combines the LLs of the two labels
    ``(u, p=0)`` and ``(u, p=1)``; ``mode="marginal"`` sums likelihoods
    (logsumexp), ``mode="sum"`` adds the log-likelihoods.  Odd positions get
    uniform beliefs.
    """
    ll = clip_ll(ll)
    pairs = ll.reshape(ll.shape[0], 4, 2)
    if mode == "marginal":
        metric = logsumexp(pairs, axis=-1)
    elif mode == "sum":
        metric = pairs.sum(axis=-1)
    else:
        raise ValueError(f"unknown first-iteration mode {mode!r}")
    out = np.zeros((ll.shape[0], 4))
    out[1::2] = normalize_beliefs(metric[1::2])
    return normalize_beliefs(out)


@numba.njit(cache=True)
def _bcjr_kernel(ll, la, next_state, label):
    n = ll.shape[0]
    alpha = np.zeros((n + 1, 8))
    alpha[0, 0] = 1.0
    gamma = np.empty((n, 8, 4))
    el = np.empty(8)
    ea = np.empty(4)
    for t in range(n):
        mx = ll[t, 0]
        for i in range(1, 8):
            mx = max(mx, ll[t, i])
        for i in range(8):
            el[i] = math.exp(ll[t, i] - mx)
        ma = la[t, 0]
        for u in range(1, 4):
            ma = max(ma, la[t, u])
        for u in range(4):
            ea[u] = math.exp(la[t, u] - ma)
        total = 0.0
        for s in range(8):
            a = alpha[t, s]
            for u in range(4):
                g = el[label[s, u]] * ea[u]
                gamma[t, s, u] = g
                if a != 0.0:
                    alpha[t + 1, next_state[s, u]] += a * g
        for s in range(8):
            total += alpha[t + 1, s]
        for s in range(8):
            alpha[t + 1, s] /= total
    post = np.empty((n, 4))
    beta = np.full(8, 1.0 / 8.0)
    nb = np.empty(8)
    pu = np.empty(4)
    for t in range(n - 1, -1, -1):
        for u in range(4):
            pu[u] = 0.0
        for s in range(8):
            nb[s] = 0.0
        for s in range(8):
            a = alpha[t, s]
            for u in range(4):
                gb = gamma[t, s, u] * beta[next_state[s, u]]
                nb[s] += gb
                pu[u] += a * gb
        tot_u = pu[0] + pu[1] + pu[2] + pu[3]
        for u in range(4):
            post[t, u] = math.log(max(pu[u] / tot_u, 1e-300))
        tot_b = 0.0
        for s in range(8):
            tot_b += nb[s]
        for s in range(8):
            beta[s] = nb[s] / tot_b
    return post


def bcjr(ll, a_priori) -> np.ndarray:
    """Symbol-wise MAP decoding of the 8-state RSC trellis.

    Parameters
    ----------
    ll : (N, 8) channel log-likelihoods indexed by natural label; all-zero
        rows mark positions this decoder does not observe.
    a_priori : (N, 4) log-probabilities of the data pair.

    Returns
    -------
    (N, 4) normalized posterior log-probabilities of the data pair.  The
    trellis starts in state 0 and is not terminated.
    """
    ll = clip_ll(ll)
    la = np.ascontiguousarray(a_priori, dtype=float)
    if ll.shape[0] != la.shape[0]:
        raise LengthError("channel and a priori sequences differ in length")
    return _bcjr_kernel(np.ascontiguousarray(ll), la, NEXT_STATE, LABEL)


@dataclass
class TtcmDecodeOutput:
    data_bits: np.ndarray
    lam: np.ndarray
    iterations: int


def pair_beliefs_to_llrs(b: np.ndarray) -> np.ndarray:
    """Per-bit LLRs ``log P(c=0)/P(c=1)`` for both bits of each pair."""
    lam = np.empty(b.shape[:-1] + (2,))
    lam[..., 0] = logsumexp(b[..., [0, 1]], axis=-1) - logsumexp(b[..., [2, 3]], axis=-1)
    lam[..., 1] = logsumexp(b[..., [0, 2]], axis=-1) - logsumexp(b[..., [1, 3]], axis=-1)
    return lam


def ttcm_decode_ll(ll, il: OddEvenInterleaver, iterations: int = 10,
                   first_mode: str = "marginal") -> TtcmDecodeOutput:
    """Iterative decoding from symbol LLs (N, 8) indexed by natural label."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    ll = clip_ll(ll)
    n = ll.shape[0]
    if n != il.n:
        raise LengthError(f"expected {il.n} symbols, got {n}")
    odd_pos = (np.arange(n) % 2) == 0
    ll1 = np.where(odd_pos[:, None], ll, 0.0)
    ll2 = il.interleave(np.where(odd_pos[:, None], 0.0, ll))

    la1 = first_iteration_a_priori(ll, first_mode)
    post2 = None
    ll1 = np.ascontiguousarray(ll1)
    ll2 = np.ascontiguousarray(ll2)
    inv = il.inverse
    for _ in range(iterations):
        post1 = _bcjr_kernel(ll1, la1, NEXT_STATE, LABEL)
        la2 = _extrinsic(post1, la1, BELIEF_CLIP)[il.pi]
        post2 = _bcjr_kernel(ll2, la2, NEXT_STATE, LABEL)
        la1 = _extrinsic(post2, la2, BELIEF_CLIP)[inv]
    lam = pair_beliefs_to_llrs(post2[inv])
    bits = (lam < 0).astype(np.uint8).ravel()
    return TtcmDecodeOutput(data_bits=bits, lam=lam, iterations=iterations)


def ttcm_decode(y, sigma, il: OddEvenInterleaver, iterations: int = 10,
                c: Constellation | None = None, first_mode: str = "marginal") -> TtcmDecodeOutput:
    """Demap received symbols and run the two-decoder turbo loop."""
    c = c or build_8psk("natural")
    ll_points = symbol_log_likelihoods(y, c, sigma)
    # reorder columns from point index to natural label value
    ll = np.empty_like(ll_points)
    ll[:, c.label_values] = ll_points
    return ttcm_decode_ll(ll, il, iterations, first_mode)
