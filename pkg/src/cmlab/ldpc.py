"""DVB-S2 rate-2/3 LDPC code, sum-product decoding and the 3-lane BICM chain.

The parity-check matrix is built from the standard's address table, shipped
as ``data/dvbs2_r23_n64800.txt`` together with its SHA-256 digest.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp

from .errors import LengthError, TableLoadError
from .modulation import Constellation, bitwise_llrs, build_8psk, map_bits, symbol_log_likelihoods

TABLE_NAME = "dvbs2_r23_n64800.txt"
N_64800 = 64800
K_R23 = 43200
Q_R23 = 60
GROUP = 360
# |tanh| products are kept below 1 so atanh stays finite
TANH_LIMIT = 1.0 - 1e-15


def _data_path(name: str) -> Path:
    return Path(str(resources.files("cmlab") / "data" / name))


def load_address_table(path=None, checksum_path=None) -> list[list[int]]:
    """Read and verify the accumulator address table.

    Raises ``TableLoadError`` if the file is missing, fails its checksum or
    cannot be parsed.
    """
    path = Path(path) if path is not None else _data_path(TABLE_NAME)
    if checksum_path is None:
        checksum_path = path.with_suffix(".sha256")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise TableLoadError(f"cannot read LDPC table {path}: {exc}") from exc
    try:
        expected = Path(checksum_path).read_text().split()[0].lower()
    except (OSError, IndexError) as exc:
        raise TableLoadError(f"cannot read checksum file {checksum_path}: {exc}") from exc
    actual = hashlib.sha256(raw).hexdigest()
    if actual != expected:
        raise TableLoadError(
            f"checksum mismatch for {path.name}: expected {expected}, got {actual}"
        )
    rows = []
    for lineno, line in enumerate(raw.decode("ascii").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([int(tok) for tok in line.split()])
        except ValueError as exc:
            raise TableLoadError(f"{path.name}:{lineno}: {exc}") from exc
    return rows


@dataclass(frozen=True, eq=False)
class LdpcCode:
    """Sparse parity-check structure of an IRA LDPC code.

    Edges are stored check-major: ``edge_var[check_ptr[c]:check_ptr[c+1]]``
    are the variables of check c.  ``var_edges[var_ptr[v]:var_ptr[v+1]]``
    lists the edge ids touching variable v.
    """

    n: int
    k: int
    check_ptr: np.ndarray
    edge_var: np.ndarray
    var_ptr: np.ndarray
    var_edges: np.ndarray
    h_info: sp.csr_matrix

    @property
    def m(self) -> int:
        return self.n - self.k

    @property
    def n_edges(self) -> int:
        return self.edge_var.size

    @property
    def rate(self) -> float:
        return self.k / self.n

    def column_degrees(self) -> np.ndarray:
        return np.diff(self.var_ptr)

    def syndrome(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        s = np.add.reduceat(bits[self.edge_var], self.check_ptr[:-1])
        return (s % 2).astype(np.uint8)


def code_from_table(rows, n: int, q: int) -> LdpcCode:
    """Expand a DVB-S2 style address table into an ``LdpcCode``."""
    m = n - len(rows) * GROUP
    k = n - m
    if m <= 0 or q * GROUP != m:
        raise TableLoadError(f"table with {len(rows)} groups is inconsistent with n={n}, q={q}")
    checks, variables = [], []
    w = np.arange(GROUP)
    for t, addrs in enumerate(rows):
        a = np.asarray(addrs, dtype=np.int64)
        if a.min() < 0 or a.max() >= m:
            raise TableLoadError(f"group {t}: address out of range [0, {m})")
        chk = (a[None, :] + w[:, None] * q) % m
        var = np.broadcast_to((t * GROUP + w)[:, None], chk.shape)
        checks.append(chk.ravel())
        variables.append(var.ravel())
    info_checks = np.concatenate(checks)
    info_vars = np.concatenate(variables)
    h_info = sp.csr_matrix(
        (np.ones(info_checks.size, dtype=np.int64), (info_checks, info_vars)), shape=(m, k)
    )
    # accumulator: check j touches parity j and parity j-1
    par_checks = np.concatenate([np.arange(m), np.arange(1, m)])
    par_vars = k + np.concatenate([np.arange(m), np.arange(m - 1)])
    all_checks = np.concatenate([info_checks, par_checks])
    all_vars = np.concatenate([info_vars, par_vars])

    order = np.lexsort((all_vars, all_checks))
    edge_check = all_checks[order]
    edge_var = all_vars[order].astype(np.int64)
    check_ptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(edge_check, minlength=m), out=check_ptr[1:])
    var_edges = np.argsort(edge_var, kind="stable").astype(np.int64)
    var_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(edge_var, minlength=n), out=var_ptr[1:])
    return LdpcCode(n=n, k=k, check_ptr=check_ptr, edge_var=edge_var,
                    var_ptr=var_ptr, var_edges=var_edges, h_info=h_info)


@lru_cache(maxsize=1)
def build_dvbs2_r23() -> LdpcCode:
    """The DVB-S2 normal-frame rate-2/3 code (n=64800, k=43200)."""
    code = code_from_table(load_address_table(), N_64800, Q_R23)
    if code.k != K_R23:
        raise TableLoadError(f"expected k={K_R23}, table gives k={code.k}")
    return code


def ldpc_encode(info, code: LdpcCode) -> np.ndarray:
    """Systematic IRA encoding: ``[info | accumulated parity]``."""
    info = np.asarray(info, dtype=np.int64).ravel()
    if info.size != code.k:
        raise LengthError(f"expected {code.k} information bits, got {info.size}")
    p = (code.h_info @ info) % 2
    parity = np.cumsum(p) % 2
    return np.concatenate([info, parity]).astype(np.uint8)


@numba.njit(cache=True)
def _bp_kernel(llr, check_ptr, edge_var, max_iter, early_stop, limit):
    n = llr.size
    m = check_ptr.size - 1
    n_edges = edge_var.size
    v2c = np.empty(n_edges)
    c2v = np.zeros(n_edges)
    for e in range(n_edges):
        v2c[e] = llr[edge_var[e]]
    total = llr.copy()
    max_deg = 0
    for c in range(m):
        max_deg = max(max_deg, check_ptr[c + 1] - check_ptr[c])
    th = np.empty(max_deg)
    prefix = np.empty(max_deg)
    iters = 0
    converged = False
    for it in range(max_iter):
        iters = it + 1
        for c in range(m):
            a = check_ptr[c]
            d = check_ptr[c + 1] - a
            run = 1.0
            for i in range(d):
                th[i] = math.tanh(0.5 * v2c[a + i])
                prefix[i] = run
                run *= th[i]
            run = 1.0
            for i in range(d - 1, -1, -1):
                p = prefix[i] * run
                if p > limit:
                    p = limit
                elif p < -limit:
                    p = -limit
                c2v[a + i] = 2.0 * math.atanh(p)
                run *= th[i]
        for v in range(n):
            total[v] = llr[v]
        for e in range(n_edges):
            total[edge_var[e]] += c2v[e]
        for e in range(n_edges):
            v2c[e] = total[edge_var[e]] - c2v[e]
        # zero posteriors carry no decision, so they block convergence
        ok = True
        for v in range(n):
            if total[v] == 0.0:
                ok = False
                break
        if ok:
            for c in range(m):
                par = 0
                for e in range(check_ptr[c], check_ptr[c + 1]):
                    if total[edge_var[e]] < 0.0:
                        par ^= 1
                if par:
                    ok = False
                    break
        converged = ok
        if ok and early_stop:
            break
    return total, iters, converged


@dataclass
class BpResult:
    bits: np.ndarray
    llr: np.ndarray
    converged: bool
    iterations: int


def bp_decode(llrs, code: LdpcCode, max_iter: int = 50, early_stop: bool = True) -> BpResult:
    """Flooding sum-product decoding with the exact tanh check rule.

    Stops as soon as the hard decisions satisfy every check (unless
    ``early_stop`` is False).  ``llr`` of the result is the posterior: channel
    LLR plus all incoming check messages.
    """
    llrs = np.ascontiguousarray(llrs, dtype=float)
    if llrs.size != code.n:
        raise LengthError(f"expected {code.n} LLRs, got {llrs.size}")
    if not np.all(np.isfinite(llrs)):
        raise ValueError("LLRs must be finite")
    total, iters, converged = _bp_kernel(
        llrs, code.check_ptr, code.edge_var, int(max_iter), bool(early_stop), TANH_LIMIT
    )
    return BpResult(bits=(total < 0).astype(np.uint8), llr=total,
                    converged=bool(converged), iterations=int(iters))


# --------------------------------------------------------------------------
# BICM chain
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BitInterleaver:
    """Bit permutation: interleaved stream ``out[i] = serial[perm[i]]``."""

    perm: np.ndarray
    seed: int | None

    @classmethod
    def random(cls, size: int, seed: int) -> "BitInterleaver":
        return cls(np.random.default_rng(seed).permutation(size), seed)

    @classmethod
    def identity(cls, size: int) -> "BitInterleaver":
        return cls(np.arange(size), None)

    @property
    def size(self) -> int:
        return self.perm.size

    def interleave(self, x):
        return np.asarray(x)[self.perm]

    def deinterleave(self, x):
        x = np.asarray(x)
        out = np.empty_like(x)
        out[self.perm] = x
        return out


@lru_cache(maxsize=8)
def build_bit_interleaver(size: int, seed: int) -> BitInterleaver:
    return BitInterleaver.random(size, seed)


def _split_lanes(data: np.ndarray, lanes: int) -> np.ndarray:
    """Round-robin deserialization, 2 bits per lane per clock -> (lanes, k)."""
    return data.reshape(-1, lanes, 2).transpose(1, 0, 2).reshape(lanes, -1)


def _merge_lanes(info: np.ndarray) -> np.ndarray:
    lanes = info.shape[0]
    return info.reshape(lanes, -1, 2).transpose(1, 0, 2).ravel()


def _serialize(codewords: np.ndarray) -> np.ndarray:
    """Parallel-to-serial, 3 bits per lane per clock."""
    lanes = codewords.shape[0]
    return codewords.reshape(lanes, -1, 3).transpose(1, 0, 2).ravel()


def _deserialize(stream: np.ndarray, lanes: int) -> np.ndarray:
    return stream.reshape(-1, lanes, 3).transpose(1, 0, 2).reshape(lanes, -1)


def bicm_coded_bits(data, code: LdpcCode, il: BitInterleaver | None, lanes: int = 3) -> np.ndarray:
    """Interleaved coded bit stream that feeds the mapper."""
    data = np.asarray(data, dtype=np.uint8).ravel()
    if data.size != lanes * code.k:
        raise LengthError(f"expected {lanes * code.k} data bits, got {data.size}")
    info = _split_lanes(data, lanes)
    cws = np.stack([ldpc_encode(row, code) for row in info])
    serial = _serialize(cws)
    return serial if il is None else il.interleave(serial)


def bicm_encode(data, code: LdpcCode, il: BitInterleaver | None,
                c: Constellation | None = None, lanes: int = 3) -> np.ndarray:
    """Encode ``lanes * k`` data bits into ``lanes * n / 3`` BRGC 8PSK symbols.

    ``lanes=1`` with ``il=None`` is the single-codeword mode without bit
    interleaving.
    """
    c = c or build_8psk("brgc")
    return map_bits(bicm_coded_bits(data, code, il, lanes), c)


@dataclass
class BicmDecodeOutput:
    data_bits: np.ndarray
    lam: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray


def bicm_decode_llrs(bit_llrs, code: LdpcCode, il: BitInterleaver | None, lanes: int = 3,
                     max_iter: int = 50, early_stop: bool = True) -> BicmDecodeOutput:
    """Decode from interleaved coded-bit LLRs (one per mapper input bit)."""
    stream = np.asarray(bit_llrs, dtype=float).ravel()
    if stream.size != lanes * code.n:
        raise LengthError(f"expected {lanes * code.n} bit LLRs, got {stream.size}")
    serial = stream if il is None else il.deinterleave(stream)
    per_lane = _deserialize(serial, lanes)
    results = [bp_decode(row, code, max_iter, early_stop) for row in per_lane]
    info_bits = np.stack([r.bits[: code.k] for r in results])
    info_llr = np.stack([r.llr[: code.k] for r in results])
    return BicmDecodeOutput(
        data_bits=_merge_lanes(info_bits),
        lam=_merge_lanes(info_llr).reshape(-1, 2),
        converged=np.array([r.converged for r in results]),
        iterations=np.array([r.iterations for r in results]),
    )


def bicm_decode(y, sigma, code: LdpcCode, il: BitInterleaver | None, max_iter: int = 50,
                c: Constellation | None = None, lanes: int = 3,
                early_stop: bool = True) -> BicmDecodeOutput:
    """Soft demap, de-interleave and decode the received BICM symbols.

    ``lam`` holds the posterior LLRs of the data bits, two per symbol.
    """
    c = c or build_8psk("brgc")
    y = np.asarray(y, dtype=float)
    if y.shape[0] * c.m != lanes * code.n:
        raise LengthError(f"expected {lanes * code.n // c.m} symbols, got {y.shape[0]}")
    llrs = bitwise_llrs(symbol_log_likelihoods(y, c, sigma), c)
    return bicm_decode_llrs(llrs.ravel(), code, il, lanes, max_iter, early_stop)
