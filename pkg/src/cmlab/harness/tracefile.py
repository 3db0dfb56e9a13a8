"""Binary trace files.

Layout (all little-endian)::

    header   56 bytes  see HEADER below, CRC-32 of bytes [0, 52) at the end
    payload  count * n_s * n_dims * 2 float64
             per trace, per symbol: tx dims then rx dims

Data bits go to a sidecar ``<path>.bits``: magic ``CMB1``, trace count, bits
per trace, CRC-32 of the packed bits, then ``numpy.packbits`` output.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..channel import Trace
from ..errors import TraceFormatError

MAGIC = b"CMT1"
BITS_MAGIC = b"CMB1"
VERSION = 1
# magic, version, n_dims, n_s, count, scheme, pad, nominal snr, seed,
# interleaver seed, spread, payload crc, header crc
HEADER = struct.Struct("<4sHHIIB3xdQQIII")
BITS_HEADER = struct.Struct("<4sIQI")
SCHEME_TAGS = {"raw": 0, "ttcm": 1, "ldpc": 2}
TAG_SCHEMES = {v: k for k, v in SCHEME_TAGS.items()}


def payload_size(count: int, n_s: int, n_dims: int) -> int:
    return count * n_s * n_dims * 2 * 8


def save_traces(traces, path, *, interleaver_seed: int = 0, spread: int = 0):
    """Write traces that share shape, scheme, nominal SNR and seed."""
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to save")
    first = traces[0]
    for t in traces[1:]:
        if t.tx.shape != first.tx.shape or t.scheme != first.scheme:
            raise ValueError("all traces in a file must share shape and scheme")
    if first.scheme not in SCHEME_TAGS:
        raise ValueError(f"unknown scheme {first.scheme!r}")
    body = np.stack([np.concatenate([t.tx, t.rx], axis=1) for t in traces])
    payload = body.astype("<f8").tobytes()
    head = HEADER.pack(
        MAGIC, VERSION, first.n_dims, first.n_s, len(traces), SCHEME_TAGS[first.scheme],
        first.nominal_snr_db, first.seed, interleaver_seed, spread,
        zlib.crc32(payload), 0,
    )[:-4]
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(head + struct.pack("<I", zlib.crc32(head)))
        fh.write(payload)
    bits_path = Path(str(path) + ".bits")
    if all(t.data_bits is not None for t in traces):
        bits = np.stack([t.data_bits.astype(np.uint8) for t in traces])
        packed = np.packbits(bits, axis=None).tobytes()
        with open(bits_path, "wb") as fh:
            fh.write(BITS_HEADER.pack(BITS_MAGIC, bits.shape[0], bits.shape[1], zlib.crc32(packed)))
            fh.write(packed)
    elif bits_path.exists():
        bits_path.unlink()


def read_header(raw: bytes) -> dict:
    if len(raw) < HEADER.size:
        if raw[: len(MAGIC)] != MAGIC[: len(raw)]:
            raise TraceFormatError("bad magic", 0)
        raise TraceFormatError(f"truncated header: {len(raw)} of {HEADER.size} bytes", len(raw))
    fields = HEADER.unpack_from(raw)
    magic, version, n_dims, n_s, count, tag, snr, seed, il_seed, spread, pcrc, hcrc = fields
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise TraceFormatError(f"unsupported version {version}", 4)
    if zlib.crc32(raw[: HEADER.size - 4]) != hcrc:
        raise TraceFormatError("header checksum mismatch", HEADER.size - 4)
    if tag not in TAG_SCHEMES:
        raise TraceFormatError(f"unknown scheme tag {tag}", 16)
    if n_dims == 0 or n_s == 0:
        raise TraceFormatError("zero-sized trace dimensions", 6)
    return dict(
        n_dims=n_dims, n_s=n_s, count=count, scheme=TAG_SCHEMES[tag], nominal_snr_db=snr,
        seed=seed, interleaver_seed=il_seed, spread=spread, payload_crc=pcrc,
    )


def _load_bits(path: Path, count: int, n_bits_expected=None):
    if not path.exists():
        return None
    raw = path.read_bytes()
    if len(raw) < BITS_HEADER.size:
        raise TraceFormatError(f"truncated bit sidecar {path.name}", len(raw))
    magic, n, per, crc = BITS_HEADER.unpack_from(raw)
    if magic != BITS_MAGIC:
        raise TraceFormatError(f"bad bit sidecar magic {magic!r}", 0)
    if n != count:
        raise TraceFormatError(f"bit sidecar holds {n} traces, expected {count}", 4)
    packed = raw[BITS_HEADER.size:]
    need = (n * per + 7) // 8
    if len(packed) != need:
        raise TraceFormatError(
            f"bit sidecar payload is {len(packed)} bytes, expected {need}",
            BITS_HEADER.size + min(len(packed), need),
        )
    if zlib.crc32(packed) != crc:
        raise TraceFormatError("bit sidecar checksum mismatch", BITS_HEADER.size)
    bits = np.unpackbits(np.frombuffer(packed, dtype=np.uint8), count=n * per)
    return bits.reshape(n, per)


def load_traces(path) -> tuple[list[Trace], dict]:
    """Read a trace file and its optional bit sidecar; returns (traces, header)."""
    path = Path(path)
    raw = path.read_bytes()
    head = read_header(raw)
    n_s, n_dims, count = head["n_s"], head["n_dims"], head["count"]
    expected = payload_size(count, n_s, n_dims)
    payload = raw[HEADER.size:]
    if len(payload) != expected:
        raise TraceFormatError(
            f"payload is {len(payload)} bytes, header implies {expected}",
            HEADER.size + min(len(payload), expected),
        )
    if zlib.crc32(payload) != head["payload_crc"]:
        raise TraceFormatError("payload checksum mismatch", HEADER.size)
    body = np.frombuffer(payload, dtype="<f8").reshape(count, n_s, 2 * n_dims)
    bits = _load_bits(Path(str(path) + ".bits"), count)
    traces = []
    for i in range(count):
        traces.append(Trace(
            tx=body[i, :, :n_dims].astype(float),
            rx=body[i, :, n_dims:].astype(float),
            data_bits=None if bits is None else bits[i],
            scheme=head["scheme"],
            seed=head["seed"],
            nominal_snr_db=head["nominal_snr_db"],
            meta={"index": i},
        ))
    return traces, head
