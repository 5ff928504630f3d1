"""Seed-synchronised Bernoulli masks, masked merge, and the sparse wire codec.

Both endpoints of an exchange regenerate the same mask from the shared
round seed, so only the selected values travel on the wire, never indices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import wire
from .core import ParameterVector, splitmix64_array
from .errors import ProtocolError, TruncatedFrameError, ValidationError

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class MaskStream:
    """Deterministic per-round inclusion bits over model indices 0..n_dims-1."""

    seed: int
    c: int
    n_dims: int
    included: np.ndarray

    @cached_property
    def indices(self) -> np.ndarray:
        return np.nonzero(self.included)[0]

    @property
    def count(self) -> int:
        return int(self.included.sum())


def generate_mask(seed: int, c: int, n_dims: int) -> MaskStream:
    """Index j is included iff the j-th SplitMix64 output is below 2**64 // c.

    For c = 1 every index is included.  Identical (seed, c, n_dims) give
    identical masks on every worker and every implementation.
    """
    if not isinstance(c, int) or c < 1:
        raise ValidationError(f"compression ratio c must be an integer >= 1, got {c!r}")
    if n_dims < 1:
        raise ValidationError(f"n_dims must be >= 1, got {n_dims}")
    if c == 1:
        included = np.ones(n_dims, dtype=bool)
    else:
        threshold = np.uint64((1 << 64) // c)
        included = splitmix64_array(seed, n_dims) < threshold
    included.setflags(write=False)
    return MaskStream(seed & _MASK64, c, n_dims, included)


@dataclass(frozen=True)
class SparsePayload:
    """The masked values of one model, in ascending mask-index order."""

    round: int
    sender: int
    values: np.ndarray

    @property
    def count(self) -> int:
        return int(self.values.size)


def extract_payload(x: ParameterVector, mask: MaskStream, round: int, sender: int) -> SparsePayload:
    if x.shape != (mask.n_dims,):
        raise ValidationError(f"model length {x.shape} does not match mask n_dims {mask.n_dims}")
    values = np.array(x[mask.indices], dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValidationError("masked values contain non-finite entries")
    return SparsePayload(round, sender, values)


def merge_masked(x: ParameterVector, mask: MaskStream, peer: SparsePayload) -> ParameterVector:
    """Average own and peer values on the masked coordinates, keep the rest.

    A count mismatch signals seed desynchronisation between the peers.
    """
    if x.shape != (mask.n_dims,):
        raise ValidationError(f"model length {x.shape} does not match mask n_dims {mask.n_dims}")
    if peer.count != mask.count:
        raise ProtocolError(
            f"peer payload carries {peer.count} values but mask selects {mask.count}; "
            "mask seeds are out of sync"
        )
    if not np.all(np.isfinite(peer.values)):
        raise ValidationError("peer payload contains non-finite values")
    out = x.copy()
    idx = mask.indices
    out[idx] = (x[idx] + peer.values) * 0.5
    return out


def encode_payload(p: SparsePayload) -> bytes:
    values = np.ascontiguousarray(p.values, dtype="<f8")
    body = struct.pack("<QII", p.round, p.sender, values.size) + values.tobytes()
    return wire.pack_frame(wire.MSG_MODEL_VALUES, body)


def decode_payload(data: bytes) -> SparsePayload:
    msg_type, body = wire.parse_frame(data)
    if msg_type != wire.MSG_MODEL_VALUES:
        raise ProtocolError(f"expected MODEL_VALUES frame, got msg_type {msg_type}")
    return decode_payload_body(body)


def decode_payload_body(body: bytes) -> SparsePayload:
    head = struct.calcsize("<QII")
    if len(body) < head:
        raise TruncatedFrameError("MODEL_VALUES body shorter than its fixed header")
    rnd, sender, count = struct.unpack_from("<QII", body)
    if len(body) != head + 8 * count:
        raise TruncatedFrameError("MODEL_VALUES count does not match body size")
    values = np.frombuffer(body, dtype="<f8", count=count, offset=head).astype(np.float64)
    return SparsePayload(rnd, sender, values)


def payload_frame_bytes(count: int) -> int:
    """Wire size of a MODEL_VALUES frame carrying `count` values."""
    return wire.HEADER_LEN + struct.calcsize("<QII") + 8 * count + 4
