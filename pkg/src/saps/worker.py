"""Per-worker round loop: local SGD, masked exchange, merge, acknowledgment.

A round is split into two phases so that transports can interleave the two
peers' sends however they need:

    payload = worker.begin_round(msg)      # SGD step, mask, extract, encode
    ack     = worker.finish_round(peer_payload_bytes)   # decode, merge, ack

`run_worker_round` composes the phases through an exchange callable for
in-process use.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import sparsify, wire
from .core import ParameterVector
from .errors import NumericalError, ProtocolError, ValidationError


class Worker:
    def __init__(
        self,
        rank: int,
        x0: ParameterVector,
        objective,
        gamma: float,
        c: int,
        sample_seed: int = 0,
    ) -> None:
        if gamma < 0:
            raise ValidationError(f"learning rate must be >= 0, got {gamma}")
        self.rank = rank
        self.x = np.array(x0, dtype=np.float64)
        self.n_dims = self.x.size
        self.objective = objective
        self.gamma = gamma
        self.c = c
        self.round = 0
        self.sample_rng = np.random.default_rng(sample_seed)
        self._pending: tuple[sparsify.MaskStream, float, int | None] | None = None
        # link-speed measurements queued for the coordinator; drained by the
        # fabric just before each ROUND_END so they land inside the barrier
        self.pending_reports: list[list[tuple[int, float]]] = []

    def queue_bandwidth_report(self, entries: list[tuple[int, float]]) -> None:
        self.pending_reports.append(list(entries))

    def drain_report_frames(self) -> list[bytes]:
        frames = [wire.encode_bandwidth_report(r) for r in self.pending_reports]
        self.pending_reports.clear()
        return frames

    def local_sgd_step(self) -> float:
        """x <- x - gamma * g on a fresh mini-batch; returns the batch loss."""
        loss, grad = self.objective.loss_and_grad(self.x, self.sample_rng)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericalError(
                f"non-finite loss or gradient at worker {self.rank}, round {self.round}"
            )
        self.x = self.x - self.gamma * grad
        if not np.all(np.isfinite(self.x)):
            raise NumericalError(f"non-finite model at worker {self.rank}, round {self.round}")
        return float(loss)

    def begin_round(self, msg: wire.RoundStart) -> bytes | None:
        """Run the local step and produce the outgoing payload frame (None on self-loop)."""
        if msg.round != self.round:
            raise ProtocolError(
                f"worker {self.rank} expected round {self.round}, coordinator sent {msg.round}"
            )
        loss = self.local_sgd_step()
        mask = sparsify.generate_mask(msg.seed, self.c, self.n_dims)
        self._pending = (mask, loss, msg.peer_id)
        if msg.peer_id is None:
            return None
        payload = sparsify.extract_payload(self.x, mask, msg.round, self.rank)
        return sparsify.encode_payload(payload)

    def finish_round(self, peer_frame: bytes | None) -> wire.RoundEnd:
        """Merge the peer's payload (if any), advance the round, emit the ack."""
        if self._pending is None:
            raise ProtocolError(f"worker {self.rank}: finish_round without begin_round")
        mask, loss, peer_id = self._pending
        self._pending = None
        if peer_id is not None:
            if peer_frame is None:
                raise ProtocolError(f"worker {self.rank}: expected a payload from peer {peer_id}")
            payload = sparsify.decode_payload(peer_frame)
            if payload.round != self.round:
                raise ProtocolError(
                    f"worker {self.rank}: peer payload is for round {payload.round}, "
                    f"current round is {self.round}"
                )
            if payload.sender != peer_id:
                raise ProtocolError(
                    f"worker {self.rank}: payload sender {payload.sender} is not the "
                    f"assigned peer {peer_id}"
                )
            self.x = sparsify.merge_masked(self.x, mask, payload)
        ack = wire.RoundEnd(self.round, self.rank, loss)
        self.round += 1
        return ack

    def model_frame(self) -> bytes:
        return wire.encode_model_full(self.x)


def run_worker_round(
    worker: Worker,
    msg: wire.RoundStart,
    exchange: Callable[[bytes], bytes] | None = None,
) -> wire.RoundEnd:
    """One full round; `exchange` sends our payload and returns the peer's."""
    out = worker.begin_round(msg)
    peer_frame = None
    if out is not None:
        if exchange is None:
            raise ValidationError("round has a peer but no exchange function was given")
        peer_frame = exchange(out)
    return worker.finish_round(peer_frame)
