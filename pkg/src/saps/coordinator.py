"""Central round state machine and the analytic communication-cost model.

The coordinator distributes round numbers, mask seeds and peer assignments,
enforces the ROUND_END barrier, and collects one full model at the end of
training.  It never receives model parameters during training: its per-round
traffic is O(1) control frames per worker.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from . import analysis, sparsify, transport, wire
from .core import (
    AdjacencyMatrix,
    BandwidthMatrix,
    CompressionConfig,
    GossipMatrix,
    Matching,
    SplitMix64,
    TimestampMatrix,
)
from .errors import ProtocolError, ValidationError
from .matching import AdaptiveSelector, RandomSelector, RingSelector

ALGORITHMS = (
    "ps-psgd",
    "allreduce-psgd",
    "topk-psgd",
    "fedavg",
    "s-fedavg",
    "d-psgd",
    "dcd-psgd",
    "saps-psgd",
)

_NEEDS_C = {"topk-psgd", "s-fedavg", "dcd-psgd", "saps-psgd"}
_NEEDS_NEIGHBORS = {"d-psgd", "dcd-psgd"}


@dataclass(frozen=True)
class CostModelInput:
    algo: str
    n_dims: int  # model size N
    n_workers: int
    t_rounds: int
    c: int | None = None
    n_p: int | None = None  # neighbour count for the two neighbourhood algorithms

    def __post_init__(self) -> None:
        if self.algo not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algo!r}; one of {ALGORITHMS}")
        if min(self.n_dims, self.n_workers, self.t_rounds) < 1:
            raise ValidationError("N, n and T must all be >= 1")
        if self.algo in _NEEDS_C and (self.c is None or self.c < 1):
            raise ValidationError(f"{self.algo} requires a compression ratio c >= 1")
        if self.algo in _NEEDS_NEIGHBORS and (self.n_p is None or self.n_p <= 1):
            raise ValidationError(f"{self.algo} requires a neighbour count n_p > 1")


def comm_cost(inp: CostModelInput) -> tuple[float, float]:
    """Closed-form (server, per-worker) traffic in parameter counts."""
    n_dims, n, t = float(inp.n_dims), float(inp.n_workers), float(inp.t_rounds)
    match inp.algo:
        case "ps-psgd" | "fedavg":
            return 2 * n_dims * n * t, 2 * n_dims * t
        case "allreduce-psgd":
            return 0.0, 2 * n_dims * t
        case "topk-psgd":
            return 0.0, 2 * n * (n_dims / inp.c) * t
        case "s-fedavg":
            per = n_dims + 2 * n_dims / inp.c
            return per * n * t, per * t
        case "d-psgd":
            return n_dims, 4 * inp.n_p * n_dims * t
        case "dcd-psgd":
            return n_dims, 4 * inp.n_p * (n_dims / inp.c) * t
        case "saps-psgd":
            return n_dims, 2 * (n_dims / inp.c) * t
    raise AssertionError("unreachable")


def get_new_connected_graph(b: BandwidthMatrix, b_thres: float) -> AdjacencyMatrix:
    """Threshold filter: keep pairs with bandwidth >= b_thres (and > 0)."""
    edges = (b.speeds >= b_thres) & (b.speeds > 0)
    np.fill_diagonal(edges, False)
    return AdjacencyMatrix(edges)


@dataclass(frozen=True)
class RoundPlan:
    t: int
    seed: int
    gossip: GossipMatrix
    matching: Matching
    mask_count: int
    frame_bytes: int
    min_bw: float
    mean_bw: float
    seconds: float


@dataclass
class BarrierState:
    t: int
    acked: set[int] = field(default_factory=set)
    losses: dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RoundLogEntry:
    t: int
    seed: int
    matching: Matching
    losses: tuple[float, ...]  # by worker rank


class Coordinator:
    """Round state machine over n workers.

    The master seed feeds two streams: per-round mask seeds and the matching
    randomisation, so a whole run is reproducible from one integer.
    """

    def __init__(
        self,
        b: BandwidthMatrix,
        b_thres: float,
        t_thres: int,
        master_seed: int,
        c: int,
        n_dims: int,
        peer_selection: str = "adaptive",
    ) -> None:
        if b.n < 2:
            raise ValidationError(f"need at least 2 workers, got {b.n}")
        self.n = b.n
        self.b = b
        self.b_thres = b_thres
        self.b_star = get_new_connected_graph(b, b_thres)
        self.t_thres = t_thres
        self.master_seed = master_seed
        self.compression = CompressionConfig(c)
        self.n_dims = n_dims

        roots = SplitMix64(master_seed)
        self._seed_stream = SplitMix64(roots.next_u64())
        match_rng = random.Random(roots.next_u64())
        if peer_selection == "adaptive":
            self.selector = AdaptiveSelector(b, self.b_star, t_thres, match_rng)
        elif peer_selection == "random":
            self.selector = RandomSelector(b, match_rng)
        elif peer_selection == "ring":
            self.selector = RingSelector(b.n)
        else:
            raise ValidationError(f"unknown peer-selection mode {peer_selection!r}")

        self.t = 0
        self.records: list[analysis.RoundRecord] = []
        self.round_log: list[RoundLogEntry] = []
        # latest per-direction speed reports; B is their min-symmetrization
        self._raw_speeds = b.speeds.copy()
        self.cum_time = 0.0
        self.values_per_worker = np.zeros(self.n, dtype=np.int64)
        self.model_bytes_received = 0
        self.model_values_received = 0
        self._wtw_sum = np.zeros((self.n, self.n))

    @property
    def r(self) -> TimestampMatrix | None:
        return getattr(self.selector, "r", None)

    def plan_round(self) -> RoundPlan:
        seed = self._seed_stream.next_u64()
        gossip, matching = self.selector.next_round()
        mask_count = sparsify.generate_mask(seed, self.compression.c, self.n_dims).count
        frame_bytes = sparsify.payload_frame_bytes(mask_count)
        speeds = [self.b.speeds[i, j] for i, j in matching.pairs]
        self._wtw_sum += gossip.weights.T @ gossip.weights
        return RoundPlan(
            t=self.t,
            seed=seed,
            gossip=gossip,
            matching=matching,
            mask_count=mask_count,
            frame_bytes=frame_bytes,
            min_bw=min(speeds) if speeds else 0.0,
            mean_bw=float(np.mean(speeds)) if speeds else 0.0,
            seconds=transport.round_time(matching, frame_bytes, self.b),
        )

    def note_round_end(self, barrier: BarrierState, ack: wire.RoundEnd) -> None:
        if ack.round != barrier.t:
            raise ProtocolError(
                f"worker {ack.worker_id} acknowledged round {ack.round}, "
                f"coordinator is at round {barrier.t}"
            )
        if ack.worker_id in barrier.acked:
            raise ProtocolError(f"duplicate ROUND_END from worker {ack.worker_id}")
        if not 0 <= ack.worker_id < self.n:
            raise ProtocolError(f"ROUND_END from unknown worker {ack.worker_id}")
        barrier.acked.add(ack.worker_id)
        barrier.losses[ack.worker_id] = ack.local_loss

    def handle_bandwidth_report(self, report: wire.BandwidthReport) -> None:
        """Fold a worker's measured link speeds into B (slow-direction rule).

        The threshold graph B* stays fixed; updated speeds steer bridging,
        fallback matching and the timing model from the next round on.
        """
        if report.worker_id >= self.n:
            raise ProtocolError(f"bandwidth report from unknown worker {report.worker_id}")
        for peer, bps in report.entries:
            if not 0 <= peer < self.n or peer == report.worker_id:
                raise ProtocolError(f"bandwidth report names invalid peer {peer}")
            if not np.isfinite(bps) or bps < 0:
                raise ProtocolError("bandwidth report carries an invalid speed")
            self._raw_speeds[report.worker_id, peer] = bps
        speeds = np.minimum(self._raw_speeds, self._raw_speeds.T)
        np.fill_diagonal(speeds, 0.0)
        self.b = BandwidthMatrix(speeds)
        if hasattr(self.selector, "b"):
            self.selector.b = self.b

    def run_round(self, fabric) -> analysis.RoundRecord:
        """One full synchronous round over the given fabric."""
        plan = self.plan_round()
        peer_of = {i: j for i, j in plan.matching.pairs} | {
            j: i for i, j in plan.matching.pairs
        }
        for wid in range(self.n):
            msg = wire.RoundStart(plan.t, plan.seed, peer_of.get(wid), 0)
            fabric.send_to_worker(wid, wire.encode_round_start(msg))

        barrier = BarrierState(plan.t)
        while len(barrier.acked) < self.n:
            wid, msg_type, body = fabric.recv_from_workers()
            if msg_type == wire.MSG_ROUND_END:
                self.note_round_end(barrier, wire.decode_round_end(body))
            elif msg_type == wire.MSG_BANDWIDTH_REPORT:
                self.handle_bandwidth_report(wire.decode_bandwidth_report(body, wid))
            else:
                raise ProtocolError(f"unexpected msg_type {msg_type} during round barrier")

        self.round_log.append(
            RoundLogEntry(
                plan.t, plan.seed, plan.matching,
                tuple(barrier.losses[w] for w in range(self.n)),
            )
        )
        matched = {v for pair in plan.matching.pairs for v in pair}
        self.values_per_worker[list(matched)] += 2 * plan.mask_count
        self.cum_time += plan.seconds
        mean_loss = float(np.mean([barrier.losses[w] for w in range(self.n)]))
        bytes_per_worker = 2.0 * plan.frame_bytes * len(matched) / self.n
        record = analysis.RoundRecord(
            round=plan.t,
            pairs=tuple(sorted(plan.matching.pairs)),
            bytes_per_worker=bytes_per_worker,
            min_bw=plan.min_bw,
            mean_bw=plan.mean_bw,
            consensus_err=analysis.consensus_error(fabric.snapshot_models()),
            mean_loss=mean_loss,
            cum_time=self.cum_time,
        )
        self.records.append(record)
        self.t += 1
        return record

    def collect_final_model(self, fabric) -> np.ndarray:
        """Fetch worker 0's dense model; the coordinator's only model traffic."""
        frame = fabric.request_model(0)
        msg_type, body = wire.parse_frame(frame)
        if msg_type != wire.MSG_MODEL_FULL:
            raise ProtocolError(f"expected MODEL_FULL, got msg_type {msg_type}")
        model = wire.decode_model_full(body)
        if model.values.size != self.n_dims:
            raise ProtocolError(
                f"final model has {model.values.size} values, expected {self.n_dims}"
            )
        self.model_bytes_received += len(frame)
        self.model_values_received += model.values.size
        return model.values

    def mean_wtw(self) -> np.ndarray:
        if self.t == 0:
            raise ValidationError("no rounds have run")
        return self._wtw_sum / self.t
