import socket
import threading

import numpy as np
import pytest

from saps import wire
from saps.cli import ExperimentConfig, run_experiment
from saps.core import Matching, symmetrize_bandwidth
from saps.errors import ConfigurationError
from saps.transport import TcpFabric, read_frame, round_time, send_frame


class TestRoundTime:
    def test_single_pair(self):
        b = symmetrize_bandwidth(np.array([[0.0, 2.0], [2.0, 0.0]]))
        assert round_time(Matching.from_pairs(2, [(0, 1)]), 10, b) == 5.0

    def test_bottleneck_rule(self):
        raw = np.zeros((4, 4))
        raw[0, 1] = raw[1, 0] = 4.0
        raw[2, 3] = raw[3, 2] = 2.0
        b = symmetrize_bandwidth(raw)
        assert round_time(Matching.from_pairs(4, [(0, 1), (2, 3)]), 8, b) == 4.0

    def test_empty_matching_costs_nothing(self):
        b = symmetrize_bandwidth(np.zeros((3, 3)))
        assert round_time(Matching.from_pairs(3, []), 100, b) == 0.0

    def test_zero_bandwidth_pair_rejected(self):
        b = symmetrize_bandwidth(np.zeros((2, 2)))
        with pytest.raises(ConfigurationError):
            round_time(Matching.from_pairs(2, [(0, 1)]), 10, b)

    def test_literal_example_800_bytes_over_100_bps(self):
        b = symmetrize_bandwidth(np.array([[0.0, 100.0], [100.0, 0.0]]))
        assert round_time(Matching.from_pairs(2, [(0, 1)]), 800, b) == 8.0

    def test_sim_delivery_over_zero_bandwidth_pair_rejected(self):
        from saps import wire
        from saps.objectives import QuadraticObjective
        from saps.transport import SimFabric
        from saps.worker import Worker

        b = symmetrize_bandwidth(np.zeros((2, 2)))
        workers = [
            Worker(i, np.zeros(4), QuadraticObjective(np.zeros(4)), 0.0, 1, i)
            for i in range(2)
        ]
        fabric = SimFabric(workers, b)
        fabric.send_to_worker(0, wire.encode_round_start(wire.RoundStart(0, 1, 1, 0)))
        fabric.send_to_worker(1, wire.encode_round_start(wire.RoundStart(0, 1, 0, 0)))
        with pytest.raises(ConfigurationError, match="zero bandwidth"):
            fabric.recv_from_workers()


class TestTcpFraming:
    def test_frame_round_trips_over_loopback(self):
        frames = [
            wire.encode_round_start(wire.RoundStart(3, 12345, 2, 0)),
            wire.encode_round_end(wire.RoundEnd(3, 1, 0.5)),
            wire.encode_model_full(np.arange(5.0)),
        ]
        server = socket.create_server(("127.0.0.1", 0))
        received = []

        def serve():
            conn, _ = server.accept()
            while True:
                frame = read_frame(conn)
                if frame is None:
                    break
                received.append(frame)
            conn.close()

        thread = threading.Thread(target=serve, daemon=True)
        thread.start()
        client = socket.create_connection(server.getsockname(), timeout=5)
        for f in frames:
            send_frame(client, f)
        client.close()
        thread.join(timeout=5)
        server.close()
        assert received == frames


def _config(transport, seed=31, n=4, t=20):
    return ExperimentConfig(
        n=n, T=t, c=2, gamma=0.05, N=12, master_seed=seed, transport=transport
    )


class TestBackendEquivalence:
    def test_sim_and_tcp_agree_bit_for_bit(self):
        sim = run_experiment(_config("sim"))
        tcp = run_experiment(_config("tcp"))
        assert np.array_equal(sim.final_model, tcp.final_model)
        for ws, wt in zip(sim.workers, tcp.workers):
            assert np.array_equal(ws.x, wt.x)

    def test_tcp_smoke_eight_workers(self):
        res = run_experiment(_config("tcp", n=8, t=10))
        assert len(res.records) == 10

    def test_cumulative_time_is_sum_of_round_times(self):
        res = run_experiment(_config("sim"))
        deltas = np.diff([0.0] + [r.cum_time for r in res.records])
        assert (deltas >= 0).all()
        assert res.records[-1].cum_time == pytest.approx(deltas.sum())


class TestTcpFabricErrors:
    def test_worker_failure_surfaces(self):
        from saps.objectives import QuadraticObjective
        from saps.worker import Worker

        n, n_dims = 2, 4
        workers = [
            Worker(i, np.zeros(n_dims), QuadraticObjective(np.zeros(n_dims)), 0.1, 1, i)
            for i in range(n)
        ]
        b = symmetrize_bandwidth(np.array([[0.0, 5.0], [5.0, 0.0]]))
        fabric = TcpFabric(workers, b, timeout=5.0)
        try:
            # a ROUND_START for the wrong round makes the worker loop fail
            bad = wire.encode_round_start(wire.RoundStart(7, 1, None, 0))
            fabric.send_to_worker(0, bad)
            with pytest.raises(Exception):
                fabric.recv_from_workers()
        finally:
            try:
                fabric.shutdown()
            except Exception:
                pass
