"""Sparsified single-peer gossip SGD with bandwidth-adaptive peer selection."""

from .analysis import (
    RoundRecord,
    SpectralEstimate,
    bandwidth_stats,
    consensus_error,
    d_constants,
    estimate_rho,
    export_csv,
    measure_contraction,
    second_eigenvalue,
    theorem_bound,
)
from .cli import ExperimentConfig, ExperimentResult, run_experiment
from .coordinator import (
    ALGORITHMS,
    Coordinator,
    CostModelInput,
    comm_cost,
    get_new_connected_graph,
)
from .core import (
    AdjacencyMatrix,
    BandwidthMatrix,
    CompressionConfig,
    GossipMatrix,
    Matching,
    SplitMix64,
    TheoryConstants,
    TimestampMatrix,
    splitmix64_array,
    splitmix_stream,
    symmetrize_bandwidth,
)
from .matching import (
    AdaptiveSelector,
    Graph,
    RandomSelector,
    RingSelector,
    generate_gossip_matrix,
    get_over_time_matrix,
    get_unmatch,
    if_connected,
    max_matching,
    randomly_max_match,
)
from .objectives import (
    DataShard,
    ObjectiveSet,
    finite_difference_gradient,
    load_matrix,
    make_logistic,
    make_mlp,
    make_quadratic,
    save_matrix,
)
from .sparsify import (
    MaskStream,
    SparsePayload,
    decode_payload,
    encode_payload,
    extract_payload,
    generate_mask,
    merge_masked,
)
from .transport import SimFabric, TcpFabric, round_time
from .worker import Worker, run_worker_round

__version__ = "0.1.0"
