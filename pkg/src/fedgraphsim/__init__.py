"""Semi-asynchronous federated graph learning: library and simulator."""

from .config import ConfigError, DatasetSpec, ExperimentConfig, Perturbation, parse_config
from .experiments import SummaryRow, aggregate_seeds, run_experiment, trips_to_target
from .gcn import ModelParams, evaluate, forward, init_params, loss_and_grads, train_epoch
from .graphs import (
    Graph,
    GraphFormatError,
    NodeMasks,
    SbmConfig,
    SparseAdjacency,
    generate_sbm,
    load_graph,
    normalized_adjacency,
    save_graph,
    split_masks,
)
from .kernels import (
    FglHyper,
    KnowledgeBaseEntry,
    LscValue,
    aggregate_models,
    blend_local,
    cluster_set,
    compute_lsc,
    compute_sfm,
    cosine_similarity,
    label_propagation,
    staleness_weights,
)
from .partition import (
    ClientData,
    CommunityAssignment,
    balanced_partition,
    extract_subgraphs,
    louvain_partition,
    sparsify_edges,
    sparsify_labels,
)
from .protocol import (
    ClientState,
    DownloadMessage,
    ServerState,
    Strategy,
    UploadMessage,
    baseline_step,
    client_trip,
    kb_update,
    server_step,
)
from .sim import Event, LatencyProfile, MetricsLog, assign_latencies, run_simulation

__version__ = "0.1.0"
