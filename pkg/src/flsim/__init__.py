"""Virtual-time simulator for FedAvg and compensated Overlap-FedAvg."""
from .aggregation import (ClientUpdate, ServerState, approximation_gap, compensate,
                          fedavg_aggregate, nag_update, phi, restore_gradients,
                          sample_clients, weighted_gradient)
from .config import ExperimentConfig, load_config
from .metrics import (MetricsLog, RoundMetrics, compare, emit_csv, rounds_to_reach,
                      utilization)
from .models import Batch, ModelSpec
from .simulator import NetworkModel, adaptive_interval, run, run_fedavg, run_overlap

__version__ = "0.1.0"
