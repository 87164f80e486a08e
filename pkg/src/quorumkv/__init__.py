"""Leaderless BFT replicated key-value store with conditional endorsements.

The package splits into a network-agnostic protocol core (model, store,
engine, checkpoint) and a deterministic simulation harness (sim, scenario,
workload, metrics, cli) used to exercise the protocol's safety and
performance properties.
"""

from .checkpoint import (CheckpointPool, CheckpointProposal,
                         SynchronyEstimator, VetoMessage, VetoRound,
                         proposal_id)
from .engine import (ApproveAll, ApproveProbability, DenyKeys,
                     EndorsementPolicy, Node, NodeConfig, NodeServices,
                     RejectAll, RejectIds)
from .metrics import CSV_COLUMNS, MetricsReport, Recorder, aggregate
from .model import (MS, SECOND, US, Endorsement, Operation, OpKind,
                    Precondition, SystemConfig, Transaction, TxStatus,
                    conflicts, delete, filter_endorsement, increment,
                    is_terminal, millis, min_quorum, put, seconds,
                    write_profile)
from .scenario import CrashPlan, Scenario
from .sim import InvariantViolation, Simulation
from .store import KVStore, MalformedSnapshot, StoreError
from .workload import WorkloadConfig, generate_workload

__all__ = [
    "ApproveAll", "ApproveProbability", "CSV_COLUMNS", "CheckpointPool",
    "CheckpointProposal", "CrashPlan", "DenyKeys", "Endorsement",
    "EndorsementPolicy", "InvariantViolation", "KVStore", "MS",
    "MalformedSnapshot", "MetricsReport", "Node", "NodeConfig",
    "NodeServices", "OpKind", "Operation", "Precondition", "Recorder",
    "RejectAll", "RejectIds", "Scenario", "SECOND", "Simulation",
    "StoreError", "SynchronyEstimator", "SystemConfig", "Transaction",
    "TxStatus", "US", "VetoMessage", "VetoRound", "WorkloadConfig",
    "aggregate", "conflicts", "delete", "filter_endorsement",
    "generate_workload", "increment", "is_terminal", "millis", "min_quorum",
    "proposal_id", "put", "seconds", "write_profile",
]
