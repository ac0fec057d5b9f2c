"""Deterministic simulator for blockchain-coordinated federated learning."""

from __future__ import annotations

from .config import Scenario, ScenarioError, TrainingConfig, load_scenario
from .ledger import Ledger
from .orchestration import (
    BcflSimulation,
    RunReport,
    run_adversarial_did_experiment,
    run_cross_device,
    run_cross_silo,
)
from .store import CID, BlobStore

__version__ = "0.1.0"

__all__ = [
    "BcflSimulation",
    "BlobStore",
    "CID",
    "Ledger",
    "RunReport",
    "Scenario",
    "ScenarioError",
    "TrainingConfig",
    "load_scenario",
    "run_adversarial_did_experiment",
    "run_cross_device",
    "run_cross_silo",
]
