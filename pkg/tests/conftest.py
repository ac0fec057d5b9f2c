from __future__ import annotations

from dataclasses import dataclass

import pytest

from bcflsim.encoding import Address
from bcflsim.ledger import Ledger
from bcflsim.store import CID


def cid_of(tag: str) -> str:
    return CID.of(tag.encode()).text


@dataclass
class TaskEnv:
    ledger: Ledger
    owner: Address
    evaluator: Address
    aggregator: Address
    trainers: list[Address]
    outsider: Address
    token: Address
    task: Address

    def call(self, sender, op, *args, check=True):
        return self.ledger.call(sender, self.task, op, *args, check=check)

    def view(self, op, *args):
        return self.ledger.view(self.task, op, *args)

    def run_round(self, r: int, last: bool = False) -> None:
        for i, t in enumerate(self.view("get_current_trainers", r)):
            self.call(t, "add_local_model_update", r, cid_of(f"r{r}-{t}"))
        for c in self.view("updates_in_round", r):
            self.call(self.evaluator, "save_score", r, c, 5000)
        self.call(self.evaluator, "set_evaluation_completed", r)
        self.call(self.aggregator, "save_global_model", r, cid_of(f"global-{r}"))
        if not last:
            self.call(self.aggregator, "set_current_trainers", r + 1, list(self.trainers))
        self.call(self.owner, "set_tokens_per_round", r, 100)
        self.call(self.owner, "advance_round")


def make_task_env(total_rounds: int = 3, n_trainers: int = 3, capacity: int = 1,
                  start: bool = True) -> TaskEnv:
    ledger = Ledger()
    owner, evaluator, aggregator, outsider = (ledger.create_account(s) for s in (1, 2, 3, 99))
    trainers = [ledger.create_account(100 + i) for i in range(n_trainers)]
    for a in [owner, evaluator, aggregator, outsider, *trainers]:
        ledger.fund(a, 10**15)
    token = ledger.deploy_contract(owner, "token", "BCFL", "BCFL")
    task = ledger.deploy_contract(owner, "cross_device", evaluator, aggregator, total_rounds, 600,
                                  token, cid_of("config"), capacity)
    env = TaskEnv(ledger, owner, evaluator, aggregator, trainers, outsider, token, task)
    if start:
        env.call(owner, "set_genesis", cid_of("genesis"))
        env.call(owner, "set_current_trainers", 0, list(trainers))
        env.call(owner, "open_training")
    return env


@pytest.fixture
def task_env() -> TaskEnv:
    return make_task_env()


def small_scenario(n_trainers: int = 4, rounds: int = 3, kind: str = "cross_device", seed: int = 0,
                   trainers: list[dict] | None = None, data: dict | None = None, **config):
    from bcflsim.config import scenario_from_dict

    raw = {
        "name": "small",
        "kind": kind,
        "config": {"total_rounds": rounds, "local_epochs": 1, "learning_rate": 0.1, "num_trainers": n_trainers,
                   "seed": seed, "round_token_budget": 100, **config},
        "data": {"num_classes": 4, "dim": 6, "train_per_class": 40, "test_per_class": 20, "alpha": 0.5,
                 "min_part_size": 5, **(data or {})},
        "trainers": trainers if trainers is not None else
        [{"seed": 100 + i, "authenticate": i % 2 == 0} for i in range(n_trainers)],
    }
    return scenario_from_dict(raw)


# -- acceptance summary -----------------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
