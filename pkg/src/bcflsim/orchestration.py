"""Stakeholder actors and the two-phase workflow driver.

Phase one (job creation, recruitment) runs once; phase two (training,
evaluation, selection and aggregation, token distribution) repeats for every
round.  All contract transactions in a round are issued in roster order, so a
run is a pure function of its :class:`~bcflsim.config.Scenario`.

Per-round global metrics describe the global model *distributed* at the start
of the round (round 1 therefore reports the genesis model); the model produced
by the last aggregation is reported separately as ``final_global``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

from . import learning, scoring
from .config import Scenario, TrainerSpec
from .contracts import Phase
from .encoding import Address, encode
from .identity import (
    DidDocument,
    KeyPair,
    Whitelist,
    create_did,
    issue_vc,
    whitelist_enroll,
)
from .ledger import GasSchedule, Ledger, Receipt
from .learning import Dataset, EvalResult, ModelParams
from .store import BlobStore

log = logging.getLogger(__name__)

INITIAL_FUNDS = 10**18
VC_LIFETIME = 10**9

# account seeds for the fixed roles; trainers use TRAINER_SEED_BASE + index
JOB_CREATOR_SEED = 1
EVALUATOR_SEED = 2
AGGREGATOR_SEED = 3
SERVER_KEY_SEED = 4
TRAINER_SEED_BASE = 10_000

# logical seconds consumed by each stage
TRAINING_SECONDS = 300
EVALUATION_SECONDS = 60
AGGREGATION_SECONDS = 60


def derive_seed(*parts: Any) -> int:
    return int.from_bytes(hashlib.sha256(encode(list(parts))).digest()[:8], "little")


def bonused_score(raw: int, bonus_fraction: float, authenticated: bool) -> int:
    """floor(raw * (1 + bonus)) for authenticated trainers, ``raw`` otherwise."""
    if not authenticated:
        return raw
    return math.floor(raw * (1 + Fraction(str(bonus_fraction))))


def allocate_tokens(budget: int, scores: Sequence[tuple[Address, int]]) -> dict[Address, int]:
    """Split ``budget`` proportionally to ``scores`` in whole tokens.

    Each trainer gets floor(budget * score / total); the remainder goes to the
    highest score (ties: lowest address).  With all scores zero the budget is
    split equally and the remainder handed out one unit at a time by
    ascending address.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    if not scores:
        return {}
    total = sum(s for _, s in scores)
    if total == 0:
        base, rem = divmod(budget, len(scores))
        pay = {a: base for a, _ in scores}
        for a in sorted(pay)[:rem]:
            pay[a] += 1
        return pay
    pay = {a: budget * s // total for a, s in scores}
    rem = budget - sum(pay.values())
    best = min(scores, key=lambda t: (-t[1], t[0]))[0]
    pay[best] += rem
    return pay


def select_next_roster(scores: Sequence[tuple[Address, int]], method: str, top_k: int,
                       current: Sequence[Address]) -> list[Address]:
    if method == "all":
        return list(current)
    if method == "scoring_order":
        ranked = sorted(scores, key=lambda t: (-t[1], t[0]))
        return [a for a, _ in ranked[:top_k]]
    raise ValueError(f"unknown selection method {method!r}")


def aggregation_weights(scores: Sequence[int]) -> list[float]:
    if sum(scores) <= 0:
        return [1.0] * len(scores)
    return [float(s) for s in scores]


@dataclass
class Trainer:
    index: int
    spec: TrainerSpec
    address: Address
    data: Dataset
    did: DidDocument | None = None
    keys: KeyPair | None = None

    @property
    def malicious(self) -> bool:
        return self.spec.label_flipped


@dataclass
class RoundRecord:
    round: int
    roster: list[str]
    global_eval: EvalResult
    local_eval: dict[str, EvalResult] = field(default_factory=dict)
    local_cids: dict[str, str] = field(default_factory=dict)
    raw_scores: dict[str, int] = field(default_factory=dict)
    scores: dict[str, int] = field(default_factory=dict)
    global_cid: str = ""
    next_roster: list[str] = field(default_factory=list)
    payments: dict[str, int] = field(default_factory=dict)
    tokens_paid: int = 0
    gas_used: int = 0

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "roster": self.roster,
            "global": self.global_eval.to_dict(),
            "local": {a: r.to_dict() for a, r in self.local_eval.items()},
            "local_cids": self.local_cids,
            "raw_scores": self.raw_scores,
            "scores": self.scores,
            "global_cid": self.global_cid,
            "next_roster": self.next_roster,
            "payments": self.payments,
            "tokens_paid": self.tokens_paid,
            "gas_used": self.gas_used,
        }


@dataclass
class RunReport:
    kind: str
    scenario: dict
    seed: int
    rounds: list[RoundRecord]
    final_global: EvalResult
    final_model_cid: str
    token_balances: dict[str, int]
    phase_history: list[str]
    whitelist: list[dict]
    gas: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "scenario": self.scenario,
            "seed": self.seed,
            "rounds": [r.to_dict() for r in self.rounds],
            "final_global": self.final_global.to_dict(),
            "final_model_cid": self.final_model_cid,
            "token_balances": self.token_balances,
            "phase_history": self.phase_history,
            "whitelist": self.whitelist,
            "gas": self.gas,
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def metrics_rows(self) -> list[dict]:
        return [
            {
                "round": r.round,
                "global_loss": r.global_eval.loss,
                "global_accuracy": r.global_eval.accuracy,
                "n_selected": len(r.roster),
                "tokens_paid": r.tokens_paid,
                "gas_used": r.gas_used,
            }
            for r in self.rounds
        ]

    def to_csv(self) -> str:
        cols = ["round", "global_loss", "global_accuracy", "n_selected", "tokens_paid", "gas_used"]
        lines = [",".join(cols)]
        for row in self.metrics_rows():
            lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols))
        return "\n".join(lines) + "\n"

    @property
    def final_loss(self) -> float:
        return self.final_global.loss


class TaskRun:
    """One BCFL task contract plus the actors that drive it through its rounds."""

    def __init__(self, sim: BcflSimulation, address: Address, evaluator: Address,
                 trainers: list[Trainer], test_set: Dataset, name: str = "task"):
        self.sim = sim
        self.address = address
        self.evaluator = evaluator
        self.trainers = trainers
        self.test_set = test_set
        self.name = name
        self.phase_history: list[str] = []
        self.records: list[RoundRecord] = []
        self._observe()

    @property
    def ledger(self) -> Ledger:
        return self.sim.ledger

    def view(self, op: str, *args: Any) -> Any:
        return self.ledger.view(self.address, op, *args)

    def tx(self, sender: Address, op: str, *args: Any) -> Receipt:
        receipt = self.ledger.call(sender, self.address, op, *args)
        self._observe()
        return receipt

    def _observe(self) -> None:
        phase = self.view("training_phase")
        if not self.phase_history or self.phase_history[-1] != phase:
            self.phase_history.append(phase)

    def phase(self) -> Phase:
        return Phase(self.view("training_phase"))

    def load_model(self, cid: str) -> ModelParams:
        return learning.deserialize_model(self.sim.store.get(cid))

    # -- stage 3 -------------------------------------------------------------

    def stage_training(self, r: int) -> list[str]:
        cfg = self.sim.config
        if self.phase() is not Phase.TRAINING:
            raise RuntimeError(f"round {r}: expected Training, got {self.phase().value}")
        global_model = self.load_model(self.view("get_global_model", r))
        roster = [t for t in self.trainers if self.view("check_valid_trainer", t.address, r)]
        order = {a: i for i, a in enumerate(self.view("get_current_trainers", r))}
        roster.sort(key=lambda t: order[t.address])

        def work(t: Trainer) -> ModelParams:
            seed = derive_seed("train", cfg.seed, t.spec.seed, r)
            return learning.train_local(global_model, t.data, cfg.local_epochs, cfg.learning_rate, seed)

        if self.sim.workers > 1:
            with ThreadPoolExecutor(self.sim.workers) as pool:
                models = list(pool.map(work, roster))
        else:
            models = [work(t) for t in roster]

        record = self.records[-1]
        cids = []
        for t, model in zip(roster, models):
            cid = self.sim.store.put(learning.serialize_model(model)).text
            self.tx(t.address, "add_local_model_update", r, cid)
            record.local_eval[str(t.address)] = learning.evaluate(model, t.data)
            record.local_cids[str(t.address)] = cid
            cids.append(cid)
        self.ledger.advance_time(TRAINING_SECONDS)
        return cids

    # -- stage 4 -------------------------------------------------------------

    def raw_scores(self, models: list[ModelParams], r: int) -> list[int]:
        cfg = self.sim.config
        method = cfg.evaluation_method
        if method == "accuracy":
            return scoring.score_accuracy(models, self.test_set)
        if len(models) < 2:
            return scoring.score_accuracy(models, self.test_set)
        if method == "leave_one_out":
            contrib = scoring.score_leave_one_out(models, self.test_set)
        elif len(models) <= scoring.MAX_EXACT_PLAYERS:
            contrib = scoring.score_shapley(models, self.test_set, "exact")
        else:
            contrib = scoring.score_shapley(models, self.test_set, "monte_carlo",
                                            cfg.shapley_samples, derive_seed("shapley", cfg.seed, r))
        return [scoring.to_basis_points(c) for c in contrib]

    def stage_evaluation(self, r: int, whitelist: Whitelist) -> dict[Address, tuple[int, int]]:
        cfg = self.sim.config
        updates = self.view("get_local_updates", r)
        models = [self.load_model(cid) for _, cid in updates]
        raw = self.raw_scores(models, r)
        record = self.records[-1]
        out = {}
        for (trainer, cid), raw_score in zip(updates, raw):
            score = bonused_score(raw_score, cfg.did_bonus_fraction, trainer in whitelist)
            self.tx(self.evaluator, "save_score", r, cid, score)
            record.raw_scores[str(trainer)] = raw_score
            record.scores[str(trainer)] = score
            out[trainer] = (raw_score, score)
        self.tx(self.evaluator, "set_evaluation_completed", r)
        self.ledger.advance_time(EVALUATION_SECONDS)
        return out

    # -- stage 5 -------------------------------------------------------------

    def stage_select_aggregate(self, r: int) -> tuple[str, list[Address]]:
        cfg = self.sim.config
        aggregator = self.sim.aggregator
        updates = self.view("get_local_updates", r)
        scores = [self.view("get_model_score", r, cid) for _, cid in updates]
        models = [self.load_model(cid) for _, cid in updates]
        global_model = learning.fedavg(models, aggregation_weights(scores))
        cid = self.sim.store.put(learning.serialize_model(global_model)).text
        self.tx(aggregator, "save_global_model", r, cid)

        next_roster: list[Address] = []
        if r + 1 < cfg.total_rounds:
            pairs = [(trainer, s) for (trainer, _), s in zip(updates, scores)]
            next_roster = select_next_roster(pairs, cfg.selection_method, cfg.top_k,
                                             self.view("get_current_trainers", r))
            self.tx(aggregator, "set_current_trainers", r + 1, next_roster)
        record = self.records[-1]
        record.global_cid = cid
        record.next_roster = [str(a) for a in next_roster]
        self.ledger.advance_time(AGGREGATION_SECONDS)
        return cid, next_roster

    # -- stage 6 -------------------------------------------------------------

    def stage_token_distribution(self, r: int) -> dict[Address, int]:
        cfg = self.sim.config
        creator = self.sim.job_creator
        updates = self.view("get_local_updates", r)
        pairs = [(trainer, self.view("get_model_score", r, cid)) for trainer, cid in updates]
        payments = allocate_tokens(cfg.round_token_budget, pairs)
        for trainer, _ in pairs:
            amount = payments[trainer]
            if amount:
                self.ledger.call(creator, self.sim.token, "transfer", trainer, amount)
        paid = sum(payments.values())
        self.tx(creator, "set_tokens_per_round", r, paid)
        self.tx(creator, "advance_round")
        record = self.records[-1]
        record.payments = {str(a): v for a, v in payments.items()}
        record.tokens_paid = paid
        return payments

    # -- round loop ----------------------------------------------------------

    def run_rounds(self, whitelist: Whitelist) -> None:
        cfg = self.sim.config
        for r in range(cfg.total_rounds):
            first_receipt = len(self.ledger.receipts)
            start_model = self.load_model(self.view("get_global_model", r))
            roster = [str(a) for a in self.view("get_current_trainers", r)]
            self.records.append(RoundRecord(r + 1, roster, learning.evaluate(start_model, self.test_set)))
            self.stage_training(r)
            self.stage_evaluation(r, whitelist)
            self.stage_select_aggregate(r)
            self.stage_token_distribution(r)
            self.records[-1].gas_used = sum(x.gas_used for x in self.ledger.receipts[first_receipt:])
            rec = self.records[-1]
            log.info("%s round %d: loss=%.4f acc=%.4f selected=%d tokens=%d gas=%d", self.name, rec.round,
                     rec.global_eval.loss, rec.global_eval.accuracy, len(rec.roster), rec.tokens_paid,
                     rec.gas_used)

    def final_model(self) -> tuple[str, ModelParams]:
        cid = self.view("get_global_model", self.sim.config.total_rounds)
        return cid, self.load_model(cid)

    def state(self) -> dict:
        """Contract fields for inspection."""
        cfg = self.sim.config
        rounds = range(cfg.total_rounds)
        return {
            "address": str(self.address),
            "current_round": self.view("current_round"),
            "phase": self.view("training_phase"),
            "evaluator": str(self.view("get_evaluator")),
            "rosters": {str(r): [str(a) for a in self.view("get_current_trainers", r)]
                        for r in rounds if _has_roster(self, r)},
            "updates": {str(r): [[str(a), c] for a, c in self.view("get_local_updates", r)] for r in rounds},
            "scores": {str(r): {c: self.view("get_model_score", r, c) for c in self.view("updates_in_round", r)}
                       for r in rounds if self.view("evaluation_completed", r)},
            "global_models": [self.view("get_global_model", k) for k in range(self.view("current_round") + 1)],
            "tokens_per_round": {str(r): self.view("tokens_per_round", r) for r in rounds},
            "total_tokens": self.view("total_tokens"),
        }


def _has_roster(task: TaskRun, r: int) -> bool:
    try:
        task.view("get_current_trainers", r)
    except Exception:
        return False
    return True


class BcflSimulation:
    """Ledger, store, identity server and actors for one scenario."""

    def __init__(self, scenario: Scenario, workers: int = 1):
        scenario.validate()
        self.scenario = scenario
        self.config = scenario.config
        self.workers = workers
        self.ledger = Ledger(GasSchedule.preset(scenario.gas_preset))
        self.store = BlobStore()
        self.server_keys = KeyPair.from_seed(derive_seed("server", SERVER_KEY_SEED))
        self.job_creator = self._account(JOB_CREATOR_SEED)
        self.evaluator = self._account(EVALUATOR_SEED)
        self.aggregator = self._account(AGGREGATOR_SEED)
        self.whitelist = Whitelist(task_id=scenario.name)
        self.trainers: list[Trainer] = []
        self.train_pool, self.test_set, self.parts = self._make_data()
        self.token: Address | None = None
        self.did_registry: Address | None = None
        self.genesis_cid: str | None = None
        self.tasks: list[TaskRun] = []

    def _account(self, seed: int) -> Address:
        address = self.ledger.create_account(seed)
        self.ledger.fund(address, INITIAL_FUNDS)
        return address

    def _make_data(self) -> tuple[Dataset, Dataset, list[Dataset]]:
        d = self.scenario.data
        seed = derive_seed("data", self.config.seed)
        full = learning.make_synthetic(d.num_classes, d.dim, d.train_per_class + d.test_per_class,
                                       seed, separation=d.separation)
        train, test = learning.holdout_split(full, d.test_per_class, seed)
        n = len(self.scenario.trainers)
        if d.shared:
            parts = [train] * n
        else:
            parts = learning.partition_noniid(train, n, d.alpha, seed, min_size=d.min_part_size)
        return train, test, parts

    # -- stage 1 -------------------------------------------------------------

    def _config_cid(self) -> str:
        text = json.dumps(self.scenario.to_dict(), sort_keys=True, separators=(",", ":"))
        return self.store.put(text.encode()).text

    def stage_job_creation(self, evaluator: Address | None = None, capacity: int | None = None,
                           ) -> tuple[dict[str, Address], str]:
        """Deploy token, DID registry and the task contract; publish the genesis model."""
        cfg = self.config
        d = self.scenario.data
        creator = self.job_creator
        if self.token is None:
            self.token = self.ledger.deploy_contract(creator, "token", "BCFL Token", "BCFL")
            self.did_registry = self.ledger.deploy_contract(creator, "did_registry")
        if self.genesis_cid is None:
            genesis = ModelParams.zeros(d.num_classes, d.dim)
            self.genesis_cid = self.store.put(learning.serialize_model(genesis)).text
        task = self.ledger.deploy_contract(
            creator, "cross_device", evaluator or self.evaluator, self.aggregator, cfg.total_rounds,
            cfg.round_duration_seconds, self.token, self._config_cid(),
            cfg.num_trainers if capacity is None else capacity)
        self.ledger.call(creator, task, "set_genesis", self.genesis_cid)
        addresses = {"cross_device": task, "token": self.token, "did_registry": self.did_registry}
        return addresses, self.genesis_cid

    def mint_budget(self, rounds: int) -> None:
        amount = rounds * self.config.round_token_budget
        if amount:
            self.ledger.call(self.job_creator, self.token, "mint", self.job_creator, amount)

    # -- stage 2 -------------------------------------------------------------

    def create_trainers(self) -> list[Trainer]:
        for i, spec in enumerate(self.scenario.trainers):
            address = self._account(TRAINER_SEED_BASE + i)
            data = self.parts[i]
            if spec.label_flipped:
                data = learning.label_flip(data, spec.permutation)
            self.trainers.append(Trainer(i, spec, address, data))
        return self.trainers

    def authenticate(self, trainer: Trainer) -> bool:
        """DID creation, on-chain registration, VC issuance and whitelist enrollment."""
        doc, keys = create_did(derive_seed("did", trainer.spec.seed, trainer.index), trainer.address)
        self.ledger.call(trainer.address, self.did_registry, "register", doc.did, doc.controller, doc.public_key)
        now = self.ledger.now
        vc = issue_vc(self.server_keys, doc,
                      {"role": "trainer", "address": str(trainer.address), "expires_at": now + VC_LIFETIME}, now)
        trainer.did, trainer.keys = doc, keys
        return whitelist_enroll(self.whitelist, trainer.address, vc.to_token(), self.server_keys.public_key, now)

    def stage_recruitment(self, task: Address) -> Whitelist:
        if not self.trainers:
            self.create_trainers()
            for t in self.trainers:
                if t.spec.authenticate:
                    self.authenticate(t)
        roster = [t.address for t in self.trainers]
        self.ledger.call(self.job_creator, task, "set_current_trainers", 0, roster)
        self.ledger.call(self.job_creator, task, "open_training")
        return self.whitelist

    # -- reports -------------------------------------------------------------

    def token_balances(self) -> dict[str, int]:
        holders = [self.job_creator] + [t.address for t in self.trainers]
        return {str(a): self.ledger.view(self.token, "balance_of", a) for a in holders}

    def gas_summary(self) -> dict:
        return {
            "preset": self.scenario.gas_preset,
            "unit_price": self.ledger.schedule.unit_price,
            "total_gas": self.ledger.total_gas_used(),
            "total_fees": self.ledger.fees_collected,
            "deployments": self.ledger.gas_report().to_dict(),
        }

    def run(self) -> RunReport:
        if self.scenario.kind == "cross_silo":
            return self._run_cross_silo()
        return self._run_cross_device()

    def _run_cross_device(self) -> RunReport:
        cfg = self.config
        addresses, _ = self.stage_job_creation()
        # shares self.trainers, which recruitment fills in
        task = TaskRun(self, addresses["cross_device"], self.evaluator, self.trainers, self.test_set,
                       "cross_device")
        self.tasks.append(task)
        self.mint_budget(cfg.total_rounds)
        self.stage_recruitment(task.address)
        task._observe()
        task.run_rounds(self.whitelist)
        final_cid, final_model = task.final_model()
        return RunReport(
            kind="cross_device",
            scenario=self.scenario.to_dict(),
            seed=cfg.seed,
            rounds=task.records,
            final_global=learning.evaluate(final_model, self.test_set),
            final_model_cid=final_cid,
            token_balances=self.token_balances(),
            phase_history=task.phase_history,
            whitelist=self.whitelist.to_list(),
            gas=self.gas_summary(),
            extra={"contracts": {k: str(v) for k, v in addresses.items()}},
        )

    def _run_cross_silo(self) -> RunReport:
        """Participants take turns as evaluator of one auxiliary task each."""
        cfg = self.config
        creator = self.job_creator
        self.stage_job_creation_silo()
        participants = self.trainers
        p = len(participants)
        aux_reports = []
        for j, evaluator in enumerate(participants):
            others = [t for t in participants if t is not evaluator]
            addresses, _ = self.stage_job_creation(evaluator=evaluator.address, capacity=p - 1)
            task_addr = addresses["cross_device"]
            self.ledger.call(creator, self.silo, "register_auxiliary", j, task_addr, evaluator.address)
            task = TaskRun(self, task_addr, evaluator.address, others, evaluator.data, f"auxiliary-{j}")
            self.tasks.append(task)
            self.ledger.call(creator, task_addr, "set_current_trainers", 0, [t.address for t in others])
            task.tx(creator, "open_training")
            task.run_rounds(self.whitelist)
            aux_reports.append(task)

        # main model per round: aux models weighted by the summed round scores
        rounds: list[RoundRecord] = []
        main_model = None
        weights: list[int] = []
        for r in range(cfg.total_rounds + 1):
            models = [t.load_model(t.view("get_global_model", r)) for t in aux_reports]
            if r == 0:
                weights = [1] * p
            else:
                weights = [sum(t.records[r - 1].scores.values()) for t in aux_reports]
            main_model = learning.fedavg(models, aggregation_weights(weights))
            if r < cfg.total_rounds:
                recs = [t.records[r] for t in aux_reports]
                rounds.append(RoundRecord(
                    round=r + 1,
                    roster=sorted({a for rec in recs for a in rec.roster}),
                    global_eval=learning.evaluate(main_model, self.test_set),
                    scores={f"aux{j}:{a}": s for j, rec in enumerate(recs) for a, s in rec.scores.items()},
                    raw_scores={f"aux{j}:{a}": s for j, rec in enumerate(recs) for a, s in rec.raw_scores.items()},
                    payments={f"aux{j}:{a}": s for j, rec in enumerate(recs) for a, s in rec.payments.items()},
                    global_cid=self.store.put(learning.serialize_model(main_model)).text,
                    tokens_paid=sum(rec.tokens_paid for rec in recs),
                    gas_used=sum(rec.gas_used for rec in recs),
                ))
        main_cid = self.store.put(learning.serialize_model(main_model)).text
        self.ledger.call(self.aggregator, self.silo, "save_main_model", main_cid, list(weights))
        aux_out = []
        for j, task in enumerate(aux_reports):
            cid, model = task.final_model()
            aux_out.append({
                "index": j,
                "task": str(task.address),
                "evaluator": str(task.evaluator),
                "final_model_cid": cid,
                "final_global": learning.evaluate(model, self.test_set).to_dict(),
                "main_weight": weights[j],
                "phase_history": task.phase_history,
                "rounds": [rec.to_dict() for rec in task.records],
            })
        return RunReport(
            kind="cross_silo",
            scenario=self.scenario.to_dict(),
            seed=cfg.seed,
            rounds=rounds,
            final_global=learning.evaluate(main_model, self.test_set),
            final_model_cid=main_cid,
            token_balances=self.token_balances(),
            phase_history=aux_reports[0].phase_history,
            whitelist=self.whitelist.to_list(),
            gas=self.gas_summary(),
            extra={"auxiliary": aux_out, "contracts": {"cross_silo": str(self.silo)}},
        )

    def stage_job_creation_silo(self) -> Address:
        cfg = self.config
        creator = self.job_creator
        self.token = self.ledger.deploy_contract(creator, "token", "BCFL Token", "BCFL")
        self.did_registry = self.ledger.deploy_contract(creator, "did_registry")
        self.create_trainers()
        for t in self.trainers:
            if t.spec.authenticate:
                self.authenticate(t)
        self.silo = self.ledger.deploy_contract(creator, "cross_silo", self.aggregator,
                                                [t.address for t in self.trainers])
        self.mint_budget(cfg.total_rounds * len(self.trainers))
        return self.silo

    def snapshot(self) -> dict:
        """Serializable ledger/contract state for later inspection."""
        return {
            "gas_schedule": vars(self.ledger.schedule),
            "deployments": [
                {"kind": d.kind, "address": str(d.address), "gas_used": d.gas_used, "fee": d.fee}
                for d in self.ledger.deployments
            ],
            "tasks": {t.name: t.state() for t in self.tasks},
            "whitelist": self.whitelist.to_list(),
            "token_balances": self.token_balances(),
            "total_gas": self.ledger.total_gas_used(),
        }


# -- public entry points --------------------------------------------------------


def run_cross_device(scenario: Scenario, workers: int = 1) -> RunReport:
    if scenario.kind == "cross_silo":
        raise ValueError("use run_cross_silo for cross-silo scenarios")
    return BcflSimulation(scenario, workers).run()


def run_cross_silo(scenario: Scenario, workers: int = 1) -> RunReport:
    if scenario.kind != "cross_silo":
        raise ValueError("scenario kind must be cross_silo")
    return BcflSimulation(scenario, workers).run()


def adversarial_variants(scenario: Scenario) -> tuple[Scenario, Scenario]:
    with_selection = scenario.with_config(selection_method="scoring_order", did_bonus_fraction=0.10)
    baseline = scenario.with_config(selection_method="all", did_bonus_fraction=0.0)
    return with_selection, baseline


def run_adversarial_did_experiment(scenario: Scenario, workers: int = 1) -> tuple[RunReport, RunReport]:
    """Same seed twice: (a) score-order selection with a 10% DID bonus, (b) no selection, no bonus."""
    a, b = adversarial_variants(scenario)
    return run_cross_device(a, workers), run_cross_device(b, workers)
