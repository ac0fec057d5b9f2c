"""Contract state machines hosted on the simulated ledger.

``BcflTaskContract`` drives one federated-learning task through its rounds.
Round indices are zero-based: round ``r`` is the ``r+1``-th training round and
``current_round`` counts completed rounds, so a task with ``total_rounds=R``
ends at ``current_round == R`` in phase ``Completed``.

Global models use the *input* convention: ``get_global_model(k)`` is the model
trainers download at the start of round ``k``; ``k == 0`` is the genesis model
and ``save_global_model(r, cid)`` makes ``cid`` available as ``k == r + 1``.
"""

from __future__ import annotations

import enum

from .encoding import Address
from .ledger import CallContext, Contract, ContractError, external, view
from .store import CID, StoreError


class Phase(str, enum.Enum):
    RECRUITING = "Recruiting"
    TRAINING = "Training"
    EVALUATION = "Evaluation"
    AGGREGATION = "Aggregation"
    TOKEN_DISTRIBUTION = "TokenDistribution"
    PENDING = "Pending"
    COMPLETED = "Completed"


ALLOWED_TRANSITIONS: dict[Phase, frozenset[Phase]] = {
    Phase.RECRUITING: frozenset({Phase.TRAINING, Phase.PENDING}),
    Phase.PENDING: frozenset({Phase.TRAINING}),
    Phase.TRAINING: frozenset({Phase.EVALUATION}),
    Phase.EVALUATION: frozenset({Phase.AGGREGATION}),
    Phase.AGGREGATION: frozenset({Phase.TOKEN_DISTRIBUTION}),
    Phase.TOKEN_DISTRIBUTION: frozenset({Phase.TRAINING, Phase.COMPLETED}),
    Phase.COMPLETED: frozenset(),
}


def _check_address(value, what: str = "address") -> Address:
    if not isinstance(value, Address):
        raise ContractError(f"{what} must be an address")
    return value


def _check_cid(value) -> str:
    if not isinstance(value, str):
        raise ContractError("malformed cid")
    try:
        CID.parse(value)
    except StoreError:
        raise ContractError("malformed cid") from None
    return value


def _check_uint(value, what: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ContractError(f"{what} must be a non-negative integer")
    return value


class BcflTaskContract(Contract):
    """Per-task workflow contract (cross-device layout).

    init args: evaluator, aggregator, total_rounds, round_duration,
    token_contract, config_cid, capacity.
    """

    kind = "cross_device"

    def __init__(self, address: Address, ctx: CallContext, evaluator: Address,
                 aggregator: Address, total_rounds: int, round_duration: int,
                 token_contract: Address, config_cid: str, capacity: int = 1):
        super().__init__(address, ctx)
        if not isinstance(total_rounds, int) or total_rounds < 1:
            raise ContractError("total_rounds must be >= 1")
        self.owner = ctx.sender
        self.evaluator = _check_address(evaluator, "evaluator")
        self.aggregator = _check_address(aggregator, "aggregator")
        self.token_contract = _check_address(token_contract, "token contract")
        self.config_digest = _check_cid(config_cid)
        self.total_rounds = total_rounds
        self.round_duration = _check_uint(round_duration, "round_duration")
        self.capacity = _check_uint(capacity, "capacity")
        self.genesis_cid = None
        self.round_counter = 0
        self.round_end_time = 0
        self.phase = Phase.RECRUITING
        self.roster: dict[int, list[Address]] = {}
        self.required_updates: dict[int, int] = {}
        self.local_updates: dict[int, list[list]] = {}
        self.scores: dict[int, dict[str, int]] = {}
        self.evaluation_done: dict[int, bool] = {}
        self.global_models: dict[int, str] = {}
        self.round_tokens: dict[int, int] = {}

    # -- helpers --------------------------------------------------------------

    def _transition(self, new: Phase) -> None:
        if new not in ALLOWED_TRANSITIONS[self.phase]:
            raise ContractError(f"illegal transition {self.phase.value} -> {new.value}")
        self.phase = new
        if new is Phase.TRAINING:
            self.round_end_time = self.now + self.round_duration
        elif new is Phase.COMPLETED:
            self.round_end_time = self.now

    def _only(self, *who: Address) -> None:
        self.require(self.caller in who, "unauthorized")

    def _in_phase(self, *phases: Phase) -> None:
        self.require(self.phase in phases, "wrong phase")

    def _current(self, round_: int) -> None:
        self.require(round_ == self.round_counter, "wrong round")

    def _roster(self, round_: int) -> list[Address]:
        roster = self.roster.get(round_)
        if roster is None:
            raise ContractError("no roster")
        return roster

    def _submitters(self, round_: int) -> list[Address]:
        return [entry[0] for entry in self.local_updates.get(round_, [])]

    # -- round control --------------------------------------------------------

    @view
    def current_round(self) -> int:
        return self.round_counter

    @view
    def round_remaining_seconds(self, round_: int) -> int:
        self.require(round_ <= self.round_counter, "future round")
        if round_ < self.round_counter:
            return 0
        return max(0, self.round_end_time - self.now)

    @external
    def skip_round(self) -> int:
        self._only(self.owner)
        self.require(self.round_counter < self.total_rounds, "no more rounds")
        # a timeout override for running rounds; recruitment cannot be skipped
        self._in_phase(Phase.TRAINING, Phase.EVALUATION, Phase.AGGREGATION, Phase.TOKEN_DISTRIBUTION)
        prev = self.round_counter
        self.round_counter += 1
        if self.round_counter == self.total_rounds:
            self.phase = Phase.COMPLETED
            self.round_end_time = self.now
            return self.round_counter
        if self.round_counter not in self.roster and prev in self.roster:
            self.roster[self.round_counter] = list(self.roster[prev])
            self.required_updates[self.round_counter] = len(self.roster[prev])
        self.phase = Phase.TRAINING
        self.round_end_time = self.now + self.round_duration
        return self.round_counter

    @external
    def open_training(self) -> str:
        """Close recruitment; the task waits in Pending until capacity is met."""
        self._only(self.owner)
        self._in_phase(Phase.RECRUITING, Phase.PENDING)
        self.require(self.genesis_cid is not None, "no genesis")
        roster = self._roster(0)
        if len(roster) < self.capacity:
            self.require(self.phase is Phase.RECRUITING, "capacity not met")
            self._transition(Phase.PENDING)
        else:
            self._transition(Phase.TRAINING)
        return self.phase.value

    @external
    def advance_round(self) -> int:
        self._only(self.owner)
        self._in_phase(Phase.TOKEN_DISTRIBUTION)
        next_round = self.round_counter + 1
        if next_round == self.total_rounds:
            self.round_counter = next_round
            self._transition(Phase.COMPLETED)
        else:
            self._roster(next_round)
            self.round_counter = next_round
            self._transition(Phase.TRAINING)
        return self.round_counter

    # -- client selection -----------------------------------------------------

    @external
    def set_current_trainers(self, round_: int, addrs: list) -> None:
        allowed = [self.aggregator] + ([self.owner] if round_ == 0 else [])
        self._only(*allowed)
        self.require(isinstance(addrs, list) and len(addrs) > 0, "empty trainer list")
        for a in addrs:
            _check_address(a, "trainer")
        self.require(len(set(addrs)) == len(addrs), "duplicate trainer")
        self.require(self.round_counter <= round_ < self.total_rounds, "round out of range")
        self.require(self.phase is not Phase.COMPLETED, "wrong phase")
        self.require(not self.local_updates.get(round_), "roster frozen")
        self.roster[round_] = list(addrs)
        self.required_updates[round_] = len(addrs)

    @view
    def get_current_trainers(self, round_: int) -> list:
        return list(self._roster(round_))

    @view
    def check_valid_trainer(self, addr: Address, round_: int) -> bool:
        return addr in self._roster(round_)

    @external
    def change_number_of_updates(self, round_: int, n: int) -> None:
        self._only(self.owner, self.aggregator)
        roster = self._roster(round_)
        self.require(isinstance(n, int) and 1 <= n <= len(roster), "invalid number of updates")
        self.required_updates[round_] = n
        if (round_ == self.round_counter and self.phase is Phase.TRAINING
                and len(self.local_updates.get(round_, [])) >= n):
            self._transition(Phase.EVALUATION)

    # -- training -------------------------------------------------------------

    @view
    def get_global_model(self, k: int) -> str:
        if k == 0:
            self.require(self.genesis_cid is not None, "no genesis")
            return self.genesis_cid
        cid = self.global_models.get(k)
        if cid is None:
            raise ContractError("no global model")
        return cid

    @external
    def set_genesis(self, cid: str) -> None:
        self._only(self.owner)
        self.require(self.genesis_cid is None, "immutable")
        self._in_phase(Phase.RECRUITING, Phase.PENDING)
        self.genesis_cid = _check_cid(cid)

    @external
    def add_local_model_update(self, round_: int, cid: str) -> None:
        self._in_phase(Phase.TRAINING)
        self._current(round_)
        self.require(self.caller in self._roster(round_), "not a valid trainer")
        self.require(self.caller not in self._submitters(round_), "already updated")
        cid = _check_cid(cid)
        updates = self.local_updates.setdefault(round_, [])
        updates.append([self.caller, cid])
        if len(updates) >= self.required_updates[round_]:
            self._transition(Phase.EVALUATION)

    # -- progress management --------------------------------------------------

    @view
    def training_phase(self) -> str:
        return self.phase.value

    @view
    def get_number_of_updates(self) -> int:
        return len(self.local_updates.get(self.round_counter, []))

    @view
    def required_number_of_updates(self, round_: int) -> int:
        self._roster(round_)
        return self.required_updates[round_]

    @view
    def updates_in_round(self, round_: int) -> list:
        return [entry[1] for entry in self.local_updates.get(round_, [])]

    @view
    def get_local_updates(self, round_: int) -> list:
        return [list(entry) for entry in self.local_updates.get(round_, [])]

    @view
    def check_trainer_update(self, addr: Address, round_: int) -> bool:
        return addr in self._submitters(round_)

    @view
    def wait_trainers(self, round_: int) -> list:
        done = set(self._submitters(round_))
        return [a for a in self._roster(round_) if a not in done]

    # -- evaluation -----------------------------------------------------------

    @external
    def save_score(self, round_: int, cid: str, score: int) -> None:
        self._only(self.evaluator)
        self._in_phase(Phase.EVALUATION)
        self._current(round_)
        self.require(cid in self.updates_in_round(round_), "unknown cid")
        self.scores.setdefault(round_, {})[cid] = _check_uint(score, "score")

    @view
    def get_model_score(self, round_: int, cid: str) -> int:
        score = self.scores.get(round_, {}).get(cid)
        if score is None:
            raise ContractError("no score")
        return score

    @external
    def set_evaluation_completed(self, round_: int) -> None:
        self._only(self.evaluator)
        self.require(not self.evaluation_done.get(round_, False), "already evaluated")
        self._in_phase(Phase.EVALUATION)
        self._current(round_)
        scored = self.scores.get(round_, {})
        self.require(all(cid in scored for cid in self.updates_in_round(round_)), "scores missing")
        self.evaluation_done[round_] = True
        self._transition(Phase.AGGREGATION)

    @view
    def evaluation_completed(self, round_: int) -> bool:
        return self.evaluation_done.get(round_, False)

    @external
    def set_evaluator(self, addr: Address) -> None:
        self._only(self.owner)
        self.evaluator = _check_address(addr, "evaluator")

    @view
    def get_evaluator(self) -> Address:
        return self.evaluator

    # -- aggregation ----------------------------------------------------------

    @external
    def save_global_model(self, round_: int, cid: str) -> None:
        self._only(self.aggregator)
        self.require(round_ + 1 not in self.global_models, "immutable")
        self._in_phase(Phase.AGGREGATION)
        self._current(round_)
        self.global_models[round_ + 1] = _check_cid(cid)
        self._transition(Phase.TOKEN_DISTRIBUTION)

    # -- token distribution ---------------------------------------------------

    @external
    def set_tokens_per_round(self, round_: int, amount: int) -> None:
        self._only(self.owner)
        self._in_phase(Phase.TOKEN_DISTRIBUTION)
        self._current(round_)
        self.require(round_ not in self.round_tokens, "tokens already recorded")
        self.round_tokens[round_] = _check_uint(amount, "amount")

    @view
    def tokens_per_round(self, round_: int) -> int:
        return self.round_tokens.get(round_, 0)

    @view
    def total_tokens(self) -> int:
        return sum(self.round_tokens.values())


class TokenContract(Contract):
    """Minimal fungible token; the deployer is the sole minter."""

    kind = "token"

    def __init__(self, address: Address, ctx: CallContext, name: str = "BCFL", symbol: str = "BCFL"):
        super().__init__(address, ctx)
        self.name = name
        self.symbol = symbol
        self.minter = ctx.sender
        self.supply = 0
        self.balances: dict[Address, int] = {}

    @external
    def mint(self, to: Address, amount: int) -> int:
        self.require(self.caller == self.minter, "unauthorized")
        _check_address(to)
        amount = _check_uint(amount, "amount")
        self.balances[to] = self.balances.get(to, 0) + amount
        self.supply += amount
        return self.balances[to]

    @external
    def transfer(self, to: Address, amount: int) -> bool:
        _check_address(to)
        amount = _check_uint(amount, "amount")
        have = self.balances.get(self.caller, 0)
        self.require(have >= amount, "insufficient balance")
        self.balances[self.caller] = have - amount
        self.balances[to] = self.balances.get(to, 0) + amount
        return True

    @view
    def balance_of(self, addr: Address) -> int:
        return self.balances.get(addr, 0)

    @view
    def total_supply(self) -> int:
        return self.supply


class DidRegistryContract(Contract):
    kind = "did_registry"

    def __init__(self, address: Address, ctx: CallContext):
        super().__init__(address, ctx)
        self.records: dict[str, list] = {}

    @external
    def register(self, did: str, controller: Address, public_key: bytes) -> None:
        self.require(isinstance(did, str) and did.startswith("did:"), "malformed did")
        _check_address(controller, "controller")
        self.require(isinstance(public_key, bytes) and len(public_key) > 0, "missing public key")
        existing = self.records.get(did)
        if existing is not None:
            self.require(self.caller == existing[0], "not controller")
        self.records[did] = [controller, public_key, self.now]

    @view
    def resolve(self, did: str) -> list:
        record = self.records.get(did)
        if record is None:
            raise ContractError("not found")
        return list(record)


class CrossSiloContract(Contract):
    """Main-model record for a cross-silo task.

    Each participant's auxiliary model runs on its own ``BcflTaskContract``;
    this contract links them and stores the weighted main model.
    """

    kind = "cross_silo"

    def __init__(self, address: Address, ctx: CallContext, aggregator: Address, participants: list):
        super().__init__(address, ctx)
        self.require(isinstance(participants, list) and len(participants) >= 2,
                     "at least two participants required")
        self.require(len(set(participants)) == len(participants), "duplicate participant")
        self.owner = ctx.sender
        self.aggregator = _check_address(aggregator, "aggregator")
        self.participants = [_check_address(p, "participant") for p in participants]
        self.auxiliaries: dict[int, list] = {}
        self.main_weights: list[int] = []
        self.main_cid = None

    @external
    def register_auxiliary(self, index: int, task: Address, evaluator: Address) -> None:
        self.require(self.caller == self.owner, "unauthorized")
        self.require(isinstance(index, int) and 0 <= index < len(self.participants), "bad index")
        self.require(index not in self.auxiliaries, "immutable")
        self.require(evaluator == self.participants[index], "evaluator must be the participant")
        self.auxiliaries[index] = [_check_address(task, "task"), evaluator]

    @external
    def save_main_model(self, cid: str, weights: list) -> None:
        self.require(self.caller == self.aggregator, "unauthorized")
        self.require(self.main_cid is None, "immutable")
        self.require(len(self.auxiliaries) == len(self.participants), "auxiliaries missing")
        self.require(isinstance(weights, list) and len(weights) == len(self.participants), "bad weights")
        self.main_weights = [_check_uint(w, "weight") for w in weights]
        self.main_cid = _check_cid(cid)

    @view
    def get_auxiliaries(self) -> list:
        return [list(self.auxiliaries[i]) for i in sorted(self.auxiliaries)]

    @view
    def main_model(self) -> str:
        if self.main_cid is None:
            raise ContractError("no main model")
        return self.main_cid

    @view
    def get_main_weights(self) -> list:
        return list(self.main_weights)


CONTRACT_KINDS: dict[str, type[Contract]] = {
    cls.kind: cls
    for cls in (BcflTaskContract, CrossSiloContract, TokenContract, DidRegistryContract)
}
