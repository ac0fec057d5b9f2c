"""Simulated ledger: accounts, ordered transaction execution and gas metering.

There is no mempool, mining or consensus.  Transactions run in submission
order against in-process contract objects; a reverted transaction restores the
contract to its pre-call state but still pays for the gas it used.  Fees are
burned into a tracked sink so that

    sum(balances) + fees_collected == total_issued

holds after any sequence of transactions.

Storage gas is derived by diffing a contract's flattened storage before and
after a call: a slot that did not exist costs ``per_word_write`` per 32-byte
word, a slot whose bytes changed costs ``per_word_update`` per word.

The per-kind deployment sizes in ``data/ledger_config.json`` are chosen so that
deployment gas lands near the deployment gas of the corresponding Solidity
contracts at a 20 gwei price; nothing depends on the exact values.
"""

from __future__ import annotations

import copy
import enum
import hashlib
import inspect
import json
import threading
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Callable, ClassVar, Iterable

from .encoding import Address, encode, encode_call

WORD_BYTES = 32
DEFAULT_GAS_LIMIT = 30_000_000


class LedgerError(Exception):
    """Raised for invalid ledger-level requests (outside a transaction)."""


class ContractError(Exception):
    """A contract call failed; inside a transaction this becomes a revert."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class TransactionFailed(Exception):
    def __init__(self, receipt: Receipt):
        super().__init__(f"transaction {receipt.tx_hash[:12]} failed: {receipt.revert_reason}")
        self.receipt = receipt


@lru_cache(maxsize=1)
def load_ledger_config() -> dict:
    text = resources.files("bcflsim").joinpath("data/ledger_config.json").read_text()
    return json.loads(text)


def price_presets() -> dict[str, int]:
    return dict(load_ledger_config()["price_presets"])


def schema_size(kind: str) -> int:
    sizes = load_ledger_config()["contract_schema_bytes"]
    if kind not in sizes:
        raise LedgerError(f"unknown contract kind {kind!r}")
    return sizes[kind]


@dataclass(frozen=True)
class GasSchedule:
    base_tx: int = 21000
    per_calldata_byte: int = 16
    per_word_write: int = 20000
    per_word_update: int = 5000
    per_deploy_byte: int = 200
    unit_price: int = 1

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def preset(cls, name: str | None = None) -> GasSchedule:
        cfg = load_ledger_config()
        name = name or cfg["default_preset"]
        presets = cfg["price_presets"]
        if name not in presets:
            raise LedgerError(f"unknown gas preset {name!r}; known: {sorted(presets)}")
        return cls(**cfg["gas_schedule"], unit_price=presets[name])


@dataclass
class Account:
    address: Address
    balance: int = 0
    nonce: int = 0


class _DeployMarker:
    def __repr__(self) -> str:
        return "DEPLOY"


DEPLOY = _DeployMarker()


@dataclass(frozen=True)
class Transaction:
    sender: Address
    target: Address | _DeployMarker
    op: str
    args: tuple = ()
    nonce: int = 0
    gas_limit: int = DEFAULT_GAS_LIMIT

    @property
    def calldata(self) -> bytes:
        return encode_call(self.op, self.args)

    @property
    def is_deploy(self) -> bool:
        return self.target is DEPLOY

    def digest(self) -> str:
        target = b"" if self.is_deploy else self.target.raw
        body = encode([self.sender, target, self.calldata, self.nonce, self.gas_limit])
        return hashlib.sha256(body).hexdigest()


@dataclass(frozen=True)
class Receipt:
    tx_hash: str
    status: str  # "success" | "reverted"
    gas_used: int
    fee: int
    return_value: bytes = b""
    revert_reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "success"

    def encode(self) -> bytes:
        return encode([self.tx_hash, self.status, self.gas_used, self.fee,
                       self.return_value, self.revert_reason])


@dataclass(frozen=True)
class Deployment:
    kind: str
    address: Address
    deployer: Address
    gas_used: int
    fee: int


@dataclass(frozen=True)
class CallContext:
    sender: Address
    now: int


def external(fn: Callable) -> Callable:
    """Mark a contract method as a state-writing entry point."""
    fn._contract_op = "write"
    return fn


def view(fn: Callable) -> Callable:
    fn._contract_op = "view"
    return fn


class Contract:
    """Base for contract state machines hosted by :class:`Ledger`.

    Public instance attributes are contract storage; attributes starting with
    an underscore are runtime-only and excluded from digests and gas.
    """

    kind: ClassVar[str] = ""

    def __init__(self, address: Address, ctx: CallContext, *init_args: Any):
        self._address = address

    @property
    def address(self) -> Address:
        return self._address

    @classmethod
    def operations(cls) -> dict[str, str]:
        return _operations(cls)

    def dispatch(self, ctx: CallContext, op: str, args: Iterable[Any]) -> Any:
        if op not in self.operations():
            raise ContractError(f"unknown operation {op!r}")
        method = getattr(self, op)
        args = tuple(args)
        try:
            inspect.signature(method).bind(*args)
        except TypeError as exc:
            raise ContractError(f"bad arguments for {op}: {exc}") from None
        self._ctx = ctx
        try:
            return method(*args)
        finally:
            self._ctx = None

    @property
    def caller(self) -> Address:
        return self._ctx.sender

    @property
    def now(self) -> int:
        return self._ctx.now

    def require(self, condition: bool, reason: str) -> None:
        if not condition:
            raise ContractError(reason)

    def storage_slots(self) -> dict[str, bytes]:
        state = {k: v for k, v in vars(self).items() if not k.startswith("_")}
        slots: dict[str, bytes] = {}
        _flatten(state, "", slots)
        return slots


@lru_cache(maxsize=None)
def _operations(cls: type) -> dict[str, str]:
    ops = {}
    for name in dir(cls):
        marker = getattr(getattr(cls, name), "_contract_op", None)
        if marker:
            ops[name] = marker
    return ops


def _slot_key(key: Any) -> str:
    if isinstance(key, enum.Enum):
        key = key.value
    return str(key)


def _flatten(value: Any, prefix: str, out: dict[str, bytes]) -> None:
    if isinstance(value, dict):
        out[prefix + "#len"] = encode(len(value))
        for k in sorted(value, key=_slot_key):
            _flatten(value[k], f"{prefix}/{_slot_key(k)}", out)
    elif isinstance(value, (list, tuple)) and not isinstance(value, bytes):
        out[prefix + "#len"] = encode(len(value))
        for i, item in enumerate(value):
            _flatten(item, f"{prefix}[{i}]", out)
    else:
        out[prefix] = encode(value)


def _words(nbytes: int) -> int:
    return max(1, -(-nbytes // WORD_BYTES))


def storage_gas(before: dict[str, bytes], after: dict[str, bytes], schedule: GasSchedule) -> int:
    gas = 0
    for key, new in after.items():
        old = before.get(key)
        if old is None:
            gas += schedule.per_word_write * _words(len(new))
        elif old != new:
            gas += schedule.per_word_update * _words(len(new))
    return gas


def _address_from(tag: bytes, *parts: bytes) -> Address:
    return Address(hashlib.sha256(tag + b"".join(parts)).digest()[:20])


class Ledger:
    """Single-process ledger that executes transactions in a total order."""

    def __init__(self, schedule: GasSchedule | None = None,
                 registry: dict[str, type[Contract]] | None = None):
        if registry is None:
            from .contracts import CONTRACT_KINDS
            registry = CONTRACT_KINDS
        self.schedule = schedule or GasSchedule.preset()
        self.registry = registry
        self.accounts: dict[Address, Account] = {}
        self.contracts: dict[Address, Contract] = {}
        self.deployments: list[Deployment] = []
        self.receipts: list[Receipt] = []
        self.total_issued = 0
        self.fees_collected = 0
        self.now = 0
        self._seeds: set[int] = set()
        self._lock = threading.RLock()
        self._queue: deque[Transaction] = deque()

    # -- accounts -----------------------------------------------------------

    def create_account(self, seed: int) -> Address:
        with self._lock:
            if seed in self._seeds:
                raise LedgerError("account exists")
            address = _address_from(b"bcfl/account", encode(seed))
            if address in self.accounts:
                raise LedgerError("account exists")
            self._seeds.add(seed)
            self.accounts[address] = Account(address)
            return address

    def _account(self, address: Address) -> Account:
        try:
            return self.accounts[address]
        except KeyError:
            raise LedgerError("no such account") from None

    def fund(self, address: Address, amount: int) -> int:
        if amount < 0:
            raise LedgerError("amount must be non-negative")
        with self._lock:
            account = self._account(address)
            account.balance += amount
            self.total_issued += amount
            return account.balance

    def balance_of(self, address: Address) -> int:
        return self._account(address).balance

    def nonce_of(self, address: Address) -> int:
        return self._account(address).nonce

    def advance_time(self, seconds: int) -> int:
        if seconds < 0:
            raise LedgerError("time cannot go backwards")
        with self._lock:
            self.now += seconds
            return self.now

    # -- execution ----------------------------------------------------------

    def submit_tx(self, tx: Transaction) -> Receipt:
        with self._lock:
            receipt = self._execute(tx)
            self.receipts.append(receipt)
            return receipt

    def enqueue(self, tx: Transaction) -> None:
        with self._lock:
            self._queue.append(tx)

    def process_queue(self) -> list[Receipt]:
        receipts = []
        while True:
            with self._lock:
                if not self._queue:
                    return receipts
                tx = self._queue.popleft()
                receipts.append(self.submit_tx(tx))

    def _execute(self, tx: Transaction) -> Receipt:
        tx_hash = tx.digest()
        account = self.accounts.get(tx.sender)
        price = self.schedule.unit_price
        if account is None:
            return Receipt(tx_hash, "reverted", 0, 0, revert_reason="no such account")
        if tx.nonce != account.nonce:
            return Receipt(tx_hash, "reverted", 0, 0, revert_reason="bad nonce")
        if tx.gas_limit < 0 or account.balance < tx.gas_limit * price:
            return Receipt(tx_hash, "reverted", 0, 0, revert_reason="insufficient funds")

        account.nonce += 1
        status, gas_used, ret, reason = self._run(tx, account.nonce - 1)
        fee = gas_used * price
        account.balance -= fee
        self.fees_collected += fee
        if tx.is_deploy and status == "success":
            self.deployments.append(Deployment(tx.op, ret, tx.sender, gas_used, fee))
        return_value = encode(ret) if status == "success" else b""
        return Receipt(tx_hash, status, gas_used, fee, return_value, reason)

    def _run(self, tx: Transaction, nonce: int) -> tuple[str, int, Any, str | None]:
        sched = self.schedule
        ctx = CallContext(tx.sender, self.now)
        if tx.is_deploy:
            try:
                size = schema_size(tx.op)
            except LedgerError as exc:
                return "reverted", min(sched.base_tx, tx.gas_limit), None, str(exc)
            gas = sched.base_tx + sched.per_deploy_byte * size
            if gas > tx.gas_limit:
                return "reverted", tx.gas_limit, None, "out of gas"
            address = _address_from(b"bcfl/contract", tx.sender.raw, encode(nonce))
            try:
                contract = self.registry[tx.op](address, ctx, *tx.args)
            except (ContractError, TypeError, KeyError) as exc:
                reason = exc.reason if isinstance(exc, ContractError) else f"bad init: {exc}"
                return "reverted", gas, None, reason
            self.contracts[address] = contract
            return "success", gas, address, None

        intrinsic = sched.base_tx + sched.per_calldata_byte * len(tx.calldata)
        if intrinsic > tx.gas_limit:
            return "reverted", tx.gas_limit, None, "out of gas"
        contract = self.contracts.get(tx.target)
        if contract is None:
            return "reverted", intrinsic, None, "no such contract"
        is_view = contract.operations().get(tx.op) == "view"
        snapshot = None if is_view else copy.deepcopy(contract)
        before = None if is_view else contract.storage_slots()
        try:
            result = contract.dispatch(ctx, tx.op, tx.args)
        except ContractError as exc:
            if snapshot is not None:
                self.contracts[tx.target] = snapshot
            return "reverted", intrinsic, None, exc.reason
        gas = intrinsic
        if not is_view:
            gas += storage_gas(before, contract.storage_slots(), sched)
        if gas > tx.gas_limit:
            if snapshot is not None:
                self.contracts[tx.target] = snapshot
            return "reverted", tx.gas_limit, None, "out of gas"
        return "success", gas, result, None

    # -- conveniences -------------------------------------------------------

    def call(self, sender: Address, contract: Address, op: str, *args: Any,
             gas_limit: int = DEFAULT_GAS_LIMIT, check: bool = True) -> Receipt:
        """Submit ``op(*args)`` from ``sender`` with the sender's current nonce."""
        with self._lock:
            nonce = self.nonce_of(sender) if sender in self.accounts else 0
            tx = Transaction(sender, contract, op, tuple(args), nonce, gas_limit)
            receipt = self.submit_tx(tx)
        if check and not receipt.ok:
            raise TransactionFailed(receipt)
        return receipt

    def deploy_contract(self, sender: Address, kind: str, *init_args: Any,
                        gas_limit: int = DEFAULT_GAS_LIMIT) -> Address:
        with self._lock:
            nonce = self.nonce_of(sender) if sender in self.accounts else 0
            receipt = self.submit_tx(Transaction(sender, DEPLOY, kind, tuple(init_args), nonce, gas_limit))
        if not receipt.ok:
            raise TransactionFailed(receipt)
        return self.deployments[-1].address

    def view(self, contract: Address, op: str, *args: Any, caller: Address | None = None) -> Any:
        """Read-only call outside any transaction; raises ContractError on failure."""
        with self._lock:
            target = self.contracts.get(contract)
            if target is None:
                raise LedgerError("no such contract")
            if target.operations().get(op) != "view":
                raise LedgerError(f"{op!r} is not a view operation")
            ctx = CallContext(caller or Address(bytes(20)), self.now)
            return target.dispatch(ctx, op, args)

    def contract(self, address: Address) -> Contract:
        return self.contracts[address]

    # -- digests and reports --------------------------------------------------

    def contract_state_digest(self) -> str:
        h = hashlib.sha256()
        with self._lock:
            for address in sorted(self.contracts):
                h.update(address.raw)
                for key, value in sorted(self.contracts[address].storage_slots().items()):
                    h.update(encode([key, value]))
        return h.hexdigest()

    def state_digest(self) -> str:
        h = hashlib.sha256(self.contract_state_digest().encode())
        with self._lock:
            for address in sorted(self.accounts):
                acct = self.accounts[address]
                h.update(encode([address, acct.balance, acct.nonce]))
            h.update(encode([self.total_issued, self.fees_collected, self.now]))
        return h.hexdigest()

    def receipt_log_bytes(self) -> bytes:
        with self._lock:
            return b"".join(r.encode() for r in self.receipts)

    def total_gas_used(self) -> int:
        return sum(r.gas_used for r in self.receipts)

    def gas_report(self, denomination: int = 1) -> GasReport:
        return GasReport.from_deployments(self.deployments, denomination)


@dataclass(frozen=True)
class GasEntry:
    kind: str
    gas_used: int
    fee: int


@dataclass
class GasReport:
    """Deployment cost per contract kind, in base currency units.

    ``denomination`` is the number of base units per display unit
    (e.g. ``10**18`` to show wei-denominated fees in ETH).
    """

    entries: list[GasEntry] = field(default_factory=list)
    denomination: int = 1

    @classmethod
    def from_deployments(cls, deployments: Iterable[Deployment], denomination: int = 1) -> GasReport:
        totals: dict[str, list[int]] = {}
        for dep in deployments:
            acc = totals.setdefault(dep.kind, [0, 0])
            acc[0] += dep.gas_used
            acc[1] += dep.fee
        entries = [GasEntry(kind, gas, fee) for kind, (gas, fee) in totals.items()]
        return cls(entries, denomination)

    @property
    def total_fee(self) -> int:
        return sum(e.fee for e in self.entries)

    @property
    def total_gas(self) -> int:
        return sum(e.gas_used for e in self.entries)

    def display(self, amount: int) -> str:
        """Exact decimal rendering of ``amount`` in display units."""
        whole, frac = divmod(amount, self.denomination)
        if frac == 0:
            return str(whole)
        digits = len(str(self.denomination - 1))
        return f"{whole}.{frac:0{digits}d}".rstrip("0")

    def to_dict(self) -> dict:
        return {
            "entries": [
                {"kind": e.kind, "gas_used": e.gas_used, "fee": e.fee,
                 "fee_display": self.display(e.fee)}
                for e in self.entries
            ],
            "total_fee": self.total_fee,
            "total_fee_display": self.display(self.total_fee),
            "denomination": self.denomination,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        rows = [(e.kind, str(e.gas_used), self.display(e.fee)) for e in self.entries]
        rows.append(("total", str(self.total_gas), self.display(self.total_fee)))
        header = ("contract", "gas_used", "fee")
        widths = [max(len(r[i]) for r in [header, *rows]) for i in range(3)]
        lines = ["  ".join([header[0].ljust(widths[0]), header[1].rjust(widths[1]), header[2].rjust(widths[2])])]
        lines.append("  ".join("-" * w for w in widths))
        for kind, gas, fee in rows:
            if kind == "total":
                lines.append("  ".join("-" * w for w in widths))
            lines.append("  ".join([kind.ljust(widths[0]), gas.rjust(widths[1]), fee.rjust(widths[2])]))
        return "\n".join(lines) + "\n"
