"""In-process content-addressed blob store.

Blobs are immutable and keyed by the SHA-256 digest of their bytes.  The text
form of a CID is ``sha256-<64 lowercase hex>``; that string is what contracts
store.  A store may optionally be backed by a directory holding one file per
blob, named by the CID text form.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass
from pathlib import Path

DEFAULT_ALGORITHM = "sha256"
_HASHES = {"sha256": hashlib.sha256}
_CID_RE = re.compile(r"^([a-z0-9]+)-([0-9a-f]+)$")


class StoreError(Exception):
    pass


class BlobNotFound(StoreError, KeyError):
    def __str__(self) -> str:
        return "not found"


@dataclass(frozen=True, order=True)
class CID:
    algorithm: str
    digest: bytes

    def __post_init__(self) -> None:
        if self.algorithm not in _HASHES:
            raise StoreError(f"unsupported hash algorithm {self.algorithm!r}")
        if len(self.digest) != 32:
            raise StoreError("digest must be 32 bytes")

    @classmethod
    def of(cls, data: bytes, algorithm: str = DEFAULT_ALGORITHM) -> CID:
        return cls(algorithm, _HASHES[algorithm](data).digest())

    @classmethod
    def parse(cls, text: str) -> CID:
        m = _CID_RE.match(text)
        if not m or len(m.group(2)) != 64:
            raise StoreError(f"malformed CID {text!r}")
        return cls(m.group(1), bytes.fromhex(m.group(2)))

    @property
    def text(self) -> str:
        return f"{self.algorithm}-{self.digest.hex()}"

    def __str__(self) -> str:
        return self.text


def _as_cid(cid: CID | str) -> CID:
    return cid if isinstance(cid, CID) else CID.parse(cid)


class BlobStore:
    """Thread-safe immutable blob store.

    With ``verify_reads`` every ``get`` re-hashes the blob before returning it.
    """

    def __init__(self, root: str | Path | None = None, algorithm: str = DEFAULT_ALGORITHM,
                 verify_reads: bool = False):
        if algorithm not in _HASHES:
            raise StoreError(f"unsupported hash algorithm {algorithm!r}")
        self.algorithm = algorithm
        self.verify_reads = verify_reads
        self._blobs: dict[CID, bytes] = {}
        self._lock = threading.Lock()
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._load()

    def _load(self) -> None:
        for path in sorted(self.root.iterdir()):
            if not path.is_file():
                continue
            try:
                cid = CID.parse(path.name)
            except StoreError:
                continue
            data = path.read_bytes()
            if CID.of(data, cid.algorithm) != cid:
                raise StoreError(f"digest mismatch for {path.name}")
            self._blobs[cid] = data

    def put(self, data: bytes) -> CID:
        data = bytes(data)
        cid = CID.of(data, self.algorithm)
        with self._lock:
            if cid not in self._blobs:
                self._blobs[cid] = data
                if self.root is not None:
                    (self.root / cid.text).write_bytes(data)
        return cid

    def get(self, cid: CID | str) -> bytes:
        cid = _as_cid(cid)
        with self._lock:
            data = self._blobs.get(cid)
        if data is None:
            raise BlobNotFound(cid.text)
        if self.verify_reads and CID.of(data, cid.algorithm) != cid:
            raise StoreError(f"stored blob {cid.text} was modified")
        return data

    def has(self, cid: CID | str) -> bool:
        try:
            cid = _as_cid(cid)
        except StoreError:
            return False
        with self._lock:
            return cid in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)

    def __contains__(self, cid: object) -> bool:
        return isinstance(cid, (CID, str)) and self.has(cid)

    def cids(self) -> list[CID]:
        with self._lock:
            return sorted(self._blobs)

    def save_to(self, root: str | Path) -> int:
        """Write every blob into ``root``; returns the number of files written."""
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        count = 0
        for cid in self.cids():
            path = root / cid.text
            if not path.exists():
                path.write_bytes(self._blobs[cid])
                count += 1
        return count
