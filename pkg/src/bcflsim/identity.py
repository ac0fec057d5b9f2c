"""DID documents, verifiable credentials and the authenticated-trainer whitelist.

Keys are Ed25519 (deterministic signatures) derived from an integer seed, so
test vectors are stable.  A credential travels as a JWT-shaped token
``header.payload.signature`` of unpadded base64url segments; the signature
covers the ASCII ``header.payload`` prefix and the payload is JSON with sorted
keys.  No compatibility with external JWT or W3C tooling is claimed.
"""

from __future__ import annotations

import base64
import binascii
import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .encoding import Address

DID_METHOD = "did:bcfl:"
VC_HEADER = {"alg": "EdDSA", "typ": "vc+jwt"}


class IdentityError(ValueError):
    pass


class Verdict(str, enum.Enum):
    VALID = "valid"
    BAD_SIGNATURE = "bad_signature"
    EXPIRED = "expired"
    UNTRUSTED_ISSUER = "untrusted_issuer"


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes = field(repr=False)

    @classmethod
    def from_seed(cls, seed: int) -> KeyPair:
        secret = hashlib.sha256(b"bcfl/identity-key" + str(seed).encode()).digest()
        private = Ed25519PrivateKey.from_private_bytes(secret)
        public = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(public, secret)

    def sign(self, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.secret_key).sign(message)


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def did_for_key(public_key: bytes) -> str:
    return DID_METHOD + hashlib.sha256(public_key).digest()[:20].hex()


@dataclass(frozen=True)
class DidDocument:
    did: str
    controller: Address
    public_key: bytes


def create_did(seed: int, controller: Address) -> tuple[DidDocument, KeyPair]:
    keys = KeyPair.from_seed(seed)
    return DidDocument(did_for_key(keys.public_key), controller, keys.public_key), keys


def _b64(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _unb64(text: str) -> bytes:
    """Strict base64url decode: rejects anything that does not re-encode identically."""
    try:
        raw = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (binascii.Error, ValueError) as exc:
        raise IdentityError("bad base64") from exc
    if _b64(raw) != text:
        raise IdentityError("non-canonical base64")
    return raw


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


@dataclass(frozen=True)
class VerifiableCredential:
    issuer_did: str
    subject_did: str
    claims: dict
    signature: bytes

    @property
    def payload(self) -> bytes:
        return canonical_json({"iss": self.issuer_did, "sub": self.subject_did, "claims": self.claims})

    @property
    def signing_input(self) -> bytes:
        return f"{_b64(canonical_json(VC_HEADER))}.{_b64(self.payload)}".encode("ascii")

    @property
    def expires_at(self) -> int:
        return self.claims["expires_at"]

    def to_token(self) -> str:
        return self.signing_input.decode("ascii") + "." + _b64(self.signature)

    @classmethod
    def from_token(cls, token: str) -> VerifiableCredential:
        parts = token.split(".")
        if len(parts) != 3:
            raise IdentityError("credential must have three segments")
        header_b64, payload_b64, sig_b64 = parts
        try:
            header = json.loads(_unb64(header_b64))
            payload_raw = _unb64(payload_b64)
            payload = json.loads(payload_raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise IdentityError("malformed credential") from exc
        if header != VC_HEADER:
            raise IdentityError("unsupported header")
        if not isinstance(payload, dict) or set(payload) != {"iss", "sub", "claims"}:
            raise IdentityError("malformed payload")
        vc = cls(payload["iss"], payload["sub"], payload["claims"], _unb64(sig_b64))
        # the signature covers the exact segments received
        if vc.payload != payload_raw:
            raise IdentityError("non-canonical payload")
        return vc


def issue_vc(server_key: KeyPair, subject: DidDocument, claims: dict, now: int) -> VerifiableCredential:
    expires_at = claims.get("expires_at")
    if not isinstance(expires_at, int) or expires_at <= now:
        raise IdentityError("invalid validity window")
    full = {"issued_at": now, **claims}
    issuer = did_for_key(server_key.public_key)
    unsigned = VerifiableCredential(issuer, subject.did, full, b"")
    return VerifiableCredential(issuer, subject.did, full, server_key.sign(unsigned.signing_input))


def verify_vc(vc: VerifiableCredential | str | bytes, trusted_issuer_key: bytes, now: int) -> Verdict:
    """Check a credential; never mutates anything."""
    if isinstance(vc, bytes):
        try:
            vc = vc.decode("ascii")
        except UnicodeDecodeError:
            return Verdict.BAD_SIGNATURE
    if isinstance(vc, str):
        try:
            vc = VerifiableCredential.from_token(vc)
        except IdentityError:
            return Verdict.BAD_SIGNATURE
    if vc.issuer_did != did_for_key(trusted_issuer_key):
        return Verdict.UNTRUSTED_ISSUER
    try:
        message = vc.signing_input
    except (TypeError, ValueError):
        return Verdict.BAD_SIGNATURE
    if not verify_signature(trusted_issuer_key, message, vc.signature):
        return Verdict.BAD_SIGNATURE
    expires_at = vc.claims.get("expires_at") if isinstance(vc.claims, dict) else None
    if not isinstance(expires_at, int) or now >= expires_at:
        return Verdict.EXPIRED
    return Verdict.VALID


@dataclass
class Whitelist:
    """Authenticated trainers for one task, kept by the BCFL server."""

    task_id: str
    entries: dict[Address, str] = field(default_factory=dict)
    # (trainer, subject_did, logical time) of each successful enrollment
    history: list[tuple[Address, str, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, trainer: object) -> bool:
        return trainer in self.entries

    def to_list(self) -> list[dict]:
        return [{"trainer": str(a), "did": d} for a, d in sorted(self.entries.items())]


def whitelist_enroll(whitelist: Whitelist, trainer: Address, vc: VerifiableCredential | str,
                     trusted_key: bytes, now: int) -> bool:
    if verify_vc(vc, trusted_key, now) is not Verdict.VALID:
        return False
    if isinstance(vc, str):
        vc = VerifiableCredential.from_token(vc)
    bound = vc.claims.get("address")
    if bound is not None and bound != str(trainer):
        return False
    if whitelist.entries.get(trainer) != vc.subject_did:
        whitelist.entries[trainer] = vc.subject_did
        whitelist.history.append((trainer, vc.subject_did, now))
    return True


def is_authenticated(whitelist: Whitelist, trainer: Address) -> bool:
    return trainer in whitelist.entries
