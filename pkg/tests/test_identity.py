from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcflsim.encoding import Address
from bcflsim.identity import (
    IdentityError,
    KeyPair,
    VerifiableCredential,
    Verdict,
    Whitelist,
    create_did,
    did_for_key,
    is_authenticated,
    issue_vc,
    verify_vc,
    whitelist_enroll,
)
from bcflsim.ledger import Ledger

SERVER = KeyPair.from_seed(4)
ADDR = Address(bytes(range(20)))
OTHER = Address(bytes(range(1, 21)))


def credential(seed: int = 7, now: int = 100, expires_at: int = 1000, **claims):
    doc, _ = create_did(seed, ADDR)
    return issue_vc(SERVER, doc, {"expires_at": expires_at, "task": "t1", **claims}, now)


def test_did_determinism():
    a, _ = create_did(1, ADDR)
    b, _ = create_did(1, ADDR)
    c, _ = create_did(2, ADDR)
    assert a == b
    assert a.did != c.did
    assert a.did.startswith("did:bcfl:") and len(a.did) == len("did:bcfl:") + 40
    assert a.did == did_for_key(a.public_key)


def test_did_registry_round_trip():
    ledger = Ledger()
    owner = ledger.create_account(1)
    ledger.fund(owner, 10**12)
    reg = ledger.deploy_contract(owner, "did_registry")
    doc, _ = create_did(3, owner)
    ledger.call(owner, reg, "register", doc.did, owner, doc.public_key)
    assert ledger.view(reg, "resolve", doc.did)[1] == doc.public_key


def test_issue_and_verify():
    vc = credential()
    assert verify_vc(vc, SERVER.public_key, now=500) is Verdict.VALID
    assert verify_vc(vc.to_token(), SERVER.public_key, now=500) is Verdict.VALID
    assert verify_vc(vc.to_token().encode(), SERVER.public_key, now=500) is Verdict.VALID


def test_claims_round_trip_through_token():
    vc = credential(role="trainer", level=3)
    back = VerifiableCredential.from_token(vc.to_token())
    assert back == vc
    assert back.claims["role"] == "trainer" and back.claims["issued_at"] == 100


def test_invalid_validity_window():
    with pytest.raises(IdentityError):
        credential(now=100, expires_at=100)


def test_expired():
    vc = credential(expires_at=1000)
    assert verify_vc(vc, SERVER.public_key, now=999) is Verdict.VALID
    assert verify_vc(vc, SERVER.public_key, now=1000) is Verdict.EXPIRED


def test_untrusted_issuer():
    vc = credential()
    assert verify_vc(vc, KeyPair.from_seed(5).public_key, now=500) is Verdict.UNTRUSTED_ISSUER


def test_forged_by_other_key_with_server_issuer_did():
    doc, _ = create_did(7, ADDR)
    forger = KeyPair.from_seed(666)
    unsigned = VerifiableCredential(did_for_key(SERVER.public_key), doc.did, {"expires_at": 10**6}, b"")
    forged = VerifiableCredential(unsigned.issuer_did, doc.did, unsigned.claims, forger.sign(unsigned.signing_input))
    assert verify_vc(forged, SERVER.public_key, now=0) is Verdict.BAD_SIGNATURE


def single_byte_mutations(data: bytes, masks=(0x01, 0x02, 0x10, 0x20, 0x80, 0xFF)):
    for pos in range(len(data)):
        for mask in masks:
            out = bytearray(data)
            out[pos] ^= mask
            yield bytes(out)


def test_token_mutations_never_verify():
    token = credential().to_token().encode()
    verdicts = [verify_vc(m, SERVER.public_key, now=500) for m in single_byte_mutations(token)]
    assert verdicts and all(v is not Verdict.VALID for v in verdicts)


def test_signature_mutations_are_bad_signature():
    vc = credential()
    for sig in single_byte_mutations(vc.signature):
        mutated = VerifiableCredential(vc.issuer_did, vc.subject_did, vc.claims, sig)
        assert verify_vc(mutated, SERVER.public_key, now=500) is Verdict.BAD_SIGNATURE


def test_payload_mutation_bad_signature():
    vc = credential()
    payload = vc.to_token().split(".")[1]
    # swap one base64 symbol for another valid one: decodes fine but the signature no longer matches
    for i in range(len(payload) - 1):
        repl = "A" if payload[i] != "A" else "B"
        parts = vc.to_token().split(".")
        parts[1] = payload[:i] + repl + payload[i + 1:]
        assert verify_vc(".".join(parts), SERVER.public_key, now=500) is not Verdict.VALID


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text(max_size=8), st.integers() | st.text(max_size=8), max_size=4))
def test_claims_property_round_trip(extra):
    extra.pop("expires_at", None)
    extra.pop("issued_at", None)
    vc = credential(**{f"x_{k}": v for k, v in extra.items()})
    assert VerifiableCredential.from_token(vc.to_token()) == vc
    assert verify_vc(vc.to_token(), SERVER.public_key, now=500) is Verdict.VALID


def test_whitelist_enroll():
    wl = Whitelist("t1")
    vc = credential()
    assert whitelist_enroll(wl, ADDR, vc, SERVER.public_key, now=500)
    assert whitelist_enroll(wl, ADDR, vc, SERVER.public_key, now=501)
    assert len(wl) == 1 and len(wl.history) == 1
    assert is_authenticated(wl, ADDR) and not is_authenticated(wl, OTHER)


def test_whitelist_rejects_expired_and_foreign():
    wl = Whitelist("t1")
    assert not whitelist_enroll(wl, ADDR, credential(expires_at=200), SERVER.public_key, now=300)
    assert not whitelist_enroll(wl, ADDR, credential(), KeyPair.from_seed(9).public_key, now=300)
    bound = credential(address=str(OTHER))
    assert not whitelist_enroll(wl, ADDR, bound, SERVER.public_key, now=300)
    assert len(wl) == 0


def test_whitelist_isolation():
    wl = Whitelist("t1")
    whitelist_enroll(wl, ADDR, credential(seed=1), SERVER.public_key, now=500)
    before = is_authenticated(wl, ADDR)
    whitelist_enroll(wl, OTHER, credential(seed=2), SERVER.public_key, now=500)
    assert is_authenticated(wl, ADDR) == before
    assert [e["trainer"] for e in wl.to_list()] == sorted([str(ADDR), str(OTHER)])
