"""Homomorphic set protocols over a published universe.

The flow is always: an offline phase (key generation, per-party ciphertext
pools, working-vector creation in the shared repository), then an online
phase in which every party applies one cell rule per universe element, a
finalizer party prepares the vector for hand-off, and the decider decrypts
and interprets zeros.

Protocols and their cell rules, with V the working vector and a_j the j-th
universe element:

* union:         V starts as enc(r) cells; a member replaces the cell with
                 a pooled enc(0), a non-member multiplies it by one.  A cell
                 decrypting to zero means a_j is in the union.
* union (empty): a single cell starting at enc(1); a party with a non-empty
                 set replaces it by enc(0), an empty party multiplies by
                 enc(0).  Zero means "some set was non-empty".
* intersection:  V starts as enc(0) cells; members multiply by enc(0),
                 non-members by enc(r).  Zero survives only if everybody
                 held the element.
* generic:       one vector W^k per CNF clause, union rule per clause with
                 only the parties named in the clause attending (negated
                 literals invert the membership test); the finalizer then
                 multiplies the W^k together cell-wise into Z.

Result cases: "elements" sends cells in universe order, "cardinality"
shuffles them first, "emptiness" (intersection/generic) re-randomizes a
random number of clones of every cell plus random padding so the decider
only learns whether any zero exists at all.
"""

from __future__ import annotations

import random
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field

from . import he
from .repository import (DECIDER, CiphertextPool, SharedRepository)
from .setops import CnfExpression, InputSet, Universe, validate_inputs

PROTO_UNION = "union"
PROTO_UNION_EMPTINESS = "union_emptiness"
PROTO_INTERSECTION = "intersection"
PROTO_GENERIC = "generic_he"

HE_PROTOCOLS = (PROTO_UNION, PROTO_UNION_EMPTINESS, PROTO_INTERSECTION, PROTO_GENERIC)

MODE_ELEMENTS = "elements"
MODE_CARDINALITY = "cardinality"
MODE_EMPTINESS = "emptiness"
MODES = (MODE_ELEMENTS, MODE_CARDINALITY, MODE_EMPTINESS)

# Message kinds a party may legitimately send to the decider; the transport
# tap tests assert nothing else ever lands in the decider's queue.
DECIDER_INBOX_KINDS = frozenset({
    "finalized_cells", "tagsets", "declared_dummy_totals",
    "verifiable_pairs", "z_submission", "audit_product",
})


class ProtocolError(RuntimeError):
    """A decrypted value or message was inconsistent with the protocol."""


@dataclass
class EngineConfig:
    key_bits: int = he.DEFAULT_KEY_BITS
    randomize_visit_order: bool = False
    clone_min: int = 2
    clone_max: int = 8
    pad_lo_factor: int = 1
    pad_hi_factor: int = 4
    lock_timeout: float = 5.0


@dataclass
class OperationTrace:
    encryptions: int = 0
    decryptions: int = 0
    multiplications: int = 0


def count_operations(trace: OperationTrace) -> dict[str, int]:
    return {
        "encryptions": trace.encryptions,
        "decryptions": trace.decryptions,
        "multiplications": trace.multiplications,
    }


@dataclass(frozen=True)
class Message:
    sender: int | str
    recipient: int | str
    kind: str
    payload: object


class Transport:
    """In-process message passing with one queue per role and a full tap."""

    def __init__(self):
        self._queues: dict = defaultdict(deque)
        self.history: list[Message] = []

    def send(self, sender, recipient, kind: str, payload) -> None:
        msg = Message(sender, recipient, kind, payload)
        self.history.append(msg)
        self._queues[recipient].append(msg)

    def receive(self, recipient, kind: str | None = None) -> Message:
        queue = self._queues[recipient]
        if not queue:
            raise ProtocolError(f"no pending message for {recipient!r}")
        msg = queue.popleft()
        if kind is not None and msg.kind != kind:
            raise ProtocolError(f"expected {kind!r}, got {msg.kind!r}")
        return msg

    def messages_to(self, recipient) -> list[Message]:
        return [m for m in self.history if m.recipient == recipient]


class _Crypto:
    """Counting wrapper over the raw scheme, shared by one run."""

    def __init__(self, pk: he.PublicKey, rng: random.Random, trace: OperationTrace):
        self.pk = pk
        self.rng = rng
        self.trace = trace

    def enc(self, m: int) -> he.Ciphertext:
        self.trace.encryptions += 1
        return he.encrypt(self.pk, m, self.rng)

    def enc_zero(self) -> he.Ciphertext:
        return self.enc(0)

    def enc_random_nonzero(self) -> he.Ciphertext:
        self.trace.encryptions += 1
        return he.encrypt_random_nonzero(self.pk, self.rng)

    def add(self, a: he.Ciphertext, b: he.Ciphertext) -> he.Ciphertext:
        self.trace.multiplications += 1
        return he.add(self.pk, a, b)

    def rerandomize(self, ct: he.Ciphertext) -> he.Ciphertext:
        return self.add(ct, self.enc_zero())

    def scalar_pow(self, ct: he.Ciphertext, a: int) -> he.Ciphertext:
        self.trace.multiplications += 1
        return he.scalar_pow(self.pk, ct, a)


class Decider:
    """Holds the private key; sees only what the transport delivers."""

    def __init__(self, keypair: he.KeyPair, trace: OperationTrace,
                 transport: Transport):
        self._keypair = keypair
        self._trace = trace
        self._transport = transport

    @property
    def public_key(self) -> he.PublicKey:
        return self._keypair.public

    def decrypt_values(self, cells: list[he.Ciphertext]) -> list[int]:
        self._trace.decryptions += len(cells)
        sk = self._keypair.private
        return [he.decrypt(sk, c) for c in cells]

    def decide(self, universe: Universe | None = None) -> "ProtocolResult":
        """Consume one finalized-cells message and interpret the zeros."""
        msg = self._transport.receive(DECIDER, "finalized_cells")
        mode = msg.payload["mode"]
        values = self.decrypt_values(msg.payload["cells"])
        if mode == MODE_ELEMENTS:
            members = frozenset(
                universe.elements[j] for j, v in enumerate(values) if v == 0)
            return ProtocolResult(mode=mode, elements=members)
        if mode == MODE_CARDINALITY:
            return ProtocolResult(mode=mode, count=sum(1 for v in values if v == 0))
        if mode == MODE_EMPTINESS:
            if msg.payload.get("scalar"):
                if values[0] == 0:
                    return ProtocolResult(mode=mode, empty=False)
                if values[0] == 1:
                    return ProtocolResult(mode=mode, empty=True)
                raise ProtocolError(f"scalar emptiness cell decrypted to {values[0]}")
            return ProtocolResult(mode=mode, empty=not any(v == 0 for v in values))
        raise ProtocolError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class ProtocolResult:
    mode: str
    elements: frozenset[str] | None = None
    count: int | None = None
    empty: bool | None = None

    def __post_init__(self):
        expected = {MODE_ELEMENTS: self.elements is not None,
                    MODE_CARDINALITY: self.count is not None,
                    MODE_EMPTINESS: self.empty is not None}
        if self.mode not in expected:
            raise ValueError(f"unknown mode {self.mode!r}")
        active = [m for m, is_set in expected.items() if is_set]
        if active != [self.mode]:
            raise ValueError(f"result fields {active} do not match mode {self.mode!r}")

    def as_record(self) -> dict:
        rec: dict = {"mode": self.mode}
        if self.elements is not None:
            rec["elements"] = sorted(self.elements)
        if self.count is not None:
            rec["count"] = self.count
        if self.empty is not None:
            rec["empty"] = self.empty
        return rec


@dataclass
class OfflineState:
    """Everything the online phase needs, fixed by the offline phase."""

    n: int
    universe: Universe
    protocol: str
    expr: CnfExpression | None
    public_key: he.PublicKey
    finalizer: int
    repo: SharedRepository
    pools: dict[tuple[int, str], dict[str, CiphertextPool]]
    attendance: dict[str, tuple[int, ...]]
    creators: dict[str, tuple[int, ...]]
    transport: Transport
    decider: Decider
    crypto: _Crypto
    trace: OperationTrace
    rng: random.Random
    config: EngineConfig
    offline_seconds: float
    online_seconds: float = 0.0
    last_finalize_info: dict = field(default_factory=dict)

    @property
    def parties(self) -> list[int]:
        return list(range(1, self.n + 1))


def _clause_parties(clause) -> tuple[int, ...]:
    return tuple(sorted({lit.party for lit in clause}))


def run_offline(n: int, universe: Universe, protocol: str,
                expr: CnfExpression | None = None,
                config: EngineConfig | None = None,
                rng: random.Random | None = None,
                keypair: he.KeyPair | None = None) -> OfflineState:
    """Offline phase: keys, finalizer choice, pools, working vectors.

    The decider generates the key pair, publishes the ordered universe and
    public key, and picks the finalizer uniformly at random.  Every party
    then precomputes one pool of enc(0) and one of enc(r) per vector it
    will attend (one ciphertext per cell each), and the working vectors are
    created cell by cell from the enc(r) pools of randomly chosen attending
    parties.  The intersection protocol instead starts from fresh enc(0)
    cells, and the scalar union-emptiness variant from a fresh enc(1).
    """
    config = config or EngineConfig()
    rng = rng or random.SystemRandom()
    if n < 2:
        raise ValueError("need at least two parties")
    if universe.u < 1:
        raise ValueError("universe must not be empty")
    if protocol not in HE_PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if protocol == PROTO_GENERIC:
        if not isinstance(expr, CnfExpression):
            raise ValueError("the generic protocol needs a CnfExpression")
        if expr.max_party > n:
            raise ValueError(
                f"expression references S{expr.max_party} but only {n} parties exist")
    elif expr is not None:
        raise ValueError(f"{protocol} does not take an expression")

    started = time.perf_counter()
    trace = OperationTrace()
    keypair = keypair or he.keygen(config.key_bits, rng)
    transport = Transport()
    decider = Decider(keypair, trace, transport)
    crypto = _Crypto(keypair.public, rng, trace)

    finalizer = rng.randint(1, n)
    parties = list(range(1, n + 1))
    for party in parties:
        transport.send(DECIDER, party, "setup", {
            "universe": universe.elements,
            "public_key": keypair.public.n,
            "finalizer": finalizer,
        })

    # Vector plan: (label, initial-cell kind, attending parties).
    all_parties = tuple(parties)
    if protocol == PROTO_UNION:
        plan = [("V", "pooled_rand", all_parties)]
        cell_count = universe.u
    elif protocol == PROTO_UNION_EMPTINESS:
        plan = [("V", "one", all_parties)]
        cell_count = 1
    elif protocol == PROTO_INTERSECTION:
        plan = [("V", "zero", all_parties)]
        cell_count = universe.u
    else:
        plan = [(f"W^{k}", "pooled_rand", _clause_parties(clause))
                for k, clause in enumerate(expr.clauses, start=1)]
        cell_count = universe.u

    repo = SharedRepository(parties, cell_count, keypair.public,
                            lock_timeout=config.lock_timeout,
                            on_multiply=lambda: setattr(
                                trace, "multiplications", trace.multiplications + 1))

    pools: dict[tuple[int, str], dict[str, CiphertextPool]] = {}
    for label, _kind, attending in plan:
        for party in attending:
            pools[(party, label)] = {
                "zero": CiphertextPool(party, label, "enc(0)",
                                       [crypto.enc_zero() for _ in range(cell_count)]),
                "rand": CiphertextPool(party, label, "enc(r)",
                                       [crypto.enc_random_nonzero()
                                        for _ in range(cell_count)]),
            }

    attendance = {}
    creators = {}
    for label, kind, attending in plan:
        attendance[label] = attending
        chosen = tuple(rng.choice(attending) for _ in range(cell_count))
        creators[label] = chosen
        if kind == "pooled_rand":
            cells = [pools[(party, label)]["rand"].take() for party in chosen]
        elif kind == "zero":
            cells = [crypto.enc_zero() for _ in range(cell_count)]
        else:   # "one": the scalar emptiness cell
            cells = [crypto.enc(1)]
        repo.create_vector(label, cells, actor=min(attending))

    return OfflineState(
        n=n, universe=universe, protocol=protocol, expr=expr,
        public_key=keypair.public, finalizer=finalizer, repo=repo,
        pools=pools, attendance=attendance, creators=creators,
        transport=transport, decider=decider, crypto=crypto, trace=trace,
        rng=rng, config=config,
        offline_seconds=time.perf_counter() - started)


def _visit_order(state: OfflineState, parties: tuple[int, ...]) -> list[int]:
    order = list(parties)
    if state.config.randomize_visit_order:
        state.rng.shuffle(order)
    return order


def _apply_union_rule(state: OfflineState, label: str, party: int,
                      satisfied: list[bool]) -> None:
    """One locked session: replace on a satisfied cell, multiply otherwise.

    Both branches consume exactly one pooled enc(0) per cell, so the pool
    drain pattern reveals nothing about the party's set.
    """
    pool = state.pools[(party, label)]["zero"]

    def mutation(session):
        for j, hit in enumerate(satisfied):
            ct = pool.take()
            if hit:
                session.replace_cell(j, ct)
            else:
                session.multiply_cell(j, ct)

    state.repo.with_write_lock(label, party, mutation)


def _finalize_cells(state: OfflineState, cells: list[he.Ciphertext],
                    mode: str, scalar: bool = False) -> None:
    """Case handling at the finalizer, then hand-off to the decider."""
    info: dict = {}
    if mode == MODE_CARDINALITY:
        cells = list(cells)
        state.rng.shuffle(cells)
    elif mode == MODE_EMPTINESS and not scalar:
        cells, factors, pad = clone_pad(
            cells, state.crypto, state.rng, state.config, state.universe.u)
        info = {"clone_factors": factors, "pad_cells": pad}
    state.last_finalize_info = info
    state.transport.send(state.finalizer, DECIDER, "finalized_cells",
                         {"mode": mode, "cells": cells, "scalar": scalar})


def clone_pad(cells, crypto: _Crypto, rng: random.Random,
              config: EngineConfig, u: int):
    """Duplicate every cell a random number of times, re-randomized, plus
    random non-zero padding, shuffled: only "is any zero present" survives.

    Re-randomization matters: verbatim duplicates would let the decider
    group identical ciphertexts and recover the true zero count.
    """
    out = []
    factors = []
    for ct in cells:
        copies = rng.randint(config.clone_min, config.clone_max)
        factors.append(copies)
        for _ in range(copies):
            out.append(crypto.rerandomize(ct))
    pad = rng.randint(config.pad_lo_factor * u, config.pad_hi_factor * u)
    for _ in range(pad):
        out.append(crypto.enc_random_nonzero())
    rng.shuffle(out)
    return out, factors, pad


def _check_sets(state: OfflineState, sets: list[InputSet]) -> dict[int, frozenset[str]]:
    by_party = validate_inputs(sets, state.universe)
    if set(by_party) != set(state.parties):
        raise ValueError(f"need one input set for each of parties 1..{state.n}")
    return by_party


def protocol1_union(state: OfflineState, sets: list[InputSet],
                    mode: str) -> ProtocolResult:
    """Union of all input sets; mode "elements" or "cardinality"."""
    if state.protocol != PROTO_UNION:
        raise ValueError("offline state was not prepared for the union protocol")
    if mode == MODE_EMPTINESS:
        raise ValueError("emptiness of a union runs as protocol1_emptiness")
    if mode not in (MODE_ELEMENTS, MODE_CARDINALITY):
        raise ValueError(f"unknown mode {mode!r}")
    by_party = _check_sets(state, sets)
    started = time.perf_counter()
    for party in _visit_order(state, state.attendance["V"]):
        members = by_party[party]
        satisfied = [e in members for e in state.universe.elements]
        _apply_union_rule(state, "V", party, satisfied)
    cells = state.repo.finalize("V", state.finalizer)
    _finalize_cells(state, cells, mode)
    result = state.decider.decide(state.universe)
    state.online_seconds = time.perf_counter() - started
    return result


def protocol1_emptiness(state: OfflineState, sets: list[InputSet]) -> ProtocolResult:
    """Emptiness of the union via a single scalar cell, not a vector."""
    if state.protocol != PROTO_UNION_EMPTINESS:
        raise ValueError("offline state was not prepared for union emptiness")
    by_party = _check_sets(state, sets)
    started = time.perf_counter()
    for party in _visit_order(state, state.attendance["V"]):
        non_empty = bool(by_party[party])
        _apply_union_rule(state, "V", party, [non_empty])
    cells = state.repo.finalize("V", state.finalizer)
    _finalize_cells(state, cells, MODE_EMPTINESS, scalar=True)
    result = state.decider.decide()
    state.online_seconds = time.perf_counter() - started
    return result


def protocol2_intersection(state: OfflineState, sets: list[InputSet],
                           mode: str) -> ProtocolResult:
    """Intersection of all input sets, any mode."""
    if state.protocol != PROTO_INTERSECTION:
        raise ValueError("offline state was not prepared for the intersection protocol")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    by_party = _check_sets(state, sets)
    started = time.perf_counter()
    for party in _visit_order(state, state.attendance["V"]):
        members = by_party[party]
        zero_pool = state.pools[(party, "V")]["zero"]
        rand_pool = state.pools[(party, "V")]["rand"]

        def mutation(session, members=members, zero_pool=zero_pool,
                     rand_pool=rand_pool):
            for j, elem in enumerate(state.universe.elements):
                if elem in members:
                    session.multiply_cell(j, zero_pool.take())
                else:
                    session.multiply_cell(j, rand_pool.take())

        state.repo.with_write_lock("V", party, mutation)
    cells = state.repo.finalize("V", state.finalizer)
    _finalize_cells(state, cells, mode)
    result = state.decider.decide(state.universe)
    state.online_seconds = time.perf_counter() - started
    return result


def protocol3_generic(state: OfflineState, expr: CnfExpression,
                      sets: list[InputSet], mode: str) -> ProtocolResult:
    """CNF expression over the inputs: one union vector per clause, then the
    cell-wise product Z of all clause vectors at the finalizer."""
    if state.protocol != PROTO_GENERIC:
        raise ValueError("offline state was not prepared for the generic protocol")
    if expr != state.expr:
        raise ValueError("expression differs from the one the offline phase planned for")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    by_party = _check_sets(state, sets)
    started = time.perf_counter()
    for k, clause in enumerate(expr.clauses, start=1):
        label = f"W^{k}"
        literal_of = {lit.party: lit for lit in clause}
        for party in _visit_order(state, state.attendance[label]):
            lit = literal_of[party]
            members = by_party[party]
            satisfied = [(e in members) != lit.negated
                         for e in state.universe.elements]
            _apply_union_rule(state, label, party, satisfied)

    z_cells = None
    for k in range(1, expr.beta + 1):
        cells = state.repo.finalize(f"W^{k}", state.finalizer)
        if z_cells is None:
            z_cells = cells
        else:
            z_cells = [state.crypto.add(a, b) for a, b in zip(z_cells, cells)]
    _finalize_cells(state, z_cells, mode)
    result = state.decider.decide(state.universe)
    state.online_seconds = time.perf_counter() - started
    return result
