"""Hardened execution of the generic protocol against misbehaving parties.

The semi-honest protocol is repeated n times with a rotated party order so
that every party leads exactly once.  Within one repetition:

1. The leader initializes every clause vector naming its set with one and
   the same cell list (and every clause naming its complement with one
   complementary list), so it cannot feed different memberships into
   different clauses.  Before installation the leader submits, per cell,
   the pair of "set side" and "complement side" ciphertexts in random
   order; the decider confirms each pair decrypts to exactly {0, 1}
   without learning which side is which.  The leader then publishes one
   random scalar per cell and raises both sides to it, which any party can
   recompute bit for bit from the published values.
2. The remaining parties run the usual union rule per clause.
3. Every party independently computes the product vector Z and submits it;
   the decider decrypts all of them and requires every submission in every
   repetition to yield the same result.
4. After the last repetition every party multiplies together the final
   values of all cells it personally set to zero, masks the product with a
   fresh enc(0), and submits it; a non-zero decryption proves someone
   overwrote a zero and narrows the suspects to the parties that wrote
   those cells.

Detection is deliberately conservative: a verdict names suspects, never
proof, and an inconsistent-input cheater that changes nothing observable
stays invisible.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

from . import he
from .protocols import (Decider, EngineConfig, OperationTrace,
                        ProtocolResult, Transport, _Crypto, clone_pad,
                        MODE_CARDINALITY, MODE_ELEMENTS, MODE_EMPTINESS, MODES)
from .repository import DECIDER, CiphertextPool, SharedRepository
from .setops import CnfExpression, InputSet, Universe, validate_inputs

CHEAT_STRATEGIES = ("i", "ii", "iii", "iv")

VERDICT_CONSISTENT = "consistent"
VERDICT_CHEATING = "cheating_detected"


@dataclass(frozen=True)
class Adversary:
    """Injected misbehavior for one party.

    i   - input inconsistency: uses its true set when leading (the pair
          check pins it down there) and the set with ``element`` toggled
          in every other repetition.
    ii  - incorrect complement: as leader, builds the complement-side
          initialization from un-inverted membership at ``cell``.
    iii - incorrect cell rule: in clause ``clause``, replaces cell ``cell``
          with a fresh enc(r) where the rule demands multiplying by enc(0).
    iv  - corrupt submission: overwrites cell ``cell`` of its own Z copy
          with a fresh enc(r) before submitting.
    """

    strategy: str
    party: int
    element: str | None = None
    clause: int | None = None
    cell: int | None = None

    def __post_init__(self):
        if self.strategy not in CHEAT_STRATEGIES:
            raise ValueError(f"unknown cheat strategy {self.strategy!r}")
        if self.strategy == "i" and self.element is None:
            raise ValueError("cheat i needs the element to toggle")
        if self.strategy == "iii" and self.clause is None:
            raise ValueError("cheat iii needs a target clause")


@dataclass(frozen=True)
class VerifiablePair:
    """One cell's two initializations, submitted in random order."""

    index: int
    first: he.Ciphertext
    second: he.Ciphertext


@dataclass
class LeaderInit:
    leader: int
    pos_clauses: tuple[int, ...]        # 1-based clause numbers naming S_L
    neg_clauses: tuple[int, ...]        # clause numbers naming !S_L
    pre_pos: list[he.Ciphertext]        # enc(0)/enc(1) before scaling
    pre_neg: list[he.Ciphertext]
    pairs: list[VerifiablePair]
    scalars: list[int] = field(default_factory=list)
    scaled_pos: list[he.Ciphertext] = field(default_factory=list)
    scaled_neg: list[he.Ciphertext] = field(default_factory=list)


@dataclass
class RepetitionTranscript:
    repetition: int
    leader: int
    order: tuple[int, ...]
    leader_init: LeaderInit | None
    pair_check_ok: bool
    bad_pair_cells: tuple[int, ...]
    scaling_ok: bool
    repo: SharedRepository
    final_cells: dict[str, list[he.Ciphertext]]
    known_zero: dict[int, list[tuple[str, int]]]    # party -> [(label, cell)]
    submissions: dict[int, ProtocolResult]
    log_lines: list[str]


@dataclass
class HardenedReport:
    mode: str
    n: int
    verdict: str
    result: ProtocolResult | None
    aborted: bool = False
    abort_repetition: int | None = None
    culprit: int | None = None
    suspects: tuple[int, ...] = ()
    pair_failures: tuple = ()                   # (repetition, leader, cells)
    mismatches: tuple[str, ...] = ()
    audit_passed: dict = field(default_factory=dict)
    audit_suspects: dict = field(default_factory=dict)
    scaling_ok: bool = True
    repetition_results: tuple = ()
    transcripts: list = field(default_factory=list)
    trace: OperationTrace | None = None
    transport: Transport | None = None

    @property
    def detected(self) -> bool:
        return self.verdict == VERDICT_CHEATING


def leader_initialize(crypto: _Crypto, universe: Universe, expr: CnfExpression,
                      leader: int, members: frozenset[str],
                      rng: random.Random,
                      complement_flip_cell: int | None = None) -> LeaderInit | None:
    """Build the leader's shared clause initializations and check pairs.

    Both sides are always built, even when the expression only ever uses
    one of them: the unused side still goes into the pairs so the decider
    can confirm the complement was formed correctly.  Returns None when
    the leader appears in no clause at all.
    """
    pos_clauses = tuple(k for k, clause in enumerate(expr.clauses, start=1)
                        if any(l.party == leader and not l.negated for l in clause))
    neg_clauses = tuple(k for k, clause in enumerate(expr.clauses, start=1)
                        if any(l.party == leader and l.negated for l in clause))
    if not pos_clauses and not neg_clauses:
        return None
    pre_pos = []
    pre_neg = []
    for j, elem in enumerate(universe.elements):
        member = elem in members
        complement = not member
        if complement_flip_cell is not None and j == complement_flip_cell:
            complement = member      # cheat ii: complement not inverted here
        pre_pos.append(crypto.enc(0 if member else 1))
        pre_neg.append(crypto.enc(0 if complement else 1))
    pairs = []
    for j in range(universe.u):
        a, b = pre_pos[j], pre_neg[j]
        if rng.random() < 0.5:
            a, b = b, a
        pairs.append(VerifiablePair(index=j, first=a, second=b))
    return LeaderInit(leader=leader, pos_clauses=pos_clauses,
                      neg_clauses=neg_clauses, pre_pos=pre_pos,
                      pre_neg=pre_neg, pairs=pairs)


def check_pairs(decider: Decider, pairs: list[VerifiablePair]) -> tuple[int, ...]:
    """Decider side: indexes whose pair does not decrypt to {0, 1}."""
    bad = []
    for pair in pairs:
        values = decider.decrypt_values([pair.first, pair.second])
        if sorted(values) != [0, 1]:
            bad.append(pair.index)
    return tuple(bad)


def verify_leader_installation(repo: SharedRepository, verifier: int,
                               init: LeaderInit, pk: he.PublicKey) -> bool:
    """Recompute the published scaling and compare against the repository.

    Any party can run this: the pre-scaling pairs and the scalars are
    public, and the init log entries hold the installed cell values.
    """
    entries = {e.label: e for e in repo.audit(verifier) if e.action == "init"}
    for side_clauses, pre in ((init.pos_clauses, init.pre_pos),
                              (init.neg_clauses, init.pre_neg)):
        expected = None
        for k in side_clauses:
            entry = entries.get(f"W^{k}")
            if entry is None:
                return False
            if expected is None:
                expected = tuple(
                    pow(pre[j].value, init.scalars[j], pk.n_sq)
                    for j in range(len(pre)))
            if tuple(entry.operand) != expected:
                return False
    return True


def _effective_members(adversary: Adversary | None, party: int, leader: int,
                       true_members: frozenset[str]) -> frozenset[str]:
    if (adversary and adversary.strategy == "i" and adversary.party == party
            and leader != party):
        return true_members ^ {adversary.element}
    return true_members


def _interpret(values: list[int], mode: str, universe: Universe) -> ProtocolResult:
    if mode == MODE_ELEMENTS:
        return ProtocolResult(mode=mode, elements=frozenset(
            universe.elements[j] for j, v in enumerate(values) if v == 0))
    if mode == MODE_CARDINALITY:
        return ProtocolResult(mode=mode, count=sum(1 for v in values if v == 0))
    return ProtocolResult(mode=mode, empty=not any(v == 0 for v in values))


def run_hardened(n: int, universe: Universe, expr: CnfExpression,
                 sets: list[InputSet], mode: str,
                 config: EngineConfig | None = None,
                 rng: random.Random | None = None,
                 keypair: he.KeyPair | None = None,
                 adversary: Adversary | None = None) -> HardenedReport:
    """Run the generic protocol n times with all hardening checks."""
    config = config or EngineConfig()
    rng = rng or random.SystemRandom()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not isinstance(expr, CnfExpression):
        raise ValueError("hardened runs take a CnfExpression")
    if expr.max_party > n:
        raise ValueError(f"expression references S{expr.max_party}, n={n}")
    if adversary and not 1 <= adversary.party <= n:
        raise ValueError("adversary party out of range")
    by_party = validate_inputs(sets, universe)
    if set(by_party) != set(range(1, n + 1)):
        raise ValueError(f"need one input set for each of parties 1..{n}")

    trace = OperationTrace()
    transport = Transport()
    keypair = keypair or he.keygen(config.key_bits, rng)
    decider = Decider(keypair, trace, transport)
    crypto = _Crypto(keypair.public, rng, trace)
    parties = list(range(1, n + 1))
    labels = [f"W^{k}" for k in range(1, expr.beta + 1)]
    clause_parties = {f"W^{k}": tuple(sorted({l.party for l in clause}))
                      for k, clause in enumerate(expr.clauses, start=1)}
    literal_of = {f"W^{k}": {l.party: l for l in clause}
                  for k, clause in enumerate(expr.clauses, start=1)}

    transcripts: list[RepetitionTranscript] = []
    pair_failures: list = []

    for rep, leader in enumerate(parties, start=1):
        order = parties[leader - 1:] + parties[:leader - 1]
        repo = SharedRepository(parties, universe.u, keypair.public,
                                lock_timeout=config.lock_timeout,
                                on_multiply=lambda: setattr(
                                    trace, "multiplications",
                                    trace.multiplications + 1))
        pools: dict[tuple[int, str], dict[str, CiphertextPool]] = {}
        for label in labels:
            for party in clause_parties[label]:
                pools[(party, label)] = {
                    "zero": CiphertextPool(party, label, "enc(0)",
                                           [crypto.enc_zero()
                                            for _ in range(universe.u)]),
                    "rand": CiphertextPool(party, label, "enc(r)",
                                           [crypto.enc_random_nonzero()
                                            for _ in range(universe.u)]),
                }

        known_zero: dict[int, list[tuple[str, int]]] = {p: [] for p in parties}

        # Step 1: leader initialization with the decider's pair check.
        flip = None
        if adversary and adversary.strategy == "ii" and adversary.party == leader:
            flip = adversary.cell if adversary.cell is not None else 0
        init = leader_initialize(crypto, universe, expr, leader,
                                 by_party[leader], rng,
                                 complement_flip_cell=flip)
        pair_check_ok = True
        bad_cells: tuple[int, ...] = ()
        if init is not None:
            transport.send(leader, DECIDER, "verifiable_pairs",
                           {"repetition": rep, "pairs": init.pairs})
            msg = transport.receive(DECIDER, "verifiable_pairs")
            bad_cells = check_pairs(decider, msg.payload["pairs"])
            pair_check_ok = not bad_cells
            transport.send(DECIDER, leader, "pair_verdict",
                           {"repetition": rep, "ok": pair_check_ok,
                            "cells": bad_cells})
            transport.receive(leader, "pair_verdict")
        if not pair_check_ok:
            pair_failures.append((rep, leader, bad_cells))
            transcripts.append(RepetitionTranscript(
                repetition=rep, leader=leader, order=tuple(order),
                leader_init=init, pair_check_ok=False, bad_pair_cells=bad_cells,
                scaling_ok=True, repo=repo, final_cells={}, known_zero=known_zero,
                submissions={}, log_lines=repo.export_log(leader)))
            return HardenedReport(
                mode=mode, n=n, verdict=VERDICT_CHEATING, result=None,
                aborted=True, abort_repetition=rep, culprit=leader,
                suspects=(leader,), pair_failures=tuple(pair_failures),
                mismatches=(f"repetition {rep}: pair check failed at cells "
                            f"{list(bad_cells)}",),
                transcripts=transcripts,
                trace=trace, transport=transport)

        if init is not None:
            init.scalars = [rng.randrange(1, keypair.public.n)
                            for _ in range(universe.u)]
            init.scaled_pos = [crypto.scalar_pow(ct, a)
                               for ct, a in zip(init.pre_pos, init.scalars)]
            init.scaled_neg = [crypto.scalar_pow(ct, a)
                               for ct, a in zip(init.pre_neg, init.scalars)]
            for k in init.pos_clauses:
                repo.create_vector(f"W^{k}", init.scaled_pos, actor=leader)
            for k in init.neg_clauses:
                repo.create_vector(f"W^{k}", init.scaled_neg, actor=leader)
            members = by_party[leader]
            for k in init.pos_clauses:
                known_zero[leader] += [(f"W^{k}", j)
                                       for j, e in enumerate(universe.elements)
                                       if e in members]
            for k in init.neg_clauses:
                known_zero[leader] += [(f"W^{k}", j)
                                       for j, e in enumerate(universe.elements)
                                       if e not in members]

        leader_labels = {f"W^{k}" for k in
                         (init.pos_clauses + init.neg_clauses)} if init else set()
        for label in labels:
            if label in leader_labels:
                continue
            attending = clause_parties[label]
            chosen = [rng.choice(attending) for _ in range(universe.u)]
            cells = [pools[(party, label)]["rand"].take() for party in chosen]
            repo.create_vector(label, cells, actor=min(attending))

        # Scaling verification by every non-leader (they share the outcome).
        scaling_ok = True
        if init is not None:
            for verifier in parties:
                if verifier == leader:
                    continue
                if not verify_leader_installation(repo, verifier, init,
                                                  keypair.public):
                    scaling_ok = False
                    break

        # Step 2: the remaining parties run the union rule per clause.
        for party in order:
            if party == leader:
                continue
            members = _effective_members(adversary, party, leader,
                                         by_party[party])
            for label in labels:
                if party not in clause_parties[label]:
                    continue
                lit = literal_of[label][party]
                zero_pool = pools[(party, label)]["zero"]
                cheat_cell = None
                if (adversary and adversary.strategy == "iii"
                        and adversary.party == party
                        and label == f"W^{adversary.clause}"):
                    cheat_cell = adversary.cell if adversary.cell is not None else 0

                def mutation(session, members=members, lit=lit,
                             zero_pool=zero_pool, cheat_cell=cheat_cell,
                             party=party, label=label):
                    for j, elem in enumerate(universe.elements):
                        satisfied = (elem in members) != lit.negated
                        ct = zero_pool.take()
                        if satisfied:
                            session.replace_cell(j, ct)
                            known_zero[party].append((label, j))
                        elif j == cheat_cell:
                            session.replace_cell(j, crypto.enc_random_nonzero())
                        else:
                            session.multiply_cell(j, ct)

                repo.with_write_lock(label, party, mutation)

        # Step 3: every party submits its own Z.
        final_cells = {label: repo.read(label, leader) for label in labels}
        submissions: dict[int, ProtocolResult] = {}
        for party in parties:
            z = None
            for label in labels:
                cells = repo.read(label, party)
                z = cells if z is None else [crypto.add(a, b)
                                             for a, b in zip(z, cells)]
            if (adversary and adversary.strategy == "iv"
                    and adversary.party == party):
                target = adversary.cell if adversary.cell is not None else 0
                z = list(z)
                z[target] = crypto.enc_random_nonzero()
            if mode == MODE_CARDINALITY:
                z = list(z)
                rng.shuffle(z)
            elif mode == MODE_EMPTINESS:
                z, _, _ = clone_pad(z, crypto, rng, config, universe.u)
            transport.send(party, DECIDER, "z_submission",
                           {"repetition": rep, "party": party, "cells": z})
            msg = transport.receive(DECIDER, "z_submission")
            values = decider.decrypt_values(msg.payload["cells"])
            submissions[party] = _interpret(values, mode, universe)

        transcripts.append(RepetitionTranscript(
            repetition=rep, leader=leader, order=tuple(order),
            leader_init=init, pair_check_ok=True, bad_pair_cells=(),
            scaling_ok=scaling_ok, repo=repo, final_cells=final_cells,
            known_zero=known_zero, submissions=submissions,
            log_lines=repo.export_log(leader)))

    # Cross-checks over all repetitions.
    mismatches: list[str] = []
    suspects: set[int] = set()
    rep_consensus: list[ProtocolResult | None] = []
    for t in transcripts:
        values = list(t.submissions.values())
        buckets: dict = {}
        for party, res in t.submissions.items():
            buckets.setdefault(res, []).append(party)
        if len(buckets) > 1:
            majority = max(buckets.values(), key=len)
            for res, who in buckets.items():
                if who is not majority:
                    suspects.update(who)
            mismatches.append(
                f"repetition {t.repetition}: submissions disagree "
                f"({ {str(k.as_record()): v for k, v in buckets.items()} })")
            rep_consensus.append(None)
        else:
            rep_consensus.append(values[0])
    consensus_values = [r for r in rep_consensus if r is not None]
    if consensus_values and any(r != consensus_values[0] for r in consensus_values):
        distinct: dict = {}
        for t, res in zip(transcripts, rep_consensus):
            distinct.setdefault(res, []).append(t)
        minority_reps = min(distinct.values(), key=len)
        for t in minority_reps:
            suspects.add(t.leader)
        mismatches.append(
            "repetition results disagree: "
            + "; ".join(f"rep {t.repetition} (leader {t.leader}) -> "
                        f"{rep_consensus[t.repetition - 1].as_record()}"
                        for t in transcripts
                        if rep_consensus[t.repetition - 1] is not None))

    scaling_all_ok = all(t.scaling_ok for t in transcripts)
    if not scaling_all_ok:
        for t in transcripts:
            if not t.scaling_ok:
                suspects.add(t.leader)
                mismatches.append(
                    f"repetition {t.repetition}: leader scaling did not verify")

    # Step 4: zero-product audit across all repetitions.
    audit_passed, audit_suspects = zero_product_audit(
        transcripts, crypto, decider, transport)
    for auditor, ok in audit_passed.items():
        if not ok:
            suspects.update(audit_suspects.get(auditor, ()))

    consistent = (not mismatches and scaling_all_ok
                  and all(audit_passed.values()))
    result = consensus_values[0] if consistent and consensus_values else None
    return HardenedReport(
        mode=mode, n=n,
        verdict=VERDICT_CONSISTENT if consistent else VERDICT_CHEATING,
        result=result, suspects=tuple(sorted(suspects)),
        pair_failures=tuple(pair_failures), mismatches=tuple(mismatches),
        audit_passed=audit_passed, audit_suspects=audit_suspects,
        scaling_ok=scaling_all_ok,
        repetition_results=tuple(
            {p: r.as_record() for p, r in t.submissions.items()}
            for t in transcripts),
        transcripts=transcripts, trace=trace, transport=transport)


def zero_product_audit(transcripts: list[RepetitionTranscript],
                       crypto: _Crypto, decider: Decider,
                       transport: Transport) -> tuple[dict, dict]:
    """Every party multiplies the final values of its known-zero cells
    across all repetitions, masks with a fresh enc(0), and submits.

    Returns (auditor -> bool, auditor -> suspect parties).  A failing
    product can only localize to the parties that wrote the audited cells,
    so suspects are exactly the other writers found in the logs.
    """
    if not transcripts:
        return {}, {}
    parties = sorted(transcripts[0].known_zero)
    passed: dict[int, bool] = {}
    suspects: dict[int, tuple[int, ...]] = {}
    for auditor in parties:
        acc = None
        audited: list[tuple[int, str, int]] = []
        for t in transcripts:
            for label, j in t.known_zero.get(auditor, ()):
                if label not in t.final_cells:
                    continue
                cell = t.final_cells[label][j]
                acc = cell if acc is None else crypto.add(acc, cell)
                audited.append((t.repetition, label, j))
        masked = crypto.rerandomize(acc) if acc is not None else crypto.enc_zero()
        transport.send(auditor, DECIDER, "audit_product",
                       {"party": auditor, "cells": [masked]})
        msg = transport.receive(DECIDER, "audit_product")
        value = decider.decrypt_values(msg.payload["cells"])[0]
        ok = value == 0
        passed[auditor] = ok
        if not ok:
            writers: set[int] = set()
            for rep, label, j in audited:
                t = transcripts[rep - 1]
                for entry in t.repo.audit(auditor, label):
                    if (entry.action in ("replace_cell", "multiply_cell")
                            and entry.index == j and entry.actor != auditor):
                        writers.add(entry.actor)
            suspects[auditor] = tuple(sorted(writers))
    return passed, suspects
