"""Run orchestration: descriptors in, result records and transcripts out.

A run descriptor is a small JSON document naming the protocol, mode,
inputs, key size, and an optional seed and adversary.  ``run`` executes it
with one actor per party plus a decider over the in-process transport and
returns a deterministic result record (no timings) together with a wall
clock report and a canonical transcript string.  Two runs from the same
seeded descriptor produce byte-identical records and transcripts.

``verify`` replays the same inputs through the plaintext oracle and diffs.
``bench_sweep`` times one protocol over an axis of u or n values.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import random
import time
from dataclasses import dataclass, asdict

from . import hashing, he, protocols, setops
from .hardening import Adversary, HardenedReport, run_hardened
from .protocols import (EngineConfig, OfflineState, ProtocolResult,
                        count_operations,
                        MODE_CARDINALITY, MODE_ELEMENTS, MODE_EMPTINESS, MODES,
                        PROTO_GENERIC, PROTO_INTERSECTION, PROTO_UNION,
                        PROTO_UNION_EMPTINESS)
from .repository import DECIDER
from .setops import CnfExpression, DnfExpression, InputSet, Literal, Universe

HASH_CARDINALITY = "hash_cardinality"
HASH_EMPTINESS = "hash_emptiness"

PROTOCOL_NAMES = (PROTO_UNION, PROTO_INTERSECTION, PROTO_GENERIC,
                  HASH_CARDINALITY, HASH_EMPTINESS)

VALID_MODES = {
    PROTO_UNION: MODES,
    PROTO_INTERSECTION: MODES,
    PROTO_GENERIC: MODES,
    HASH_CARDINALITY: (MODE_CARDINALITY,),
    HASH_EMPTINESS: (MODE_EMPTINESS,),
}

_DESCRIPTOR_KEYS = {
    "protocol", "mode", "n", "expression", "universe", "universe_file",
    "sets", "set_files", "key_bits", "seed", "hardened", "adversary",
    "randomize_visit_order", "size_hint", "multiplier",
}


@dataclass(frozen=True)
class RunDescriptor:
    protocol: str
    mode: str
    sets: tuple[tuple[int, tuple[str, ...]], ...]
    universe: tuple[str, ...] | None = None
    expression: str | None = None
    key_bits: int = he.DEFAULT_KEY_BITS
    seed: int | None = None
    hardened: bool = False
    adversary: Adversary | None = None
    randomize_visit_order: bool = False
    size_hint: int | None = None
    multiplier: int = hashing.DEFAULT_MULTIPLIER

    @property
    def n(self) -> int:
        return len(self.sets)

    def input_sets(self) -> list[InputSet]:
        return [InputSet(party, frozenset(members)) for party, members in self.sets]

    def as_dict(self) -> dict:
        doc: dict = {
            "protocol": self.protocol,
            "mode": self.mode,
            "sets": {str(party): sorted(members) for party, members in self.sets},
            "key_bits": self.key_bits,
            "seed": self.seed,
        }
        if self.universe is not None:
            doc["universe"] = list(self.universe)
        if self.expression is not None:
            doc["expression"] = self.expression
        if self.hardened:
            doc["hardened"] = True
        if self.adversary is not None:
            doc["adversary"] = {k: v for k, v in asdict(self.adversary).items()
                                if v is not None}
        if self.randomize_visit_order:
            doc["randomize_visit_order"] = True
        if self.size_hint is not None:
            doc["size_hint"] = self.size_hint
        if self.multiplier != hashing.DEFAULT_MULTIPLIER:
            doc["multiplier"] = self.multiplier
        return doc


def _normalize_protocol(name: str) -> str:
    return name.strip().lower().replace("-", "_")


def descriptor_from_dict(doc: dict, base_dir: str = ".") -> RunDescriptor:
    """Validate and resolve a descriptor document (paths relative to
    ``base_dir``)."""
    unknown = set(doc) - _DESCRIPTOR_KEYS
    if unknown:
        raise ValueError(f"unknown descriptor keys: {sorted(unknown)}")
    try:
        protocol = _normalize_protocol(doc["protocol"])
        mode = doc["mode"].strip().lower()
    except KeyError as exc:
        raise ValueError(f"descriptor missing {exc.args[0]!r}") from None
    if protocol not in PROTOCOL_NAMES:
        raise ValueError(f"unknown protocol {doc['protocol']!r}")
    if mode not in VALID_MODES[protocol]:
        raise ValueError(f"protocol {protocol} cannot produce mode {mode!r}")

    if "sets" in doc and "set_files" in doc:
        raise ValueError("give either inline sets or set_files, not both")
    sets: list[tuple[int, tuple[str, ...]]] = []
    if "sets" in doc:
        for party, members in doc["sets"].items():
            sets.append((int(party), tuple(members)))
    elif "set_files" in doc:
        for party, path in doc["set_files"].items():
            full = os.path.join(base_dir, path)
            sets.append((int(party), tuple(setops.load_elements(full))))
    else:
        raise ValueError("descriptor needs sets or set_files")
    sets.sort()
    parties = [party for party, _ in sets]
    if parties != list(range(1, len(parties) + 1)):
        raise ValueError(f"party indices must be 1..n, got {parties}")
    if "n" in doc and doc["n"] != len(sets):
        raise ValueError(f"descriptor says n={doc['n']} but has {len(sets)} sets")

    universe = None
    if "universe" in doc and "universe_file" in doc:
        raise ValueError("give either inline universe or universe_file, not both")
    if "universe" in doc:
        universe = tuple(doc["universe"])
    elif "universe_file" in doc:
        universe = tuple(setops.load_elements(
            os.path.join(base_dir, doc["universe_file"])))
    if protocol in (PROTO_UNION, PROTO_INTERSECTION, PROTO_GENERIC):
        if universe is None:
            raise ValueError(f"protocol {protocol} needs a universe")
    elif universe is not None:
        raise ValueError("hash protocols take no universe")

    expression = doc.get("expression")
    if protocol in (PROTO_GENERIC, HASH_CARDINALITY, HASH_EMPTINESS):
        if not expression:
            raise ValueError(f"protocol {protocol} needs an expression")

    adversary = None
    if doc.get("adversary") is not None:
        if not doc.get("hardened"):
            raise ValueError("adversary injection requires hardened: true")
        adversary = Adversary(**doc["adversary"])
    if doc.get("hardened"):
        if protocol != PROTO_GENERIC:
            raise ValueError("hardened mode applies to the generic protocol")

    return RunDescriptor(
        protocol=protocol, mode=mode, sets=tuple(sets), universe=universe,
        expression=expression, key_bits=doc.get("key_bits", he.DEFAULT_KEY_BITS),
        seed=doc.get("seed"), hardened=bool(doc.get("hardened", False)),
        adversary=adversary,
        randomize_visit_order=bool(doc.get("randomize_visit_order", False)),
        size_hint=doc.get("size_hint"),
        multiplier=doc.get("multiplier", hashing.DEFAULT_MULTIPLIER))


def load_descriptor(path: str) -> RunDescriptor:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return descriptor_from_dict(doc, base_dir=os.path.dirname(path) or ".")


@dataclass
class BenchReport:
    protocol: str
    mode: str
    n: int
    u: int
    alpha: int
    beta: int
    key_bits: int
    seed: int | None
    operations: dict[str, int]
    offline_seconds: float
    online_seconds: float

    @property
    def total_seconds(self) -> float:
        return self.offline_seconds + self.online_seconds

    def as_row(self) -> dict:
        row = {"protocol": self.protocol, "mode": self.mode, "n": self.n,
               "u": self.u, "alpha": self.alpha, "beta": self.beta,
               "key_bits": self.key_bits, "seed": self.seed}
        row.update(self.operations)
        row["offline_seconds"] = round(self.offline_seconds, 6)
        row["online_seconds"] = round(self.online_seconds, 6)
        return row


@dataclass
class RunOutcome:
    descriptor: RunDescriptor
    record: dict
    report: BenchReport
    transcript: str
    result: ProtocolResult | None
    state: OfflineState | None = None
    hardened: HardenedReport | None = None
    hash_context: dict | None = None

    @property
    def transport(self):
        if self.state is not None:
            return self.state.transport
        if self.hardened is not None:
            return self.hardened.transport
        return self.hash_context["transport"] if self.hash_context else None


# --- canonical transcript ----------------------------------------------------


def _canonical(obj) -> bytes:
    if obj is None:
        return b"null"
    if isinstance(obj, bool):
        return b"true" if obj else b"false"
    if isinstance(obj, int):
        return str(obj).encode()
    if isinstance(obj, str):
        return b"s:" + obj.encode("utf-8")
    if isinstance(obj, bytes):
        return b"b:" + obj.hex().encode()
    if isinstance(obj, he.Ciphertext):
        return b"ct:" + str(obj.value).encode()
    if isinstance(obj, (list, tuple)):
        return b"[" + b",".join(_canonical(x) for x in obj) + b"]"
    if isinstance(obj, (set, frozenset)):
        return b"{" + b",".join(sorted(_canonical(x) for x in obj)) + b"}"
    if isinstance(obj, dict):
        items = sorted((_canonical(k), _canonical(v)) for k, v in obj.items())
        return b"{" + b",".join(k + b":" + v for k, v in items) + b"}"
    if hasattr(obj, "__dataclass_fields__"):
        pairs = [(name, getattr(obj, name)) for name in obj.__dataclass_fields__]
        return b"dc:" + _canonical(dict(pairs))
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def payload_digest(payload) -> str:
    return hashlib.blake2b(_canonical(payload), digest_size=16).hexdigest()


def _transcript(descriptor: RunDescriptor, record: dict,
                log_lines: list[str], transport) -> str:
    lines = [f"descriptor|{json.dumps(descriptor.as_dict(), sort_keys=True)}"]
    lines += [f"log|{line}" for line in log_lines]
    for msg in transport.history:
        lines.append(
            f"msg|{msg.sender}|{msg.recipient}|{msg.kind}|{payload_digest(msg.payload)}")
    lines.append(f"record|{json.dumps(record, sort_keys=True)}")
    return "\n".join(lines) + "\n"


# --- execution ---------------------------------------------------------------


def _expr_shape(descriptor: RunDescriptor,
                expr: CnfExpression | DnfExpression | None) -> tuple[int, int]:
    n = descriptor.n
    if expr is None:
        # union is one clause of n literals; intersection n singleton clauses
        return (n, 1) if descriptor.protocol == PROTO_UNION else (1, n)
    groups = expr.clauses if isinstance(expr, CnfExpression) else expr.terms
    return max(len(g) for g in groups), len(groups)


def run(descriptor: RunDescriptor) -> RunOutcome:
    """Execute a descriptor end to end and assemble record plus transcript."""
    rng = (random.Random(descriptor.seed) if descriptor.seed is not None
           else random.SystemRandom())
    if descriptor.protocol in (HASH_CARDINALITY, HASH_EMPTINESS):
        return _run_hash(descriptor, rng)
    if descriptor.hardened:
        return _run_hardened(descriptor, rng)
    return _run_he(descriptor, rng)


def _base_record(descriptor: RunDescriptor) -> dict:
    return {
        "protocol": descriptor.protocol,
        "mode": descriptor.mode,
        "n": descriptor.n,
        "key_bits": descriptor.key_bits,
        "seed": descriptor.seed,
        "hardened": descriptor.hardened,
    }


def _run_he(descriptor: RunDescriptor, rng: random.Random) -> RunOutcome:
    universe = Universe(descriptor.universe)
    sets = descriptor.input_sets()
    config = EngineConfig(key_bits=descriptor.key_bits,
                          randomize_visit_order=descriptor.randomize_visit_order)
    expr = None
    if descriptor.protocol == PROTO_GENERIC:
        expr = setops.as_cnf(setops.parse_expression(descriptor.expression))
    internal = descriptor.protocol
    if descriptor.protocol == PROTO_UNION and descriptor.mode == MODE_EMPTINESS:
        internal = PROTO_UNION_EMPTINESS

    state = protocols.run_offline(descriptor.n, universe, internal, expr=expr,
                                  config=config, rng=rng)
    if internal == PROTO_UNION:
        result = protocols.protocol1_union(state, sets, descriptor.mode)
    elif internal == PROTO_UNION_EMPTINESS:
        result = protocols.protocol1_emptiness(state, sets)
    elif internal == PROTO_INTERSECTION:
        result = protocols.protocol2_intersection(state, sets, descriptor.mode)
    else:
        result = protocols.protocol3_generic(state, expr, sets, descriptor.mode)

    record = _base_record(descriptor)
    record.update({
        "u": universe.u,
        "finalizer": state.finalizer,
        "expression": str(expr) if expr is not None else None,
        "result": result.as_record(),
        "operations": count_operations(state.trace),
    })
    alpha, beta = _expr_shape(descriptor, expr)
    report = BenchReport(
        protocol=descriptor.protocol, mode=descriptor.mode, n=descriptor.n,
        u=universe.u, alpha=alpha, beta=beta, key_bits=descriptor.key_bits,
        seed=descriptor.seed, operations=count_operations(state.trace),
        offline_seconds=state.offline_seconds,
        online_seconds=state.online_seconds)
    transcript = _transcript(descriptor, record,
                             state.repo.export_log(actor=1), state.transport)
    return RunOutcome(descriptor=descriptor, record=record, report=report,
                      transcript=transcript, result=result, state=state)


def _run_hardened(descriptor: RunDescriptor, rng: random.Random) -> RunOutcome:
    universe = Universe(descriptor.universe)
    sets = descriptor.input_sets()
    config = EngineConfig(key_bits=descriptor.key_bits,
                          randomize_visit_order=descriptor.randomize_visit_order)
    expr = setops.as_cnf(setops.parse_expression(descriptor.expression))
    started = time.perf_counter()
    hardened = run_hardened(descriptor.n, universe, expr, sets,
                            descriptor.mode, config=config, rng=rng,
                            adversary=descriptor.adversary)
    elapsed = time.perf_counter() - started

    record = _base_record(descriptor)
    record.update({
        "u": universe.u,
        "expression": str(expr),
        "result": hardened.result.as_record() if hardened.result else None,
        "verdict": hardened.verdict,
        "aborted": hardened.aborted,
        "culprit": hardened.culprit,
        "suspects": list(hardened.suspects),
        "audit_passed": {str(p): ok for p, ok in hardened.audit_passed.items()},
        "operations": count_operations(hardened.trace),
    })
    alpha, beta = _expr_shape(descriptor, expr)
    report = BenchReport(
        protocol=descriptor.protocol, mode=descriptor.mode, n=descriptor.n,
        u=universe.u, alpha=alpha, beta=beta, key_bits=descriptor.key_bits,
        seed=descriptor.seed, operations=count_operations(hardened.trace),
        offline_seconds=0.0, online_seconds=elapsed)
    log_lines = [line for t in hardened.transcripts
                 for line in [f"repetition {t.repetition} leader {t.leader}"]
                 + t.log_lines]
    transcript = _transcript(descriptor, record, log_lines, hardened.transport)
    return RunOutcome(descriptor=descriptor, record=record, report=report,
                      transcript=transcript, result=hardened.result,
                      hardened=hardened)


def _run_hash(descriptor: RunDescriptor, rng: random.Random) -> RunOutcome:
    sets = descriptor.input_sets()
    n = descriptor.n
    expr = setops.as_dnf(setops.parse_expression(descriptor.expression))
    if expr.max_party > n:
        raise ValueError(f"expression references S{expr.max_party}, n={n}")
    emptiness = descriptor.protocol == HASH_EMPTINESS
    size_hint = descriptor.size_hint or max(1, max(len(s.members) for s in sets))

    offline_started = time.perf_counter()
    keys = hashing.make_shared_keys(n, rng, emptiness=emptiness)
    plan = hashing.plan_regions(n, expr, size_hint, descriptor.multiplier, rng)
    offline_seconds = time.perf_counter() - offline_started

    transport = protocols.Transport()
    online_started = time.perf_counter()
    tagsets = []
    for s in sets:
        ts = hashing.build_tagset(s.party, s, plan, keys, rng,
                                  emptiness=emptiness)
        tagsets.append(ts)
        transport.send(s.party, DECIDER, "tagsets",
                       {"party": s.party, "tags": ts.tags})
    declared = hashing.declare_dummy_totals(plan, expr)
    transport.send(n, DECIDER, "declared_dummy_totals", declared)

    received = []
    for _ in range(len(sets)):
        m = transport.receive(DECIDER, "tagsets")
        received.append(hashing.TagSet(m.payload["party"],
                                       frozenset(m.payload["tags"])))
    declared_received = transport.receive(DECIDER, "declared_dummy_totals").payload
    if emptiness:
        empty = hashing.decider_emptiness(received, expr, declared_received)
        result = ProtocolResult(mode=MODE_EMPTINESS, empty=empty)
    else:
        count = hashing.decider_cardinality(received, expr, declared_received)
        result = ProtocolResult(mode=MODE_CARDINALITY, count=count)
    online_seconds = time.perf_counter() - online_started

    record = _base_record(descriptor)
    record.update({
        "expression": str(expr),
        "size_hint": size_hint,
        "result": result.as_record(),
        "tagset_sizes": {str(ts.party): len(ts) for ts in tagsets},
        "declared_dummy_totals": {format(m, "b").zfill(n): c
                                  for m, c in sorted(declared.items())},
        "operations": {"encryptions": 0, "decryptions": 0, "multiplications": 0},
    })
    alpha, beta = _expr_shape(descriptor, expr)
    report = BenchReport(
        protocol=descriptor.protocol, mode=descriptor.mode, n=n,
        u=0, alpha=alpha, beta=beta, key_bits=0, seed=descriptor.seed,
        operations=record["operations"],
        offline_seconds=offline_seconds, online_seconds=online_seconds)
    transcript = _transcript(descriptor, record, [], transport)
    return RunOutcome(descriptor=descriptor, record=record, report=report,
                      transcript=transcript, result=result,
                      hash_context={"keys": keys, "plan": plan,
                                    "tagsets": tagsets, "transport": transport,
                                    "declared": declared})


# --- verification ------------------------------------------------------------


def implied_expression(descriptor: RunDescriptor) -> CnfExpression | DnfExpression:
    n = descriptor.n
    if descriptor.protocol == PROTO_UNION:
        return CnfExpression((tuple(Literal(p) for p in range(1, n + 1)),))
    if descriptor.protocol == PROTO_INTERSECTION:
        return CnfExpression(tuple((Literal(p),) for p in range(1, n + 1)))
    return setops.parse_expression(descriptor.expression)


def oracle_expectation(descriptor: RunDescriptor) -> dict:
    """Plaintext truth for a descriptor, shaped like a result record."""
    sets = descriptor.input_sets()
    expr = implied_expression(descriptor)
    if descriptor.universe is not None:
        universe = Universe(descriptor.universe)
    else:
        # Unlimited universe: only elements someone holds are observable.
        seen: list[str] = []
        have = set()
        for s in sets:
            for e in sorted(s.members):
                if e not in have:
                    have.add(e)
                    seen.append(e)
        universe = Universe(tuple(seen))
    truth = setops.oracle_evaluate(expr, sets, universe)
    if descriptor.mode == MODE_ELEMENTS:
        return {"mode": MODE_ELEMENTS, "elements": sorted(truth)}
    if descriptor.mode == MODE_CARDINALITY:
        return {"mode": MODE_CARDINALITY, "count": len(truth)}
    return {"mode": MODE_EMPTINESS, "empty": not truth}


@dataclass
class VerifyOutcome:
    passed: bool
    detection: bool
    expected: dict | None
    got: dict | None
    diff: str
    outcome: RunOutcome


def verify(descriptor: RunDescriptor) -> VerifyOutcome:
    """Run the descriptor and diff against the plaintext oracle.

    A hardened run that flags cheating reports detection rather than a
    value mismatch; the protocol result is not expected to match then.
    """
    outcome = run(descriptor)
    if outcome.hardened is not None and outcome.hardened.detected:
        diff = ("cheating detected: verdict={} suspects={}".format(
            outcome.hardened.verdict, list(outcome.hardened.suspects)))
        return VerifyOutcome(passed=False, detection=True, expected=None,
                             got=None, diff=diff, outcome=outcome)
    expected = oracle_expectation(descriptor)
    got = outcome.result.as_record()
    if expected == got:
        return VerifyOutcome(passed=True, detection=False, expected=expected,
                             got=got, diff="", outcome=outcome)
    if descriptor.mode == MODE_ELEMENTS:
        want = set(expected["elements"])
        have = set(got.get("elements", ()))
        diff = (f"missing={sorted(want - have)} extra={sorted(have - want)}")
    else:
        diff = f"expected {expected}, got {got}"
    return VerifyOutcome(passed=False, detection=False, expected=expected,
                         got=got, diff=diff, outcome=outcome)


# --- benchmarking ------------------------------------------------------------


def bench_expression(n: int) -> str:
    """A CNF with n clauses of n literals each: clause k negates party k."""
    clauses = []
    for k in range(1, n + 1):
        lits = [f"!S{p}" if p == k else f"S{p}" for p in range(1, n + 1)]
        clauses.append("(" + "|".join(lits) + ")")
    return "&".join(clauses)


def synthetic_descriptor(protocol: str, mode: str, n: int, u: int,
                         key_bits: int, seed: int,
                         expression: str | None = None) -> RunDescriptor:
    """Deterministic synthetic inputs for sweeps: element e_j is held by
    party p when (j + p) is even, giving every region some population."""
    protocol = _normalize_protocol(protocol)
    universe = tuple(f"e{j}" for j in range(u))
    sets = {}
    for p in range(1, n + 1):
        members = tuple(e for j, e in enumerate(universe) if (j + p) % 2 == 0)
        sets[str(p)] = list(members)
    doc: dict = {"protocol": protocol, "mode": mode, "sets": sets,
                 "key_bits": key_bits, "seed": seed}
    if protocol in (PROTO_UNION, PROTO_INTERSECTION, PROTO_GENERIC):
        doc["universe"] = list(universe)
    if protocol == PROTO_GENERIC:
        doc["expression"] = expression or bench_expression(n)
    elif protocol in (HASH_CARDINALITY, HASH_EMPTINESS):
        doc["expression"] = expression or "(" + "&".join(
            f"S{p}" for p in range(1, n + 1)) + ")"
    return descriptor_from_dict(doc)


def bench_sweep(protocol: str, mode: str, axis: str, values: list[int],
                n: int = 3, u: int = 20, key_bits: int = he.DEFAULT_KEY_BITS,
                seed: int = 1, expression: str | None = None) -> list[BenchReport]:
    """One run per axis value; axis is "u" or "n", the other stays fixed."""
    if axis not in ("u", "n"):
        raise ValueError("axis must be 'u' or 'n'")
    reports = []
    for value in values:
        cur_n, cur_u = (n, value) if axis == "u" else (value, u)
        descriptor = synthetic_descriptor(protocol, mode, cur_n, cur_u,
                                          key_bits, seed + value, expression)
        reports.append(run(descriptor).report)
    return reports


def write_bench_csv(reports: list[BenchReport], path: str) -> None:
    if not reports:
        raise ValueError("no reports to write")
    rows = [r.as_row() for r in reports]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
