"""Acceptance gate: one test per criterion, one printed verdict line each.

Every test prints "[PASS] Criterion N: ..." (or FAIL) through the capture
bypass so the verdicts land in plain pytest output, then asserts.
"""

import itertools
import random
import time

import pytest
import scipy.stats

from mpso import harness, hashing, he, protocols, setops
from mpso.hardening import Adversary, VERDICT_CONSISTENT, run_hardened
from mpso.harness import descriptor_from_dict
from mpso.hashing import RegionPlan, build_tagset, decider_cardinality, \
    declare_dummy_totals, make_shared_keys, plan_regions
from mpso.protocols import (DECIDER_INBOX_KINDS, EngineConfig,
                            MODE_CARDINALITY, MODE_ELEMENTS, MODE_EMPTINESS,
                            MODES, PROTO_GENERIC, PROTO_INTERSECTION,
                            PROTO_UNION, PROTO_UNION_EMPTINESS, run_offline)
from mpso.repository import AccessDeniedError, DECIDER
from mpso.setops import InputSet, Universe

CFG128 = EngineConfig(key_bits=128)

TWO_PARTY_SHAPES = ("(S1|S2)", "(S1)&(S2)", "(S1|!S2)", "(!S1)&(S2)")


def _verdict(capsys, num, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] Criterion {num}: {detail}")
    assert ok, f"Criterion {num}: {detail}"


def _expect(expr_text, sets, universe, mode):
    truth = setops.oracle_evaluate(
        setops.parse_expression(expr_text), sets, universe)
    if mode == MODE_ELEMENTS:
        return {"mode": mode, "elements": sorted(truth)}
    if mode == MODE_CARDINALITY:
        return {"mode": mode, "count": len(truth)}
    return {"mode": mode, "empty": not truth}


def _run_protocol(protocol, universe, sets, mode, rng, keypair, expr=None,
                  config=CFG128):
    state = run_offline(len(sets), universe, protocol, expr=expr,
                        config=config, rng=rng, keypair=keypair)
    if protocol == PROTO_UNION:
        return state, protocols.protocol1_union(state, sets, mode)
    if protocol == PROTO_UNION_EMPTINESS:
        return state, protocols.protocol1_emptiness(state, sets)
    if protocol == PROTO_INTERSECTION:
        return state, protocols.protocol2_intersection(state, sets, mode)
    return state, protocols.protocol3_generic(state, expr, sets, mode)


def test_criterion_1_oracle_equivalence(small_keypair, capsys):
    started = time.perf_counter()
    mismatches = 0
    runs = 0
    universe = Universe(("x", "y", "z"))
    rng = random.Random(0xA11CE)

    # exhaustive: every way to fill two sets from a three-element universe
    for bits in range(64):
        sets = [InputSet(p, frozenset(e for i, e in enumerate(universe)
                                      if bits >> (3 * (p - 1) + i) & 1))
                for p in (1, 2)]
        for mode in MODES:
            proto = (PROTO_UNION_EMPTINESS if mode == MODE_EMPTINESS
                     else PROTO_UNION)
            _, got = _run_protocol(proto, universe, sets, mode, rng,
                                   small_keypair)
            runs += 1
            if got.as_record() != _expect("(S1|S2)", sets, universe, mode):
                mismatches += 1
            _, got = _run_protocol(PROTO_INTERSECTION, universe, sets, mode,
                                   rng, small_keypair)
            runs += 1
            if got.as_record() != _expect("(S1)&(S2)", sets, universe, mode):
                mismatches += 1
            for shape in TWO_PARTY_SHAPES:
                expr = setops.as_cnf(setops.parse_expression(shape))
                _, got = _run_protocol(PROTO_GENERIC, universe, sets, mode,
                                       rng, small_keypair, expr=expr)
                runs += 1
                if got.as_record() != _expect(shape, sets, universe, mode):
                    mismatches += 1
    exhaustive_runs = runs

    # randomized: bigger universes, more parties, random CNF expressions
    for trial in range(200):
        n = rng.randint(2, 5)
        u = rng.randint(1, 32)
        trial_universe = Universe(tuple(f"e{i}" for i in range(u)))
        sets = [InputSet(p, frozenset(e for e in trial_universe
                                      if rng.random() < 0.4))
                for p in range(1, n + 1)]
        mode = rng.choice(MODES)

        proto = PROTO_UNION_EMPTINESS if mode == MODE_EMPTINESS else PROTO_UNION
        union_text = "(" + "|".join(f"S{p}" for p in range(1, n + 1)) + ")"
        _, got = _run_protocol(proto, trial_universe, sets, mode, rng,
                               small_keypair)
        runs += 1
        if got.as_record() != _expect(union_text, sets, trial_universe, mode):
            mismatches += 1

        inter_text = "&".join(f"(S{p})" for p in range(1, n + 1))
        _, got = _run_protocol(PROTO_INTERSECTION, trial_universe, sets, mode,
                               rng, small_keypair)
        runs += 1
        if got.as_record() != _expect(inter_text, sets, trial_universe, mode):
            mismatches += 1

        expr = setops.random_cnf(n, rng, max_beta=n)
        _, got = _run_protocol(PROTO_GENERIC, trial_universe, sets, mode, rng,
                               small_keypair, expr=expr)
        runs += 1
        if got.as_record() != _expect(str(expr), sets, trial_universe, mode):
            mismatches += 1

    elapsed = time.perf_counter() - started
    ok = mismatches == 0 and elapsed < 300
    _verdict(capsys, 1, ok,
             f"{exhaustive_runs} exhaustive (64 pairs x 4 shapes + union/"
             f"intersection, all modes) + {runs - exhaustive_runs} randomized "
             f"runs, {mismatches} mismatches, {elapsed:.1f}s (limit 300s)")


def test_criterion_2_homomorphism(default_keypair, capsys):
    pk, sk = default_keypair.public, default_keypair.private
    rng = random.Random(0xB0B)
    failures = 0
    for _ in range(100):
        m1, m2 = rng.randrange(pk.n), rng.randrange(pk.n)
        total = he.add(pk, he.encrypt(pk, m1, rng), he.encrypt(pk, m2, rng))
        if he.decrypt(sk, total) != (m1 + m2) % pk.n:
            failures += 1
        a = rng.randrange(1, pk.n)
        scaled = he.scalar_pow(pk, he.encrypt(pk, m1, rng), a)
        if he.decrypt(sk, scaled) != (a * m1) % pk.n:
            failures += 1
    _verdict(capsys, 2, failures == 0,
             f"100 random (m1, m2) pairs, additive and scalar laws at "
             f"512-bit, {failures} failures")


def test_criterion_3_operation_counts(small_keypair, capsys):
    expr = setops.as_cnf(setops.parse_expression(harness.bench_expression(3)))
    alpha = beta = n = 3
    rng = random.Random(0xC3)
    enc_by_u = {}
    problems = []
    for u in (20, 40):
        universe = Universe(tuple(f"e{i}" for i in range(u)))
        sets = [InputSet(p, frozenset(e for i, e in enumerate(universe)
                                      if (i + p) % 2 == 0))
                for p in range(1, n + 1)]
        for mode in (MODE_ELEMENTS, MODE_CARDINALITY):
            state, _ = _run_protocol(PROTO_GENERIC, universe, sets, mode, rng,
                                     small_keypair, expr=expr)
            if state.trace.decryptions != u:
                problems.append(f"u={u} {mode}: {state.trace.decryptions} "
                                f"decryptions, wanted {u}")
            bound = alpha * beta * u
            if not bound <= state.trace.encryptions <= 4 * bound:
                problems.append(f"u={u} {mode}: {state.trace.encryptions} "
                                f"encryptions outside [{bound}, {4 * bound}]")
            enc_by_u[u] = state.trace.encryptions
    ratio = enc_by_u[40] / enc_by_u[20]
    if not 2 * 0.95 <= ratio <= 2 * 1.05:
        problems.append(f"doubling u scaled encryptions by {ratio:.3f}")
    _verdict(capsys, 3, not problems,
             f"alpha=beta=n=3: decryptions == u, encryptions "
             f"{enc_by_u[20]}@u=20 / {enc_by_u[40]}@u=40 within [1,4]*alpha*"
             f"beta*u, doubling ratio {ratio:.3f}"
             + ("; " + "; ".join(problems) if problems else ""))


def test_criterion_4_scaling_shape(default_keypair, small_keypair, capsys):
    problems = []

    # u-sweep at n=3 with 512-bit keys: on-line time linear in u
    expr3 = setops.as_cnf(setops.parse_expression(harness.bench_expression(3)))
    u_values = (10, 20, 40, 60, 80, 100)
    cfg512 = EngineConfig(key_bits=512)
    online = []
    rng = random.Random(0xC4)
    for u in u_values:
        universe = Universe(tuple(f"e{i}" for i in range(u)))
        sets = [InputSet(p, frozenset(e for i, e in enumerate(universe)
                                      if (i + p) % 2 == 0))
                for p in (1, 2, 3)]
        samples = []
        for _ in range(3):
            state, _ = _run_protocol(PROTO_GENERIC, universe, sets,
                                     MODE_CARDINALITY, rng, default_keypair,
                                     expr=expr3, config=cfg512)
            samples.append(state.online_seconds)
        online.append(sorted(samples)[1])
    fit = scipy.stats.linregress(u_values, online)
    r_sq = fit.rvalue ** 2
    if r_sq < 0.95:
        problems.append(f"u-sweep R^2 {r_sq:.4f} < 0.95")

    # n-sweep at u=20 with alpha=beta=n: u decryptions, ~n^2 party work
    u = 20
    universe = Universe(tuple(f"e{i}" for i in range(u)))
    per_n2 = {}
    for n in (3, 5, 10, 15, 20):
        exprn = setops.as_cnf(
            setops.parse_expression(harness.bench_expression(n)))
        sets = [InputSet(p, frozenset(e for i, e in enumerate(universe)
                                      if (i + p) % 2 == 0))
                for p in range(1, n + 1)]
        state, _ = _run_protocol(PROTO_GENERIC, universe, sets,
                                 MODE_CARDINALITY, rng, small_keypair,
                                 expr=exprn)
        if state.trace.decryptions != u:
            problems.append(f"n={n}: {state.trace.decryptions} decryptions")
        per_n2[n] = state.trace.encryptions / n ** 2
    spread = max(per_n2.values()) / min(per_n2.values())
    if spread > 1.2:
        problems.append(f"encryptions/n^2 varies by {spread:.3f} > 1.2")

    detail = (f"u-sweep online fit R^2={r_sq:.4f} "
              f"(u=100 online {online[-1] * 1000:.0f} ms, reference figure "
              f"710 ms, reported not asserted); n-sweep encryptions/n^2 "
              f"spread {spread:.3f} (limit 1.2), decryptions stay u={u}")
    _verdict(capsys, 4, not problems,
             detail + ("; " + "; ".join(problems) if problems else ""))


GOLDEN_COUNTS = {0b001: 34, 0b010: 88, 0b100: 145,
                 0b011: 23, 0b101: 12, 0b110: 53, 0b111: 97}


def _golden_sets():
    a_only = {f"a{i}" for i in range(5)}
    b_only = {f"b{i}" for i in range(6)}
    c_only = {f"c{i}" for i in range(7)}
    ab, ac = {"ab0", "ab1"}, {"ac0"}
    bc = {"bc0", "bc1", "bc2"}
    abc = {"abc0", "abc1", "abc2", "abc3"}
    return [InputSet(1, frozenset(a_only | ab | ac | abc)),
            InputSet(2, frozenset(b_only | ab | bc | abc)),
            InputSet(3, frozenset(c_only | ac | bc | abc))]


def test_criterion_5_region_plan_golden(capsys):
    sets = _golden_sets()
    expr = setops.as_dnf(setops.parse_expression("(S1&S2&!S3)|(S2&S3)"))
    held = sorted(set().union(*(s.members for s in sets)))
    want = len(setops.oracle_evaluate(expr, sets, Universe(tuple(held))))
    problems = []

    rng = random.Random(0xC5)
    used = set()
    values = {}
    for mask, count in GOLDEN_COUNTS.items():
        region = []
        while len(region) < count:
            tag = rng.randbytes(hashing.TAG_BYTES)
            if tag not in used:
                used.add(tag)
                region.append(tag)
        values[mask] = tuple(region)
    plan = RegionPlan(n=3, dummy_values=values)
    keys = make_shared_keys(3, rng)
    declared = declare_dummy_totals(plan, expr)
    if sum(declared.values()) != 173:
        problems.append(f"declared dummy total {sum(declared.values())} != 173")
    tagsets = [build_tagset(s.party, s, plan, keys, rng) for s in sets]
    got = decider_cardinality(tagsets, expr, declared)
    if got != want or want != 9:
        problems.append(f"golden plan returned {got}, oracle says {want}")

    misses = 0
    for seed in range(20):
        r = random.Random(5000 + seed)
        keys = make_shared_keys(3, r)
        plan = plan_regions(3, expr, size_hint=6, rng=r)
        declared = declare_dummy_totals(plan, expr)
        tagsets = [build_tagset(s.party, s, plan, keys, r) for s in sets]
        if decider_cardinality(tagsets, expr, declared) != want:
            misses += 1
    if misses:
        problems.append(f"{misses}/20 random plans missed")
    _verdict(capsys, 5, not problems,
             f"fixed plan {sorted(GOLDEN_COUNTS.values())} subtracts 173 and "
             f"returns exactly {want}; 20 random plans exact"
             + ("; " + "; ".join(problems) if problems else ""))


def test_criterion_6_tagging_throughput(capsys):
    rng = random.Random(0xC6)
    members = frozenset(f"element-{i:07d}" for i in range(1_000_000))
    big = InputSet(1, members)
    keys = make_shared_keys(2, rng)
    plan = RegionPlan(n=2, dummy_values={
        mask: (rng.randbytes(hashing.TAG_BYTES),) for mask in (1, 2, 3)})
    started = time.perf_counter()
    ts = build_tagset(1, big, plan, keys, rng)
    elapsed = time.perf_counter() - started
    ok = elapsed <= 10 and len(ts) >= 1_000_000
    _verdict(capsys, 6, ok,
             f"tagged 10^6 elements in {elapsed:.2f}s (limit 10s)")


def test_criterion_7_hardening_suite(small_keypair, capsys):
    universe = Universe(("a", "b", "c"))
    expr = setops.parse_expression("(S1|S2)&(S3)")
    problems = []

    false_accusations = 0
    rng = random.Random(0xC7)
    for trial in range(200):
        sets = [InputSet(p, frozenset(e for e in universe
                                      if rng.random() < 0.5))
                for p in (1, 2, 3)]
        mode = rng.choice(MODES)
        report = run_hardened(3, universe, expr, sets, mode, config=CFG128,
                              rng=random.Random(7000 + trial),
                              keypair=small_keypair)
        truth = setops.oracle_evaluate(expr, sets, universe)
        if (report.verdict != VERDICT_CONSISTENT or report.suspects
                or not all(report.audit_passed.values())):
            false_accusations += 1
        elif report.result.as_record() != _expect(str(expr), sets, universe,
                                                  mode):
            false_accusations += 1
    if false_accusations:
        problems.append(f"{false_accusations}/200 honest runs accused someone")

    sets = [InputSet(1, frozenset("ab")), InputSet(2, frozenset("bc")),
            InputSet(3, frozenset("abc"))]

    def detected_count(adversary, trials=50):
        hits = 0
        for t in range(trials):
            report = run_hardened(3, universe, expr, sets, MODE_ELEMENTS,
                                  config=CFG128,
                                  rng=random.Random(8000 + t),
                                  keypair=small_keypair, adversary=adversary)
            if report.detected and adversary.party in (
                    report.suspects or (report.culprit,)):
                hits += 1
        return hits

    pair_hits = detected_count(Adversary(strategy="ii", party=3, cell=1))
    if pair_hits != 50:
        problems.append(f"cheat ii caught {pair_hits}/50")
    zero_hits = detected_count(Adversary(strategy="iii", party=2, clause=1,
                                         cell=0))
    if zero_hits != 50:
        problems.append(f"cheat iii caught {zero_hits}/50")
    subm_hits = detected_count(Adversary(strategy="iv", party=2, cell=0))
    if subm_hits != 50:
        problems.append(f"cheat iv caught {subm_hits}/50")

    # input inconsistency: measure the rate on runs where the toggle
    # actually changes the oracle result
    toggle_sets = [InputSet(1, frozenset()), InputSet(2, frozenset("a")),
                   InputSet(3, frozenset("a"))]
    i_hits = 0
    for t in range(50):
        report = run_hardened(3, universe, expr, toggle_sets, MODE_ELEMENTS,
                              config=CFG128, rng=random.Random(9000 + t),
                              keypair=small_keypair,
                              adversary=Adversary(strategy="i", party=2,
                                                  element="a"))
        if report.detected and 2 in report.suspects:
            i_hits += 1
    if i_hits == 0:
        problems.append("cheat i never detected despite changing the result")

    _verdict(capsys, 7, not problems,
             f"0 false accusations in 200 honest runs; cheat ii {pair_hits}/50,"
             f" iii {zero_hits}/50, iv {subm_hits}/50; cheat i detection rate "
             f"{i_hits}/50 (asserted > 0 only)"
             + ("; " + "; ".join(problems) if problems else ""))


def _scan_payload(obj, ints, blobs):
    if isinstance(obj, he.Ciphertext):
        ints.add(obj.value)
    elif isinstance(obj, bool):
        pass
    elif isinstance(obj, int):
        ints.add(obj)
    elif isinstance(obj, bytes):
        blobs.add(obj)
    elif isinstance(obj, dict):
        for k, v in obj.items():
            _scan_payload(k, ints, blobs)
            _scan_payload(v, ints, blobs)
    elif isinstance(obj, (list, tuple, set, frozenset)):
        for item in obj:
            _scan_payload(item, ints, blobs)
    elif hasattr(obj, "__dataclass_fields__"):
        for name in obj.__dataclass_fields__:
            _scan_payload(getattr(obj, name), ints, blobs)


def _decider_exposure(transport):
    ints, blobs = set(), set()
    kinds = set()
    for msg in transport.messages_to(DECIDER):
        kinds.add(msg.kind)
        _scan_payload(msg.payload, ints, blobs)
    return kinds, ints, blobs


def test_criterion_8_isolation(capsys):
    problems = []
    matrix = []
    base_sets = {"1": ["a", "b"], "2": ["b", "c"], "3": ["c", "d"]}
    uni = ["a", "b", "c", "d"]
    for mode in MODES:
        matrix.append({"protocol": "union", "mode": mode, "sets": base_sets,
                       "universe": uni, "key_bits": 128, "seed": 81})
        matrix.append({"protocol": "intersection", "mode": mode,
                       "sets": base_sets, "universe": uni, "key_bits": 128,
                       "seed": 82})
        matrix.append({"protocol": "generic-HE", "mode": mode,
                       "expression": "(S1|S2)&(S2|!S3)", "sets": base_sets,
                       "universe": uni, "key_bits": 128, "seed": 83})
    matrix.append({"protocol": "generic-HE", "mode": "elements",
                   "expression": "(S1|S2)&(S3)", "sets": base_sets,
                   "universe": uni, "key_bits": 128, "seed": 84,
                   "hardened": True})
    matrix.append({"protocol": "hash-cardinality", "mode": "cardinality",
                   "expression": "(S1&S2)|(S2&S3)", "sets": base_sets,
                   "seed": 85})
    matrix.append({"protocol": "hash-emptiness", "mode": "emptiness",
                   "expression": "(S1&S2&S3)", "sets": base_sets, "seed": 86})

    for doc in matrix:
        tag = f"{doc['protocol']}/{doc['mode']}" + (
            "/hardened" if doc.get("hardened") else "")
        outcome = harness.run(descriptor_from_dict(doc))
        kinds, ints, blobs = _decider_exposure(outcome.transport)
        stray = kinds - DECIDER_INBOX_KINDS
        if stray:
            problems.append(f"{tag}: decider received kinds {sorted(stray)}")

        if outcome.state is not None:
            state = outcome.state
            leftovers = set()
            for pools in state.pools.values():
                for pool in pools.values():
                    while pool.remaining():
                        leftovers.add(pool.take().value)
            if leftovers & ints:
                problems.append(f"{tag}: unused pool ciphertext reached decider")
            sk = outcome.state.decider._keypair.private
            if {sk.lam, sk.mu} & ints:
                problems.append(f"{tag}: private key material in a payload")
            repos = [state.repo]
        elif outcome.hardened is not None:
            repos = [t.repo for t in outcome.hardened.transcripts]
        else:
            keys = outcome.hash_context["keys"]
            key_blobs = {keys.common} | {
                k for ks in keys.subset_keys.values() for k in ks}
            if key_blobs & blobs:
                problems.append(f"{tag}: a hash key reached the decider")
            repos = []

        for repo in repos:
            for call in (lambda: repo.read("V", DECIDER),
                         lambda: repo.audit(DECIDER),
                         lambda: repo.export_log(DECIDER),
                         lambda: repo.finalize("V", DECIDER),
                         lambda: repo.with_write_lock("V", DECIDER,
                                                      lambda s: None)):
                try:
                    call()
                except AccessDeniedError:
                    continue
                except KeyError:
                    problems.append(f"{tag}: decider reached name resolution")
                else:
                    problems.append(f"{tag}: decider repository call succeeded")

    _verdict(capsys, 8, not problems,
             f"{len(matrix)} runs: decider messages all whitelisted kinds, no "
             f"pool ciphertexts or hash keys in its inbox, repository denies "
             f"the decider role everywhere"
             + ("; " + "; ".join(problems) if problems else ""))


def test_criterion_9_determinism(capsys):
    docs = [
        {"protocol": "union", "mode": "elements",
         "sets": {"1": ["a"], "2": ["b", "c"]}, "universe": ["a", "b", "c"],
         "key_bits": 128, "seed": 91},
        {"protocol": "intersection", "mode": "emptiness",
         "sets": {"1": ["a"], "2": ["a", "c"]}, "universe": ["a", "b", "c"],
         "key_bits": 128, "seed": 92},
        {"protocol": "generic-HE", "mode": "cardinality",
         "expression": "(S1|!S2)&(S2|S3)",
         "sets": {"1": ["a"], "2": ["b"], "3": ["c"]},
         "universe": ["a", "b", "c"], "key_bits": 128, "seed": 93},
        {"protocol": "generic-HE", "mode": "elements",
         "expression": "(S1|S2)&(S3)",
         "sets": {"1": ["a"], "2": ["b"], "3": ["a", "b"]},
         "universe": ["a", "b", "c"], "key_bits": 128, "seed": 94,
         "hardened": True},
        {"protocol": "hash-cardinality", "mode": "cardinality",
         "expression": "(S1&S2)",
         "sets": {"1": ["a", "b"], "2": ["b"]}, "seed": 95},
        {"protocol": "hash-emptiness", "mode": "emptiness",
         "expression": "(S1&S2)",
         "sets": {"1": ["a"], "2": ["b"]}, "seed": 96},
    ]
    problems = []
    for doc in docs:
        d = descriptor_from_dict(doc)
        first, second = harness.run(d), harness.run(d)
        tag = f"{d.protocol}/{d.mode}"
        if first.record != second.record:
            problems.append(f"{tag}: records differ across replays")
        if first.transcript != second.transcript:
            problems.append(f"{tag}: transcripts differ across replays")
        reseeded = harness.run(descriptor_from_dict(
            {**doc, "seed": doc["seed"] + 1000}))
        if reseeded.transcript == first.transcript:
            problems.append(f"{tag}: a different seed replayed identically")
    _verdict(capsys, 9, not problems,
             f"{len(docs)} seeded descriptors replay bit-identically "
             f"(record and transcript), reseeding changes the transcript"
             + ("; " + "; ".join(problems) if problems else ""))
