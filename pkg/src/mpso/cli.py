"""Command line front end.

Subcommands:

  keygen     generate a Paillier key pair and print or save it
  run        execute a run descriptor, print the result record
  verify     run a descriptor and diff against the plaintext oracle
  bench      sweep one axis (u or n) and write timing rows
  audit-log  execute a descriptor and print the repository log

Exit codes: 0 on success or a matching verification, 10 when a verified
result disagrees with the oracle, 11 when a hardened run reports
cheating, 12 on infrastructure failures (unreadable files, bad
descriptors, key generation failure).  Argument syntax errors keep
argparse's usual exit code 2.
"""

from __future__ import annotations

import argparse
import json
import random
import sys

from . import harness, he

EXIT_OK = 0
EXIT_MISMATCH = 10
EXIT_DETECTION = 11
EXIT_INFRASTRUCTURE = 12


def _cmd_keygen(args) -> int:
    rng = random.Random(args.seed) if args.seed is not None else None
    pair = he.keygen(args.bits, rng=rng)
    doc = {
        "key_bits": args.bits,
        "key_id": pair.public.key_id,
        "public": he.public_key_to_bytes(pair.public).hex(),
        "private": he.private_key_to_bytes(pair.private).hex(),
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        print(f"wrote {args.bits}-bit key {pair.public.key_id} to {args.out}")
    else:
        print(json.dumps(doc, indent=2))
    return EXIT_OK


def _print_record(outcome, args) -> None:
    print(json.dumps(outcome.record, indent=2, sort_keys=True))
    report = outcome.report
    print(f"offline: {report.offline_seconds:.3f}s  "
          f"online: {report.online_seconds:.3f}s", file=sys.stderr)
    if args.record_out:
        with open(args.record_out, "w", encoding="utf-8") as fh:
            json.dump(outcome.record, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.transcript_out:
        with open(args.transcript_out, "w", encoding="utf-8") as fh:
            fh.write(outcome.transcript)


def _cmd_run(args) -> int:
    descriptor = harness.load_descriptor(args.descriptor)
    outcome = harness.run(descriptor)
    _print_record(outcome, args)
    if outcome.hardened is not None and outcome.hardened.detected:
        print(f"verdict: {outcome.hardened.verdict} "
              f"suspects: {list(outcome.hardened.suspects)}", file=sys.stderr)
        return EXIT_DETECTION
    return EXIT_OK


def _cmd_verify(args) -> int:
    descriptor = harness.load_descriptor(args.descriptor)
    verdict = harness.verify(descriptor)
    _print_record(verdict.outcome, args)
    if verdict.detection:
        print(verdict.diff)
        return EXIT_DETECTION
    if verdict.passed:
        print(f"verified: result matches plaintext oracle ({verdict.expected})")
        return EXIT_OK
    print(f"MISMATCH: {verdict.diff}")
    return EXIT_MISMATCH


def _cmd_bench(args) -> int:
    values = [int(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValueError("no sweep values given")
    reports = harness.bench_sweep(
        args.protocol, args.mode, args.axis, values, n=args.n, u=args.u,
        key_bits=args.key_bits, seed=args.seed, expression=args.expression)
    header = ("axis value encryptions decryptions multiplications "
              "offline_s online_s")
    print(header)
    for report in reports:
        value = report.u if args.axis == "u" else report.n
        ops = report.operations
        print(f"{args.axis} {value} {ops['encryptions']} {ops['decryptions']} "
              f"{ops['multiplications']} {report.offline_seconds:.3f} "
              f"{report.online_seconds:.3f}")
    if args.out:
        harness.write_bench_csv(reports, args.out)
        print(f"wrote {len(reports)} rows to {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_audit_log(args) -> int:
    descriptor = harness.load_descriptor(args.descriptor)
    outcome = harness.run(descriptor)
    if outcome.state is not None:
        lines = outcome.state.repo.export_log(actor=1)
    elif outcome.hardened is not None:
        lines = []
        for t in outcome.hardened.transcripts:
            lines.append(f"# repetition {t.repetition} leader {t.leader}")
            lines.extend(t.log_lines)
    else:
        raise ValueError("hash protocols keep no ciphertext repository")
    for line in lines:
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpso",
        description="Private set operations with an external decider")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a Paillier key pair")
    p.add_argument("--bits", type=int, default=he.DEFAULT_KEY_BITS)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="write key JSON here")
    p.set_defaults(func=_cmd_keygen)

    for name, func, blurb in (
            ("run", _cmd_run, "execute a run descriptor"),
            ("verify", _cmd_verify, "run and diff against the oracle")):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("descriptor", help="path to a descriptor JSON file")
        p.add_argument("--record-out", default=None,
                       help="write the result record JSON here")
        p.add_argument("--transcript-out", default=None,
                       help="write the canonical transcript here")
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="sweep u or n and time each run")
    p.add_argument("--protocol", required=True,
                   choices=[x.replace("_", "-") for x in harness.PROTOCOL_NAMES]
                   + list(harness.PROTOCOL_NAMES))
    p.add_argument("--mode", required=True, choices=list(harness.MODES))
    p.add_argument("--axis", required=True, choices=["u", "n"])
    p.add_argument("--values", required=True,
                   help="comma separated axis values, e.g. 10,20,40")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--u", type=int, default=20)
    p.add_argument("--key-bits", type=int, default=he.DEFAULT_KEY_BITS)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--expression", default=None)
    p.add_argument("--out", default=None, help="write CSV rows here")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("audit-log",
                       help="run a descriptor and print the repository log")
    p.add_argument("descriptor", help="path to a descriptor JSON file")
    p.set_defaults(func=_cmd_audit_log)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFRASTRUCTURE


if __name__ == "__main__":
    sys.exit(main())
