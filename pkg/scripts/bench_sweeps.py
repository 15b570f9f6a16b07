#!/usr/bin/env python3
"""Run the two standard scaling sweeps and dump CSVs.

Sweep 1 grows the universe at n=3; on-line time should grow linearly
because the decider decrypts one cell per universe element.  Sweep 2
grows the party count at u=20 with a dense expression (alpha=beta=n);
per-party encryption work grows with n^2 while the decider stays at u.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mpso import harness


def print_table(rows):
    header = ["protocol", "mode", "n", "u", "key_bits", "encryptions",
              "decryptions", "offline_s", "online_s"]
    print("  ".join(f"{h:>12}" for h in header))
    for r in rows:
        row = r.as_row()
        print("  ".join(f"{v!s:>12}" for v in (
            row["protocol"], row["mode"], row["n"], row["u"],
            row["key_bits"], row["encryptions"], row["decryptions"],
            f"{row['offline_seconds']:.3f}", f"{row['online_seconds']:.3f}")))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--key-bits", type=int, default=512)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--u-values", default="10,20,40,60,80,100")
    ap.add_argument("--n-values", default="3,5,10,15,20")
    ap.add_argument("--out-dir", default=".")
    args = ap.parse_args()

    u_values = [int(v) for v in args.u_values.split(",")]
    n_values = [int(v) for v in args.n_values.split(",")]

    print(f"universe sweep at n=3, {args.key_bits}-bit keys")
    u_rows = harness.bench_sweep("generic_HE", "cardinality", "u", u_values,
                                 n=3, key_bits=args.key_bits, seed=args.seed)
    print_table(u_rows)
    path = os.path.join(args.out_dir, "sweep_u.csv")
    harness.write_bench_csv(u_rows, path)
    print(f"wrote {path}\n")

    print(f"party sweep at u=20, alpha=beta=n, {args.key_bits}-bit keys")
    n_rows = harness.bench_sweep("generic_HE", "cardinality", "n", n_values,
                                 u=20, key_bits=args.key_bits, seed=args.seed)
    print_table(n_rows)
    path = os.path.join(args.out_dir, "sweep_n.csv")
    harness.write_bench_csv(n_rows, path)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
