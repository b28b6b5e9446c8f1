"""Regenerate the frozen schedule probe table used by the acceptance suite.

The expected values are computed here from the closed-form schedule
definitions, written out independently of the package so the test is a
genuine two-route comparison:

    lambda(epoch)      = 1                                   if epoch < warmup
                         max(lambda0 * exp(-decay_k * (epoch - warmup)), floor)
    weight(k; t, b)    = exp(min((t - k) / b, 0))

Both the package and this script evaluate the formulas with scalar
``math`` calls in the same operation order, so equality is exact
(bit-for-bit after JSON round trip, which serializes shortest-repr
doubles losslessly).

Usage: python tools/make_schedule_tables.py
"""

import json
import math
import os

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "data",
                   "schedule_probes.json")


def lam(epoch, warmup, decay_k, lambda0=1.0, floor=0.5):
    if epoch < warmup:
        return 1.0
    return max(lambda0 * math.exp(-decay_k * (epoch - warmup)), floor)


def weight(k, t, b):
    return math.exp(min((t - k) / b, 0.0))


def main():
    probes = []

    # 12 lambda probes: warmup boundary, decay region, exact floor region.
    lambda_cases = [
        # (epoch, warmup, decay_k)
        (0, 10, math.log(2.0) / 5.0),
        (9, 10, math.log(2.0) / 5.0),
        (10, 10, math.log(2.0) / 5.0),
        (11, 10, math.log(2.0) / 5.0),
        (13, 10, math.log(2.0) / 5.0),
        (15, 10, math.log(2.0) / 5.0),   # exactly one half-life past floor knee
        (40, 10, math.log(2.0) / 5.0),
        (0, 0, 0.1),
        (3, 0, 0.1),
        (7, 0, 0.1),
        (60, 0, 0.1),
        (11, 10, math.log(2.0)),          # spec's worked example: max(e^-ln2, 0.5)
    ]
    for epoch, warmup, k in lambda_cases:
        probes.append({
            "kind": "lambda",
            "epoch": epoch,
            "warmup": warmup,
            "decay_k": k,
            "lambda0": 1.0,
            "floor": 0.5,
            "expected": lam(epoch, warmup, k),
        })

    # 8 annealed-weight probes: clamp region, decay region, fractional t.
    weight_cases = [
        # (k, t, b)
        (0, 0.0, 1.0),
        (2, 0.0, 1.0),                    # spec's worked example: e^-2
        (1, 0.5, 1.0),
        (3, 1.25, 0.5),
        (0, 4.0, 1.0),
        (5, 2.0, 2.0),
        (2, 2.0, 1.0),                    # k == t sits exactly on the clamp
        (4, 3.9, 0.25),
    ]
    for k, t, b in weight_cases:
        probes.append({
            "kind": "weight",
            "k": k,
            "t": t,
            "b": b,
            "expected": weight(k, t, b),
        })

    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w") as fh:
        json.dump(probes, fh, indent=1)
        fh.write("\n")
    print(f"wrote {len(probes)} probes to {os.path.normpath(OUT)}")


if __name__ == "__main__":
    main()
