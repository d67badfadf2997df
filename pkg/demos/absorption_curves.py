"""Absorption over time for the four named environment families.

Walks each family's exact extinct / killed / surviving split across a
range of horizons, then checks the one family with a closed-form
survival curve against that formula and prints how fast the survival
probability decays for a killing-dominated constant environment.

One caveat the tables make visible: families whose per-individual
defect shrinks like 2^-n fall below machine epsilon near n = 54, so
the numeric curve freezes there even when the population is large
enough that real killing continues.  The analytic series verdicts
(see criteria_gallery.py) answer the long-run question instead.
"""
from __future__ import annotations

import math

import numpy as np

from defbranch import (
    Constant,
    FiniteSupport,
    NamedFamily,
    absorption_profile,
    absorption_scan,
    growth_rate,
)

FAMILIES = ("example-1a", "example-1b", "example-2a", "example-2b")
HORIZONS = (1, 2, 5, 10, 20, 50, 100, 500, 1000)


def sweep(family: str) -> None:
    env = NamedFamily(family)
    print(f"\n{family}")
    print(f"  {'n':>5}  {'extinct':>10}  {'killed':>10}  {'surviving':>12}")
    for n in HORIZONS:
        prof = absorption_profile(env, n)
        print(
            f"  {n:>5}  {prof.p_extinct:>10.6f}  {prof.p_killed:>10.6f}"
            f"  {prof.survival:>12.6e}"
        )


def closed_form_check() -> None:
    # survival(n) = (n+1) / (4n) for this family
    env = NamedFamily("example-1b")
    ns = np.array([1, 3, 10, 100, 1000, 10000])
    scan = absorption_scan(env, int(ns.max()))
    got = scan.survival[ns]
    want = (ns + 1) / (4.0 * ns)
    err = np.abs(got - want).max()
    print("\nclosed-form family: survival(n) = (n+1)/(4n)")
    for n, g, w in zip(ns, got, want):
        print(f"  n={n:<6} exact={g:.12f} formula={w:.12f}")
    print(f"  max abs error {err:.3e}")
    print(f"  limit as n grows: {got[-1]:.6f} -> 1/4")


def decay_rates() -> None:
    # defective binary split held fixed: decay is genuinely geometric
    env = Constant(FiniteSupport([0.45, 0.0, 0.45]))
    print("\ngeometric decay (per-generation log rates, fixed defective law):")
    print(f"  {'n':>5}  {'mean rate':>12}  {'survival rate':>14}")
    for n in (10, 50, 200, 500):
        r = growth_rate(env, n)
        print(f"  {n:>5}  {r.mean_rate:>12.6f}  {r.survival_rate:>14.6f}")
    target = -0.572505823761088
    print(f"  both approach log(0.9 * theta) = {target:.6f},")
    print(f"  so survival halves every {math.log(2) / -target:.2f} generations")


if __name__ == "__main__":
    for fam in FAMILIES:
        sweep(fam)
    closed_form_check()
    decay_rates()
