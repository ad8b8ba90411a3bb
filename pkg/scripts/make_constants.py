"""Regenerate the constants ledger shipped in src/magspec/data/constants.json."""

from __future__ import annotations

import argparse
from pathlib import Path

from magspec import capacity, testbench
from magspec.lattice import Cube, Grid
from magspec.ledger import run_id
from magspec.precision import fit_tetrahedron_constants


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--output", default=str(Path(__file__).parents[1] / "src/magspec/data/constants.json"))
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    ledger, _ = testbench.calibrate(args.seed, n=2)
    ref3 = Grid(Cube.unit(3, 1.0), 17)
    ledger.set("cap_Q1_n3", capacity.cube_capacity(ref3), run_id("cap_Q1", 0, n=3, m=17), "capacity of the unit cube, m=17")
    for n in (2, 3):
        fit_tetrahedron_constants(ledger, n)
    ledger.save(args.output)
    print(f"wrote {len(ledger.entries)} constants to {args.output}")


if __name__ == "__main__":
    main()
