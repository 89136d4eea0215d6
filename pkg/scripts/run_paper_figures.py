#!/usr/bin/env python3
"""Reproduce the reference data sets (scaled sizes) as CSV/JSON files.

Runs the four bundled configurations through the CLI: the many-body pump,
the fractional-filling doublet, the two-particle band structure and the
bound-band pumping curves, then the Chern tables for the single-particle
and bound-band cases.  Pass --full to use the published sizes (N=7/L=7 and
L=43), which takes hours on a laptop for the fractional case.
"""

import argparse
import pathlib
import sys
import tempfile

from twistloop.cli import main as cli

HERE = pathlib.Path(__file__).resolve().parent
CONFIGS = [
    ("fig3_many_body_pump.toml", "berry", []),
    ("fig4_fractional_filling.toml", "berry", []),
    ("fig5_bound_band_spectrum.toml", "spectrum", []),
    ("fig6_bound_band_pumping.toml", "berry", []),
    ("fig6_bound_band_pumping.toml", "chern", ["--bands", "-1,-2,-3"]),
    ("fig3_many_body_pump.toml", "chern", ["--phi-steps", "30"]),
]

FULL_SIZE = {
    "fig3_many_body_pump.toml": [("cells = 5", "cells = 7"),
                                 ("particles = 5", "particles = 7")],
    "fig5_bound_band_spectrum.toml": [("cells = 13", "cells = 43"),
                                      ("states_per_sector = 57", "states_per_sector = 200")],
    "fig6_bound_band_pumping.toml": [("cells = 13", "cells = 43")],
}


def run(full=False, threads=1):
    for name, task, extra in CONFIGS:
        path = HERE / "configs" / name
        if full and name in FULL_SIZE:
            text = path.read_text()
            for old, new in FULL_SIZE[name]:
                text = text.replace(old, new)
            tmp = tempfile.NamedTemporaryFile("w", suffix=".toml", delete=False)
            tmp.write(text)
            tmp.close()
            path = tmp.name
        print(f"== {task} {name}")
        rc = cli([task, "--config", str(path), "--threads", str(threads)] + extra)
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--full", action="store_true",
                    help="published sizes instead of the scaled instances")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    sys.exit(run(full=args.full, threads=args.threads))
