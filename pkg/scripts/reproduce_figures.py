#!/usr/bin/env python3
"""Run every bundled figure config and the tiled-vs-repeated comparison.

Usage: python3 scripts/reproduce_figures.py [outdir]

Outputs land under <outdir>/figN/. The process behind the published curves
is not documented anywhere, so these reproductions are qualitative: the
default is a power-law autocovariance with exponent 1, recorded in each
run's manifest.
"""

import sys
import time
from pathlib import Path

from capalloc.cli import main as capalloc_main

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def run(outdir: Path) -> int:
    singles = [
        "fig4.toml", "fig5.toml", "fig6.toml", "fig7.toml", "fig8.toml",
        "fig9_recurrent.toml", "fig10_multidim.toml", "fig11_coeffs.toml",
    ]
    status = 0
    for name in singles:
        target = outdir / name.split(".")[0].split("_")[0]
        start = time.perf_counter()
        code = capalloc_main(["run", str(CONFIG_DIR / name), "--outdir", str(target)])
        print(f"{name}: exit {code} in {time.perf_counter() - start:.1f}s")
        status = status or code
    code = capalloc_main([
        "compare",
        str(CONFIG_DIR / "fig12_tiled.toml"),
        str(CONFIG_DIR / "fig12_repeated.toml"),
        "--outdir", str(outdir / "fig12"),
    ])
    print(f"fig12 comparison: exit {code}")
    return status or code


if __name__ == "__main__":
    sys.exit(run(Path(sys.argv[1] if len(sys.argv) > 1 else "out")))
