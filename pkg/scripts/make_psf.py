"""Write a point-spread function as a matrix file usable by ``deconv --psf``.

Usage examples:

    python scripts/make_psf.py "gaussian:sigma=1.5,size=7" runs/psf.txt
    python scripts/make_psf.py box:size=5

The PSF is normalised to unit sum before it is written. Without a destination
the file lands in ``psf/<kind>.txt``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.recon.linops import parse_psf_spec  # noqa: E402
from src.recon.sim import save_psf  # noqa: E402


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Write a PSF specification to a whitespace-separated matrix file.",
    )
    parser.add_argument(
        "spec",
        help="PSF specification (gaussian:sigma=S,size=K | box:size=K | delta)",
    )
    parser.add_argument(
        "destination",
        nargs="?",
        default=None,
        help="Optional output file. Defaults to psf/<kind>.txt if omitted.",
    )
    return parser.parse_args()


def main() -> None:
    args = parse_args()

    psf = parse_psf_spec(args.spec)
    if args.destination is not None:
        destination = Path(args.destination)
    else:
        destination = Path("psf") / f"{args.spec.split(':', 1)[0].strip().lower()}.txt"

    path = save_psf(psf / psf.sum(), destination)
    print(f"PSF of shape {psf.shape[0]}x{psf.shape[1]} written to: {path}")


if __name__ == "__main__":
    main()
