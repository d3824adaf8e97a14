"""Command line front end: `gevrey-lab STAGE --spec PATH --out DIR`."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import SpecError, StageDependencyError, StageFailure
from .pipeline import STAGES, run_pipeline
from .spec import default_spec_path, validate

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


def _eps_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("eps grid needs positive moduli")
    return vals


def _trunc(text):
    try:
        B, M = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected B,M, got {text!r}") from None
    if B < 0 or M < 1:
        raise argparse.ArgumentTypeError("need B >= 0 and M >= 1")
    return B, M


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gevrey-lab", description=__doc__)
    ap.add_argument("stage", choices=("validate",) + STAGES + ("all",))
    ap.add_argument("--spec", default=None, help="problem spec JSON (default: bundled spec)")
    ap.add_argument("--out", default="gevrey_out", help="artifact directory")
    ap.add_argument("--eps-grid", type=_eps_list, default=None,
                    help="comma separated |eps| samples for the flatness and gevrey stages")
    ap.add_argument("--trunc", type=_trunc, default=None, help="truncation B,M")
    ap.add_argument("--seed", type=int, default=None, help="offset added to every seed in the problem file")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    path = args.spec or default_spec_path()
    try:
        spec = validate(path)
    except SpecError as exc:
        print(f"invalid spec {path}:", file=sys.stderr)
        for d in exc.diagnostics:
            print(f"  - {d}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.stage == "validate":
        print(f"{path}: valid (hash {spec.hash[:12]})")
        return EXIT_OK
    try:
        manifest = run_pipeline(spec, args.stage, args.out, args.eps_grid, args.seed, args.trunc)
    except StageDependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for name in sorted(manifest.artifacts):
        print(name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
