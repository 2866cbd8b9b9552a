"""Command line entry point: ``hmtart analyze|compare|oracle-selftest|make-fixture``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .hmt import EMConfig, HmtModel, brute_force_posteriors, upward_downward
from .ingest import CHANNELS, load_manifest, save_image
from .report import (ReportError, RunConfig, compare, render_verdict_md, run_analysis,
                     write_outputs)
from .wavelet import MENU, forest_from_scales


def _channels(text: str):
    chans = tuple(c for c in text.upper() if c in CHANNELS)
    if not chans or len(chans) != len(text):
        raise argparse.ArgumentTypeError(f"channels must be letters from 'rgb', got {text!r}")
    return tuple(c for c in CHANNELS if c in chans)


def _wavelets(text: str):
    if text == "all":
        return MENU
    names = tuple(n.strip() for n in text.split(",") if n.strip())
    unknown = [n for n in names if n not in MENU]
    if unknown or not names:
        raise argparse.ArgumentTypeError(f"unknown wavelet(s) {unknown}; choose from {', '.join(MENU)}")
    return names


def _formats(text: str):
    fmts = tuple(f.strip() for f in text.split(",") if f.strip())
    bad = set(fmts) - {"json", "csv", "md", "svg"}
    if bad or not fmts:
        raise argparse.ArgumentTypeError(f"unknown format(s) {sorted(bad)}")
    return fmts


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--channels", type=_channels, default=CHANNELS, help="subset of 'rgb' (default rgb)")
    p.add_argument("--wavelets", type=_wavelets, default=MENU, help="'all' or comma list (default all)")
    p.add_argument("--states", type=int, default=2, help="hidden states per node, 2-5 (default 2)")
    p.add_argument("--levels", type=int, default=9, help="decomposition levels (default 9)")
    p.add_argument("--mode", choices=("whole", "patch"), default="whole")
    p.add_argument("--patch-size", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--out", default="hmtart_out", help="output directory")
    p.add_argument("--format", type=_formats, default=("json", "csv", "md", "svg"),
                   help="comma list of json,csv,md,svg")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")


def _config(args, images) -> RunConfig:
    return RunConfig(images=list(images), channels=args.channels, wavelets=args.wavelets,
                     K=args.states, J=args.levels, mode=args.mode, patch_size=args.patch_size,
                     em=EMConfig(args.max_iter, args.rel_tol, args.seed, args.restarts),
                     out_dir=args.out, formats=args.format, jobs=args.jobs)


def _report_errors(report) -> int:
    errors = report.data["errors"]
    for e in errors:
        print(f"error: image={e['image']} channel={e['channel']} wavelet={e['wavelet']} "
              f"unit={e['unit']}: {e['error']}", file=sys.stderr)
    return 1 if errors else 0


def cmd_analyze(args) -> int:
    report = run_analysis(_config(args, [args.image]))
    for path in write_outputs(report, args.out, args.format):
        print(path)
    return _report_errors(report)


def cmd_compare(args) -> int:
    if args.manifest:
        entries = load_manifest(args.manifest)
        by_role = {e["role"]: e["path"] for e in entries if e["role"]}
        if set(by_role) != {"candidate-A", "candidate-B"}:
            raise ReportError("manifest must name one candidate-A and one candidate-B")
        paths = [by_role["candidate-A"], by_role["candidate-B"]]
    else:
        if not (args.image_a and args.image_b):
            raise ReportError("compare needs two images or --manifest")
        paths = [args.image_a, args.image_b]
    status = 0
    reports = []
    for stem, path in zip(("candidate_A", "candidate_B"), paths):
        report = run_analysis(_config(args, [path]))
        for out in write_outputs(report, args.out, args.format, stem=stem):
            print(out)
        status |= _report_errors(report)
        reports.append(report)
    verdict = compare(*reports)
    with open(os.path.join(args.out, "verdict.json"), "w") as fh:
        fh.write(json.dumps(verdict, sort_keys=True, indent=1) + "\n")
    md = render_verdict_md(verdict)
    with open(os.path.join(args.out, "verdict.md"), "w") as fh:
        fh.write(md)
    print(md)
    return status


def oracle_selftest(n_cases: int = 50, seed: int = 0, tol: float = 1e-10, out=None) -> bool:
    """Cross-check the upward-downward pass against full enumeration on small trees."""
    out = out or sys.stdout
    rng = np.random.default_rng(seed)
    worst = {"gamma": 0.0, "xi": 0.0, "loglik": 0.0}
    start = time.perf_counter()
    for i in range(n_cases):
        J = (1, 2, 3)[i % 3]
        K = 2 if J == 3 else int(rng.integers(2, 4))
        model = HmtModel(rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K), size=(J - 1, K)),
                         rng.uniform(0.05, 10.0, (J, K)))
        forest = forest_from_scales([rng.normal(0, 2.0, (2 ** t, 2 ** t)) for t in range(J)])
        fast, slow = upward_downward(forest, model), brute_force_posteriors(forest, model)
        worst["gamma"] = max(worst["gamma"], max(float(np.abs(a - b).max()) for a, b in zip(fast.gamma, slow.gamma)))
        if J > 1:
            worst["xi"] = max(worst["xi"], max(float(np.abs(a - b).max()) for a, b in zip(fast.xi[1:], slow.xi[1:])))
        worst["loglik"] = max(worst["loglik"], abs(fast.log_likelihood - slow.log_likelihood))
    ok = all(v <= tol for v in worst.values())
    elapsed = time.perf_counter() - start
    for k, v in worst.items():
        print(f"{'PASS' if v <= tol else 'FAIL'} max |{k} error| = {v:.3e} (tol {tol:g})", file=out)
    print(f"{n_cases} random trees (1, 5 and 21 nodes) in {elapsed:.2f}s", file=out)
    return ok


def cmd_oracle(args) -> int:
    return 0 if oracle_selftest(args.cases, args.seed) else 1


def cmd_fixture(args) -> int:
    from .fixtures import checkerboard, synthetic_painting
    if args.kind == "checkerboard":
        img = checkerboard(args.size, args.cell)
    else:
        img = synthetic_painting(args.size, args.size, seed=args.seed, copy_smoothing=args.smoothing)
    save_image(img, args.output)
    print(args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmtart", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="complexity tables and curves for one image")
    p.add_argument("image")
    _add_run_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="rank two candidate images by complexity")
    p.add_argument("image_a", nargs="?")
    p.add_argument("image_b", nargs="?")
    p.add_argument("--manifest", help="JSON manifest with candidate-A/candidate-B roles")
    _add_run_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle-selftest", help="brute-force check of the tree recursions")
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("make-fixture", help="write a synthetic test image")
    p.add_argument("output")
    p.add_argument("--kind", choices=("painting", "checkerboard"), default="painting")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cell", type=int, default=1)
    p.add_argument("--smoothing", type=float, default=0.0)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ReportError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
