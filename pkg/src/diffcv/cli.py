"""Thin command-line client.

Every subcommand builds the same request the service accepts and either runs
it in-process (default) or posts it to a running service (``--server``).
Exit codes: 0 success, 1 validation failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ._version import __version__
from .config import parse_config
from .errors import ConfigError, DiffcvError
from .harness import control_mean_report, run_sweep, trace_csv
from .validation import run_validation_suite

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2


def _read_config(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"config error: cannot read {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    try:
        return text, parse_config(text)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  - {violation}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _post(server: str, route: str, payload: dict) -> dict:
    import httpx

    resp = httpx.post(server.rstrip("/") + route, json=payload, timeout=None)
    if resp.status_code == 400:
        print("config error:", file=sys.stderr)
        detail = resp.json().get("detail", {})
        for violation in detail.get("violations", [str(detail)]):
            print(f"  - {violation}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    resp.raise_for_status()
    return resp.json()


def _cmd_sweep(args) -> int:
    text, config = _read_config(args.config)
    if args.server:
        data = _post(args.server, "/sweep", {"config": text, "workers": args.workers})
        csv_text, manifest_dict = data["csv"], data["manifest"]
    else:
        csv_text, manifest = run_sweep(config, workers=args.workers)
        manifest_dict = manifest.__dict__
    out = args.output or config.output
    if out:
        Path(out).write_text(csv_text, encoding="utf-8")
        Path(out).with_suffix(Path(out).suffix + ".manifest.json").write_text(
            json.dumps(manifest_dict, indent=2, sort_keys=True), encoding="utf-8")
        print(f"wrote {out}")
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    text, config = _read_config(args.config)
    if args.server:
        csv_text = _post(args.server, "/simulate",
                         {"config": text, "eps": args.eps})["csv"]
    else:
        try:
            csv_text = trace_csv(config, args.eps)
        except DiffcvError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    Path(args.trace).write_text(csv_text, encoding="utf-8")
    print(f"wrote {args.trace}")
    return EXIT_OK


def _cmd_pde(args) -> int:
    text, config = _read_config(args.config)
    if args.server:
        data = _post(args.server, "/pde", {"config": text})
    else:
        try:
            cm = control_mean_report(config)
        except DiffcvError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        data = {"value": cm.value, "method": cm.method,
                "error_estimate": cm.error_estimate}
    print(f"E[F(U)] = {data['value']!r} (method {data['method']}, "
          f"error estimate {data['error_estimate']:.3e})")
    return EXIT_OK


def _cmd_validate(args) -> int:
    level = "full" if args.full else "quick"
    if args.server:
        data = _post(args.server, "/validate", {"level": level, "seed": args.seed})
        passed = data["passed"]
        for r in data["results"]:
            verdict = "SKIP" if r["skipped"] else ("PASS" if r["passed"] else "FAIL")
            print(f"[{verdict}] criterion {r['criterion']}: {r['description']} "
                  f"(measured {r['measured']}, threshold {r['threshold']})")
    else:
        kwargs = {} if args.seed is None else {"seed": args.seed}
        report = run_validation_suite(level=level, echo=print, **kwargs)
        passed = report.passed
        print(f"verification {'PASSED' if passed else 'FAILED'} "
              f"({report.wall_clock_seconds:.0f} s, level {level})")
    return EXIT_OK if passed else EXIT_VALIDATION


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffcv",
        description="coupled control-variate Monte Carlo for colored-noise-driven systems")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run the eps sweep and emit the CSV")
    p.add_argument("config")
    p.add_argument("--output", help="CSV path (default: config's output key or stdout)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--server", help="run on a diffcv service instead of in-process")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("simulate", help="dump one coupled path as CSV")
    p.add_argument("config")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--trace", required=True, help="output CSV path")
    p.add_argument("--server")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("pde", help="print the control expectation E[F(U)]")
    p.add_argument("config")
    p.add_argument("--server")
    p.set_defaults(fn=_cmd_pde)

    p = sub.add_parser("validate", help="run the built-in verification suite")
    p.add_argument("--full", action="store_true",
                   help="stated sample counts instead of the quick caps")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--server")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8722)
    p.set_defaults(fn=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
