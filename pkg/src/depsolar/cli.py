"""Command line entry point: ``run``, ``validate`` and ``sweep``.

Exit codes: 0 on success, 1 on a configuration error, 2 on a runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, config_from_dict, load_config, set_dotted
from .metrics import export_metrics
from .runner import run_scenario

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

SUMMARY_KEYS = ("settling_time_s", "overshoot_deg", "stable", "takeover_latency_ms",
                "election_latency_ms", "safety_ok", "energy_kwh", "latency_mean_ms",
                "loss_of_control_steps")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _report_config_error(path, exc: ConfigError) -> int:
    print(f"{path}: invalid configuration", file=sys.stderr)
    for e in exc.errors:
        print(f"  - {e}", file=sys.stderr)
    return EXIT_INVALID


def _short(summary: dict) -> dict:
    return {k: summary.get(k) for k in SUMMARY_KEYS if k in summary}


def cmd_validate(args) -> int:
    try:
        load_config(args.config)
    except ConfigError as exc:
        return _report_config_error(args.config, exc)
    except OSError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{args.config}: ok")
    return EXIT_OK


def _load_raw(path: Path) -> dict:
    return json.loads(path.read_text())


def cmd_run(args) -> int:
    path = Path(args.config)
    try:
        data = _load_raw(path)
        if args.seed is not None:
            data = set_dotted(data, "rng_seed", args.seed)
        cfg = config_from_dict(data, base_dir=path.parent)
    except ConfigError as exc:
        return _report_config_error(path, exc)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        log = run_scenario(cfg, real_net=args.real_net)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        target = export_metrics(log, out / f"{path.stem}.{args.format}", args.format)
    except Exception as exc:  # noqa: BLE001 - any failure here is a runtime error
        logging.getLogger(__name__).debug("run failed", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"metrics": str(target), "summary": _short(log.summary)}, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    path = Path(args.config)
    values = [_parse_value(v) for v in args.values.split(",")]
    try:
        base = _load_raw(path)
        cfgs = [config_from_dict(set_dotted(base, args.param, v), base_dir=path.parent) for v in values]
    except ConfigError as exc:
        return _report_config_error(path, exc)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    rows = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for i, (v, cfg) in enumerate(zip(values, cfgs)):
            log = run_scenario(cfg, real_net=args.real_net)
            export_metrics(log, out / f"{path.stem}_sweep{i}.{args.format}", args.format)
            rows.append({args.param: v, **_short(log.summary)})
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(rows, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="depsolar", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log protocol events")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="scenario JSON file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--real-net", action="store_true", help="use loopback TCP sockets and wall-clock time")

    p = sub.add_parser("run", help="run one scenario and export metrics")
    common(p)
    p.add_argument("--seed", type=int, help="override rng_seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a scenario file and list every violation")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="run a scenario once per value of one parameter")
    common(p)
    p.add_argument("--param", required=True, help="dotted key, e.g. protocol.timeout_ms")
    p.add_argument("--values", required=True, help="comma separated values (parsed as JSON when possible)")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
