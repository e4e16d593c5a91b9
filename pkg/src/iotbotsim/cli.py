"""Command line: run scenarios, list presets, sweep one parameter."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import yaml

from .metrics import export
from .scenario import PRESET_NAMES, ScenarioError, load_scenario_file, parse_scenario, preset, preset_text, scenario_to_dict
from .simulation import run_scenario
from .units import UnitError

log = logging.getLogger("iotbotsim")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iotbotsim", description="IoT botnet and DDoS discrete-event simulator")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("scenario", nargs="?", help="scenario file (YAML)")
        src.add_argument("--preset", choices=PRESET_NAMES, help="bundled incident preset")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--until", type=float, help="stop early at this simulated time (seconds)")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--format", choices=("csv", "structured"), default="csv", help="series output format")

    run = sub.add_parser("run", help="run one scenario")
    common(run)

    pre = sub.add_parser("preset", help="inspect bundled presets")
    pre_sub = pre.add_subparsers(dest="preset_command", required=True)
    pre_sub.add_parser("list", help="list preset names")
    show = pre_sub.add_parser("show", help="print a preset's scenario file")
    show.add_argument("name", choices=PRESET_NAMES)

    sw = sub.add_parser("sweep", help="run a scenario once per value of one parameter")
    common(sw)
    sw.add_argument("--param", required=True, help="dotted path, e.g. malware.mirai.scan-rate")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--jobs", type=int, default=1, help="parallel runs")

    val = sub.add_parser("validate", help="check a scenario file and report every problem")
    val.add_argument("scenario")
    return p


# ---------------------------------------------------------------------------
# Parameter paths for sweeps
# ---------------------------------------------------------------------------


def _key(container: dict, seg: str) -> str:
    if seg in container:
        return seg
    alt = seg.replace("-", "_")
    if alt in container:
        return alt
    raise KeyError(seg)


def set_param(doc: dict, path: str, value: Any) -> dict:
    """Set ``value`` at a dotted path; list items are picked by name, domain or index."""
    segs = path.split(".")
    cur: Any = doc
    for i, seg in enumerate(segs):
        last = i == len(segs) - 1
        if isinstance(cur, list):
            match = [x for x in cur if isinstance(x, dict) and seg in (x.get("name"), x.get("domain"))]
            if not match and seg.isdigit() and int(seg) < len(cur):
                match = [cur[int(seg)]]
            if not match:
                raise KeyError(f"no list item named {seg!r} in {'.'.join(segs[:i]) or '<root>'}")
            if last:
                raise KeyError(f"{path} names a list item, not a field")
            cur = match[0]
        elif isinstance(cur, dict):
            if last:
                try:
                    cur[_key(cur, seg)] = value
                except KeyError:
                    cur[seg.replace("-", "_")] = value
                return doc
            try:
                cur = cur[_key(cur, seg)]
            except KeyError:
                raise KeyError(f"unknown field {seg!r} in {path}") from None
        else:
            raise KeyError(f"cannot descend into {seg!r} in {path}")
    return doc


def sweep_specs(base_text: str, param: str, values: list[str]):
    base = scenario_to_dict(parse_scenario(base_text))
    out = []
    for v in values:
        doc = set_param(json.loads(json.dumps(base)), param, yaml.safe_load(v))
        out.append((v, parse_scenario(yaml.safe_dump(doc, sort_keys=False))))
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _load(args):
    if args.preset:
        return preset(args.preset), preset_text(args.preset)
    text = Path(args.scenario).read_text()
    return parse_scenario(text), text


def _run_one(spec, until, out: Path, fmt: str) -> dict:
    res = run_scenario(spec, until=until)
    export(res.series, res.report, out, fmt)
    return res.report.to_dict()


def _print_summary(name: str, report: dict) -> None:
    print(f"[{name}]")
    for k in sorted(report):
        if k in ("annotations", "extras"):
            continue
        print(f"  {k}: {report[k]:.6g}")
    for k, v in sorted(report.get("extras", {}).items()):
        print(f"  {k}: {v:.6g}")


def cmd_run(args) -> int:
    spec, _ = _load(args)
    spec = spec.with_overrides(seed=args.seed)
    report = _run_one(spec, args.until, args.out, args.format)
    _print_summary(spec.name, report)
    return EXIT_OK


def cmd_sweep(args) -> int:
    _, text = _load(args)
    if args.seed is not None:
        doc = yaml.safe_load(text)
        doc["seed"] = args.seed
        text = yaml.safe_dump(doc, sort_keys=False)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    runs = sweep_specs(text, args.param, values)
    dirs = [args.out / f"run-{i:03d}" for i in range(len(runs))]
    jobs = [(spec, args.until, d, args.format) for (_, spec), d in zip(runs, dirs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_run_star, jobs))
    else:
        reports = [_run_one(*j) for j in jobs]
    index = [{"value": v, "dir": d.name, "summary": r} for (v, _), d, r in zip(runs, dirs, reports)]
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "sweep.json").write_text(json.dumps({"param": args.param, "runs": index}, indent=2, sort_keys=True) + "\n")
    for (v, spec), r in zip(runs, reports):
        _print_summary(f"{spec.name} {args.param}={v}", r)
    return EXIT_OK


def _run_star(job):
    return _run_one(*job)


def cmd_preset(args) -> int:
    if args.preset_command == "list":
        for name in PRESET_NAMES:
            print(f"{name}\t{preset(name).description}")
    else:
        sys.stdout.write(preset_text(args.name))
    return EXIT_OK


def cmd_validate(args) -> int:
    load_scenario_file(args.scenario)
    print(f"{args.scenario}: ok")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "preset": cmd_preset, "validate": cmd_validate}
    try:
        return handlers[args.command](args)
    except ScenarioError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (KeyError, UnitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
