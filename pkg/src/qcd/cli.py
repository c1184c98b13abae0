"""Command-line frontend: streaming detection, Monte Carlo campaigns, design math.

Exit codes are a stable contract:
    0  success
    2  malformed input data (message names the offending line)
    3  input ended (or step budget ran out) without a crossing
    4  model / configuration / flag validation failure
    5  certification or property failure

All output files are plain text (CSV, JSON) with no timestamps, so a rerun
of the same manifest with the same seed is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass

from . import design as design_mod
from .checks import run_model_checks
from .detectors import ConfigError, DetectorConfig, initial_state, step
from .models import ModelError, load_model, model_from_dict, model_to_dict
from .simulate import InvalidScenario, ScenarioSpec, oc_sweep

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_STOP = 3
EXIT_VALIDATION = 4
EXIT_CERTIFICATION = 5


class _UsageError(Exception):
    pass


class _InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; flag problems are validation
    # failures (exit 4) under this tool's contract, so route through main().
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _parse_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(",") if p != "")
    except ValueError:
        raise _UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def _parse_scenario(text: str) -> ScenarioSpec:
    """Parse ``v1=INT|inf[;d=INT|inf[,...]]``."""

    def cvt(tok: str) -> float:
        if tok.strip().lower() == "inf":
            return math.inf
        return int(tok)

    v1 = None
    durations: tuple[float, ...] = ()
    try:
        for part in text.split(";"):
            key, _, val = part.partition("=")
            key = key.strip()
            if key == "v1":
                v1 = cvt(val)
            elif key == "d":
                durations = tuple(cvt(t) for t in val.split(","))
            else:
                raise ValueError(f"unknown scenario field {key!r}")
        if v1 is None:
            raise ValueError("missing v1")
    except (ValueError, InvalidScenario) as e:
        raise _UsageError(f"bad --scenario {text!r}: {e}") from None
    return ScenarioSpec(v1=v1, durations=durations)


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("QCD_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise _UsageError(f"QCD_SEED must be an integer, got {env!r}") from None
    return 0


def _config_from(kind: str, threshold: float, rho: tuple[float, ...]) -> DetectorConfig:
    if kind != "wdcusum" and rho:
        raise _UsageError("--rho only applies to --kind wdcusum")
    return DetectorConfig(kind=kind, threshold=threshold, rho=rho if kind == "wdcusum" else ())


# --- detect -------------------------------------------------------------------


def _iter_values(fh, csv_column: str | None):
    if csv_column is None:
        for n, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                yield n, float(text)
            except ValueError:
                raise _InputError(f"line {n}: not a number: {text!r}") from None
    else:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or csv_column not in reader.fieldnames:
            raise _InputError(f"line 1: no CSV column named {csv_column!r}")
        for n, row in enumerate(reader, start=2):
            raw = row.get(csv_column)
            try:
                yield n, float(raw)  # type: ignore[arg-type]
            except (TypeError, ValueError):
                raise _InputError(f"line {n}: not a number in column {csv_column!r}: {raw!r}") from None


def cmd_detect(args) -> int:
    model = load_model(args.model)
    config = _config_from(args.kind, args.threshold, tuple(args.rho or ()))
    config.validate_for(model)
    state = initial_state(model, config.kind)

    trace_fh = None
    if args.trace:
        if args.out:
            trace_fh = open(f"{args.out}.trace.csv", "w", encoding="utf-8", newline="\n")
        else:
            trace_fh = sys.stdout
        print("k,statistic,regenerated", file=trace_fh)

    close_trace = trace_fh is not None and trace_fh is not sys.stdout
    source = open(args.input, "r", encoding="utf-8") if args.input else sys.stdin
    try:
        for line_no, x in _iter_values(source, args.csv_column):
            out = step(model, config, state, x)
            if trace_fh is not None:
                print(f"{state.k},{out.statistic!r},{int(out.regenerated)}", file=trace_fh)
            if out.crossed:
                print(f"STOP k={state.k} statistic={out.statistic!r}")
                return EXIT_OK
            if args.max_steps is not None and state.k >= args.max_steps:
                print(f"no crossing within --max-steps={args.max_steps}", file=sys.stderr)
                return EXIT_NO_STOP
    finally:
        if args.input:
            source.close()
        if close_trace:
            trace_fh.close()
    print(f"input ended after {state.k} samples without crossing", file=sys.stderr)
    return EXIT_NO_STOP


# --- simulate -----------------------------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    """Self-contained description of one simulation campaign.

    Serializing and re-running a manifest reproduces its data files byte for
    byte; nothing time-dependent is stored.
    """

    model: dict
    kind: str
    thresholds: tuple[float, ...]
    rho: tuple[float, ...]
    scenarios: tuple[str, ...]
    trials: int
    arl_trials: int
    seed: int
    max_steps: int | None
    alpha: float | None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "kind": self.kind,
            "thresholds": list(self.thresholds),
            "rho": list(self.rho),
            "scenarios": list(self.scenarios),
            "trials": self.trials,
            "arl_trials": self.arl_trials,
            "seed": self.seed,
            "max_steps": self.max_steps,
            "alpha": self.alpha,
        }


def _manifest_from_args(args) -> RunManifest:
    if args.manifest:
        with open(args.manifest, "r", encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as e:
                raise _UsageError(f"manifest {args.manifest} is not valid JSON: {e}") from None
        model_entry = obj.get("model")
        if isinstance(model_entry, str):
            model_dict = model_to_dict(load_model(model_entry))
        else:
            model_dict = model_to_dict(model_from_dict(model_entry))
        scen = obj.get("scenarios", [])
        if not isinstance(scen, list):
            raise _UsageError("manifest 'scenarios' must be a list of scenario strings")
        return RunManifest(
            model=model_dict,
            kind=obj.get("kind", "dcusum"),
            thresholds=tuple(float(b) for b in obj.get("thresholds", [])),
            rho=tuple(float(r) for r in obj.get("rho", [])),
            scenarios=tuple(str(s) for s in scen),
            trials=int(obj.get("trials", 10_000)),
            arl_trials=int(obj.get("arl_trials", 2_000)),
            seed=int(obj["seed"]) if "seed" in obj else _resolve_seed(args),
            max_steps=int(obj["max_steps"]) if obj.get("max_steps") is not None else None,
            alpha=float(obj["alpha"]) if obj.get("alpha") is not None else None,
        )
    if not args.model:
        raise _UsageError("simulate needs --manifest or --model")
    if not args.threshold:
        raise _UsageError("simulate needs --threshold")
    if not args.scenario:
        raise _UsageError("simulate needs at least one --scenario")
    return RunManifest(
        model=model_to_dict(load_model(args.model)),
        kind=args.kind,
        thresholds=_parse_floats(args.threshold, "--threshold"),
        rho=tuple(args.rho or ()),
        scenarios=tuple(args.scenario),
        trials=args.trials,
        arl_trials=args.arl_trials,
        seed=_resolve_seed(args),
        max_steps=args.max_steps,
        alpha=None,
    )


def _certification_failures(manifest: RunManifest, report) -> list[str]:
    """Run-length floors implied by the configuration, at 3-standard-error slack."""
    failures = []
    seen = set()
    for row in report.rows:
        if row.threshold in seen:
            continue
        seen.add(row.threshold)
        bound = None
        if manifest.kind == "wdcusum":
            bound = math.exp(row.threshold) / 2.0
        elif manifest.kind == "dcusum" and manifest.alpha is not None:
            L = manifest.model["L"]
            bound = math.exp(row.threshold) / (1.0 + (row.threshold / manifest.alpha) ** (L + 1))
        if bound is not None and row.arl < bound - 3.0 * row.arl_se:
            failures.append(
                f"b={row.threshold:g}: run length {row.arl:.2f} (se {row.arl_se:.2f}) "
                f"below the guaranteed floor {bound:.2f}"
            )
    return failures


def cmd_simulate(args) -> int:
    manifest = _manifest_from_args(args)
    model = model_from_dict(manifest.model)
    scenarios = [_parse_scenario(s) for s in manifest.scenarios]
    config_check = DetectorConfig(
        kind=manifest.kind,
        threshold=manifest.thresholds[0] if manifest.thresholds else 1.0,
        rho=manifest.rho if manifest.kind == "wdcusum" else (),
    )
    config_check.validate_for(model)

    report = oc_sweep(
        model,
        kind=manifest.kind,
        rho=manifest.rho if manifest.kind == "wdcusum" else (),
        thresholds=manifest.thresholds,
        scenarios=scenarios,
        n_trials=manifest.trials,
        master_seed=manifest.seed,
        arl_trials=manifest.arl_trials,
        arl_max_steps=manifest.max_steps,
        wadd_max_steps=manifest.max_steps,
        threads=args.threads,
    )

    csv_text = report.to_csv_text()
    json_obj = {"manifest": manifest.to_dict(), "report": report.to_json_dict()}
    if args.out:
        with open(f"{args.out}.csv", "wb") as fh:
            fh.write(csv_text.encode("utf-8"))
        with open(f"{args.out}.json", "wb") as fh:
            fh.write(json.dumps(json_obj, sort_keys=True, indent=2).encode("utf-8"))
        with open(f"{args.out}.manifest.json", "wb") as fh:
            fh.write(json.dumps(manifest.to_dict(), sort_keys=True, indent=2).encode("utf-8"))
    else:
        sys.stdout.write(csv_text)

    print(f"{'b':>10} {'arl':>12} {'arl_se':>10} {'scenario':>16} {'wadd':>10} {'wadd_se':>8}")
    for r in report.rows:
        flag = " (censored, lower estimate)" if r.arl_censored else ""
        print(
            f"{r.threshold:>10.4g} {r.arl:>12.2f} {r.arl_se:>10.2f} {r.scenario_id:>16} "
            f"{r.wadd:>10.2f} {r.wadd_se:>8.2f}{flag}"
        )

    failures = _certification_failures(manifest, report)
    for f in failures:
        print(f"CERTIFICATION FAIL {f}", file=sys.stderr)
    return EXIT_CERTIFICATION if failures else EXIT_OK


# --- design -------------------------------------------------------------------


def cmd_design(args) -> int:
    kl = _parse_floats(args.kl, "--kl")
    if args.L is not None and args.L != len(kl):
        raise _UsageError(f"--L {args.L} disagrees with {len(kl)} --kl entries")
    deltas = _parse_floats(args.deltas, "--deltas")
    if len(deltas) != 2:
        raise _UsageError(f"--deltas expects two values, got {args.deltas!r}")
    inp = design_mod.DesignInput(
        gamma=args.gamma,
        kl=kl,
        deltas=(deltas[0], deltas[1]),
        alpha=args.alpha,
        c=_parse_floats(args.c, "--c") if args.c else None,
    )
    card = design_mod.design_card(inp)
    if args.json:
        print(json.dumps(card, sort_keys=True, indent=2))
        return EXIT_OK
    print(f"ARL target gamma = {card['gamma']:g}  (L = {card['L']})")
    print("phase KL divergences: " + ", ".join(f"{v:g}" for v in card["kl"]))
    print(f"wdcusum threshold: b = {card['wdcusum_threshold']:.6f}")
    if card["dcusum_threshold"] is not None:
        print(f"dcusum threshold:  b = {card['dcusum_threshold']:.6f}  (alpha = {card['alpha']:g})")
    else:
        print(f"dcusum threshold:  {card['dcusum_note']}")
    if "rho_range" in card:
        if card["rho_range"] is not None:
            lo, hi = card["rho_range"]
            print(f"rho_1 range at b = log(gamma) = {card['rho_range_b']:.6f}: [{lo:.6g}, {hi:.6g}]")
        else:
            print(f"rho_1 range: {card['rho_range_error']}")
        print(card["rho_range_note"])
    if "predicted_wadd" in card:
        cs = ", ".join(f"{v:g}" for v in card["regime_constants"])
        print(f"predicted delay for c = ({cs}): {card['predicted_wadd']:.2f}")
    return EXIT_OK


# --- validate -----------------------------------------------------------------


def cmd_validate(args) -> int:
    model = load_model(args.model)
    rho = tuple(args.rho) if args.rho else None
    results = run_model_checks(model, seed=_resolve_seed(args), rho=rho)
    failed = False
    for r in results:
        tag = "PASS" if r.passed else "FAIL"
        print(f"{tag} {r.name}: {r.detail}")
        failed = failed or not r.passed
    return EXIT_CERTIFICATION if failed else EXIT_OK


# --- wiring -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qcd", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run a detector over a stream of numbers")
    p.add_argument("--model", required=True, help="model description JSON file")
    p.add_argument("--kind", choices=["dcusum", "wdcusum", "cusum"], default="dcusum")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--rho", type=lambda s: _parse_floats(s, "--rho"), default=None)
    p.add_argument("--input", default=None, help="read observations from FILE instead of stdin")
    p.add_argument("--csv-column", default=None, help="treat input as CSV and read this column")
    p.add_argument("--trace", action="store_true", help="emit k,statistic,regenerated per sample")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--out", default=None, help="prefix for the trace file")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="run a Monte Carlo campaign from a manifest or flags")
    p.add_argument("--manifest", default=None, help="JSON manifest file")
    p.add_argument("--model", default=None)
    p.add_argument("--kind", choices=["dcusum", "wdcusum", "cusum"], default="dcusum")
    p.add_argument("--threshold", default=None, help="comma-separated ascending thresholds")
    p.add_argument("--rho", type=lambda s: _parse_floats(s, "--rho"), default=None)
    p.add_argument("--scenario", action="append", default=None, help="v1=INT|inf;d=INT|inf[,...] (repeatable)")
    p.add_argument("--trials", type=int, default=10_000, help="delay trials per scenario")
    p.add_argument("--arl-trials", type=int, default=2_000, help="run-length trials per threshold")
    p.add_argument("--seed", type=int, default=None, help="master seed (QCD_SEED fallback)")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None, help="output prefix for .csv/.json/.manifest.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("design", help="thresholds, weight ranges, delay predictions")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--kl", required=True, help="comma-separated I_1..I_L")
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--deltas", default="0.3,0.3")
    p.add_argument("--c", default=None, help="regime constants c_1..c_{L-1} for a delay prediction")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("validate", help="run the short-window property suite on a model")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rho", type=lambda s: _parse_floats(s, "--rho"), default=None)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except _InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ModelError, ConfigError, InvalidScenario, design_mod.DesignError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
