"""
Command-line interface.

    baroalign check A B           simultaneity verdict for two recordings
    baroalign align A B           full alignment report, optionally re-stamp B
    baroalign group A B C ...     align a set against its longest member
    baroalign synth --out DIR     write synthetic sessions with ground truth
    baroalign eval --dataset DIR  error table over a synthetic dataset
    baroalign rejprob             chance of rejecting independent recordings

Any long option of a command may also be given in a ``key=value`` file
passed with ``--config``; options on the command line win over the file.

Exit codes: 0 success, 1 internal error, 2 usage or I/O error,
3 rejected as non-simultaneous, 4 insufficient data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ingest, pipeline, stage1, stage2, synth
from .model import Method, Verdict, compose_time_axes

log = logging.getLogger("baroalign")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_REJECTED, EXIT_INSUFFICIENT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _float_pair(text: str) -> tuple[float, float]:
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'LO,HI', got {text!r}")
    lo, hi = float(parts[0]), float(parts[1])
    if lo > hi:
        raise argparse.ArgumentTypeError(f"range {text!r} has LO > HI")
    return lo, hi


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_stage_options(p):
    p.add_argument("--threshold-pa", type=float, default=100.0,
                   help="rejection threshold on the mean absolute pressure difference")
    p.add_argument("--min-overlap-s", type=float, default=60.0,
                   help="shortest overlap that still gets a verdict")
    p.add_argument("--search-range-s", type=_float_pair, default=None, metavar="LO,HI",
                   help="bounds of the pressure lag search (t_b - t_a)")
    p.add_argument("--no-compensate", action="store_true",
                   help="skip FIFO compensation of free-running accelerometers")


def _add_align_options(p):
    _add_stage_options(p)
    p.add_argument("--method", choices=[Method.DELTA_STD.value, Method.DELTA_ERROR.value],
                   default=Method.DELTA_STD.value, help="pressure pre-alignment loss")
    p.add_argument("--huber-delta-pa", type=float, default=100.0)
    p.add_argument("--range-s", type=float, default=5.0,
                   help="accelerometer refinement searches +- this around the pressure lag")
    p.add_argument("--accel", default=None, help="accelerometer name to use on every device")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="baroalign", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    parser.add_argument("--config", type=Path, default=None, help="key=value defaults for any option")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="decide whether two recordings were made simultaneously")
    p.add_argument("rec_a", type=Path)
    p.add_argument("rec_b", type=Path)
    _add_stage_options(p)

    p = sub.add_parser("align", help="align recording B to recording A")
    p.add_argument("rec_a", type=Path)
    p.add_argument("rec_b", type=Path)
    _add_align_options(p)
    p.add_argument("--out", type=Path, default=None, help="report file (default: stdout)")
    p.add_argument("--apply", type=Path, default=None, metavar="OUT_DIR",
                   help="write B re-stamped onto A's time axis")

    p = sub.add_parser("group", help="align several recordings against the longest one")
    p.add_argument("recs", type=Path, nargs="+")
    _add_align_options(p)
    p.add_argument("--out", type=Path, default=None, help="directory for aligned recordings and reports.json")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")

    p = sub.add_parser("synth", help="generate synthetic sessions with ground truth")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", choices=["active", "passive"], default="active")
    p.add_argument("--duration-s", type=float, default=3600.0)
    p.add_argument("--n-devices", type=int, default=2)
    p.add_argument("--sessions", type=int, default=1,
                   help="number of sessions; several go to session_NNN subdirectories")
    p.add_argument("--skews-ppm", type=_float_list, default=None,
                   help="fixed per-device clock skews instead of random ones")
    p.add_argument("--temperature-skew", action="store_true", help="add slow temperature-driven skew changes")
    p.add_argument("--nonsimultaneous", action="store_true",
                   help="write pairs from unrelated sessions instead")

    p = sub.add_parser("eval", help="alignment error table over a synthetic dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--durations", type=_float_list, default=[5, 10, 15, 30, 60],
                   help="crop durations in minutes")
    p.add_argument("--out", type=Path, default=None, help="CSV file (default: stdout)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    p.add_argument("--max-splits", type=int, default=5)
    _add_align_options(p)

    p = sub.add_parser("rejprob", help="probability of rejecting independent recordings")
    p.add_argument("--sigma", type=float, default=synth.INTERDAY_SIGMA_PA, help="inter-day pressure sd in Pa")
    p.add_argument("--A", type=float, default=100.0, help="absolute sensor accuracy in Pa; readings may differ by up to 2A")
    p.add_argument("--draws", type=int, default=0, help="also estimate by Monte Carlo with this many draws")
    p.add_argument("--seed", type=int, default=0)
    return parser


def read_config_file(path: Path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{i}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _config_tokens(values: dict[str, str]) -> list[str]:
    tokens = []
    for key, text in values.items():
        flag = "--" + key.replace("_", "-")
        if text.lower() in ("true", "yes"):
            tokens.append(flag)
        elif text.lower() in ("false", "no"):
            continue
        else:
            tokens.append(f"{flag}={text}")
    return tokens


def _apply_config(parser, argv, args, values: dict[str, str]):
    """Re-parse with the file's options placed before the command line's, so flags win."""
    i = argv.index(args.command)
    return parser.parse_args(argv[:i + 1] + _config_tokens(values) + argv[i + 1:])


def _pipeline_config(args) -> pipeline.PipelineConfig:
    try:
        return _build_pipeline_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _build_pipeline_config(args) -> pipeline.PipelineConfig:
    s1 = stage1.Stage1Config(
        rejection_threshold_pa=args.threshold_pa,
        min_overlap_s=args.min_overlap_s,
        search_range_s=args.search_range_s,
        method=getattr(args, "method", Method.DELTA_STD.value),
        huber_delta_pa=getattr(args, "huber_delta_pa", 100.0),
    )
    s2 = stage2.Stage2Config(refinement_range_s=getattr(args, "range_s", 5.0))
    return pipeline.PipelineConfig(s1, s2, getattr(args, "accel", None))


def _load(path: Path, args):
    return ingest.read_recording(path, compensate=not args.no_compensate)


def _write_text(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _verdict_exit(verdict: Verdict) -> int:
    return {Verdict.SIMULTANEOUS: EXIT_OK, Verdict.REJECTED: EXIT_REJECTED}.get(verdict, EXIT_INSUFFICIENT)


def cmd_check(args) -> int:
    cfg = _pipeline_config(args)
    a, b = _load(args.rec_a, args), _load(args.rec_b, args)
    rate = min(a.pressure.sample_rate_hz, b.pressure.sample_rate_hz)
    p1 = ingest.resample_linear(a.pressure, rate)
    p2 = ingest.resample_linear(b.pressure, rate)
    res = stage1.check_simultaneous(p1, p2, cfg.stage1)
    lag = "" if res.best_lag is None else f" lag_s={res.best_lag.lag_s!r}"
    print(f"{res.verdict.value} statistic_pa={res.statistic_pa!r}{lag}")
    return _verdict_exit(res.verdict)


def cmd_align(args) -> int:
    cfg = _pipeline_config(args)
    a, b = _load(args.rec_a, args), _load(args.rec_b, args)
    report = pipeline.synchronize_pair(a, b, cfg)
    for w in report.warnings:
        log.warning("%s", w)
    _write_text(args.out, pipeline.report_to_json(report))
    if args.apply is not None and report.clock_model is not None:
        ingest.write_recording(compose_time_axes(a, b, report.clock_model), args.apply)
        log.info("wrote re-stamped %s to %s", b.device_id, args.apply)
    return _verdict_exit(report.verdict)


def cmd_group(args) -> int:
    cfg = _pipeline_config(args)
    recs = [_load(p, args) for p in args.recs]
    result = pipeline.synchronize_group(recs, cfg, jobs=args.jobs)
    summary = {
        "reference": result.reference_id,
        "excluded": list(result.excluded),
        "errors": result.errors,
        "reports": [pipeline.report_to_dict(r) for r in result.reports],
    }
    text = json.dumps(summary, indent=2, allow_nan=False) + "\n"
    if args.out is None:
        _write_text(None, text)
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        for rec in result.aligned:
            ingest.write_recording(rec, args.out / rec.device_id)
        _write_text(args.out / "reports.json", text)
    return EXIT_OK


def _scenario_config(args) -> synth.ScenarioConfig:
    try:
        return _build_scenario_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _build_scenario_config(args) -> synth.ScenarioConfig:
    kw = dict(duration_s=args.duration_s, n_devices=args.n_devices, rng_seed=args.seed)
    cfg = synth.ScenarioConfig.passive(**kw) if args.scenario == "passive" else synth.ScenarioConfig(**kw)
    clock = cfg.clock
    if args.skews_ppm:
        clock = replace(clock, skews_ppm=tuple(args.skews_ppm))
    if args.temperature_skew:
        clock = replace(clock, temperature_skew=True)
    return replace(cfg, clock=clock)


def cmd_synth(args) -> int:
    base = _scenario_config(args)
    if args.sessions < 1:
        raise UsageError("--sessions must be at least 1")
    for i in range(args.sessions):
        cfg = base.with_seed(args.seed + i)
        out = args.out if args.sessions == 1 else args.out / f"session_{i:03d}"
        if args.nonsimultaneous:
            r1, r2, truth = synth.generate_nonsimultaneous_pair(cfg)
            recs = [r1, r2]
        else:
            recs, truth = synth.generate_session(cfg)
        synth.write_session(recs, truth, out)
        for line in truth.notes:
            log.info("%s: %s", out.name, line)
    log.info("wrote %d session(s) to %s", args.sessions, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _pipeline_config(args)
    durations = [60.0 * d for d in args.durations]
    try:
        table = pipeline.evaluate(args.dataset, durations, cfg, jobs=args.jobs, max_splits=args.max_splits)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write_text(args.out, pipeline.table_to_csv(table))
    return EXIT_OK


def cmd_rejprob(args) -> int:
    try:
        p = stage1.rejection_probability(args.sigma, args.A)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"p_rej={p!r}")
    if args.draws > 0:
        rng = np.random.default_rng(args.seed)
        diff = rng.normal(0.0, args.sigma, args.draws) - rng.normal(0.0, args.sigma, args.draws)
        print(f"p_rej_monte_carlo={float(np.mean(np.abs(diff) > 2 * args.A))!r}")
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "align": cmd_align,
    "group": cmd_group,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "rejprob": cmd_rejprob,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.config is not None:
            args = _apply_config(parser, argv, args, read_config_file(args.config))
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (FileNotFoundError, NotADirectoryError, IsADirectoryError, ingest.IngestError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except pipeline.PipelineError as exc:
        log.error("%s", exc)
        if exc.stage == "pre-alignment":
            return EXIT_INSUFFICIENT
        if exc.stage == "group":
            return EXIT_REJECTED
        return EXIT_USAGE
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
