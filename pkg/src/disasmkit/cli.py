"""Command line front end.

Four commands: `disasm` runs one profile over one binary and writes
the record file, `eval` scores a record file against ground truth,
`matrix` crosses every profile with every corpus binary, `strategies
list` documents the flags.  Exit codes: 0 success, 1 bad usage, 2
unreadable or malformed input, 3 internal failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import (PROFILES, FLAG_HELP, StrategyConfig, format_value,
                     from_profile, parse_config_file, parse_value, resolve)
from .errors import ConfigError, DisasmkitError, FormatError, LoadError
from .eval import (PHASES, attribute_errors, emit_ground_truth, emit_report,
                   parse_ground_truth, score)
from .image import load_binary
from .pipeline import run_pipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports instead of exiting, so main owns the code."""

    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="disasmkit")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("disasm", help="disassemble one binary under a profile")
    d.add_argument("binary")
    d.add_argument("--profile", default="pure")
    d.add_argument("--config", help="file of key = value flag overrides")
    d.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="single flag override; repeatable, wins over --config")
    d.add_argument("-o", "--out", help="record file destination (default stdout)")
    d.set_defaults(func=cmd_disasm)

    e = sub.add_parser("eval", help="score a record file against ground truth")
    e.add_argument("truth")
    e.add_argument("result")
    e.add_argument("--phases", help="comma list (default: all)")
    e.add_argument("--attribute", action="store_true",
                   help="explain each false positive and negative")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("matrix", help="every profile against every binary")
    m.add_argument("corpus", help="directory of <name>.fix / <name>.gt pairs")
    m.add_argument("--profiles", help="comma list (default: all profiles)")
    m.add_argument("--csv", help="write the csv here instead of stdout")
    m.set_defaults(func=cmd_matrix)

    s = sub.add_parser("strategies", help="document the strategy flags")
    s.add_argument("action", choices=["list"])
    s.set_defaults(func=cmd_strategies)
    return parser


def _parse_set_options(pairs: list[str]) -> dict[str, object]:
    out: dict[str, object] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"--set wants KEY=VALUE, got {pair!r}")
        out[key.strip()] = parse_value(key.strip(), value)
    return out


def _resolve_config(args) -> StrategyConfig:
    file_overrides: dict[str, object] = {}
    profile = args.profile
    if args.config:
        text = Path(args.config).read_text()
        file_profile, file_overrides = parse_config_file(text)
        if file_profile is not None and args.profile == "pure":
            profile = file_profile
    return resolve(profile, file_overrides, _parse_set_options(args.set))


def cmd_disasm(args) -> int:
    config = _resolve_config(args)
    image = load_binary(args.binary)
    out = run_pipeline(image, config)
    header = [f"profile = {config.profile}",
              f"binary = {Path(args.binary).name}"]
    header += [f"{key} = {format_value(value)}"
               for key, value in config.items()]
    out.records.header = tuple(header)
    text = emit_ground_truth(out.records)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _header_value(side, key: str) -> str | None:
    prefix = f"{key} = "
    for line in side.header:
        if line.startswith(prefix):
            return line[len(prefix):]
    return None


def _key_text(key: tuple) -> str:
    return " ".join(f"{part:#x}" if isinstance(part, int) else str(part)
                    for part in key)


def cmd_eval(args) -> int:
    truth = parse_ground_truth(Path(args.truth).read_text())
    result = parse_ground_truth(Path(args.result).read_text())

    phases = list(PHASES)
    if args.phases:
        phases = [p.strip() for p in args.phases.split(",")]
        for p in phases:
            if p not in PHASES:
                raise UsageError(
                    f"unknown phase {p!r} (phases: {', '.join(PHASES)})")

    t_bin, r_bin = _header_value(truth, "binary"), _header_value(result,
                                                                 "binary")
    if t_bin and r_bin and t_bin != r_bin:
        print(f"warning: scoring {r_bin} against ground truth for {t_bin}",
              file=sys.stderr)

    for phase in phases:
        if result.phases_run is not None and phase not in result.phases_run:
            print(f"warning: result ran without the {phase} phase; "
                  "missing records count as misses", file=sys.stderr)
        m = score(truth, result, phase)
        print(f"{phase:<9} precision {m.precision:.4f}  "
              f"recall {m.recall:.4f}  (tp {m.tp} fp {m.fp} fn {m.fn})")
        if args.attribute:
            for a in attribute_errors(truth, result, phase):
                print(f"  {a.kind} {_key_text(a.key)}: {a.cause}")
    return EXIT_OK


def _corpus_pairs(corpus: Path) -> list[tuple[Path, Path]]:
    pairs = []
    for gt in sorted(corpus.glob("*.gt")):
        fix = gt.with_suffix(".fix")
        if fix.exists():
            pairs.append((fix, gt))
    return pairs


def cmd_matrix(args) -> int:
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise LoadError(f"{corpus} is not a directory")
    pairs = _corpus_pairs(corpus)
    if not pairs:
        raise LoadError(f"no .fix/.gt pairs under {corpus}")

    profiles = list(PROFILES)
    if args.profiles:
        profiles = [p.strip() for p in args.profiles.split(",")]

    rows = []
    failures = []
    for profile in profiles:
        config = from_profile(profile)
        for fix, gt_file in pairs:
            try:
                truth = parse_ground_truth(gt_file.read_text())
                image = load_binary(fix)
                out = run_pipeline(image, config)
                for phase in PHASES:
                    rows.append((profile, fix.name,
                                 score(truth, out.records, phase)))
            except Exception as err:  # noqa: BLE001 - recorded, run goes on
                failures.append((profile, fix.name, str(err)))

    table, csv = emit_report(rows)
    sys.stdout.write(table)
    _write_ablation(rows)
    if args.csv:
        Path(args.csv).write_text(csv)
    else:
        sys.stdout.write("\n" + csv)
    for profile, name, message in failures:
        print(f"failed: {profile} {name}: {message}")
    return EXIT_OK


def _write_ablation(rows) -> None:
    """Recall deltas of every other profile against the bare traversal
    baseline, for the phases coverage heuristics act on."""
    recs: dict[tuple[str, str], list[float]] = {}
    order: list[str] = []
    for profile, _, m in rows:
        if profile not in order:
            order.append(profile)
        recs.setdefault((profile, m.phase), []).append(m.recall)

    def avg(profile, phase):
        got = recs.get((profile, phase))
        return sum(got) / len(got) if got else None

    if "pure" not in order or len(order) < 2:
        return
    sys.stdout.write("\nrecall against the pure baseline\n")
    sys.stdout.write(f"{'profile':<10}  {'inst':>7}  {'d-inst':>7}  "
                     f"{'func':>7}  {'d-func':>7}\n")
    base_inst = avg("pure", "inst")
    base_func = avg("pure", "func")
    for profile in order:
        inst, func = avg(profile, "inst"), avg(profile, "func")
        if inst is None:
            continue
        d_inst = inst - (base_inst or 0.0)
        d_func = (func - base_func) if None not in (func, base_func) else 0.0
        sys.stdout.write(f"{profile:<10}  {inst:>7.4f}  {d_inst:>+7.4f}  "
                         f"{(func if func is not None else 0.0):>7.4f}  "
                         f"{d_func:>+7.4f}\n")


def cmd_strategies(args) -> int:
    width = max(len(key) for key, _ in StrategyConfig().items())
    for key, _ in StrategyConfig().items():
        print(f"{key:<{width}}  {FLAG_HELP[key]}")
    print()
    print("profiles: " + " ".join(PROFILES))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (LoadError, FormatError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except DisasmkitError as err:
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as err:  # noqa: BLE001 - last resort, named exit code
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
