"""Command-line front end.

Subcommands:

* ``run``        -- estimate failure probabilities over an n-grid with one or
                    more methods, emitting a table or CSV.
* ``rate-sweep`` -- estimate along the grid and tabulate the scaled log
                    probability against the limiting decay rate.
* ``validate``   -- check a network description and report violations.
* ``presets``    -- list the built-in example networks.

Networks and experiments are JSON documents (see README for the schema);
flags override file fields.  Runs are deterministic for a fixed seed and
config, independent of ``--threads``; with ``--timing off`` the CSV output is
byte-identical as well (wall-clock columns are left empty).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .asymptotics import ld_rate, rate_report_to_csv, rate_sweep
from .estimators import (
    METHODS,
    EstimatorConfig,
    ExperimentRow,
    compare_methods,
    rows_to_csv,
)
from .network import (
    NetworkSpec,
    NetworkValidationError,
    ThresholdRule,
    scale_instance,
    spec_from_dict,
    spec_to_dict,
    validate_network,
)
from .presets import PRESET_NAMES, preset
from .stochastic import GaussianModel

__all__ = ["ExperimentConfig", "run_experiment", "main"]

DEFAULT_SEED = 1729
DEFAULT_REPLICATIONS = 100_000

_EXIT_OK = 0
_EXIT_RUNTIME = 1
_EXIT_USAGE = 2


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment: network, grid, methods, and run knobs."""

    network: NetworkSpec
    n_values: tuple[float, ...]
    k_rule: ThresholdRule
    methods: tuple[str, ...]
    n_replications: int = DEFAULT_REPLICATIONS
    seed: int = DEFAULT_SEED
    level: float = 0.95
    threads: int = 0  # 0 = machine parallelism
    timing: str = "wall"  # "wall" | "off"
    out: str | None = None
    fmt: str = "table"  # "table" | "csv"

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method is required")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(
                    f"unknown method {m!r}; valid methods: {', '.join(METHODS)}"
                )
        if not self.n_values:
            raise ValueError("at least one n value is required")
        if self.timing not in ("wall", "off"):
            raise ValueError(f"timing must be 'wall' or 'off', got {self.timing!r}")
        if self.fmt not in ("table", "csv"):
            raise ValueError(f"format must be 'table' or 'csv', got {self.fmt!r}")

    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "network": spec_to_dict(config.network),
        "n": list(config.n_values),
        "k": config.k_rule.to_dict(),
        "methods": list(config.methods),
        "replications": config.n_replications,
        "seed": config.seed,
        "level": config.level,
        "threads": config.threads,
        "timing": config.timing,
        "out": config.out,
        "format": config.fmt,
    }


def config_from_dict(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    network = data.get("network")
    if network is None:
        raise NetworkValidationError("experiment document needs a 'network' entry")
    if isinstance(network, str):
        path = Path(network)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        with open(path, "r", encoding="utf-8") as fh:
            network = json.load(fh)
    spec = spec_from_dict(network)
    return ExperimentConfig(
        network=spec,
        n_values=tuple(float(x) for x in data["n"]),
        k_rule=ThresholdRule.from_dict(data["k"]),
        methods=tuple(str(m).lower() for m in data["methods"]),
        n_replications=int(data.get("replications", DEFAULT_REPLICATIONS)),
        seed=int(data.get("seed", DEFAULT_SEED)),
        level=float(data.get("level", 0.95)),
        threads=int(data.get("threads", 0)),
        timing=str(data.get("timing", "wall")),
        out=data.get("out"),
        fmt=str(data.get("format", "table")),
    )


def preset_config(name: str) -> ExperimentConfig:
    p = preset(name)
    return ExperimentConfig(
        network=p.spec,
        n_values=p.n_values,
        k_rule=p.k_rule,
        methods=METHODS,
        n_replications=p.n_replications,
    )


def run_experiment(config: ExperimentConfig) -> list[ExperimentRow]:
    """Run every (n, method) combination of the experiment.

    Validates the network first; a shared master seed spans the whole
    experiment while each method keeps its own stream namespace.
    """
    validate_network(config.network).raise_if_invalid()
    model = GaussianModel.from_spec(config.network)
    measure = config.timing == "wall"
    rows: list[ExperimentRow] = []
    for n in config.n_values:
        instance = scale_instance(config.network, n, config.k_rule)
        configs = [
            EstimatorConfig(
                method=m,
                n_replications=config.n_replications,
                seed=config.seed,
                level=config.level,
                threads=config.resolved_threads(),
                measure_time=measure,
            )
            for m in config.methods
        ]
        rows.extend(compare_methods(model, instance, configs))
    return rows


def _sig3(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "NaN"
    return f"{x:.2e}"


def rows_to_table(rows: Sequence[ExperimentRow]) -> str:
    """Fixed-width summary with estimates at three significant digits."""
    header = ("method", "n", "k", "alpha_hat", "RSE", "CI+-", "CT[s]", "RSE^2xCT", "hits")
    body = []
    for row in rows:
        st = row.stats
        body.append(
            (
                row.method,
                f"{row.n:g}",
                f"{row.k:g}",
                _sig3(st.estimate),
                _sig3(st.rse),
                _sig3(st.ci_halfwidth),
                "-" if st.ct_seconds is None else f"{st.ct_seconds:.2f}",
                "-" if st.rse2_ct is None else _sig3(st.rse2_ct),
                str(st.hits),
            )
        )
    widths = [
        max(len(header[c]), *(len(r[c]) for r in body)) if body else len(header[c])
        for c in range(len(header))
    ]
    lines = [
        "  ".join(h.rjust(w) for h, w in zip(header, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for r in body:
        lines.append("  ".join(v.rjust(w) for v, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------


def _parse_methods(parser: argparse.ArgumentParser, text: str) -> tuple[str, ...]:
    methods = tuple(m.strip().lower() for m in text.split(",") if m.strip())
    for m in methods:
        if m not in METHODS:
            parser.error(
                f"unknown method {m!r}; valid methods: {', '.join(METHODS)}"
            )
    if not methods:
        parser.error("at least one method is required")
    return methods


def _parse_n_list(parser: argparse.ArgumentParser, text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        parser.error(f"could not parse n values from {text!r}")
    if not values:
        parser.error("at least one n value is required")
    return values


_K_RULE_RE = re.compile(
    r"^\s*([0-9.eE+-]+)\s*\*\s*n\s*\^\s*([0-9.eE+-]+)\s*$"
)


def _parse_k_rule(parser: argparse.ArgumentParser, text: str) -> ThresholdRule:
    match = _K_RULE_RE.match(text)
    if not match:
        parser.error(
            f"could not parse threshold rule {text!r}; expected the form 'c*n^p'"
        )
    try:
        return ThresholdRule(float(match.group(1)), float(match.group(2)))
    except (ValueError, NetworkValidationError) as exc:
        parser.error(str(exc))


def _add_selector_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--preset", choices=PRESET_NAMES, help="built-in example network")
    sub.add_argument("--config", metavar="PATH", help="experiment JSON document")
    sub.add_argument("--methods", help="comma list from: " + ", ".join(METHODS))
    sub.add_argument("--n", dest="n_list", help="comma list of rarity parameters")
    sub.add_argument("--k", type=float, help="constant failure threshold")
    sub.add_argument("--k-rule", help="threshold rule of the form 'c*n^p'")
    sub.add_argument("--replications", type=int, help="replications per run")
    sub.add_argument("--seed", type=int, help="master seed (env NETFAIL_SEED as fallback)")
    sub.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    sub.add_argument("--format", dest="fmt", choices=("table", "csv"))
    sub.add_argument("--out", metavar="PATH", help="write output here instead of stdout")
    sub.add_argument(
        "--timing",
        choices=("wall", "off"),
        help="wall-clock columns; 'off' makes CSV output byte-reproducible",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netfail",
        description="Failure-probability estimation for LP-based distribution networks.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    run_p = subs.add_parser("run", help="run estimators over an n-grid")
    _add_selector_args(run_p)

    rate_p = subs.add_parser("rate-sweep", help="decay-rate convergence table")
    _add_selector_args(rate_p)
    rate_p.add_argument(
        "--method",
        choices=METHODS,
        default="is",
        help="estimator used along the sweep (default: is)",
    )

    val_p = subs.add_parser("validate", help="validate a network description")
    val_p.add_argument("--preset", choices=PRESET_NAMES)
    val_p.add_argument("--config", metavar="PATH", help="network or experiment JSON")

    subs.add_parser("presets", help="list built-in presets")
    return parser


def _resolve_config(
    parser: argparse.ArgumentParser, args: argparse.Namespace
) -> ExperimentConfig:
    if args.preset and args.config:
        parser.error("--preset and --config are mutually exclusive")
    if args.preset:
        config = preset_config(args.preset)
    elif args.config:
        path = Path(args.config)
        with open(path, "r", encoding="utf-8") as fh:
            config = config_from_dict(json.load(fh), base_dir=path.parent)
    else:
        parser.error("either --preset or --config is required")

    if args.methods:
        config = replace(config, methods=_parse_methods(parser, args.methods))
    if args.n_list:
        config = replace(config, n_values=_parse_n_list(parser, args.n_list))
    if args.k is not None and args.k_rule is not None:
        parser.error("--k and --k-rule are mutually exclusive")
    if args.k is not None:
        if args.k < 0:
            parser.error("--k must be nonnegative")
        config = replace(config, k_rule=ThresholdRule.constant(args.k))
    if args.k_rule is not None:
        config = replace(config, k_rule=_parse_k_rule(parser, args.k_rule))
    if args.replications is not None:
        config = replace(config, n_replications=args.replications)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    elif "NETFAIL_SEED" in os.environ:
        config = replace(config, seed=int(os.environ["NETFAIL_SEED"]))
    if args.threads is not None:
        config = replace(config, threads=args.threads)
    if args.fmt is not None:
        config = replace(config, fmt=args.fmt)
    if args.out is not None:
        config = replace(config, out=args.out)
    if args.timing is not None:
        config = replace(config, timing=args.timing)
    return config


def _cmd_run(parser, args) -> int:
    config = _resolve_config(parser, args)
    rows = run_experiment(config)
    text = rows_to_csv(rows) if config.fmt == "csv" else rows_to_table(rows)
    _emit(text, config.out)
    return _EXIT_OK


def _cmd_rate_sweep(parser, args) -> int:
    config = _resolve_config(parser, args)
    est = EstimatorConfig(
        method=args.method,
        n_replications=config.n_replications,
        seed=config.seed,
        level=config.level,
        threads=config.resolved_threads(),
        measure_time=config.timing == "wall",
    )
    model = GaussianModel.from_spec(config.network)
    report = rate_sweep(model, config.network, config.n_values, config.k_rule, est)
    if config.fmt == "csv":
        text = rate_report_to_csv(report)
    else:
        head = report.header
        lines = [
            f"dominant node index {head.t_star} "
            f"(gamma/sigma = {head.ratio:g}), rate = {head.rate:g}",
            f"{'n':>8}  {'alpha_hat':>12}  {'scaled_log':>12}  {'neg_rate':>10}",
        ]
        for row in report.rows:
            scaled = "NaN" if math.isnan(row.scaled_log) else f"{row.scaled_log:.4f}"
            lines.append(
                f"{row.n:>8g}  {_sig3(row.estimate):>12}  {scaled:>12}  "
                f"{-head.rate:>10.4f}"
            )
        text = "\n".join(lines) + "\n"
    _emit(text, config.out)
    return _EXIT_OK


def _cmd_validate(parser, args) -> int:
    if args.preset and args.config:
        parser.error("--preset and --config are mutually exclusive")
    if args.preset:
        spec = preset(args.preset).spec
    elif args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        data = data.get("network", data)
        if isinstance(data, str):
            with open(Path(args.config).parent / data, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        spec = spec_from_dict(data)
    else:
        parser.error("either --preset or --config is required")
    report = validate_network(spec)
    if report.ok:
        rate = ld_rate(spec)
        print(
            f"ok: d={spec.d}, beta={spec.beta:g}, dominant node index "
            f"{rate.t_star}, decay rate {rate.rate:g}"
        )
        return _EXIT_OK
    for violation in report.violations:
        print(f"violation: {violation}", file=sys.stderr)
    return _EXIT_RUNTIME


def _cmd_presets(parser, args) -> int:
    for name in PRESET_NAMES:
        print(preset(name).describe())
    return _EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(parser, args)
        if args.command == "rate-sweep":
            return _cmd_rate_sweep(parser, args)
        if args.command == "validate":
            return _cmd_validate(parser, args)
        if args.command == "presets":
            return _cmd_presets(parser, args)
        parser.error(f"unknown command {args.command!r}")
    except (OSError, json.JSONDecodeError, ValueError, KeyError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_RUNTIME
    return _EXIT_USAGE  # pragma: no cover - unreachable


if __name__ == "__main__":
    sys.exit(main())
