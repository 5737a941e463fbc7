"""Command-line front end.

Subcommands: ``rate`` (one simulated point), ``sweep`` (a grid from a config
file, written as CSV), ``mu`` (max-of-geometric table), ``analytic``
(closed-form models only) and ``trace`` (event trace of one trial).

Config files use ``key = value`` lines grouped in sections::

    [hardware]
    e_b = 0.5
    alpha_db_per_km = 0.2

    [sweep]
    protocol = independent
    length_km = 10, 50, 100
    repeaters = 1, 3
    tau_mem_ms = 10, inf

Physical keys carry their unit in the name. Unknown sections or keys are
rejected with exit status 2.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import analytics
from .core import INF, HardwareParams
from .engine import LivelockError
from .protocols import INDEPENDENT, PROTOCOLS, SYNCHRONOUS
from .simulation import Stop, SweepResult, SweepSpec, measure_rate, model_rate, run_sweep

log = logging.getLogger("repeatersim")

CSV_HEADER = (
    "L_km", "r", "tau_mem_s", "protocol", "rate_sim_per_s", "rate_sim_stderr",
    "rate_model_per_s", "rel_dev", "mean_dt_s", "successes", "seed",
)

HARDWARE_KEYS = ("e_b", "e_s", "e_m", "e_d", "alpha_db_per_km", "v_km_per_s")


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    """One simulation section of a config file (``rate``, ``sweep`` or ``trace``)."""

    protocol: str = SYNCHRONOUS
    length_km: Tuple[float, ...] = (50.0,)
    repeaters: Tuple[int, ...] = (0,)
    tau_mem_ms: Tuple[float, ...] = (INF,)
    successes: Optional[int] = 10_000
    max_time_s: Optional[float] = 1_000.0
    max_rounds: Optional[int] = None
    seed: int = 0
    out: Optional[str] = None
    threads: int = 1
    partial_discard: bool = False
    fast_forward: bool = True


@dataclass
class MuSection:
    n: Tuple[int, ...] = tuple(range(1, 9))
    p1: float = 1e-3
    repetitions: int = analytics.DEFAULT_MU_REPETITIONS
    seed: int = 0


@dataclass
class RunConfig:
    hardware: HardwareParams = field(default_factory=HardwareParams)
    sections: Dict[str, object] = field(default_factory=dict)
    verbosity: int = 0


SECTION_TYPES = {"rate": RunSection, "sweep": RunSection, "trace": RunSection, "mu": MuSection}


def _parse_float(text: str) -> float:
    text = text.strip().lower()
    if text in ("inf", "infinity", "∞"):
        return INF
    return float(text)


def _parse_optional(conv):
    def parse(text: str):
        return None if text.strip().lower() == "none" else conv(text)
    return parse


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_int_list(text: str) -> Tuple[int, ...]:
    """``"1, 3, 7"`` or ranges like ``"1..8"``."""
    values: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            values.extend(range(int(lo), int(hi) + 1))
        else:
            values.append(int(part))
    if not values:
        raise ValueError("empty list")
    return tuple(values)


def parse_float_list(text: str) -> Tuple[float, ...]:
    values = tuple(_parse_float(p) for p in text.split(",") if p.strip())
    if not values:
        raise ValueError("empty list")
    return values


PARSERS = {
    "protocol": str,
    "length_km": parse_float_list,
    "repeaters": parse_int_list,
    "tau_mem_ms": parse_float_list,
    "successes": _parse_optional(int),
    "max_time_s": _parse_optional(float),
    "max_rounds": _parse_optional(int),
    "seed": int,
    "out": _parse_optional(str),
    "threads": int,
    "partial_discard": _parse_bool,
    "fast_forward": _parse_bool,
    "n": parse_int_list,
    "p1": float,
    "repetitions": int,
}


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def _line_of(text: str, section: str, key: Optional[str] = None) -> int:
    current = None
    for number, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if key is None and current == section:
                return number
        elif current == section and key is not None:
            name = stripped.split("=", 1)[0].split(":", 1)[0].strip().lower()
            if name == key:
                return number
    return 0


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = RunConfig()
    for name in parser.sections():
        line = _line_of(text, name)
        section = parser[name]
        if name == "hardware":
            values = {}
            for key, raw in section.items():
                if key not in HARDWARE_KEYS:
                    raise ConfigError(f"line {_line_of(text, name, key)}: unknown key {key!r} in [hardware]")
                try:
                    values[key] = _parse_float(raw)
                except ValueError as exc:
                    raise ConfigError(f"line {_line_of(text, name, key)}: bad value for {key}: {exc}") from exc
            try:
                cfg.hardware = HardwareParams(**values)
            except ValueError as exc:
                raise ConfigError(f"line {line}: [hardware]: {exc}") from exc
            continue
        if name not in SECTION_TYPES:
            raise ConfigError(f"line {line}: unknown section [{name}]")
        cls = SECTION_TYPES[name]
        allowed = {f.name for f in fields(cls)}
        values = {}
        for key, raw in section.items():
            if key not in allowed:
                raise ConfigError(f"line {_line_of(text, name, key)}: unknown key {key!r} in [{name}]")
            try:
                values[key] = PARSERS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"line {_line_of(text, name, key)}: bad value for {key}: {exc}") from exc
        sec = cls(**values)
        if isinstance(sec, RunSection) and sec.protocol not in PROTOCOLS:
            raise ConfigError(f"line {_line_of(text, name, 'protocol')}: unknown protocol {sec.protocol!r}")
        cfg.sections[name] = sec
    return cfg


def dump_config(cfg: RunConfig) -> str:
    out = ["[hardware]"]
    for key in HARDWARE_KEYS:
        out.append(f"{key} = {_format_value(getattr(cfg.hardware, key))}")
    for name, sec in cfg.sections.items():
        out.append("")
        out.append(f"[{name}]")
        for f in fields(sec):
            out.append(f"{f.name} = {_format_value(getattr(sec, f.name))}")
    return "\n".join(out) + "\n"


def load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_real(value) -> str:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def emit_csv(result: SweepResult, path) -> None:
    """Write one row per point; floats use shortest round-trip repr."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for p in result.points:
        writer.writerow([
            format_real(p.L_km), p.r, format_real(p.tau_mem_s), p.protocol,
            format_real(p.rate_sim_per_s), format_real(p.rate_sim_stderr),
            format_real(p.rate_model_per_s), format_real(p.rel_dev),
            format_real(p.mean_dt_s), p.successes, p.seed,
        ])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _add_hardware_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hardware (defaults: HardwareParams)")
    g.add_argument("--e-b", type=float, help="heralding efficiency")
    g.add_argument("--e-s", type=float, help="swap success probability")
    g.add_argument("--e-m", type=float, help="memory efficiency")
    g.add_argument("--e-d", type=float, help="detector efficiency")
    g.add_argument("--alpha-db-per-km", type=float, help="fiber attenuation")
    g.add_argument("--v-km-per-s", type=float, help="signal velocity")
    g.add_argument("--tau-mem-ms", type=_parse_float, help="memory lifetime in ms, or inf")
    p.add_argument("--config", help="key = value config file")


def _add_point_flags(p: argparse.ArgumentParser, successes: Optional[int]) -> None:
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--L-km", dest="length_km", type=float)
    p.add_argument("--r", dest="repeaters", type=int)
    # SUPPRESS keeps "not given" apart from an explicit "none"
    p.add_argument("--successes", type=_parse_optional(int), default=argparse.SUPPRESS,
                   help=f"stop after this many end-to-end successes (default {successes}); none disables")
    p.add_argument("--max-time-s", type=_parse_optional(float), default=argparse.SUPPRESS)
    p.add_argument("--max-rounds", type=_parse_optional(int), default=argparse.SUPPRESS)
    p.add_argument("--seed", type=int)
    p.add_argument("--partial-discard", action="store_true", default=None)
    p.add_argument("--no-fast-forward", dest="fast_forward", action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repeatersim", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("rate", help="simulate one chain and report its rate")
    _add_hardware_flags(p)
    _add_point_flags(p, 10_000)

    p = sub.add_parser("sweep", help="run a parameter grid from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="CSV path (overrides the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)

    p = sub.add_parser("mu", help="normalized mean maximum of N geometric counts")
    p.add_argument("--n", type=parse_int_list, default=None, help="e.g. 1..8 or 1,2,4")
    p.add_argument("--p1", type=float, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config")

    p = sub.add_parser("analytic", help="evaluate the closed-form models")
    _add_hardware_flags(p)
    p.add_argument("--model", default="all",
                   choices=("all", "p-single", "no-repeater", "synchronous", "independent", "dt"))
    p.add_argument("--L-km", dest="length_km", type=float, required=True)
    p.add_argument("--r", dest="repeaters", type=int, default=0)
    p.add_argument("--mu-source", choices=("mc", "sqrt"), default="mc")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("trace", help="write the event trace of one trial")
    _add_hardware_flags(p)
    _add_point_flags(p, 1)
    p.add_argument("--out", help="trace path (default stdout)")
    return parser


def _hardware(args, cfg: RunConfig, tau_ms: Optional[float] = None) -> HardwareParams:
    hw = cfg.hardware
    changes = {}
    for key in HARDWARE_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if tau_ms is not None:
        changes["tau_mem_s"] = tau_ms / 1e3
    try:
        return hw.replace(**changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _point_section(args, cfg: RunConfig, name: str, default_successes) -> RunSection:
    sec = cfg.sections.get(name) or RunSection(successes=default_successes)
    for key in ("protocol", "seed", "partial_discard", "fast_forward"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(sec, key, value)
    for key in ("successes", "max_time_s", "max_rounds"):
        if hasattr(args, key):
            setattr(sec, key, getattr(args, key))
    if getattr(args, "length_km", None) is not None:
        sec.length_km = (args.length_km,)
    if getattr(args, "repeaters", None) is not None:
        sec.repeaters = (args.repeaters,)
    if getattr(args, "tau_mem_ms", None) is not None:
        sec.tau_mem_ms = (args.tau_mem_ms,)
    if len(sec.length_km) != 1 or len(sec.repeaters) != 1 or len(sec.tau_mem_ms) != 1:
        raise ConfigError(f"[{name}] needs exactly one length, repeater count and lifetime")
    if sec.successes is None and sec.max_time_s is None and sec.max_rounds is None:
        raise ConfigError("stop condition must be bounded")
    return sec


def _stop(sec: RunSection) -> Stop:
    try:
        return Stop(sec.successes, sec.max_time_s, sec.max_rounds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_rate(args, cfg: RunConfig) -> int:
    sec = _point_section(args, cfg, "rate", 10_000)
    params = _hardware(args, cfg, sec.tau_mem_ms[0])
    L, r = sec.length_km[0], sec.repeaters[0]
    stats = measure_rate(L, r, params, sec.protocol, _stop(sec), sec.seed,
                         partial_discard=sec.partial_discard, fast_forward=sec.fast_forward)
    model = model_rate(params, L, r, sec.protocol)
    ages = stats.oldest_memory_ages_s()
    print(f"protocol        {sec.protocol}")
    print(f"L_km            {L:g}")
    print(f"r               {r}")
    print(f"tau_mem_s       {format_real(params.tau_mem_s)}")
    print(f"successes       {stats.end_to_end_successes}")
    print(f"elapsed_s       {stats.elapsed_s:.9g}")
    print(f"rate_sim_per_s  {stats.rate_per_s:.6g} +- {stats.rate_stderr():.3g}")
    print(f"rate_model      {model:.6g}  (tau_mem = inf)")
    if ages:
        print(f"mean_dt_s       {sum(ages) / len(ages):.6g}")
    if stats.zero_reason:
        print(f"zero_reason     {stats.zero_reason}")
    return 0


def _cmd_sweep(args, cfg: RunConfig) -> int:
    if "sweep" not in cfg.sections:
        raise ConfigError(f"{args.config}: missing [sweep] section")
    sec = cfg.sections["sweep"]
    seed = args.seed if args.seed is not None else sec.seed
    threads = args.threads if args.threads is not None else sec.threads
    out = args.out or sec.out
    if not out:
        raise ConfigError("no output path: set out in [sweep] or pass --out")
    spec = SweepSpec(
        lengths_km=sec.length_km,
        repeaters=sec.repeaters,
        tau_mem_s=tuple(t / 1e3 for t in sec.tau_mem_ms),
        protocol=sec.protocol,
        stop=_stop(sec),
        seed=seed,
        params=cfg.hardware,
    )
    result = run_sweep(spec, threads=threads)
    emit_csv(result, out)
    failed = [p for p in result.points if p.error]
    log.info("wrote %d points to %s (%d failed)", len(result), out, len(failed))
    return 0


def _cmd_mu(args, cfg: RunConfig) -> int:
    sec = cfg.sections.get("mu") or MuSection()
    ns = args.n or sec.n
    p1 = args.p1 if args.p1 is not None else sec.p1
    reps = args.reps if args.reps is not None else sec.repetitions
    seed = args.seed if args.seed is not None else sec.seed
    if reps < 1:
        raise ConfigError("--reps must be positive")
    print("N\tmu\tstddev\tmu/sqrt(N)")
    for n in ns:
        est = analytics.estimate_mu(n, p1, reps, seed)
        print(f"{n}\t{est.mean_normalized:.5f}\t{est.stddev_normalized:.5f}\t"
              f"{est.mean_normalized / math.sqrt(n):.5f}")
    return 0


def _cmd_analytic(args, cfg: RunConfig) -> int:
    params = _hardware(args, cfg, args.tau_mem_ms)
    L, r = args.length_km, args.repeaters
    mu = args.mu_source
    values = {
        "p-single": lambda: analytics.p_single(params, L / (r + 1)),
        "no-repeater": lambda: analytics.rate_no_repeater(params, L),
        "synchronous": lambda: analytics.rate_synchronous(params, L, r),
        "independent": lambda: analytics.rate_independent(params, L, r, mu, seed=args.seed),
        "dt": lambda: analytics.oldest_memory_age(params, L, r, mu_source=mu, seed=args.seed),
    }
    if args.model != "all":
        print(f"{values[args.model]():.10g}")
        return 0
    for name, fn in values.items():
        print(f"{name}\t{fn():.10g}")
    return 0


def _cmd_trace(args, cfg: RunConfig) -> int:
    sec = _point_section(args, cfg, "trace", 1)
    params = _hardware(args, cfg, sec.tau_mem_ms[0])
    kwargs = dict(partial_discard=sec.partial_discard, fast_forward=sec.fast_forward)
    out = args.out or sec.out
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            measure_rate(sec.length_km[0], sec.repeaters[0], params, sec.protocol, _stop(sec),
                         sec.seed, trace=fh, **kwargs)
    else:
        measure_rate(sec.length_km[0], sec.repeaters[0], params, sec.protocol, _stop(sec),
                     sec.seed, trace=sys.stdout, **kwargs)
    return 0


COMMANDS = {
    "rate": _cmd_rate,
    "sweep": _cmd_sweep,
    "mu": _cmd_mu,
    "analytic": _cmd_analytic,
    "trace": _cmd_trace,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
        if getattr(args, "partial_discard", None) and getattr(args, "protocol", None) == SYNCHRONOUS:
            raise ConfigError("--partial-discard applies to the independent protocol only")
        return COMMANDS[args.cmd](args, cfg)
    except ConfigError as exc:
        print(f"repeatersim: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, LivelockError, RuntimeError, ValueError) as exc:
        print(f"repeatersim: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
