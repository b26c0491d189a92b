"""Command-line entry point.

Subcommands: simulate, acquire, replay, fit, compare, plot.  Diagnostics
go to stderr; data products go to files or stdout.  Exit codes: 0 success,
1 domain errors (bad data, out of range/tolerance, transport failures),
2 usage or configuration errors.  Usage-error paths never touch output
files.

The THDAQ_CONFIG environment variable supplies a default channel-profiles
file for acquire/replay.
"""

import argparse
import os
import signal
import socket
import sys
import threading

from thdaq import __version__
from thdaq.acquisition import SessionConfig, acquire, print_summary
from thdaq.analysis import (
    AlignmentError,
    compare_series,
    load_series,
    reconstruct_waveform,
)
from thdaq.calibration import default_profiles, fit_polynomial, load_profiles
from thdaq.simulator import (
    AmbientScenario,
    Constant,
    DEFAULT_RH_ENVELOPE,
    DEFAULT_TEMP_ENVELOPE,
    load_scenario,
    parse_source,
    run_simulator,
)
from thdaq.storage import SchemaError, format_timestamp, parse_timestamp
from thdaq.transport import (
    SocketTransport,
    SocketWriteStream,
    TransportError,
    open_write_stream,
)

CONFIG_ENV_VAR = "THDAQ_CONFIG"


class UsageError(Exception):
    """Bad flags or configuration; exits 2 without touching outputs."""


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TransportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thdaq",
        description="4-channel temperature/humidity logger: simulator and host tools",
    )
    parser.add_argument("--version", action="version", version=f"thdaq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="store_true", help="print the resolved configuration"
    )

    scenario_flags = argparse.ArgumentParser(add_help=False)
    scenario_flags.add_argument(
        "--scenario",
        help="scenario file, or inline 'const:TEMP,RH' shorthand",
    )
    scenario_flags.add_argument(
        "--temp", help="temperature source: const:V | sin:mean,amp,period[,phase] | csv:path,column | off"
    )
    scenario_flags.add_argument("--rh", help="humidity source (same grammar as --temp)")
    scenario_flags.add_argument("--duration", type=float, help="run length in seconds")
    scenario_flags.add_argument("--count", type=int, help="exact number of frames to emit")
    scenario_flags.add_argument("--rate", type=float, default=1.0, help="sample rate in Hz (default 1)")
    scenario_flags.add_argument("--temp-envelope", help="LO,HI clamp for generated temperature")
    scenario_flags.add_argument("--rh-envelope", help="LO,HI clamp for generated humidity")
    scenario_flags.add_argument("--ch2-volts", type=float, help="spare channel 2 input voltage")
    scenario_flags.add_argument("--ch3-volts", type=float, help="spare channel 3 input voltage")
    scenario_flags.add_argument("--noise", action="store_true", help="add ±½ LSB uniform noise")
    scenario_flags.add_argument("--seed", type=int, help="noise RNG seed")

    p_sim = sub.add_parser(
        "simulate", parents=[common, scenario_flags], help="emit device frames to a file or socket"
    )
    p_sim.add_argument("--out", required=True, help="output: path, or tcp:host:port to connect")
    p_sim.add_argument("--truth-csv", help="also record true scenario values to this CSV")
    p_sim.add_argument("--realtime", action="store_true", help="pace frames against the wall clock")
    p_sim.add_argument("--timestamp-base", help="ISO timestamp for the first truth row (default: now)")
    p_sim.set_defaults(func=_cmd_simulate)

    acq_flags = argparse.ArgumentParser(add_help=False)
    acq_flags.add_argument("--csv", help="CSV sink path")
    acq_flags.add_argument("--append", action="store_true", help="continue an existing CSV")
    acq_flags.add_argument("--profiles", help=f"channel profiles INI (default ${CONFIG_ENV_VAR})")
    acq_flags.add_argument("--channels", default="0,1,2,3", help="enabled channels, e.g. 0,1")
    acq_flags.add_argument("--max-duration", type=float, help="stop after this many seconds")
    acq_flags.add_argument("--live", action="store_true", help="print one readout line per sample")
    acq_flags.add_argument("--timestamp-base", help="fixed ISO base timestamp (deterministic stamps)")
    acq_flags.add_argument(
        "--timestamp-step", type=float, default=1.0, help="seconds between fixed stamps (default 1)"
    )

    p_acq = sub.add_parser(
        "acquire", parents=[common, acq_flags, scenario_flags], help="decode, calibrate and log a stream"
    )
    p_acq.add_argument(
        "--transport", help="file:PATH | tcp:HOST:PORT | listen:PORT | serial:PATH[:BAUD]"
    )
    p_acq.add_argument(
        "--loopback",
        action="store_true",
        help="run the simulator in-process and acquire from it over a local socket",
    )
    p_acq.set_defaults(func=_cmd_acquire)

    p_rep = sub.add_parser(
        "replay", parents=[common, acq_flags], help="re-process a recorded capture file"
    )
    p_rep.add_argument("capture", help="capture file of raw device bytes")
    p_rep.set_defaults(func=_cmd_replay)

    p_fit = sub.add_parser(
        "fit", parents=[common], help="least-squares polynomial fit of x,y data"
    )
    p_fit.add_argument("data", help="two-column text/CSV of x,y points")
    p_fit.add_argument("--degree", type=int, default=5, help="fit degree (default 5)")
    p_fit.add_argument("--x-col", help="x column name (CSV with header)")
    p_fit.add_argument("--y-col", help="y column name (CSV with header)")
    p_fit.set_defaults(func=_cmd_fit)

    p_cmp = sub.add_parser(
        "compare", parents=[common], help="deviation statistics between two recorded series"
    )
    p_cmp.add_argument("reference", help="reference CSV")
    p_cmp.add_argument("candidate", help="candidate CSV")
    p_cmp.add_argument("--column", required=True, help="column to compare, e.g. rh_pct")
    p_cmp.add_argument("--tolerance", type=float, required=True, help="max allowed |deviation|")
    p_cmp.set_defaults(func=_cmd_compare)

    p_plot = sub.add_parser(
        "plot", parents=[common], help="reconstruct waveforms from CSV into a figure + table"
    )
    p_plot.add_argument("csv", nargs="+", help="input CSV file(s)")
    p_plot.add_argument("--columns", default="temp_c,rh_pct", help="columns to plot (default temp_c,rh_pct)")
    p_plot.add_argument("--out", help="figure path (default: first input stem + .svg)")
    p_plot.add_argument("--table", help="companion text table path (default: figure stem + .txt)")
    p_plot.add_argument("--title", help="figure title")
    p_plot.set_defaults(func=_cmd_plot)

    return parser


def _verbose_dump(args, resolved: dict):
    if args.verbose:
        print("resolved configuration:", file=sys.stderr)
        for key, value in resolved.items():
            print(f"  {key} = {value}", file=sys.stderr)


def _parse_envelope(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(tok) for tok in text.split(","))
    except ValueError as exc:
        raise UsageError(f"envelope must be LO,HI, got {text!r}") from exc
    if not lo < hi:
        raise UsageError(f"envelope low must be below high, got {text!r}")
    return (lo, hi)


def _resolve_scenario(args) -> AmbientScenario:
    base = None
    if args.scenario:
        inline = args.scenario.strip()
        if inline.lower().startswith(("const:", "constant:")):
            parts = inline.split(":", 1)[1].split(",")
            if len(parts) != 2:
                raise UsageError(f"inline scenario must be const:TEMP,RH, got {inline!r}")
            try:
                base = AmbientScenario(Constant(float(parts[0])), Constant(float(parts[1])))
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
        else:
            try:
                base = load_scenario(inline)
            except (FileNotFoundError, ValueError) as exc:
                raise UsageError(f"cannot load scenario: {exc}") from exc
    try:
        temperature = parse_source(args.temp) if args.temp is not None else (
            base.temperature if base else None
        )
        humidity = parse_source(args.rh) if args.rh is not None else (
            base.humidity if base else None
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if temperature is None and humidity is None:
        raise UsageError("no source configured: give --scenario, --temp or --rh")
    return AmbientScenario(
        temperature=temperature,
        humidity=humidity,
        duration_s=args.duration if args.duration is not None else (base.duration_s if base else None),
        temperature_envelope=(
            _parse_envelope(args.temp_envelope)
            if args.temp_envelope
            else (base.temperature_envelope if base else DEFAULT_TEMP_ENVELOPE)
        ),
        humidity_envelope=(
            _parse_envelope(args.rh_envelope)
            if args.rh_envelope
            else (base.humidity_envelope if base else DEFAULT_RH_ENVELOPE)
        ),
        ch2_volts=args.ch2_volts if args.ch2_volts is not None else (base.ch2_volts if base else 0.0),
        ch3_volts=args.ch3_volts if args.ch3_volts is not None else (base.ch3_volts if base else 0.0),
    )


def _truth_writer(path, base_ts):
    """Returns (on_tick, close) recording true scenario values per tick."""
    f = open(path, "w", encoding="utf-8", newline="")
    f.write("timestamp,temp_c,rh_pct\n")

    def on_tick(i, t, temperature, humidity, frame):
        from datetime import timedelta

        stamp = format_timestamp(base_ts + timedelta(seconds=t))
        t_txt = f"{temperature:.6g}" if temperature is not None else ""
        rh_txt = f"{humidity:.6g}" if humidity is not None else ""
        f.write(f"{stamp},{t_txt},{rh_txt}\n")

    return on_tick, f.close


def _cmd_simulate(args) -> int:
    from datetime import datetime, timezone

    scenario = _resolve_scenario(args)
    if args.count is None and scenario.duration_s is None and not args.realtime:
        raise UsageError("give --count or --duration (or --realtime to run until interrupted)")
    base_ts = (
        parse_timestamp(args.timestamp_base)
        if args.timestamp_base
        else datetime.now(timezone.utc)
    )
    _verbose_dump(
        args,
        {
            "scenario": scenario,
            "rate_hz": args.rate,
            "count": args.count,
            "out": args.out,
            "truth_csv": args.truth_csv,
            "realtime": args.realtime,
            "noise": args.noise,
            "seed": args.seed,
            "timestamp_base": format_timestamp(base_ts),
        },
    )
    stop = threading.Event()
    previous = signal.signal(signal.SIGINT, lambda *_: stop.set())
    sink = open_write_stream(args.out)
    on_tick = close_truth = None
    if args.truth_csv:
        on_tick, close_truth = _truth_writer(args.truth_csv, base_ts)
    try:
        summary = run_simulator(
            scenario,
            args.rate,
            sink,
            count=args.count,
            realtime=args.realtime,
            noise=args.noise,
            seed=args.seed,
            on_tick=on_tick,
            stop=stop,
        )
    finally:
        signal.signal(signal.SIGINT, previous)
        sink.close()
        if close_truth:
            close_truth()
    print(
        f"emitted {summary.frames_emitted} frames in {summary.elapsed_s:.3f} s",
        file=sys.stderr,
    )
    return 0


def _parse_channels(text: str) -> frozenset:
    try:
        channels = frozenset(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise UsageError(f"bad --channels value {text!r}") from exc
    if not channels or any(not 0 <= ch <= 3 for ch in channels):
        raise UsageError(f"--channels must name channels 0..3, got {text!r}")
    return channels


def _session_config(args, transport) -> SessionConfig:
    profiles_path = args.profiles or os.environ.get(CONFIG_ENV_VAR)
    if profiles_path:
        try:
            profiles = load_profiles(profiles_path)
        except (FileNotFoundError, ValueError) as exc:
            raise UsageError(f"cannot load profiles: {exc}") from exc
    else:
        profiles = default_profiles()
    base = None
    if args.timestamp_base:
        try:
            base = parse_timestamp(args.timestamp_base)
        except ValueError as exc:
            raise UsageError(f"bad --timestamp-base: {exc}") from exc
    return SessionConfig(
        transport=transport,
        profiles=profiles,
        csv_path=args.csv,
        csv_append=args.append,
        channels_enabled=_parse_channels(args.channels),
        max_duration_s=args.max_duration,
        timestamp_base=base,
        timestamp_step_s=args.timestamp_step,
    )


def _run_session(args, config: SessionConfig) -> int:
    stop = threading.Event()
    previous = signal.signal(signal.SIGINT, lambda *_: stop.set())
    try:
        stats = acquire(
            config, stop=stop, live_stream=sys.stdout if args.live else None
        )
    finally:
        signal.signal(signal.SIGINT, previous)
    print_summary(stats)
    return 1 if stats.error else 0


def _cmd_acquire(args) -> int:
    if args.loopback == bool(args.transport):
        raise UsageError("give exactly one of --transport or --loopback")
    if args.loopback:
        return _cmd_loopback(args)
    config = _session_config(args, args.transport)
    _verbose_dump(args, {"transport": args.transport, "csv": args.csv, "channels": sorted(config.channels_enabled)})
    return _run_session(args, config)


def _cmd_loopback(args) -> int:
    scenario = _resolve_scenario(args)
    if args.count is None and scenario.duration_s is None:
        raise UsageError("loopback needs --count or --duration")
    if args.timestamp_step == 1.0 and args.rate:
        args.timestamp_step = 1.0 / args.rate
    sim_sock, acq_sock = socket.socketpair()
    read_side = SocketTransport(acq_sock, "loopback")
    config = _session_config(args, read_side)
    _verbose_dump(args, {"transport": "loopback", "scenario": scenario, "rate_hz": args.rate, "count": args.count, "csv": args.csv})
    failures = []

    def feed():
        sink = SocketWriteStream(sim_sock)
        try:
            run_simulator(
                scenario,
                args.rate,
                sink,
                count=args.count,
                noise=args.noise,
                seed=args.seed,
            )
        except Exception as exc:  # surfaced after the session ends
            failures.append(exc)
        finally:
            sink.close()

    thread = threading.Thread(target=feed, daemon=True)
    thread.start()
    code = _run_session(args, config)
    thread.join(timeout=10)
    if failures:
        print(f"error: simulator failed: {failures[0]}", file=sys.stderr)
        return 1
    return code


def _cmd_replay(args) -> int:
    config = _session_config(args, f"file:{args.capture}")
    _verbose_dump(args, {"capture": args.capture, "csv": args.csv, "channels": sorted(config.channels_enabled)})
    return _run_session(args, config)


def _read_xy(path, x_col, y_col):
    import csv as _csv

    points = []
    if x_col or y_col:
        if not (x_col and y_col):
            raise UsageError("--x-col and --y-col must be given together")
        with open(path, newline="", encoding="utf-8") as f:
            reader = _csv.DictReader(f)
            fields = reader.fieldnames or []
            for col in (x_col, y_col):
                if col not in fields:
                    raise SchemaError(f"{path}: no column {col!r} (found {fields})")
            for row in reader:
                try:
                    points.append((float(row[x_col]), float(row[y_col])))
                except (TypeError, ValueError):
                    continue
        return points
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.replace(",", " ").split()
            if len(tokens) < 2:
                continue
            try:
                points.append((float(tokens[0]), float(tokens[1])))
            except ValueError:
                continue  # header or stray text line
    return points


def _cmd_fit(args) -> int:
    if args.degree < 0:
        raise UsageError("--degree must be >= 0")
    points = _read_xy(args.data, args.x_col, args.y_col)
    _verbose_dump(args, {"data": args.data, "points": len(points), "degree": args.degree})
    poly = fit_polynomial(points, args.degree)
    residuals = [y - poly(x) for x, y in points]
    rms = (sum(r * r for r in residuals) / len(residuals)) ** 0.5
    descending = ", ".join(f"{c:.10g}" for c in reversed(poly.coefficients))
    print(descending)
    print(
        f"degree {args.degree} fit over {len(points)} points: "
        f"rms residual {rms:.6g}, max |residual| {max(abs(r) for r in residuals):.6g}",
        file=sys.stderr,
    )
    return 0


def _cmd_compare(args) -> int:
    reference = load_series(args.reference, args.column)
    candidate = load_series(args.candidate, args.column)
    _verbose_dump(
        args,
        {"reference": args.reference, "candidate": args.candidate, "column": args.column, "tolerance": args.tolerance},
    )
    try:
        result = compare_series(reference, candidate, args.tolerance)
    except AlignmentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(result)
    return 0 if result.within_tolerance else 1


def _cmd_plot(args) -> int:
    columns = [c.strip() for c in args.columns.split(",") if c.strip()]
    if not columns:
        raise UsageError("--columns must name at least one column")
    series = []
    for path in args.csv:
        for column in columns:
            s = load_series(path, column)
            if len(s):
                series.append(s)
    if not series:
        raise UsageError("no data: the requested columns are empty in every input")
    from pathlib import Path

    out = Path(args.out) if args.out else Path(args.csv[0]).with_suffix(".svg")
    if not out.suffix:
        out = out.with_suffix(".svg")
    table = Path(args.table) if args.table else out.with_suffix(".txt")
    _verbose_dump(args, {"inputs": args.csv, "columns": columns, "out": str(out), "table": str(table)})
    fig_path, table_path = reconstruct_waveform(series, out, table_path=table, title=args.title)
    print(f"wrote {fig_path} and {table_path}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
