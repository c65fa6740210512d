"""Command-line driver.

    tmcc-qkd dist     --lambda 2
    tmcc-qkd moments  --grid 0.1 10 0.1
    tmcc-qkd session  --lambda 2 --bits 1024 --seed 7 --transcript run.csv
    tmcc-qkd sweep    --lambda 2 4 --epsilon 0.01 0.05 --bits-per-cell 100000

Every command writes CSV (default) or JSON to stdout or ``--output``. Reals
are printed with 12 significant digits. ``--config FILE`` reads ``key=value``
lines whose keys are long option names; explicit flags win over the file.

In TCP mode the two ends of a session are separate invocations, one with
``--role alice`` and one with ``--role bob``, one listening and one
connecting. Both must be given the same ``--seed``: the seed stands in for
the physical twin beam the two parties would share.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .attacks import AttackModel
from .photon_statistics import DomainError, magnitude, mean_photons, poisson_pmf, tmcc_pmf, variance
from .protocol import (
    ACCEPTED,
    REASON_EAVESDROPPING,
    REASON_INSUFFICIENT_DATA,
    REASON_PROTOCOL,
    REASON_TRANSPORT,
    REASON_VERIFICATION,
    SessionConfig,
    build_transcript,
    error_table_row,
    run_alice,
    run_bob,
    run_session,
    simulate_channel,
)
from .transport import TransportError, tcp_connect, tcp_listen

log = logging.getLogger("tmcc_qkd")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CODES = {
    ACCEPTED: EXIT_OK,
    REASON_VERIFICATION: 3,
    REASON_EAVESDROPPING: 4,
    REASON_TRANSPORT: 5,
    REASON_PROTOCOL: 6,
    REASON_INSUFFICIENT_DATA: 7,
}

DIST_COLUMNS = ("n", "p_tmcc", "p_poisson")
MOMENTS_COLUMNS = ("lambda", "mean", "variance", "poisson_variance")
TRANSCRIPT_COLUMNS = ("index", "base_count", "alice_count", "bob_count", "alice_bit", "bob_bit")
SWEEP_COLUMNS = (
    "lambda", "epsilon", "threshold", "prob_zero", "error_factor", "p_err",
    "mismatch_rate", "empirical_conditional_error", "empirical_mismatch_rate",
)


class UsageError(Exception):
    pass


# --- formatting ------------------------------------------------------------


def format_real(x: float) -> str:
    return format(x, ".12g")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format_real(float(value))
    return str(value)


def _json_value(value):
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return float(format_real(value)) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, dict):
        return {k: _json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    return value


def render_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def render_json(document) -> str:
    return json.dumps(_json_value(document), indent=2) + "\n"


def render_table(rows: list[dict], columns: Sequence[str], fmt: str) -> str:
    if fmt == "json":
        return render_json([{c: r[c] for c in columns} for r in rows])
    return render_csv(rows, columns)


def _emit(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# --- grids -----------------------------------------------------------------


def _grid(values: list[float] | None, grid: list[float] | None, name: str) -> list[float]:
    if values and grid:
        raise UsageError(f"give either --{name} or --grid, not both")
    if grid:
        start, stop, step = grid
        if step <= 0 or stop < start:
            raise UsageError("--grid needs START <= STOP and STEP > 0")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 12) for k in range(count)]
    if not values:
        raise UsageError(f"empty {name} grid")
    return list(values)


def _amplitude(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(value) or value < 0:
        raise argparse.ArgumentTypeError(f"lambda must be finite and >= 0, got {text!r}")
    return value


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a probability, got {text!r}")
    return value


def _address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


# --- commands --------------------------------------------------------------


def dist_rows(lam: float, n_max: int | None = None) -> list[dict]:
    tmcc = tmcc_pmf(lam)
    poisson = poisson_pmf(tmcc.mean)
    if n_max is None:
        top = max(tmcc.n_max, poisson.n_max)
        while top > 0 and tmcc.pmf(top) == 0.0 and poisson.pmf(top) == 0.0:
            top -= 1
    else:
        top = n_max
    return [{"n": n, "p_tmcc": tmcc.pmf(n), "p_poisson": poisson.pmf(n)} for n in range(top + 1)]


def moments_rows(lambdas: Sequence[float]) -> list[dict]:
    rows = []
    for lam in lambdas:
        mean = mean_photons(lam)
        rows.append({"lambda": magnitude(lam), "mean": mean, "variance": variance(lam), "poisson_variance": mean})
    return rows


def sweep_rows(lambdas, epsilons, bits_per_cell: int, seed: int) -> list[dict]:
    rows = []
    cell = 0
    for lam in lambdas:
        for eps in epsilons:
            rows.append(error_table_row(lam, eps, bits_per_cell, seed, start=cell * bits_per_cell))
            cell += 1
    return rows


def cmd_dist(args) -> int:
    if args.n_max is not None and args.n_max < 0:
        raise UsageError("--n-max must be nonnegative")
    _emit(render_table(dist_rows(args.lam, args.n_max), DIST_COLUMNS, args.format), args.output)
    return EXIT_OK


def cmd_moments(args) -> int:
    lambdas = _grid(args.lam, args.grid, "lambda")
    _emit(render_table(moments_rows(lambdas), MOMENTS_COLUMNS, args.format), args.output)
    return EXIT_OK


def cmd_sweep(args) -> int:
    lambdas = _grid(args.lam, args.grid, "lambda")
    if not args.epsilon:
        raise UsageError("empty epsilon grid")
    if args.bits_per_cell < 1:
        raise UsageError("--bits-per-cell must be positive")
    rows = sweep_rows(lambdas, args.epsilon, args.bits_per_cell, args.seed)
    _emit(render_table(rows, SWEEP_COLUMNS, args.format), args.output)
    return EXIT_OK


def _session_config(args, seed: int) -> SessionConfig:
    try:
        attack = AttackModel.parse(args.attack)
        return SessionConfig(
            lam=args.lam,
            epsilon=args.epsilon,
            key_bits=args.bits,
            seed=seed,
            detection_significance=args.significance,
            attack=attack,
        )
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def _run_tcp(args, config: SessionConfig):
    batch = simulate_channel(config)
    host, port = args.listen or args.connect
    try:
        if args.listen:
            def announce(bound):
                print(f"listening on {host}:{bound}", file=sys.stderr, flush=True)
            endpoint = tcp_listen(config.session_id, host, port, args.timeout, on_bound=announce)
        else:
            endpoint = tcp_connect(config.session_id, host, port, args.timeout)
    except (TransportError, OSError) as exc:
        log.error("connection failed: %s", exc)
        return None
    with endpoint:
        if args.role == "alice":
            result = run_alice(endpoint, config, batch.alice, args.timeout)
        else:
            result = run_bob(endpoint, config, batch.bob, args.timeout)
    return build_transcript(config, batch, result)


def cmd_session(args) -> int:
    if args.transport == "tcp":
        if args.role is None:
            raise UsageError("--transport tcp needs --role alice|bob")
        if bool(args.listen) == bool(args.connect):
            raise UsageError("--transport tcp needs exactly one of --listen / --connect")
        if args.retries:
            raise UsageError("--retries is only supported with the loopback transport")
    elif args.role or args.listen or args.connect:
        raise UsageError("--role/--listen/--connect only apply to --transport tcp")
    if args.retries < 0:
        raise UsageError("--retries must be nonnegative")

    transcript = None
    for attempt in range(args.retries + 1):
        config = _session_config(args, (args.seed + attempt) % (1 << 64))
        if args.transport == "tcp":
            transcript = _run_tcp(args, config)
            if transcript is None:
                return EXIT_CODES[REASON_TRANSPORT]
        else:
            transcript = run_session(config, args.timeout)
        if transcript.outcome != REASON_VERIFICATION:
            break
        log.info("attempt %d failed verification, repeating key generation", attempt + 1)

    summary = transcript.summary()
    if args.transcript:
        if args.format == "json":
            text = render_json({"summary": summary, "records": transcript.rows()})
        else:
            text = render_csv(transcript.rows(), TRANSCRIPT_COLUMNS)
        _emit(text, args.transcript)
    if args.format == "json":
        _emit(render_json(summary), args.output)
    else:
        _emit(render_csv([summary], list(summary)), args.output)
    return EXIT_CODES[transcript.outcome]


# --- argument parsing ------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output", "-o", help="write the table here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmcc-qkd", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="key=value defaults file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", help="photon-number pmf of a TMCC beam and a Poisson beam of equal mean")
    p.add_argument("--lambda", dest="lam", type=_amplitude, required=True)
    p.add_argument("--n-max", type=int, help="last photon number to print (default: truncation point)")
    _add_common(p)
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("moments", help="mean and variance against lambda, with the Poisson reference")
    p.add_argument("--lambda", dest="lam", type=_amplitude, nargs="+")
    p.add_argument("--grid", type=float, nargs=3, metavar=("START", "STOP", "STEP"))
    _add_common(p)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("session", help="run one key-distribution session")
    p.add_argument("--lambda", dest="lam", type=_amplitude, required=True, help="field amplitude |lambda|")
    p.add_argument("--epsilon", type=_probability, default=0.0, help="per-mode noise photon probability")
    p.add_argument("--bits", type=int, default=1024, help="key length, even")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attack", default="none",
                   help="none | beam_split:<transmittance> | clone[:poisson|tmcc_mean_matched]")
    p.add_argument("--significance", type=float, default=0.01, help="level of the count-histogram test")
    p.add_argument("--transport", choices=("loopback", "tcp"), default="loopback")
    p.add_argument("--role", choices=("alice", "bob"))
    p.add_argument("--listen", type=_address, metavar="HOST:PORT")
    p.add_argument("--connect", type=_address, metavar="HOST:PORT")
    p.add_argument("--timeout", type=float, default=30.0, help="seconds to wait for the peer")
    p.add_argument("--retries", type=int, default=0,
                   help="repeat key generation with the next seed after a verification mismatch")
    p.add_argument("--transcript", help="write the per-bit transcript here")
    _add_common(p)
    p.set_defaults(func=cmd_session)

    p = sub.add_parser("sweep", help="error analysis over lambda x epsilon grids")
    p.add_argument("--lambda", dest="lam", type=_amplitude, nargs="+")
    p.add_argument("--grid", type=float, nargs=3, metavar=("START", "STOP", "STEP"))
    p.add_argument("--epsilon", type=_probability, nargs="+", required=True)
    p.add_argument("--bits-per-cell", type=int, default=100_000, help="simulated bits per (lambda, epsilon) cell")
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def read_config(path: str) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(parser: argparse.ArgumentParser, args, values: dict[str, str]) -> None:
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub_action.choices[args.command]
    defaults = {}
    for action in subparser._actions:
        keys = {action.dest, *(o.lstrip("-").replace("-", "_") for o in action.option_strings)}
        hit = keys & values.keys()
        if not hit:
            continue
        raw = values[hit.pop()]
        items = raw.split() if action.nargs in ("+", "*") or isinstance(action.nargs, int) else [raw]
        conv = action.type or str
        try:
            converted = [conv(v) for v in items]
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config value for {action.dest}: {exc}") from None
        defaults[action.dest] = converted if len(items) > 1 or action.nargs in ("+", "*") else converted[0]
        if action.required:
            action.required = False
    unknown = values.keys() - {
        k for a in subparser._actions
        for k in (a.dest, *(o.lstrip("-").replace("-", "_") for o in a.option_strings))
    }
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    subparser.set_defaults(**defaults)


def _parse(argv: Sequence[str] | None):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        # the subcommand has to be known before its defaults can be replaced
        command = next((a for a in (argv or sys.argv[1:]) if a in ("dist", "moments", "session", "sweep")), None)
        if command is None:
            parser.error("no command given")
        _apply_config(parser, argparse.Namespace(command=command), read_config(known.config))
    return parser, parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        parser, args = _parse(argv)
    except UsageError as exc:
        print(f"tmcc-qkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"tmcc-qkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tmcc-qkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
