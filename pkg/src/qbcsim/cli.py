"""Command-line front end: conceal, bind, session and scan subcommands.

Every run derives its generators from one root seed (recorded in the
manifest), writes tables with 12 significant digits in a fixed column
order, and writes exactly one manifest next to each output file. Flag
values override config-file values, which override the defaults; the
config file is a flat `key = value` text document.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    SecurityReport,
    branch_fidelity_means,
    cheat_fidelity_pre,
    concealment_distance,
    ensemble_cheat_estimate,
    expected_concealment,
    random_record,
    scan,
)
from .protocol import BB84Record, ProtocolParams, run_entanglement_audit, run_session
from .seeding import SUBCOMMAND_TAGS, derive_rng

ENV_OUT_DIR = "QBCSIM_OUT_DIR"

CONCEAL_COLUMNS = ("n", "mean_D", "stderr", "trials", "seed")
BIND_COLUMNS = (
    "n", "lambda", "p_out", "F_out", "p_in", "F_in", "F_pre",
    "cheat_estimate", "ci_low", "ci_high", "trials", "seed",
)
SCAN_COLUMNS = (
    "n", "m", "lambda", "theta", "trials", "seed",
    "mean_D", "stderr_D", "mean_D_post", "F_pre",
    "p_out", "F_out", "p_in", "F_in",
    "cheat_estimate", "ci_low", "ci_high",
    "eps_exact", "eps_bound", "honest_flip_total", "cheat_total", "error",
)


def fmt(value) -> str:
    """Canonical cell formatting: 12 significant digits, empty for absent."""
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_table(path: Path, columns: tuple[str, ...], rows: list[dict], form: str) -> None:
    if form == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row.get(c)) for c in columns])
        path.write_text(buf.getvalue())
    else:
        canon = [
            {c: _json_cell(row.get(c)) for c in columns}
            for row in rows
        ]
        path.write_text(json.dumps({"columns": list(columns), "rows": canon}, indent=2) + "\n")


def _json_cell(value):
    if isinstance(value, float):
        return float(format(value, ".12g"))
    return value


def read_table(path: Path) -> tuple[tuple[str, ...], list[dict]]:
    """Parse an emitted table; re-emitting it reproduces the bytes."""
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
        return tuple(doc["columns"]), doc["rows"]
    rows = []
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    for rec in reader:
        rows.append({c: _parse_cell(v) for c, v in zip(header, rec)})
    return header, rows


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


class Manifest:
    """Run metadata written exactly once, marked incomplete on interruption."""

    def __init__(self, subcommand: str, config: dict, seed: int):
        self.doc = {
            "version": __version__,
            "subcommand": subcommand,
            "config": config,
            "root_seed": seed,
            "seed_rule": "SeedSequence([root_seed, subcommand_tag, *indices])",
            "subcommand_tag": SUBCOMMAND_TAGS[subcommand],
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "outputs": [],
            "summary": {},
            "status": "incomplete",
        }

    def finish(self, path: Path, outputs: list[str], summary: dict, complete: bool = True) -> None:
        self.doc["outputs"] = outputs
        self.doc["summary"] = summary
        self.doc["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.doc["status"] = "complete" if complete else "incomplete"
        path.write_text(json.dumps(self.doc, indent=2) + "\n")


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in str(text).split(",") if part.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from exc


def parse_float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in str(text).split(",") if part.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from exc


def load_config(path: str | None) -> dict:
    """Flat `key = value` file; '#' starts a comment."""
    if path is None:
        return {}
    values = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected 'key = value'")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qbcsim",
        description="Simulate and analyze the commit/check/open bit-commitment protocol",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--m", type=int, default=None, help="segment count")
        p.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="checking fraction in (0,1)")
        p.add_argument("--theta", type=float, default=None,
                       help="modulation angle in radians")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--seed", type=int, default=None, help="root seed")
        p.add_argument("--mode", choices=("honest", "epr"), default=None)
        p.add_argument("--accounting", choices=("ensemble", "game"), default=None)
        p.add_argument("--penalty", type=float, default=None)
        p.add_argument("--verify", choices=("exact", "sampled"), default=None)
        p.add_argument("--out", type=str, default=None, help="output file path")
        p.add_argument("--format", choices=("csv", "json"), default=None)
        p.add_argument("--config", type=str, default=None, help="flat key=value file")

    p = sub.add_parser("conceal", help="concealment distance table over n")
    p.add_argument("--n", type=parse_int_list, default=None, help="comma list of n")
    p.add_argument("--symmetric-fixture", action="store_true",
                   help="single row: the record (1,2,3,4) at n=4")
    common(p)

    p = sub.add_parser("bind", help="cheat fidelities and end-to-end estimate")
    p.add_argument("--n", type=parse_int_list, default=None)
    p.add_argument("--no-checking", action="store_true",
                   help="skip the challenge phase (pre-check binding only)")
    common(p)

    p = sub.add_parser("session", help="run one observable session")
    p.add_argument("--n", type=parse_int_list, default=None)
    p.add_argument("--commit-bit", type=int, choices=(0, 1), default=None)
    p.add_argument("--open-bit", type=int, choices=(0, 1), default=None)
    p.add_argument("--audit", action="store_true",
                   help="run the entanglement audit instead of a full session")
    common(p)

    p = sub.add_parser("scan", help="grid scan with composed m-segment totals")
    p.add_argument("--n", type=parse_int_list, default=None)
    p.add_argument("--m-list", type=parse_int_list, default=None)
    p.add_argument("--lambda-list", type=parse_float_list, default=None)
    p.add_argument("--theta-list", type=parse_float_list, default=None)
    common(p)
    return parser


DEFAULTS = {
    "n": [8],
    "m": 1,
    "lam": 0.5,
    "theta": math.pi / 16,
    "trials": 1000,
    "mode": "honest",
    "accounting": "ensemble",
    "penalty": 0.0,
    "verify": "exact",
    "format": "csv",
    "m_list": None,
    "lambda_list": None,
    "theta_list": None,
}

_CONFIG_PARSERS = {
    "n": parse_int_list,
    "m": int,
    "lambda": float,
    "theta": float,
    "trials": int,
    "seed": int,
    "mode": str,
    "accounting": str,
    "penalty": float,
    "verify": str,
    "out": str,
    "format": str,
    "m_list": parse_int_list,
    "lambda_list": parse_float_list,
    "theta_list": parse_float_list,
}
_CONFIG_KEY_TO_ATTR = {"lambda": "lam"}


def resolve_options(args: argparse.Namespace) -> dict:
    """Apply the precedence: flags > config file > defaults."""
    opts = dict(vars(args))
    config = load_config(opts.get("config"))
    for key, raw in config.items():
        if key not in _CONFIG_PARSERS:
            raise ValueError(f"unknown config key {key!r}")
        attr = _CONFIG_KEY_TO_ATTR.get(key, key)
        if opts.get(attr) is None:
            opts[attr] = _CONFIG_PARSERS[key](raw)
    for key, default in DEFAULTS.items():
        if opts.get(key) is None:
            opts[key] = default
    if opts.get("seed") is None:
        opts["seed"] = int.from_bytes(os.urandom(4), "big")
    return opts


def default_out(opts: dict, name: str) -> Path:
    if opts.get("out"):
        return Path(opts["out"])
    base = Path(os.environ.get(ENV_OUT_DIR, "."))
    return base / f"{name}.{opts['format']}"


def echo_config(opts: dict) -> dict:
    drop = {"subcommand", "config"}
    return {
        k: v for k, v in sorted(opts.items()) if k not in drop and v is not None
    }


def cmd_conceal(opts: dict) -> int:
    seed = opts["seed"]
    rows = []
    if opts.get("symmetric_fixture"):
        record = BB84Record((1, 2, 3, 4))
        rows.append({
            "n": 4, "mean_D": concealment_distance(record, opts["theta"]),
            "stderr": 0.0, "trials": 1, "seed": seed,
        })
    else:
        for i, n in enumerate(opts["n"]):
            rng = derive_rng(seed, SUBCOMMAND_TAGS["conceal"], i)
            mean, err = expected_concealment(n, opts["theta"], opts["trials"], rng)
            rows.append({
                "n": n, "mean_D": mean, "stderr": err,
                "trials": opts["trials"], "seed": seed,
            })
    out = default_out(opts, "conceal")
    manifest = Manifest("conceal", echo_config(opts), seed)
    write_table(out, CONCEAL_COLUMNS, rows, opts["format"])
    manifest.finish(out.with_suffix(out.suffix + ".manifest.json"), [str(out)],
                    {"rows": len(rows)})
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def cmd_bind(opts: dict) -> int:
    seed = opts["seed"]
    rows = []
    for i, n in enumerate(opts["n"]):
        rng = derive_rng(seed, SUBCOMMAND_TAGS["bind"], i)
        checking = not opts.get("no_checking", False)
        params = ProtocolParams(
            n=n, m=opts["m"], lam=opts["lam"], theta=opts["theta"],
            alice_mode="epr", accounting=opts["accounting"],
            penalty=opts["penalty"], verify_mode=opts["verify"],
            checking=checking,
        )
        trials = opts["trials"]
        f_pre = float(np.mean([
            cheat_fidelity_pre(random_record(n, rng), opts["theta"])
            for _ in range(min(trials, 200))
        ]))
        if checking:
            branch = branch_fidelity_means(
                n, opts["lam"], opts["theta"], min(trials, 200), rng
            )
        else:
            branch = {"p_out": None, "p_in": None, "f_out": None, "f_in": None}
        est = ensemble_cheat_estimate(params, trials, rng, seed=seed)
        rows.append({
            "n": n, "lambda": opts["lam"],
            "p_out": branch["p_out"], "F_out": branch["f_out"],
            "p_in": branch["p_in"], "F_in": branch["f_in"],
            "F_pre": f_pre, "cheat_estimate": est.cheat_estimate,
            "ci_low": est.ci_low, "ci_high": est.ci_high,
            "trials": trials, "seed": seed,
        })
    out = default_out(opts, "bind")
    manifest = Manifest("bind", echo_config(opts), seed)
    write_table(out, BIND_COLUMNS, rows, opts["format"])
    manifest.finish(out.with_suffix(out.suffix + ".manifest.json"), [str(out)],
                    {"rows": len(rows)})
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def cmd_session(opts: dict) -> int:
    seed = opts["seed"]
    n = opts["n"][0]
    rng = derive_rng(seed, SUBCOMMAND_TAGS["session"], 0)
    params = ProtocolParams(
        n=n, m=opts["m"], lam=opts["lam"], theta=opts["theta"],
        alice_mode=opts["mode"], accounting=opts["accounting"],
        penalty=opts["penalty"], verify_mode=opts["verify"],
    )
    manifest = Manifest("session", echo_config(opts), seed)
    if opts.get("audit"):
        if params.alice_mode != "epr":
            print("error: the audit needs --mode epr", file=sys.stderr)
            return 2
        prob, transcript = run_entanglement_audit(params, rng)
        summary = {"audit_pass_probability": float(format(prob, ".12g"))}
        print(f"audit pass probability: {fmt(prob)}")
    else:
        transcript, result = run_session(
            params, rng,
            commit_bit=opts.get("commit_bit"), open_bit=opts.get("open_bit"),
        )
        summary = {
            "outcome": result.outcome,
            "accepted_bit": result.accepted_bit,
            "claim": result.claim,
            "open_accept": _json_cell(result.open_accept),
        }
        print(f"outcome: {result.outcome}"
              + (f" bit={result.accepted_bit}" if result.accepted_bit is not None else "")
              + (f" claim={result.claim}" if result.claim else ""))
    out = Path(opts["out"]) if opts.get("out") else default_out(opts, "session").with_suffix(".jsonl")
    out.write_text(transcript.to_jsonl())
    manifest.finish(out.with_suffix(out.suffix + ".manifest.json"), [str(out)], summary)
    print(f"wrote {out}")
    return 0


def cmd_scan(opts: dict) -> int:
    seed = opts["seed"]
    ns = opts["n"]
    ms = opts.get("m_list") or [opts["m"]]
    lams = opts.get("lambda_list") or [opts["lam"]]
    thetas = opts.get("theta_list") or [opts["theta"]]
    points = [
        {"n": n, "m": m, "lam": lam, "theta": theta, "trials": opts["trials"]}
        for n in ns for m in ms for lam in lams for theta in thetas
    ]
    manifest = Manifest("scan", echo_config(opts), seed)
    out = default_out(opts, "scan")
    reports = []
    try:
        reports = scan(points, seed)
        rows = [_scan_row(r) for r in reports]
        write_table(out, SCAN_COLUMNS, rows, opts["format"])
        complete = True
    except KeyboardInterrupt:
        rows = [_scan_row(r) for r in reports]
        write_table(out, SCAN_COLUMNS, rows, opts["format"])
        complete = False
    manifest.finish(out.with_suffix(out.suffix + ".manifest.json"), [str(out)],
                    {"rows": len(rows), "points": len(points)}, complete=complete)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def _scan_row(r: SecurityReport) -> dict:
    return {
        "n": r.n, "m": r.m, "lambda": r.lam, "theta": r.theta,
        "trials": r.trials, "seed": r.seed,
        "mean_D": r.conceal_mean, "stderr_D": r.conceal_stderr,
        "mean_D_post": r.conceal_post_mean, "F_pre": r.f_pre,
        "p_out": r.p_out, "F_out": r.f_out, "p_in": r.p_in, "F_in": r.f_in,
        "cheat_estimate": r.cheat_estimate, "ci_low": r.ci_low, "ci_high": r.ci_high,
        "eps_exact": r.eps_exact, "eps_bound": r.eps_bound,
        "honest_flip_total": r.honest_flip_total, "cheat_total": r.cheat_total,
        "error": r.error or None,
    }


COMMANDS = {
    "conceal": cmd_conceal,
    "bind": cmd_bind,
    "session": cmd_session,
    "scan": cmd_scan,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.subcommand](opts)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
