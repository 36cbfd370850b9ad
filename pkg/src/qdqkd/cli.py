"""Command-line entry point: loopback simulation, networked endpoints, analysis and key tools."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .analyze import CalibrationError, analyze, calibrate
from .detection import ChannelMap, TagArray, TagFormatError, read_tags, write_tags, write_tags_csv
from .loopback import run_loopback
from .postproc.keys import InsufficientKey, KeyFileError, KeyReuseError, otp_decrypt, otp_encrypt, read_key, \
    save_ledger, write_key
from .session import SessionConfig, SessionError, SessionMetrics, SessionResult, run_session
from .testbed import SCENARIOS, Testbed, apply_overrides, scenario_preset
from .transport import TransportError, connect, listen

EXIT_OK, EXIT_CONFIG, EXIT_TRANSPORT, EXIT_ABORT = 0, 2, 3, 4
MODES = ("loopback", "alice", "bob", "analyze", "calibrate", "encrypt", "decrypt", "dump")

log = logging.getLogger("qdqkd")


class ConfigError(ValueError):
    pass


RUN_KEYS = {"preset", "duration", "seed", "accel", "listen", "connect", "out_dir", "write_tags"}
SESSION_KEYS = {f.name for f in fields(SessionConfig)} - {"scheme", "n_packets", "seed", "accel",
                                                            "packet_duration", "window"}


def load_config(path) -> dict:
    """Parse and shape-check a run config; unknown keys are rejected."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    bad = set(doc) - {"run", "session", "scenario"}
    if bad:
        raise ConfigError(f"unknown config sections {sorted(bad)}")
    for section, allowed in (("run", RUN_KEYS), ("session", SESSION_KEYS)):
        extra = set(doc.get(section, {})) - allowed
        if extra:
            raise ConfigError(f"unknown keys in '{section}': {sorted(extra)}")
    return doc


def build(args, doc: dict):
    run = {**doc.get("run", {})}
    for key in ("preset", "duration", "seed", "accel", "listen", "connect", "out_dir"):
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    if args.write_tags:
        run["write_tags"] = True
    preset = run.get("preset", "fiber-250m")
    if preset not in SCENARIOS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(SCENARIOS)}")
    try:
        scenario = apply_overrides(scenario_preset(preset), doc.get("scenario", {}))
        Testbed(scenario, 0)  # validates nested configs eagerly
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    duration = float(run.get("duration", 12.0))
    n_packets = int(math.floor(duration / scenario.packet_duration + 1e-9))
    if n_packets < 1:
        raise ConfigError(f"duration {duration} s is shorter than one {scenario.packet_duration} s packet")
    seed = int(run.get("seed", 0))
    session_doc = dict(doc.get("session", {}))
    session_doc.setdefault("session_id", f"{preset}-s{seed}")
    try:
        cfg = SessionConfig(n_packets=n_packets, seed=seed, accel=run.get("accel"),
                            packet_duration=scenario.packet_duration, window=scenario.window,
                            scheme=scenario.scheme, **session_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid session config: {exc}") from exc
    return run, scenario, cfg


def artifact(out_dir: Path, sid: str, role: str, name: str, ext: str) -> Path:
    return out_dir / f"{sid}.{role}.{name}.{ext}"


def write_metrics(out_dir: Path, res: SessionResult) -> None:
    with open(artifact(out_dir, res.session_id, res.role, "metrics", "csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SessionMetrics.CSV_COLUMNS)
        for m in res.metrics:
            w.writerow(m.csv_row())
    summary = {
        "session_id": res.session_id, "role": res.role, "aborted": res.aborted, "abort_reason": res.abort_reason,
        "qber": _num(res.qber), "final_qber": _num(res.final_qber), "S": _num(res.chsh[0]), "S_err": _num(res.chsh[1]),
        "key_coincidences": res.n_key_coincidences, "sifted_bits": len(res.sifted),
        "reconciled_bits": res.reconciled.n_bits if res.reconciled else None,
        "leaked_bits": res.reconciled.leaked_bits if res.reconciled else None,
        "extracted_bits": res.extracted.n_bits if res.extracted else None,
        "packets": [m.to_json() for m in res.metrics],
    }
    artifact(out_dir, res.session_id, res.role, "metrics", "json").write_text(json.dumps(summary, indent=1))


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def write_outputs(out_dir: Path, res: SessionResult, tags: list | None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(out_dir, res)
    if res.extracted is not None and not res.aborted:
        write_key(artifact(out_dir, res.session_id, res.role, "key", "bin"), res.extracted)
    if tags is not None:
        write_tags(TagArray.merge(*tags) if tags else TagArray(np.zeros(0, np.int64), np.zeros(0, np.uint8)),
                   artifact(out_dir, res.session_id, res.role, "tags", "qtag"))


def _recording(feed, sink: list | None):
    if sink is None:
        return feed

    def get(k):
        tags = feed(k)
        sink.append(tags)
        return tags
    return get


def _log_packet(role, m):
    if role == "alice":
        log.info("packet %d: qber=%.4f S=%.3f key=%d%s", m.packet_index, m.qber, m.s_value, m.sifted_bits,
                 f" ABORT({m.abort_reason})" if m.aborted else "")


def _status(res: SessionResult) -> int:
    if res.aborted:
        log.warning("%s: session aborted (%s)", res.role, res.abort_reason)
        return EXIT_ABORT
    return EXIT_OK


def cmd_loopback(args, doc) -> int:
    run, scenario, cfg = build(args, doc)
    out_dir = Path(run.get("out_dir", "runs"))
    record = {"alice": [], "bob": []} if run.get("write_tags") else None
    alice, bob = run_loopback(scenario, cfg, on_packet=_log_packet, record=record)
    for res in (alice, bob):
        write_outputs(out_dir, res, record[res.role] if record else None)
    log.info("qber=%.4f S=%.3f sifted=%d extracted=%s", alice.qber, alice.chsh[0], len(alice.sifted),
             alice.extracted.n_bits if alice.extracted else None)
    return _status(alice)


def cmd_endpoint(args, doc) -> int:
    role = args.mode
    run, scenario, cfg = build(args, doc)
    if not (run.get("listen") or run.get("connect")):
        raise ConfigError(f"mode {role} needs --listen or --connect")
    out_dir = Path(run.get("out_dir", "runs"))
    sink = [] if run.get("write_tags") else None
    bed = Testbed(scenario, cfg.seed)
    tx = listen(run["listen"]) if run.get("listen") else connect(run["connect"])
    try:
        res = run_session(role, cfg, tx, _recording(bed.feed(role), sink), bed.channel_map, _log_packet)
    finally:
        tx.close()
    write_outputs(out_dir, res, sink)
    return _status(res)


def cmd_analyze(args, doc) -> int:
    if not (args.tags_a and args.tags_b):
        raise ConfigError("analyze needs --tags-a and --tags-b")
    report = analyze(read_tags(args.tags_a), read_tags(args.tags_b), ChannelMap.default(),
                     window=args.window)
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(json.dumps({k: v for k, v in report.items() if k != "coincidence_histogram"}, indent=1))
    return EXIT_OK


def cmd_calibrate(args, doc) -> int:
    if args.target is None:
        raise ConfigError("calibrate needs --target (cps)")
    run, scenario, _ = build(args, doc)
    c = calibrate(args.target, scenario.emitter, collection=args.collection, seed=int(run.get("seed", 0)))
    print(json.dumps({"pair_prob": c.pair_prob, "efficiency_product": c.efficiency_product,
                      "simulated_rate": c.simulated_rate, "target": c.target}, indent=1))
    return EXIT_OK


def cmd_otp(args, doc) -> int:
    if not (args.key and args.input and args.out):
        raise ConfigError(f"{args.mode} needs --key, --in and --out")
    key = read_key(args.key)
    data = Path(args.input).read_bytes()
    if args.mode == "encrypt":
        ct, offset = otp_encrypt(data, key, args.offset)
        Path(args.out).write_bytes(ct)
        print(json.dumps({"offset": offset, "length": len(ct), "remaining": key.remaining}))
    else:
        if args.offset is None:
            raise ConfigError("decrypt needs --offset")
        Path(args.out).write_bytes(otp_decrypt(data, key, args.offset))
    save_ledger(args.key, key)
    return EXIT_OK


def cmd_dump(args, doc) -> int:
    if not (args.tags_a and args.out):
        raise ConfigError("dump needs --tags-a and --out")
    write_tags_csv(read_tags(args.tags_a), args.out, ChannelMap.default())
    return EXIT_OK


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdqkd", description="Entanglement-based QKD simulator and protocol endpoints")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--config", help="JSON config with run/session/scenario sections")
    p.add_argument("--preset", choices=sorted(SCENARIOS))
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="simulated acquisition time in s")
    p.add_argument("--accel", type=float, help="simulated seconds per wall-clock second (default: unpaced)")
    peer = p.add_mutually_exclusive_group()
    peer.add_argument("--listen", metavar="HOST:PORT")
    peer.add_argument("--connect", metavar="HOST:PORT")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--write-tags", action="store_true", help="also write QTAG streams")
    p.add_argument("--tags-a", help="Alice QTAG file (analyze, dump)")
    p.add_argument("--tags-b", help="Bob QTAG file (analyze)")
    p.add_argument("--window", type=float, default=800.0, help="coincidence window in ps (analyze)")
    p.add_argument("--target", type=float, help="singles rate in cps (calibrate)")
    p.add_argument("--collection", type=float, default=1.0, help="collection efficiency (calibrate)")
    p.add_argument("--key", help="key file (encrypt, decrypt)")
    p.add_argument("--in", dest="input", help="input file (encrypt, decrypt)")
    p.add_argument("--out", help="output file")
    p.add_argument("--offset", type=int, help="key byte offset (encrypt, decrypt)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


HANDLERS = {"loopback": cmd_loopback, "alice": cmd_endpoint, "bob": cmd_endpoint, "analyze": cmd_analyze,
            "calibrate": cmd_calibrate, "encrypt": cmd_otp, "decrypt": cmd_otp, "dump": cmd_dump}


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        doc = load_config(args.config)
        return HANDLERS[args.mode](args, doc)
    except (ConfigError, CalibrationError) as exc:
        print(f"qdqkd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SessionError, TransportError) as exc:
        print(f"qdqkd: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (TagFormatError, KeyFileError, InsufficientKey, KeyReuseError, OSError) as exc:
        print(f"qdqkd: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
