"""Command-line driver: emulated sessions, link budgeting, file encryption.

Exit codes: 0 success, 2 no secure key, 3 retries exhausted on a
recoverable abort, 4 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import channel as channel_mod
from .bits import write_key_file
from .config import (
    PRESETS,
    SessionConfig,
    apply_preset,
    config_to_text,
    load_config,
)
from .envelope import CipherEnvelope, CryptoContext, PresharedKeyLedger, QkdKeyStore, layered_decrypt, layered_encrypt
from .errors import ConfigError, InsufficientKeyError, SatQkdError
from .plots import render_link_budget, render_qber_series
from .session import (
    NO_KEY_ABORTS,
    PresharedMaterial,
    emulate_stream,
    open_channel_pair,
    qber_monitor,
    run_session,
    throughput_kbps,
)
from .transport import TranscriptLog

EXIT_OK = 0
EXIT_NO_KEY = 2
EXIT_ABORTED = 3
EXIT_CONFIG = 4


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_cfg(args) -> SessionConfig:
    cfg = load_config(args.config) if args.config else SessionConfig()
    if getattr(args, "preset", None):
        cfg = apply_preset(cfg, args.preset)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "policy", None):
        cfg = dataclasses.replace(cfg, policy=args.policy)
    return cfg


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _write_store(path: Path, role: str, ctx: CryptoContext,
                 store: QkdKeyStore, ledger: PresharedKeyLedger) -> None:
    payload = {
        "role": role,
        "kp_hex": ctx.k_p.hex(),
        "role_byte": ctx.role_byte,
        "nonce_counter": ctx.nonce_counter,
        "qkd": store.to_dict(),
        "ledger": ledger.to_dict(),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_store(path: Path):
    d = json.loads(path.read_text())
    ctx = CryptoContext(bytes.fromhex(d["kp_hex"]), role_byte=d["role_byte"])
    ctx.nonce_counter = d["nonce_counter"]
    return d, ctx, QkdKeyStore.from_dict(d["qkd"]), PresharedKeyLedger.from_dict(d["ledger"])


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    transcript = TranscriptLog()
    pair = open_channel_pair(args.transport, transcript)
    material = PresharedMaterial.from_config(cfg)
    result = run_session(cfg, channel=pair, material=material, transcript=transcript)

    # live-QBER series over the same emulated source (fresh seeded stream)
    stream = emulate_stream(cfg.source, 1 << 62, np.random.SeedSequence([cfg.seed, 0xF19]),
                            chunk=cfg.chunk_periods)
    windows = qber_monitor(stream, tc_ns=cfg.t_c_ns, window_bits=1000, max_windows=24)

    artifacts = {}

    series_path = out / "qber_series.txt"
    with series_path.open("w") as fh:
        fh.write("# window_index qber\n")
        for i, q in enumerate(windows):
            fh.write(f"{i} {q:.6f}\n")
    artifacts["qber_series"] = series_path
    render_qber_series(windows, out / "qber_series.png", threshold=cfg.qber_threshold)
    artifacts["qber_series_png"] = out / "qber_series.png"

    transcript_path = out / "transcript.txt"
    transcript_path.write_text("".join(line + "\n" for line in result.transcript))
    artifacts["transcript"] = transcript_path

    kbps = throughput_kbps(result.r, cfg.sifted_rate_bps) if result.succeeded else 0.0
    summary_path = out / "summary.txt"
    with summary_path.open("w") as fh:
        fh.write(f"visibility={cfg.source.visibility}\n")
        fh.write(f"qber={result.q:.6f}\n")
        fh.write(f"secure_key_rate_kbps={kbps:.4f}\n" if result.succeeded
                 else "secure_key_rate_kbps=Nil\n")
        fh.write(f"code_rate={result.rate if result.succeeded else 'none'}\n")
        fh.write(f"leak_ec={result.leak:.6f}\n")
        fh.write(f"secret_fraction={result.r:.6f}\n")
        fh.write(f"final_bits={result.counts.get('final', 0)}\n")
        fh.write(f"attempts={result.attempts}\n")
        fh.write(f"abort={result.abort_reason or 'none'}\n")
        for stage in ("periods", "raw", "sifted", "post_estimation"):
            fh.write(f"count_{stage}={result.counts.get(stage, 0)}\n")
    artifacts["summary"] = summary_path

    if result.succeeded:
        write_key_file(out / "alice_final_key.hex", "final", result.final_key_alice)
        write_key_file(out / "bob_final_key.hex", "final", result.final_key_bob)
        artifacts["alice_final_key"] = out / "alice_final_key.hex"
        artifacts["bob_final_key"] = out / "bob_final_key.hex"

        # banked key + pre-shared state for the encrypt/decrypt commands
        ledger_a = material.new_ledger()
        ledger_b = material.new_ledger()
        ctx_a = CryptoContext(ledger_a.cipher_key(), role_byte=0xA1)
        ctx_b = CryptoContext(ledger_b.cipher_key(), role_byte=0xB0)
        store_a = QkdKeyStore(result.final_key_alice)
        store_b = QkdKeyStore(result.final_key_bob)
        _write_store(out / "alice_store.json", "a", ctx_a, store_a, ledger_a)
        _write_store(out / "bob_store.json", "b", ctx_b, store_b, ledger_b)

    manifest = {
        "command": "simulate",
        "preset": getattr(args, "preset", None),
        "seed": cfg.seed,
        "transport": args.transport,
        "config": config_to_text(cfg),
        "artifacts": {k: {"path": str(p.name), "sha256": _sha256(p)}
                      for k, p in sorted(artifacts.items())},
        "metrics": {
            "qber": result.q,
            "code_rate": result.rate,
            "leak_ec": result.leak,
            "secret_fraction": result.r,
            "secure_key_rate_kbps": kbps if result.succeeded else None,
            "counts": result.counts,
            "attempts": result.attempts,
            "abort": result.abort_reason,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    print(f"Q estimate        : {result.q:.4f}")
    if result.succeeded:
        print(f"code rate / leak  : {result.rate} / {result.leak:.4f}")
        print(f"secret fraction r : {result.r:.4f}")
        print(f"key rate          : {kbps:.2f} kbps (at {cfg.sifted_rate_bps:.0f} sifted bit/s)")
        print(f"final key bits    : {result.counts['final']}")
        print(f"outputs           : {out}")
        return EXIT_OK
    print(f"no key: abort reason {result.abort_reason} after {result.attempts} attempts")
    print(f"outputs           : {out}")
    return EXIT_NO_KEY if result.abort_reason in NO_KEY_ABORTS else EXIT_ABORTED


# ---------------------------------------------------------------------------
# link-budget
# ---------------------------------------------------------------------------

def cmd_link_budget(args) -> int:
    cfg = _load_cfg(args)
    link = cfg.link
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.forward:
        loss = channel_mod.compute_link_loss(link)
        print(f"A_link = {loss:.4f} dB for L = {link.link_distance_m:.4g} m")
        (out / "link_budget.txt").write_text(
            "# forward\nA_link_db={:.6f}\nL_m={:.6g}\n".format(loss, link.link_distance_m)
        )
        return EXIT_OK

    diameters = np.linspace(args.d_min, args.d_max, args.points)
    grid = np.full((args.points, args.points), np.nan)
    table_path = out / "link_budget.txt"
    with table_path.open("w") as fh:
        fh.write(f"# columns: dt_m dr_m distance_m  (total loss {args.loss_db} dB, "
                 f"lambda {link.wavelength_m} m, Tt {link.tt}, Tr {link.tr}, "
                 f"Pl {link.pointing_loss}, Aatm {link.a_atm_db} dB)\n")
        for i, dt in enumerate(diameters):
            for j, dr in enumerate(diameters):
                p = dataclasses.replace(link, dt_m=float(dt), dr_m=float(dr))
                try:
                    dist = channel_mod.solve_link_distance(args.loss_db, p)
                    grid[i, j] = dist
                    fh.write(f"{dt:.4f} {dr:.4f} {dist:.6g}\n")
                except SatQkdError:
                    fh.write(f"{dt:.4f} {dr:.4f} nosol\n")
    render_link_budget(diameters, diameters, grid, out / "link_budget.png", args.loss_db)
    finite = np.isfinite(grid)
    if finite.any():
        print(f"grid {args.points}x{args.points}: distance "
              f"{np.nanmin(grid)/1e3:.1f} .. {np.nanmax(grid)/1e3:.1f} km")
    else:
        print("no solvable cells: requested loss does not exceed the atmospheric loss")
    print(f"outputs           : {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# encrypt / decrypt
# ---------------------------------------------------------------------------

def cmd_encrypt(args) -> int:
    run_dir = Path(args.run)
    store_path = run_dir / "alice_store.json"
    if not store_path.exists():
        raise ConfigError(f"no sender keystore at {store_path}; run simulate first")
    d, ctx, store, ledger = _read_store(store_path)
    data = Path(args.infile).read_bytes()
    try:
        env = layered_encrypt(data, store, ctx, policy=args.policy)
    except InsufficientKeyError as exc:
        print(f"insufficient key: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    Path(args.outfile).write_bytes(env.to_bytes())
    _write_store(store_path, d["role"], ctx, store, ledger)
    layers = "OTP+AES-256-CTR" if env.otp_applied else "AES-256-CTR only"
    if not env.otp_applied:
        print("warning: QKD key short, OTP layer skipped", file=sys.stderr)
    print(f"encrypted {len(data)} bytes -> {args.outfile} [{layers}]")
    return EXIT_OK


def cmd_decrypt(args) -> int:
    run_dir = Path(args.run)
    store_path = run_dir / "bob_store.json"
    if not store_path.exists():
        raise ConfigError(f"no receiver keystore at {store_path}; run simulate first")
    d, ctx, store, ledger = _read_store(store_path)
    env = CipherEnvelope.from_bytes(Path(args.infile).read_bytes())
    data = layered_decrypt(env, store, ctx)
    Path(args.outfile).write_bytes(data)
    _write_store(store_path, d["role"], ctx, store, ledger)
    layers = "OTP+AES-256-CTR" if env.otp_applied else "AES-256-CTR only"
    print(f"decrypted {len(data)} bytes -> {args.outfile} [{layers}]")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satqkd",
        description="BBM92 post-processing simulator with layered "
                    "post-quantum encryption and a link-budget analyzer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an emulated two-party session")
    sim.add_argument("--config", help="key=value configuration file")
    sim.add_argument("--seed", type=int, help="master seed override")
    sim.add_argument("--preset", choices=sorted(PRESETS), help="visibility preset")
    sim.add_argument("--out", default="run", help="output directory")
    sim.add_argument("--policy", choices=["wait", "skip"], help="short-key policy")
    sim.add_argument("--transport", choices=["inproc", "socket"], default="inproc")
    sim.set_defaults(func=cmd_simulate)

    lb = sub.add_parser("link-budget", help="solve distances for a fixed loss, or forward loss")
    lb.add_argument("--config", help="key=value configuration file (link.* block)")
    lb.add_argument("--out", default="run", help="output directory")
    lb.add_argument("--loss-db", type=float, default=10.3, help="total link loss to invert")
    lb.add_argument("--d-min", type=float, default=0.1, help="smallest aperture (m)")
    lb.add_argument("--d-max", type=float, default=1.0, help="largest aperture (m)")
    lb.add_argument("--points", type=int, default=19, help="grid points per axis")
    lb.add_argument("--forward", action="store_true",
                    help="compute A_link for the configured distance instead")
    lb.set_defaults(func=cmd_link_budget)

    enc = sub.add_parser("encrypt", help="layered-encrypt a file with banked QKD key")
    enc.add_argument("--run", required=True, help="simulate output directory")
    enc.add_argument("--in", dest="infile", required=True)
    enc.add_argument("--out", dest="outfile", required=True)
    enc.add_argument("--policy", choices=["wait", "skip"], default="skip")
    enc.set_defaults(func=cmd_encrypt)

    dec = sub.add_parser("decrypt", help="decrypt a layered envelope")
    dec.add_argument("--run", required=True, help="simulate output directory")
    dec.add_argument("--in", dest="infile", required=True)
    dec.add_argument("--out", dest="outfile", required=True)
    dec.set_defaults(func=cmd_decrypt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SatQkdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
