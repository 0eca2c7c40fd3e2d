"""Command-line driver: ``oeiattest <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 validation (parse, analysis, descriptor
errors), 4 verification failure, 5 I/O (files, network).

Environment:

``OEI_KEY``        device private key file used when ``--key`` is absent
``OEI_PUBKEY``     verifier public key file used when ``--pubkey`` is absent
``OEI_MAX_FRAME``  largest accepted frame in bytes (default 1048576)

A program argument is a ``.mir`` path or ``corpus:NAME`` for a bundled
program.  Blob files start with ``OEIB``, a version byte and the 16-byte
nonce, then the blob list in wire encoding.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import socket
import struct
import sys
from pathlib import Path

from . import corpus
from .analysis import AnalysisError, analyze, bundle_json, count_address_based_sites, export_bundle
from .attacks import run_suite
from .instrument import instrument_analysis
from .ir import AttestBegin, ParseError, Program, parse_program
from .measure import DecodeError, DeviceKey, load_public_key, save_public_key
from .measure.session import DEFAULT_CAPACITY
from .prover import FaultError, InterruptEvent, run, run_benign_pair
from .protocol import (FramingError, ProtocolError, decode_blob_list, encode_blob_list,
                       max_frame_default, parse_endpoint, request_attestation, serve)
from .verifier import BundleError, verify

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_VERIFY = 4
EXIT_IO = 5

BLOB_MAGIC = b"OEIB"
BLOB_VERSION = 1

log = logging.getLogger("oeiattest")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- file helpers ---------------------------------------------------------------------

def read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read {path}: {e.strerror or e}") from None


def read_json(path: str):
    try:
        return json.loads(read_text(path))
    except json.JSONDecodeError as e:
        raise CliError(EXIT_VALIDATION, f"{path}: invalid JSON: {e}") from None


def write_out(path: str | None, data: str | bytes) -> None:
    if path in (None, "-"):
        if isinstance(data, bytes):
            sys.stdout.buffer.write(data)
        else:
            sys.stdout.write(data)
        return
    try:
        Path(path).write_bytes(data) if isinstance(data, bytes) else Path(path).write_text(data)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write {path}: {e.strerror or e}") from None


def load_program(spec: str) -> tuple[Program, corpus.CorpusEntry | None]:
    if spec.startswith("corpus:"):
        name = spec.split(":", 1)[1]
        if name not in corpus.NAMES:
            raise CliError(EXIT_USAGE, f"no bundled program {name!r}; "
                                       f"choose from {', '.join(corpus.NAMES)}")
        entry = corpus.load(name)
        return entry.program, entry
    try:
        return parse_program(read_text(spec)), None
    except ParseError as e:
        raise CliError(EXIT_VALIDATION, f"{spec}:\n{e}") from None


def analyze_or_fail(program: Program, label: str):
    try:
        return analyze(program)
    except AnalysisError as e:
        raise CliError(EXIT_VALIDATION, f"{label}:\n{e}") from None


def load_key(path: str | None) -> DeviceKey:
    path = path or os.environ.get("OEI_KEY")
    if not path:
        raise CliError(EXIT_USAGE, "no device key: pass --key or set OEI_KEY")
    try:
        return DeviceKey.load(path)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read key {path}: {e.strerror or e}") from None
    except ValueError as e:
        raise CliError(EXIT_VALIDATION, f"bad key file {path}: {e}") from None


def load_pubkey(path: str | None) -> bytes:
    path = path or os.environ.get("OEI_PUBKEY")
    if not path:
        raise CliError(EXIT_USAGE, "no public key: pass --pubkey or set OEI_PUBKEY")
    try:
        return load_public_key(path)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read public key {path}: {e.strerror or e}") from None
    except ValueError as e:
        raise CliError(EXIT_VALIDATION, f"bad public key file {path}: {e}") from None


def gather_inputs(args, entry) -> list[int]:
    if args.inputs and args.input:
        raise CliError(EXIT_USAGE, "--inputs and --input are mutually exclusive")
    if args.inputs:
        data = read_json(args.inputs)
        if isinstance(data, dict):
            data = data.get("inputs", [])
        if not isinstance(data, list) or not all(isinstance(v, int) for v in data):
            raise CliError(EXIT_VALIDATION, f"{args.inputs}: expected a list of integers")
        return data
    if args.input:
        return list(args.input)
    return list(entry.inputs) if entry else []


def gather_interrupts(args, entry) -> list[InterruptEvent]:
    if not getattr(args, "interrupts", None):
        return list(entry.interrupts) if entry else []
    data = read_json(args.interrupts)
    if isinstance(data, dict):
        data = data.get("interrupts", [])
    try:
        return [InterruptEvent.from_json(e) for e in data]
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(EXIT_VALIDATION, f"{args.interrupts}: bad interrupt schedule: {e}") from None


def gather_faults(args, program: Program):
    if not getattr(args, "faults", None):
        return []
    data = read_json(args.faults)
    if isinstance(data, dict):
        data = data.get("faults", [])
    try:
        return corpus.build_faults(program, data)
    except (FaultError, KeyError, TypeError, ValueError) as e:
        raise CliError(EXIT_VALIDATION, f"{args.faults}: bad fault descriptor: {e}") from None


def resolve_op(args, entry, op_ids=()) -> int:
    """--op, else the corpus entry's operation, else the only one defined."""
    if args.op is not None:
        return args.op
    if entry is not None:
        return entry.operation
    op_ids = sorted(set(op_ids))
    if len(op_ids) == 1:
        return op_ids[0]
    raise CliError(EXIT_USAGE, f"--op is required: the program defines operations {op_ids}")


def program_ops(program) -> list[int]:
    return [i.op_id for *_, i in program.instructions() if isinstance(i, AttestBegin)]


def bundle_ops(bundle: dict) -> list[int]:
    return [o["id"] for o in bundle.get("operations", ())]


def parse_nonce(text: str | None) -> bytes:
    if text is None:
        return os.urandom(16)
    try:
        raw = bytes.fromhex(text)
    except ValueError:
        raise CliError(EXIT_USAGE, "--nonce must be hex") from None
    if len(raw) != 16:
        raise CliError(EXIT_USAGE, "--nonce must be 16 bytes (32 hex digits)")
    return raw


def encode_blob_file(nonce: bytes, blobs) -> bytes:
    return BLOB_MAGIC + struct.pack(">B", BLOB_VERSION) + nonce + encode_blob_list(blobs)


def decode_blob_file(data: bytes):
    """(nonce, blobs); DecodeError/FramingError for a damaged blob list."""
    head = len(BLOB_MAGIC) + 1 + 16
    if len(data) < head or not data.startswith(BLOB_MAGIC):
        raise CliError(EXIT_IO, "not a blob file (bad magic)")
    if data[len(BLOB_MAGIC)] != BLOB_VERSION:
        raise CliError(EXIT_IO, f"unsupported blob file version {data[len(BLOB_MAGIC)]}")
    nonce = data[len(BLOB_MAGIC) + 1:head]
    return nonce, decode_blob_list(data[head:])


# -- subcommands -------------------------------------------------------------------------

def cmd_check(args) -> int:
    program, _ = load_program(args.program)
    a = analyze_or_fail(program, args.program)
    print(f"ok: {len(program.functions)} functions, "
          f"{sum(len(f.blocks) for f in program.functions)} blocks, "
          f"{len(a.scopes)} operation(s)")
    for s in a.scopes:
        print(f"  operation {s.op_id}: {s.function} {s.entry:#x}..{s.exit:#x}, "
              f"functions {', '.join(sorted(s.functions))}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    program, _ = load_program(args.program)
    a = analyze_or_fail(program, args.program)
    write_out(args.output, bundle_json(a) + "\n")
    return EXIT_OK


def cmd_attest(args) -> int:
    program, entry = load_program(args.program)
    a = analyze_or_fail(program, args.program)
    key = load_key(args.key)
    nonce = parse_nonce(args.nonce)
    op = None if args.all_ops else resolve_op(args, entry, program_ops(program))
    result = run(instrument_analysis(a), op, gather_inputs(args, entry), nonce=nonce, key=key,
                 faults=gather_faults(args, program), interrupts=gather_interrupts(args, entry),
                 capacity=args.capacity, hash_returns=not args.baseline_trace)
    if args.output in (None, "-") and sys.stdout.isatty():
        raise CliError(EXIT_USAGE, "refusing to write binary blobs to a terminal; use -o FILE")
    write_out(args.output, encode_blob_file(nonce, result.blobs))
    msg = f"{len(result.blobs)} blob(s), {len(result.executions)} execution(s)"
    if result.fault:
        msg += f"; runtime fault: {result.fault}"
    print(msg, file=sys.stderr)
    return EXIT_OK


def _load_bundle(args):
    if args.bundle:
        return read_json(args.bundle), None
    if not args.program:
        raise CliError(EXIT_USAGE, "one of --bundle or --program is required")
    program, entry = load_program(args.program)
    return export_bundle(analyze_or_fail(program, args.program)), entry


def _report(report, as_json: bool) -> int:
    print(report.dumps() if as_json else report.to_text())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_verify(args) -> int:
    bundle, entry = _load_bundle(args)
    op = resolve_op(args, entry, bundle_ops(bundle))
    try:
        data = Path(args.blobs).read_bytes()
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read {args.blobs}: {e.strerror or e}") from None
    pub = load_pubkey(args.pubkey)
    try:
        file_nonce, blobs = decode_blob_file(data)
    except (DecodeError, FramingError) as e:
        print(f"operation {op}: FAIL\nfailure: DECODE\ndetail: {e}")
        return EXIT_VERIFY
    nonce = parse_nonce(args.nonce) if args.nonce else file_nonce
    try:
        report = verify(blobs, bundle, op, nonce, pub)
    except (BundleError, KeyError) as e:
        raise CliError(EXIT_VALIDATION, f"bad CFG bundle: {e}") from None
    return _report(report, args.json)


def cmd_serve(args) -> int:
    program, _ = load_program(args.program)
    a = analyze_or_fail(program, args.program)
    key = load_key(args.key)
    faults = gather_faults(args, program)
    try:
        parse_endpoint(args.endpoint)
    except ValueError as e:
        raise CliError(EXIT_USAGE, str(e)) from None
    try:
        serve(instrument_analysis(a), key, args.endpoint, faults=faults, capacity=args.capacity,
              max_frame=args.max_frame)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot serve on {args.endpoint}: {e.strerror or e}") from None
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_request(args) -> int:
    bundle, entry = _load_bundle(args)
    op = resolve_op(args, entry, bundle_ops(bundle))
    pub = load_pubkey(args.pubkey)
    try:
        report = request_attestation(args.endpoint, op, gather_inputs(args, entry), pub, bundle,
                                     interrupts=gather_interrupts(args, entry),
                                     timeout=args.timeout)
    except ValueError as e:
        if isinstance(e, DecodeError):
            print(f"operation {op}: FAIL\nfailure: DECODE\ndetail: {e}")
            return EXIT_VERIFY
        raise CliError(EXIT_USAGE, str(e)) from None
    except ProtocolError as e:
        print(f"operation {op}: FAIL\nfailure: TRANSPORT\ndetail: {e}")
        return EXIT_VERIFY
    except (socket.timeout, OSError) as e:
        raise CliError(EXIT_IO, f"cannot reach {args.endpoint}: {e}") from None
    return _report(report, args.json)


def cmd_attack(args) -> int:
    entries = None
    if args.programs:
        bad = [n for n in args.programs if n not in corpus.NAMES]
        if bad:
            raise CliError(EXIT_USAGE, f"unknown corpus program(s): {', '.join(bad)}")
        entries = [corpus.load(n) for n in args.programs]
    outcomes = run_suite(entries=entries)
    for o in outcomes:
        print(o.line())
    missed = [o for o in outcomes if not o.detected]
    print(f"{len(outcomes) - len(missed)}/{len(outcomes)} scenarios detected")
    return EXIT_OK if not missed else EXIT_VERIFY


COMPARE_FIELDS = ("program", "operation", "critical_variables", "data_sites",
                  "address_sites", "site_ratio", "hashed_bytes", "baseline_bytes",
                  "size_ratio", "returns")


def compare_row(name: str, program: Program, op: int, inputs, interrupts=()) -> dict:
    a = analyze_or_fail(program, name)
    data = len(a.sites.data)
    addr = count_address_based_sites(program)
    _, _, size = run_benign_pair(instrument_analysis(a), op, inputs, interrupts=interrupts)
    return {
        "program": name, "operation": op,
        "critical_variables": len(a.critical.variables),
        "data_sites": data, "address_sites": addr,
        "site_ratio": f"{data / addr:.4f}" if addr else "",
        "hashed_bytes": size.hashed, "baseline_bytes": size.baseline,
        "size_ratio": f"{size.ratio:.4f}", "returns": size.returns,
    }


def cmd_compare(args) -> int:
    rows = []
    if args.all:
        for e in corpus.load_all():
            rows.append(compare_row(e.name, e.program, e.operation, e.inputs, e.interrupts))
    elif args.program:
        program, entry = load_program(args.program)
        rows.append(compare_row(entry.name if entry else Path(args.program).stem, program,
                                resolve_op(args, entry, program_ops(program)),
                                gather_inputs(args, entry),
                                gather_interrupts(args, entry)))
    else:
        raise CliError(EXIT_USAGE, "give a program or --all")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COMPARE_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    write_out(args.output, buf.getvalue())
    return EXIT_OK


def cmd_keygen(args) -> int:
    key = DeviceKey.generate()
    priv = Path(args.output)
    pub = Path(args.pubout or str(priv) + ".pub")
    try:
        key.save(priv)
        os.chmod(priv, 0o600)
        save_public_key(key.public_bytes, pub)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write key: {e.strerror or e}") from None
    print(f"private key: {priv}\npublic key:  {pub}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="oeiattest",
        description="Operation-execution attestation pipeline over MiniIR programs.",
        epilog="exit codes: 0 ok, 2 usage, 3 validation, 4 verification failed, 5 I/O. "
               "Environment: OEI_KEY, OEI_PUBKEY, OEI_MAX_FRAME.")
    p.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def program_arg(sp, required=True):
        if required:
            sp.add_argument("program", help=".mir file or corpus:NAME")
        else:
            sp.add_argument("--program", help=".mir file or corpus:NAME")

    def run_args(sp):
        sp.add_argument("--op", type=int, help="operation id (default: corpus entry's)")
        sp.add_argument("--inputs", metavar="FILE", help="JSON list of input words")
        sp.add_argument("--input", type=int, action="append", metavar="N",
                        help="one input word (repeatable)")
        sp.add_argument("--interrupts", metavar="FILE", help="JSON interrupt schedule")

    sp = sub.add_parser("check", help="parse, validate and check operation scopes")
    program_arg(sp)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("analyze", help="emit the CFG bundle as JSON")
    program_arg(sp)
    sp.add_argument("-o", "--output", help="output file (default stdout)")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("attest", help="run the program locally and write a blob file")
    program_arg(sp)
    run_args(sp)
    sp.add_argument("--faults", metavar="FILE", help="JSON fault list")
    sp.add_argument("--key", help="device key file (or OEI_KEY)")
    sp.add_argument("--nonce", help="16-byte nonce in hex (default random)")
    sp.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY,
                    help="trace buffer size in bytes before a segment is flushed")
    sp.add_argument("--baseline-trace", action="store_true",
                    help="log return addresses in S_addr instead of hashing them")
    sp.add_argument("--all-ops", action="store_true", help="measure every operation executed")
    sp.add_argument("-o", "--output", help="blob file to write")
    sp.set_defaults(func=cmd_attest)

    sp = sub.add_parser("verify", help="verify a blob file; exit 0 iff it passes")
    sp.add_argument("blobs", help="blob file written by attest")
    program_arg(sp, required=False)
    sp.add_argument("--bundle", help="CFG bundle JSON written by analyze")
    sp.add_argument("--op", type=int)
    sp.add_argument("--pubkey", help="public key file (or OEI_PUBKEY)")
    sp.add_argument("--nonce", help="expected nonce in hex (default: the file's)")
    sp.add_argument("--json", action="store_true", help="machine-readable report")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("serve", help="run the prover service")
    program_arg(sp)
    sp.add_argument("--endpoint", default="127.0.0.1:7700", help="host:port to listen on")
    sp.add_argument("--key", help="device key file (or OEI_KEY)")
    sp.add_argument("--faults", metavar="FILE", help="JSON fault list applied to every run")
    sp.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY)
    sp.add_argument("--max-frame", type=int, default=None,
                    help=f"largest frame in bytes (default OEI_MAX_FRAME or {max_frame_default()})")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("request", help="challenge a prover service and verify its answer")
    sp.add_argument("endpoint", help="host:port")
    program_arg(sp, required=False)
    sp.add_argument("--bundle", help="CFG bundle JSON written by analyze")
    run_args(sp)
    sp.add_argument("--pubkey", help="public key file (or OEI_PUBKEY)")
    sp.add_argument("--timeout", type=float, default=10.0)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_request)

    sp = sub.add_parser("attack", help="replay the bundled attack scenarios")
    sp.add_argument("programs", nargs="*", help=f"subset of {', '.join(corpus.NAMES)}")
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("compare", help="CSV of instrumentation-site and evidence-size ratios")
    sp.add_argument("program", nargs="?", help=".mir file or corpus:NAME")
    sp.add_argument("--all", action="store_true", help="every bundled program")
    run_args(sp)
    sp.add_argument("-o", "--output", help="CSV file (default stdout)")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("keygen", help="create a device key pair")
    sp.add_argument("-o", "--output", required=True, help="private key file")
    sp.add_argument("--pubout", help="public key file (default OUTPUT.pub)")
    sp.set_defaults(func=cmd_keygen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except BrokenPipeError:
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
