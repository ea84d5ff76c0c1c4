"""Command-line interface: ``stdcodec {compress,decompress,eval,inspect}``.

Exit codes
----------
0  success
2  bad configuration or usage
3  numerical failure (solver divergence, non-finite values)
4  I/O or file-format error (unreadable input, bad ``.ct3``)
5  blob integrity error (bad magic, unsupported version, checksum, truncation)
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from . import blob as stz
from .evaluation import Scenario, build_manifest, run_scenario, write_reports
from .pipeline import CodecConfig, compress, decompress
from .tensor import ContractError, FormatError, NumericError, dumps_ct3, read_ct3

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
EXIT_BLOB = 5


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, pairs) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as JSON when possible."""
    config = json.loads(json.dumps(config))
    for pair in pairs or []:
        if "=" not in pair:
            raise CliError(EXIT_CONFIG, f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        node = config
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise CliError(EXIT_CONFIG, f"cannot set {key}: {p} is not an object")
        node[parts[-1]] = _parse_value(value)
    return config


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path} is not valid JSON: {exc}") from exc


def _atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_input_tensor(path):
    try:
        return read_ct3(path)
    except FormatError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc


def cmd_compress(args) -> int:
    raw = apply_overrides(_load_json(args.config), args.set)
    try:
        cfg = CodecConfig.from_dict(raw)
    except (ContractError, TypeError, KeyError) as exc:
        raise CliError(EXIT_CONFIG, f"bad config: {exc}") from exc
    v = _read_input_tensor(args.input)
    t0 = time.perf_counter()
    try:
        res = compress(v, cfg)
    except ContractError as exc:
        raise CliError(EXIT_CONFIG, f"bad config for this input: {exc}") from exc
    except NumericError as exc:
        raise CliError(EXIT_NUMERIC, f"numerical failure: {exc}") from exc
    seconds = time.perf_counter() - t0
    try:
        _atomic_write(args.output, res.blob)
        if args.trace and res.trace is not None:
            Path(args.trace).write_text(res.trace.to_csv())
        if args.manifest:
            outputs = [args.output] + ([args.trace] if args.trace else [])
            man = build_manifest(cfg.to_dict(), cfg.std.seed, [args.input], outputs,
                                 {"compress_seconds": seconds}, res.summary())
            Path(args.manifest).write_text(json.dumps(man, indent=1))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write output: {exc}") from exc
    print(f"CR={res.cr:.6f} RE={res.rel_err:.3e} iters={res.iterations} "
          f"bits={8 * len(res.blob)} time={seconds:.2f}s", file=sys.stderr)
    return EXIT_OK


def _read_blob(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc


def cmd_decompress(args) -> int:
    data = _read_blob(args.input)
    try:
        v = decompress(data)
    except stz.BlobError as exc:
        raise CliError(EXIT_BLOB, f"{exc.code}: {exc}") from exc
    except ContractError as exc:
        raise CliError(EXIT_BLOB, f"corrupt payload: {exc}") from exc
    except EOFError as exc:
        raise CliError(EXIT_BLOB, f"truncated: {exc}") from exc
    try:
        _atomic_write(args.output, dumps_ct3(v))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write output: {exc}") from exc
    print(f"decoded {'x'.join(map(str, v.shape))} tensor", file=sys.stderr)
    return EXIT_OK


def cmd_inspect(args) -> int:
    data = _read_blob(args.input)
    try:
        b = stz.unpack(data)
    except stz.BlobError as exc:
        raise CliError(EXIT_BLOB, f"{exc.code}: {exc}") from exc
    h = b.header
    info = {
        "version": stz.VERSION, "method": h.method, "dft": h.dft, "dims": list(h.dims),
        "ranks": list(h.ranks), "s1": h.s1, "s2": h.s2, "bits": h.bits,
        "angle_bits": h.angle_bits, "rle_target": h.rle_target,
        "bit_size": b.bit_size(), "header_bits": b.header_bits(),
        "sections": [{"tag": s.tag, "bits": s.bit_length, "bytes": len(s.data)} for s in b.sections],
    }
    print(json.dumps(info, indent=1))
    return EXIT_OK


def cmd_eval(args) -> int:
    raw = apply_overrides(_load_json(args.scenario), args.set)
    try:
        sc = Scenario.from_dict(raw)
    except (ContractError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"bad scenario: {exc}") from exc
    out = Path(args.out)
    t0 = time.perf_counter()
    rows = run_scenario(sc, jobs=args.jobs, trace_dir=out / "traces" if args.traces else None)
    try:
        paths = write_reports(rows, out, sc, time.perf_counter() - t0)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write reports: {exc}") from exc
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} rows ({failed} failed) -> {paths[0]}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stdcodec", description=__doc__.split("\n")[0],
                                epilog="exit codes: 0 ok, 2 config, 3 numeric, 4 I/O/format, 5 blob integrity")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", help="compress a .ct3 tensor into a .stz blob")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--config", help="JSON codec config (method, std, quant, dft)")
    c.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. std.ranks=[2,6,8] or std.s2=0")
    c.add_argument("--trace", help="write the solver descent trace as CSV")
    c.add_argument("--manifest", help="write a run manifest as JSON")
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", help="decode a .stz blob into a .ct3 tensor")
    d.add_argument("input")
    d.add_argument("output")
    d.set_defaults(func=cmd_decompress)

    e = sub.add_parser("eval", help="run an evaluation scenario and write reports")
    e.add_argument("scenario")
    e.add_argument("--out", default="eval_out")
    e.add_argument("--jobs", type=int, default=1, help="worker processes (one seed per task)")
    e.add_argument("--set", action="append", metavar="KEY=VALUE")
    e.add_argument("--traces", action="store_true", help="write per-run descent traces")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="print a blob's header and section table")
    i.add_argument("input")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
