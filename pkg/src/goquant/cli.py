"""Command line interface.

Subcommands: quantize, eval, bench, inspect, verify.  Exit codes: 0 on
success, 1 for usage errors, 2 for data or file-format errors, 3 for
numeric failures (overflow, failed verification).
"""

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import fileformat, oracle
from .errors import DataError, FormatError, GoQuantError, NumericError
from .kernel import (OpCounters, quantize_activations, report_counters,
                     shiftadd_gemm)
from .precondition import STAT_KINDS, collect_stats
from .quantizer import (QuantConfig, dequantize, error_report,
                        quantize_tensor, storage_accounting)

MODES = ("geo", "ref")
TOPOLOGIES = ("pot", "linear")
NORM_SCOPES = ("channel", "macroblock")

# Defaults shared by the flag parser and the config-file loader.  A flag
# given on the command line wins over the config file, which wins over
# these values.
DEFAULTS = {
    "bits": 3,
    "topology": "pot",
    "mode": "geo",
    "k": 2,
    "group": 128,
    "micro": 32,
    "alpha": 0.5,
    "lam": 1e-4,
    "scale_bits": 8,
    "act_bits": 8,
    "stat_kind": "maxabs",
    "norm_scope": "channel",
}


class UsageError(GoQuantError):
    """Bad command line arguments."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract here is 1.
    def error(self, message):
        raise UsageError(message)


def _thread_count():
    raw = os.environ.get("GOQUANT_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def _load_config_file(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in DEFAULTS:
            raise DataError(f"{path}:{lineno}: unknown key {key!r}")
        caster = type(DEFAULTS[key])
        try:
            values[key] = caster(val.strip())
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad value for {key}") from exc
    return values


def _merge_options(args):
    merged = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        merged.update(_load_config_file(config_path))
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _build_config(opts):
    return QuantConfig(
        bits=opts["bits"], topology=opts["topology"], mode=opts["mode"],
        k=opts["k"], macro=opts["group"], micro=opts["micro"],
        alpha=opts["alpha"], lam=opts["lam"],
        bits_scale=opts["scale_bits"], bits_act=opts["act_bits"],
        norm_scope=opts["norm_scope"])


def _add_config_flags(sub):
    sub.add_argument("--bits", type=int, choices=(3, 4))
    sub.add_argument("--topology", choices=TOPOLOGIES)
    sub.add_argument("--mode", choices=MODES)
    sub.add_argument("--k", type=int, choices=(1, 2))
    sub.add_argument("--group", type=int, help="macro block width")
    sub.add_argument("--micro", type=int, help="micro block width")
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--lambda", dest="lam", type=float)
    sub.add_argument("--scale-bits", dest="scale_bits", type=int)
    sub.add_argument("--act-bits", dest="act_bits", type=int)
    sub.add_argument("--stat-kind", dest="stat_kind", choices=STAT_KINDS)
    sub.add_argument("--norm-scope", dest="norm_scope", choices=NORM_SCOPES)
    sub.add_argument("--config", help="key=value config file")


def _emit(porcelain, human, pairs):
    if porcelain:
        for key, val in pairs:
            if isinstance(val, float):
                print(f"{key}={val:.6g}")
            else:
                print(f"{key}={val}")
    else:
        print(human)


def cmd_quantize(args):
    opts = _merge_options(args)
    cfg = _build_config(opts)
    weights = fileformat.load_tensor_file(args.weights)
    if not weights:
        raise DataError(f"no tensors in {args.weights}")

    calib = {}
    if args.calib:
        calib = fileformat.load_tensor_file(args.calib)
    elif cfg.mode == "ref":
        raise UsageError("--mode ref requires --calib activations")

    names = sorted(weights)
    stats_by_name = {}
    for name in names:
        if weights[name].ndim != 2:
            raise DataError(f"tensor {name!r} is not 2-D")
        if name in calib:
            stats_by_name[name] = collect_stats(
                [calib[name]], kind=opts["stat_kind"])
        elif cfg.mode == "ref":
            raise DataError(f"no calibration tensor named {name!r}")
        else:
            stats_by_name[name] = None

    def work(name):
        t0 = time.perf_counter()
        qt = quantize_tensor(weights[name], stats_by_name[name], cfg)
        rep = error_report(weights[name], qt)
        return name, qt, rep, time.perf_counter() - t0

    t_start = time.perf_counter()
    threads = min(_thread_count(), len(names))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(work, names))
    else:
        done = [work(n) for n in names]

    model = fileformat.ModelFile(tensors={})
    for name, qt, rep, seconds in done:
        model.tensors[name] = qt
        d_out, d_in = qt.d_out, qt.d_in
        _emit(args.porcelain,
              f"tensor {name}: {d_out}x{d_in} {cfg.topology}{cfg.bits} "
              f"{cfg.mode} k={cfg.k} frobenius_rel={rep['frobenius_rel']:.6f} "
              f"mean_cosine={rep['mean_cosine']:.6f} "
              f"time={seconds:.2f}s",
              [(f"tensor.{name}.frobenius_rel", rep["frobenius_rel"]),
               (f"tensor.{name}.mean_cosine", rep["mean_cosine"]),
               (f"tensor.{name}.seconds", seconds)])

    fileformat.save_file(model, args.out)
    n_bytes = os.path.getsize(args.out)
    n_weights = sum(qt.d_out * qt.d_in for qt in model.tensors.values())
    bits_per_weight = 8.0 * n_bytes / n_weights
    total = time.perf_counter() - t_start
    _emit(args.porcelain,
          f"wrote {args.out} ({n_bytes} bytes, "
          f"{bits_per_weight:.2f} bits/weight)\ntotal time {total:.2f}s",
          [("file.bytes", n_bytes),
           ("file.bits_per_weight", bits_per_weight),
           ("total.seconds", total)])
    return 0


def _matched_inputs(model, inputs_path):
    inputs = fileformat.load_tensor_file(inputs_path)
    matched = {}
    for name in sorted(model.tensors):
        if name not in inputs:
            raise DataError(f"no input tensor named {name!r}")
        X = np.atleast_2d(np.asarray(inputs[name], dtype=np.float64))
        matched[name] = X
    return matched


def cmd_eval(args):
    model = fileformat.load_file(args.model)
    weights = fileformat.load_tensor_file(args.weights)
    inputs = _matched_inputs(model, args.inputs)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    known = ("mse", "cosine", "outgap")
    for m in metrics:
        if m not in known:
            raise UsageError(f"unknown metric {m!r}; choose from {known}")

    for name in sorted(model.tensors):
        qt = model.tensors[name]
        if name not in weights:
            raise DataError(f"no weight tensor named {name!r}")
        W = np.asarray(weights[name], dtype=np.float64)
        X = inputs[name]
        if X.shape[1] != qt.d_in:
            raise DataError(
                f"input {name!r} has {X.shape[1]} features, expected "
                f"{qt.d_in}")
        want = X @ W.T
        qa = quantize_activations(X, qt.s_vec, b_a=qt.config.bits_act)
        got = shiftadd_gemm(qa, qt)

        values = []
        if "mse" in metrics:
            values.append(("mse", float(np.mean((got - want) ** 2))))
        if "cosine" in metrics:
            num = (got * want).sum(axis=1)
            den = (np.linalg.norm(got, axis=1)
                   * np.linalg.norm(want, axis=1))
            keep = den > 0
            cos = float(np.mean(num[keep] / den[keep])) if keep.any() else 1.0
            values.append(("cosine", cos))
        if "outgap" in metrics:
            den = np.linalg.norm(want)
            gap = float(np.linalg.norm(got - want) / den) if den else 0.0
            values.append(("outgap", gap))
        human = " ".join(f"{k}={v:.6g}" for k, v in values)
        _emit(args.porcelain, f"tensor {name}: {human}",
              [(f"tensor.{name}.{k}", v) for k, v in values])
    return 0


def cmd_bench(args):
    model = fileformat.load_file(args.model)
    inputs = _matched_inputs(model, args.inputs)
    totals = OpCounters()
    t_start = time.perf_counter()
    for name in sorted(model.tensors):
        qt = model.tensors[name]
        X = inputs[name]
        if X.shape[1] != qt.d_in:
            raise DataError(
                f"input {name!r} has {X.shape[1]} features, expected "
                f"{qt.d_in}")
        counters = OpCounters()
        t0 = time.perf_counter()
        qa = quantize_activations(X, qt.s_vec, b_a=qt.config.bits_act)
        shiftadd_gemm(qa, qt, counters=counters)
        seconds = time.perf_counter() - t0
        totals.merge(counters)
        rep = report_counters(counters, X.shape[0], qt.d_out, qt.d_in,
                              qt.config)
        pairs = sorted(rep.items())
        human = " ".join(f"{k}={v:.6g}" if isinstance(v, float)
                         else f"{k}={v}" for k, v in pairs)
        _emit(args.porcelain, f"tensor {name}: {human}\n  time={seconds:.3f}s",
              [(f"tensor.{name}.{k}", v) for k, v in pairs]
              + [(f"tensor.{name}.seconds", seconds)])
    total = time.perf_counter() - t_start
    _emit(args.porcelain,
          f"totals: shifts={totals.shifts} adds={totals.adds} "
          f"int_muls={totals.int_muls} skipped_zeros={totals.skipped_zeros}\n"
          f"total time {total:.2f}s",
          [("total.shifts", totals.shifts), ("total.adds", totals.adds),
           ("total.int_muls", totals.int_muls),
           ("total.skipped_zeros", totals.skipped_zeros),
           ("total.seconds", total)])
    return 0


def cmd_inspect(args):
    model = fileformat.load_file(args.model)
    n_bytes = os.path.getsize(args.model)
    expected = fileformat.expected_file_size(model)
    _emit(args.porcelain,
          f"model {args.model}: version={model.version} "
          f"tensors={len(model.tensors)} bytes={n_bytes} "
          f"expected_bytes={expected}",
          [("model.version", model.version),
           ("model.tensors", len(model.tensors)),
           ("model.bytes", n_bytes),
           ("model.expected_bytes", expected)])

    for name in sorted(model.tensors):
        qt = model.tensors[name]
        cfg = qt.config
        acct = storage_accounting(qt.d_out, qt.d_in, cfg)
        lattice = f"{cfg.topology}{cfg.bits}"
        hist = {}
        if qt.strides is not None:
            vals, counts = np.unique(qt.strides, return_counts=True)
            hist = {int(v): int(c) for v, c in zip(vals, counts)}
        hist_text = " ".join(f"{k}:{v}" for k, v in sorted(hist.items()))
        _emit(args.porcelain,
              f"tensor {name}: {qt.d_out}x{qt.d_in} lattice={lattice} "
              f"mode={cfg.mode} k={cfg.k} macro={cfg.macro} "
              f"micro={cfg.micro} "
              f"bits_per_weight={acct['bits_per_weight']:.3f}\n"
              f"  strides: {hist_text or '(none)'}",
              [(f"tensor.{name}.d_out", qt.d_out),
               (f"tensor.{name}.d_in", qt.d_in),
               (f"tensor.{name}.lattice", lattice),
               (f"tensor.{name}.mode", cfg.mode),
               (f"tensor.{name}.k", cfg.k),
               (f"tensor.{name}.macro", cfg.macro),
               (f"tensor.{name}.micro", cfg.micro),
               (f"tensor.{name}.bits_per_weight", acct["bits_per_weight"])]
              + [(f"tensor.{name}.stride.{k}", v)
                 for k, v in sorted(hist.items())])
    return 0


def cmd_verify(args):
    if args.g is not None:
        if args.g < 2 or args.g % 2:
            raise UsageError("--g must be an even block size >= 2")
        if args.g > 16 and not args.big:
            raise UsageError(
                f"exhaustive search at G={args.g} needs --big "
                f"(2^{args.g // 2} sign patterns per stride)")
    results = oracle.run_verification(
        big=args.big, inject_fault=args.inject_fault, exhaustive_g=args.g)
    all_ok = True
    for name, passed, detail in results:
        all_ok = all_ok and passed
        status = "PASS" if passed else "FAIL"
        _emit(args.porcelain, f"{status} {name} ({detail})",
              [(f"check.{name}", "pass" if passed else "fail"),
               (f"check.{name}.detail", detail)])
    _emit(args.porcelain,
          "verification OK" if all_ok else "verification FAILED",
          [("verified", int(all_ok))])
    return 0 if all_ok else 3


def build_parser():
    parser = _Parser(prog="goquant",
                     description="power-of-two dual-basis quantization")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("quantize", help="quantize a weight container")
    p.add_argument("--weights", required=True, help="float tensor container")
    p.add_argument("--calib", help="calibration activation container")
    p.add_argument("--out", required=True, help="output model path")
    _add_config_flags(p)
    p.add_argument("--porcelain", action="store_true")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="compare quantized outputs to float")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--metrics", default="mse,cosine,outgap")
    p.add_argument("--porcelain", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="run the kernel and report op counts")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--porcelain", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="describe a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--porcelain", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("verify", help="run the self-check oracles")
    p.add_argument("--big", action="store_true",
                   help="include the G=32 exhaustive sign search")
    p.add_argument("--g", type=int, default=None,
                   help="exhaustive sign search at this block size")
    p.add_argument("--inject-fault", dest="inject_fault",
                   choices=("sign_flip",), help="test hook: corrupt one "
                   "check and prove the oracle catches it")
    p.add_argument("--porcelain", action="store_true")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"goquant: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError) as exc:
        print(f"goquant: error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"goquant: numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"goquant: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
