"""Command-line entry point: ``desloc run|cost|compare``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from desloc import costmodel
from desloc.baselines import parse_method, with_policies
from desloc.config import ConfigError, Experiment, load, with_record_every
from desloc.metrics import COLUMNS, MetricsRow
from desloc.sim import DivergenceError, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows, prefix: tuple[str, ...] = (), keys: list[tuple] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(prefix + COLUMNS)
    for i, row in enumerate(rows):
        lead = keys[i] if keys else ()
        w.writerow([*lead, *(_cell(v) for v in row.as_tuple())])
    return buf.getvalue()


def rows_to_json(rows, extra: list[dict] | None = None) -> str:
    out = []
    for i, row in enumerate(rows):
        rec = dict(extra[i]) if extra else {}
        rec.update(zip(COLUMNS, row.as_tuple()))
        out.append(rec)
    return json.dumps(out, indent=1) + "\n"


def rows_from_json(text: str) -> list[MetricsRow]:
    return [MetricsRow(**{k: rec[k] for k in COLUMNS}) for rec in json.loads(text)]


def _emit(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _apply_overrides(exp: Experiment, args) -> Experiment:
    if args.record_every is not None:
        exp = with_record_every(exp, args.record_every)
    if args.threads is not None:
        exp.sim = replace(exp.sim, threads=args.threads)
    if args.format is not None:
        exp.output.format = args.format
    if args.out is not None:
        exp.output.path = args.out
    return exp


def _summary(label: str, stream, diverged: str | None = None) -> str:
    status = f"diverged ({diverged})" if diverged else "ok"
    dist = stream.final_dist if stream is not None else None
    payload = stream.payload_units if stream is not None else 0
    return f"{label}: final_dist_to_opt={_cell(dist) or 'n/a'} cum_payload_units={payload} status={status}"


def cmd_run(args) -> int:
    exp = _apply_overrides(load(args.config), args)
    code = EXIT_OK
    try:
        stream = run(exp.sim)
        diverged = None
    except DivergenceError as e:
        stream, diverged, code = e.stream, str(e), EXIT_DIVERGED
    rows = stream.rows if stream is not None else []
    text = rows_to_json(rows) if exp.output.format == "json" else rows_to_csv(rows)
    _emit(text, exp.output.path)
    print(_summary("run", stream, diverged), file=sys.stderr)
    return code


def cmd_compare(args) -> int:
    exp = _apply_overrides(load(args.config), args)
    all_rows, keys, ranking = [], [], []
    code = EXIT_OK
    for text in args.methods:
        try:
            label, policies = parse_method(text)
        except ValueError as e:
            raise ConfigError(str(e), "--methods") from None
        try:
            stream = run(with_policies(exp.sim, policies))
            diverged = None
        except DivergenceError as e:
            stream, diverged, code = e.stream, str(e), EXIT_DIVERGED
        rows = stream.rows if stream is not None else []
        all_rows += rows
        keys += [(label,)] * len(rows)
        dist = None if diverged or stream is None else stream.final_dist
        ranking.append((label, dist))
        print(_summary(label, stream, diverged), file=sys.stderr)
    if exp.output.format == "json":
        text = rows_to_json(all_rows, [{"method": k[0]} for k in keys])
    else:
        text = rows_to_csv(all_rows, ("method",), keys)
    _emit(text, exp.output.path)
    print("ranking by final distance to optimum:", file=sys.stderr)
    order = sorted(ranking, key=lambda r: (r[1] is None, r[1] if r[1] is not None else 0.0))
    for i, (label, dist) in enumerate(order, 1):
        print(f"  {i}. {label} {_cell(dist) or 'diverged'}", file=sys.stderr)
    return code


def cost_params(args) -> costmodel.CostModelParams:
    base = {}
    if args.config:
        exp = load(args.config)
        if exp.cost_model is not None:
            base = {k: getattr(exp.cost_model, k) for k in
                    ("d", "D", "M", "S", "MFU", "B", "l", "T", "overlap_alpha")}
    flags = {
        "d": args.d, "D": args.tokens, "M": args.workers, "S": args.peak_flops,
        "MFU": args.mfu, "l": args.latency, "T": args.steps, "overlap_alpha": args.overlap,
    }
    if args.bandwidth_gbps is not None:
        flags["B"] = costmodel.bandwidth_from_gbps(args.bandwidth_gbps, args.bytes_per_param)
    base.update({k: v for k, v in flags.items() if v is not None})
    try:
        return costmodel.preset_1p7b(**base)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e), "cost_model") from None


def cost_methods(kx: int, ku: int, kv: int) -> list[costmodel.Method]:
    return [costmodel.DDP(), costmodel.FedAvg(kx), costmodel.LocalAdam(kx), costmodel.DesLoc(kx, ku, kv)]


def cost_table(methods, p: costmodel.CostModelParams) -> list[dict]:
    ddp = costmodel.DDP()
    rows = []
    for m in methods:
        br = costmodel.t_total(m, p)
        rows.append({
            "method": m.label,
            "events": br.events,
            "t_compute": br.compute,
            "t_comms": br.comms,
            "t_total": br.total,
            "utilization": br.utilization,
            "reduction_vs_ddp": costmodel.comm_reduction(m, ddp, p) if br.comms > 0 else None,
        })
    return rows


def cmd_cost(args) -> int:
    p = cost_params(args)
    kx, ku, kv = args.periods
    methods = cost_methods(kx, ku, kv)
    rows = cost_table(methods, p)
    head = ["method", "events", "t_compute", "t_comms", "t_total", "utilization", "reduction_vs_ddp"]
    print(f"{head[0]:<28}" + "".join(f"{h:>18}" for h in head[1:]))
    for r in rows:
        cells = []
        for h in head[1:]:
            v = r[h]
            cells.append(f"{'n/a':>18}" if v is None else f"{v:>18.6g}")
        print(f"{r['method']:<28}" + "".join(cells))
    if args.sweep_bandwidth:
        lo = p.B / 1e3
        bws = costmodel.log_bandwidths(lo, lo * 1e6, args.sweep_points)
        sweep = costmodel.bandwidth_sweep(methods, p, bws)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(sweep[0]), lineterminator="\n")
        w.writeheader()
        for r in sweep:
            w.writerow({k: _cell(v) for k, v in r.items()})
        _emit(buf.getvalue(), args.out or "bandwidth_sweep.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="desloc", description="Desynced low-communication optimizer simulator.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log drift-bound warnings")
    sub = ap.add_subparsers(dest="command", required=True)

    def sim_flags(sp):
        sp.add_argument("config", help="experiment config (JSON)")
        sp.add_argument("--record-every", type=int, default=None)
        sp.add_argument("--out", default=None, help="output path, '-' for stdout")
        sp.add_argument("--format", choices=("csv", "json"), default=None)
        sp.add_argument("--threads", type=int, default=None)

    sp = sub.add_parser("run", help="run one simulation")
    sim_flags(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="run several sync methods on one config")
    sim_flags(sp)
    sp.add_argument("--methods", nargs="+", required=True,
                    help="e.g. ddp local_adam:192 'des_loc(192,192,692)' favg_plus_opt:192")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("cost", help="wall-clock cost model")
    sp.add_argument("--config", default=None, help="config with a cost_model block")
    sp.add_argument("--d", type=float, default=None, help="parameter count")
    sp.add_argument("--tokens", type=float, default=None, help="training tokens")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--peak-flops", type=float, default=None)
    sp.add_argument("--mfu", type=float, default=None)
    sp.add_argument("--bandwidth-gbps", type=float, default=None)
    sp.add_argument("--bytes-per-param", type=int, default=4)
    sp.add_argument("--latency", type=float, default=None)
    sp.add_argument("--steps", type=float, default=None)
    sp.add_argument("--overlap", type=float, default=None, help="fraction of comms not hidden")
    sp.add_argument("--periods", type=int, nargs=3, default=(256, 768, 1536), metavar=("KX", "KU", "KV"))
    sp.add_argument("--sweep-bandwidth", action="store_true", help="write a 6-decade bandwidth sweep CSV")
    sp.add_argument("--sweep-points", type=int, default=61)
    sp.add_argument("--out", default=None, help="sweep CSV path, '-' for stdout")
    sp.set_defaults(func=cmd_cost)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
