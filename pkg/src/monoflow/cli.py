"""``monoflow {flow|train|table2|losses|verify}`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 convergence-grid mismatch, 5 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    apply_override,
    config_hash,
    default_config,
    init_of,
    load_config,
    target_of,
    train_config,
    validate,
)
from .errors import ConfigError, NotPositiveDefinite, NumericOverflow
from .flow import run_flow
from .gaussian import RNG_ALGORITHM, make_rng
from .generator import DIVERGENCES, EXPECTED_GRID, RATIO_MODELS, TrainConfig, train
from .hfunctions import GENERATOR_LOSSES, HFunction, h_eval, h_prime, parse_h
from .verify import run_suite

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISMATCH, EXIT_VERIFY = 0, 2, 3, 4, 5
COMMANDS = ("flow", "train", "table2", "losses", "verify")
# which config section a bare override key belongs to
SECTION = {"flow": "flow", "train": "train", "table2": "train", "losses": "losses", "verify": "verify"}
THREADS_ENV = "MONOFLOW_THREADS"


class RunContext:
    """Resolved config plus the bookkeeping needed to write metadata."""

    def __init__(self, command: str, doc: dict, out_dir: Path):
        self.command = command
        self.doc = doc
        self.out_dir = out_dir
        self.hash = config_hash(doc)
        self.started = time.perf_counter()
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def wrote(self, path: Path) -> None:
        self.written.append(path)

    def finish(self) -> None:
        """Emit one metadata file beside every output file."""
        duration = time.perf_counter() - self.started
        for path in self.written:
            meta = {
                "artifact": "monoflow",
                "version": __version__,
                "command": self.command,
                "file": path.name,
                "config_hash": self.hash,
                "seed": int(self.doc["seed"]),
                "rng": RNG_ALGORITHM,
                "duration_s": round(duration, 6),
            }
            path.with_name(path.name + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", field=THREADS_ENV) from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", field=THREADS_ENV)
    return n


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_flow(ctx: RunContext) -> int:
    doc = ctx.doc
    fl = doc["flow"]
    h = parse_h(fl["h"])
    trace = run_flow(target_of(doc), init_of(doc), h, fl["ratio_source"], float(fl["alpha"]), int(fl["steps"]),
                     int(fl["particles"]), make_rng(int(doc["seed"])), record_every=int(fl["record_every"]),
                     u_max=fl.get("u_max"))
    path = ctx.path("flow_trace.csv")
    trace.to_csv(path)
    ctx.wrote(path)
    print(f"flow h={h.name} steps={fl['steps']}: final KL {trace.kl[-1]:.6g} -> {path}")
    return EXIT_OK


def _train_summary(report) -> dict:
    mu_d, cov_d = report.tail_distances() if report.mu_dist else (float("nan"), float("nan"))
    cfg = report.config
    return {
        "divergence": cfg.divergence,
        "ratio_model": cfg.ratio_model,
        "converged": bool(report.converged),
        "status": report.status,
        "mu": [float(v) for v in report.mu],
        "cov": [[float(v) for v in row] for row in report.cov],
        "tail_mu_dist": mu_d,
        "tail_cov_dist": cov_d,
        "steps_completed": len(report.loss),
    }


def cmd_train(ctx: RunContext) -> int:
    report = train(train_config(ctx.doc))
    trace_path = ctx.path("train_trace.csv")
    report.to_csv(trace_path)
    ctx.wrote(trace_path)
    summary = _train_summary(report)
    result_path = ctx.path("train_result.json")
    result_path.write_text(json.dumps(summary, indent=2) + "\n")
    ctx.wrote(result_path)
    print(f"train {summary['divergence']}/{summary['ratio_model']}: converged={summary['converged']} "
          f"tail |mu-mu0|={summary['tail_mu_dist']:.4g} |cov-cov0|_F={summary['tail_cov_dist']:.4g}")
    if report.status != "ok":
        print(f"numeric failure: {report.status}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _run_cell(cfg: TrainConfig) -> dict:
    return _train_summary(train(cfg))


def table2_cells(doc: dict) -> list[TrainConfig]:
    return [train_config(doc, divergence=div, ratio_model=model) for div in DIVERGENCES for model in RATIO_MODELS]


def run_table2(doc: dict, workers: int = 1) -> list[dict]:
    cells = table2_cells(doc)
    if workers <= 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
        return list(pool.map(_run_cell, cells))


def table2_mismatches(results: list[dict]) -> list[str]:
    out = []
    for r in results:
        want = EXPECTED_GRID[r["divergence"]][RATIO_MODELS.index(r["ratio_model"])]
        if want != r["converged"]:
            mark = lambda b: "converged" if b else "not converged"  # noqa: E731
            out.append(f"{r['divergence']}/{r['ratio_model']}: expected {mark(want)}, got {mark(r['converged'])}")
    return out


def format_grid(results: list[dict]) -> str:
    by = {(r["divergence"], r["ratio_model"]): r for r in results}
    width = max(len(d) for d in DIVERGENCES) + 2
    lines = ["".ljust(width) + "".join(m.ljust(12) for m in RATIO_MODELS)]
    for div in DIVERGENCES:
        cells = []
        for model in RATIO_MODELS:
            r = by[(div, model)]
            cells.append(("✓" if r["converged"] else "✗").ljust(12))
        lines.append(div.ljust(width) + "".join(cells))
    return "\n".join(lines) + "\n"


def cmd_table2(ctx: RunContext) -> int:
    results = run_table2(ctx.doc, thread_count())
    header = ["divergence", "ratio_model", "expected", "converged", "tail_mu_dist", "tail_cov_dist", "status"]
    rows = []
    for r in results:
        want = EXPECTED_GRID[r["divergence"]][RATIO_MODELS.index(r["ratio_model"])]
        rows.append([r["divergence"], r["ratio_model"], int(want), int(r["converged"]),
                     repr(float(r["tail_mu_dist"])), repr(float(r["tail_cov_dist"])), r["status"]])
    csv_path = ctx.path("table2.csv")
    _write_rows(csv_path, header, rows)
    ctx.wrote(csv_path)
    grid = format_grid(results)
    grid_path = ctx.path("table2.txt")
    grid_path.write_text(grid, encoding="utf-8")
    ctx.wrote(grid_path)
    print(grid, end="")
    diff = table2_mismatches(results)
    if diff:
        print("matrix mismatch:", file=sys.stderr)
        for line in diff:
            print("  " + line, file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def _column_tag(h: HFunction) -> str:
    return f"ShiftedVanilla_C{h.C:g}" if h.kind == "ShiftedVanilla" else h.kind


def loss_curves(d_min: float, d_max: float, n: int, c_list) -> tuple[list[str], np.ndarray]:
    """Header and table of ``d``, then ``h`` and ``h'`` for every generator loss and shift."""
    d = np.linspace(d_min, d_max, n)
    hs = [HFunction(k) for k in GENERATOR_LOSSES] + [HFunction("ShiftedVanilla", float(c)) for c in c_list]
    header, cols = ["d"], [d]
    for h in hs:
        tag = _column_tag(h)
        header += [f"h_{tag}", f"dh_{tag}"]
        cols += [np.asarray(h_eval(h, d)), np.asarray(h_prime(h, d))]
    return header, np.column_stack(cols)


def cmd_losses(ctx: RunContext) -> int:
    ls = ctx.doc["losses"]
    header, table = loss_curves(float(ls["d_min"]), float(ls["d_max"]), int(ls["n"]), ls["C"])
    path = ctx.path("losses.csv")
    _write_rows(path, header, ([repr(float(v)) for v in row] for row in table))
    ctx.wrote(path)
    print(f"losses: {len(table)} rows x {len(header)} columns -> {path}")
    return EXIT_OK


def cmd_verify(ctx: RunContext) -> int:
    suite = ctx.doc["verify"]["suite"]
    checks = run_suite(suite)
    for c in checks:
        print(c.line())
    failed = [c.id for c in checks if not c.passed]
    report = {"suite": suite, "passed": not failed, "failed": failed, "checks": [c.to_dict() for c in checks]}
    path = ctx.path("verify_report.json")
    path.write_text(json.dumps(report, indent=2) + "\n")
    ctx.wrote(path)
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    print(f"verify {suite}: {len(checks)} checks passed")
    return EXIT_OK


HANDLERS = {"flow": cmd_flow, "train": cmd_train, "table2": cmd_table2, "losses": cmd_losses, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="monoflow", description="MonoFlow particle flows and generator training.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", metavar="PATH", help="JSON experiment config (defaults used when omitted)")
    ap.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, metavar="N", help="overrides the config seed")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="set a config field; dotted keys reach nested fields, bare keys the command's section")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def resolve_config(args) -> dict:
    doc = load_config(args.config) if args.config else default_config()
    for item in args.override:
        apply_override(doc, item, SECTION[args.command])
    if args.seed is not None:
        doc["seed"] = args.seed
    return validate(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = resolve_config(args)
        if args.command == "table2":
            thread_count()
    except ConfigError as exc:
        where = f" [{exc.field}]" if getattr(exc, "field", None) else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out or doc["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(args.command, doc, out_dir)
    try:
        code = HANDLERS[args.command](ctx)
    except (NumericOverflow, NotPositiveDefinite, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    ctx.finish()
    return code


if __name__ == "__main__":
    sys.exit(main())
