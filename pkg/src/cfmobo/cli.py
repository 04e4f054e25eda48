"""Command-line experiment runner emitting plot-ready CSV files."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .bo_loop import RunResult, make_codec, renormalize, run
from .config import ConfigError, ExperimentConfig, apply_overrides, emit_config, parse_config, preset
from .errors import CellFreeError, InvalidConfig, NumericalError
from .link_metrics import build_state

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

TRACE_COLUMNS = ("iteration", "method", "hv", "log_hv_diff", "best_total_se", "normalized_total_se", "flags")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


def write_atomic(path: Path, text: str) -> None:
    """Write through ``<name>.partial`` and rename once complete."""
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    write_atomic(path, buf.getvalue())


def trace_rows(res: RunResult):
    for t in res.trace:
        yield (t.iteration, t.method, t.hv, t.log_hv_diff, t.best_total_se, t.normalized_total_se, t.flags)


def observation_table(res: RunResult, links):
    ll, kk = links
    d = res.records[0].x.size if res.records else 0
    T = res.records[0].objectives.size if res.records else 2
    header = ["iteration", "batch", "fallback"]
    header += [f"obj_{t}" for t in range(T)] + [f"observed_{t}" for t in range(T)]
    header += ["total_se", "min_link_se"] + [f"x_{j}" for j in range(d)]
    for name in ("w_ul", "w_dl", "p_ul", "p_dl"):
        header += [f"{name}_{l}_{k}" for l, k in zip(ll, kk)]
    rows = []
    for rec in res.records:
        a = rec.allocation
        row = [rec.iteration, rec.batch, rec.fallback, *rec.objectives, *rec.observed, rec.total_se, rec.min_link_se]
        row += list(rec.x)
        for arr in (a.w_ul, a.w_dl, a.p_ul, a.p_dl):
            row += list(arr[ll, kk])
        rows.append(row)
    return header, rows


def pareto_rows(runs: Sequence[RunResult]):
    for res in runs:
        by_iter = {rec.iteration: rec for rec in res.records}
        for e in sorted(res.archive.front_entries, key=lambda e: e.iteration):
            rec = by_iter[e.iteration]
            yield (res.seed, e.iteration, *e.y, rec.total_se, rec.min_link_se)


def run_experiment(cfg: ExperimentConfig, out_dir, stream=None) -> int:
    """Run every (method, seed) pair of ``cfg`` and write all outputs into ``out_dir``."""
    stream = sys.stdout if stream is None else stream
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "effective_config.txt", emit_config(cfg))
    state = build_state(cfg.network)
    links = np.nonzero(make_codec(state, cfg.optimizer.mode).connectivity)
    runs: dict[tuple[str, int], RunResult] = {}
    timing = []
    for seed in cfg.seeds:
        for method in cfg.methods:
            res = run(cfg.optimizer, method, seed, state)
            runs[(method, seed)] = res
            header, rows = observation_table(res, links)
            write_csv(out / f"observations_{method}_{seed}.csv", header, rows)
            timing.append(f"{method} seed={seed} evaluations={len(res.records)} wall_clock_s={res.wall_clock:.3f}")
    batch = renormalize(list(runs.values()))
    for (method, seed), res in runs.items():
        write_csv(out / f"trace_{method}_{seed}.csv", TRACE_COLUMNS, trace_rows(res))
    T = next(iter(runs.values())).records[0].objectives.size
    for method in cfg.methods:
        group = [runs[(method, s)] for s in cfg.seeds]
        header = ["seed", "iteration", *(f"obj_{t}" for t in range(T)), "total_se", "min_link_se"]
        write_csv(out / f"pareto_{method}.csv", header, pareto_rows(group))
    if batch.summary:
        cols = list(batch.summary[0])
        write_csv(out / "summary.csv", cols, ([row[c] for c in cols] for row in batch.summary))
    # wall-clock varies between reruns, so it stays out of the CSV files
    write_atomic(out / "timing.log", "\n".join(timing) + "\n")

    print(f"scenario {cfg.scenario}: final archive hypervolume", file=stream)
    print(f"{'method':<8} {'seed':>5} {'evals':>6} {'hv':>14} {'best_total_se':>14} {'seconds':>9}", file=stream)
    for (method, seed), res in runs.items():
        last = res.trace[-1]
        print(
            f"{method:<8} {seed:>5} {last.iteration:>6} {last.hv:>14.6g} {last.best_total_se:>14.6g} {res.wall_clock:>9.2f}",
            file=stream,
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cfmobo",
        description="Multi-objective Bayesian optimization of cell-free massive MIMO power control.",
    )
    p.add_argument("--scenario", help="preset name (required unless the config file names one)")
    p.add_argument("--config", help="experiment file with section.key = value lines")
    p.add_argument("--method", action="append", help="nehvi, ehvi or sobol; repeat or comma-separate")
    p.add_argument("--seed", action="append", help="replicate seed; repeat or comma-separate")
    p.add_argument("--budget", type=int, help="objective evaluations per run")
    p.add_argument("--batch-size", type=int, help="points proposed per BO iteration")
    p.add_argument("--out-dir", default="results", help="output directory (default: %(default)s)")
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--list-scenarios", action="store_true", help="print preset names and exit")
    return p


def _split_list(items):
    return [t.strip() for item in items for t in item.split(",") if t.strip()]


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = parse_config(args.config, args.scenario)
        if args.scenario and cfg.scenario != args.scenario:
            raise ConfigError(f"--scenario {args.scenario} conflicts with {args.config} (scenario {cfg.scenario})")
    elif args.scenario:
        cfg = preset(args.scenario)
    else:
        raise ConfigError("give --scenario or a --config file naming one")
    flags = []
    if args.method:
        flags.append("experiment.methods=" + ",".join(_split_list(args.method)))
    if args.seed:
        flags.append("experiment.seeds=" + ",".join(_split_list(args.seed)))
    if args.budget is not None:
        flags.append(f"optimizer.budget={args.budget}")
    if args.batch_size is not None:
        flags.append(f"optimizer.batch_size={args.batch_size}")
    return apply_overrides(cfg, flags + list(args.override))


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.list_scenarios:
        from .config import PRESETS

        print("\n".join(PRESETS))
        return EXIT_OK
    try:
        cfg = resolve_config(args)
    except InvalidConfig as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run_experiment(cfg, args.out_dir)
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvalidConfig as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CellFreeError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
