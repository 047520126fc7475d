"""Experiment orchestration: single training cells, suites, landscape
and report emission. The CLI is a thin wrapper over these functions.

Per-run output directory layout:
    config.json               resolved config (provenance)
    record_epochNNNN.json     one RunRecord per snapshot
    ckpt_epochNNNN.cnac       checkpoint per snapshot (or ckpt_latest.cnac)
    curves.csv                entropy-binned test error per epoch
    trajectory.npz            probe states per minibatch (when recorded)
"""

import glob
import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .analysis import (ALL_NETS, Trajectory, TrajectorySample, cna_landscape,
                       complexity_bins, gap_correlation_report, pca2, record_state)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, arch_id, build_arch, resolve_datasets
from .csvio import write_csv
from .errors import CnaLabError, ConfigError, DataError
from .metrics import entropy_vector, gap_metric_set
from .nn import build_network
from .optim import evaluate, init_opt_state, train_epoch
from .records import RunRecord, read_record, write_record
from .rng import seeded_rng
from .svg import grouped_bars_svg, landscape_svg, scatter_svg

CURVE_BINS = 5


def record_path(out_dir, epoch):
    return os.path.join(out_dir, f"record_epoch{epoch:04d}.json")


def ckpt_path(out_dir, epoch, keep="all"):
    if keep == "latest":
        return os.path.join(out_dir, "ckpt_latest.cnac")
    return os.path.join(out_dir, f"ckpt_epoch{epoch:04d}.cnac")


def _latest_checkpoint(out_dir):
    paths = sorted(glob.glob(os.path.join(out_dir, "ckpt_*.cnac")))
    if not paths:
        return None
    best, best_epoch = None, -1
    for p in paths:
        try:
            ck = load_checkpoint(p)
        except CnaLabError:
            continue
        if ck.epoch > best_epoch:
            best, best_epoch = ck, ck.epoch
    return best


def _select_probe(test_ds, probe_size, probe_seed):
    n = len(test_ds)
    size = min(probe_size, n)
    idx = np.sort(seeded_rng(probe_seed, "probe").choice(n, size=size, replace=False))
    return test_ds.inputs[idx]


def run_training(cfg, log=print):
    """Run (or resume) one experiment cell; returns the list of snapshot
    epochs written. Identical (config, seeds) produce byte-identical
    RunRecord files whether or not the run was interrupted."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    train_ds, test_ds = resolve_datasets(cfg.dataset)
    opts = cfg.metrics

    resumed = _latest_checkpoint(cfg.output_dir)
    if resumed is not None:
        net, opt_state, start_epoch = resumed.net, resumed.opt_state, resumed.epoch
        log(f"[train] resuming {cfg.output_dir} from epoch {start_epoch}")
    else:
        specs = build_arch(cfg.arch, train_ds.inputs.shape[1:], train_ds.classes)
        net = build_network(specs, cfg.init_seed, train_ds.inputs.shape[1:],
                            aggregation=opts.aggregation,
                            include_output=opts.include_output)
        opt_state = init_opt_state(net, cfg.optimizer)
        start_epoch = 0

    train_alphas = entropy_vector(train_ds.inputs, opts.entropy)
    test_alphas = entropy_vector(test_ds.inputs, opts.entropy)
    bins = complexity_bins(test_alphas, CURVE_BINS)

    trajectory = None
    probe = None
    if cfg.record_trajectory:
        probe = _select_probe(test_ds, cfg.probe_size, cfg.probe_seed)
        trajectory = _load_trajectory(cfg.output_dir) or \
            Trajectory(probe_shape=probe.shape, n_layers=net.n_layers)

    curve_rows = _load_curves(cfg.output_dir, start_epoch)
    batches_per_epoch = -(-len(train_ds) // cfg.optimizer.batch_size)
    snapshots = []

    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        on_batch = None
        if trajectory is not None:
            base_step = (epoch - 1) * batches_per_epoch

            def on_batch(step, loss, _base=base_step):
                trajectory.append(record_state(net, probe, _base + step, loss))

        train_loss, _ = train_epoch(net, train_ds, cfg.optimizer, opt_state,
                                    cfg.shuffle_seed, epoch, on_batch=on_batch)

        if epoch % cfg.snapshot_interval == 0 or epoch == cfg.epochs:
            train_acc, _, _ = evaluate(net, train_ds)
            test_acc, test_loss, flags = evaluate(net, test_ds)
            metrics = gap_metric_set(net, train_ds, test_ds, opts.entropy,
                                     opts.margin_percentile, opts.cna_split,
                                     train_alphas=train_alphas, test_alphas=test_alphas)
            record = RunRecord(
                dataset=cfg.dataset["name"], arch=arch_id(cfg.arch),
                corruption=float(cfg.dataset.get("corruption", 0.0)), epoch=epoch,
                train_acc=train_acc, test_acc=test_acc, gap=train_acc - test_acc,
                metrics=metrics.to_dict(),
                extra={"train_loss": train_loss, "test_loss": test_loss})
            write_record(record, record_path(cfg.output_dir, epoch))
            for b in range(bins.q):
                curve_rows.append((epoch, b, float(flags[bins.bin_indices[b]].mean())))
            _write_curves(cfg.output_dir, curve_rows)
            save_checkpoint(net, cfg.optimizer, opt_state, epoch,
                            ckpt_path(cfg.output_dir, epoch, cfg.keep_checkpoints),
                            seeds={"init": cfg.init_seed, "shuffle": cfg.shuffle_seed})
            snapshots.append(epoch)
            log(f"[train] {cfg.output_dir} epoch {epoch}: "
                f"loss={train_loss:.4f} train_acc={train_acc:.4f} test_acc={test_acc:.4f}")

    if trajectory is not None and trajectory.samples:
        _save_trajectory(cfg.output_dir, trajectory,
                         entropy_vector(probe, opts.entropy))
    return snapshots


def _write_curves(out_dir, rows):
    write_csv(os.path.join(out_dir, "curves.csv"), "curves",
              ("epoch", "bin", "mean_error"), rows)


def _load_curves(out_dir, up_to_epoch):
    path = os.path.join(out_dir, "curves.csv")
    if not os.path.exists(path) or up_to_epoch == 0:
        return []
    from .csvio import read_csv
    _, _, rows = read_csv(path)
    return [(int(e), int(b), float(v)) for e, b, v in rows if int(e) <= up_to_epoch]


def _save_trajectory(out_dir, trajectory, probe_alphas):
    np.savez(os.path.join(out_dir, "trajectory.npz"),
             states=trajectory.states(),
             steps=np.array([s.step for s in trajectory.samples]),
             losses=np.array([s.loss for s in trajectory.samples]),
             probe_alphas=probe_alphas,
             probe_n=trajectory.probe_n,
             n_layers=trajectory.n_layers)


def _load_trajectory(out_dir):
    path = os.path.join(out_dir, "trajectory.npz")
    if not os.path.exists(path):
        return None
    with np.load(path) as z:
        traj = Trajectory(probe_shape=(int(z["probe_n"]),), n_layers=int(z["n_layers"]))
        for step, state, loss in zip(z["steps"], z["states"], z["losses"]):
            traj.append(TrajectorySample(step=int(step), state=state.copy(),
                                         loss=float(loss)))
    return traj


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def build_suite_cells(suite):
    """Expand a suite config into per-cell ExperimentConfigs."""
    try:
        grid = suite.get("grid", {})
        output_root = suite["output_root"]
    except KeyError as exc:
        raise ConfigError(f"suite config missing {exc}") from exc
    shared = {k: suite[k] for k in ("optimizer", "epochs", "snapshot_interval", "metrics",
                                    "init_seed", "shuffle_seed", "probe_size", "probe_seed",
                                    "keep_checkpoints", "record_trajectory")
              if k in suite}
    cells = []
    for ds in grid.get("datasets", []):
        for corruption in grid.get("corruptions", [0.0]):
            for arch in grid.get("archs", []):
                dataset = dict(ds)
                dataset["corruption"] = corruption
                cell_id = f"{dataset['name']}_c{int(round(corruption * 100)):02d}_{arch_id(arch)}"
                obj = dict(shared)
                obj.update({"dataset": dataset, "arch": arch,
                            "output_dir": os.path.join(output_root, cell_id)})
                obj.setdefault("epochs", suite.get("epochs", 10))
                cells.append(ExperimentConfig.from_dict(obj))
    for extra in suite.get("extra_runs", []):
        obj = dict(shared)
        obj.update(extra)
        cell_id = (f"{obj['dataset']['name']}_"
                   f"c{int(round(obj['dataset'].get('corruption', 0.0) * 100)):02d}_"
                   f"{arch_id(obj['arch'])}")
        obj.setdefault("output_dir", os.path.join(output_root, cell_id))
        obj.setdefault("epochs", suite.get("epochs", 10))
        cells.append(ExperimentConfig.from_dict(obj))
    if not cells:
        raise ConfigError("suite config expands to zero cells")
    return cells


def _run_cell(cfg_dict):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        run_training(cfg)
        return cfg.output_dir, "ok", ""
    except Exception as exc:   # cell failures must not kill the suite
        return cfg.output_dir, "failed", f"{type(exc).__name__}: {exc}"


def run_suite(suite, jobs=1, log=print):
    """Run every cell (skipping completed ones), then write a summary.

    Returns (summary dict, output_root). A cell is complete when its
    final-epoch RunRecord exists.
    """
    cells = build_suite_cells(suite)
    output_root = suite["output_root"]
    os.makedirs(output_root, exist_ok=True)
    pending, results = [], []
    for cfg in cells:
        if os.path.exists(record_path(cfg.output_dir, cfg.epochs)):
            results.append((cfg.output_dir, "skipped", ""))
            log(f"[suite] skip completed cell {cfg.output_dir}")
        else:
            pending.append(cfg)
    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results.extend(pool.map(_run_cell, [c.to_dict() for c in pending]))
    else:
        for cfg in pending:
            results.append(_run_cell(cfg.to_dict()))
    summary = {"cells": [{"output_dir": d, "status": s, "error": e}
                         for d, s, e in sorted(results)],
               "n_failed": sum(1 for _, s, _ in results if s == "failed")}
    with open(os.path.join(output_root, "suite_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    for cell in summary["cells"]:
        log(f"[suite] {cell['status']:8s} {cell['output_dir']} {cell['error']}")
    return summary, output_root


# ---------------------------------------------------------------------------
# Landscape
# ---------------------------------------------------------------------------

def make_landscape(run_dir, resolution=41, out_dir=None, log=print):
    """PCA-project a recorded trajectory and evaluate the metric over the
    principal plane. Writes trajectory.csv, landscape.csv, landscape.svg."""
    out_dir = out_dir or run_dir
    trajectory = _load_trajectory(run_dir)
    if trajectory is None:
        raise DataError(f"{run_dir}: no trajectory.npz; train with --record-trajectory")
    with np.load(os.path.join(run_dir, "trajectory.npz")) as z:
        probe_alphas = z["probe_alphas"]

    basis, path = pca2(trajectory)
    xs, ys = path[:, 0], path[:, 1]
    # axis ranges: path bounding box expanded 25% per side
    def expand(lo, hi):
        span = (hi - lo) or 1.0
        return lo - 0.25 * span, hi + 0.25 * span
    x_range = expand(float(xs.min()), float(xs.max()))
    y_range = expand(float(ys.min()), float(ys.max()))
    grid = cna_landscape(basis, x_range, y_range, resolution, probe_alphas)

    steps = [s.step for s in trajectory.samples]
    losses = [s.loss for s in trajectory.samples]
    write_csv(os.path.join(out_dir, "trajectory.csv"), "trajectory",
              ("step", "loss", "projected_x", "projected_y"),
              [(step, loss, float(x), float(y))
               for step, loss, x, y in zip(steps, losses, xs, ys)])
    write_csv(os.path.join(out_dir, "landscape.csv"), "landscape",
              ("x", "y", "cna"),
              [(x, y, None if not np.isfinite(v) else v) for x, y, v in grid.cells()])
    landscape_svg(grid, path).save(os.path.join(out_dir, "landscape.svg"))
    log(f"[landscape] wrote {out_dir}/landscape.csv "
        f"({len(grid.xs)}x{len(grid.ys)} cells) and landscape.svg")
    return basis, path, grid


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def load_records(runs_glob):
    paths = sorted(glob.glob(runs_glob, recursive=True))
    return [read_record(p) for p in paths], paths


def make_report(runs_glob, out_dir, group_by="arch", log=print):
    """Correlation table + scatter data for a set of RunRecords."""
    records, paths = load_records(runs_glob)
    if len(records) < 3:
        raise DataError(f"need at least 3 RunRecords, glob {runs_glob!r} matched "
                        f"{len(records)}")
    os.makedirs(out_dir, exist_ok=True)
    cells = gap_correlation_report(records, group_by=group_by)
    write_csv(os.path.join(out_dir, "report.csv"), "report",
              ("metric", "group", "rho", "n"),
              [(c.metric, c.group, c.rho, c.n) for c in cells])

    finding = _finding(cells)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump({"cells": [{"metric": c.metric, "group": c.group,
                              "rho": c.rho, "n": c.n} for c in cells],
                   "n_records": len(records), "finding": finding},
                  fh, indent=2)
        fh.write("\n")

    grouped_bars_svg(cells).save(os.path.join(out_dir, "report_bars.svg"))
    pairs = [(r.metrics.get("cna"), r.test_acc) for r in records
             if r.metrics.get("cna") is not None]
    if pairs:
        scatter_svg([p[0] for p in pairs], [p[1] for p in pairs],
                    "CNA", "test accuracy",
                    "CNA vs test accuracy (one dot per snapshot)") \
            .save(os.path.join(out_dir, "cna_vs_accuracy.svg"))
    log(f"[report] {len(records)} records from {len(paths)} files")
    log(f"[report] {finding}")
    return cells, finding


def _finding(cells):
    """Compare the margin-scaled activation metric against the norm
    baselines on the aggregate group."""
    allnets = {c.metric: c.rho for c in cells if c.group == ALL_NETS}
    cm = allnets.get("cna_margin")
    baselines = {m: allnets.get(m) for m in ("frobenius", "spectral", "path")}
    if cm is None:
        return "finding: |rho(cna_margin, gap)| undefined for All Nets"
    defined = {m: abs(v) for m, v in baselines.items() if v is not None}
    if not defined:
        return (f"finding: |rho(cna_margin, gap)| = {abs(cm):.3f}; "
                "all norm baselines undefined")
    best_m = max(defined, key=defined.get)
    verdict = "exceeds" if abs(cm) > defined[best_m] else "does not exceed"
    return (f"finding: |rho(cna_margin, gap)| = {abs(cm):.3f} {verdict} the best "
            f"norm baseline |rho({best_m}, gap)| = {defined[best_m]:.3f} (All Nets)")
