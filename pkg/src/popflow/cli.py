"""Pipeline driver: generate, couple, train, simulate, evaluate, loo, bench.

One YAML config file drives every subcommand; --set key.path=value overrides
individual fields. Artifacts are deterministic given the config and seeds,
so reruns produce byte-identical files (single-threaded mode). Exit codes:
0 success, 2 configuration or usage problems, 1 runtime failures; failures
print one `error: <category>: <detail>` line on stderr.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import resource
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from .datasets import (
    CrossingToySpec,
    SnapshotTable,
    SyntheticSpec,
    UnbalancedToySpec,
    generate_crossing_toy,
    generate_multiscale,
    generate_unbalanced_toy,
    identity_prior_pairs,
    load_snapshots,
    save_snapshots,
)
from .hierarchy import (
    DiscreteMeasure,
    EmptyMaskError,
    HierarchyView,
    MultiscaleConfig,
    build_hierarchy,
    build_lifted_sampler,
    lift_coupling,
    load_prior,
    sample_pairs,
    sample_pairs_explicit,
    solve_multiscale,
    write_prior,
)
from .metrics import (
    CouplingReport,
    W1Options,
    append_results_row,
    assignment_accuracy,
    objective_gap,
    relative_mass_error,
    truth_from_labels,
    w1_distance,
)
from .solver import (
    SemiCoupling,
    SolverOptions,
    SparseCoupling,
    SupportMask,
    build_cost,
    extract_semi_coupling,
    read_coupling,
    write_coupling,
)
from .training import (
    SimulatedPopulation,
    TrainConfig,
    TrainingError,
    load_model,
    save_model,
    simulate,
    train,
    write_loss_trace,
)


class CliError(Exception):
    def __init__(self, category: str, detail: str, exit_code: int = 1):
        super().__init__(detail)
        self.category = category
        self.exit_code = exit_code


DEFAULTS: dict = {
    "output_dir": "out",
    "data": None,
    "priors": None,
    "threads": 1,
    "dataset": {
        "kind": "multiscale",
        "per_micro": 100,
        "noise": 0.1,
        "seed": 0,
        "count": 100,
        "centers0": [[0.0, 0.0], [3.0, 0.0]],
        "centers1": [[1.0, 0.0], [4.0, 0.0]],
        "counts0": [150, 150],
        "counts1": [150, 300],
    },
    "coupling": {
        "delta": 2.0,
        "mask_epsilon": 1e-3,
        "finest_mode": "sparse",
        "final_eps": 1e-3,
        "tolerance": 1e-9,
        "max_iters": 10000,
        "anneal_ratio": 0.2,
        "marginal_coef": 1.0,
        "report_accuracy": True,
        "report_limit_nnz": 3000000,
    },
    "train": {
        "kappa": 1.0,
        "sigma": 0.1,
        "batch_size": 256,
        "epochs": 2000,
        "learning_rate": 1e-3,
        "seed": 0,
        "hidden": 256,
        "layers": 5,
    },
    "simulate": {
        "steps": 100,
        "times": None,
        "start_index": 0,
    },
    "evaluate": {
        "prediction": None,
        "reference_time": None,
        "max_support": 512,
        "w1_seed": 0,
    },
    "loo": {
        "holdout": 1,
        "seeds": [0],
    },
    "bench": {
        "scales": [1, 4, 16],
        "per_micro": 100,
        "epochs_base": 30,
        "delta": 2.0,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            raise CliError("config", f"unknown config key {where!r}", 2)
        if isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val, where)
        else:
            out[key] = val
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise CliError("usage", f"--set expects key.path=value, got {assignment!r}", 2)
    dotted, raw = assignment.split("=", 1)
    value = yaml.safe_load(raw)
    node = cfg
    parts = dotted.strip().split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise CliError("config", f"unknown config section {part!r}", 2)
        node = node[part]
    if parts[-1] not in node:
        raise CliError("config", f"unknown config key {dotted!r}", 2)
    node[parts[-1]] = value


def _load_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                user = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise CliError("io", f"config file not found: {args.config}", 2) from None
        except yaml.YAMLError as exc:
            raise CliError("config", f"bad YAML in {args.config}: {exc}", 2) from None
        if not isinstance(user, dict):
            raise CliError("config", f"{args.config}: top level must be a mapping", 2)
        cfg = _merge(cfg, user)
    for assignment in args.set or []:
        _apply_set(cfg, assignment)
    out_dir = Path(cfg["output_dir"])
    if cfg["data"] is None:
        cfg["data"] = str(out_dir / "data.csv")
    if cfg["priors"] is None:
        cfg["priors"] = str(out_dir / "priors.json")
    return cfg


def _solver_options(c: dict) -> SolverOptions:
    return SolverOptions(
        final_eps=float(c["final_eps"]),
        tolerance=float(c["tolerance"]),
        max_iters=int(c["max_iters"]),
        anneal_ratio=float(c["anneal_ratio"]),
        marginal_coef=float(c["marginal_coef"]),
    )


def _multiscale_config(c: dict) -> MultiscaleConfig:
    return MultiscaleConfig(
        delta=float(c["delta"]),
        mask_epsilon=float(c["mask_epsilon"]),
        finest_mode=str(c["finest_mode"]),
        solver=_solver_options(c),
    )


def _views(table: SnapshotTable) -> list[HierarchyView]:
    return [
        build_hierarchy(table.measure_at(k), table.labels_at(k))
        for k in range(len(table.time_grid))
    ]


def _labels_at_level(view: HierarchyView, to_level: int) -> np.ndarray:
    """Per finest cluster, the label value of its ancestor at to_level."""
    idx = np.arange(view.cluster_count(view.levels))
    for level in range(view.levels, to_level, -1):
        idx = view.parents[level - 1][idx]
    return view.label_values[to_level - 1][idx]


def _write_indices(path, values) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in values:
            fh.write(f"{int(v)}\n")


def _read_indices(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        vals = [int(line) for line in fh if line.strip()]
    return np.asarray(vals, dtype=np.int64)


def cmd_generate(cfg: dict) -> int:
    d = cfg["dataset"]
    kind = d["kind"]
    if kind == "multiscale":
        table = generate_multiscale(SyntheticSpec(
            per_micro=int(d["per_micro"]), noise=float(d["noise"]), seed=int(d["seed"]),
        ))
    elif kind == "unbalanced":
        table = generate_unbalanced_toy(UnbalancedToySpec(
            centers0=tuple(tuple(c) for c in d["centers0"]),
            centers1=tuple(tuple(c) for c in d["centers1"]),
            counts0=tuple(int(c) for c in d["counts0"]),
            counts1=tuple(int(c) for c in d["counts1"]),
            noise=float(d["noise"]), seed=int(d["seed"]),
        ))
    elif kind == "crossing":
        table = generate_crossing_toy(CrossingToySpec(
            count=int(d["count"]), noise=float(d["noise"]), seed=int(d["seed"]),
        ))
    else:
        raise CliError("config", f"unknown dataset kind {kind!r}", 2)
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    save_snapshots(cfg["data"], table)
    write_prior(cfg["priors"], identity_prior_pairs(table))
    if table.pairing is not None:
        _write_indices(out_dir / "pairing.txt", table.pairing)
    if table.mass_ratios is not None:
        with open(out_dir / "mass_ratios.json", "w", encoding="utf-8") as fh:
            json.dump(table.mass_ratios, fh, sort_keys=True)
            fh.write("\n")
    for (t, lab), n in sorted(table.count_summary().items()):
        print(f"t={t} {lab}: {n} rows")
    print(f"wrote {cfg['data']} ({table.points.shape[0]} rows)")
    return 0


def _interval_files(out_dir: Path, k: int) -> dict:
    return {
        "coupling": out_dir / f"coupling_i{k}_l{{level}}.txt",
        "semi0": out_dir / f"semi0_i{k}.txt",
        "semi1": out_dir / f"semi1_i{k}.txt",
        "death": out_dir / f"death_i{k}.txt",
        "birth": out_dir / f"birth_i{k}.txt",
        "report": out_dir / f"report_i{k}.txt",
    }


def cmd_couple(cfg: dict) -> int:
    table = load_snapshots(cfg["data"])
    views = _views(table)
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    mcfg = _multiscale_config(cfg["coupling"])
    for k in range(len(table.time_grid) - 1):
        src, tgt = views[k], views[k + 1]
        prior = None
        if Path(cfg["priors"]).exists():
            prior = load_prior(cfg["priors"], src, tgt)
        started = time.perf_counter()
        try:
            couplings = solve_multiscale(src, tgt, prior, mcfg)
        except EmptyMaskError as exc:
            raise CliError("solver", f"interval {k}: {exc}") from exc
        wall = time.perf_counter() - started
        files = _interval_files(out_dir, k)
        for level, gamma in enumerate(couplings, start=1):
            write_coupling(str(files["coupling"]).format(level=level), gamma)
        semi_level = len(couplings)
        mu0 = src.weights[semi_level - 1]
        mu1 = tgt.weights[semi_level - 1]
        semi = extract_semi_coupling(couplings[-1], mu0, mu1, mcfg.solver)
        write_coupling(files["semi0"], semi.gamma0)
        write_coupling(files["semi1"], semi.gamma1)
        _write_indices(files["death"], semi.death_rows)
        _write_indices(files["birth"], semi.birth_cols)
        peak_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        print(f"interval {k}: solved {len(couplings)} levels in {wall:.3f}s "
              f"(peak rss {peak_kb / 1024:.0f} MB)")
        if cfg["coupling"]["report_accuracy"]:
            report = _coupling_report(cfg, src, tgt, couplings, mcfg, wall)
            if report is not None:
                with open(files["report"], "w", encoding="ascii") as fh:
                    fh.write("\n".join(report.to_lines()) + "\n")
                append_results_row(out_dir / "results.tsv", report)
                for line in report.to_lines():
                    print(line)
    return 0


def _coupling_report(cfg, src: HierarchyView, tgt: HierarchyView,
                     couplings: list[SparseCoupling], mcfg: MultiscaleConfig,
                     wall: float) -> CouplingReport | None:
    """Finest-level report against the label-matched ground truth pairing.

    Requires every finest source label to exist on the target side (true for
    the translation benchmark). Independent mode evaluates the lifted
    coupling, skipping if it would exceed the configured entry budget.
    """
    levels = src.levels
    if levels < 2:
        return None
    try:
        truth = truth_from_labels(src.label_values[levels - 1],
                                  tgt.label_values[levels - 1])
    except ValueError:
        return None
    if len(couplings) == levels:
        finest = couplings[-1]
    else:
        parent = couplings[-1]
        o0, s0, c0 = src.members(levels)
        o1, s1, c1 = tgt.members(levels)
        nnz = int(np.sum(c0[parent.mask.ii] * c1[parent.mask.jj]))
        if nnz > int(cfg["coupling"]["report_limit_nnz"]):
            return None
        finest = lift_coupling(parent, src, tgt)
    w0 = src.weights[levels - 1]
    w1 = tgt.weights[levels - 1]
    truth_mask = SupportMask(finest.mask.rows, finest.mask.cols,
                             np.arange(truth.size), truth.copy())
    truth_gamma = SparseCoupling(truth_mask, w0.astype(float).copy())
    # The gap compares full-support objectives, so the cost must cover both
    # couplings' entries; build it on the union of the two supports.
    union_ii = np.concatenate([finest.mask.ii, truth_mask.ii])
    union_jj = np.concatenate([finest.mask.jj, truth_mask.jj])
    order = np.lexsort((union_jj, union_ii))
    union_ii, union_jj = union_ii[order], union_jj[order]
    keep = np.ones(union_ii.size, dtype=bool)
    keep[1:] = (union_ii[1:] != union_ii[:-1]) | (union_jj[1:] != union_jj[:-1])
    union_mask = SupportMask(finest.mask.rows, finest.mask.cols,
                             union_ii[keep], union_jj[keep])
    cost = build_cost(src.centroids[levels - 1], tgt.centroids[levels - 1],
                      union_mask, mcfg.delta)
    gap = objective_gap(finest, truth_gamma, cost, w0, w1)
    micro = _labels_at_level(tgt, levels - 1) if levels >= 2 else None
    macro = _labels_at_level(tgt, 1)
    point, micro_acc, macro_acc = assignment_accuracy(
        finest, truth, micro, macro, source_weights=w0)
    return CouplingReport(
        objective_gap=gap,
        point_acc=point,
        micro_acc=micro_acc,
        macro_acc=macro_acc,
        wall_time_seconds=wall,
    )


def _train_config(cfg: dict, time_points) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        delta=float(cfg["coupling"]["delta"]),
        time_points=tuple(time_points),
        kappa=float(t["kappa"]),
        sigma=float(t["sigma"]),
        batch_size=int(t["batch_size"]),
        epochs=int(t["epochs"]),
        learning_rate=float(t["learning_rate"]),
        seed=int(t["seed"]),
        finest_mode=str(cfg["coupling"]["finest_mode"]),
        epsilon=float(cfg["coupling"]["mask_epsilon"]),
        hidden=int(t["hidden"]),
        layers=int(t["layers"]),
    )


def _make_explicit_sampler(semi: SemiCoupling, coords0, coords1, mu0, mu1):
    # Both sampler routes draw pairs from the normalized coupling, so the
    # coupling's total mass is a per-interval constant in the loss and is
    # dropped; per-sample weight stays m_t.
    def draw(count: int, seed: int):
        return sample_pairs_explicit(semi, coords0, coords1, count, seed,
                                     mu0=mu0, mu1=mu1)

    return draw


def _make_implicit_sampler(parent: SparseCoupling, src: HierarchyView,
                           tgt: HierarchyView, options: SolverOptions):
    levels = src.levels
    sampler = build_lifted_sampler(parent, src.weights[levels - 2],
                                   tgt.weights[levels - 2], src, tgt, options)

    def draw(count: int, seed: int):
        return sample_pairs(sampler, count, seed)

    return draw


def _sampler_from_solution(src: HierarchyView, tgt: HierarchyView,
                           couplings: list[SparseCoupling],
                           options: SolverOptions):
    levels = src.levels
    if len(couplings) == levels:
        mu0 = src.weights[levels - 1]
        mu1 = tgt.weights[levels - 1]
        semi = extract_semi_coupling(couplings[-1], mu0, mu1, options)
        return _make_explicit_sampler(
            semi, src.centroids[levels - 1], tgt.centroids[levels - 1], mu0, mu1)
    return _make_implicit_sampler(couplings[-1], src, tgt, options)


def _build_samplers(cfg: dict, table: SnapshotTable, views: list[HierarchyView]):
    out_dir = Path(cfg["output_dir"])
    mode = cfg["coupling"]["finest_mode"]
    options = _solver_options(cfg["coupling"])
    samplers = []
    for k in range(len(table.time_grid) - 1):
        src, tgt = views[k], views[k + 1]
        levels = src.levels
        files = _interval_files(out_dir, k)
        if mode == "sparse" or levels == 1:
            try:
                g0 = read_coupling(files["semi0"])
                g1 = read_coupling(files["semi1"])
            except FileNotFoundError:
                raise CliError("io", f"interval {k}: run couple first "
                                     f"(missing {files['semi0']})") from None
            semi = SemiCoupling(
                gamma0=g0, gamma1=g1,
                death_rows=_read_indices(files["death"]),
                birth_cols=_read_indices(files["birth"]),
            )
            samplers.append(_make_explicit_sampler(
                semi, src.centroids[levels - 1], tgt.centroids[levels - 1],
                src.weights[levels - 1], tgt.weights[levels - 1]))
        else:
            path = str(files["coupling"]).format(level=levels - 1)
            try:
                parent = read_coupling(path)
            except FileNotFoundError:
                raise CliError("io", f"interval {k}: run couple first "
                                     f"(missing {path})") from None
            samplers.append(_make_implicit_sampler(parent, src, tgt, options))
    return samplers


def cmd_train(cfg: dict) -> int:
    table = load_snapshots(cfg["data"])
    views = _views(table)
    samplers = _build_samplers(cfg, table, views)
    tc = _train_config(cfg, table.time_grid)
    started = time.perf_counter()
    model, trace = train(samplers, tc)
    wall = time.perf_counter() - started
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(out_dir / "model.bin", model, tc)
    write_loss_trace(out_dir / "loss_trace.txt", trace)
    final = f", final loss {trace[-1][1]:.6g}" if trace else ""
    print(f"trained {tc.epochs} epochs in {wall:.1f}s{final}")
    return 0


def _write_population(path, pop: SimulatedPopulation) -> None:
    d = pop.particles.shape[1]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join([f"x{i}" for i in range(d)] + ["m"]) + "\n")
        for row, m in zip(pop.particles, pop.masses):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{m:.17g}\n")


def _read_population(path) -> SimulatedPopulation:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if header[-1] != "m":
            raise ValueError(f"{path}: expected trailing mass column m")
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    arr = np.asarray(rows)
    return SimulatedPopulation(particles=arr[:, :-1], masses=arr[:, -1], time=0.0)


def cmd_simulate(cfg: dict) -> int:
    out_dir = Path(cfg["output_dir"])
    model, _ = load_model(out_dir / "model.bin")
    table = load_snapshots(cfg["data"])
    s = cfg["simulate"]
    start_index = int(s["start_index"])
    if not 0 <= start_index < len(table.time_grid):
        raise CliError("config", f"start_index {start_index} outside the grid", 2)
    t_start = table.time_grid[start_index]
    times = s["times"] if s["times"] is not None else [table.time_grid[-1]]
    init = table.measure_at(start_index)
    for t_end in times:
        t_end = float(t_end)
        if t_end <= t_start:
            raise CliError("config", f"requested time {t_end} not after start {t_start}", 2)
        pop = SimulatedPopulation(init.points.copy(), init.weights.copy(), t_start)
        pop = simulate(model, pop, t_start, t_end, int(s["steps"]))
        path = out_dir / f"simulated_t{t_end:g}.csv"
        _write_population(path, pop)
        print(f"wrote {path} (total mass {pop.total_mass():.6g})")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    table = load_snapshots(cfg["data"])
    e = cfg["evaluate"]
    ref_time = e["reference_time"]
    ref_time = float(ref_time) if ref_time is not None else table.time_grid[-1]
    grid = np.asarray(table.time_grid)
    k = int(np.argmin(np.abs(grid - ref_time)))
    if abs(grid[k] - ref_time) > 1e-9:
        raise CliError("config", f"time {ref_time} is not a snapshot time", 2)
    out_dir = Path(cfg["output_dir"])
    pred_path = e["prediction"] or out_dir / f"simulated_t{ref_time:g}.csv"
    try:
        pop = _read_population(pred_path)
    except FileNotFoundError:
        raise CliError("io", f"prediction file not found: {pred_path}") from None
    target = table.measure_at(k)
    options = W1Options(max_support=int(e["max_support"]), seed=int(e["w1_seed"]))
    w1 = w1_distance(DiscreteMeasure(pop.particles, pop.masses), target, options)
    rme = relative_mass_error(pop, target)
    lines = [
        f"reference_time = {ref_time:g}",
        f"w1 = {w1:.8g}",
        f"rme = {rme:.8g}",
        f"w1_subsample_seed = {options.seed}",
    ]
    with open(out_dir / f"metrics_t{ref_time:g}.txt", "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


def _drop_time(table: SnapshotTable, k: int) -> SnapshotTable:
    keep = table.time_index != k
    new_index = table.time_index[keep].copy()
    new_index[new_index > k] -= 1
    grid = tuple(t for i, t in enumerate(table.time_grid) if i != k)
    return SnapshotTable(
        points=table.points[keep],
        time_index=new_index,
        labels=table.labels[keep],
        weights=table.weights[keep],
        time_grid=grid,
    )


def _loo_once(cfg: dict, table: SnapshotTable, holdout: int, use_priors: bool,
              seed: int) -> float:
    reduced = _drop_time(table, holdout)
    views = _views(reduced)
    mcfg = _multiscale_config(cfg["coupling"])
    samplers = []
    for k in range(len(reduced.time_grid) - 1):
        src, tgt = views[k], views[k + 1]
        prior = None
        if use_priors and Path(cfg["priors"]).exists():
            prior = load_prior(cfg["priors"], src, tgt)
        couplings = solve_multiscale(src, tgt, prior, mcfg)
        samplers.append(_sampler_from_solution(src, tgt, couplings, mcfg.solver))
    tc = dataclasses.replace(_train_config(cfg, reduced.time_grid), seed=seed)
    model, _ = train(samplers, tc)
    t_held = table.time_grid[holdout]
    init = reduced.measure_at(0)
    pop = SimulatedPopulation(init.points.copy(), init.weights.copy(),
                              reduced.time_grid[0])
    pop = simulate(model, pop, reduced.time_grid[0], t_held, int(cfg["simulate"]["steps"]))
    target = table.measure_at(holdout)
    options_w1 = W1Options(max_support=int(cfg["evaluate"]["max_support"]),
                           seed=int(cfg["evaluate"]["w1_seed"]))
    return w1_distance(DiscreteMeasure(pop.particles, pop.masses), target, options_w1)


def cmd_loo(cfg: dict) -> int:
    table = load_snapshots(cfg["data"])
    n_times = len(table.time_grid)
    if n_times < 3:
        raise CliError("config", "leave-one-out needs at least 3 time points", 2)
    holdout = int(cfg["loo"]["holdout"])
    if holdout <= 0 or holdout >= n_times - 1:
        raise CliError(
            "config",
            f"cannot hold out time index {holdout}: endpoints have no "
            "neighboring interval pair to merge",
            2,
        )
    seeds = [int(s) for s in cfg["loo"]["seeds"]]
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in seeds:
        w1_with = _loo_once(cfg, table, holdout, True, seed)
        w1_without = _loo_once(cfg, table, holdout, False, seed)
        rows.append((seed, w1_with, w1_without))
        print(f"seed {seed}: held-out t={table.time_grid[holdout]:g} "
              f"w1_with_priors={w1_with:.6g} w1_without={w1_without:.6g}")
    with open(out_dir / "loo.txt", "w", encoding="ascii") as fh:
        fh.write("seed\tw1_with_priors\tw1_without_priors\n")
        for seed, a, b in rows:
            fh.write(f"{seed}\t{a:.12g}\t{b:.12g}\n")
    return 0


def cmd_bench(cfg: dict) -> int:
    b = cfg["bench"]
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for scale in [int(s) for s in b["scales"]]:
        sub = copy.deepcopy(cfg)
        sub["output_dir"] = str(out_dir / f"bench_{scale}x")
        sub["data"] = str(Path(sub["output_dir"]) / "data.csv")
        sub["priors"] = str(Path(sub["output_dir"]) / "priors.json")
        sub["dataset"]["kind"] = "multiscale"
        sub["dataset"]["per_micro"] = int(b["per_micro"]) * scale
        sub["coupling"]["finest_mode"] = "independent"
        sub["coupling"]["delta"] = float(b["delta"])
        sub["coupling"]["report_accuracy"] = False
        sub["train"]["epochs"] = int(b["epochs_base"]) * scale
        cmd_generate(sub)
        t0 = time.perf_counter()
        cmd_couple(sub)
        coupling_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        cmd_train(sub)
        training_s = time.perf_counter() - t0
        frac = coupling_s / (coupling_s + training_s)
        rows.append((scale, coupling_s, training_s, frac))
        print(f"scale {scale}x: coupling {coupling_s:.2f}s, "
              f"training {training_s:.2f}s, fraction {frac:.4f}")
    with open(out_dir / "bench.txt", "w", encoding="ascii") as fh:
        fh.write("scale\tcoupling_seconds\ttraining_seconds\tcoupling_fraction\n")
        for scale, cs, ts, frac in rows:
            fh.write(f"{scale}\t{cs:.4f}\t{ts:.4f}\t{frac:.6f}\n")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "couple": cmd_couple,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "loo": cmd_loo,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="popflow",
        description="Multiscale population flow pipeline",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                        help="override a config field (repeatable)")
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"error: training: {exc}", file=sys.stderr)
        return 1
    except EmptyMaskError as exc:
        print(f"error: solver: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
