"""Configuration-driven command line driver.

Builds a partition problem from a YAML config, runs the optimizer with
periodic checkpointing, and writes reports, traces and plot-ready exports.

Subcommands: ``run <config>``, ``resume <checkpoint>``, ``classify
<run-dir>``, ``export <run-dir>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 interrupted (checkpoint written).
"""

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml

from . import grid as grid_mod
from .grid import DomainError
from .eigensolve import EigensolveError
from .neighborhood import CellVanishedError
from .partition_opt import (DensitySet, cell_areas, energy_and_gradients,
                            grid_problem, optimize, project_to_partition,
                            random_init, refine)
from .surface_fem import (MeshError, generate_sphere, generate_torus,
                          load_mesh, save_obj, save_ply, surface_problem)
from .classify import (classify_cells, count_cell_neighbors,
                       extract_isosurface, scale_invariant_eigenvalue,
                       spectral_signature)

CHECKPOINT_VERSION = 1
SURFACE_DOMAIN_TYPES = ("sphere", "torus", "mesh")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    domain: dict
    n: int
    resolution: int = None
    continuation: list = None
    boundary_mode: str = "dirichlet"
    C: float = 1e4
    p: int = 6
    alpha0: float = None
    max_iter: object = 200
    seed: int = 0
    mode: str = "partition"
    alpha_area: float = 0.0
    vanish_policy: str = "abort"
    threshold: float = 0.01
    tol: float = 1e-8
    output_dir: str = "specpart_run"
    checkpoint_interval: int = 25

    def effective(self):
        """Config with all defaults filled in, as a plain dict."""
        return asdict(self)


def _require(cond, field_name, message):
    if not cond:
        raise ConfigError(f"{field_name}: {message}")


def validate_config(cfg):
    _require(isinstance(cfg.domain, dict) and "type" in cfg.domain,
             "domain", "must be a mapping with a 'type' key")
    surface = cfg.domain.get("type") in SURFACE_DOMAIN_TYPES
    _require(isinstance(cfg.n, int) and cfg.n >= 1, "n",
             "must be a positive integer")
    _require(cfg.C > 0, "C", "must be positive")
    _require(isinstance(cfg.p, int) and cfg.p >= 1, "p",
             "must be a positive integer")
    _require(cfg.alpha0 is None or cfg.alpha0 > 0, "alpha0",
             "must be positive")
    iters = cfg.max_iter if isinstance(cfg.max_iter, list) else [cfg.max_iter]
    for m in iters:
        _require(isinstance(m, int) and m >= 1, "max_iter",
                 "must be a positive integer (or list of them)")
    _require(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed",
             "must be a non-negative integer")
    _require(cfg.mode in ("partition", "multiphase"), "mode",
             "must be 'partition' or 'multiphase'")
    if cfg.mode == "multiphase":
        _require(cfg.alpha_area > 0, "alpha_area",
                 "must be positive in multiphase mode")
    _require(cfg.vanish_policy in ("abort", "reinit"), "vanish_policy",
             "must be 'abort' or 'reinit'")
    _require(0 < cfg.threshold < 1, "threshold", "must lie in (0, 1)")
    _require(cfg.tol > 0, "tol", "must be positive")
    _require(cfg.checkpoint_interval >= 1, "checkpoint_interval",
             "must be >= 1")
    if not surface:
        _require(cfg.boundary_mode in ("dirichlet", "periodic"),
                 "boundary_mode", "must be 'dirichlet' or 'periodic'")
        _require((cfg.resolution is not None) != (cfg.continuation is not None),
                 "resolution", "give exactly one of resolution/continuation")
        if cfg.continuation is not None:
            _require(len(cfg.continuation) >= 1 and
                     all(isinstance(r, int) and r >= 4
                         for r in cfg.continuation),
                     "continuation", "must be a list of resolutions >= 4")
        else:
            _require(isinstance(cfg.resolution, int) and cfg.resolution >= 4,
                     "resolution", "must be an integer >= 4")
        if isinstance(cfg.max_iter, list) and cfg.continuation is not None:
            _require(len(cfg.max_iter) == len(cfg.continuation), "max_iter",
                     "list length must match the continuation schedule")
    return cfg


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: not valid YAML ({exc})")
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    return config_from_dict(raw)


def config_from_dict(raw):
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
    for req in ("domain", "n"):
        if req not in raw:
            raise ConfigError(f"{req}: required field missing")
    numeric = {"C": float, "alpha0": float, "alpha_area": float,
               "threshold": float, "tol": float}
    coerced = dict(raw)
    for key, cast in numeric.items():
        if coerced.get(key) is not None:
            try:
                coerced[key] = cast(coerced[key])
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: must be a number")
    try:
        cfg = RunConfig(**coerced)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}")
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------


def build_surface(spec):
    kind = spec["type"]
    if kind == "sphere":
        return generate_sphere(int(spec.get("subdivisions", 4)))
    if kind == "torus":
        return generate_torus(float(spec.get("R", 1.0)),
                              float(spec.get("r", 0.5)),
                              int(spec.get("nu", 64)),
                              int(spec.get("nv", 32)))
    path = spec.get("path")
    if not path:
        raise ConfigError("domain: mesh domain needs a 'path'")
    return load_mesh(path)


def is_surface_config(cfg):
    return cfg.domain.get("type") in SURFACE_DOMAIN_TYPES


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, cfg, level, iteration, densities, alpha,
                    descriptor=None):
    np.savez(path,
             version=CHECKPOINT_VERSION,
             config_json=json.dumps(cfg.effective()),
             level=level,
             iteration=iteration,
             alpha=float(alpha),
             densities=densities.values,
             n_cells=densities.n_cells,
             multiphase=densities.multiphase,
             descriptor_json=json.dumps(descriptor or {}))


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint: file not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ConfigError(
                f"checkpoint: unsupported version {int(data['version'])}")
        cfg = config_from_dict(json.loads(str(data["config_json"])))
        densities = DensitySet(np.array(data["densities"]),
                               int(data["n_cells"]),
                               bool(data["multiphase"]))
        return {"config": cfg,
                "level": int(data["level"]),
                "iteration": int(data["iteration"]),
                "alpha": float(data["alpha"]),
                "densities": densities}


# ---------------------------------------------------------------------------
# Run driver
# ---------------------------------------------------------------------------


def _trace_rows(level, history):
    return [(level, h["iteration"], int(h["accepted"]), h["alpha"],
             h["energy"]) for h in history]


def _nb_stats(history):
    sizes = [s for h in history for s in h["nb_sizes"]]
    if not sizes:
        return {"min": 0, "avg": 0.0, "max": 0}
    return {"min": int(min(sizes)), "avg": float(np.mean(sizes)),
            "max": int(max(sizes))}


def execute_run(cfg, output_dir, start_level=0, start_iteration=0,
                start_densities=None, start_alpha=None):
    """Run (or continue) an optimization and write all artifacts.

    Returns the exit code. A KeyboardInterrupt writes a checkpoint of the
    latest completed iteration and yields exit code 4.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    surface = is_surface_config(cfg)
    t_start = time.perf_counter()

    if surface:
        mesh = build_surface(cfg.domain)
        levels = [None]
        problems = [surface_problem(mesh)]
        grids = [None]
    else:
        domain = grid_mod.domain_from_config(cfg.domain)
        levels = list(cfg.continuation) if cfg.continuation is not None \
            else [cfg.resolution]
        grids = [grid_mod.build_grid(domain, res, cfg.boundary_mode)
                 for res in levels]
        problems = [grid_problem(g) for g in grids]

    multiphase = cfg.mode == "multiphase"
    densities = start_densities
    alpha = start_alpha
    level_reports = []
    trace = []
    checkpoint_path = out / "checkpoint.npz"
    latest = {}

    interrupted = False
    for level in range(start_level, len(levels)):
        problem = problems[level]
        if densities is None:
            densities = random_init(problem, cfg.n, seed=cfg.seed,
                                    multiphase=multiphase)
        elif level > start_level or (start_level > 0 and level == start_level
                                     and start_iteration == 0):
            densities = refine(densities, grids[level - 1], grids[level])
        iters = cfg.max_iter[level] if isinstance(cfg.max_iter, list) \
            else cfg.max_iter
        remaining = iters - (start_iteration if level == start_level else 0)
        if remaining <= 0:
            continue
        level_alpha = alpha if alpha is not None else cfg.alpha0
        descriptor = grids[level].descriptor() if grids[level] else \
            {"kind": "surface", "n_vertices": problem.n_nodes}

        def on_iteration(it, dens, a, info, _level=level,
                         _descriptor=descriptor):
            latest.update(level=_level, iteration=it, densities=dens,
                          alpha=a, descriptor=_descriptor)
            if it % cfg.checkpoint_interval == 0:
                save_checkpoint(checkpoint_path, cfg, _level,
                                it + (start_iteration
                                      if _level == start_level else 0),
                                dens, a, _descriptor)

        try:
            result = optimize(problem, densities=densities, C=cfg.C, p=cfg.p,
                              alpha0=level_alpha, max_iter=remaining,
                              alpha_area=cfg.alpha_area,
                              multiphase=multiphase,
                              vanish_policy=cfg.vanish_policy,
                              threshold=cfg.threshold, tol=cfg.tol,
                              callback=on_iteration)
        except KeyboardInterrupt:
            interrupted = True
            break
        densities = result.densities
        alpha = None  # subsequent levels start from alpha0 again
        offset = start_iteration if level == start_level else 0
        for h in result.history:
            h["iteration"] += offset
        trace.extend(_trace_rows(level, result.history))
        level_reports.append({
            "level": level,
            "resolution": levels[level],
            "iterations": result.iterations + offset,
            "energy": result.energy,
            "eigenvalues": result.eigenvalues,
            "final_alpha": result.alpha,
            "wall_time": result.wall_time,
            "restricted_sizes": _nb_stats(result.history),
        })
        save_checkpoint(checkpoint_path, cfg, level,
                        result.iterations + offset, densities, result.alpha,
                        descriptor)

    if interrupted:
        if latest:
            save_checkpoint(checkpoint_path, cfg, latest["level"],
                            latest["iteration"], latest["densities"],
                            latest["alpha"], latest["descriptor"])
        print("interrupted; checkpoint written to", checkpoint_path,
              file=sys.stderr)
        return 4

    problem = problems[-1]
    areas = cell_areas(problem, densities)
    labels = np.argmax(densities.cells, axis=0)
    binarized = float((np.max(densities.cells, axis=0)[problem.in_domain]
                       > 0.9).mean())
    final = level_reports[-1] if level_reports else None
    report = {
        "config": cfg.effective(),
        "kind": "surface" if surface else "grid",
        "degrees_of_freedom": cfg.n * int(problem.in_domain.sum()),
        "levels": level_reports,
        "final": {
            "energy": final["energy"] if final else None,
            "eigenvalues": final["eigenvalues"] if final else None,
            "areas": areas.tolist(),
            "alpha": final["final_alpha"] if final else None,
            "binarized_fraction": binarized,
        },
        "wall_time_total": time.perf_counter() - t_start,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    with (out / "energy_trace.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "iteration", "accepted", "alpha", "energy"])
        writer.writerows(trace)
    descriptor = grids[-1].descriptor() if grids[-1] else \
        {"kind": "surface", "n_vertices": problem.n_nodes}
    np.savez(out / "final_densities.npz",
             densities=densities.values,
             n_cells=densities.n_cells,
             multiphase=densities.multiphase,
             labels=labels,
             config_json=json.dumps(cfg.effective()),
             descriptor_json=json.dumps(descriptor))
    return 0


def _load_run_dir(run_dir):
    run_dir = Path(run_dir)
    path = run_dir / "final_densities.npz"
    if not path.exists():
        raise ConfigError(f"run-dir: no final_densities.npz under {run_dir}")
    with np.load(path, allow_pickle=False) as data:
        cfg = config_from_dict(json.loads(str(data["config_json"])))
        densities = DensitySet(np.array(data["densities"]),
                               int(data["n_cells"]),
                               bool(data["multiphase"]))
    return run_dir, cfg, densities


def _rebuild_problem(cfg):
    if is_surface_config(cfg):
        mesh = build_surface(cfg.domain)
        return "surface", surface_problem(mesh), mesh, None
    domain = grid_mod.domain_from_config(cfg.domain)
    res = cfg.continuation[-1] if cfg.continuation is not None \
        else cfg.resolution
    grid = grid_mod.build_grid(domain, res, cfg.boundary_mode)
    return "grid", grid_problem(grid), None, grid


# ---------------------------------------------------------------------------
# Classification and export
# ---------------------------------------------------------------------------


def run_classify(run_dir, epsilon=0.01, k=10):
    run_dir, cfg, densities = _load_run_dir(run_dir)
    kind, problem, mesh, grid = _rebuild_problem(cfg)
    graph = count_cell_neighbors(densities.cells, problem.adjacency)
    report = {
        "n_cells": densities.n_cells,
        "neighbor_counts": graph.neighbor_counts,
        "cell_adjacency": sorted(list(e) for e in graph.edges),
        "empty_cells": graph.empty_cells,
    }
    eigenvalues = None
    report_path = run_dir / "report.json"
    if report_path.exists():
        eigenvalues = json.loads(report_path.read_text())["final"][
            "eigenvalues"]
    if kind == "grid" and grid.dim == 3:
        meshes = [extract_isosurface(phi, grid) for phi in densities.cells]
        signatures = [spectral_signature(m, k=k) for m in meshes]
        classes = classify_cells(signatures, epsilon=epsilon)
        volumes = [m.enclosed_volume() for m in meshes]
        report["classes"] = {
            "labels": classes.labels.tolist(),
            "sizes": classes.class_sizes,
            "epsilon": epsilon,
            "k": k,
            "distance_matrix": classes.distance_matrix.tolist(),
        }
        report["volumes"] = volumes
        if eigenvalues is not None:
            report["scale_invariant"] = [
                scale_invariant_eigenvalue(lam, vol)
                for lam, vol in zip(eigenvalues, volumes)]
    (run_dir / "classification.json").write_text(json.dumps(report, indent=2))
    print(f"classification written to {run_dir / 'classification.json'}")
    return 0


def _export_2d(run_dir, cfg, densities, grid):
    from skimage import measure

    labels = np.argmax(densities.cells, axis=0)
    labels = np.where(grid.mask, labels, -1)
    field = grid.reshape_field(labels.astype(float)).astype(int)
    np.savetxt(run_dir / "labels.csv", field.T, fmt="%d", delimiter=",")
    with (run_dir / "boundaries.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "contour", "x", "y"])
        for i, phi in enumerate(densities.cells):
            img = grid.reshape_field(phi)
            for c, contour in enumerate(measure.find_contours(img, 0.5)):
                for row in contour:
                    x = grid.origin[0] + row[0] * grid.h
                    y = grid.origin[1] + row[1] * grid.h
                    writer.writerow([i, c, f"{x:.8g}", f"{y:.8g}"])


def run_export(run_dir):
    run_dir, cfg, densities = _load_run_dir(run_dir)
    kind, problem, mesh, grid = _rebuild_problem(cfg)
    if kind == "surface":
        labels = np.argmax(densities.cells, axis=0)
        save_ply(mesh, run_dir / "labels.ply", vertex_labels=labels)
        print(f"wrote {run_dir / 'labels.ply'}")
    elif grid.dim == 2:
        _export_2d(run_dir, cfg, densities, grid)
        print(f"wrote {run_dir / 'labels.csv'} and "
              f"{run_dir / 'boundaries.csv'}")
    else:
        for i, phi in enumerate(densities.cells):
            cell_mesh = extract_isosurface(phi, grid)
            save_obj(cell_mesh, run_dir / f"cell_{i:03d}.obj")
        print(f"wrote {densities.n_cells} cell meshes to {run_dir}")
    return 0


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "max_iter", None) is not None:
        cfg.max_iter = args.max_iter
    if getattr(args, "output", None) is not None:
        cfg.output_dir = args.output
    return validate_config(cfg)


def cmd_run(args):
    cfg = _apply_overrides(load_config(args.config), args)
    return execute_run(cfg, cfg.output_dir)


def cmd_resume(args):
    state = load_checkpoint(args.checkpoint)
    cfg = _apply_overrides(state["config"], args)
    return execute_run(cfg, cfg.output_dir,
                       start_level=state["level"],
                       start_iteration=state["iteration"],
                       start_densities=state["densities"],
                       start_alpha=state["alpha"])


def cmd_classify(args):
    return run_classify(args.run_dir, epsilon=args.epsilon, k=args.k)


def cmd_export(args):
    return run_export(args.run_dir)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="specpart",
        description="Optimize spectral partitions from a run configuration.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an optimization from a config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--max-iter", type=int, dest="max_iter")
    p_run.add_argument("--output")
    p_run.set_defaults(func=cmd_run)

    p_res = sub.add_parser("resume", help="continue from a checkpoint")
    p_res.add_argument("checkpoint")
    p_res.add_argument("--seed", type=int)
    p_res.add_argument("--max-iter", type=int, dest="max_iter")
    p_res.add_argument("--output")
    p_res.set_defaults(func=cmd_resume)

    p_cls = sub.add_parser("classify", help="classify cells of a run")
    p_cls.add_argument("run_dir")
    p_cls.add_argument("--epsilon", type=float, default=0.01)
    p_cls.add_argument("-k", type=int, default=10)
    p_cls.set_defaults(func=cmd_classify)

    p_exp = sub.add_parser("export", help="export plot-ready artifacts")
    p_exp.add_argument("run_dir")
    p_exp.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EigensolveError, CellVanishedError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
