"""Run orchestration shared by the CLI subcommands.

A run executes solve -> diagnostics -> optional oracle comparison -> emit,
then writes a manifest (config hash, versions, seeds, verdicts, artifact
hashes). Failures map onto the CLI exit-code contract through the
exception types: ConfigurationError (2), InfeasibleError (3),
OracleMismatchError (4).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__
from .artifacts import (emit_coupling, emit_iso_sets, emit_matching, emit_nestedness,
                        emit_price, emit_split, write_csv, write_json, write_manifest)
from .config import build_problem
from .errors import ConfigurationError
from .hedonic import price_schedule, solve_quadratic_disks
from .levelset import build_matching
from .oracle import (compare_to_continuum, require_agreement, sample_atoms,
                     solve_exact)
from .surplus import check_twist


def _config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(canon).hexdigest()


def _manifest_base(cfg: dict) -> dict:
    return {
        "config_sha256": _config_hash(cfg),
        "package_version": __version__,
        "numpy_version": np.__version__,
    }


def _apply_overrides(cfg: dict, out: Optional[str], seed: Optional[int],
                     grid: Optional[int], atoms: Optional[int]) -> dict:
    cfg = json.loads(json.dumps(cfg))
    if out is not None:
        cfg.setdefault("outputs", {})["directory"] = out
    if grid is not None:
        cfg.setdefault("solver", {})["y_grid"] = grid
    if atoms is not None:
        oc = cfg.setdefault("oracle", {})
        oc["enabled"] = True
        oc["atoms"] = atoms
    if seed is not None:
        cfg.setdefault("oracle", {})["seed"] = seed
    return cfg


def _outdir(cfg: dict) -> str:
    out = cfg.get("outputs", {}).get("directory", "matchkit_out")
    os.makedirs(out, exist_ok=True)
    return out


def run(cfg: dict, out: Optional[str] = None, seed: Optional[int] = None,
        grid: Optional[int] = None, atoms: Optional[int] = None,
        emit_grid: bool = True) -> dict:
    """Full pipeline for one config; returns the manifest dict."""
    cfg = _apply_overrides(cfg, out, seed, grid, atoms)
    outdir = _outdir(cfg)
    preset = build_problem(cfg)
    files = []
    verdicts = {}
    seeds = {}

    if preset.name == "hedonic_disks":
        product = solve_quadratic_disks(preset.hedonic, preset.mu,
                                        preset.nu_product, preset.config)
        for i, sol in enumerate(product.coords):
            path = os.path.join(outdir, f"split_coord{i + 1}.csv")
            write_csv(path, ["y", "k", "v"],
                      zip(sol.y_grid, sol.split.k, sol.v_grid))
            files.append(path)
            files.append(_emit_named_nestedness(outdir, sol.nested,
                                                f"nestedness_coord{i + 1}.json"))
            verdicts[f"coord{i + 1}"] = sol.nested.verdict
        rng = np.random.default_rng(cfg.get("oracle", {}).get("seed", 0))
        xs = preset.mu.stratified_sample(512, rng)
        schedule = price_schedule(product, preset.hedonic, xs)
        files.append(emit_price(outdir, schedule))
        files.append(_emit_product_matching(outdir, preset, product))
        if preset.reference is not None:
            comp = {"preset": preset.name}
            keep = np.all(np.abs(xs - preset.reference.a) <= 0.9, axis=1)
            comp["max_partner_error"] = float(np.max(np.abs(
                product.F(xs[keep]) - preset.reference.F(xs[keep]))))
            dev = schedule.traded_price - preset.reference.price(schedule.traded_z)
            comp["max_price_error_aligned"] = float(np.max(np.abs(dev - dev.mean())))
            rpath = os.path.join(outdir, "reference.json")
            write_json(rpath, comp)
            files.append(rpath)
        base = _manifest_base(cfg)
        base.update({"verdicts": verdicts, "seeds": seeds, "preset": preset.name})
        files.append(_write_config_copy(outdir, cfg))
        manifest_path = write_manifest(outdir, base, files)
        return {"outdir": outdir, "manifest": manifest_path, "verdicts": verdicts}

    solution = build_matching(preset.surplus, preset.mu, preset.nu, preset.config)
    verdicts["nestedness"] = solution.nested.verdict
    files.append(emit_split(outdir, solution))
    files.append(emit_nestedness(outdir, solution.nested))
    if emit_grid:
        files.append(emit_matching(outdir, solution))
        if preset.mu.dim == 2:
            files.extend(emit_iso_sets(
                outdir, solution, cfg.get("outputs", {}).get("iso_levels", 9)))

    if preset.name == "example2" and preset.config.blocks:
        path = os.path.join(outdir, "two_limits.csv")
        ps = np.linspace(0.05, 1.0, 20)
        rows = []
        for p in ps:
            roots = solution.match_roots(np.array([[p, 0.5]]))[0]
            rows.append([p, max(roots), min(roots)])
        write_csv(path, ["fertility", "y_upper", "y_lower"], rows)
        files.append(path)

    oracle_cfg = cfg.get("oracle", {})
    if oracle_cfg.get("enabled", False):
        n = oracle_cfg.get("atoms", 1000)
        seed_val = oracle_cfg.get("seed", 0)
        seeds["oracle"] = seed_val
        problem = sample_atoms(preset.mu, preset.nu, n, seed_val, s=preset.surplus)
        coupling = solve_exact(problem)
        files.extend(emit_coupling(outdir, coupling))
        comparison = compare_to_continuum(coupling, solution)
        cpath = os.path.join(outdir, "oracle.json")
        write_json(cpath, comparison)
        files.append(cpath)
        require_agreement(comparison, coupling,
                          ratio_tol=oracle_cfg.get("ratio_tol", 5e-3),
                          rmse_tol=oracle_cfg.get("rmse_tol", 5e-2))

    if preset.hedonic is not None and preset.hedonic.y_dim == 1:
        rng = np.random.default_rng(oracle_cfg.get("seed", 0))
        xs = preset.mu.stratified_sample(512, rng)
        schedule = price_schedule(solution, preset.hedonic, xs,
                                  y_env_points=solution.y_grid[:, None])
        files.append(emit_price(outdir, schedule))

    if preset.reference is not None:
        from .applications import reference_comparison
        comp = reference_comparison(preset, solution)
        rpath = os.path.join(outdir, "reference.json")
        write_json(rpath, comp)
        files.append(rpath)

    base = _manifest_base(cfg)
    base.update({"verdicts": verdicts, "seeds": seeds, "preset": preset.name,
                 "notes": list(preset.notes)})
    files.append(_write_config_copy(outdir, cfg))
    manifest_path = write_manifest(outdir, base, files)
    return {"outdir": outdir, "manifest": manifest_path, "verdicts": verdicts}


def _write_config_copy(outdir: str, cfg: dict) -> str:
    path = os.path.join(outdir, "config.json")
    write_json(path, cfg)
    return path


def _emit_named_nestedness(outdir: str, report, name: str) -> str:
    path = os.path.join(outdir, name)
    write_json(path, report.summary())
    return path


def _emit_product_matching(outdir: str, preset, product) -> str:
    path = os.path.join(outdir, "matching.csv")
    occ = preset.mu.occupied_cell
    pts = preset.mu.cell_centers[occ][::4]
    f = product.F(pts)
    u = product.u(pts)
    n = f.shape[1]
    header = [f"x{i + 1}" for i in range(pts.shape[1])] \
        + [f"F{i + 1}" for i in range(n)] + ["u"]
    rows = (list(p) + list(fr) + [uv] for p, fr, uv in zip(pts, f, u))
    write_csv(path, header, rows)
    return path


def run_oracle_only(cfg: dict, out: Optional[str] = None, seed: Optional[int] = None,
                    atoms: Optional[int] = None) -> dict:
    """Solve the discrete problem alone and emit the coupling artifacts."""
    cfg = _apply_overrides(cfg, out, seed, None, atoms)
    outdir = _outdir(cfg)
    preset = build_problem(cfg)
    oc = cfg.get("oracle", {})
    n = oc.get("atoms", 200)
    seed_val = oc.get("seed", 0)
    problem = sample_atoms(preset.mu, preset.nu, n, seed_val, s=preset.surplus)
    coupling = solve_exact(problem)
    files = emit_coupling(outdir, coupling)
    base = _manifest_base(cfg)
    base.update({"seeds": {"oracle": seed_val}, "atoms": n})
    files.append(_write_config_copy(outdir, cfg))
    manifest_path = write_manifest(outdir, base, files)
    return {"outdir": outdir, "manifest": manifest_path,
            "duality_gap": coupling.duality_gap}


def run_nestedness_only(cfg: dict, out: Optional[str] = None,
                        grid: Optional[int] = None) -> dict:
    cfg = _apply_overrides(cfg, out, None, grid, None)
    outdir = _outdir(cfg)
    preset = build_problem(cfg)
    solution = build_matching(preset.surplus, preset.mu, preset.nu, preset.config)
    files = [emit_split(outdir, solution), emit_nestedness(outdir, solution.nested)]
    base = _manifest_base(cfg)
    base.update({"verdicts": {"nestedness": solution.nested.verdict}})
    files.append(_write_config_copy(outdir, cfg))
    manifest_path = write_manifest(outdir, base, files)
    return {"outdir": outdir, "manifest": manifest_path,
            "verdict": solution.nested.verdict}


def run_twist_check(cfg: dict, out: Optional[str] = None) -> dict:
    cfg = _apply_overrides(cfg, out, None, None, None)
    outdir = _outdir(cfg)
    preset = build_problem(cfg)
    rng = np.random.default_rng(cfg.get("oracle", {}).get("seed", 0))
    xs = preset.mu.stratified_sample(256, rng)
    qs = np.linspace(0.05, 0.95, 10)
    ys = np.asarray(preset.nu.quantile(qs))
    pairs = [(float(ys[i]), float(ys[j]))
             for i in range(len(ys)) for j in range(i + 1, len(ys))]
    report = check_twist(preset.surplus, xs, pairs)
    payload = {
        "holds": report.holds,
        "min_separation": report.min_separation,
        "witnesses": [{"x": list(x), "y": a, "y0": b, "separation": s}
                      for x, a, b, s in report.witnesses[:20]],
    }
    path = os.path.join(outdir, "twist.json")
    write_json(path, payload)
    files = [path, _write_config_copy(outdir, cfg)]
    base = _manifest_base(cfg)
    base.update({"verdicts": {"twist": "holds" if report.holds else "fails"}})
    manifest_path = write_manifest(outdir, base, files)
    return {"outdir": outdir, "manifest": manifest_path, "holds": report.holds}
