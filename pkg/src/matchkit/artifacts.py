"""Artifact emission: CSV grids, JSON reports, and the run manifest.

CSV follows RFC 4180 (CRLF, '.' decimal) with 12 significant digits; JSON
is emitted with sorted keys. Nothing here depends on wall-clock time, so
identical runs produce byte-identical files; the manifest lists every
emitted file with its SHA-256.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from typing import Iterable, Sequence

import numpy as np


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def emit_split(outdir: str, solution) -> str:
    path = os.path.join(outdir, "split.csv")
    rows = zip(solution.y_grid, solution.split.k, solution.v_grid)
    write_csv(path, ["y", "k", "v"], rows)
    return path


def emit_matching(outdir: str, solution, stride: int = 1) -> str:
    """F and u on the occupied quadrature cells of mu (x1..xm, F, u)."""
    path = os.path.join(outdir, "matching.csv")
    f, u = solution.grid_matches()
    occ = solution.mu.occupied_cell
    pts = solution.mu.cell_centers[occ][::stride]
    fv = f[occ][::stride]
    uv = u[occ][::stride]
    m = pts.shape[1]
    header = [f"x{i + 1}" for i in range(m)] + ["F", "u"]
    write_csv(path, header, (list(p) + [a, b] for p, a, b in zip(pts, fv, uv)))
    return path


def emit_iso_sets(outdir: str, solution, levels: int = 9) -> list[str]:
    from .levelset import iso_husband_set
    lo, hi = solution.nu.support
    paths = []
    qs = np.linspace(0.08, 0.92, levels)
    for q in qs:
        y = lo + q * (hi - lo)
        try:
            lines = iso_husband_set(solution, float(y))
        except Exception:
            continue
        rows = []
        for li, line in enumerate(lines):
            for ptx in line:
                rows.append([li] + list(ptx))
        path = os.path.join(outdir, "iso", f"iso_y_{y:.6f}.csv".replace("-", "m"))
        write_csv(path, ["segment", "x1", "x2"], rows)
        paths.append(path)
    return paths


def emit_nestedness(outdir: str, report) -> str:
    path = os.path.join(outdir, "nestedness.json")
    payload = report.summary()
    payload["monotone_inclusion_witnesses"] = [
        {"y": a, "y_prime": b, "x": list(x)}
        for a, b, x in report.monotone_inclusion_violations[:20]]
    payload["unique_splitting_witnesses"] = [
        {"x": list(x), "roots": list(r)}
        for x, r in report.unique_splitting_failures[:20]]
    write_json(path, payload)
    return path


def emit_coupling(outdir: str, coupling) -> list[str]:
    prob = coupling.problem
    m = prob.x_atoms.shape[1]
    path = os.path.join(outdir, "coupling.csv")
    header = ["i", "j"] + [f"x{i + 1}" for i in range(m)] + ["y", "s_ij"]
    rows = []
    for i in range(prob.n):
        j = int(coupling.assignment[i])
        rows.append([i, j] + list(prob.x_atoms[i])
                    + [prob.y_atoms[j], prob.surplus_matrix[i, j]])
    write_csv(path, header, rows)
    from .oracle import check_s_monotonicity, purity_report
    cert = {
        "total_surplus": coupling.total_surplus,
        "duality_gap": coupling.duality_gap,
        "feasibility_violation": coupling.feasibility_violation,
        "s_monotonicity": check_s_monotonicity(coupling),
        "purity": purity_report(coupling),
    }
    cpath = os.path.join(outdir, "certificates.json")
    write_json(cpath, cert)
    return [path, cpath]


def emit_price(outdir: str, schedule) -> str:
    path = os.path.join(outdir, "price.csv")
    z = schedule.traded_z
    d = z.shape[1]
    zz = np.einsum("kd,kd->k", z, z)
    order = np.argsort(zz, kind="stable")
    lo = schedule.lower_env(z[order])
    hi = schedule.upper_env(z[order])
    header = [f"z{i + 1}" for i in range(d)] + ["Z", "P", "lower_env", "upper_env"]
    rows = [list(z[t]) + [zz[t], schedule.traded_price[t], lo[a], hi[a]]
            for a, t in enumerate(order)]
    write_csv(path, header, rows)
    return path


def write_manifest(outdir: str, entries: dict, files: list[str]) -> str:
    manifest = dict(entries)
    manifest["artifacts"] = {
        os.path.relpath(p, outdir): sha256_file(p) for p in sorted(files)}
    path = os.path.join(outdir, "manifest.json")
    write_json(path, manifest)
    return path
