"""Batch experiment runner and field export.

Subcommands:
  run    -- sweep (H, layers) combinations for one problem, write CSV + manifest
  field  -- export a computed field as legacy-ASCII VTK
  decay  -- corrector energy-decay report for one coarse element

Configuration is a flat key=value text file; every key can be overridden on
the command line with --set key=value. Exit codes: 0 ok, 1 configuration
error, 2 solver failure.
"""

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .corrector import (
    PatchPolicy,
    compute_all_correctors,
    decay_profile,
    load_correctors,
    save_correctors,
)
from .errors import ConfigurationError, ModelError, SolverError
from .fem import (
    FeFunction,
    assemble_load,
    assemble_neumann,
    assemble_stiffness,
    build_dirichlet_extension,
    compute_errors,
    sample_coefficient,
)
from .interp import assemble_clement
from .lod import assemble_ms_basis, solve_lod
from .mesh import build_structured_mesh, refine_uniform
from .problems import by_name

DEFAULTS = {
    "problem": "mp1",
    "h": "8",
    "H": "4",
    "patch_mode": "fine",   # fine | coarse | global
    "layers": "32",
    "solver_tol": "1e-10",
    "threads": "1",
    "outdir": "out",
    "cache": "0",
    "cache_dir": "",
    "progress": "0",
}


def parse_config(path=None, overrides=()):
    cfg = dict(DEFAULTS)
    lines = []
    if path:
        lines.extend(Path(path).read_text().splitlines())
    lines.extend(overrides)
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"malformed config line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not (key in DEFAULTS or key.startswith("param.")):
            raise ConfigurationError(f"unknown config key: {key!r}")
        cfg[key] = value
    return cfg


def _problem_from_cfg(cfg):
    overrides = {}
    for key, value in cfg.items():
        if key.startswith("param."):
            name = key[len("param."):]
            overrides[name] = value.lower() in ("true", "1") if value.lower() in ("true", "false") else float(value)
    return by_name(cfg["problem"], **overrides)


def _int_list(text, key):
    try:
        return [int(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigurationError(f"{key} must be a comma list of integers: {text!r}") from exc


def _fmt(x):
    return f"{x:.5g}"


def _policy(cfg, H_exp, h_exp, layers):
    mode = cfg["patch_mode"]
    if mode not in ("fine", "coarse", "global"):
        raise ConfigurationError(f"patch_mode must be fine|coarse|global, got {mode!r}")
    if mode == "global":
        return PatchPolicy("global"), float("inf"), float("inf")
    ratio = 2 ** (h_exp - H_exp)
    if mode == "fine":
        return PatchPolicy("fine", layers), layers, layers / ratio
    return PatchPolicy("coarse", layers), layers * ratio, float(layers)


class _Pipeline:
    """Shared assembly state for one (problem, h) sweep."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.problem = _problem_from_cfg(cfg)
        self.h_exp = int(cfg["h"])
        self.tol = float(cfg["solver_tol"])
        if self.tol <= 0:
            raise ConfigurationError("solver_tol must be positive")
        self.threads = int(cfg["threads"])
        self._reference = None
        self._per_H = {}

    def for_H(self, H_exp):
        if H_exp in self._per_H:
            return self._per_H[H_exp]
        if self.h_exp - H_exp < 1:
            raise ConfigurationError(
                f"need h <= H/2: got H=2^-{H_exp}, h=2^-{self.h_exp}"
            )
        coarse = build_structured_mesh(2 ** H_exp, self.problem.neumann_segments)
        fine, cfmap = refine_uniform(coarse, self.h_exp - H_exp)
        coef = sample_coefficient(self.problem, fine)
        S = assemble_stiffness(fine, coef)
        load = assemble_load(fine, self.problem.source)
        qvec = (
            assemble_neumann(fine, self.problem.neumann)
            if self.problem.neumann is not None
            else None
        )
        g_H, g_h = build_dirichlet_extension(cfmap, self.problem.dirichlet)
        clement = assemble_clement(cfmap)
        state = dict(
            cfmap=cfmap, coef=coef, S=S, load=load, qvec=qvec,
            g_H=g_H, g_h=g_h, clement=clement,
        )
        self._per_H[H_exp] = state
        return state

    def reference(self, state):
        # u_h only depends on (problem, h): any extension with the correct
        # Dirichlet nodal values yields the same solution
        if self._reference is None:
            from .linsolve import cg_solve  # local import to keep module load light

            free = np.flatnonzero(~state["cfmap"].fine.is_dirichlet)
            b = state["load"] - state["S"] @ state["g_h"].values
            if state["qvec"] is not None:
                b = b + state["qvec"]
            x, iters = cg_solve(state["S"][free][:, free], b[free], tol=self.tol)
            u = state["g_h"].values.copy()
            u[free] += x
            self._reference = (FeFunction("fine", u), iters)
        return self._reference

    def correctors(self, state, policy):
        cache_dir = self.cfg["cache_dir"] or str(Path(self.cfg["outdir"]) / "cache")
        use_cache = self.cfg["cache"].lower() in ("1", "true")
        path = None
        if use_cache:
            key = f"{self.problem.key()}|h=2^-{self.h_exp}|H_cells={state['cfmap'].coarse.n_cells}|{policy.describe()}|v1"
            digest = hashlib.sha256(key.encode()).hexdigest()[:16]
            path = Path(cache_dir) / f"correctors_{digest}.npz"
            if path.exists():
                return load_correctors(path)
        cset = compute_all_correctors(
            state["cfmap"], state["coef"], state["clement"], policy,
            g_h=state["g_h"], q=self.problem.neumann, S_fine=state["S"],
            threads=self.threads, progress=self.cfg["progress"] in ("1", "true"),
        )
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_correctors(path, cset)
        return cset

    def lod_solution(self, state, policy):
        cset = self.correctors(state, policy)
        basis = assemble_ms_basis(state["cfmap"], cset)
        _, u_lod = solve_lod(
            state["cfmap"], state["S"], basis, cset, state["load"],
            neumann_vec=state["qvec"], g_h=state["g_h"],
        )
        return cset, u_lod


def run_experiment(cfg):
    """Run the (H, layers) sweep; returns (rows, solver_failed flag)."""
    pipe = _Pipeline(cfg)
    H_list = _int_list(cfg["H"], "H")
    layer_list = _int_list(cfg["layers"], "layers") if cfg["patch_mode"] != "global" else [0]
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)

    rows = []
    manifest = [f"lodfem_version = {__version__}"]
    for key in sorted(cfg):
        manifest.append(f"config.{key} = {cfg[key]}")
    manifest.append(f"problem_key = {pipe.problem.key()}")

    failed = False
    for H_exp in H_list:
        state = pipe.for_H(H_exp)
        u_ref, ref_iters = pipe.reference(state)
        manifest.append(f"reference.h=2^-{pipe.h_exp}.cg_iterations = {ref_iters}")
        for layers in layer_list:
            policy, ell, k = _policy(cfg, H_exp, pipe.h_exp, layers)
            t0 = time.perf_counter()
            try:
                cset, u_lod = pipe.lod_solution(state, policy)
            except SolverError as exc:
                failed = True
                rows.append({
                    "H": f"2^-{H_exp}", "fine_layers": _fmt(ell), "k": _fmt(k),
                    "rel_l2": "FAILED", "rel_h1": "FAILED",
                    "avg_patch_elems": "FAILED", "avg_patch_nodes": "FAILED",
                })
                manifest.append(f"row.H=2^-{H_exp}.layers={layers}.error = {exc}")
                continue
            err = compute_errors(state["cfmap"].fine, u_ref, u_lod)
            stats = cset.stats()
            rows.append({
                "H": f"2^-{H_exp}",
                "fine_layers": _fmt(ell),
                "k": _fmt(k),
                "rel_l2": _fmt(err.rel_l2),
                "rel_h1": _fmt(err.rel_h1),
                "avg_patch_elems": _fmt(stats.avg_fine_elems),
                "avg_patch_nodes": _fmt(stats.avg_fine_nodes),
            })
            manifest.append(
                f"row.H=2^-{H_exp}.layers={layers}.seconds = {time.perf_counter() - t0:.2f}"
            )

    header = ["H", "fine_layers", "k", "rel_l2", "rel_h1", "avg_patch_elems", "avg_patch_nodes"]
    csv_lines = [",".join(header)]
    csv_lines += [",".join(row[h] for h in header) for row in rows]
    (outdir / "results.csv").write_text("\n".join(csv_lines) + "\n")
    (outdir / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return rows, failed


def export_field(fefun, mesh, path, name="field"):
    """Write a nodal scalar field as a legacy-ASCII VTK unstructured grid.

    Layout (bit-exact): header '# vtk DataFile Version 3.0', one POINTS block
    ('%.9g %.9g 0'), CELLS as '3 a b c', CELL_TYPES all 5 (triangles), then a
    single POINT_DATA SCALARS array written as '%.12g' per line.
    """
    vals = np.asarray(getattr(fefun, "values", fefun), dtype=float)
    if vals.shape[0] != mesh.n_nodes:
        raise ConfigurationError("field length does not match the mesh")
    lines = [
        "# vtk DataFile Version 3.0",
        "lodfem field export",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} float",
    ]
    lines += [f"{x:.9g} {y:.9g} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {mesh.n_elems} {4 * mesh.n_elems}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements]
    lines.append(f"CELL_TYPES {mesh.n_elems}")
    lines += ["5"] * mesh.n_elems
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    lines.append(f"SCALARS {name} float 1")
    lines.append("LOOKUP_TABLE default")
    lines += [f"{v:.12g}" for v in vals]
    Path(path).write_text("\n".join(lines) + "\n")


def _cmd_run(args):
    cfg = parse_config(args.config, args.set or [])
    rows, failed = run_experiment(cfg)
    for row in rows:
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    return 2 if failed else 0


def _cmd_field(args):
    cfg = parse_config(args.config, args.set or [])
    pipe = _Pipeline(cfg)
    H_exp = _int_list(cfg["H"], "H")[0]
    state = pipe.for_H(H_exp)
    fine = state["cfmap"].fine
    what = args.what
    if what == "reference":
        fefun, _ = pipe.reference(state)
    elif what == "coefficient":
        vals = np.zeros(fine.n_nodes)
        cnt = np.zeros(fine.n_nodes)
        np.add.at(vals, fine.elements, state["coef"].values[:, None])
        np.add.at(cnt, fine.elements, 1.0)
        fefun = FeFunction("fine", vals / cnt)
    else:
        layers = _int_list(cfg["layers"], "layers")[0] if cfg["patch_mode"] != "global" else 0
        policy, _, _ = _policy(cfg, H_exp, pipe.h_exp, layers)
        cset, u_lod = pipe.lod_solution(state, policy)
        if what == "lod":
            fefun = u_lod
        else:  # fine_part: everything the coarse space cannot see
            basis = assemble_ms_basis(state["cfmap"], cset)
            from .fem import prolongation_matrix

            vH, u_lod2 = solve_lod(
                state["cfmap"], state["S"], basis, cset, state["load"],
                neumann_vec=state["qvec"], g_h=state["g_h"],
            )
            coarse_part = prolongation_matrix(state["cfmap"]) @ vH.values + state["g_h"].values
            fefun = FeFunction("fine", u_lod2.values - coarse_part)
    export_field(fefun, fine, args.out, name=what)
    print(f"wrote {args.out}")
    return 0


def _cmd_decay(args):
    cfg = parse_config(args.config, args.set or [])
    pipe = _Pipeline(cfg)
    H_exp = _int_list(cfg["H"], "H")[0]
    state = pipe.for_H(H_exp)
    cfmap = state["cfmap"]
    if args.elem is not None:
        T = args.elem
    else:
        x, y = (float(v) for v in args.at.split(","))
        nc = cfmap.coarse.n_cells
        ci = min(int(x * nc), nc - 1)
        cj = min(int(y * nc), nc - 1)
        u, v = x * nc - ci, y * nc - cj
        T = 2 * (cj * nc + ci) + (1 if u < v else 0)
    report = decay_profile(
        cfmap, state["coef"], state["clement"], T,
        mode=args.mode, k_max=args.kmax, q=pipe.problem.neumann, S_fine=state["S"],
    )
    lines = [f"coarse_elem = {T}", f"theta = {report.theta:.6g}",
             f"theta_defined = {report.theta_defined}"]
    lines += [f"tail[k={k}] = {t:.6e}" for k, t in zip(report.k_values, report.tails)]
    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="lodfem", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run an experiment sweep")
    p_field = sub.add_parser("field", help="export a field as VTK")
    p_decay = sub.add_parser("decay", help="corrector decay report")
    for p in (p_run, p_field, p_decay):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry")
    p_field.add_argument("--what", default="reference",
                         choices=["reference", "lod", "fine_part", "coefficient"])
    p_field.add_argument("--out", required=True)
    p_decay.add_argument("--elem", type=int, default=None, help="coarse element id")
    p_decay.add_argument("--at", default="0.5,0.5", help="locate element at x,y")
    p_decay.add_argument("--mode", default="element", choices=["element", "neumann"])
    p_decay.add_argument("--kmax", type=int, default=4)
    p_decay.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.cmd == "run":
            return _cmd_run(args)
        if args.cmd == "field":
            return _cmd_field(args)
        return _cmd_decay(args)
    except (ConfigurationError, ModelError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
