"""Command-line pipeline.

Every subcommand takes one YAML run file plus ``--set key.sub=value``
overrides and writes its outputs, together with ``manifest.json``, into the
run directory given by ``--out``. Exit codes: 0 success, 1 invalid
configuration, 2 numerical failure, 3 budget exceeded.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import DENSE_BUDGET, sv_ensemble, sv_scan, write_envelopes_csv
from .cast import read_cast, write_cast
from .config import (geometry_from, load_config, recon_config_from, resolve_path,
                     simulation_config_from)
from .errors import BudgetExceeded, ConfigError, NumericalFailure
from .forward import measurements_to_fourier
from .imaging import render_images
from .kernel import KernelTable, build_kernel_table
from .recon import solve, write_trace_csv
from .scatter import simulate_point_data
from .spectra import SpectralLibrary, build_H, demo_library
from .uniqueness import audit_block

log = logging.getLogger("spectomo")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BUDGET = 0, 1, 2, 3


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Run directory bookkeeping: records inputs and outputs for the manifest."""

    def __init__(self, command: str, cfg: dict, out: Path, config_path: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.inputs = {str(config_path): _sha256(config_path)}
        self.outputs: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def input(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"input file {path} does not exist")
        self.inputs[str(path)] = _sha256(path)
        return path

    def output(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def manifest(self) -> None:
        cfg = {k: v for k, v in self.cfg.items() if k != "_base"}
        doc = {
            "command": self.command,
            "seed": int(self.cfg.get("seed", 0)),
            "config": cfg,
            "inputs": self.inputs,
            "outputs": {p.name: _sha256(p) for p in self.outputs if p.exists()},
            "versions": {
                "spectomo": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True),
                                                encoding="utf-8")


def _library(cfg: dict, run: Run, wavenumbers) -> SpectralLibrary:
    sp = cfg.get("spectra") or {}
    if "library" in sp:
        return SpectralLibrary.from_csv(run.input(resolve_path(cfg, sp["library"])), wavenumbers)
    demo = sp.get("demo") or {}
    return demo_library(wavenumbers, int(demo.get("n_species", 5)), int(demo.get("seed", cfg.get("seed", 0))),
                        int(demo.get("n_oscillators", 12)))


def _selection(cfg: dict, lib: SpectralLibrary) -> list:
    sel = (cfg.get("spectra") or {}).get("selection")
    if sel is None:
        return list(range(len(lib)))
    try:
        return [lib.index(s) if isinstance(s, str) else int(s) for s in sel]
    except ValueError as exc:
        raise ConfigError(f"unknown species in selection: {exc}") from exc


def _table_meta(t: KernelTable) -> dict:
    g = t.geometry
    return {"kind": "kernel-table", "layout": "f,q,m,n", "geometry": g.to_dict(),
            "geometry_digest": g.digest(), "nodes": t.quadrature_nodes}


def _table(cfg: dict, run: Run, geometry) -> KernelTable:
    """Kernel table from ``kernel.table``, the ``kernel.cache_dir`` entry keyed
    by geometry hash and node count, or a fresh build (stored in the cache)."""
    k = cfg.get("kernel") or {}
    nodes = int(k.get("nodes", 257))
    path = None
    if "table" in k:
        path = resolve_path(cfg, k["table"])
    elif "cache_dir" in k:
        cached = resolve_path(cfg, k["cache_dir"]) / f"{geometry.digest()}-{nodes}.cast"
        path = cached if cached.exists() else None
    if path is not None:
        arr, meta = read_cast(run.input(path))
        if meta.get("geometry_digest") != geometry.digest():
            raise ConfigError("cached kernel table was built for a different geometry")
        return KernelTable(arr, geometry, int(meta.get("nodes", nodes)))
    t = build_kernel_table(geometry, nodes, cfg.get("workers"))
    if "cache_dir" in k:
        d = resolve_path(cfg, k["cache_dir"])
        d.mkdir(parents=True, exist_ok=True)
        write_cast(d / f"{t.cache_key()}.cast", t.coefficients, _table_meta(t))
    return t


def cmd_kernel_build(cfg, run: Run):
    g = geometry_from(cfg)
    t = _table(cfg, run, g)
    write_cast(run.output("kernel.cast"), t.coefficients, _table_meta(t))


def cmd_synth_spectra(cfg, run: Run):
    g = geometry_from(cfg)
    lib = _library(cfg, run, g.wavenumbers)
    lib.to_csv(run.output("spectra.csv"))


def cmd_simulate(cfg, run: Run):
    g = geometry_from(cfg)
    lib = _library(cfg, run, g.wavenumbers)
    sel = _selection(cfg, lib)
    H = build_H(lib, sel)
    sim, scatterers = simulation_config_from(cfg, g)
    if "phantom" in (cfg.get("simulation") or {}):
        run.input(resolve_path(cfg, cfg["simulation"]["phantom"]))
    data = simulate_point_data(scatterers, H, sim)
    write_cast(run.output("data.cast"), data,
               {"kind": "measurements", "layout": "f,x,m", "domain": "spatial",
                "seed": sim.seed, "mode": sim.mode, "delta": sim.delta,
                "spectral_noise": list(sim.spectral_noise),
                "species": [lib.names[i] for i in sel], "geometry": g.to_dict()})


def cmd_reconstruct(cfg, run: Run):
    g = geometry_from(cfg)
    rc = cfg.get("recon") or {}
    if "data" not in rc:
        raise ConfigError("recon.data (CAST measurements) is required")
    data, meta = read_cast(run.input(resolve_path(cfg, rc["data"])))
    if data.shape != (g.Nf, g.Nx, g.Nk):
        raise ConfigError(f"data shape {data.shape} does not match geometry")
    lib = _library(cfg, run, g.wavenumbers)
    sel = list(range(len(lib))) if rc.get("library_solve") else _selection(cfg, lib)
    H = build_H(lib, sel)
    table = _table(cfg, run, g)
    S = data if meta.get("domain") == "fourier" else measurements_to_fourier(data)
    res = solve(S, H, table, recon_config_from(cfg))
    names = [lib.names[i] for i in sel]
    write_cast(run.output("densities.cast"), res.spatial,
               {"kind": "densities", "layout": "s,x,n", "domain": "spatial", "species": names,
                "lambda": res.lam, "iterations": res.iterations_run,
                "residual_norm": res.residual_norm, "geometry": g.to_dict()})
    write_trace_csv(res, run.output("trace.csv"))


def cmd_audit(cfg, run: Run):
    g = geometry_from(cfg)
    u = cfg.get("uniqueness") or {}
    lib = _library(cfg, run, g.wavenumbers)
    H = build_H(lib, _selection(cfg, lib))
    table = _table(cfg, run, g)
    qs = u.get("q", [0])
    lib_H = lib.matrix() if u.get("library_audit") else None
    reports = [audit_block(int(q), H, table, lib_H, rtol=float(u.get("rtol", 1e-8)),
                           subset_budget=int(u.get("subset_budget", 100_000)),
                           strategy=u.get("strategy", "greedy"), seed=int(cfg.get("seed", 0)))
               for q in qs]
    run.output("uniqueness.txt").write_text("\n\n".join(r.to_text() for r in reports) + "\n",
                                            encoding="utf-8")
    run.output("uniqueness.json").write_text(
        json.dumps({"schema": "uniqueness-report/1", "blocks": [r.to_dict() for r in reports]},
                   indent=2, sort_keys=True), encoding="utf-8")


def cmd_sv_scan(cfg, run: Run):
    g = geometry_from(cfg)
    s = cfg.get("sv_scan") or {}
    table = _table(cfg, run, g)
    if s.get("kernel_only"):
        H, names = None, None
    else:
        lib = _library(cfg, run, g.wavenumbers)
        sel = _selection(cfg, lib)
        H, names = build_H(lib, sel), [lib.names[i] for i in sel]
    budget = int(s.get("budget", DENSE_BUDGET))
    scan = sv_scan(H, table, s.get("q"), bool(s.get("normalize", True)), budget, names)
    scan.to_csv(run.output("sv_scan.csv"))
    run.output("sv_scan.json").write_text(json.dumps(scan.metadata, indent=2, sort_keys=True),
                                          encoding="utf-8")


def cmd_sv_ensemble(cfg, run: Run):
    g = geometry_from(cfg)
    e = cfg.get("sv_ensemble") or {}
    table = _table(cfg, run, g)
    lib = None if e.get("profiles", "library") == "random" else _library(cfg, run, g.wavenumbers)
    env = sv_ensemble(lib, int(e.get("Ns", 3)), e.get("Nf_list", list(range(1, g.Nf + 1))),
                      int(e.get("trials", 200)), int(cfg.get("seed", 0)), table, int(e.get("q", 0)))
    write_envelopes_csv(env, run.output("sv_ensemble.csv"))


def cmd_render(cfg, run: Run):
    r = cfg.get("render") or {}
    if "input" not in r:
        raise ConfigError("render.input (CAST densities) is required")
    arr, meta = read_cast(run.input(resolve_path(cfg, r["input"])))
    if arr.ndim != 3:
        raise ConfigError("render input must be a [s, x, n] density stack")
    names = meta.get("species") or None
    mapping = r.get("mapping")
    for t in np.atleast_1d(r.get("transform", "magnitude")):
        for p in render_images(arr, run.out, names, mapping, str(t),
                               fourier=meta.get("domain") == "fourier"):
            run.outputs.append(Path(p))


COMMANDS = {
    "kernel-build": (cmd_kernel_build, "sample the kernel table and store it as CAST"),
    "synth-spectra": (cmd_synth_spectra, "write the spectral library as CSV"),
    "simulate": (cmd_simulate, "simulate point-phantom measurements"),
    "reconstruct": (cmd_reconstruct, "invert measurements for species densities"),
    "audit-uniqueness": (cmd_audit, "run identifiability audits on selected blocks"),
    "sv-scan": (cmd_sv_scan, "singular spectra of the per-block system matrices"),
    "sv-ensemble": (cmd_sv_ensemble, "best/worst singular spectra over random spectra"),
    "render": (cmd_render, "write PGM/PPM images of a density stack"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spectomo", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", type=Path, help="YAML run file")
        p.add_argument("--out", type=Path, default=Path("run"), help="run directory")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config entry (dotted key)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        run = Run(args.command, cfg, args.out, args.config)
        COMMANDS[args.command][0](cfg, run)
        run.manifest()
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError, TypeError, IndexError, OSError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
