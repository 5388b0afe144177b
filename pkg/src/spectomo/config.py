"""Run configuration: one YAML file per run plus dotted command-line overrides.

Top-level keys
--------------
``seed``            root seed for every random substream (int, default 0)
``workers``         thread count for per-q and per-wavenumber maps
``geometry``        fields of :class:`~spectomo.kernel.ImagingGeometry`
``kernel``          ``nodes`` (quadrature floor), ``table`` (CAST path to reuse),
                    ``cache_dir`` (tables keyed by geometry hash and node count)
``spectra``         ``library`` (CSV path) or ``demo`` (``n_species``, ``seed``,
                    ``n_oscillators``), ``selection`` (indices or names)
``simulation``      ``mode`` (born | foldy), ``spectral_noise``, ``delta``,
                    ``nodes``, ``phantom`` (path) or ``scatterers`` (inline list)
``recon``           fields of :class:`~spectomo.recon.ReconConfig`, ``data``
                    (CAST path), ``library_solve`` (reconstruct over the whole
                    library instead of the selection)
``uniqueness``      ``q`` (list), ``rtol``, ``subset_budget``, ``strategy``,
                    ``library_audit``
``sv_scan``         ``q`` (list), ``normalize``, ``kernel_only``, ``budget``
                    (max dense entries per block)
``sv_ensemble``     ``Ns``, ``Nf_list``, ``trials``, ``q``, ``profiles``
                    (library | random)
``render``          ``input`` (CAST path), ``mapping`` (species -> R/G/B),
                    ``transform`` (magnitude | magnitude2)

Relative paths are resolved against the directory of the config file.
"""
from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .errors import ConfigError
from .kernel import ImagingGeometry
from .recon import ReconConfig
from .scatter import PointScatterer, SimulationConfig

__all__ = [
    "load_config",
    "apply_overrides",
    "geometry_from",
    "recon_config_from",
    "simulation_config_from",
    "load_phantom",
    "write_phantom",
    "resolve_path",
]

KNOWN = {"seed", "workers", "geometry", "kernel", "spectra", "simulation", "recon",
         "uniqueness", "sv_scan", "sv_ensemble", "render"}
RECON_KEYS = {"regularizer", "lambda_r", "max_iters", "cg_tol", "lambda_scale",
              "power_iters", "restart"}


def load_config(path, overrides=()) -> dict:
    """Parse a YAML run file and apply ``key.sub=value`` overrides."""
    path = Path(path)
    try:
        cfg = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    cfg = apply_overrides(cfg, overrides)
    unknown = set(cfg) - KNOWN - {"_base"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg["_base"] = str(path.resolve().parent)
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """Return a copy of ``cfg`` with each ``a.b.c=value`` set (value parsed as YAML)."""
    out = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"bad override value {raw!r}") from exc
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = value
    return out


def resolve_path(cfg: dict, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return sec


def geometry_from(cfg: dict) -> ImagingGeometry:
    g = _section(cfg, "geometry")
    if not g:
        raise ConfigError("missing 'geometry' section")
    try:
        return ImagingGeometry.from_dict(g)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid geometry: {exc}") from exc


def recon_config_from(cfg: dict) -> ReconConfig:
    r = _section(cfg, "recon")
    kw = {k: v for k, v in r.items() if k in RECON_KEYS}
    kw["seed"] = int(cfg.get("seed", 0))
    kw["workers"] = cfg.get("workers")
    if kw.get("regularizer") in ("l1", "group-l21"):
        kw.setdefault("lambda_r", 1e-3)
        kw.setdefault("max_iters", 2000)
    try:
        return ReconConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid recon section: {exc}") from exc


def load_phantom(path) -> list:
    """Scatterer list from a YAML file with a top-level ``scatterers`` list."""
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read phantom {path}: {exc}") from exc
    return _scatterers(doc.get("scatterers", []))


def _scatterers(items) -> list:
    out = []
    try:
        for it in items:
            out.append(PointScatterer(float(it["x"]), float(it["z"]), int(it["species"]),
                                      float(it.get("strength", 1.0))))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scatterer entry: {exc}") from exc
    return out


def write_phantom(path, scatterers) -> None:
    doc = {"scatterers": [
        {"x": float(s.x), "z": float(s.z), "species": int(s.species), "strength": float(s.strength)}
        for s in scatterers
    ]}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")


def simulation_config_from(cfg: dict, geometry: ImagingGeometry):
    """``(SimulationConfig, scatterers)`` from the ``simulation`` section."""
    sim = _section(cfg, "simulation")
    if "phantom" in sim:
        scatterers = load_phantom(resolve_path(cfg, sim["phantom"]))
    else:
        scatterers = _scatterers(sim.get("scatterers", []))
    noise = sim.get("spectral_noise", 0.0)
    try:
        sc = SimulationConfig(
            geometry=geometry,
            mode=sim.get("mode", "born"),
            spectral_noise=tuple(noise) if isinstance(noise, (list, tuple)) else (float(noise),),
            seed=int(cfg.get("seed", 0)),
            delta=float(sim.get("delta", 1.0)),
            nodes=int(sim.get("nodes", 129)),
            workers=cfg.get("workers"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid simulation section: {exc}") from exc
    return sc, scatterers
