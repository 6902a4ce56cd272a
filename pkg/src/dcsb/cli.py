"""Command-line front end: ``simulate``, ``poles``, ``sweep`` and ``compare``.

Configuration precedence is flags > config file > defaults. Every CSV is
written next to a ``<out>.meta.json`` record holding the resolved
configuration, so a run can be repeated exactly.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bath import PhysParams
from .dynamics import (build_rational, coherence_report, find_poles, invert_talbot,
                       reconstruct_exact, reconstruct_time, refine_poles_exact,
                       track_modes_path)
from .errors import ConfigError, DcsbError, DomainError, NumericalError, OracleMismatch
from .kernels import KernelConfig

__all__ = ["RunConfig", "parse_config", "main", "fmt", "write_csv", "read_metadata"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# CLI spelling -> internal spelling
_MODEL = {"dc": "DC", "sb": "SB", "nn": "NN"}
_F_MODE = {"high-t": "high_t", "exact": "exact"}
_SCALE = {"calibrated": "calibrated", "paper": "paper_literal"}
_GAMMA_EFF = {"scaled": "scaled", "literal": "literal"}
_FC_EXP = {"paper": "paper", "rederived": "rederived"}
_TIME_BATH = {"cutoff": "cutoff", "scaling": "scaling"}

_CHOICES = {
    "model": _MODEL,
    "f_mode": _F_MODE,
    "kernel_scale": _SCALE,
    "gamma_eff": _GAMMA_EFF,
    "fc_exponent": _FC_EXP,
    "time_bath": _TIME_BATH,
}
_FLOATS = ("gamma", "zeta", "kt_mev", "delta_mev", "omega_c_mev", "t_max")
_INTS = ("n_points", "jobs")
_STRINGS = ("out", "gamma_range", "zeta_list", "models")
KEYS = _FLOATS + _INTS + _STRINGS + tuple(_CHOICES)

TALBOT_CHECK_POINTS = 21
TALBOT_TOL = 1e-4


@dataclass
class RunConfig:
    """Resolved run configuration."""

    params: PhysParams = field(default_factory=PhysParams)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    t_max: float = 500.0
    n_points: int = 1001
    gamma_range: tuple | None = None      # (start, stop, count)
    zeta_list: tuple = (0.0,)
    models: tuple = ("dc", "nn")
    out: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise ConfigError("t_max must be positive")
        if self.n_points < 2:
            raise ConfigError("n_points must be at least 2")
        if self.gamma_range is not None and self.gamma_range[2] < 2:
            raise ConfigError("sweep count must be at least 2")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        bad = set(self.models) - set(_MODEL)
        if bad:
            raise ConfigError(f"unknown models {sorted(bad)}")

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_points)

    def gammas(self) -> np.ndarray:
        start, stop, count = self.gamma_range
        return np.linspace(start, stop, count)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "kt_mev": p.kT, "delta_mev": p.delta, "omega_c_mev": p.omega_c,
            "gamma": p.gamma, "zeta": p.zeta,
            "kernel": self.kernel.to_dict(),
            "t_max": self.t_max, "n_points": self.n_points,
            "gamma_range": list(self.gamma_range) if self.gamma_range else None,
            "zeta_list": list(self.zeta_list), "models": list(self.models),
            "out": self.out, "jobs": self.jobs,
        }


# ---------------------------------------------------------------------------
# configuration

def _read_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path!r} not found")
    out = {}
    for no, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"{path}:{no}: unknown key {key!r}")
        out[key] = (value, f"{path}:{no}")
    return out


def _convert(key: str, value, where: str):
    try:
        if key in _FLOATS:
            v = float(value)
            if not math.isfinite(v):
                raise ValueError
            return v
        if key in _INTS:
            return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: {key} needs a number, got {value!r}") from None
    if key in _CHOICES:
        table = _CHOICES[key]
        if value not in table:
            raise ConfigError(f"{where}: {key} must be one of {sorted(table)}, got {value!r}")
        return table[value]
    return value


def _parse_range(spec: str, where: str) -> tuple:
    parts = spec.split(":")
    try:
        if len(parts) != 3:
            raise ValueError
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"{where}: gamma range must be start:stop:count, got {spec!r}") from None
    if count < 2:
        raise ConfigError(f"{where}: sweep count must be at least 2")
    if not (0.0 <= start <= stop):
        raise ConfigError(f"{where}: gamma range needs 0 <= start <= stop")
    return (start, stop, count)


def _parse_list(spec: str, where: str, conv=float) -> tuple:
    try:
        items = tuple(conv(s.strip()) for s in spec.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse list {spec!r}") from None
    if not items:
        raise ConfigError(f"{where}: empty list")
    return items


def parse_config(path: str | None = None, flags: dict | None = None) -> RunConfig:
    """Merge defaults, an optional config file and flag values.

    Parameters
    ----------
    path : str, optional
        Config file with ``key = value`` lines and ``#`` comments.
    flags : dict, optional
        Flag values keyed like the file; ``None`` entries are ignored.

    Raises
    ------
    ConfigError
        Unknown keys, malformed values or violated parameter invariants.
    """
    raw = _read_file(path) if path else {}
    for k, v in (flags or {}).items():
        if v is None:
            continue
        if k not in KEYS:
            raise ConfigError(f"unknown option {k!r}")
        raw[k] = (v, "--" + k.replace("_", "-"))
    vals = {k: _convert(k, str(v), where) for k, (v, where) in raw.items()}
    where = {k: w for k, (_, w) in raw.items()}

    pmap = {"kt_mev": "kT", "delta_mev": "delta", "omega_c_mev": "omega_c",
            "gamma": "gamma", "zeta": "zeta"}
    try:
        params = PhysParams(**{pmap[k]: vals[k] for k in pmap if k in vals})
    except DomainError as exc:
        src = ", ".join(where[k] for k in pmap if k in vals) or "defaults"
        raise ConfigError(f"{src}: {exc}") from None
    kmap = {"model": "variant", "f_mode": "f_mode", "kernel_scale": "kernel_scale",
            "gamma_eff": "gamma_eff_mode", "fc_exponent": "exponent_mode",
            "time_bath": "time_bath"}
    try:
        kernel = KernelConfig(**{kmap[k]: vals[k] for k in kmap if k in vals})
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    kw = {}
    for k in ("t_max", "n_points", "out", "jobs"):
        if k in vals:
            kw[k] = vals[k]
    if "gamma_range" in vals:
        kw["gamma_range"] = _parse_range(vals["gamma_range"], where["gamma_range"])
    if "zeta_list" in vals:
        kw["zeta_list"] = _parse_list(vals["zeta_list"], where["zeta_list"])
        if any(z < 0 for z in kw["zeta_list"]):
            raise ConfigError(f"{where['zeta_list']}: zeta values must be nonnegative")
    if "models" in vals:
        kw["models"] = _parse_list(vals["models"], where["models"], conv=str)
    return RunConfig(params=params, kernel=kernel, **kw)


# ---------------------------------------------------------------------------
# output

def fmt(x: float) -> str:
    """17 significant digits, lowercase exponent."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x + 0.0:.16e}"  # + 0.0 folds -0.0 into 0.0


def write_csv(path: str | Path, header: list, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else fmt(c) for c in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_meta(path: str | Path, cfg: RunConfig, command: str, started: float,
                extra: dict) -> None:
    meta = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "duration_s": time.perf_counter() - started,
        **extra,
    }
    with open(str(path) + ".meta.json", "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_metadata(csv_path: str | Path) -> dict:
    with open(str(csv_path) + ".meta.json") as fh:
        return json.load(fh)


def config_from_metadata(meta: dict) -> RunConfig:
    """Rebuild the RunConfig recorded in a metadata record."""
    c = meta["config"]
    k = c["kernel"]
    return RunConfig(
        params=PhysParams(kT=c["kt_mev"], delta=c["delta_mev"], omega_c=c["omega_c_mev"],
                          gamma=c["gamma"], zeta=c["zeta"]),
        kernel=KernelConfig(**k),
        t_max=c["t_max"], n_points=c["n_points"],
        gamma_range=tuple(c["gamma_range"]) if c["gamma_range"] else None,
        zeta_list=tuple(c["zeta_list"]), models=tuple(c["models"]),
        out=c["out"], jobs=c["jobs"])


# ---------------------------------------------------------------------------
# commands

def _pole_set(params: PhysParams, kernel: KernelConfig):
    ps = find_poles(build_rational(params, kernel.replace(f_mode="high_t")))
    if kernel.f_mode == "exact":
        ps = refine_poles_exact(params, kernel, ps)
    return ps


def _trace(params: PhysParams, kernel: KernelConfig, ps, grid):
    if kernel.f_mode == "exact":
        return reconstruct_exact(params, kernel, ps, grid)
    return reconstruct_time(ps, grid)


def _model_params(cfg: RunConfig, model: str) -> tuple[PhysParams, KernelConfig]:
    # SB and NN are zeta = 0 models
    p = cfg.params if model == "dc" else cfg.params.replace(zeta=0.0)
    return p, cfg.kernel.replace(variant=_MODEL[model])


def cmd_simulate(cfg: RunConfig) -> tuple[list, list, dict]:
    grid = cfg.grid()
    ps = _pole_set(cfg.params, cfg.kernel)
    tr = _trace(cfg.params, cfg.kernel, ps, grid)
    idx = np.unique(np.linspace(0, grid.size - 1, TALBOT_CHECK_POINTS).round().astype(int))
    tal = invert_talbot(cfg.params, cfg.kernel, grid[idx])
    diff = float(np.max(np.abs(tal.values - tr.values[idx])))
    if diff > TALBOT_TOL:
        raise OracleMismatch(f"pole-residue and Talbot traces differ by {diff:.3e}")
    rows = list(zip(grid, tr.values))
    meta = {"oracle": {"talbot_points": int(idx.size), "max_abs_diff": diff},
            "missing_weight": ps.missing_weight, "trace": dict(tr.meta)}
    return ["t_ps", "sigma_z"], rows, meta


def cmd_poles(cfg: RunConfig) -> tuple[list, list, dict]:
    ps = _pole_set(cfg.params, cfg.kernel)
    items = []
    for lam, res in zip(ps.poles, ps.residues):
        if not np.isfinite(res):
            continue
        tau = math.inf if abs(lam.real) < 1e-12 else 1.0 / abs(lam.real)
        items.append((-abs(res), -lam.imag, lam.real, lam, res, tau))
    items.sort(key=lambda it: it[:3])
    rows = [(it[3].real, it[3].imag, it[4].real, it[4].imag, it[5], abs(it[3].imag))
            for it in items]
    meta = {"n_poles": len(rows), "residue_sum": float(np.sum(ps.residues).real),
            "flags": [str(f) for f in ps.flags]}
    return (["re_per_ps", "im_per_ps", "residue_re", "residue_im", "tau_ps", "freq_per_ps"],
            rows, meta)


def _sweep_one(args) -> tuple[list, int]:
    params, kernel, zeta, gammas = args
    p = params.replace(zeta=zeta)
    rows, omitted = [], 0
    for g, states in zip(gammas, track_modes_path(p, kernel, gammas)):
        for idx in sorted(states):
            st = states[idx]
            if not st.alive:
                omitted += 1
                continue
            re = abs(st.pole.real)
            tau = math.inf if re < 1e-12 else 1.0 / re
            rows.append((float(g), float(zeta), idx, tau, float(st.pole.imag), float(abs(st.residue))))
    return rows, omitted


def cmd_sweep(cfg: RunConfig) -> tuple[list, list, dict]:
    if cfg.gamma_range is None:
        raise ConfigError("sweep needs --gamma-range start:stop:count")
    gammas = [float(g) for g in cfg.gammas()]
    zetas = sorted(set(cfg.zeta_list))
    if cfg.kernel.variant in ("SB", "NN") and any(z != 0.0 for z in zetas):
        raise ConfigError(f"the {cfg.kernel.variant} model needs zeta = 0")
    tasks = [(cfg.params, cfg.kernel, z, gammas) for z in zetas]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(tasks))) as ex:
            results = list(ex.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    rows = [r for rs, _ in results for r in rs]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    omitted = sum(o for _, o in results)
    out = [(g, z, str(i), tau, f, res) for g, z, i, tau, f, res in rows]
    return (["gamma", "zeta", "mode_index", "tau_ps", "freq_per_ps", "residue_mag"], out,
            {"omitted_rows": omitted})


def cmd_compare(cfg: RunConfig) -> tuple[list, list, dict]:
    grid = cfg.grid()
    cols, meta = [], {}
    for model in cfg.models:
        p, k = _model_params(cfg, model)
        ps = _pole_set(p, k)
        cols.append(_trace(p, k, ps, grid).values)
        rep = coherence_report(ps)
        dom = rep.dominant()
        meta[model] = {"dominant_freq": dom.freq if dom else None,
                       "longest_tau": rep.longest().tau_phi if rep.longest() else None}
    rows = [(t, *vals) for t, *vals in zip(grid, *cols)]
    return ["t_ps", *cfg.models], rows, {"models": meta}


COMMANDS = {"simulate": cmd_simulate, "poles": cmd_poles, "sweep": cmd_sweep,
            "compare": cmd_compare}


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    for name in ("gamma", "zeta", "kt-mev", "delta-mev", "omega-c-mev"):
        common.add_argument(f"--{name}", metavar="X")
    common.add_argument("--model", choices=sorted(_MODEL))
    common.add_argument("--f-mode", choices=sorted(_F_MODE))
    common.add_argument("--kernel-scale", choices=sorted(_SCALE))
    common.add_argument("--gamma-eff", choices=sorted(_GAMMA_EFF))
    common.add_argument("--fc-exponent", choices=sorted(_FC_EXP))
    common.add_argument("--time-bath", choices=sorted(_TIME_BATH))
    common.add_argument("--t-max", metavar="PS")
    common.add_argument("--n-points", metavar="N")
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--jobs", metavar="N")

    parser = argparse.ArgumentParser(
        prog="dcsb", description="Dual-coupling spin-boson dynamics (NIBA).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="<sigma_z(t)> trace")
    sub.add_parser("poles", parents=[common], help="pole and residue table")
    sw = sub.add_parser("sweep", parents=[common], help="coherence times versus gamma")
    sw.add_argument("--gamma-range", metavar="START:STOP:COUNT")
    sw.add_argument("--zeta-list", metavar="Z1,Z2,...")
    cp = sub.add_parser("compare", parents=[common], help="traces of several models")
    cp.add_argument("--models", metavar="M1,M2,...")
    return parser


def _flag_dict(ns: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(ns).items()
            if k not in ("command", "config") and v is not None}


def main(argv: list | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    started = time.perf_counter()
    try:
        cfg = parse_config(ns.config, _flag_dict(ns))
        header, rows, extra = COMMANDS[ns.command](cfg)
        if cfg.out:
            write_csv(cfg.out, header, rows)
            _write_meta(cfg.out, cfg, ns.command, started, extra)
        else:
            lines = [",".join(header)]
            lines += [",".join(c if isinstance(c, str) else fmt(c) for c in r) for r in rows]
            sys.stdout.write("\n".join(lines) + "\n")
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DcsbError as exc:  # pragma: no cover - every subclass is handled above
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main_entry() -> None:
    """Console-script entry point."""
    sys.exit(main())
