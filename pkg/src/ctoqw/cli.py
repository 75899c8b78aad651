"""Command-line harness: JSON configs, experiment orchestration, CSV output.

Subcommands: validate | master | sample | clt | ldp | reproduce-example.
Every run writes its outputs plus a ``manifest.json`` echoing the config
and checksumming each output file.  Stochastic experiments are
reproducible: equal root seeds give byte-identical data CSVs for any
``--threads`` value.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, examples, limits, master, spectral, trajectory
from .model import WalkModel, build_model, model_from_d0, max_rate

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "emit_csv", "run_experiment", "main"]

KINDS = ("validate", "master", "sample", "clt", "ldp", "reproduce-example")


class ConfigError(Exception):
    """Carries every validation problem found in a config, not just the first."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass
class ExperimentConfig:
    kind: str
    model: WalkModel | None
    example: int | None = None
    t_max: float = 10.0
    dt: float | None = None
    n_paths: int = 1000
    checkpoints: list[float] | None = None
    u_grid: np.ndarray | None = None
    x_grid: np.ndarray | None = None
    root_seed: int = 0
    threads: int = 1
    export_paths: int = 0
    export_state: bool = False
    initial_state: np.ndarray | None = None
    initial_site: list[int] | None = None
    interval_lower: list[float] | None = None
    interval_upper: list[float] | None = None
    t_list: list[float] | None = None
    output_dir: str | None = None
    raw: dict = field(default_factory=dict)


def _entry_to_complex(entry, where: str, errors: list[str]) -> complex:
    if isinstance(entry, (int, float)):
        return complex(entry)
    if (
        isinstance(entry, (list, tuple))
        and len(entry) == 2
        and all(isinstance(v, (int, float)) for v in entry)
    ):
        return complex(entry[0], entry[1])
    errors.append(f"{where}: matrix entry must be a number or an [re, im] pair, got {entry!r}")
    return complex(0)


def _matrix_from_json(obj, where: str, errors: list[str]) -> np.ndarray | None:
    if not isinstance(obj, list) or not obj or not all(isinstance(r, list) for r in obj):
        errors.append(f"{where}: expected a nested list of rows")
        return None
    ncols = len(obj[0])
    if ncols == 0 or any(len(r) != ncols for r in obj):
        errors.append(f"{where}: rows have inconsistent lengths")
        return None
    before = len(errors)
    mat = np.array(
        [[_entry_to_complex(e, f"{where}[{i}][{j}]", errors) for j, e in enumerate(row)] for i, row in enumerate(obj)]
    )
    return None if len(errors) > before else mat


def _model_from_config(obj, errors: list[str]) -> WalkModel | None:
    if not isinstance(obj, dict):
        errors.append("model: expected an object")
        return None
    d = obj.get("d", 1)
    if not isinstance(d, int) or d < 1:
        errors.append(f"model.d: expected a positive integer, got {d!r}")
        return None
    ops_raw = obj.get("jump_ops")
    if not isinstance(ops_raw, list) or len(ops_raw) != 2 * d:
        errors.append(f"model.jump_ops: expected a list of {2 * d} matrices for d={d}")
        return None
    ops = []
    for i, m in enumerate(ops_raw):
        mat = _matrix_from_json(m, f"model.jump_ops[{i}]", errors)
        if mat is not None:
            ops.append(mat)
    if len(ops) != 2 * d:
        return None
    has_d0 = "d0" in obj
    has_h = "hamiltonian" in obj
    if has_d0 and has_h:
        errors.append("model: give either d0 or hamiltonian, not both")
        return None
    try:
        if has_d0:
            d0 = _matrix_from_json(obj["d0"], "model.d0", errors)
            if d0 is None:
                return None
            return model_from_d0(d, d0, ops)
        if has_h:
            h = _matrix_from_json(obj["hamiltonian"], "model.hamiltonian", errors)
            if h is None:
                return None
            return build_model(d, h, ops)
        return build_model(d, np.zeros((ops[0].shape[0],) * 2), ops)
    except ValueError as exc:
        errors.append(f"model: {exc}")
        return None


def _resolve_grid(spec, d: int, center, where: str, errors: list[str]) -> np.ndarray | None:
    """Grid spec: explicit point list, or {start, stop, count, mode}.

    ``mode`` is "lines" (default: axis-aligned lines through ``center``)
    or "product" (full tensor grid).
    """
    if spec is None:
        return None
    if isinstance(spec, list):
        pts = np.atleast_2d(np.asarray(spec, dtype=float))
        if d == 1 and pts.shape[0] == 1 and pts.shape[1] > 1:
            pts = pts.T
        if pts.shape[1] != d:
            errors.append(f"{where}: points must have {d} coordinates")
            return None
        return pts
    if isinstance(spec, dict):
        try:
            start = float(spec["start"])
            stop = float(spec["stop"])
            count = int(spec.get("count", 41))
        except (KeyError, TypeError, ValueError):
            errors.append(f"{where}: grid object needs numeric start/stop and integer count")
            return None
        if count < 2 or stop <= start:
            errors.append(f"{where}: need stop > start and count >= 2")
            return None
        line = np.linspace(start, stop, count)
        if d == 1:
            return line.reshape(-1, 1)
        mode = spec.get("mode", "lines")
        if mode == "product":
            mesh = np.meshgrid(*([line] * d), indexing="ij")
            return np.stack([m.ravel() for m in mesh], axis=-1)
        if mode == "lines":
            center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
            rows = []
            for axis in range(d):
                pts = np.tile(center, (count, 1))
                pts[:, axis] = line
                rows.append(pts)
            return np.concatenate(rows)
        errors.append(f"{where}: unknown grid mode {mode!r}")
        return None
    errors.append(f"{where}: expected a point list or a grid object")
    return None


def parse_config(text: str, kind: str | None = None) -> ExperimentConfig:
    """Parse and validate a JSON experiment config.

    Raises :class:`ConfigError` carrying the full list of problems.
    """
    errors: list[str] = []
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"])

    cfg_kind = raw.get("kind", kind)
    if cfg_kind is None:
        errors.append("missing experiment kind")
        cfg_kind = "validate"
    elif cfg_kind not in KINDS:
        errors.append(f"unknown experiment kind {cfg_kind!r}; expected one of {KINDS}")
    if kind is not None and raw.get("kind") is not None and raw["kind"] != kind:
        errors.append(f"config kind {raw['kind']!r} does not match subcommand {kind!r}")

    model = None
    example = raw.get("example")
    if cfg_kind == "reproduce-example":
        if example not in examples.BUILTIN_INDICES:
            errors.append(f"example: expected one of {examples.BUILTIN_INDICES}, got {example!r}")
        else:
            model = examples.builtin_model(example)
    elif "model" in raw:
        model = _model_from_config(raw["model"], errors)
    else:
        errors.append("missing model description")

    cfg = ExperimentConfig(kind=cfg_kind, model=model, example=example, raw=raw)

    def grab(name, caster, default, check=None, msg=""):
        if name not in raw:
            return default
        try:
            v = caster(raw[name])
        except (TypeError, ValueError):
            errors.append(f"{name}: {msg or 'invalid value'} ({raw[name]!r})")
            return default
        if check is not None and not check(v):
            errors.append(f"{name}: {msg or 'invalid value'} ({raw[name]!r})")
            return default
        return v

    cfg.t_max = grab("t_max", float, cfg.t_max, lambda v: v >= 0 and math.isfinite(v), "must be a finite nonnegative number")
    cfg.dt = grab("dt", float, cfg.dt, lambda v: v > 0, "must be positive")
    cfg.n_paths = grab("n_paths", int, cfg.n_paths, lambda v: v >= 1, "must be a positive integer")
    cfg.root_seed = grab("root_seed", int, cfg.root_seed, lambda v: 0 <= v < 2**64, "must fit in uint64")
    cfg.export_paths = grab("export_paths", int, cfg.export_paths, lambda v: v >= 0, "must be >= 0")
    cfg.export_state = grab("export_state", bool, cfg.export_state)
    if "checkpoints" in raw:
        try:
            cps = sorted(float(c) for c in raw["checkpoints"])
            if any(not math.isfinite(c) or c < 0 for c in cps):
                raise ValueError
            cfg.checkpoints = cps
        except (TypeError, ValueError):
            errors.append(f"checkpoints: expected nonnegative numbers, got {raw['checkpoints']!r}")
    if cfg.checkpoints and cfg.checkpoints[-1] > cfg.t_max:
        errors.append("checkpoints: must not exceed t_max")
    if "t_list" in raw:
        try:
            cfg.t_list = [float(t) for t in raw["t_list"]]
            if any(t <= 0 for t in cfg.t_list):
                raise ValueError
        except (TypeError, ValueError):
            errors.append(f"t_list: expected positive numbers, got {raw['t_list']!r}")

    if model is not None:
        d, n = model.d, model.n
        if "initial_state" in raw:
            m = _matrix_from_json(raw["initial_state"], "initial_state", errors)
            if m is not None:
                if m.shape != (n, n):
                    errors.append(f"initial_state: expected {n}x{n}")
                else:
                    cfg.initial_state = m
        if "initial_site" in raw:
            site = raw["initial_site"]
            if not isinstance(site, list) or len(site) != d or not all(isinstance(v, int) for v in site):
                errors.append(f"initial_site: expected {d} integers")
            else:
                cfg.initial_site = site
        cfg.u_grid = _resolve_grid(raw.get("u_grid"), d, None, "u_grid", errors)
        cfg.x_grid = _resolve_grid(raw.get("x_grid"), d, None, "x_grid", errors)
        for name in ("interval_lower", "interval_upper"):
            if name in raw:
                v = raw[name]
                if not isinstance(v, list) or len(v) != d:
                    errors.append(f"{name}: expected {d} numbers")
                else:
                    setattr(cfg, name, [float(c) for c in v])
    out = raw.get("output_dir")
    if out is not None and not isinstance(out, str):
        errors.append("output_dir: expected a string")
    else:
        cfg.output_dir = out

    if errors:
        raise ConfigError(errors)
    return cfg


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def emit_csv(header, rows, path: Path) -> None:
    """Write a rectangular table: comma-separated, 17 significant digits."""
    ncols = len(header)
    lines = [",".join(str(h) for h in header)]
    for row in rows:
        if len(row) != ncols:
            raise ValueError(f"row of width {len(row)} in a {ncols}-column table")
        vals = []
        for v in row:
            if isinstance(v, (float, np.floating)) and not math.isfinite(v):
                raise ValueError("non-finite value in CSV table")
            vals.append(_fmt(v))
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class _Outputs:
    """Tracks written files so partial results vanish when a run fails."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files: list[Path] = []

    def csv(self, name: str, header, rows) -> None:
        path = self.dir / name
        emit_csv(header, rows, path)
        self.files.append(path)

    def cleanup(self) -> None:
        for f in self.files:
            f.unlink(missing_ok=True)


def _init_for(cfg: ExperimentConfig):
    model = cfg.model
    rho = cfg.initial_state
    if rho is None:
        rho = np.eye(model.n, dtype=complex) / model.n
    else:
        tr = np.trace(rho).real
        if tr <= 0:
            raise ValueError("initial_state must have positive trace")
        rho = rho / tr
    site = cfg.initial_site or [0] * model.d
    return rho, np.asarray(site, dtype=np.int64)


def _site_header(d: int) -> list[str]:
    return [f"i_{k + 1}" for k in range(d)]


def _run_validate(cfg: ExperimentConfig, out: _Outputs) -> int:
    model = cfg.model
    gram = sum(op.conj().T @ op for op in model.jump_ops)
    identity_res = float(np.linalg.norm(model.d0 + model.d0.conj().T + gram))
    herm_res = float(np.linalg.norm(model.hamiltonian - model.hamiltonian.conj().T))
    rep = spectral.stationary_state(model)
    irr, dim = spectral.irreducibility_check(model)
    rows = [
        ("trace_preservation_residual", identity_res, identity_res <= 1e-12),
        ("hamiltonian_hermiticity_residual", herm_res, herm_res <= 1e-12),
        ("stationary_kernel_dim", rep.kernel_dim, rep.kernel_dim == 1),
        ("stationary_unique", int(rep.unique), rep.unique),
        ("stationary_residual", rep.residual if rep.unique else float("nan"), rep.unique),
        ("irreducible", int(irr), irr),
        ("jump_algebra_dim", dim, True),
        ("max_jump_rate", max_rate(model), True),
    ]
    table = []
    for name, value, ok in rows:
        if isinstance(value, float) and math.isnan(value):
            value = -1.0
        table.append((name, value, "pass" if ok else "fail"))
    out.csv("validation.csv", ["check", "value", "status"], table)
    return 0 if identity_res <= 1e-12 and herm_res <= 1e-12 else 1


def _run_master(cfg: ExperimentConfig, out: _Outputs) -> int:
    model = cfg.model
    rho, site = _init_for(cfg)
    state = master.LatticeState.localized(model.d, site, rho)
    cps = cfg.checkpoints or [cfg.t_max]
    moments = []
    t_prev = 0.0
    for k, t in enumerate(cps):
        state = master.evolve(model, state, t - t_prev, cfg.dt)
        t_prev = t
        dist = master.site_distribution(state)
        rows = [(*s, w) for s, w in sorted(dist.weights.items())]
        out.csv(f"dist_cp{k}.csv", _site_header(model.d) + ["weight"], rows)
        mean, cov = master.distribution_moments(dist)
        moments.append(
            (t, *mean, *cov.ravel(), dist.leaked_mass)
        )
    mh = ["t"] + [f"mean_{i + 1}" for i in range(model.d)]
    mh += [f"cov_{i + 1}{j + 1}" for i in range(model.d) for j in range(model.d)]
    mh += ["leaked_mass"]
    out.csv("moments.csv", mh, moments)
    return 0


def _run_sample(cfg: ExperimentConfig, out: _Outputs) -> int:
    model = cfg.model
    rho, site = _init_for(cfg)
    cps = cfg.checkpoints or [cfg.t_max]
    stats = trajectory.run_ensemble(
        model, (rho, site), cfg.t_max, cps, cfg.n_paths, cfg.root_seed, threads=cfg.threads
    )
    head = ["t"] + [f"mean_{i + 1}" for i in range(model.d)]
    head += [f"cov_{i + 1}{j + 1}" for i in range(model.d) for j in range(model.d)]
    rows = [
        (t, *stats.mean[c], *stats.covariance[c].ravel())
        for c, t in enumerate(stats.checkpoints)
    ]
    out.csv("ensemble.csv", head, rows)
    for c in range(len(stats.checkpoints)):
        counts = stats.counts[c]
        rows = [(*s, cnt, cnt / stats.sample_count) for s, cnt in sorted(counts.items())]
        out.csv(f"histogram_cp{c}.csv", _site_header(model.d) + ["count", "frequency"], rows)
    n = model.n
    out.csv(
        "pooled_state.csv",
        ["row", "col", "re", "im"],
        [
            (i + 1, j + 1, stats.pooled_state[i, j].real, stats.pooled_state[i, j].imag)
            for i in range(n)
            for j in range(n)
        ],
    )
    for k in range(min(cfg.export_paths, cfg.n_paths)):
        # replay path k of the ensemble, events and all, from its own stream
        path = trajectory.replay_path(model, (rho, site), cfg.t_max, cfg.root_seed, k)
        head = ["time", "channel"] + [f"x_{i + 1}" for i in range(model.d)]
        if cfg.export_state:
            head += [
                f"rho_{i + 1}{j + 1}_{p}" for i in range(n) for j in range(n) for p in ("re", "im")
            ]
        rows = []

        def state_cols(mat):
            if not cfg.export_state:
                return ()
            return tuple(
                v for i in range(n) for j in range(n) for v in (mat[i, j].real, mat[i, j].imag)
            )

        rows.append((0.0, 0, *path.initial_position, *state_cols(path.initial_state)))
        for ev in path.events:
            rows.append((ev.time, ev.channel, *ev.position, *state_cols(ev.state)))
        out.csv(f"path_{k}.csv", head, rows)
    return 0


def _clt_rows(model: WalkModel, rep: limits.CltReport):
    d, n = model.d, model.n
    rows = []
    for i in range(d):
        rows.append((f"drift_{i + 1}", rep.drift[i]))
    for i in range(d):
        for j in range(d):
            rows.append((f"variance_{i + 1}{j + 1}", rep.covariance[i, j]))
    for q in range(d):
        rows.append((f"poisson_residual_{q + 1}", rep.residuals[q]))
        for i in range(n):
            for j in range(n):
                rows.append((f"poisson{q + 1}_{i + 1}{j + 1}_re", rep.poisson[q][i, j].real))
                rows.append((f"poisson{q + 1}_{i + 1}{j + 1}_im", rep.poisson[q][i, j].imag))
    for i in range(n):
        for j in range(n):
            rows.append((f"stationary_{i + 1}{j + 1}_re", rep.stationary[i, j].real))
            rows.append((f"stationary_{i + 1}{j + 1}_im", rep.stationary[i, j].imag))
    return rows


def _run_clt(cfg: ExperimentConfig, out: _Outputs) -> int:
    rep = limits.clt_report(cfg.model)
    out.csv("clt.csv", ["name", "value"], _clt_rows(cfg.model, rep))
    return 0


def _run_ldp(cfg: ExperimentConfig, out: _Outputs) -> int:
    model = cfg.model
    irr, dim = spectral.irreducibility_check(model)
    if not irr:
        raise ArithmeticError(
            f"jump channels act reducibly (algebra dimension {dim} < {model.n ** 2}); "
            "no large-deviation analysis"
        )
    rep = limits.clt_report(model)
    curve = spectral.DeformationCurve(model)
    u_grid = cfg.u_grid
    if u_grid is None:
        u_grid = _default_lines(model.d, np.zeros(model.d), 2.0, 41)
    out.csv(
        "scgf.csv",
        [f"u_{i + 1}" for i in range(model.d)] + ["scgf"],
        curve.sample(u_grid),
    )
    x_grid = cfg.x_grid
    if x_grid is None:
        x_grid = _default_lines(model.d, rep.drift, 1.0, 41)
    samples = limits.rate_function_samples(model, x_grid, curve=curve)
    rows = [
        (*samples.points[i], samples.values[i] if math.isfinite(samples.values[i]) else math.inf, int(samples.converged[i]))
        for i in range(samples.points.shape[0])
        if math.isfinite(samples.values[i])
    ]
    out.csv(
        "rate.csv",
        [f"x_{i + 1}" for i in range(model.d)] + ["rate", "converged"],
        rows,
    )
    if cfg.interval_lower is not None or cfg.interval_upper is not None:
        t_list = cfg.t_list or [cfg.t_max]
        ldp = limits.empirical_ldp(
            model,
            cfg.interval_lower,
            cfg.interval_upper,
            t_list,
            cfg.n_paths,
            cfg.root_seed,
            threads=cfg.threads,
        )
        rows = [
            (
                e.time,
                e.hits,
                e.n_paths,
                e.rate if e.rate is not None else -1.0,
                e.rate_lower_bound,
                ldp.rate_infimum,
            )
            for e in ldp.estimates
        ]
        out.csv(
            "empirical.csv",
            ["t", "hits", "n_paths", "rate", "rate_lower_bound", "grid_rate_infimum"],
            rows,
        )
    return 0


def _default_lines(d: int, center: np.ndarray, half_width: float, count: int) -> np.ndarray:
    rows = []
    for axis in range(d):
        line = np.linspace(center[axis] - half_width, center[axis] + half_width, count)
        pts = np.tile(np.asarray(center, dtype=float), (count, 1))
        pts[:, axis] = line
        rows.append(pts)
    return np.concatenate(rows)


def _run_reproduce(cfg: ExperimentConfig, out: _Outputs) -> int:
    rc = _run_validate(cfg, out)
    _run_clt(cfg, out)
    _run_ldp(cfg, out)
    return rc


_RUNNERS = {
    "validate": _run_validate,
    "master": _run_master,
    "sample": _run_sample,
    "clt": _run_clt,
    "ldp": _run_ldp,
    "reproduce-example": _run_reproduce,
}


def run_experiment(cfg: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    """Run one experiment; returns the manifest written to the output dir."""
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    cfg.threads = max(1, threads)
    outputs = _Outputs(out_path)
    started = time.perf_counter()
    try:
        rc = _RUNNERS[cfg.kind](cfg, outputs)
    except Exception:
        outputs.cleanup()
        raise
    checksums = {
        f.name: hashlib.sha256(f.read_bytes()).hexdigest() for f in outputs.files
    }
    manifest = {
        "version": __version__,
        "kind": cfg.kind,
        "config": cfg.raw,
        "effective": {  # resolved values, including defaults and overrides
            "root_seed": cfg.root_seed,
            "t_max": cfg.t_max,
            "dt": cfg.dt,
            "n_paths": cfg.n_paths,
            "checkpoints": cfg.checkpoints,
            "example": cfg.example,
        },
        "backend": trajectory.backend(),
        "threads": cfg.threads,
        "exit_code": rc,
        "wall_clock_s": time.perf_counter() - started,
        "outputs": checksums,
    }
    (out_path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctoqw", description=__doc__)
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        if kind == "reproduce-example":
            sp.add_argument("example", type=int, choices=examples.BUILTIN_INDICES)
        else:
            sp.add_argument("--config", required=True, help="path to a JSON experiment config")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the root seed")
        sp.add_argument(
            "--threads", type=int, default=1, help="worker threads (speed only, never results)"
        )
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.kind == "reproduce-example":
            cfg = parse_config(
                json.dumps({"kind": "reproduce-example", "example": args.example}),
                kind=args.kind,
            )
        else:
            cfg = parse_config(Path(args.config).read_text(encoding="utf-8"), kind=args.kind)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.root_seed = args.seed
    out_dir = args.out or cfg.output_dir or "ctoqw_out"
    try:
        manifest = run_experiment(cfg, out_dir, threads=args.threads)
    except Exception as exc:  # surfaced with module context, partial outputs removed
        print(f"error [{cfg.kind}]: {exc}", file=sys.stderr)
        return 1
    print(f"{cfg.kind}: wrote {len(manifest['outputs'])} file(s) to {out_dir}")
    return manifest["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
