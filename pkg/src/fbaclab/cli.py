"""Command-line experiment runner.

    fbaclab run CONFIG.toml        run one experiment, write artifacts
    fbaclab validate CONFIG.toml   dry-run precondition check

Exit codes: 0 success, 1 invalid configuration (an ``error.json`` is written),
2 numerical failure (artifacts written so far are kept).  The environment
variable ``FBAC_OUTPUT_DIR`` overrides the configured output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import acceptance, plots
from .acceptance import SuiteContext, dumps
from .energy import energy
from .errors import ConfigurationError, FBACError, NumericalError
from .gamma import ShapeSpec, gamma_liminf_audit, gamma_limsup_audit, recovery_sequence
from .grid import Field, Grid, write_binary, write_csv
from .solver import Boundary, SolverConfig, exact_profile, minimize, multi_sheet_profile
from .varifold import density_and_sheets, monotonicity_profile, parity_audit, samples_to_csv

__all__ = ["ExperimentConfig", "load_config", "validate", "run", "main"]

COMMANDS = ("solve", "sweep", "recovery", "varifold", "gamma", "report")
TOP_KEYS = {"command", "seed", "output_dir", "grid", "solver", "epsilon_list", "h_ratio",
            "h_ratio_list", "coarse_spacing", "region", "init", "shape", "varifold",
            "criteria", "aggregate_from", "solve_first"}
SOLVER_KEYS = {"epsilon", "kappa_schedule", "safety", "max_iters", "energy_tol", "boundary",
               "window", "accelerate", "sharp_stage"}
INIT_KINDS = ("flat", "exact", "tilted", "multi_sheet", "file")
SHAPE_KINDS = ("half_plane", "disc", "square")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


@dataclass
class ExperimentConfig:
    command: str
    seed: int = 0
    output_dir: str = "fbac_out"
    grid: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    epsilon_list: list = field(default_factory=list)
    h_ratio: float = 8.0
    h_ratio_list: list = field(default_factory=list)
    coarse_spacing: float | None = None
    region: list | None = None
    init: dict = field(default_factory=dict)
    shape: dict = field(default_factory=dict)
    varifold: dict = field(default_factory=dict)
    criteria: list = field(default_factory=list)
    aggregate_from: str | None = None
    solve_first: bool = False
    unknown_keys: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = sorted(set(data) - TOP_KEYS)
        known = {k: v for k, v in data.items() if k in TOP_KEYS}
        if "command" not in known:
            known["command"] = ""
        return cls(**known, unknown_keys=unknown)

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get("FBAC_OUTPUT_DIR") or self.output_dir)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return ExperimentConfig.from_dict(tomllib.load(fh))


# --- building blocks ----------------------------------------------------------------------


def build_grid(spec: dict, epsilon: float | None = None, h_ratio: float | None = None) -> Grid:
    extents = [tuple(e) for e in spec.get("extents", [[0.0, 1.0], [0.0, 1.0]])]
    if "nodes" in spec:
        return Grid(extents, spec["nodes"])
    if "spacing" in spec:
        return Grid.from_spacing(extents, spec["spacing"])
    if epsilon is not None and h_ratio is not None:
        return Grid.from_spacing(extents, epsilon / h_ratio)
    raise ConfigurationError("grid needs 'nodes', 'spacing', or an epsilon with h_ratio")


def build_solver(spec: dict, epsilon: float | None = None) -> SolverConfig:
    kw = {k: v for k, v in spec.items() if k in SOLVER_KEYS}
    if epsilon is not None:
        kw["epsilon"] = epsilon
    if "epsilon" not in kw:
        raise ConfigurationError("solver.epsilon is required")
    kw["boundary"] = Boundary.parse(kw.get("boundary", "natural"))
    return SolverConfig(**kw)


def build_init(spec: dict, grid: Grid, epsilon: float) -> Field:
    kind = spec.get("kind", "flat")
    if kind == "flat":
        width = float(spec.get("width", 2.0)) * epsilon
        y = grid.mesh()[-1]
        lo, hi = grid.extents[-1]
        return Field(grid, np.clip((y - 0.5 * (lo + hi)) / width, -1.0, 1.0))
    if kind == "exact":
        return exact_profile(grid, epsilon, normal=spec.get("normal"),
                             offset=float(spec.get("offset", 0.0)))
    if kind == "tilted":
        angle = float(spec.get("angle", 0.3))
        n = np.array([np.sin(angle), np.cos(angle)])
        center = np.array([0.5 * (lo + hi) for lo, hi in grid.extents])
        offset = float(n @ center)
        exact = exact_profile(grid, epsilon, normal=n, offset=offset)
        X, Y = grid.mesh()
        width = float(spec.get("width", 1.5)) * epsilon
        ramp = np.clip((n[0] * X + n[1] * Y - offset) / width, -1.0, 1.0)
        return Field(grid, np.where(grid.boundary_mask(), exact.values, ramp))
    if kind == "multi_sheet":
        return multi_sheet_profile(grid, epsilon, spec["offsets"], spec.get("signs"),
                                   spec.get("normal"))
    if kind == "file":
        from .grid import read_binary, read_csv

        path = spec["path"]
        return read_binary(path) if str(path).endswith(".fbac") else read_csv(path, grid)
    raise ConfigurationError(f"unknown init kind {kind!r}")


def build_shape(spec: dict) -> ShapeSpec:
    kind = spec.get("kind")
    params = {k: v for k, v in spec.items() if k != "kind"}
    return ShapeSpec.make(kind, **params)


# --- validation ---------------------------------------------------------------------------


def _check_eps_list(cfg, problems):
    eps = cfg.epsilon_list
    if not eps:
        problems.append("epsilon_list is required")
        return
    if any(not (isinstance(e, (int, float)) and e > 0) for e in eps):
        problems.append("epsilon_list entries must be positive numbers")
    elif any(b >= a for a, b in zip(eps, eps[1:])):
        problems.append("epsilon_list must be strictly decreasing")


def _check_solver(cfg, grid, problems, epsilon=None):
    try:
        sc = build_solver(cfg.solver, epsilon)
    except (ConfigurationError, TypeError) as exc:
        problems.append(f"solver: {exc}")
        return
    problems.extend(f"solver: {p}" for p in sc.validate(grid))


def _grid_or_problem(cfg, problems, epsilon=None, h_ratio=None):
    try:
        return build_grid(cfg.grid, epsilon, h_ratio)
    except (ConfigurationError, TypeError, ValueError) as exc:
        problems.append(f"grid: {exc}")
        return None


def _sweep_rows(cfg):
    ratios = cfg.h_ratio_list or [cfg.h_ratio] * len(cfg.epsilon_list)
    return list(zip(cfg.epsilon_list, ratios))


def _sweep_grid(cfg, eps, ratio):
    extents = [tuple(e) for e in cfg.grid.get("extents", [[0.0, 1.0], [0.0, 1.0]])]
    if cfg.coarse_spacing is not None:
        spacing = [float(cfg.coarse_spacing)] * (len(extents) - 1) + [eps / ratio]
    else:
        spacing = eps / ratio
    return Grid.from_spacing(extents, spacing)


def validate(cfg: ExperimentConfig) -> list[str]:
    """Every precondition violation that would stop :func:`run`; empty iff it would start."""
    problems = [f"unknown key {k!r}" for k in cfg.unknown_keys]
    if cfg.command not in COMMANDS:
        problems.append(f"command must be one of {', '.join(COMMANDS)}; got {cfg.command!r}")
        return problems
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        problems.append("seed must be a non-negative integer")
    if cfg.init and cfg.init.get("kind", "flat") not in INIT_KINDS:
        problems.append(f"init.kind must be one of {', '.join(INIT_KINDS)}")

    if cfg.command in ("solve", "varifold"):
        eps = cfg.solver.get("epsilon")
        if eps is None:
            problems.append("solver.epsilon is required")
        grid = _grid_or_problem(cfg, problems)
        if grid is not None and eps is not None and (cfg.command == "solve" or cfg.solve_first):
            _check_solver(cfg, grid, problems)
        if cfg.command == "varifold" and grid is not None and eps is not None:
            _check_varifold(cfg, grid, float(eps), problems)
    elif cfg.command == "sweep":
        _check_eps_list(cfg, problems)
        if cfg.h_ratio_list and len(cfg.h_ratio_list) != len(cfg.epsilon_list):
            problems.append("h_ratio_list must have one entry per epsilon")
        if not problems:
            for eps, ratio in _sweep_rows(cfg):
                try:
                    grid = _sweep_grid(cfg, eps, ratio)
                except (ConfigurationError, ValueError) as exc:
                    problems.append(f"grid for epsilon {eps}: {exc}")
                    continue
                _check_solver(cfg, grid, problems, epsilon=eps)
    elif cfg.command in ("recovery", "gamma"):
        _check_eps_list(cfg, problems)
        if cfg.shape.get("kind") not in SHAPE_KINDS:
            problems.append(f"shape.kind must be one of {', '.join(SHAPE_KINDS)}")
        if not problems:
            for eps in cfg.epsilon_list:
                grid = _grid_or_problem(cfg, problems, eps, cfg.h_ratio)
                if grid is not None and not eps > 2.0 * grid.h:
                    problems.append(
                        f"band unresolvable: epsilon {eps} <= 2h = {2 * grid.h}")
            if not problems:
                try:
                    build_shape(cfg.shape).build(build_grid(cfg.grid, cfg.epsilon_list[0],
                                                            cfg.h_ratio))
                except (ConfigurationError, KeyError, TypeError) as exc:
                    problems.append(f"shape: {exc!r}")
    elif cfg.command == "report":
        if cfg.aggregate_from is not None:
            src = Path(cfg.aggregate_from)
            wanted = cfg.criteria or list(range(1, 13))
            missing = [f"criterion_{n:02d}.json" for n in wanted
                       if not (src / f"criterion_{n:02d}.json").is_file()]
            problems.extend(f"missing input {src / m}" for m in missing)
        bad = [n for n in cfg.criteria if n not in range(1, 13)]
        if bad:
            problems.append(f"criteria must be in 1..12, got {bad}")
    return problems


def _check_varifold(cfg, grid, eps, problems):
    vs = cfg.varifold
    centers = vs.get("centers", [])
    radii = vs.get("radii", [])
    if not centers:
        problems.append("varifold.centers is required")
    for c in centers:
        if len(c) != grid.dim:
            problems.append(f"center {c} does not match the grid dimension")
            continue
        if radii:
            if any(b <= a for a, b in zip(radii, radii[1:])):
                problems.append("varifold.radii must be increasing")
            if radii[0] < 4 * eps:
                problems.append(f"smallest radius {radii[0]} is below 4 eps = {4 * eps}")
            if radii[-1] > grid.distance_to_boundary(c):
                problems.append(f"radius {radii[-1]} exceeds the distance from {c} to the boundary")
    window = vs.get("window")
    if window is not None and (len(window) != 2 or not window[0] < window[1]):
        problems.append("varifold.window must be [r_lo, r_hi] with r_lo < r_hi")


# --- commands -----------------------------------------------------------------------------


def _write(out: Path, name: str, text: str):
    (out / name).write_text(text)


def _run_solve(cfg, out: Path) -> int:
    grid = build_grid(cfg.grid)
    sc = build_solver(cfg.solver)
    init = build_init(cfg.init, grid, sc.epsilon)
    u, trace = minimize(sc, init)
    write_csv(u, out / "field.csv")
    write_binary(u, out / "field.fbac")
    _write(out, "trace.json", trace.to_json() + "\n")
    _write(out, "config.json", dumps({"grid": grid.to_dict(), "solver": sc.to_dict(),
                                      "init": cfg.init, "seed": cfg.seed}))
    if grid.dim == 2:
        plots.field_image(u, out / "field.png", f"eps = {sc.epsilon}")
    return EXIT_OK if trace.converged else EXIT_NUMERICAL


def _run_sweep(cfg, out: Path) -> int:
    header = ("epsilon,total,dirichlet,potential,discrepancy_l1,modica_violation,"
              "h,status\n")
    lines = []
    worst = EXIT_OK
    for eps, ratio in _sweep_rows(cfg):
        grid = _sweep_grid(cfg, eps, ratio)
        sc = build_solver(cfg.solver, epsilon=eps)
        init = build_init(cfg.init or {"kind": "flat"}, grid, eps)
        try:
            u, trace = minimize(sc, init)
        except NumericalError as exc:
            lines.append(f"{eps!r},,,,,,{grid.h!r},numerical_failure: {exc}\n")
            worst = EXIT_NUMERICAL
            continue
        mask = None
        if cfg.region is not None:
            mesh = grid.mesh()
            mask = np.ones(grid.shape, bool)
            for k, (lo, hi) in enumerate(cfg.region):
                mask &= (mesh[k] >= lo - 1e-12) & (mesh[k] <= hi + 1e-12)
        rep = energy(u, eps, mask=mask)
        lines.append(f"{eps!r},{rep.total!r},{rep.dirichlet!r},{rep.potential!r},"
                     f"{rep.discrepancy_l1!r},{rep.modica_violation!r},{grid.h!r},"
                     f"{trace.status}\n")
        if not trace.converged:
            worst = EXIT_NUMERICAL
    _write(out, "sweep.csv", header + "".join(lines))
    rows = [ln.split(",") for ln in lines if ln.split(",")[1]]
    if rows:
        plots.line_plot([("discrepancy_l1", [float(r[0]) for r in rows],
                          [float(r[4]) for r in rows])], out / "sweep.png", "epsilon",
                        "int |xi|", "discrepancy along the sweep", logx=True, logy=True)
    return worst


def _run_recovery(cfg, out: Path) -> int:
    spec = build_shape(cfg.shape)
    extents = [tuple(e) for e in cfg.grid.get("extents", [[0.0, 1.0], [0.0, 1.0]])]
    table = gamma_limsup_audit(spec, cfg.epsilon_list, extents, h_ratio=cfg.h_ratio)
    _write(out, "limsup.csv", table.to_csv())
    _write(out, "limsup_verdict.json", dumps({"shape": spec.to_dict(), **table.verdict}))
    plots.line_plot([("relative gap", table.column("epsilon"), table.column("relative_gap"))],
                    out / "limsup.png", "epsilon", "|J - 4P| / 4P", "recovery energy gap",
                    logx=True)
    return EXIT_OK


def _run_gamma(cfg, out: Path) -> int:
    code = _run_recovery(cfg, out)
    spec = build_shape(cfg.shape)
    eps_list = cfg.epsilon_list
    grid = build_grid(cfg.grid, eps_list[-1], cfg.h_ratio)
    shape = spec.build(grid)
    fields = [recovery_sequence(shape, e) for e in eps_list]
    table = gamma_liminf_audit(fields, eps_list, shape)
    _write(out, "liminf.csv", table.to_csv())
    _write(out, "liminf_verdict.json", dumps(table.verdict))
    return code


def _run_varifold(cfg, out: Path) -> int:
    grid = build_grid(cfg.grid)
    eps = float(cfg.solver["epsilon"])
    u = build_init(cfg.init or {"kind": "exact"}, grid, eps)
    code = EXIT_OK
    if cfg.solve_first:
        u, trace = minimize(build_solver(cfg.solver), u)
        _write(out, "trace.json", trace.to_json() + "\n")
        code = EXIT_OK if trace.converged else EXIT_NUMERICAL
    vs = cfg.varifold
    samples = []
    for c in vs["centers"]:
        if vs.get("radii"):
            s = monotonicity_profile(u, eps, c, vs["radii"])
        else:
            from .varifold import VarifoldSample

            s = VarifoldSample(center=list(c), radii=[], masses=[], ratios=[])
        if vs.get("window"):
            s.theta, s.sheets, s.gap = density_and_sheets(u, eps, c, vs["window"])
        samples.append(s)
    _write(out, "varifold.csv", samples_to_csv(samples))
    _write(out, "varifold_samples.json", dumps([s.to_dict() for s in samples]))
    u0 = Field(grid, np.where(u.values >= 0, 1.0, -1.0))
    parity = parity_audit([u], [eps], u0, vs["centers"])
    _write(out, "parity.json", parity.to_json() + "\n")
    return code


def _run_report(cfg, out: Path) -> int:
    if cfg.aggregate_from is not None:
        src = Path(cfg.aggregate_from)
        wanted = cfg.criteria or list(range(1, 13))
        crit = [json.loads((src / f"criterion_{n:02d}.json").read_text()) for n in wanted]
        report = {"source": str(src), "criteria": crit,
                  "passed": [c["criterion"] for c in crit if c["passed"]],
                  "failed": [c["criterion"] for c in crit if not c["passed"]]}
        _write(out, "report.json", dumps(report))
        for c in crit:
            print(f"criterion {c['criterion']:2d} {'PASS' if c['passed'] else 'FAIL'}  {c['title']}")
        return EXIT_OK
    ctx = SuiteContext(cfg.seed, out)
    numbers = cfg.criteria or list(range(1, 13))
    results = []
    for n in numbers:
        res = acceptance.run_criterion(n, ctx)
        print(res.line(), flush=True)
        results.append(res)
    acceptance.write_report(ctx, results)
    return EXIT_OK


RUNNERS = {"solve": _run_solve, "sweep": _run_sweep, "recovery": _run_recovery,
           "gamma": _run_gamma, "varifold": _run_varifold, "report": _run_report}


def _error(out: Path | None, payload: dict) -> None:
    text = json.dumps(payload, indent=1, sort_keys=True)
    print(text)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass


def run(cfg: ExperimentConfig) -> int:
    out = cfg.resolved_output_dir()
    problems = validate(cfg)
    if problems:
        _error(out, {"status": "invalid_config", "violations": problems})
        return EXIT_INVALID
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        code = RUNNERS[cfg.command](cfg, out)
    except NumericalError as exc:
        _error(out, {"status": "numerical_failure", "message": str(exc)})
        return EXIT_NUMERICAL
    except FBACError as exc:
        _error(out, {"status": "invalid_config", "violations": [str(exc)]})
        return EXIT_INVALID
    with open(out / "run.log", "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {cfg.command} exit={code} "
                 f"{time.perf_counter() - t0:.2f} s\n")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fbaclab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="action", required=True)
    for name, help_text in (("run", "run an experiment"), ("validate", "check a config")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="TOML experiment file")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        _error(None, {"status": "invalid_config", "violations": [f"cannot read config: {exc}"]})
        return EXIT_INVALID
    if args.action == "validate":
        problems = validate(cfg)
        print(json.dumps({"valid": not problems, "violations": problems}, indent=1))
        return EXIT_OK if not problems else EXIT_INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
