"""The acceptance suite: one runner per criterion, each writing its own artifacts.

Every runner returns a :class:`CriterionResult`.  Artifacts (CSV, JSON, PNG)
contain no timings, so two runs with the same seed are byte-identical;
wall-clock times go to the separate ``run.log``.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plots
from .calibration import CALIBRATION_SEED, HOLDOUT_SEED, realized_constants
from .energy import INTERPOLATION_C_STAR, cs_lower_bound_check, energy, modica_check
from .gamma import ShapeSpec, disc, gamma_limsup_audit, half_plane, recovery_sequence
from .geometry import extract_level_set, hausdorff, transition_band
from .grid import Field, Grid
from .problems import UNIT_SQUARE, flat_problem, tilted_problem
from .solver import bump_basis, exact_profile, minimize, multi_sheet_profile
from .varifold import (
    density_and_sheets,
    monotonicity_profile,
    parity_audit,
    samples_to_csv,
    varifold_identity_check,
)

__all__ = ["CriterionResult", "SuiteContext", "CRITERIA", "run_criterion", "run_suite",
           "artifact_digest"]

# criteria whose failure is analysed in the decisions ledger
KNOWN_FAILURES: dict[int, str] = {
    7: "gap is an O(h/eps) discretization constant at fixed h = eps/8; its trend is lattice noise",
}


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: dict = field(default_factory=dict)
    threshold: str = ""

    def line(self) -> str:
        word = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} {word}  {self.title} :: {self.summary()}"

    def summary(self) -> str:
        keys = self.measured.get("summary_keys", [])
        parts = []
        for k in keys:
            v = self.measured[k]
            parts.append(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}")
        return ", ".join(parts) + (f" [{self.threshold}]" if self.threshold else "")

    def to_dict(self) -> dict:
        m = {k: v for k, v in self.measured.items() if k != "summary_keys"}
        return {"criterion": self.number, "title": self.title, "passed": self.passed,
                "threshold": self.threshold, "measured": m}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n"


class SuiteContext:
    """Shared state for one suite run: seed, output directory and cached solves."""

    def __init__(self, seed: int = 0, out: Path | str | None = None, figures: bool = True):
        self.seed = int(seed)
        self.out = None if out is None else Path(out)
        self.figures = figures and self.out is not None
        self._cache: dict = {}
        self.log: list[str] = []
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed, stream]))

    def write(self, name: str, text: str) -> None:
        if self.out is not None:
            (self.out / name).write_text(text)

    def path(self, name: str) -> Path:
        return self.out / name

    def standard_solution(self, epsilon: float):
        """Flat-data solve on the unit square at ``h = eps / 8`` (cached)."""
        key = ("flat", epsilon)
        if key not in self._cache:
            grid, init, config = flat_problem(epsilon)
            self._cache[key] = minimize(config, init)
        return self._cache[key]

    def tilted_solution(self, h_ratio: float):
        key = ("tilted", h_ratio)
        if key not in self._cache:
            grid, init, config = tilted_problem(0.05, h_ratio)
            self._cache[key] = minimize(config, init)
        return self._cache[key]

    def sweep_solution(self, epsilon: float, h_ratio: float):
        key = ("sweep", epsilon, h_ratio)
        if key not in self._cache:
            grid, init, config = flat_problem(epsilon, spacing=(SWEEP_COARSE_X, epsilon / h_ratio))
            self._cache[key] = minimize(config, init)
        return self._cache[key]


STANDARD_EPS = (0.08, 0.04, 0.02)
# discrepancy sweep: h/eps shrinks faster than eps, x is coarse (solutions are x-invariant)
SWEEP_EPS = (0.08, 0.04, 0.02)
SWEEP_H_RATIOS = (8.0, 20.0, 50.0)
SWEEP_COARSE_X = 0.025


def _summary(measured: dict, *keys) -> dict:
    measured["summary_keys"] = list(keys)
    return measured


# --- criteria -------------------------------------------------------------------------


def criterion_01(ctx: SuiteContext) -> CriterionResult:
    eps = 0.05
    grid = Grid.from_spacing(UNIT_SQUARE, eps / 16)
    rows = []
    for axis in range(2):
        normal = np.eye(2)[axis]
        u = exact_profile(grid, eps, normal=normal, offset=0.5)
        total = energy(u, eps).total
        rows.append({"axis": axis, "total": total, "target": 4.0,
                     "relative_error": abs(total - 4.0) / 4.0})
    worst = max(r["relative_error"] for r in rows)
    m = _summary({"rows": rows, "worst_relative_error": worst}, "worst_relative_error")
    res = CriterionResult(1, "single-sheet energy quantization", worst <= 0.02, m, "<= 0.02")
    ctx.write("criterion_01.json", dumps(res.to_dict()))
    return res


def criterion_02(ctx: SuiteContext) -> CriterionResult:
    eps = 0.02
    extents = ((-1.0, 1.0), (-1.0, 1.0))
    grid = Grid.from_spacing(extents, eps / 8)
    window = (0.5, 0.9)
    spacing = 0.09
    rows = []
    for N in (1, 2, 3):
        offsets = [spacing * (k - (N - 1) / 2) for k in range(N)]
        u = multi_sheet_profile(grid, eps, offsets)
        theta, sheets, gap = density_and_sheets(u, eps, (0.0, 0.0), window)
        rows.append({"N": N, "offsets": offsets, "theta": theta, "sheets": sheets, "gap": gap,
                     "ok": sheets == N and gap <= 0.1})
    worst = max(r["gap"] for r in rows)
    ok = all(r["ok"] for r in rows)
    m = _summary({"rows": rows, "window": list(window), "worst_gap": worst,
                  "sheets": [r["sheets"] for r in rows]}, "sheets", "worst_gap")
    res = CriterionResult(2, "multi-sheet density theta = 4N", ok, m, "sheets = N, gap <= 0.1")
    ctx.write("criterion_02.json", dumps(res.to_dict()))
    return res


def criterion_03(ctx: SuiteContext) -> CriterionResult:
    rows = []
    for eps in (0.08, 0.04):
        u, trace = ctx.standard_solution(eps)
        viol, has_band = modica_check(u, eps)
        tol = 10.0 * u.grid.h / eps**2
        rows.append({"epsilon": eps, "h": u.grid.h, "converged": trace.converged,
                     "modica_violation": viol, "tolerance": tol, "has_band": has_band,
                     "ok": trace.converged and viol <= tol})
    ok = all(r["ok"] for r in rows)
    worst = max(r["modica_violation"] / r["tolerance"] for r in rows)
    m = _summary({"rows": rows, "worst_fraction_of_tolerance": worst},
                 "worst_fraction_of_tolerance")
    res = CriterionResult(3, "Modica bound on solver outputs", ok, m, "violation <= 10 h/eps^2")
    ctx.write("criterion_03.json", dumps(res.to_dict()))
    return res


def monotonicity_radii(epsilon: float, r_max: float = 0.2) -> list[float]:
    """``4 eps, 6 eps, ...`` up to ``r_max``, closed by ``r_max`` itself."""
    radii = []
    k = 0
    while True:
        r = round((4 + 2 * k) * epsilon, 12)
        if r > r_max + 1e-12:
            break
        radii.append(r)
        k += 1
    if radii and radii[-1] < r_max - 1e-12:
        radii.append(r_max)
    return radii


def interface_centers(u: Field, count: int, margin: float, rng) -> np.ndarray:
    """``count`` vertices of ``{u = 0}`` at distance at least ``margin`` from the boundary."""
    v = extract_level_set(u, 0.0).vertices
    ok = v[[u.grid.distance_to_boundary(p) >= margin for p in v]]
    if len(ok) <= count:
        return ok
    pick = np.sort(rng.choice(len(ok), size=count, replace=False))
    return ok[pick]


def criterion_04(ctx: SuiteContext) -> CriterionResult:
    rows = []
    samples = []
    series = []
    total_viol = 0
    for k, eps in enumerate(STANDARD_EPS):
        u, trace = ctx.standard_solution(eps)
        radii = monotonicity_radii(eps)
        if len(radii) < 2:
            rows.append({"epsilon": eps, "radii": radii, "centers": 0, "violations": 0,
                         "note": "no admissible radius pair (4 eps > 0.2 or single radius)"})
            continue
        centers = interface_centers(u, 20, radii[-1], ctx.rng(100 + k))
        viol = 0
        worst = 0.0
        for c in centers:
            s = monotonicity_profile(u, eps, c, radii)
            samples.append(s)
            viol += len(s.violations)
            r = np.asarray(s.ratios)
            if np.all(r[:-1] > 0):
                worst = min(worst, float(np.min(np.diff(r) / r[:-1])))
        series.append((f"eps={eps}", radii, samples[-1].ratios))
        total_viol += viol
        rows.append({"epsilon": eps, "radii": radii, "centers": len(centers),
                     "converged": trace.converged, "violations": viol,
                     "worst_relative_change": worst})
    checked = [r for r in rows if r.get("centers", 0) > 0]
    ok = total_viol == 0 and len(checked) > 0 and all(r["converged"] for r in checked)
    m = _summary({"rows": rows, "violations": total_viol,
                  "solutions_checked": len(checked)}, "violations", "solutions_checked")
    res = CriterionResult(4, "monotonicity of ball ratios", ok, m,
                          "zero drops beyond 1e-2 relative")
    ctx.write("criterion_04.json", dumps(res.to_dict()))
    ctx.write("criterion_04_samples.csv", samples_to_csv(samples))
    if ctx.figures and series:
        plots.line_plot(series, ctx.path("criterion_04_ratios.png"), "r", "r^(1-n) mu(B_r)",
                        "monotonicity ratios (last centre per eps)")
    return res


def criterion_05(ctx: SuiteContext) -> CriterionResult:
    rows = []
    for eps, hr in zip(SWEEP_EPS, SWEEP_H_RATIOS):
        u, trace = ctx.sweep_solution(eps, hr)
        X, Y = u.grid.mesh()
        tol = 1e-12
        K = (X >= 0.25 - tol) & (X <= 0.75 + tol) & (Y >= 0.25 - tol) & (Y <= 0.75 + tol)
        rep = energy(u, eps, mask=K)
        full = trace.final
        rows.append({"epsilon": eps, "h_ratio": hr, "spacing": list(u.grid.spacing),
                     "converged": trace.converged, "discrepancy_K": rep.discrepancy_l1,
                     "total": full.total, "dirichlet": full.dirichlet,
                     "potential": full.potential, "modica_violation": full.modica_violation})
    d = [r["discrepancy_K"] for r in rows]
    decreasing = all(b < a for a, b in zip(d, d[1:]))
    fraction = d[-1] / d[0]
    ok = decreasing and fraction <= 0.25 and all(r["converged"] for r in rows)
    m = _summary({"rows": rows, "strictly_decreasing": decreasing, "final_fraction": fraction},
                 "strictly_decreasing", "final_fraction")
    res = CriterionResult(5, "discrepancy decay on K", ok, m, "strict decrease, final <= 0.25")
    ctx.write("criterion_05.json", dumps(res.to_dict()))
    header = "epsilon,total,dirichlet,potential,discrepancy_l1,modica_violation\n"
    body = "".join(f"{r['epsilon']!r},{r['total']!r},{r['dirichlet']!r},{r['potential']!r},"
                   f"{r['discrepancy_K']!r},{r['modica_violation']!r}\n" for r in rows)
    ctx.write("criterion_05_sweep.csv", header + body)
    if ctx.figures:
        plots.line_plot([("int_K |xi|", SWEEP_EPS, d)], ctx.path("criterion_05_discrepancy.png"),
                        "epsilon", "int_K |xi|", "discrepancy along the sweep",
                        logx=True, logy=True)
    return res


def criterion_06(ctx: SuiteContext) -> CriterionResult:
    rows = []
    identity_ok = True
    worst_c = 0.0
    for hr in (8.0, 16.0):
        u, trace = ctx.tilted_solution(hr)
        checks = [varifold_identity_check(u, 0.05, g) for g in bump_basis(u.grid)]
        identity_ok &= all(c[0] for c in checks)
        worst_c = max(worst_c, max(c[1] for c in checks))
        rows.append({"h_ratio": hr, "h": u.grid.h, "converged": trace.converged,
                     "residual": trace.stationarity_residual, "total": trace.final.total,
                     "identity_realized_c": max(c[1] for c in checks)})
    ratio = rows[0]["residual"] / rows[1]["residual"]
    ok = ratio >= 2.0 and identity_ok and all(r["converged"] for r in rows)
    m = _summary({"rows": rows, "residual_ratio": ratio, "identity_holds": identity_ok,
                  "identity_worst_c": worst_c}, "residual_ratio", "identity_holds")
    res = CriterionResult(6, "stationarity under refinement", ok, m,
                          "ratio >= 2, identity within frozen C")
    ctx.write("criterion_06.json", dumps(res.to_dict()))
    if ctx.figures:
        u, _ = ctx.tilted_solution(16.0)
        plots.field_image(u, ctx.path("criterion_06_field.png"), "tilted layer, h = eps/16")
    return res


def criterion_07(ctx: SuiteContext) -> CriterionResult:
    spec = ShapeSpec.make("disc", center=(0.5, 0.5), radius=0.25)
    table = gamma_limsup_audit(spec, (0.04, 0.02, 0.01), UNIT_SQUARE, h_ratio=8.0)
    v = table.verdict
    m = _summary({"rows": table.rows, "gaps": table.column("relative_gap"), **v},
                 "final_gap", "non_increasing")
    res = CriterionResult(7, "Gamma-limsup recovery audit (disc)", bool(v["passed"]), m,
                          "gap non-increasing, final <= 0.05")
    ctx.write("criterion_07.json", dumps(res.to_dict()))
    ctx.write("criterion_07_limsup.csv", table.to_csv())
    if ctx.figures:
        plots.line_plot([("relative gap", table.column("epsilon"), table.column("relative_gap"))],
                        ctx.path("criterion_07_gap.png"), "epsilon", "|J - 4P| / 4P",
                        "recovery energy gap, h = eps/8", logx=True, hline=0.05)
    return res


def random_phase_field(rng, n_nodes: int = 33) -> tuple[Field, float]:
    """Random phase field: smooth random modes clipped to [-1, 1], with random eps."""
    grid = Grid.cube(2, 0.0, 1.0, n_nodes)
    X, Y = grid.mesh()
    vals = np.zeros(grid.shape)
    for _ in range(4):
        kx, ky = rng.integers(1, 6, size=2)
        a = rng.uniform(-2.0, 2.0)
        ph = rng.uniform(0, 2 * np.pi)
        vals += a * np.sin(np.pi * (kx * X + ky * Y) + ph)
    vals += 0.3 * rng.uniform(-1, 1, grid.shape)
    eps = float(rng.uniform(0.02, 0.2))
    return Field(grid, np.clip(vals, -1.0, 1.0)), eps


def criterion_08(ctx: SuiteContext) -> CriterionResult:
    rng = ctx.rng(8)
    margins = []
    for _ in range(100):
        u, eps = random_phase_field(rng)
        holds, margin = cs_lower_bound_check(u, eps)
        margins.append((holds, margin))
    suite = []
    for eps in STANDARD_EPS:
        u, _ = ctx.standard_solution(eps)
        suite.append(("flat", eps) + cs_lower_bound_check(u, eps))
    for eps, hr in zip(SWEEP_EPS, SWEEP_H_RATIOS):
        u, _ = ctx.sweep_solution(eps, hr)
        suite.append(("sweep", eps) + cs_lower_bound_check(u, eps))
    for hr in (8.0, 16.0):
        u, _ = ctx.tilted_solution(hr)
        suite.append(("tilted", 0.05) + cs_lower_bound_check(u, 0.05))
    random_ok = all(h and m >= 0.0 for h, m in margins)
    suite_ok = all(s[2] and s[3] >= 0.0 for s in suite)
    min_margin = min([m for _, m in margins] + [s[3] for s in suite])
    m = _summary({"random_fields": len(margins), "random_all_hold": random_ok,
                  "suite_outputs": [{"source": s[0], "epsilon": s[1], "holds": s[2],
                                     "margin": s[3]} for s in suite],
                  "suite_all_hold": suite_ok, "min_margin": min_margin},
                 "random_all_hold", "suite_all_hold", "min_margin")
    res = CriterionResult(8, "Cauchy-Schwarz lower bound", random_ok and suite_ok, m,
                          "margin >= 0, zero tolerance")
    ctx.write("criterion_08.json", dumps(res.to_dict()))
    return res


def _circle_points(center, radius, spacing):
    k = int(np.ceil(2 * np.pi * radius / spacing))
    t = 2 * np.pi * np.arange(k) / k
    return np.stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)], axis=1)


def criterion_09(ctx: SuiteContext) -> CriterionResult:
    rows = []
    for eps in (0.04, 0.02):
        grid = Grid.from_spacing(UNIT_SQUARE, eps / 8)
        shape = disc(grid, (0.5, 0.5), 0.25)
        u = recovery_sequence(shape, eps)
        curve = _circle_points((0.5, 0.5), 0.25, grid.h / 4)
        d = hausdorff(transition_band(u), curve, grid)
        rows.append({"source": "recovery disc", "epsilon": eps, "h": grid.h, "distance": d,
                     "bound": eps + 2 * grid.h, "ok": d <= eps + 2 * grid.h})
        us, trace = ctx.standard_solution(eps)
        xs = np.linspace(0.0, 1.0, int(round(4 / us.grid.h)) + 1)
        line = np.stack([xs, np.full_like(xs, 0.5)], axis=1)
        d = hausdorff(transition_band(us), line, us.grid)
        rows.append({"source": "solver flat", "epsilon": eps, "h": us.grid.h, "distance": d,
                     "bound": 2 * eps, "ok": d <= 2 * eps and trace.converged})
    ok = all(r["ok"] for r in rows)
    worst = max(r["distance"] / r["bound"] for r in rows)
    m = _summary({"rows": rows, "worst_fraction_of_bound": worst}, "worst_fraction_of_bound")
    res = CriterionResult(9, "Hausdorff distance of transition bands", ok, m,
                          "<= eps + 2h (recovery), <= 2 eps (solver)")
    ctx.write("criterion_09.json", dumps(res.to_dict()))
    return res


def criterion_10(ctx: SuiteContext) -> CriterionResult:
    eps_list = (0.04, 0.02)
    points = [(0.3, 0.5), (0.5, 0.5), (0.7, 0.5)]
    configs = []
    # single sheet: sign change across y = 1/2, expected N = 1
    fields = []
    for eps in eps_list:
        grid = Grid.from_spacing(UNIT_SQUARE, eps / 8)
        fields.append(exact_profile(grid, eps, normal=(0.0, 1.0), offset=0.5))
    u0 = half_plane(fields[-1].grid, (0.0, -1.0), -0.5).indicator
    single = parity_audit(fields, eps_list, u0, points)
    configs.append(("single sheet", single, [True] * len(points)))
    # double sheet collapsing onto y = 1/2, minus phase on both sides, expected N = 2
    fields = []
    for eps in eps_list:
        grid = Grid.from_spacing(UNIT_SQUARE, eps / 8)
        gap = 2 * eps + eps**2
        fields.append(multi_sheet_profile(grid, eps, [0.5 - gap, 0.5 + gap]))
    u0 = Field(fields[-1].grid, -np.ones(fields[-1].grid.shape))
    double = parity_audit(fields, eps_list, u0, points)
    configs.append(("collapsing double sheet", double, [False] * len(points)))
    rows = []
    agree = []
    for name, rep, expect in configs:
        correct = [a and (s == e) for a, s, e in zip(rep.agree, rep.sign_change, expect)]
        agree.extend(correct)
        rows.append({"configuration": name, **rep.to_dict(), "classified_correctly": correct})
    frac = float(np.mean(agree))
    m = _summary({"rows": rows, "agreement": frac}, "agreement")
    res = CriterionResult(10, "parity audit", frac == 1.0, m, "100% agreement")
    ctx.write("criterion_10.json", dumps(res.to_dict()))
    return res


def criterion_11(ctx: SuiteContext) -> CriterionResult:
    rows = []
    ok = True
    for n in (1, 2):
        hold = realized_constants(n, 200, HOLDOUT_SEED)
        c_star = INTERPOLATION_C_STAR[n]
        rows.append({"dim": n, "c_star": c_star, "calibration_seed": CALIBRATION_SEED,
                     "holdout_seed": HOLDOUT_SEED, "holdout_max": float(hold.max()),
                     "exceedances": int(np.sum(hold > c_star))})
        ok &= bool(np.all(hold <= c_star))
    worst = max(r["holdout_max"] / r["c_star"] for r in rows)
    m = _summary({"rows": rows, "worst_fraction_of_c_star": worst}, "worst_fraction_of_c_star")
    res = CriterionResult(11, "interpolation inequality holdout", ok, m, "holdout <= C*")
    ctx.write("criterion_11.json", dumps(res.to_dict()))
    return res


CRITERIA = {
    1: criterion_01, 2: criterion_02, 3: criterion_03, 4: criterion_04, 5: criterion_05,
    6: criterion_06, 7: criterion_07, 8: criterion_08, 9: criterion_09, 10: criterion_10,
    11: criterion_11,
}


def run_criterion(number: int, ctx: SuiteContext) -> CriterionResult:
    if number == 12:
        return criterion_12(ctx)
    t0 = time.perf_counter()
    res = CRITERIA[number](ctx)
    ctx.log.append(f"criterion {number}: {time.perf_counter() - t0:.2f} s")
    return res


def artifact_digest(directory) -> dict:
    """SHA-256 of every artifact file except the run log."""
    directory = Path(directory)
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(directory.iterdir()) if p.is_file() and p.name != "run.log"}


def criterion_12(ctx: SuiteContext, first=None, second=None) -> CriterionResult:
    """Run criteria 1-11 twice in separate directories and compare artifacts byte for byte.

    Existing run directories may be passed in to avoid recomputation.
    """
    base = ctx.out if ctx.out is not None else Path.cwd() / "determinism"
    dirs = []
    for tag, given in (("run_a", first), ("run_b", second)):
        if given is not None:
            dirs.append(Path(given))
            continue
        d = base / tag
        sub = SuiteContext(ctx.seed, d, figures=True)
        for n in CRITERIA:
            run_criterion(n, sub)
        write_report(sub, [])
        dirs.append(d)
    a, b = artifact_digest(dirs[0]), artifact_digest(dirs[1])
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = not differing and len(a) > 0
    m = _summary({"files_compared": len(a), "differing": differing,
                  "digests": a}, "files_compared")
    m["summary_keys"].append("differing")
    res = CriterionResult(12, "determinism of artifacts", ok, m, "byte-identical")
    ctx.write("criterion_12.json", dumps(res.to_dict()))
    return res


def write_report(ctx: SuiteContext, results) -> dict:
    report = {"seed": ctx.seed,
              "criteria": [r.to_dict() for r in results],
              "passed": [r.number for r in results if r.passed],
              "failed": [r.number for r in results if not r.passed],
              "known_failures": {str(k): v for k, v in KNOWN_FAILURES.items()}}
    ctx.write("report.json", dumps(report))
    if ctx.out is not None and ctx.log:
        (ctx.out / "run.log").write_text("\n".join(ctx.log) + "\n")
    return report


def run_suite(ctx: SuiteContext, numbers=None) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if numbers is None else list(numbers)
    results = [run_criterion(n, ctx) for n in numbers]
    write_report(ctx, results)
    return results
