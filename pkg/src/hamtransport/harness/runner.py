"""Execute scenarios and collect report rows, checks and diagnostics."""

from dataclasses import dataclass, field

import numpy as np

from ..curvature import curvature_scaling_check, curvature_trace_analytic, curvature_via_frames
from ..errors import CausticReached, ChartBoundary, ConstraintViolation
from ..flow import homogeneity_check
from ..geometry import Chart, ConformalTorus, Flat, RoundSphere, ScaledFamily, scalar_curvature_evolution_check
from ..hamiltonian import HamiltonianModel, ricci_potential
from ..transport import (
    bochner_check, gradient_consistency, hj_solve, inequality_check, make_cloud, richardson_slope,
)

ABORT_ERRORS = (CausticReached, ChartBoundary, ConstraintViolation)

BOCHNER_TOL = 1e-4
ORACLE_TOL = 1e-3
REPARAM_TOL = 1e-7
SCALING_TOL = 1e-6
PAIRING_TOL = 1e-8
SLOPE_TARGET, SLOPE_TOL = 2.0, 0.2
SCALAR_CURVATURE_TOL = 1e-6


@dataclass
class Check:
    """One summary line.

    ``margin`` is the worst LHS - RHS for inequality checks (PASS iff it is
    at least -tol) and ``limit - error`` for tolerance checks (PASS iff it
    is nonnegative).
    """

    scenario: str
    check: str
    t: float
    margin: float
    status: str
    detail: str = ""


@dataclass
class ScenarioResult:
    name: str
    mode: str
    reports: list = field(default_factory=list)  # (variant name, FunctionalReport)
    table: list = field(default_factory=list)  # rows for non-transport modes
    table_header: tuple = ()
    checks: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)  # (variant, key, value)

    @property
    def failed(self):
        return any(c.status == "FAIL" for c in self.checks)

    @property
    def aborted(self):
        return any(c.status == "ABORT" for c in self.checks)


def _error_check(scenario, name, err, limit, t=float("nan")):
    margin = limit - err if np.isfinite(err) else -np.inf
    return Check(scenario, name, t, float(margin), "PASS" if margin >= 0 else "FAIL")


def _variant(sc, label):
    return sc.name if not label else f"{sc.name}#{label}"


# ----------------------------------------------------------------------------
# transport
# ----------------------------------------------------------------------------

def _run_variant(sc, label, f, res):
    name = _variant(sc, label)
    H = sc.H
    cloud = make_cloud(H.metric, sc.measure, sc.lower, sc.upper, sc.per_axis, sc.density, sc.t0, f)
    state = hj_solve(H, f, cloud, sc.t0, sc.T, steps=sc.steps, measure=sc.measure)
    diag = dict(state.diagnostics)
    diag["particles"] = cloud.size
    diag["steps"] = sc.steps
    diag["gradient_consistency"] = gradient_consistency(H, f, state)
    res.checks.append(_error_check(name, "pairing_drift", diag["pairing_drift"], PAIRING_TOL))
    if H.autonomous:
        res.checks.append(_error_check(name, "energy_drift", diag["energy_drift"], sc.energy_tol))
    if isinstance(H.metric, ScaledFamily):
        pts = cloud.nodes[:: max(1, cloud.size // sc.check_points)]
        tg = np.linspace(sc.t0, sc.T, 9)[1:-1]
        err = scalar_curvature_evolution_check(H.metric, tg, pts)
        diag["scalar_curvature_residual"] = err
        res.checks.append(_error_check(name, "scalar_curvature_evolution", err, SCALAR_CURVATURE_TOL))
    h = state.trajectory.h
    for th in sc.theorems:
        rep = inequality_check(th, state, sc.params, sc.tol)
        res.reports.append((name, rep))
        slope, e1, e2 = richardson_slope(rep.F, rep.dF_analytic, h)
        diag[f"{th}.richardson_slope"] = slope
        diag[f"{th}.richardson_err_2h"] = e1
        diag[f"{th}.richardson_err_4h"] = e2
        diag[f"{th}.constraint_residual"] = rep.constraint_residual
        diag[f"{th}.worst_margin"] = rep.worst_margin
        i = rep.worst_index
        res.checks.append(Check(name, th, float(rep.t_grid[i]), rep.worst_margin,
                                "PASS" if rep.passed else "FAIL", rep.functional))
        res.checks.append(_error_check(name, f"{th}.richardson", abs(slope - SLOPE_TARGET), SLOPE_TOL))
    res.diagnostics.extend((name, k, float(v)) for k, v in diag.items() if v is not None)


def run_transport(sc):
    res = ScenarioResult(sc.name, sc.mode)
    for label, f in sc.potentials:
        try:
            _run_variant(sc, label, f, res)
        except ABORT_ERRORS as exc:
            t = exc.context.get("t")
            res.checks.append(Check(_variant(sc, label), type(exc).__name__,
                                    float("nan") if t is None else float(t), float("nan"), "ABORT", str(exc)))
    return res


# ----------------------------------------------------------------------------
# Bochner
# ----------------------------------------------------------------------------

def _grid_points(sc):
    axes = [lo + (np.arange(sc.per_axis) + 0.5) * (hi - lo) / sc.per_axis for lo, hi in zip(sc.lower, sc.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def run_bochner(sc):
    res = ScenarioResult(sc.name, sc.mode)
    n = sc.H.dim
    res.table_header = ("scenario", "point") + tuple(f"x{i + 1}" for i in range(n)) + (
        "lhs", "rhs", "residual", "status")
    for label, f in sc.potentials:
        name = _variant(sc, label)
        x = _grid_points(sc)
        out = bochner_check(sc.H, f, x, sc.t0)
        for i in range(x.shape[0]):
            st = "PASS" if out.residual[i] <= BOCHNER_TOL else "FAIL"
            res.table.append((name, i, *x[i], out.lhs[i], out.rhs[i], out.residual[i], st))
        res.checks.append(_error_check(name, "bochner", float(np.max(out.residual)), BOCHNER_TOL))
        res.diagnostics.append((name, "bochner_max_residual", float(np.max(out.residual))))
        res.diagnostics.append((name, "bochner_mean_lhs", float(np.mean(out.lhs))))
    return res


# ----------------------------------------------------------------------------
# Homogeneity (flow reparametrization and curvature scaling)
# ----------------------------------------------------------------------------

def run_scaling(sc):
    res = ScenarioResult(sc.name, sc.mode)
    res.table_header = ("scenario", "check", "lambda", "error", "limit", "status")
    H = sc.H
    for label, f in sc.potentials:
        name = _variant(sc, label)
        x = _grid_points(sc)
        z = np.concatenate([x, f.grad(x)], axis=1)
        for lam in sc.lambdas:
            steps = max(16, int(np.ceil(abs(lam) * sc.scaling_T * sc.steps_per_unit)))
            for check, err, lim in (
                ("reparametrization", homogeneity_check(H, z, lam, sc.scaling_T, steps), REPARAM_TOL),
                ("curvature_scaling", curvature_scaling_check(H, z, lam, sc.t0), SCALING_TOL),
            ):
                res.table.append((name, check, lam, err, lim, "PASS" if err <= lim else "FAIL"))
                res.checks.append(_error_check(name, f"{check}@{lam:g}", err, lim))
    return res


# ----------------------------------------------------------------------------
# Curvature oracle sweep
# ----------------------------------------------------------------------------

def oracle_family(name):
    """(H, x-box lower, x-box upper, t-range) for one oracle family."""
    if name == "flat_u":
        H = HamiltonianModel(Flat(Chart.torus(2)), "mechanical", "0.3*cos(x1) + 0.2*sin(x2)*cos(x1)")
        return H, [0.0, 0.0], [2 * np.pi, 2 * np.pi], (0.0, 0.0)
    if name == "sphere_u":
        H = HamiltonianModel(RoundSphere(2), "mechanical", "0.3*cos(x1) + 0.1*sin(x1)*sin(x2)")
        return H, [0.4, 0.0], [np.pi - 0.4, 2 * np.pi], (0.0, 0.0)
    if name == "conformal":
        H = HamiltonianModel(ConformalTorus("0.2*sin(x1)*cos(x2)"), "kinetic")
        return H, [0.0, 0.0], [2 * np.pi, 2 * np.pi], (0.0, 0.0)
    if name == "shrinking":
        fam = ScaledFamily(RoundSphere(2), "1 - 2*t", "-2", "0")
        H = HamiltonianModel(fam, "time_dependent_mechanical", ricci_potential(fam, fam.c1))
        return H, [0.4, 0.0], [np.pi - 0.4, 2 * np.pi], (0.0, 0.3)
    if name == "drift_flat":
        H = HamiltonianModel(Flat(Chart.plane(2)), "drift", "0.25*(x1^2 + x2^2)",
                             "0.1*sin(x1) + 0.05*t*cos(x2)")
        return H, [-2.0, -2.0], [2.0, 2.0], (0.0, 1.0)
    raise KeyError(name)


def run_oracle(sc):
    res = ScenarioResult(sc.name, sc.mode)
    res.table_header = ("scenario", "family", "point", "t", "trace_frames", "trace_analytic", "rel_err", "status")
    rng = np.random.default_rng(sc.seed)
    for fam in sc.oracle_families:
        H, lo, hi, (ta, tb) = oracle_family(fam)
        N = sc.oracle_points
        x = rng.uniform(lo, hi, size=(N, 2))
        p = rng.normal(size=(N, 2))
        ts = rng.uniform(ta, tb, size=N) if tb > ta else np.full(N, ta)
        worst = 0.0
        for i in range(N):
            z = np.concatenate([x[i], p[i]])[None, :]
            a = float(curvature_via_frames(H, ts[i], z).trace[0])
            b = float(curvature_trace_analytic(H, ts[i], z)[0])
            rel = abs(a - b) / max(1.0, abs(b))
            worst = max(worst, rel)
            res.table.append((sc.name, fam, i, ts[i], a, b, rel, "PASS" if rel <= ORACLE_TOL else "FAIL"))
        res.checks.append(_error_check(f"{sc.name}#{fam}", "curvature_oracle", worst, ORACLE_TOL))
        res.diagnostics.append((f"{sc.name}#{fam}", "max_rel_err", worst))
    return res


RUNNERS = {"transport": run_transport, "bochner": run_bochner, "scaling": run_scaling, "oracle": run_oracle}


def run_scenario(sc):
    return RUNNERS[sc.mode](sc)
