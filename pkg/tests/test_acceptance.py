"""End-to-end acceptance criteria, each at its stated tolerance.

The full preset suite is run twice at default resolution (module fixture);
criteria 4, 6, 7, 8 and 10 read its results.
"""

import filecmp
import os
import time

import numpy as np
import pytest

from hamtransport.curvature import curvature_scaling_check
from hamtransport.flow import homogeneity_check, integrate_flow
from hamtransport.geometry import Chart, Flat, RoundSphere, ScaledFamily, chart_difference
from hamtransport.geometry import scalar_curvature_evolution_check
from hamtransport.hamiltonian import HamiltonianModel
from hamtransport.harness.cli import run_suite
from hamtransport.harness.config import build_scenario
from hamtransport.harness.presets import PRESETS, preset_config
from hamtransport.harness.runner import run_oracle
from hamtransport.transport import PotentialF, bochner_check, riccati_evolve

SUITE_LIMIT = 600.0


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    configs = [preset_config(name) for name in PRESETS]
    dirs, runs, times = [], [], []
    for k in range(2):
        out = str(tmp_path_factory.mktemp(f"suite{k}"))
        start = time.perf_counter()
        results, code = run_suite(configs, out)
        times.append(time.perf_counter() - start)
        dirs.append(out)
        runs.append((results, code))
    return {"dirs": dirs, "results": runs[0][0], "code": runs[0][1], "seconds": times[0]}


def checks(results, predicate):
    return [c for r in results for c in r.checks if predicate(c)]


def test_criterion_01_curvature_oracle(criterion):
    sc = build_scenario(preset_config("oracle-curvature-sweep"))
    start = time.perf_counter()
    res = run_oracle(sc)
    elapsed = time.perf_counter() - start
    worst = max(row[6] for row in res.table)
    fams = sorted({row[1] for row in res.table})
    ok = (worst <= 1e-3 and elapsed <= 60.0 and len(fams) == 5
          and all(sum(row[1] == f for row in res.table) == 50 for f in fams))
    criterion(1, ok, f"max rel err {worst:.2e} over {len(res.table)} points, {elapsed:.1f}s")


def test_criterion_02_riccati_closed_forms(criterion):
    a = 0.7
    tg = np.linspace(0, 2, 1025)
    free = riccati_evolve(a * np.eye(2), np.zeros((2, 2)), tg)
    e1 = np.max(np.abs(free.S[:, 0] - (a / (1 + a * tg))[:, None, None] * np.eye(2)))
    kap = 2.0
    T = 0.9 * np.pi / (2 * np.sqrt(kap))
    tk = np.linspace(0, T, int(np.ceil(T * 512)) + 1)
    curved = riccati_evolve(np.zeros((2, 2)), kap * np.eye(2), tk)
    e2 = np.max(np.abs(curved.S[:, 0] - (-np.sqrt(kap) * np.tan(np.sqrt(kap) * tk))[:, None, None] * np.eye(2)))
    caustic = riccati_evolve(-np.eye(2), np.zeros((2, 2)), tg, raise_on_caustic=False).caustic_time
    ok = e1 <= 1e-7 and e2 <= 1e-6 and caustic is not None and abs(caustic - 1.0) <= 1e-3
    criterion(2, ok, f"free {e1:.1e}, constant curvature {e2:.1e}, caustic at {caustic}")


def test_criterion_03_rk4_order_and_energy(criterion):
    H = HamiltonianModel(RoundSphere(2), "kinetic")
    z0 = np.array([[np.pi / 2, 0.0, -np.sqrt(0.5), np.sqrt(0.5)]])

    def err(steps):
        tr = integrate_flow(H, z0, 0.0, 2 * np.pi, steps)
        return np.max(np.abs(chart_difference(H.chart, tr.points[-1, 0, :2], z0[0, :2])))

    ratio = err(128) / err(256)
    drift = float(np.max(integrate_flow(H, z0, 0.0, 2 * np.pi).energy_drift))
    criterion(3, 12.0 <= ratio <= 20.0 and drift <= 1e-7, f"order ratio {ratio:.2f}, energy drift {drift:.1e}")


def test_criterion_04_pairing(suite, criterion):
    found = checks(suite["results"], lambda c: c.check == "pairing_drift")
    worst = max(1e-8 - c.margin for c in found)
    criterion(4, len(found) > 0 and worst <= 1e-8, f"max pairing drift {worst:.1e} over {len(found)} variants")


def test_criterion_05_homogeneity(suite, criterion):
    H = HamiltonianModel(RoundSphere(2), "kinetic")
    rng = np.random.default_rng(5)
    # |p| small enough that lambda * T * |p| stays inside the chart
    z = np.concatenate([rng.uniform(1.2, 1.9, (8, 2)), 0.2 * rng.normal(size=(8, 2))], axis=1)
    rep = max(homogeneity_check(H, z, lam, 0.5) for lam in (0.5, 2.0, 3.0))
    sca = max(curvature_scaling_check(H, z, lam) for lam in (0.5, 2.0, 3.0))
    for r in suite["results"]:
        for row in r.table if r.mode == "scaling" else ():
            if row[1] == "reparametrization":
                rep = max(rep, row[3])
            else:
                sca = max(sca, row[3])
    criterion(5, rep <= 1e-7 and sca <= 1e-6, f"reparametrization {rep:.1e}, lambda^2 scaling {sca:.1e}")


def test_criterion_06_richardson(suite, criterion):
    found = checks(suite["results"], lambda c: c.check.endswith(".richardson"))
    worst = max(0.2 - c.margin for c in found)
    variants = {c.scenario for c in found}
    criterion(6, len(found) > 0 and worst <= 0.2,
              f"max |slope - 2| = {worst:.4f} over {len(found)} functionals in {len(variants)} variants")


def test_criterion_07_bochner(suite, criterion):
    x = np.array([[0.1, 0.2], [-0.5, 0.7], [0.9, -0.3]])
    flat = bochner_check(HamiltonianModel(Flat(Chart.plane(2)), "kinetic"), PotentialF.quadratic(1.0, 2), x)
    flat_err = float(np.max(np.abs(flat.lhs - 2.0)))
    sphere = checks(suite["results"], lambda c: c.check == "bochner")
    worst = max(1e-4 - c.margin for c in sphere)
    ok = flat_err <= 1e-4 and worst <= 1e-4 and len(sphere) >= 2
    criterion(7, ok, f"flat lhs - n = {flat_err:.1e}, suite max residual {worst:.1e}")


def test_criterion_08_inequalities_and_runtime(suite, criterion):
    margins = [float(np.min(rep.margin[1:-1])) for r in suite["results"] for _, rep in r.reports]
    aborted = [c for c in checks(suite["results"], lambda c: c.status == "ABORT")]
    worst = min(margins)
    ok = worst >= -1e-4 and not aborted and suite["code"] == 0 and suite["seconds"] <= SUITE_LIMIT
    criterion(8, ok, f"worst margin {worst:.2e} over {len(margins)} reports, suite {suite['seconds']:.0f}s,"
                     f" exit {suite['code']}")


def test_criterion_09_scalar_curvature(suite, criterion):
    fams = [("1 - 2*t", "-2", "0", 0.0, 0.3), ("sqrt(t)*(1 + 2*t)", "2*sqrt(t)", "1/(2*t)", 0.5, 1.0),
            ("sqrt(t)*(3 - 2*t)", "-2*sqrt(t)", "1/(2*t)", 0.5, 1.0), ("t*(2 - 2*log(t))", "-2", "1/t", 0.5, 1.0)]
    direct = max(scalar_curvature_evolution_check(ScaledFamily(RoundSphere(2), s, c1, c2),
                                                  np.linspace(a + 0.05, b - 0.05, 7))
                 for s, c1, c2, a, b in fams)
    found = checks(suite["results"], lambda c: c.check == "scalar_curvature_evolution")
    worst = max([1e-6 - c.margin for c in found] + [direct])
    criterion(9, worst <= 1e-6 and len(found) > 0, f"max residual {worst:.1e}")


def test_criterion_10_deterministic_output(suite, criterion):
    a, b = suite["dirs"]
    names = sorted(os.listdir(a))
    same = names == sorted(os.listdir(b))
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    ok = same and not mismatch and not errors and any(n.endswith(".csv") for n in match)
    criterion(10, ok, f"{len(match)} identical files, {len(mismatch)} differ")
