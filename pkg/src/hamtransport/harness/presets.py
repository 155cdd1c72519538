"""Built-in scenarios, stored as config texts.

Every theorem id of the transport module is reachable from at least one
preset.  Defaults are 32 x 32 particles and 512 steps per unit time.
"""

from ..errors import ConfigError
from .config import parse_text

_SPHERE_BOX = """
domain.lower = 1.0, -0.5
domain.upper = 2.0, 0.5
density.expr = 1 + 0.3*cos(x1 + x2)
"""

_PRESETS = [
    ("flat-e1-quadratic", "flat plane, kinetic, f = |x|^2/4, E1 convexity with b = 0", """
metric.kind = flat
hamiltonian.kind = kinetic
measure.kind = riemannian_volume
f.expr = 0.25*(x1^2 + x2^2)
domain.lower = -1, -1
domain.upper = 1, 1
density.expr = 1 + 0.3*cos(x1 + x2)
time.T = 1
theorems = thm2.2
params.b = 0
"""),
    ("flat-e1-trig", "flat torus, kinetic, trigonometric f, E1 convexity with b = 0", """
metric.kind = flat
metric.chart = torus
hamiltonian.kind = kinetic
measure.kind = riemannian_volume
f.expr = 0.1*sin(x1) + 0.05*cos(x2) + 0.03*sin(x1 + x2)
domain.lower = 0, 0
domain.upper = 2*pi, 2*pi
density.expr = 1 + 0.3*cos(x1 + x2)
time.T = 1
theorems = thm2.2
params.b = 0
"""),
    ("thm2.2-sphere-b", "unit sphere, mechanical H, weighted measure, constant b = 1", """
metric.kind = sphere
hamiltonian.kind = mechanical
hamiltonian.U.expr = 0.3*cos(x1)
measure.kind = weighted
measure.U.expr = 0.2*cos(x1)*cos(x2)
f.expr = 0.2*cos(x1) + 0.1*sin(x2)*sin(x1)
""" + _SPHERE_BOX + """
time.T = 0.3
theorems = thm2.2
params.b = 1
"""),
    ("cor2.3-sphere", "unit sphere, kinetic, five potentials, relative entropy bound with K = 1", """
metric.kind = sphere
hamiltonian.kind = kinetic
measure.kind = riemannian_volume
f.expr = 0.2*cos(x1) + 0.1*sin(x2)*sin(x1); 0.15*sin(x1)*cos(x2); 0.1*cos(2*x1) - 0.05*sin(x2); 0.05*(x1 - 1.5)^2 + 0.1*x2; 0.1*sin(x1 + x2)
f.labels = f1, f2, f3, f4, f5
""" + _SPHERE_BOX + """
time.T = 0.3
theorems = cor2.3
params.K = 1
"""),
    ("cor2.6-ricciflow-sphere", "shrinking sphere s = 1 - 2t with L = |v|^2/2 + R/2, E3 and E6", """
metric.kind = scaled_family
metric.base = sphere
metric.s = 1 - 2*t
params.c1 = -2
params.c2 = 0
hamiltonian.kind = time_dependent_mechanical
hamiltonian.U.expr = ricci
measure.kind = hj_weighted
params.k = 1
params.b = 0
params.C = 1
f.expr = 0.01*sin(x1)*cos(x2)
""" + _SPHERE_BOX + """
time.T = 0.2
theorems = cor2.4, cor2.6, cor2.9
"""),
    ("cor2.7-perelman", "backward family s = sqrt(t)(1 + 2t), reduced-volume type E4 on [0.5, 1]", """
metric.kind = scaled_family
metric.base = sphere
metric.s = sqrt(t)*(1 + 2*t)
params.c1 = 2*sqrt(t)
params.c2 = 1/(2*t)
hamiltonian.kind = time_dependent_mechanical
hamiltonian.U.expr = ricci
measure.kind = hj_weighted
params.k = -t^(-1/2)
params.m = -1/2
params.C = -1
f.expr = 0.01*sin(x1)*cos(x2)
""" + _SPHERE_BOX + """
time.t0 = 0.5
time.T = 1
theorems = cor2.7, cor2.5
"""),
    ("cor2.8-forward", "forward family s = sqrt(t)(3 - 2t), E5 on [0.5, 1]", """
metric.kind = scaled_family
metric.base = sphere
metric.s = sqrt(t)*(3 - 2*t)
params.c1 = -2*sqrt(t)
params.c2 = 1/(2*t)
hamiltonian.kind = time_dependent_mechanical
hamiltonian.U.expr = ricci
measure.kind = hj_weighted
params.k = t^(-1/2)
params.m = -1/2
params.C = 1
f.expr = 0.01*sin(x1)*cos(x2)
""" + _SPHERE_BOX + """
time.t0 = 0.5
time.T = 1
theorems = cor2.8, cor2.5
"""),
    ("cor2.11-e7-sphere", "unit sphere, kinetic, E7 convexity with N = n = 2", """
metric.kind = sphere
hamiltonian.kind = kinetic
measure.kind = riemannian_volume
f.expr = 0.2*cos(x1) + 0.1*sin(x2)*sin(x1)
""" + _SPHERE_BOX + """
time.T = 0.3
theorems = cor2.11
params.N = 2
"""),
    ("cor2.13-e8", "forward family, E8 with q = 1/2, C1 = C2 = 1, b1 = 1/t, b2 = 3/(2t)", """
metric.kind = scaled_family
metric.base = sphere
metric.s = sqrt(t)*(3 - 2*t)
params.c1 = -2*sqrt(t)
params.c2 = 1/(2*t)
hamiltonian.kind = time_dependent_mechanical
hamiltonian.U.expr = ricci
measure.kind = hj_weighted
params.k = t^(-1/2)
params.q = 1/2
params.m = -1/2
params.C1 = 1
params.C2 = 1
params.b1 = 1/t
params.b2 = 3/(2*t)
f.expr = 0.01*sin(x1)*cos(x2)
""" + _SPHERE_BOX + """
time.t0 = 0.5
time.T = 1
theorems = cor2.13, cor2.12, thm2.10
"""),
    ("cor2.14-e8", "family s = t(2 - 2 log t), E8 with q = 1/2, C1 = C2 = C3 = 1", """
metric.kind = scaled_family
metric.base = sphere
metric.s = t*(2 - 2*log(t))
params.c1 = -2
params.c2 = 1/t
hamiltonian.kind = time_dependent_mechanical
hamiltonian.U.expr = ricci
measure.kind = hj_weighted
params.k = 1
params.q = 1/2
params.C1 = 1
params.C2 = 1
params.C3 = 1
f.expr = 0.01*sin(x1)*cos(x2)
""" + _SPHERE_BOX + """
time.t0 = 0.5
time.T = 1
theorems = cor2.14
"""),
    ("thm2.10-q2-sphere", "unit sphere, kinetic, power functional r^q with q = 2", """
metric.kind = sphere
hamiltonian.kind = kinetic
measure.kind = riemannian_volume
f.expr = 0.2*cos(x1) + 0.1*sin(x2)*sin(x1)
""" + _SPHERE_BOX + """
time.T = 0.3
theorems = thm2.10
params.q = 2
"""),
    ("thm2.15-drift-flat", "flat plane, drift H with W = 0.1 sin x1 + 0.05 t cos x2", """
metric.kind = flat
hamiltonian.kind = drift
hamiltonian.W.expr = 0.1*sin(x1) + 0.05*t*cos(x2)
hamiltonian.U.expr = 0.5*(0.01*cos(x1)^2 + 0.0025*t^2*sin(x2)^2) + 0.05*cos(x2) + 0.25*(x1^2 + x2^2)
measure.kind = riemannian_volume
f.expr = 0.15*(x1^2 + x2^2)
domain.lower = -1, -1
domain.upper = 1, 1
density.expr = 1 + 0.3*cos(x1 + x2)
time.T = 1
theorems = thm2.15, thm2.2
params.b = 0
"""),
    ("bochner-flat", "Bochner identity on the plane for f = |x|^2/2 (both sides equal n)", """
mode = bochner
metric.kind = flat
hamiltonian.kind = kinetic
f.expr = 0.5*(x1^2 + x2^2)
domain.lower = -1, -1
domain.upper = 1, 1
grid.particles = 6
"""),
    ("bochner-sphere", "Bochner identity on the unit sphere for a small bump potential", """
mode = bochner
metric.kind = sphere
hamiltonian.kind = kinetic
f.expr = 0.1*(x1 - 1.5)*exp(-((x1 - 1.5)^2 + x2^2)/(2*0.3^2))
domain.lower = 1.0, -0.5
domain.upper = 2.0, 0.5
grid.particles = 6
"""),
    ("scaling-lemma7.2", "flow reparametrization and lambda^2 scaling of tr R for kinetic H", """
mode = scaling
metric.kind = sphere
hamiltonian.kind = kinetic
f.expr = 0.2*cos(x1) + 0.1*sin(x2)*sin(x1)
domain.lower = 1.0, -0.5
domain.upper = 2.0, 0.5
grid.particles = 4
scaling.lambda = 0.5, 2, 3
scaling.T = 0.5
"""),
    ("oracle-curvature-sweep", "frame-based vs closed-form curvature trace at random phase points", """
mode = oracle
oracle.points = 50
oracle.families = flat_u, sphere_u, conformal, shrinking, drift_flat
"""),
]

PRESETS = {name: (desc, text.strip() + "\n") for name, desc, text in _PRESETS}


def list_presets():
    """(name, one-line description) pairs in definition order."""
    return [(name, desc) for name, desc, _ in _PRESETS]


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}", key="preset")
    return f"name = {name}\ndescription = {PRESETS[name][0]}\n" + PRESETS[name][1]


def preset_config(name):
    return parse_text(preset_text(name), source=f"preset:{name}")
