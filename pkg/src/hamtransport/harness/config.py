"""Flat ``key = value`` scenario configuration.

A config is plain text with one assignment per line; ``#`` starts a
comment.  Keys are dotted (``metric.kind``, ``hamiltonian.U.expr``,
``grid.particles`` ...).  Several potentials may be given in ``f.expr``
separated by ``;``; each one becomes a variant of the scenario that is
solved and reported separately.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..expr import ScalarField, TimeFunction
from ..geometry import Chart, ConformalTorus, Flat, MeasureModel, RoundSphere, ScaledFamily
from ..hamiltonian import HamiltonianModel, ricci_potential
from ..transport import THEOREMS, PotentialF

MODES = ("transport", "oracle", "bochner", "scaling")
PARTICLE_RANGE = (2, 256)
STEP_RANGE = (16, 16384)
PARAM_KEYS = ("b", "K", "q", "b1", "b2", "m", "C", "C1", "C2", "C3", "N", "c1", "c2", "k")
ORACLE_FAMILIES = ("flat_u", "sphere_u", "conformal", "shrinking", "drift_flat")

KNOWN_KEYS = {
    "name", "description", "mode", "theorems", "seed",
    "metric.kind", "metric.chart", "metric.dim", "metric.r0", "metric.phi", "metric.base", "metric.s",
    "hamiltonian.kind", "hamiltonian.U.expr", "hamiltonian.W.expr",
    "measure.kind", "measure.U.expr",
    "f.expr", "f.labels", "density.expr",
    "domain.lower", "domain.upper", "grid.particles",
    "time.t0", "time.T", "time.steps",
    "tol.ineq", "tol.energy",
    "oracle.points", "oracle.families",
    "scaling.lambda", "scaling.T",
    "checks.points",
} | {f"params.{k}" for k in PARAM_KEYS}


def parse_text(text, source="<config>"):
    """Return the ordered ``{key: value}`` mapping of a config text."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'", key=line)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}", key=key)
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}", key=key)
        out[key] = value
    return out


def load_config(path):
    with open(path) as fh:
        return parse_text(fh.read(), source=str(path))


def _float(cfg, key, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}", key=key)
        return float(default)
    fn = TimeFunction(cfg[key], key=key)
    if fn.expr.free_symbols:
        raise ConfigError(f"{key} must be a constant, got {cfg[key]!r}", key=key)
    return fn(0.0)


def _param(cfg, key):
    """Constants become floats; functions of t stay as expression text."""
    fn = TimeFunction(cfg[key], key=key)
    return cfg[key] if fn.expr.free_symbols else fn(0.0)


def _int(cfg, key, default, bounds=None):
    raw = cfg.get(key, default)
    try:
        val = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be an integer, got {raw!r}", key=key) from None
    if bounds is not None and not bounds[0] <= val <= bounds[1]:
        raise ConfigError(f"{key}={val} outside [{bounds[0]}, {bounds[1]}]", key=key)
    return val


def _vector(cfg, key, dim):
    if key not in cfg:
        raise ConfigError(f"missing required key {key!r}", key=key)
    parts = [s for s in cfg[key].split(",") if s.strip()]
    vals = [_float({key: s}, key) for s in parts]
    if len(vals) != dim:
        raise ConfigError(f"{key} needs {dim} entries, got {len(vals)}", key=key)
    return np.array(vals)


def _choice(cfg, key, options, default=None):
    val = cfg.get(key, default)
    if val is None:
        raise ConfigError(f"missing required key {key!r}", key=key)
    if val not in options:
        raise ConfigError(f"{key} must be one of {', '.join(options)}, got {val!r}", key=key)
    return val


def build_metric(cfg):
    kind = _choice(cfg, "metric.kind", ("flat", "sphere", "conformal_torus", "scaled_family"))
    dim = _int(cfg, "metric.dim", 2, (1, 3))
    if kind == "flat":
        chart = _choice(cfg, "metric.chart", ("plane", "torus"), "plane")
        return Flat(Chart.plane(dim) if chart == "plane" else Chart.torus(dim))
    if kind == "sphere":
        return RoundSphere(dim, _float(cfg, "metric.r0", 1.0))
    if kind == "conformal_torus":
        if "metric.phi" not in cfg:
            raise ConfigError("conformal_torus needs metric.phi", key="metric.phi")
        return ConformalTorus(ScalarField(cfg["metric.phi"], dim, key="metric.phi"), dim)
    base_kind = _choice(cfg, "metric.base", ("flat", "sphere"), "sphere")
    base = Flat(Chart.plane(dim)) if base_kind == "flat" else RoundSphere(dim)
    for key in ("metric.s", "params.c1", "params.c2"):
        if key not in cfg:
            raise ConfigError(f"scaled_family needs {key}", key=key)
    return ScaledFamily(base, TimeFunction(cfg["metric.s"], key="metric.s"),
                        TimeFunction(cfg["params.c1"], key="params.c1"),
                        TimeFunction(cfg["params.c2"], key="params.c2"))


def build_hamiltonian(cfg, metric):
    kind = _choice(cfg, "hamiltonian.kind", ("kinetic", "mechanical", "time_dependent_mechanical", "drift"))
    n = metric.dim
    U = cfg.get("hamiltonian.U.expr")
    if U is not None and U.strip() == "ricci":
        U = ricci_potential(metric, metric.c1 if isinstance(metric, ScaledFamily) else None)
    elif U is not None:
        U = ScalarField(U, n, key="hamiltonian.U.expr")
    W = cfg.get("hamiltonian.W.expr")
    if W is not None:
        W = ScalarField(W, n, key="hamiltonian.W.expr")
    return HamiltonianModel(metric, kind, U, W)


def build_measure(cfg, dim):
    kind = _choice(cfg, "measure.kind", MeasureModel.KINDS, "riemannian_volume")
    weight = cfg.get("measure.U.expr")
    if weight is not None:
        weight = ScalarField(weight, dim, key="measure.U.expr")
    k = cfg.get("params.k")
    if kind == "hj_weighted" and k is not None:
        k = TimeFunction(k, key="params.k")
    elif kind != "hj_weighted":
        k = None
    return MeasureModel(kind, weight=weight, k=k)


@dataclass
class Scenario:
    """A fully built scenario, ready for the runner."""

    name: str
    mode: str
    description: str = ""
    H: object = None
    measure: object = None
    potentials: list = field(default_factory=list)  # [(label, PotentialF)]
    lower: np.ndarray = None
    upper: np.ndarray = None
    per_axis: int = 32
    density: str = "1"
    t0: float = 0.0
    T: float = 1.0
    steps_per_unit: int = 512
    theorems: tuple = ()
    params: dict = field(default_factory=dict)
    tol: float = 1e-4
    energy_tol: float = 1e-7
    seed: int = 0
    oracle_points: int = 50
    oracle_families: tuple = ORACLE_FAMILIES
    lambdas: tuple = (0.5, 2.0, 3.0)
    scaling_T: float = 0.5
    check_points: int = 16
    raw: dict = field(default_factory=dict)

    @property
    def steps(self):
        return max(STEP_RANGE[0], int(np.ceil((self.T - self.t0) * self.steps_per_unit)))


def _potentials(cfg, n):
    if "f.expr" not in cfg:
        raise ConfigError("missing required key 'f.expr'", key="f.expr")
    texts = [s.strip() for s in cfg["f.expr"].split(";") if s.strip()]
    if "f.labels" in cfg:
        labels = [s.strip() for s in cfg["f.labels"].split(",")]
        if len(labels) != len(texts):
            raise ConfigError("f.labels must name every potential in f.expr", key="f.labels")
    elif len(texts) == 1:
        labels = [""]
    else:
        labels = [f"f{i + 1}" for i in range(len(texts))]
    return [(lab, PotentialF(ScalarField(txt, n, key="f.expr"), n)) for lab, txt in zip(labels, texts)]


def build_scenario(cfg, particles=None, steps=None, tol=None, seed=None):
    """Turn a parsed config into a :class:`Scenario`; CLI overrides win."""
    name = cfg.get("name")
    if not name:
        raise ConfigError("missing required key 'name'", key="name")
    mode = _choice(cfg, "mode", MODES, "transport")
    sc = Scenario(name=name, mode=mode, description=cfg.get("description", ""), raw=dict(cfg))
    sc.seed = int(seed) if seed is not None else _int(cfg, "seed", 0)
    sc.tol = float(tol) if tol is not None else _float(cfg, "tol.ineq", 1e-4)
    sc.energy_tol = _float(cfg, "tol.energy", 1e-7)
    sc.params = {k.split(".", 1)[1]: _param(cfg, k) for k in cfg if k.startswith("params.")}
    if mode == "oracle":
        sc.oracle_points = _int(cfg, "oracle.points", 50, (1, 100000))
        fams = tuple(s.strip() for s in cfg.get("oracle.families", ",".join(ORACLE_FAMILIES)).split(","))
        for fam in fams:
            if fam not in ORACLE_FAMILIES:
                raise ConfigError(f"unknown oracle family {fam!r}", key="oracle.families")
        sc.oracle_families = fams
        return sc

    metric = build_metric(cfg)
    sc.H = build_hamiltonian(cfg, metric)
    n = metric.dim
    if mode == "scaling":
        lams = cfg.get("scaling.lambda", "0.5, 2, 3")
        try:
            sc.lambdas = tuple(float(s) for s in lams.split(","))
        except ValueError:
            raise ConfigError("scaling.lambda must be a comma list of numbers", key="scaling.lambda") from None
        sc.scaling_T = _float(cfg, "scaling.T", 0.5)
    sc.measure = build_measure(cfg, n)
    sc.potentials = _potentials(cfg, n)
    sc.lower = _vector(cfg, "domain.lower", n)
    sc.upper = _vector(cfg, "domain.upper", n)
    if np.any(sc.upper <= sc.lower):
        raise ConfigError("domain.upper must exceed domain.lower", key="domain.upper")
    sc.per_axis = int(particles) if particles is not None else _int(cfg, "grid.particles", 32)
    if not PARTICLE_RANGE[0] <= sc.per_axis <= PARTICLE_RANGE[1]:
        raise ConfigError(f"grid.particles={sc.per_axis} outside {PARTICLE_RANGE}", key="grid.particles")
    sc.density = cfg.get("density.expr", "1")
    sc.check_points = _int(cfg, "checks.points", 16, (1, 4096))
    sc.t0 = _float(cfg, "time.t0", 0.0)
    sc.T = _float(cfg, "time.T", 1.0)
    if sc.T <= sc.t0:
        raise ConfigError("time.T must exceed time.t0", key="time.T")
    sc.steps_per_unit = int(steps) if steps is not None else _int(cfg, "time.steps", 512)
    if not STEP_RANGE[0] <= sc.steps_per_unit <= STEP_RANGE[1]:
        raise ConfigError(f"time.steps={sc.steps_per_unit} outside {STEP_RANGE}", key="time.steps")
    if isinstance(metric, ScaledFamily):
        metric.check_scale(sc.t0, sc.T)
    theorems = tuple(s.strip() for s in cfg.get("theorems", "").split(",") if s.strip())
    for th in theorems:
        if th not in THEOREMS:
            raise ConfigError(f"unknown theorem id {th!r}", key="theorems")
    if mode == "transport" and not theorems:
        raise ConfigError("transport scenarios need at least one theorem id", key="theorems")
    sc.theorems = theorems
    return sc
