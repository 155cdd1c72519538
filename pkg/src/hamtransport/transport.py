"""Displacement interpolations along Hamiltonian characteristics.

Each particle of a Lagrangian cloud follows the characteristic through
``(x, df_x)``.  Along it we accumulate the HJ value ``u`` by the action,
evolve the transported Hessian ``S`` by a matrix Riccati equation and
integrate ``log det B = int tr S``.  Densities, entropy functionals and their
time derivatives are then weighted sums over particles.

Matrices ``S`` and ``R`` are expressed in the vertical frame
``V_i = (0, L[:, i])`` with ``g = L L^T``; that frame rotates against the
canonical one at rate ``Omega/2``, which adds a commutator to the Riccati
equation but leaves ``tr S``, ``|S|^2`` and ``tr R`` unchanged.
"""

from dataclasses import dataclass, field

import numpy as np

from .curvature import (
    _covariant_hessian,
    curvature_matrix,
    curvature_trace_analytic,
    edot_frame,
    frame_vectors,
    measure_log_weight,
    omega_matrix,
    volume_distortion_track,
)
from .errors import (
    CausticReached,
    ConfigError,
    ConstraintViolation,
    NonPositiveDensity,
    ResidualBreach,
    UnsupportedKind,
)
from .expr import ScalarField, TimeFunction
from .flow import Trajectory, default_steps, integrate_flow
from .geometry import (
    H_SECOND, MeasureModel, ScaledFamily, christoffel, covariant_laplacian, laplace_beltrami_fd,
    small_cholesky, small_inv,
)

EPS_CAUSTIC = 1e-6
TOL_INEQ = 1e-4
RICCATI_TOL = 1e-5
JACOBI_TOL = 1e-6
CONSTRAINT_TOL = 1e-10
# substeps keep h * |S| below this inside a Riccati step
SUBSTEP_SCALE = 0.05
MAX_SUBSTEPS = 1 << 14


# ----------------------------------------------------------------------------
# Potentials and particle clouds
# ----------------------------------------------------------------------------

class PotentialF:
    """Time-independent potential ``f`` defining the interpolation."""

    def __init__(self, source, dim, key="potential.f"):
        self.field = source if isinstance(source, ScalarField) else ScalarField(source, dim, key=key)
        if self.field.time_dependent:
            raise ConfigError("potential f must not depend on t", key=key)
        self.dim = int(dim)

    def __repr__(self):
        return f"PotentialF({self.field.text!r})"

    @classmethod
    def quadratic(cls, a, dim, center=None):
        """f = a/2 |x - c|^2 in coordinates."""
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        terms = " + ".join(f"(x{i + 1} - ({float(c[i])!r}))^2" for i in range(dim))
        return cls(f"{float(a)!r}/2*({terms})", dim)

    @classmethod
    def linear(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(" + ".join(f"({float(v)!r})*x{i + 1}" for i, v in enumerate(a)), a.size)

    @classmethod
    def trig(cls, coeffs, dim):
        """sum_j A_j cos(k_j . x) + B_j sin(k_j . x) from (A, B, k) triples."""
        parts = []
        for A, B, k in coeffs:
            arg = " + ".join(f"({float(kj)!r})*x{i + 1}" for i, kj in enumerate(k))
            parts.append(f"({float(A)!r})*cos({arg}) + ({float(B)!r})*sin({arg})")
        return cls(" + ".join(parts), dim)

    @classmethod
    def bump_linear(cls, eps, slope, center, width):
        """eps (slope . (x - c)) exp(-|x - c|^2 / (2 width^2))."""
        slope = np.asarray(slope, dtype=float)
        c = np.asarray(center, dtype=float)
        lin = " + ".join(f"({float(s)!r})*(x{i + 1} - ({float(c[i])!r}))" for i, s in enumerate(slope))
        sq = " + ".join(f"(x{i + 1} - ({float(c[i])!r}))^2" for i in range(c.size))
        return cls(f"({float(eps)!r})*({lin})*exp(-({sq})/(2*({float(width)!r})^2))", c.size)

    def value(self, x):
        return self.field.value(0.0, x)

    def grad(self, x):
        return self.field.grad(0.0, x)

    def hess(self, x):
        return self.field.hess(0.0, x)


@dataclass
class ParticleCloud:
    nodes: np.ndarray
    weights: np.ndarray
    rho0: np.ndarray
    cell: float

    @property
    def size(self):
        return self.nodes.shape[0]


def make_cloud(metric, measure, lower, upper, per_axis, density="1", t0=0.0, f=None):
    """Midpoint tensor grid on a coordinate box, weighted by m_{t0}.

    ``density`` is an unnormalized profile for the density of mu with
    respect to ``m_{t0}``.  On periodic axes spanning a full period the
    midpoint rule is the trapezoid rule; on the sphere chart the volume
    element supplies the sin(theta) weight.
    """
    n = metric.dim
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,))
    counts = np.broadcast_to(np.asarray(per_axis, dtype=int), (n,))
    if np.any(counts < 1) or np.any(upper <= lower):
        raise ConfigError("cloud box or particle counts are invalid", key="grid.particles")
    axes = [lo + (np.arange(k) + 0.5) * (hi - lo) / k for lo, hi, k in zip(lower, upper, counts)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    metric.chart.check(nodes, t0)
    cell = float(np.prod((upper - lower) / counts))
    prof = density if isinstance(density, ScalarField) else ScalarField(density, n, key="cloud.density")
    dens = prof.value(t0, nodes)
    if np.any(~np.isfinite(dens)) or np.any(dens <= 0):
        idx = int(np.argmin(np.where(np.isfinite(dens), dens, -np.inf)))
        raise NonPositiveDensity("initial density must be positive", particle=idx)
    u0 = f.value(nodes) if f is not None else None
    logw = measure_log_weight(measure, t0, nodes, u0)
    raw = dens * np.exp(logw) * metric.sqrt_det(t0, nodes) * cell
    total = raw.sum()
    return ParticleCloud(nodes, raw / total, dens / total, cell)


# ----------------------------------------------------------------------------
# Riccati evolution
# ----------------------------------------------------------------------------

@dataclass
class RiccatiTrack:
    t_grid: np.ndarray
    S: np.ndarray  # (K+1, N, n, n)
    logdetB: np.ndarray  # (K+1, N)
    caustic_time: float = None
    threshold_time: float = None
    caustic_particle: int = None
    residual: float = 0.0
    asymmetry: float = 0.0

    @property
    def trace(self):
        return np.trace(self.S, axis1=-2, axis2=-1)

    @property
    def norm2(self):
        return np.einsum("...ij,...ij->...", self.S, self.S)


def _quad_interp(a0, ah, a1, tau):
    """Quadratic through samples at tau = 0, 1/2, 1."""
    return (2.0 * (tau - 0.5) * (tau - 1.0)) * a0 - (4.0 * tau * (tau - 1.0)) * ah + (2.0 * tau * (tau - 0.5)) * a1


def riccati_rhs(S, R, Om=None):
    """dS/dt = -S^2 - R + (S Om - Om S)/2 in the rotating vertical frame."""
    out = -S @ S - R
    if Om is not None:
        out = out + 0.5 * (S @ Om - Om @ S)
    return out


def _riccati_core(S0, R_nodes, Om_nodes, t_grid, eps_c=EPS_CAUSTIC, raise_on_caustic=True):
    """RK4 on the coarse grid with R, Omega sampled at steps and midpoints.

    ``R_nodes`` has shape (2K+1, N, n, n): index 2k is t_k, 2k+1 the
    midpoint.  Steps where ``h |S|`` is large are split into substeps that
    use quadratic interpolation of the samples.
    """
    K = len(t_grid) - 1
    N, n, _ = R_nodes.shape[1:]
    S = np.array(np.broadcast_to(S0, (N, n, n)), dtype=float)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    ell = np.zeros(N)
    S_out = np.full((K + 1, N, n, n), np.nan)
    l_out = np.full((K + 1, N), np.nan)
    S_out[0], l_out[0] = S, ell
    log_eps = np.log(eps_c)
    asym = 0.0
    track = RiccatiTrack(np.asarray(t_grid, dtype=float), S_out, l_out)
    has_om = Om_nodes is not None

    def rhs(S, R, Om):
        return riccati_rhs(S, R, Om), np.trace(S, axis1=-2, axis2=-1)

    for k in range(K):
        h = t_grid[k + 1] - t_grid[k]
        R0, Rh, R1 = R_nodes[2 * k], R_nodes[2 * k + 1], R_nodes[2 * k + 2]
        O0, Oh, O1 = (Om_nodes[2 * k], Om_nodes[2 * k + 1], Om_nodes[2 * k + 2]) if has_om else (None,) * 3
        snorm = np.max(np.linalg.norm(S, ord=2, axis=(-2, -1)))
        m = int(min(MAX_SUBSTEPS, max(1, np.ceil(abs(h) * snorm / SUBSTEP_SCALE))))
        d = 1.0 / m
        for j in range(m):
            if m == 1:
                Ra, Rb, Rc = R0, Rh, R1
                Oa, Ob, Oc = O0, Oh, O1
            else:
                taus = (j * d, (j + 0.5) * d, (j + 1) * d)
                Ra, Rb, Rc = (_quad_interp(R0, Rh, R1, s) for s in taus)
                if has_om:
                    Oa, Ob, Oc = (_quad_interp(O0, Oh, O1, s) for s in taus)
                else:
                    Oa = Ob = Oc = None
            dt = h * d
            k1, m1 = rhs(S, Ra, Oa)
            k2, m2 = rhs(S + 0.5 * dt * k1, Rb, Ob)
            k3, m3 = rhs(S + 0.5 * dt * k2, Rb, Ob)
            k4, m4 = rhs(S + dt * k3, Rc, Oc)
            S = S + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            ell = ell + dt / 6.0 * (m1 + 2 * m2 + 2 * m3 + m4)
            asym = max(asym, float(np.max(np.abs(S - np.swapaxes(S, -1, -2)))))
            S = 0.5 * (S + np.swapaxes(S, -1, -2))
            bad = ~np.isfinite(ell) | (ell < log_eps) | ~np.all(np.isfinite(S), axis=(-2, -1))
            if np.any(bad):
                idx = int(np.argmax(bad))
                t_cross = float(t_grid[k] + (j + 1) * dt)
                lam = np.linalg.eigvalsh(S[idx])[0] if np.all(np.isfinite(S[idx])) else -np.inf
                # collapsing direction behaves like -1/(t* - t)
                t_star = t_cross + (1.0 / abs(lam) if lam < 0 else 0.0) * np.sign(h)
                track.caustic_time = float(t_star)
                track.threshold_time = t_cross
                track.caustic_particle = idx
                track.asymmetry = asym
                if raise_on_caustic:
                    raise CausticReached(
                        f"log det B fell below log({eps_c:g})",
                        particle=idx, t=float(t_star), threshold_time=t_cross,
                    )
                return track
        S_out[k + 1], l_out[k + 1] = S, ell
    track.asymmetry = asym
    track.residual = riccati_residual(track, R_nodes[::2], Om_nodes[::2] if has_om else None)
    return track


def riccati_residual(track, R, Om=None):
    """max over interior nodes of |dS/dt + S^2 + R - [S, Om]/2|.

    dS/dt is the five-point central difference of the track (uniform grid),
    so the truncation error is O(h^4).
    """
    S = track.S
    if S.shape[0] < 5:
        return 0.0
    h = track.t_grid[1] - track.t_grid[0]
    sd = (-S[4:] + 8 * S[3:-1] - 8 * S[1:-3] + S[:-4]) / (12 * h)
    res = sd - riccati_rhs(S[2:-2], R[2:-2], None if Om is None else Om[2:-2])
    return float(np.max(np.abs(res)))


def _sample(fn, t, N, n):
    val = fn(t) if callable(fn) else fn
    return np.broadcast_to(np.asarray(val, dtype=float), (N, n, n))


def riccati_evolve(S0, R, t_grid, omega=None, eps_c=EPS_CAUSTIC, raise_on_caustic=True):
    """Integrate dS/dt + S^2 + R = [S, Omega]/2 with log det B = int tr S.

    ``R`` and ``omega`` are arrays or callables ``t -> (n, n)`` or
    ``(N, n, n)``.  They are sampled on the grid and at step midpoints, so
    the scheme is classical RK4.  Raises CausticReached when log det B drops
    below ``log(eps_c)`` unless ``raise_on_caustic`` is False, in which case
    the track stops there and records the caustic time.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    S0 = np.asarray(S0, dtype=float)
    n = S0.shape[-1]
    N = S0.shape[0] if S0.ndim == 3 else 1
    probe = R(t_grid[0]) if callable(R) else R
    if np.ndim(probe) == 3:
        N = max(N, np.shape(probe)[0])
    fine = np.empty(2 * len(t_grid) - 1)
    fine[::2] = t_grid
    fine[1::2] = 0.5 * (t_grid[1:] + t_grid[:-1])
    R_nodes = np.stack([_sample(R, t, N, n) for t in fine])
    Om_nodes = None if omega is None else np.stack([_sample(omega, t, N, n) for t in fine])
    return _riccati_core(S0, R_nodes, Om_nodes, t_grid, eps_c, raise_on_caustic)


# ----------------------------------------------------------------------------
# Hessian initialization and the Jacobi route
# ----------------------------------------------------------------------------

def hessian_initial(H, f, t, x):
    """Initial S in the vertical frame: L^{-1} A L^{-T}.

    A is the covariant Hessian of f, plus half of the metric's time
    derivative for time-dependent metrics, plus the covariant Hessian of W
    for the drift kind.
    """
    if H.kind not in ("kinetic", "mechanical", "time_dependent_mechanical", "drift"):
        raise UnsupportedKind(f"no initial Hessian rule for {H.kind}", kind=H.kind)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = H.metric
    g = m.g(t, x)
    gam = christoffel(small_inv(g), m.dg(t, x))
    A = _covariant_hessian(gam, f.grad(x), f.hess(x))
    if H.kind in ("time_dependent_mechanical", "drift"):
        A = A + 0.5 * m.gdot(t, x)
    if H.kind == "drift" and H._hasW:
        A = A + _covariant_hessian(gam, H.W.grad(t, x), H.W.hess(t, x))
    Linv = small_inv(small_cholesky(g))
    S = Linv @ A @ np.swapaxes(Linv, -1, -2)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def _dphi(traj, d2f):
    """Linearized maps dX = Psi_xx + Psi_xp D2f and dP = Psi_px + Psi_pp D2f."""
    n = traj.dim
    psi = traj.psi
    dX = psi[..., :n, :n] + psi[..., :n, n:] @ d2f
    dP = psi[..., n:, :n] + psi[..., n:, n:] @ d2f
    return dX, dP


def jacobi_route(H, f, traj):
    """S and log det B from the linearized flow, independent of the Riccati ODE.

    The image of the graph of D2f under the flow is the graph of
    ``M = dP dX^{-1}``; writing it over the horizontal frame F gives S, and
    log det B = log(sqrt det g_t det dX / sqrt det g_0).
    """
    n = traj.dim
    x0 = traj.x[0]
    dX, dP = _dphi(traj, f.hess(x0))
    M = dP @ small_inv(dX)
    K1, N = traj.points.shape[:2]
    S = np.empty((K1, N, n, n))
    ell = np.empty((K1, N))
    sg0 = H.metric.sqrt_det(traj.t_grid[0], x0)
    for k, t in enumerate(traj.t_grid):
        z = traj.points[k]
        e1 = edot_frame(H, t, z)
        om = omega_matrix(H, t, z)
        L = small_cholesky(H.metric.g(t, z[:, :n]))
        F = e1 + 0.5 * np.einsum("nij,njk->nik", om, frame_vectors(L))
        Fx = np.swapaxes(F[:, :, :n], -1, -2)
        Fp = np.swapaxes(F[:, :, n:], -1, -2)
        ST = np.linalg.solve(L, Fp - M[k] @ Fx)
        S[k] = 0.5 * (ST + np.swapaxes(ST, -1, -2))
        sign, logdet = np.linalg.slogdet(dX[k])
        ell[k] = np.where(sign > 0, logdet, -np.inf) + np.log(H.metric.sqrt_det(t, z[:, :n]) / sg0)
    return S, ell


# ----------------------------------------------------------------------------
# HJ characteristics and interpolation state
# ----------------------------------------------------------------------------

@dataclass
class InterpolationState:
    H: object
    f: PotentialF
    cloud: ParticleCloud
    measure: MeasureModel
    trajectory: Trajectory
    riccati: RiccatiTrack
    u: np.ndarray  # (K+1, N)
    trR: np.ndarray  # (K+1, N)
    volume: object = None
    density: np.ndarray = None  # w.r.t. the scenario measure
    log_rho_vol: np.ndarray = None  # log density w.r.t. Riemannian volume
    diagnostics: dict = field(default_factory=dict)

    @property
    def t_grid(self):
        return self.trajectory.t_grid

    @property
    def caustic_time(self):
        return self.riccati.caustic_time


def _symplectic_drift(psi):
    m = psi.shape[-1]
    n = m // 2
    J = np.zeros((m, m))
    J[:n, n:] = -np.eye(n)
    J[n:, :n] = np.eye(n)
    w = np.swapaxes(psi, -1, -2) @ J @ psi
    return float(np.max(np.abs(w - J)))


def hj_solve(H, f, cloud, t0, T, steps=None, measure=None, eps_c=EPS_CAUSTIC,
             jacobi_tol=JACOBI_TOL, riccati_tol=RICCATI_TOL, raise_on_caustic=True):
    """Characteristics, HJ values, Riccati track and densities for a cloud.

    The flow runs on a grid twice as fine as the output grid so that the
    Riccati RK4 has curvature samples at step midpoints.
    """
    if measure is None:
        measure = MeasureModel("riemannian_volume")
    K = default_steps(t0, T) if steps is None else int(steps)
    x0 = cloud.nodes
    z0 = np.concatenate([x0, f.grad(x0)], axis=1)
    fine = integrate_flow(H, z0, t0, T, 2 * K, with_action=True, with_psi=True)
    R_nodes = np.stack([curvature_matrix(H, t, z) for t, z in zip(fine.t_grid, fine.points)])
    Om_nodes = np.stack([omega_matrix(H, t, z) for t, z in zip(fine.t_grid, fine.points)])
    traj = Trajectory(fine.t_grid[::2].copy(), fine.points[::2], 2.0 * fine.h,
                      fine.energy_drift, fine.action[::2], fine.psi[::2])
    S0 = hessian_initial(H, f, t0, x0)
    ric = _riccati_core(S0, R_nodes, Om_nodes, traj.t_grid, eps_c, raise_on_caustic)
    u = f.value(x0)[None, :] + traj.action
    trR = np.trace(R_nodes[::2], axis1=-2, axis2=-1)
    state = InterpolationState(H, f, cloud, measure, traj, ric, u, trR)
    diag = state.diagnostics
    diag["pairing_drift"] = _symplectic_drift(traj.psi)
    diag["energy_drift"] = float(np.max(traj.energy_drift)) if traj.energy_drift is not None else 0.0
    diag["riccati_asymmetry"] = ric.asymmetry
    if ric.caustic_time is not None:
        diag["caustic_time"] = ric.caustic_time
        return state

    S_jac, l_jac = jacobi_route(H, f, traj)
    jres = float(max(np.max(np.abs(S_jac - ric.S)), np.max(np.abs(l_jac - ric.logdetB))))
    diag["jacobi_residual"] = jres
    diag["riccati_residual"] = ric.residual
    scale = 1.0 + float(np.max(ric.norm2))
    if jres > jacobi_tol * scale:
        raise ResidualBreach(f"Riccati and Jacobi routes disagree by {jres:.3e}", residual=jres)
    if ric.residual > riccati_tol * scale:
        raise ResidualBreach(f"Riccati residual {ric.residual:.3e} exceeds tolerance", residual=ric.residual)

    state.volume = volume_distortion_track(H, measure, traj, u)
    state.density = density_track(state)
    w0 = measure_log_weight(measure, t0, x0, u[0])
    state.log_rho_vol = np.log(cloud.rho0) + w0 - ric.logdetB
    return state


def density_track(state):
    """rho(t, phi_t(x_i)) with respect to the scenario measure, shape (K+1, N)."""
    if state.riccati.caustic_time is not None:
        raise CausticReached("density requested past a caustic", t=state.riccati.caustic_time,
                             particle=state.riccati.caustic_particle)
    v = state.volume.v
    r = state.cloud.rho0[None, :] * np.exp(v[0][None, :] - v - state.riccati.logdetB)
    bad = ~np.isfinite(r) | (r <= 0)
    if np.any(bad):
        k, i = np.unravel_index(int(np.argmax(bad)), bad.shape)
        raise NonPositiveDensity("density lost positivity", particle=int(i), t=float(state.t_grid[k]))
    return r


def gradient_consistency(H, f, state, particles=8, eps=1e-4):
    """max |grad_{x0} u(t, phi_t(x0)) - dphi_t^T p_t| over the first particles.

    The left side is a central difference over perturbed characteristics;
    the right side uses the flow's own p-component and its linearization.
    """
    traj = state.trajectory
    n = traj.dim
    idx = np.arange(min(particles, state.cloud.size))
    x0 = state.cloud.nodes[idx]
    t0, T = traj.t_grid[0], traj.t_grid[-1]
    K = len(traj.t_grid) - 1
    dX, _ = _dphi(traj, f.hess(traj.x[0]))
    worst = 0.0
    for j in range(n):
        e = np.zeros(n)
        e[j] = eps
        vals = []
        for s in (1.0, -1.0):
            xs = x0 + s * e
            zs = np.concatenate([xs, f.grad(xs)], axis=1)
            tr = integrate_flow(H, zs, t0, T, 2 * K, with_action=True)
            vals.append(f.value(xs)[None, :] + tr.action[::2])
        fd = (vals[0] - vals[1]) / (2.0 * eps)
        ref = np.einsum("kna,kna->kn", dX[:, idx][..., j], traj.p[:, idx])
        worst = max(worst, float(np.max(np.abs(fd - ref))))
    return worst


def wasserstein_cost(state, T=None):
    """C_T as the weighted action of the characteristics up to time T."""
    if state.riccati.caustic_time is not None:
        raise CausticReached("cost requested past a caustic", t=state.riccati.caustic_time)
    k = -1 if T is None else _node_index(state.t_grid, T)
    return float(np.sum(state.cloud.weights * state.trajectory.action[k]))


def _node_index(t_grid, t):
    k = int(np.argmin(np.abs(t_grid - t)))
    if abs(t_grid[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise ConfigError(f"t = {t} is not a grid node", key="time")
    return k


# ----------------------------------------------------------------------------
# Functionals
# ----------------------------------------------------------------------------

@dataclass
class Functional:
    """F(t) = sum_i w_i Fc(r_i) + offset(t), r the density w.r.t. ``measure``.

    ``measure`` is a callable building the reference measure from the
    interpolation state (None means the scenario measure).
    """

    name: str
    F: object
    dF: object
    d2F: object
    measure: object = None
    offset: object = None  # callable t -> (c, c', c'')


def _log_triplet():
    return np.log, lambda r: 1.0 / r, lambda r: -1.0 / r**2


def _power_triplet(q, c=1.0):
    return (lambda r: c * r**q, lambda r: c * q * r ** (q - 1.0),
            lambda r: c * q * (q - 1.0) * r ** (q - 2.0))


def _vol(state):
    return MeasureModel("riemannian_volume")


def _hj(k_text):
    def build(state):
        return MeasureModel("hj_weighted", k=TimeFunction(k_text))
    return build


def _require(kinds):
    def build(state):
        if state.measure.kind not in kinds:
            raise ConfigError(f"functional needs a {' or '.join(kinds)} measure, got {state.measure.kind}",
                              key="measure.kind")
        return state.measure
    return build


def _log_offset(n, c):
    # c n log t and its derivatives
    return lambda t: (c * n * np.log(t), c * n / t, -c * n / t**2)


def functional(fid, n, q=None, N=None, F=None):
    """Build one of E1..E8 or a generic functional.

    E4 and E5 use the reference metric t^{-1/2} g, so the density with
    respect to its volume differs from the one w.r.t. vol by t^{n/4}.
    Generic functionals take ``F`` as a (F, F', F'') triple of callables.
    """
    lg = _log_triplet()
    if fid == "E1":
        return Functional("E1", *lg, measure=_vol)
    if fid == "E2":
        return Functional("E2", *lg, measure=_require(("weighted", "riemannian_volume")))
    if fid == "E3":
        return Functional("E3", *lg, measure=_require(("hj_weighted",)))
    if fid == "E4":
        return Functional("E4", *lg, measure=_hj("-t^(-1/2)"), offset=_log_offset(n, 0.75))
    if fid == "E5":
        return Functional("E5", *lg, measure=_hj("t^(-1/2)"), offset=_log_offset(n, 0.75))
    if fid == "E6":
        return Functional("E6", *lg, measure=_hj("1"))
    if fid == "E7":
        Nd = n if N is None else N
        return Functional("E7", *_power_triplet(-1.0 / Nd, -1.0), measure=_vol)
    if fid == "E8":
        if q is None:
            raise ConfigError("E8 needs params.q", key="params.q")
        return Functional("E8", *_power_triplet(q), measure=_require(("hj_weighted",)))
    if fid == "generic":
        if F is None:
            trip = lg if q is None else _power_triplet(q)
        else:
            trip = F
        return Functional("generic", *trip)
    raise ConfigError(f"unknown functional {fid!r}", key="functional")


def _resolve(fun, state):
    if isinstance(fun, str):
        return functional(fun, state.trajectory.dim)
    return fun


def _reference(fun, state):
    meas = state.measure if fun.measure is None else fun.measure(state)
    traj = state.trajectory
    n = traj.dim
    if meas is state.measure and state.volume is not None:
        vt = state.volume
    else:
        vt = volume_distortion_track(state.H, meas, traj, state.u)
    logw = np.stack([measure_log_weight(meas, t, traj.x[k][:, :n], state.u[k])
                     for k, t in enumerate(traj.t_grid)])
    r = np.exp(state.log_rho_vol - logw)
    return r, vt


def _offsets(fun, t_grid):
    if fun.offset is None:
        z = np.zeros_like(t_grid)
        return z, z, z
    vals = np.array([fun.offset(t) for t in t_grid])
    return vals[:, 0], vals[:, 1], vals[:, 2]


def functional_values(fun, state):
    """F on every grid node."""
    fun = _resolve(fun, state)
    if state.riccati.caustic_time is not None:
        raise CausticReached("functional requested past a caustic", t=state.riccati.caustic_time)
    r, _ = _reference(fun, state)
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise NonPositiveDensity("density not positive", functional=fun.name)
    c, _, _ = _offsets(fun, state.t_grid)
    return fun.F(r) @ state.cloud.weights + c


def functional_eval(fun, state, t):
    return float(functional_values(fun, state)[_node_index(state.t_grid, t)])


def second_difference(F, h):
    """Central second difference; second-order one-sided at the ends."""
    out = np.empty_like(F)
    out[1:-1] = (F[2:] - 2.0 * F[1:-1] + F[:-2]) / h**2
    if len(F) >= 4:
        out[0] = (2 * F[0] - 5 * F[1] + 4 * F[2] - F[3]) / h**2
        out[-1] = (2 * F[-1] - 5 * F[-2] + 4 * F[-3] - F[-4]) / h**2
    else:
        out[0], out[-1] = out[1], out[-2]
    return out


@dataclass
class Derivatives:
    F: np.ndarray
    dF_analytic: np.ndarray
    dF_fd: np.ndarray
    d2F_fd: np.ndarray
    d2F_analytic: np.ndarray
    vdot: np.ndarray
    vddot: np.ndarray
    r: np.ndarray


def functional_derivatives(fun, state):
    """F, dF (analytic and FD) and d2F (FD and analytic) on the grid.

    The analytic rates use dr/dt = -r (vdot + tr S) along characteristics;
    the second one also uses d(tr S)/dt = -|S|^2 - tr R.
    """
    fun = _resolve(fun, state)
    if state.riccati.caustic_time is not None:
        raise CausticReached("derivatives requested past a caustic", t=state.riccati.caustic_time)
    r, vt = _reference(fun, state)
    w = state.cloud.weights
    c, dc, ddc = _offsets(fun, state.t_grid)
    F = fun.F(r) @ w + c
    X = vt.vdot + state.riccati.trace
    g1 = fun.dF(r) * r
    dF_an = -(g1 * X) @ w + dc
    d2_an = ((fun.d2F(r) * r + fun.dF(r)) * r * X**2
             + g1 * (state.riccati.norm2 + state.trR - vt.vddot)) @ w + ddc
    h = state.trajectory.h
    dF_fd = np.gradient(F, h, edge_order=2)
    d2F_fd = second_difference(F, h)
    return Derivatives(F, dF_an, dF_fd, d2F_fd, d2_an, vt.vdot, vt.vddot, r)


def richardson_slope(F, dF_analytic, h, strides=(2, 4)):
    """Observed order of FD dF against the analytic rate.

    FD derivatives with steps s1*h and s2*h are compared with the analytic
    values on their common interior nodes; the slope is
    log(err2/err1)/log(s2/s1).  Returns (slope, err1, err2).
    """
    s1, s2 = strides
    K = len(F) - 1
    idx = np.arange(s2, K - s2 + 1, s2)
    if idx.size == 0:
        raise ConfigError("time grid too short for a Richardson estimate", key="time.steps")

    def err(s):
        d = (F[idx + s] - F[idx - s]) / (2 * s * h)
        return float(np.max(np.abs(d - dF_analytic[idx])))

    e1, e2 = err(s1), err(s2)
    if e1 == 0.0 or e2 == 0.0:
        return float("nan"), e1, e2
    return float(np.log(e2 / e1) / np.log(s2 / s1)), e1, e2


# ----------------------------------------------------------------------------
# Inequality verifiers
# ----------------------------------------------------------------------------

THEOREMS = ("thm2.2", "cor2.3", "cor2.4", "cor2.5", "cor2.6", "cor2.7", "cor2.8", "cor2.9",
            "thm2.10", "cor2.11", "cor2.12", "cor2.13", "cor2.14", "thm2.15")


@dataclass
class FunctionalReport:
    theorem: str
    functional: str
    t_grid: np.ndarray
    F: np.ndarray
    dF_analytic: np.ndarray
    dF_fd: np.ndarray
    d2F_fd: np.ndarray
    d2F_analytic: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    margin: np.ndarray
    tol: float
    constraint_residual: float = 0.0

    @property
    def interior(self):
        return slice(1, len(self.t_grid) - 1)

    @property
    def worst_index(self):
        return 1 + int(np.argmin(self.margin[self.interior]))

    @property
    def worst_margin(self):
        return float(self.margin[self.worst_index])

    @property
    def passed(self):
        return bool(np.all(self.margin[self.interior] >= -self.tol))

    def status(self):
        out = np.where(self.margin >= -self.tol, "PASS", "FAIL").astype(object)
        out[0] = out[-1] = "EDGE"
        return out


def _tf(value, key):
    if value is None:
        return TimeFunction("0", key=key)
    if isinstance(value, TimeFunction):
        return value
    return TimeFunction(str(value), key=key)


def _violation(name, worst, tol=CONSTRAINT_TOL):
    if not np.isfinite(worst) or worst > tol:
        raise ConstraintViolation(f"parameter identity {name} fails (residual {worst:.3e})",
                                  identity=name, residual=worst)
    return worst


def _scaled(H, theorem):
    if not isinstance(H.metric, ScaledFamily):
        raise ConstraintViolation(f"{theorem} needs a scaled-family metric", identity="metric")
    if H.kind not in ("time_dependent_mechanical",):
        raise ConstraintViolation(f"{theorem} needs the time_dependent_mechanical kind", identity="kind")
    return H.metric


def _ricci_family_constraints(H, measure, t_grid, b2, theorem):
    """c1 k = -2, kdd = -b kd, 2 kd = c2 k - b k, U = -c1^2 R / 8."""
    m = _scaled(H, theorem)
    if measure.kind != "hj_weighted":
        raise ConstraintViolation(f"{theorem} needs the hj_weighted measure", identity="measure")
    k = measure.k
    worst = 0.0
    for name, fn in (
        ("c1 k = -2", lambda t: m.c1(t) * k(t) + 2.0),
        ("kdd = -b kd", lambda t: k.dd(t) + b2(t) * k.d(t)),
        ("2 kd = c2 k - b k", lambda t: 2.0 * k.d(t) - m.c2(t) * k(t) + b2(t) * k(t)),
    ):
        worst = max(worst, _violation(name, max(abs(fn(t)) for t in t_grid)))
    x = np.array([0.5 * (lo + hi) for lo, hi in zip(m.chart.lower, m.chart.upper)])[None, :]
    x = x + np.linspace(-0.3, 0.3, 5)[:, None]
    ures = max(float(np.max(np.abs(H.U.value(t, x) + m.c1(t) ** 2 * m.curvature_pack(t, x).R / 8.0)))
               for t in t_grid)
    worst = max(worst, _violation("U = -c1^2 R / 8", ures))
    worst = max(worst, _violation("metric scale equation", max(abs(m.scale_residual(t)) for t in t_grid), 1e-8))
    return worst


def _sample_times(t_grid, count=9):
    return np.unique(np.linspace(t_grid[0], t_grid[-1], count))


def _ricci_lower_bound(state, every=16):
    """min over sampled nodes of the smallest eigenvalue of Rc in the V-frame."""
    H = state.H
    traj = state.trajectory
    n = traj.dim
    worst = np.inf
    for k in range(0, len(traj.t_grid), every):
        t = traj.t_grid[k]
        x = traj.x[k]
        g = H.metric.g(t, x)
        Linv = small_inv(small_cholesky(g))
        rc = Linv @ H.metric.curvature_pack(t, x).Rc @ np.swapaxes(Linv, -1, -2)
        worst = min(worst, float(np.min(np.linalg.eigvalsh(rc))))
    return worst


def _bakry_emery_lower_bound(state, every=16):
    H = state.H
    traj = state.trajectory
    meas = state.measure
    worst = np.inf
    for k in range(0, len(traj.t_grid), every):
        t = traj.t_grid[k]
        x = traj.x[k]
        g = H.metric.g(t, x)
        gam = christoffel(small_inv(g), H.metric.dg(t, x))
        B = H.metric.curvature_pack(t, x).Rc
        if meas.kind == "weighted":
            B = B + _covariant_hessian(gam, meas.weight.grad(t, x), meas.weight.hess(t, x))
        Linv = small_inv(small_cholesky(g))
        worst = min(worst, float(np.min(np.linalg.eigvalsh(Linv @ B @ np.swapaxes(Linv, -1, -2)))))
    return worst


def drift_condition(H, t, x):
    """Laplacian of (Wdot + |grad W|^2 / 2 - U) at points x."""
    m = H.metric
    x = np.atleast_2d(x)

    def h(y):
        gy = m.g(t, y)
        wy = H.W.grad(t, y)
        return (H.W.dt(t, y) + 0.5 * np.einsum("ni,nij,nj->n", wy, small_inv(gy), wy)
                - H.U.value(t, y))

    m.chart.require_stencil(2 * H_SECOND)
    return laplace_beltrami_fd(h, lambda y: m.g(t, y), x, H_SECOND)


def check_constraints(theorem, state, params):
    """Verify the hypotheses of a theorem for this scenario; return worst residual."""
    H = state.H
    meas = state.measure
    tg = _sample_times(state.t_grid)
    n = state.trajectory.dim
    p = params
    if theorem not in THEOREMS:
        raise ConfigError(f"unknown theorem id {theorem!r}", key="theorems")
    if theorem in ("thm2.2", "thm2.10"):
        if theorem == "thm2.10" and not float(p.get("q", 0)) > 0:
            raise ConstraintViolation("thm2.10 is checked for q > 0 (use cor2.11 for q = -1/N)",
                                      identity="q > 0", q=p.get("q"))
        return 0.0
    if theorem == "cor2.3":
        if H.kind != "kinetic":
            raise ConstraintViolation("cor2.3 needs the kinetic kind", identity="kind")
        if meas.kind not in ("weighted", "riemannian_volume"):
            raise ConstraintViolation("cor2.3 needs a weighted measure", identity="measure")
        lb = _bakry_emery_lower_bound(state)
        return _violation("Rc + Hess U >= K", max(0.0, float(p["K"]) - lb))
    if theorem == "cor2.11":
        if H.kind != "kinetic":
            raise ConstraintViolation("cor2.11 needs the kinetic kind", identity="kind")
        Nd = float(p.get("N", n))
        _violation("N >= n", max(0.0, n - Nd))
        return _violation("Rc >= 0", max(0.0, -_ricci_lower_bound(state)))
    if theorem == "thm2.15":
        if H.kind != "drift" or not H.metric.static:
            raise ConstraintViolation("thm2.15 needs the drift kind on a static metric", identity="kind")
        worst = _violation("Rc >= 0", max(0.0, -_ricci_lower_bound(state)))
        traj = state.trajectory
        for k in range(0, len(traj.t_grid), 16):
            val = float(np.max(drift_condition(H, traj.t_grid[k], traj.x[k])))
            worst = max(worst, _violation("lap(Wdot + |grad W|^2/2 - U) <= 0", max(0.0, val), 1e-8))
        return worst
    if theorem in ("cor2.4", "cor2.12"):
        b = _tf(p.get("b2" if theorem == "cor2.12" else "b"), "params.b")
        return _ricci_family_constraints(H, meas, tg, b, theorem)
    if theorem in ("cor2.5", "cor2.7", "cor2.8", "cor2.13"):
        if theorem == "cor2.7":
            m_, C = -0.5, -1.0
        elif theorem == "cor2.8":
            m_, C = -0.5, 1.0
        elif theorem == "cor2.13":
            m_, C = float(p["m"]), float(p["C1"])
        else:
            m_, C = float(p["m"]), float(p["C"])
        if m_ == 0:
            raise ConstraintViolation(f"{theorem} needs m != 0", identity="m != 0")
        fam = _scaled(H, theorem)
        if meas.kind != "hj_weighted":
            raise ConstraintViolation(f"{theorem} needs the hj_weighted measure", identity="measure")
        worst = _violation("k = C t^m", max(abs(meas.k(t) - C * t**m_) for t in tg))
        worst = max(worst, _violation("c1 = -2/(C t^m)", max(abs(fam.c1(t) + 2.0 / (C * t**m_)) for t in tg)))
        worst = max(worst, _violation("c2 = (m+1)/t", max(abs(fam.c2(t) - (m_ + 1) / t) for t in tg)))
        b = TimeFunction(f"-({m_!r} - 1)/t")
        return max(worst, _ricci_family_constraints(H, meas, tg, b, theorem))
    if theorem in ("cor2.6", "cor2.9", "cor2.14"):
        fam = _scaled(H, theorem)
        if meas.kind != "hj_weighted":
            raise ConstraintViolation(f"{theorem} needs the hj_weighted measure", identity="measure")
        if theorem == "cor2.9":
            C, b = 1.0, TimeFunction("0")
        elif theorem == "cor2.14":
            C, b = float(p["C1"]), TimeFunction(f"({float(p['C3'])!r})/t")
        else:
            C, b = float(p["C"]), _tf(p.get("b"), "params.b")
        worst = _violation("k = C", max(abs(meas.k(t) - C) for t in tg))
        worst = max(worst, _violation("c2 = b", max(abs(fam.c2(t) - b(t)) for t in tg)))
        return max(worst, _ricci_family_constraints(H, meas, tg, b, theorem))
    raise ConfigError(f"unknown theorem id {theorem!r}", key="theorems")


def _theorem_functional(theorem, n, p, measure):
    if theorem == "thm2.2":
        return functional({"riemannian_volume": "E1", "weighted": "E2", "hj_weighted": "E3"}[measure.kind], n)
    if theorem == "cor2.3":
        return functional("E2", n)
    if theorem in ("cor2.4", "cor2.5", "cor2.6"):
        return functional("E3", n)
    if theorem == "cor2.7":
        return functional("E4", n)
    if theorem == "cor2.8":
        return functional("E5", n)
    if theorem == "cor2.9":
        return functional("E6", n)
    if theorem == "thm2.10":
        return functional("generic", n, q=float(p["q"]))
    if theorem == "cor2.11":
        return functional("E7", n, N=float(p.get("N", n)))
    if theorem in ("cor2.12", "cor2.13", "cor2.14"):
        return functional("E8", n, q=float(p["q"]))
    return functional("E1", n)


def inequality_check(theorem, state, params=None, tol=TOL_INEQ):
    """Tabulate LHS, RHS and margin of a convexity inequality on the grid.

    ``params`` holds the theorem's constants (b, K, q, b1, b2, m, C, C1,
    C2, C3, N); time functions may be given as expression strings in t.
    """
    p = dict(params or {})
    if state.riccati.caustic_time is not None:
        raise CausticReached("interpolation hit a caustic", t=state.riccati.caustic_time)
    residual = check_constraints(theorem, state, p)
    n = state.trajectory.dim
    fun = _theorem_functional(theorem, n, p, state.measure)
    d = functional_derivatives(fun, state)
    ts = state.t_grid
    F, dF, d2F = d.F, d.dF_fd, d.d2F_fd
    w = state.cloud.weights
    ev = np.vectorize
    zeros = np.zeros_like(ts)

    if theorem == "thm2.2":
        b = ev(_tf(p.get("b"), "params.b"))(ts)
        lhs = d2F + b * dF + n * b**2 / 4.0
        rhs = (state.trR - d.vddot - b[:, None] * d.vdot) @ w
    elif theorem == "cor2.3":
        T = ts[-1] - ts[0]
        lhs, rhs = d2F, zeros + 2.0 * float(p["K"]) / T * wasserstein_cost(state)
    elif theorem in ("cor2.4", "cor2.6"):
        fam = state.H.metric
        b = ev(_tf(p.get("b"), "params.b"))(ts)
        c2, dc2 = ev(fam.c2)(ts), ev(fam.c2.d)(ts)
        if theorem == "cor2.4":
            const = n * dc2 / 2 + n * c2**2 / 4 + n * b**2 / 4
        else:
            const = n * ev(_tf(p.get("b"), "params.b").d)(ts) / 2 + n * b**2 / 2
        lhs, rhs = d2F + b * dF + const, zeros
    elif theorem == "cor2.5":
        m_ = float(p["m"])
        lhs = d2F - (m_ - 1) / ts * dF - m_ * (1 - m_) * n / (2 * ts**2)
        rhs = zeros
    elif theorem in ("cor2.7", "cor2.8"):
        lhs, rhs = d2F + 1.5 / ts * dF, zeros
    elif theorem in ("cor2.9", "cor2.11", "thm2.15"):
        lhs, rhs = d2F, zeros
    elif theorem == "thm2.10":
        q = float(p["q"])
        b1 = ev(_tf(p.get("b1"), "params.b1"))(ts)
        b2 = ev(_tf(p.get("b2"), "params.b2"))(ts)
        lhs = d2F + (q * b1 + b2) * dF + q * (q * b1**2 / 4 + n * b2**2 / 4) * F
        rhs = (q * d.r**q * (state.trR - b2[:, None] * d.vdot - d.vddot)) @ w
    elif theorem == "cor2.12":
        q = float(p["q"])
        fam = state.H.metric
        b1 = ev(_tf(p.get("b1"), "params.b1"))(ts)
        b2 = ev(_tf(p.get("b2"), "params.b2"))(ts)
        c2, dc2 = ev(fam.c2)(ts), ev(fam.c2.d)(ts)
        lhs = (d2F + (q * b1 + b2) * dF
               + q * (n * dc2 / 2 + n * c2**2 / 4 + q * b1**2 / 4 + n * b2**2 / 4) * F)
        rhs = zeros
    elif theorem == "cor2.13":
        q, m_, C2 = float(p["q"]), float(p["m"]), float(p["C2"])
        lhs = d2F + (q * C2 - m_ + 1) / ts * dF + q * (2 * n * m_ * (m_ - 1) + q * C2**2) / (4 * ts**2) * F
        rhs = zeros
    elif theorem == "cor2.14":
        q, C2, C3 = float(p["q"]), float(p["C2"]), float(p["C3"])
        lhs = d2F + (q * C2 + C3) / ts * dF + q * (q * C2**2 + 2 * n * C3**2 - 2 * n * C3) / (4 * ts**2) * F
        rhs = zeros
    else:
        raise ConfigError(f"unknown theorem id {theorem!r}", key="theorems")
    return FunctionalReport(theorem, fun.name, ts, F, d.dF_analytic, dF, d2F, d.d2F_analytic,
                            lhs, rhs, lhs - rhs, tol, residual)


# ----------------------------------------------------------------------------
# Bochner identity
# ----------------------------------------------------------------------------

@dataclass
class BochnerResult:
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray


def bochner_check(H, f, x, t=0.0, h=H_SECOND):
    """Both sides of Lap(|grad f|^2/2) - <grad Lap f, grad f> = |Hess f|^2 + Rc(grad f, grad f).

    The left side is pure finite differences of closed-form f-derivatives;
    the right side comes from the initial Hessian and the curvature trace.
    """
    if H.kind != "kinetic" or not H.metric.static:
        raise UnsupportedKind("the Bochner check needs a kinetic Hamiltonian on a static metric", kind=H.kind)
    m = H.metric
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m.chart.require_stencil(2 * h)

    def half_grad2(y):
        df = f.grad(y)
        return 0.5 * np.einsum("ni,nij,nj->n", df, small_inv(m.g(t, y)), df)

    def lap_f(y):
        gy = m.g(t, y)
        ginv = small_inv(gy)
        return covariant_laplacian(ginv, christoffel(ginv, m.dg(t, y)), f.grad(y), f.hess(y))

    df = f.grad(x)
    v = np.linalg.solve(m.g(t, x), df[..., None])[..., 0]
    vn = v / np.maximum(1.0, np.linalg.norm(v, axis=1))[:, None]
    scale = np.maximum(1.0, np.linalg.norm(v, axis=1))
    dlap = (-lap_f(x + 2 * h * vn) + 8 * lap_f(x + h * vn) - 8 * lap_f(x - h * vn)
            + lap_f(x - 2 * h * vn)) / (12 * h) * scale
    lhs = laplace_beltrami_fd(half_grad2, lambda y: m.g(t, y), x, h) - dlap
    S0 = hessian_initial(H, f, t, x)
    z = np.concatenate([x, df], axis=1)
    rhs = np.einsum("nij,nij->n", S0, S0) + curvature_trace_analytic(H, t, z)
    return BochnerResult(lhs, rhs, np.abs(lhs - rhs))
