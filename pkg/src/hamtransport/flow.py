"""Fixed-step RK4 integration of Hamiltonian flows and their linearization.

All routines are vectorized over a batch of initial phase points
``z0`` of shape ``(N, 2n)``; particles never interact, so results for one
particle do not depend on which other particles share the batch.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ChartBoundary, NotHomogeneous, StepCount
from .hamiltonian import omega

STEPS_PER_UNIT = 512
MIN_STEPS = 16


@dataclass
class Trajectory:
    """Phase-space samples on a uniform time grid.

    ``points`` has shape ``(K+1, N, 2n)``; ``action`` holds the running
    integral of ``p . H_p - H`` (the Lagrangian along the characteristic).
    ``psi`` (optional) is the fundamental matrix of the linearized flow.
    """

    t_grid: np.ndarray
    points: np.ndarray
    h: float
    energy_drift: np.ndarray = None
    action: np.ndarray = None
    psi: np.ndarray = None

    @property
    def dim(self):
        return self.points.shape[-1] // 2

    @property
    def x(self):
        return self.points[..., : self.dim]

    @property
    def p(self):
        return self.points[..., self.dim:]


@dataclass
class VariationalTrack:
    base: Trajectory
    vectors: np.ndarray  # (K+1, N, M, 2n)
    pairing_drift: float = field(default=0.0)


def default_steps(t0, t1, per_unit=STEPS_PER_UNIT):
    return max(MIN_STEPS, int(np.ceil(abs(t1 - t0) * per_unit)))


def rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate(H, z0, t0, t1, steps, with_psi=False, seeds=None, with_action=True,
               drift_tol=None, check_chart=True):
    if steps < MIN_STEPS:
        raise StepCount(f"need at least {MIN_STEPS} steps, got {steps}", steps=steps)
    z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    N, m = z0.shape
    n = m // 2
    chart = H.chart
    if check_chart:
        chart.check(z0[:, :n], t0)
    h = (t1 - t0) / steps
    t_grid = t0 + h * np.arange(steps + 1)
    t_grid[-1] = t1

    if seeds is not None:
        seeds = np.asarray(seeds, dtype=float)
        if seeds.ndim == 2:
            seeds = np.broadcast_to(seeds, (N,) + seeds.shape)
        M = seeds.shape[1]
        D0 = np.swapaxes(seeds, 1, 2)  # (N, 2n, M)
    elif with_psi:
        M = m
        D0 = np.broadcast_to(np.eye(m), (N, m, m))
    else:
        M = 0
        D0 = np.zeros((N, m, 0))

    # packed state: z (2n), action (1), D (2n*M)
    def pack(z, a, D):
        return np.concatenate([z, a[:, None], D.reshape(N, -1)], axis=1)

    def rhs(t, y):
        z = y[:, :m]
        if M:
            ham, vf, J = H.linearization(t, z)
        else:
            vf = H.vector_field(t, z)
            ham = H.hamiltonian(t, z) if with_action else None
        parts = [vf]
        if with_action:
            lag = np.sum(z[:, n:] * vf[:, :n], axis=1) - ham
        else:
            lag = np.zeros(N)
        parts.append(lag[:, None])
        if M:
            D = y[:, m + 1:].reshape(N, m, M)
            parts.append((J @ D).reshape(N, -1))
        else:
            parts.append(np.zeros((N, 0)))
        return np.concatenate(parts, axis=1)

    y = pack(z0, np.zeros(N), D0)
    out = np.empty((steps + 1,) + y.shape)
    out[0] = y
    for k in range(steps):
        y = rk4_step(rhs, t_grid[k], y, h)
        if check_chart:
            mask = chart.legal_mask(y[:, :n])
            if not np.all(mask):
                idx = int(np.argmin(mask))
                raise ChartBoundary(
                    "trajectory left the legal chart region",
                    particle=idx, t=float(t_grid[k + 1]), x=y[idx, :n].tolist(),
                )
        out[k + 1] = y

    points = out[:, :, :m]
    traj = Trajectory(t_grid, points, h)
    if with_action:
        traj.action = out[:, :, m]
    if H.autonomous:
        e0 = H.hamiltonian(t_grid[0], points[0])
        drift = np.zeros(N)
        for k in range(1, steps + 1):
            drift = np.maximum(drift, np.abs(H.hamiltonian(t_grid[k], points[k]) - e0))
        traj.energy_drift = drift
        if drift_tol is not None and np.max(drift) > drift_tol:
            idx = int(np.argmax(drift))
            raise StepCount(
                f"energy drift {drift[idx]:.3e} exceeds {drift_tol:.1e}; increase steps",
                particle=idx, steps=steps,
            )
    if M:
        D = out[:, :, m + 1:].reshape(steps + 1, N, m, M)
        if seeds is not None:
            return traj, np.swapaxes(D, 2, 3)
        traj.psi = D
    return traj


def integrate_flow(H, z0, t0, t1, steps=None, with_action=True, with_psi=False,
                   drift_tol=None, check_chart=True):
    """Integrate xdot = H_p, pdot = -H_x from ``z0`` on [t0, t1]."""
    if steps is None:
        steps = default_steps(t0, t1)
    return _integrate(H, z0, t0, t1, steps, with_psi=with_psi, with_action=with_action,
                      drift_tol=drift_tol, check_chart=check_chart)


def integrate_variational(H, z0, seeds, t0, t1, steps=None):
    """Carry tangent vectors along the flow by the linearized equation.

    ``seeds`` is ``(M, 2n)`` (shared by all particles) or ``(N, M, 2n)``.
    The returned track records the worst drift of the pairwise symplectic
    products over the run.
    """
    if steps is None:
        steps = default_steps(t0, t1)
    traj, vecs = _integrate(H, z0, t0, t1, steps, seeds=seeds, with_action=False)
    w = omega(vecs[:, :, :, None, :], vecs[:, :, None, :, :])
    drift = float(np.max(np.abs(w - w[0]))) if w.size else 0.0
    return VariationalTrack(traj, vecs, drift)


def homogeneity_check(H, z0, lam, T, steps=None):
    """max_k |x(Phi_{lam t_k}(x, p)) - x(Phi_{t_k}(x, lam p))| for kinetic H."""
    if not H.homogeneous:
        raise NotHomogeneous(f"{H.kind} Hamiltonian is not fibrewise homogeneous", kind=H.kind)
    z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    n = z0.shape[1] // 2
    if steps is None:
        steps = default_steps(0.0, T)
    a = integrate_flow(H, z0, 0.0, lam * T, steps, with_action=False)
    zs = z0.copy()
    zs[:, n:] *= lam
    b = integrate_flow(H, zs, 0.0, T, steps, with_action=False)
    return float(np.max(np.abs(a.x - b.x)))
