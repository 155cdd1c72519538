"""Curvature of Hamiltonian systems from moving vertical frames.

The vertical frame is ``V_i = (0, L[:, i])`` with ``g = L L^T`` (lower
Cholesky), which is orthonormal for the fibre metric ``H_pp = g^{-1}``.
Pulling it back along the flow and differentiating twice in time gives the
curvature matrix; the closed-form traces below are independent oracles
for that numerical route.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MissingHJState, NotHomogeneous, SymmetryBreach, UnsupportedKind
from .geometry import (
    H_SECOND, ScaledFamily, christoffel, covariant_laplacian, laplace_beltrami_fd, small_cholesky,
    small_inv, spd_inverse,
)
from .hamiltonian import omega

FRAME_STEP = 1e-4
SYMMETRY_TOL = 1e-4


@dataclass
class CanonicalFrameData:
    """Frame data at a batch of phase points (all vectors are (N, n, 2n))."""

    Ebar: np.ndarray
    Fbar: np.ndarray
    Edot: np.ndarray
    Eddot: np.ndarray
    Omega: np.ndarray
    OmegaDot: np.ndarray
    L: np.ndarray


@dataclass
class CurvatureMatrix:
    R: np.ndarray
    trace: np.ndarray
    asymmetry: np.ndarray
    vertical_residual: np.ndarray


@dataclass
class VolumeDistortionTrack:
    v: np.ndarray
    vdot: np.ndarray
    vddot: np.ndarray


def _phi_lower(a):
    """Lower triangle with halved diagonal (Cholesky differentiation map)."""
    out = np.tril(a)
    idx = np.arange(a.shape[-1])
    out[..., idx, idx] *= 0.5
    return out


def cholesky_derivative(L, dA):
    """dL for a change dA of A = L L^T; dA may carry trailing derivative axes."""
    Linv = small_inv(L)
    if dA.ndim == L.ndim:
        return L @ _phi_lower(Linv @ dA @ np.swapaxes(Linv, -1, -2))
    moved = np.moveaxis(dA, -1, 1)  # (N, k, n, n)
    inner = Linv[:, None] @ moved @ np.swapaxes(Linv, -1, -2)[:, None]
    return np.moveaxis(L[:, None] @ _phi_lower(inner), 1, -1)


def vertical_frame(H, t, z):
    """Cholesky factor ``L`` with ``V_i = (0, L[:, i])``; shape (N, n, n)."""
    n = H.dim
    z = np.atleast_2d(z)
    x = z[:, :n]
    g = H.metric.g(t, x)
    spd_inverse(g, t)
    return small_cholesky(g)


def frame_vectors(L):
    """Stack ``V_i`` as rows of an (N, n, 2n) array."""
    N, n, _ = L.shape
    out = np.zeros((N, n, 2 * n))
    out[:, :, n:] = np.swapaxes(L, -1, -2)
    return out


def edot_frame(H, t, z):
    """Rows ``[H, V_i] + dV_i/dt`` at a batch of phase points, (N, n, 2n)."""
    n = H.dim
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x, p = z[:, :n], z[:, n:]
    b = H.blocks(t, x, p)
    g = H.metric.g(t, x)
    L = small_cholesky(g)
    dL = cholesky_derivative(L, H.metric.dg(t, x))  # (N, n, n, k)
    Ldot = cholesky_derivative(L, H.metric.gdot(t, x))
    # DV_i . X = (0, sum_k dL[:, :, i, k] Hp_k);  DX . V_i = (Hpp a_i, -Hxp a_i)
    dv = np.einsum("nrik,nk->nir", dL, b.Hp)
    LT = np.swapaxes(L, -1, -2)  # rows a_i
    out = np.empty((z.shape[0], n, 2 * n))
    out[:, :, :n] = -np.einsum("nij,nkj->nki", b.Hpp, LT)
    out[:, :, n:] = dv + np.einsum("nij,nkj->nki", b.Hxp, LT) + np.swapaxes(Ldot, -1, -2)
    return out


def frame_data(H, t, z, h=FRAME_STEP):
    """Frame derivatives, Omega and its time derivative at (t, z).

    The second derivative of the pulled-back frame is the derivative of
    ``edot_frame`` along (t + s, z + s X) minus ``DX . edot``, a central
    difference in ``s`` with step ``h``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n = H.dim
    e1 = edot_frame(H, t, z)
    X = H.vector_field(t, z)
    J = H.field_jacobian(t, z)
    ep = edot_frame(H, t + h, z + h * X)
    em = edot_frame(H, t - h, z - h * X)
    e2 = (ep - em) / (2.0 * h) - np.einsum("nab,nib->nia", J, e1)
    om = omega(e1[:, :, None, :], e1[:, None, :, :])
    omd = omega(e2[:, :, None, :], e1[:, None, :, :]) + omega(e1[:, :, None, :], e2[:, None, :, :])
    L = small_cholesky(H.metric.g(t, z[:, :n]))
    V = frame_vectors(L)
    F = e1 + 0.5 * np.einsum("nij,njk->nik", om, V)
    return CanonicalFrameData(V, F, e1, e2, om, omd, L)


def omega_matrix(H, t, z):
    e1 = edot_frame(H, t, z)
    return omega(e1[:, :, None, :], e1[:, None, :, :])


def curvature_via_frames(H, t, z, h=FRAME_STEP, check=True):
    """Curvature matrix in the V-frame from the second-order frame identity."""
    fd = frame_data(H, t, z, h)
    n = H.dim
    om, omd = fd.Omega, fd.OmegaDot
    coef = 0.25 * om @ om + 0.5 * omd
    Y = -(np.einsum("nij,njk->nik", coef, fd.Ebar) + np.einsum("nij,njk->nik", om, fd.Edot) + fd.Eddot)
    vres = np.max(np.abs(Y[:, :, :n]), axis=(1, 2))
    # rows of Y_p are sum_j R_ij L[:, j]  ->  R^T = L^{-1} Y_p^T
    RT = np.linalg.solve(fd.L, np.swapaxes(Y[:, :, n:], -1, -2))
    R = np.swapaxes(RT, -1, -2)
    asym = np.max(np.abs(R - RT), axis=(1, 2))
    if check and np.any(asym > SYMMETRY_TOL):
        idx = int(np.argmax(asym))
        raise SymmetryBreach(f"curvature matrix asymmetry {asym[idx]:.2e}", particle=idx, t=t)
    Rs = 0.5 * (R + RT)
    return CurvatureMatrix(Rs, np.trace(Rs, axis1=1, axis2=2), asym, vres)


def _covariant_hessian(gam, df, d2f):
    return d2f - np.einsum("nkij,nk->nij", gam, df)


def curvature_matrix_analytic(H, t, z):
    """Full curvature matrix for static kinetic and mechanical kinds.

    In the V-frame it is ``L^{-1} (M + Hess U) L^{-T}`` with
    ``M_ab = g_bl R^l_{acd} P^c P^d`` and ``P = g^{-1} p``.
    """
    if H.kind not in ("kinetic", "mechanical"):
        raise UnsupportedKind(f"no closed-form curvature matrix for {H.kind}", kind=H.kind)
    n = H.dim
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x, p = z[:, :n], z[:, n:]
    m = H.metric
    g = m.g(t, x)
    G = small_inv(g)
    P = np.einsum("nij,nj->ni", G, p)
    pack = m.curvature_pack(t, x)
    M = np.einsum("nbl,nlacd,nc,nd->nab", g, pack.Rm, P, P)
    if H._hasU:
        gam = christoffel(G, m.dg(t, x))
        M = M + _covariant_hessian(gam, H.U.grad(t, x), H.U.hess(t, x))
    L = small_cholesky(g)
    Linv = small_inv(L)
    R = Linv @ M @ np.swapaxes(Linv, -1, -2)
    return 0.5 * (R + np.swapaxes(R, -1, -2))


def curvature_trace_analytic(H, t, z):
    """Closed-form trace of the curvature, dispatched on kind and metric."""
    n = H.dim
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x, p = z[:, :n], z[:, n:]
    m = H.metric
    g = m.g(t, x)
    G = small_inv(g)
    gam = christoffel(G, m.dg(t, x))
    pack = m.curvature_pack(t, x)
    P = np.einsum("nij,nj->ni", G, p)
    if H._hasW:
        gradW = np.einsum("nij,nj->ni", G, H.W.grad(t, x))
    else:
        gradW = np.zeros_like(P)
    Q = P + gradW
    rcqq = np.einsum("nij,ni,nj->n", pack.Rc, Q, Q)
    lapU = covariant_laplacian(G, gam, H.U.grad(t, x), H.U.hess(t, x)) if H._hasU else 0.0

    if H.kind in ("kinetic", "mechanical"):
        return rcqq + lapU
    if H.kind not in ("time_dependent_mechanical", "drift"):
        raise UnsupportedKind(f"no trace formula for {H.kind}", kind=H.kind)

    drift_terms = 0.0
    if H._hasW:
        def w2(y):
            gy = m.g(t, y)
            wy = H.W.grad(t, y)
            return np.einsum("ni,nij,nj->n", wy, small_inv(gy), wy)

        m.chart.require_stencil(2 * H_SECOND)
        lap_w2 = laplace_beltrami_fd(w2, lambda y: m.g(t, y), x, H_SECOND)
        lap_wdot = covariant_laplacian(G, gam, H.W.grad_dt(t, x), H.W.hess_dt(t, x))
        drift_terms = -0.5 * lap_w2 - lap_wdot

    if isinstance(m, ScaledFamily):
        c1, c2 = m.c1(t), m.c2(t)
        dc1, dc2 = m.c1.d(t), m.c2.d(t)
        return (rcqq + lapU + drift_terms - 0.5 * dc1 * pack.R - 0.5 * n * dc2 - 0.25 * n * c2**2
                + 0.25 * c1**2 * pack.normRc2 + 0.25 * c1**2 * pack.lapR
                - 0.5 * c1 * np.einsum("ni,ni->n", Q, pack.gradR))

    td = m.time_derivatives(t, x)
    tr_gdd = np.einsum("nij,nij->n", G, td.gddot)
    gd2 = np.einsum("nia,njb,nij,nab->n", G, G, td.gdot, td.gdot)
    tmix = np.einsum("ni,ni->n", Q, td.grad_tr_gdot - td.div_gdot)
    return rcqq + lapU + drift_terms - 0.5 * tr_gdd + 0.25 * gd2 - tmix


def curvature_matrix(H, t, z, method="auto", h=FRAME_STEP):
    """V-frame curvature matrix, closed form where available else via frames."""
    if method == "analytic" or (method == "auto" and H.kind in ("kinetic", "mechanical")):
        return curvature_matrix_analytic(H, t, z)
    return curvature_via_frames(H, t, z, h).R


def curvature_scaling_check(H, z, lam, t=0.0, method="frames"):
    """|tr R(x, lam p) - lam^2 tr R(x, p)| / max(1, |lam^2 tr R(x, p)|)."""
    if not H.homogeneous:
        raise NotHomogeneous(f"{H.kind} Hamiltonian is not fibrewise homogeneous", kind=H.kind)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n = H.dim
    zs = z.copy()
    zs[:, n:] *= lam
    if method == "frames":
        a = curvature_via_frames(H, t, z).trace
        b = curvature_via_frames(H, t, zs).trace
    else:
        a = curvature_trace_analytic(H, t, z)
        b = curvature_trace_analytic(H, t, zs)
    ref = lam**2 * a
    return float(np.max(np.abs(b - ref) / np.maximum(1.0, np.abs(ref))))


def darboux_residual(H, t, z):
    """max |omega(F_i, E_j) - delta_ij| and max |omega(E_i, E_j)|, |omega(F_i, F_j)|."""
    fd = frame_data(H, t, z)
    n = H.dim
    fe = omega(fd.Fbar[:, :, None, :], fd.Ebar[:, None, :, :])
    ee = omega(fd.Ebar[:, :, None, :], fd.Ebar[:, None, :, :])
    ff = omega(fd.Fbar[:, :, None, :], fd.Fbar[:, None, :, :])
    return max(np.max(np.abs(fe - np.eye(n))), np.max(np.abs(ee)), np.max(np.abs(ff)))


# ----------------------------------------------------------------------------
# Volume distortion
# ----------------------------------------------------------------------------

def measure_log_weight(measure, t, x, u=None):
    """log of the density of m_t with respect to the Riemannian volume."""
    x = np.atleast_2d(x)
    if measure.kind == "riemannian_volume":
        return np.zeros(x.shape[0])
    if measure.kind == "weighted":
        return -measure.weight.value(t, x)
    if u is None:
        raise MissingHJState("hj_weighted measure needs the HJ value u along the track")
    return measure.k(t) * np.asarray(u)


def volume_distortion_from_frame(H, measure, t, z, u=None, rotation=None):
    """v = log m_t(f_1, ..., f_n) evaluated directly on a horizontal frame.

    ``rotation`` (n x n orthogonal) replaces the frame (E, F) by (O E, O F),
    which must leave v unchanged.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n = H.dim
    x = z[:, :n]
    fd = frame_data(H, t, z)
    F = fd.Fbar
    if rotation is not None:
        F = np.einsum("ij,njk->nik", rotation, F)
    Fx = F[:, :, :n]
    sqrtg = np.sqrt(np.linalg.det(H.metric.g(t, x)))
    return measure_log_weight(measure, t, x, u) + np.log(sqrtg * np.abs(np.linalg.det(Fx)))


def lagrangian_rate(H, t, z):
    """d/dt of L = p . H_p - H along the flow."""
    n = H.dim
    z = np.atleast_2d(z)
    x, p = z[:, :n], z[:, n:]
    b = H.blocks(t, x, p)
    dHp = b.Hpt + np.einsum("nik,nk->ni", b.Hpx, b.Hp) - np.einsum("nij,nj->ni", b.Hpp, b.Hx)
    return -np.einsum("ni,ni->n", b.Hx, b.Hp) + np.einsum("ni,ni->n", p, dHp) - b.Ht


def volume_distortion_track(H, measure, trajectory, u=None):
    """v, dv/dt and d^2v/dt^2 along each characteristic of a trajectory.

    ``u`` is the HJ value along the characteristic, shape (K+1, N); it is
    required for ``hj_weighted`` measures, where ``m_t = exp(k u) vol`` and
    so ``v = k u``.
    """
    ts = trajectory.t_grid
    pts = trajectory.points
    K1, N, _ = pts.shape
    n = pts.shape[-1] // 2
    v = np.zeros((K1, N))
    vd = np.zeros((K1, N))
    vdd = np.zeros((K1, N))
    if measure.kind == "riemannian_volume":
        return VolumeDistortionTrack(v, vd, vdd)
    if measure.kind == "hj_weighted" and u is None:
        raise MissingHJState("hj_weighted measure needs the HJ value u along the track")
    k = measure.k
    Uw = measure.weight
    for i, t in enumerate(ts):
        z = pts[i]
        x, p = z[:, :n], z[:, n:]
        if measure.kind == "hj_weighted":
            lag = H.running_cost(t, z)
            v[i] = k(t) * u[i]
            vd[i] = k.d(t) * u[i] + k(t) * lag
            vdd[i] = k.dd(t) * u[i] + 2.0 * k.d(t) * lag + k(t) * lagrangian_rate(H, t, z)
        else:
            b = H.blocks(t, x, p)
            xd = b.Hp
            xdd = b.Hpt + np.einsum("nik,nk->ni", b.Hpx, b.Hp) - np.einsum("nij,nj->ni", b.Hpp, b.Hx)
            gU = Uw.grad(t, x)
            v[i] = -Uw.value(t, x)
            vd[i] = -Uw.dt(t, x) - np.einsum("ni,ni->n", gU, xd)
            vdd[i] = (-Uw.dtt(t, x) - 2.0 * np.einsum("ni,ni->n", Uw.grad_dt(t, x), xd)
                      - np.einsum("ni,nij,nj->n", xd, Uw.hess(t, x), xd)
                      - np.einsum("ni,ni->n", gU, xdd))
    return VolumeDistortionTrack(v, vd, vdd)
