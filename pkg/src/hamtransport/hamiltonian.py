"""Hamiltonians quadratic in the momentum.

Every supported kind is a special case of

    H(t, x, p) = 1/2 p^T G p + p^T G w + U,    G = g^{-1},  w = dW,

so one set of derivative formulas covers kinetic, mechanical,
time-dependent mechanical and drift Hamiltonians.  Phase points are stored
as ``z = (x, p)`` with shape ``(N, 2n)``.
"""

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .errors import ConfigError, NonSPD
from .expr import ScalarField
from .geometry import ScaledFamily, small_inv, spd_inverse

KINDS = ("kinetic", "mechanical", "time_dependent_mechanical", "drift")


@dataclass
class PhasePoint:
    x: np.ndarray
    p: np.ndarray

    def as_array(self):
        return np.concatenate([np.atleast_2d(self.x), np.atleast_2d(self.p)], axis=-1)


@dataclass
class TangentVector:
    dx: np.ndarray
    dp: np.ndarray

    def as_array(self):
        return np.concatenate([np.atleast_2d(self.dx), np.atleast_2d(self.dp)], axis=-1)


@dataclass
class Blocks:
    """First and second derivatives of H at a batch of phase points."""

    H: np.ndarray
    Hp: np.ndarray
    Hx: np.ndarray
    Hpp: np.ndarray
    Hpx: np.ndarray  # Hpx[N, i, k] = d^2 H / dp_i dx_k
    Hxx: np.ndarray
    Ht: np.ndarray
    Hpt: np.ndarray

    @property
    def Hxp(self):
        return np.swapaxes(self.Hpx, -1, -2)


def omega(a, b):
    """Symplectic pairing sum dp ^ dx: omega(a, b) = a_p . b_x - b_p . a_x."""
    n = a.shape[-1] // 2
    return np.sum(a[..., n:] * b[..., :n], axis=-1) - np.sum(b[..., n:] * a[..., :n], axis=-1)


def ricci_potential(metric, c1):
    """U = -(c1^2/8) R for a scaled family, as a symbolic field of t only."""
    if not isinstance(metric, ScaledFamily):
        raise ConfigError("U = ricci needs a scaled-family metric", key="hamiltonian.U")
    n = metric.dim
    r0 = n * (n - 1) * metric.kappa0
    expr = -(c1.expr**2) * sp.nsimplify(r0) / (8 * metric.s.expr)
    return ScalarField(expr, n)


def _mv(A, v):
    return (A @ v[..., None])[..., 0]


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _inverse_derivs(G, dg, d2g=None):
    """Derivatives of G = g^{-1} with the derivative axes moved to the front.

    Returns dGk[N, k, i, j] = d_k G_ij and, if ``d2g`` is given,
    d2Gkl[N, k, l, i, j] = d_k d_l G_ij.
    """
    dgk = np.moveaxis(dg, -1, 1)
    Gb = G[:, None]
    dGk = -(Gb @ dgk @ Gb)
    if d2g is None:
        return dGk
    d2gkl = np.moveaxis(np.moveaxis(d2g, -2, 1), -1, 2)
    A = dgk[:, :, None] @ G[:, None, None] @ dgk[:, None, :]
    inner = A + np.swapaxes(A, 1, 2) - d2gkl
    Gbb = G[:, None, None]
    return dGk, Gbb @ inner @ Gbb


def _qform_k(a, Mk, b):
    """sum_ij a_i Mk[k, i, j] b_j for each k; shape (N, k)."""
    return np.sum((Mk @ b[:, None, :, None])[..., 0] * a[:, None, :], axis=-1)


class HamiltonianModel:
    """H = 1/2 |p|^2_g + <p, grad W> + U on a metric model."""

    def __init__(self, metric, kind, U=None, W=None):
        if kind not in KINDS:
            raise ConfigError(f"unknown Hamiltonian kind {kind!r}", key="hamiltonian.kind")
        n = metric.dim
        self.metric = metric
        self.kind = kind
        self.dim = n
        self.U = self._field(U, n, "hamiltonian.U")
        self.W = self._field(W, n, "hamiltonian.W")
        if kind == "kinetic" and not (self.U.is_zero and self.W.is_zero):
            raise ConfigError("kinetic Hamiltonian takes no potentials", key="hamiltonian.U")
        if kind in ("kinetic", "mechanical") and not metric.static:
            raise ConfigError(f"{kind} Hamiltonian needs a static metric", key="hamiltonian.kind")
        if kind == "mechanical" and self.U.time_dependent:
            raise ConfigError("mechanical U must not depend on t", key="hamiltonian.U")
        if kind != "drift" and not self.W.is_zero:
            raise ConfigError("W is only allowed for the drift kind", key="hamiltonian.W")
        self._hasU = not self.U.is_zero
        self._hasW = not self.W.is_zero

    @staticmethod
    def _field(src, n, key):
        if src is None:
            return ScalarField("0", n, key=key)
        if isinstance(src, ScalarField):
            return src
        return ScalarField(src, n, key=key)

    def __repr__(self):
        return f"HamiltonianModel({self.kind!r}, metric={self.metric.kind!r}, U={self.U.text!r}, W={self.W.text!r})"

    @property
    def autonomous(self):
        return self.metric.static and not self.U.time_dependent and not self.W.time_dependent

    @property
    def homogeneous(self):
        return self.kind == "kinetic"

    @property
    def chart(self):
        return self.metric.chart

    # ------------------------------------------------------------------
    def _split(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        n = self.dim
        return z[:, :n], z[:, n:]

    def _w(self, t, x):
        if self._hasW:
            return self.W.grad(t, x)
        return np.zeros_like(x)

    def evaluate(self, t, x, p):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = np.atleast_2d(np.asarray(p, dtype=float))
        G = small_inv(self.metric.g(t, x))
        w = self._w(t, x)
        val = _dot(_mv(G, p), 0.5 * p + w)
        if self._hasU:
            val = val + self.U.value(t, x)
        return val

    def hamiltonian(self, t, z):
        x, p = self._split(z)
        return self.evaluate(t, x, p)

    def vector_field(self, t, z):
        """(H_p, -H_x) at a batch of phase points."""
        x, p = self._split(z)
        G = small_inv(self.metric.g(t, x))
        dGk = _inverse_derivs(G, self.metric.dg(t, x))
        w = self._w(t, x)
        hp = _mv(G, p + w)
        hx = _qform_k(p, dGk, 0.5 * p + w)
        if self._hasW:
            hx = hx + _mv(np.swapaxes(self.W.hess(t, x), -1, -2), _mv(G, p))
        if self._hasU:
            hx = hx + self.U.grad(t, x)
        return np.concatenate([hp, -hx], axis=-1)

    def blocks(self, t, x, p):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = np.atleast_2d(np.asarray(p, dtype=float))
        m = self.metric
        G = spd_inverse(m.g(t, x), t)
        dGk, d2Gkl = _inverse_derivs(G, m.dg(t, x), m.d2g(t, x))
        Gd = -G @ m.gdot(t, x) @ G
        n = self.dim
        N = x.shape[0]
        if self._hasW:
            w = self.W.grad(t, x)
            hw = self.W.hess(t, x)
            tw = self.W.third(t, x)
            wd = self.W.grad_dt(t, x)
        else:
            w = np.zeros((N, n))
            hw = np.zeros((N, n, n))
            tw = np.zeros((N, n, n, n))
            wd = np.zeros((N, n))
        q = p + w
        half = 0.5 * p + w
        Gp = _mv(G, p)
        H = _dot(Gp, half)
        Hp = _mv(G, q)
        Hx = _qform_k(p, dGk, half) + _mv(np.swapaxes(hw, -1, -2), Gp)
        # Hpx[i, k] = sum_j dG[i, j, k] q_j + (G hw)[i, k]
        Hpx = np.swapaxes((dGk @ q[:, None, :, None])[..., 0], 1, 2) + G @ hw
        r = (p[:, None, None, :] @ dGk)[:, :, 0, :]  # r[k, j] = sum_i p_i dG[i, j, k]
        cross = r @ hw
        Hxx = ((p[:, None, None, None, :] @ d2Gkl @ half[:, None, None, :, None])[..., 0, 0]
               + cross + np.swapaxes(cross, -1, -2) + np.sum(Gp[:, :, None, None] * tw, axis=1))
        Ht = _dot(_mv(Gd, p), half) + _dot(Gp, wd)
        Hpt = _mv(Gd, q) + _mv(G, wd)
        if self._hasU:
            H = H + self.U.value(t, x)
            Hx = Hx + self.U.grad(t, x)
            Hxx = Hxx + self.U.hess(t, x)
            Ht = Ht + self.U.dt(t, x)
        return Blocks(H, Hp, Hx, G, Hpx, 0.5 * (Hxx + np.swapaxes(Hxx, -1, -2)), Ht, Hpt)

    def derivative_blocks(self, t, pt):
        return self.blocks(t, pt.x, pt.p)

    def field_jacobian(self, t, z):
        """D(H_p, -H_x) with respect to z = (x, p); shape (N, 2n, 2n)."""
        return self.linearization(t, z)[2]

    def linearization(self, t, z):
        """(H, vector field, field Jacobian) from a single derivative pass."""
        x, p = self._split(z)
        b = self.blocks(t, x, p)
        top = np.concatenate([b.Hpx, b.Hpp], axis=-1)
        bottom = np.concatenate([-b.Hxx, -b.Hxp], axis=-1)
        vf = np.concatenate([b.Hp, -b.Hx], axis=-1)
        return b.H, vf, np.concatenate([top, bottom], axis=-2)

    def check_convex(self, t, x):
        """H_pp = g^{-1} must be positive definite; raises NonSPD otherwise."""
        g = self.metric.g(t, np.atleast_2d(x))
        try:
            spd_inverse(spd_inverse(g, t), t)
        except NonSPD:
            raise NonSPD("H_pp is not positive definite", t=t) from None

    # ------------------------------------------------------------------
    def momentum(self, t, x, v):
        """Legendre map inverse: p = g v - dW."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.einsum("nij,nj->ni", self.metric.g(t, x), np.atleast_2d(v)) - self._w(t, x)

    def lagrangian(self, t, x, v):
        """L = 1/2 |v - grad W|^2_g - U, the Legendre dual of H."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        g = self.metric.g(t, x)
        drift = np.linalg.solve(g, self._w(t, x)[..., None])[..., 0]
        d = v - drift
        val = 0.5 * np.einsum("ni,nij,nj->n", d, g, d)
        if self._hasU:
            val = val - self.U.value(t, x)
        return val

    def running_cost(self, t, z):
        """p . H_p - H along a characteristic, equal to L(t, x, H_p)."""
        x, p = self._split(z)
        vf = self.vector_field(t, z)
        n = self.dim
        return np.sum(p * vf[:, :n], axis=-1) - self.evaluate(t, x, p)


def evaluate(H, t, pt):
    H.chart.check(np.atleast_2d(pt.x), t)
    return H.evaluate(t, pt.x, pt.p)


def derivative_blocks(H, t, pt):
    H.chart.check(np.atleast_2d(pt.x), t)
    return H.derivative_blocks(t, pt)


def vector_field(H, t, pt):
    H.chart.check(np.atleast_2d(pt.x), t)
    z = pt.as_array()
    out = H.vector_field(t, z)
    n = H.dim
    return TangentVector(out[:, :n], out[:, n:])


def lagrangian(H, t, x, v):
    return H.lagrangian(t, x, v)


def simpson(values, h):
    """Composite Simpson rule on an even number of uniform intervals.

    Falls back to the trapezoid rule when the interval count is odd.
    """
    values = np.asarray(values, dtype=float)
    k = values.shape[0] - 1
    if k < 2 or k % 2:
        return h * (0.5 * values[0] + values[1:-1].sum(axis=0) + 0.5 * values[-1])
    return h / 3.0 * (values[0] + 4.0 * values[1:-1:2].sum(axis=0)
                      + 2.0 * values[2:-1:2].sum(axis=0) + values[-1])


def cost_action(H, trajectory):
    """Action of the characteristic: integral of L(t, x, xdot) dt.

    Uses the action accumulated by the integrator when present (same RK4
    scheme as the flow), otherwise Simpson quadrature on the nodes.
    """
    if getattr(trajectory, "action", None) is not None:
        return trajectory.action[-1]
    vals = np.array([H.running_cost(t, z) for t, z in zip(trajectory.t_grid, trajectory.points)])
    return simpson(vals, trajectory.h)
