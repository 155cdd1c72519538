"""Coordinate charts, metric models and their curvature.

Index conventions used throughout the package (a leading batch axis ``N`` is
always present):

* ``dg[N, i, j, k] = d_k g_ij`` and ``d2g[N, i, j, k, l] = d_k d_l g_ij``.
* ``Rm[N, l, i, j, k] = R^l_{ijk}`` with ``R(d_i, d_j) d_k = R^l_{ijk} d_l`` and
  ``R(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y]``.
* ``Rc[N, j, k] = sum_i R^i_{ijk}``, positive on the round sphere.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ChartBoundary, ConfigError, GridTooCoarse, NonSPD, StepTooLarge
from .expr import ScalarField, TimeFunction

TWO_PI = 2.0 * np.pi

# Finite-difference steps (4th-order central stencils).
H_FIRST = 1e-4
H_SECOND = 1e-3
H_CURV = 1e-2


class Chart:
    """Box-shaped coordinate chart with optional periodic coordinates.

    Non-periodic coordinates must stay at least ``margin`` away from the
    bounds for evaluation to be legal.
    """

    def __init__(self, name, dim, lower, upper, periodic, margin):
        if dim < 1:
            raise ConfigError("chart dimension must be >= 1", key="chart.dim")
        if margin <= 0:
            raise ConfigError("chart margin must be positive", key="chart.margin")
        self.name = name
        self.dim = int(dim)
        self.lower = np.asarray(lower, dtype=float).reshape(self.dim)
        self.upper = np.asarray(upper, dtype=float).reshape(self.dim)
        self.periodic = np.asarray(periodic, dtype=bool).reshape(self.dim)
        if np.any(self.upper - self.lower <= 2 * margin * ~self.periodic):
            raise ConfigError("chart bounds leave no legal interior", key="chart.bounds")
        self.margin = float(margin)

    @classmethod
    def torus(cls, dim):
        return cls("torus", dim, np.zeros(dim), np.full(dim, TWO_PI), np.ones(dim, bool), 1.0)

    @classmethod
    def plane(cls, dim, half_width=50.0, margin=1.0):
        return cls("plane", dim, np.full(dim, -half_width), np.full(dim, half_width),
                   np.zeros(dim, bool), margin)

    @classmethod
    def sphere(cls, dim, margin=0.15):
        """Hyperspherical chart: polar angles in (0, pi), last angle periodic."""
        lower = np.zeros(dim)
        upper = np.full(dim, np.pi)
        upper[-1] = TWO_PI
        periodic = np.zeros(dim, bool)
        periodic[-1] = True
        if dim == 1:
            return cls("circle", 1, [0.0], [TWO_PI], [True], margin)
        return cls("sphere", dim, lower, upper, periodic, margin)

    @property
    def has_boundary(self):
        return not bool(np.all(self.periodic))

    def legal_mask(self, x):
        x = np.atleast_2d(x)
        lo = self.lower + self.margin
        hi = self.upper - self.margin
        ok = (x >= lo) & (x <= hi) | self.periodic
        return np.all(ok, axis=-1) & np.all(np.isfinite(x), axis=-1)

    def check(self, x, t=None):
        """Raise ChartBoundary naming the first illegal point of a batch."""
        mask = self.legal_mask(x)
        if not np.all(mask):
            idx = int(np.argmin(mask))
            raise ChartBoundary(
                f"point left the legal region of chart {self.name!r}",
                particle=idx, t=t, x=np.atleast_2d(x)[idx].tolist(),
            )

    def require_stencil(self, h):
        if self.has_boundary and 2.0 * h >= self.margin:
            raise StepTooLarge(
                f"finite-difference stencil 2h={2 * h:g} exceeds chart margin {self.margin:g}",
                h=h,
            )


@dataclass
class CurvaturePack:
    """Batched curvature data at a set of chart points."""

    Rm: np.ndarray
    Rc: np.ndarray
    R: np.ndarray
    gradR: np.ndarray
    lapR: np.ndarray
    normRc2: np.ndarray


@dataclass
class TimeDerivatives:
    gdot: np.ndarray
    gddot: np.ndarray
    tr_gdot: np.ndarray
    div_gdot: np.ndarray
    grad_tr_gdot: np.ndarray


# ----------------------------------------------------------------------------
# Generic tensor helpers
# ----------------------------------------------------------------------------

def small_inv(g):
    """Batched inverse with a closed form for 1x1 and 2x2 blocks."""
    n = g.shape[-1]
    if n == 1:
        return 1.0 / g
    if n == 2:
        a, b = g[..., 0, 0], g[..., 0, 1]
        c, d = g[..., 1, 0], g[..., 1, 1]
        det = a * d - b * c
        out = np.empty_like(g)
        out[..., 0, 0] = d / det
        out[..., 0, 1] = -b / det
        out[..., 1, 0] = -c / det
        out[..., 1, 1] = a / det
        return out
    return np.linalg.inv(g)


def small_cholesky(g):
    """Batched lower Cholesky factor with a closed form for 2x2 blocks."""
    if g.shape[-1] != 2:
        return np.linalg.cholesky(g)
    l00 = np.sqrt(g[..., 0, 0])
    l10 = g[..., 1, 0] / l00
    out = np.zeros_like(g)
    out[..., 0, 0] = l00
    out[..., 1, 0] = l10
    out[..., 1, 1] = np.sqrt(g[..., 1, 1] - l10 * l10)
    return out


def spd_inverse(g, t=None):
    """Inverse of a batch of SPD matrices, raising NonSPD if Cholesky fails."""
    n = g.shape[-1]
    if n <= 2:
        ok = g[..., 0, 0] > 0
        if n == 2:
            ok &= g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0] > 0
        if not np.all(ok):
            raise NonSPD("metric is not positive definite", t=t)
        return small_inv(g)
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise NonSPD("metric is not positive definite", t=t) from None
    return np.linalg.inv(g)


def christoffel(ginv, dg):
    """Gamma[N, l, i, j] = 1/2 g^{lm} (d_i g_mj + d_j g_mi - d_m g_ij)."""
    lower = 0.5 * (np.einsum("nmji->nmij", dg) + np.einsum("nmij->nmij", dg)
                   - np.einsum("nijm->nmij", dg))
    return np.einsum("nlm,nmij->nlij", ginv, lower)


def riemann_from_derivs(g, dg, d2g):
    """Riemann tensor R^l_{ijk} from the metric and its first two derivatives."""
    ginv = small_inv(g)
    gam = christoffel(ginv, dg)
    dginv = -np.einsum("nla,nabk,nbm->nlmk", ginv, dg, ginv)
    lower = 0.5 * (np.einsum("nmjik->nmijk", d2g) + np.einsum("nmijk->nmijk", d2g)
                   - np.einsum("nijmk->nmijk", d2g))
    first = 0.5 * (np.einsum("nmji->nmij", dg) + np.einsum("nmij->nmij", dg)
                   - np.einsum("nijm->nmij", dg))
    # dgam[N, l, i, j, k] = d_k Gamma^l_{ij}
    dgam = (np.einsum("nlmk,nmij->nlijk", dginv, first)
            + np.einsum("nlm,nmijk->nlijk", ginv, lower))
    # R^l_{ijk} = d_i G^l_{jk} - d_j G^l_{ik} + G^m_{jk} G^l_{im} - G^m_{ik} G^l_{jm}
    rm = (np.einsum("nljki->nlijk", dgam) - np.einsum("nlikj->nlijk", dgam)
          + np.einsum("nmjk,nlim->nlijk", gam, gam)
          - np.einsum("nmik,nljm->nlijk", gam, gam))
    return rm


def contract_pack(g, rm):
    """Ricci, scalar curvature and |Rc|^2 from the Riemann tensor."""
    ginv = small_inv(g)
    rc = np.einsum("niijk->njk", rm)
    r = np.einsum("njk,njk->n", ginv, rc)
    norm = np.einsum("nia,njb,nij,nab->n", ginv, ginv, rc, rc)
    return rc, r, norm


def _fd_first(fn, x, h):
    """4th-order central first derivatives of a batched function; axis appended last."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    out = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        out.append((-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h))
    return np.stack(out, axis=-1)


def _fd_second(fn, x, h):
    """4th-order central second derivatives; two axes appended last."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    f0 = fn(x)
    out = np.empty(f0.shape + (n, n))
    w1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
    offs = np.arange(-2, 3)
    for k in range(n):
        ek = np.zeros(n)
        ek[k] = h
        val = (-fn(x + 2 * ek) + 16 * fn(x + ek) - 30 * f0 + 16 * fn(x - ek) - fn(x - 2 * ek)) / (12 * h * h)
        out[..., k, k] = val
        for l in range(k + 1, n):
            el = np.zeros(n)
            el[l] = h
            acc = 0.0
            for a, wa in zip(offs, w1):
                if wa == 0.0:
                    continue
                for b, wb in zip(offs, w1):
                    if wb == 0.0:
                        continue
                    acc = acc + wa * wb * fn(x + a * ek + b * el)
            out[..., k, l] = out[..., l, k] = acc / (h * h)
    return out


def fd_metric_derivs(gfunc, x, h=H_SECOND):
    """Finite-difference dg and d2g of a batched metric evaluator ``gfunc(x)``."""
    dg = _fd_first(gfunc, x, h)
    d2g = _fd_second(gfunc, x, h)
    return dg, d2g


def laplace_beltrami_fd(fn, gfunc, x, h=H_SECOND):
    """Covariant Laplacian g^{ij}(f_ij - Gamma^k_ij f_k) of a scalar by 4th-order FD."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = gfunc(x)
    ginv = small_inv(g)
    dg = _fd_first(gfunc, x, h)
    gam = christoffel(ginv, dg)
    df = _fd_first(fn, x, h)
    d2f = _fd_second(fn, x, h)
    return np.einsum("nij,nij->n", ginv, d2f - np.einsum("nkij,nk->nij", gam, df))


def covariant_laplacian(ginv, gam, df, d2f):
    return np.einsum("nij,nij->n", ginv, d2f - np.einsum("nkij,nk->nij", gam, df))


def fd_curvature_pack(gfunc, x, h=H_SECOND, h_curv=H_CURV):
    """Curvature pack from finite differences of the metric alone.

    Used as an independent oracle for analytic packs.  ``gfunc(x)`` returns a
    batch of metric matrices.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))

    def scalar_r(y):
        dg, d2g = fd_metric_derivs(gfunc, y, h)
        g = gfunc(y)
        return contract_pack(g, riemann_from_derivs(g, dg, d2g))[1]

    g = gfunc(x)
    dg, d2g = fd_metric_derivs(gfunc, x, h)
    rm = riemann_from_derivs(g, dg, d2g)
    rc, r, norm = contract_pack(g, rm)
    grad_r = _fd_first(scalar_r, x, h_curv)
    lap_r = laplace_beltrami_fd(scalar_r, gfunc, x, h_curv)
    return CurvaturePack(rm, rc, r, grad_r, lap_r, norm)


# ----------------------------------------------------------------------------
# Metric models
# ----------------------------------------------------------------------------

class MetricModel:
    """Base class. Subclasses provide g, dg, d2g and the time derivatives."""

    kind = "abstract"
    static = True

    def __init__(self, chart):
        self.chart = chart
        self.dim = chart.dim

    def _zeros(self, x, *extra):
        x = np.atleast_2d(x)
        return np.zeros((x.shape[0],) + (self.dim,) * len(extra))

    def g(self, t, x):
        raise NotImplementedError

    def dg(self, t, x):
        raise NotImplementedError

    def d2g(self, t, x):
        raise NotImplementedError

    def gdot(self, t, x):
        return self._zeros(x, 0, 0)

    def gddot(self, t, x):
        return self._zeros(x, 0, 0)

    def dgdot(self, t, x):
        return self._zeros(x, 0, 0, 0)

    def metric_at(self, t, x):
        """Checked metric evaluation: returns ``(g, g_inv)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self.chart.check(x, t)
        g = self.g(t, x)
        return g, spd_inverse(g, t)

    def sqrt_det(self, t, x):
        return np.sqrt(np.linalg.det(self.g(t, x)))

    def curvature_pack(self, t, x):
        raise NotImplementedError

    def fd_pack(self, t, x, h=H_SECOND, h_curv=H_CURV):
        """Finite-difference oracle pack at fixed time."""
        self.chart.require_stencil(2 * h_curv)
        return fd_curvature_pack(lambda y: self.g(t, y), x, h, h_curv)

    def christoffel(self, t, x):
        g = self.g(t, x)
        return christoffel(small_inv(g), self.dg(t, x))

    def time_derivatives(self, t, x):
        """ġ, g̈, tr ġ, div ġ and grad(tr ġ) at a batch of points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self.chart.check(x, t)
        if self.static:
            z2 = self._zeros(x, 0, 0)
            z1 = self._zeros(x, 0)
            return TimeDerivatives(z2, z2.copy(), np.zeros(x.shape[0]), z1, z1.copy())
        g = self.g(t, x)
        ginv = small_inv(g)
        dg = self.dg(t, x)
        gam = christoffel(ginv, dg)
        gd = self.gdot(t, x)
        dgd = self.dgdot(t, x)
        tr = np.einsum("nij,nij->n", ginv, gd)
        dginv = -np.einsum("nla,nabk,nbm->nlmk", ginv, dg, ginv)
        grad_tr = np.einsum("nijk,nij->nk", dginv, gd) + np.einsum("nij,nijk->nk", ginv, dgd)
        # nabla_i gdot_jk = d_i gdot_jk - G^m_ij gdot_mk - G^m_ik gdot_jm
        cov = (np.einsum("njki->nijk", dgd) - np.einsum("nmij,nmk->nijk", gam, gd)
               - np.einsum("nmik,njm->nijk", gam, gd))
        div = np.einsum("nij,nijk->nk", ginv, cov)
        return TimeDerivatives(gd, self.gddot(t, x), tr, div, grad_tr)


class Flat(MetricModel):
    """Euclidean metric on a torus or plane chart."""

    kind = "flat"
    kappa0 = 0.0

    def g(self, t, x):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.eye(self.dim), (x.shape[0], self.dim, self.dim)).copy()

    def dg(self, t, x):
        return self._zeros(x, 0, 0, 0)

    def d2g(self, t, x):
        return self._zeros(x, 0, 0, 0, 0)

    def curvature_pack(self, t, x):
        x = np.atleast_2d(x)
        z = np.zeros(x.shape[0])
        return CurvaturePack(self._zeros(x, 0, 0, 0, 0), self._zeros(x, 0, 0), z, self._zeros(x, 0), z.copy(), z.copy())


class RoundSphere(MetricModel):
    """Round sphere of radius r0 in hyperspherical coordinates.

    g_11 = r0^2 and g_kk = r0^2 prod_{j<k} sin^2(x_j).
    """

    kind = "round_sphere"

    def __init__(self, dim=2, r0=1.0, margin=0.15):
        if r0 <= 0:
            raise ConfigError("sphere radius must be positive", key="metric.r0")
        super().__init__(Chart.sphere(dim, margin))
        self.r0 = float(r0)
        self.kappa0 = 1.0 / self.r0**2

    def _diag(self, x):
        x = np.atleast_2d(x)
        s2 = np.sin(x[:, :-1]) ** 2
        diag = np.ones((x.shape[0], self.dim))
        diag[:, 1:] = np.cumprod(s2, axis=1)
        return self.r0**2 * diag

    def g(self, t, x):
        d = self._diag(x)
        return np.einsum("nk,kl->nkl", d, np.eye(self.dim))

    def dg(self, t, x):
        x = np.atleast_2d(x)
        d = self._diag(x)
        xa = x[:, :-1]
        cot = np.cos(xa) / np.sin(xa)
        out = np.zeros((x.shape[0],) + (self.dim,) * 3)
        for k in range(1, self.dim):
            for m in range(k):
                out[:, k, k, m] = 2.0 * cot[:, m] * d[:, k]
        return out

    def d2g(self, t, x):
        x = np.atleast_2d(x)
        d = self._diag(x)
        xa = x[:, :-1]
        cot = np.cos(xa) / np.sin(xa)
        csc2 = 1.0 / np.sin(xa) ** 2
        out = np.zeros((x.shape[0],) + (self.dim,) * 4)
        for k in range(1, self.dim):
            for m in range(k):
                for l in range(k):
                    if m == l:
                        val = (4.0 * cot[:, m] ** 2 - 2.0 * csc2[:, m]) * d[:, k]
                    else:
                        val = 4.0 * cot[:, m] * cot[:, l] * d[:, k]
                    out[:, k, k, m, l] = val
        return out

    def curvature_pack(self, t, x):
        x = np.atleast_2d(x)
        n = self.dim
        kap = self.kappa0
        g = self.g(t, x)
        eye = np.eye(n)
        rm = kap * (np.einsum("njk,li->nlijk", g, eye) - np.einsum("nik,lj->nlijk", g, eye))
        z = np.zeros(x.shape[0])
        return CurvaturePack(
            rm, (n - 1) * kap * g, z + n * (n - 1) * kap, self._zeros(x, 0), z.copy(),
            z + n * (n - 1) ** 2 * kap**2,
        )


class ConformalTorus(MetricModel):
    """Conformally flat metric g = exp(2 phi) I on the flat torus chart."""

    kind = "conformal_torus"

    def __init__(self, phi, dim=2):
        super().__init__(Chart.torus(dim))
        self.phi = phi if isinstance(phi, ScalarField) else ScalarField(phi, dim, key="metric.phi")
        self.static = not self.phi.time_dependent

    def g(self, t, x):
        e2 = np.exp(2.0 * self.phi.value(t, x))
        return np.einsum("n,kl->nkl", e2, np.eye(self.dim))

    def dg(self, t, x):
        e2 = np.exp(2.0 * self.phi.value(t, x))
        dphi = self.phi.grad(t, x)
        return np.einsum("n,nk,ij->nijk", 2.0 * e2, dphi, np.eye(self.dim))

    def d2g(self, t, x):
        e2 = np.exp(2.0 * self.phi.value(t, x))
        dphi = self.phi.grad(t, x)
        hphi = self.phi.hess(t, x)
        inner = 4.0 * np.einsum("nk,nl->nkl", dphi, dphi) + 2.0 * hphi
        return np.einsum("n,nkl,ij->nijkl", e2, inner, np.eye(self.dim))

    def gdot(self, t, x):
        e2 = np.exp(2.0 * self.phi.value(t, x))
        return np.einsum("n,kl->nkl", 2.0 * self.phi.dt(t, x) * e2, np.eye(self.dim))

    def gddot(self, t, x):
        e2 = np.exp(2.0 * self.phi.value(t, x))
        pt = self.phi.dt(t, x)
        return np.einsum("n,kl->nkl", (2.0 * self.phi.dtt(t, x) + 4.0 * pt**2) * e2, np.eye(self.dim))

    def dgdot(self, t, x):
        e2 = np.exp(2.0 * self.phi.value(t, x))
        pt = self.phi.dt(t, x)
        val = 2.0 * e2[:, None] * (self.phi.grad_dt(t, x) + 2.0 * pt[:, None] * self.phi.grad(t, x))
        return np.einsum("nk,ij->nijk", val, np.eye(self.dim))

    def _scalar_r(self, t, y):
        g = self.g(t, y)
        return contract_pack(g, riemann_from_derivs(g, self.dg(t, y), self.d2g(t, y)))[1]

    def curvature_pack(self, t, x):
        """Riemann tensor from exact metric derivatives; grad R and lap R by 4th-order FD."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = self.g(t, x)
        rm = riemann_from_derivs(g, self.dg(t, x), self.d2g(t, x))
        rc, r, norm = contract_pack(g, rm)
        rfun = lambda y: self._scalar_r(t, y)
        grad_r = _fd_first(rfun, x, H_CURV)
        d2r = _fd_second(rfun, x, H_CURV)
        ginv = small_inv(g)
        lap_r = covariant_laplacian(ginv, christoffel(ginv, self.dg(t, x)), grad_r, d2r)
        return CurvaturePack(rm, rc, r, grad_r, lap_r, norm)


class ScaledFamily(MetricModel):
    """g(t, x) = s(t) g0(x) over an Einstein base (flat or round sphere).

    With Rc0 = (n-1) kappa0 g0 the equation ġ = c1 Rc + c2 g reduces to
    ṡ = c1 (n-1) kappa0 + c2 s, checked by :meth:`scale_residual`.
    """

    kind = "scaled_family"
    static = False

    def __init__(self, base, s, c1, c2):
        if not isinstance(base, (Flat, RoundSphere)):
            raise ConfigError("scaled family needs a flat or round-sphere base", key="metric.base")
        super().__init__(base.chart)
        self.base = base
        self.s = s if isinstance(s, TimeFunction) else TimeFunction(s, key="metric.s")
        self.c1 = c1 if isinstance(c1, TimeFunction) else TimeFunction(c1, key="params.c1")
        self.c2 = c2 if isinstance(c2, TimeFunction) else TimeFunction(c2, key="params.c2")
        self.kappa0 = base.kappa0

    def scale_residual(self, t):
        n = self.dim
        return self.s.d(t) - self.c1(t) * (n - 1) * self.kappa0 - self.c2(t) * self.s(t)

    def check_scale(self, t0, t1, tol=1e-8, samples=101):
        ts = np.linspace(t0, t1, samples)
        if any(self.s(t) <= 0 for t in ts):
            raise ConfigError("scale s(t) must stay positive", key="metric.s")
        worst = max(abs(self.scale_residual(t)) for t in ts)
        if worst > tol:
            raise ConfigError(
                f"metric.s does not solve the scale equation (residual {worst:.3e})",
                key="metric.s", residual=worst,
            )
        return worst

    def g(self, t, x):
        return self.s(t) * self.base.g(t, x)

    def dg(self, t, x):
        return self.s(t) * self.base.dg(t, x)

    def d2g(self, t, x):
        return self.s(t) * self.base.d2g(t, x)

    def gdot(self, t, x):
        return self.s.d(t) * self.base.g(t, x)

    def gddot(self, t, x):
        return self.s.dd(t) * self.base.g(t, x)

    def dgdot(self, t, x):
        return self.s.d(t) * self.base.dg(t, x)

    def curvature_pack(self, t, x):
        p = self.base.curvature_pack(t, x)
        s = self.s(t)
        return CurvaturePack(p.Rm, p.Rc, p.R / s, p.gradR / s, p.lapR / s**2, p.normRc2 / s**2)

    def ricci_flow_residual(self, t, x):
        """Pointwise norm of ġ - c1 Rc - c2 g (Frobenius, coordinate components)."""
        pack = self.curvature_pack(t, x)
        res = self.gdot(t, x) - self.c1(t) * pack.Rc - self.c2(t) * self.g(t, x)
        return np.linalg.norm(res, axis=(-2, -1))


def metric_at(model, t, x):
    return model.metric_at(t, x)


def curvature_pack(model, t, x):
    model.chart.check(np.atleast_2d(x), t)
    return model.curvature_pack(t, np.atleast_2d(np.asarray(x, dtype=float)))


def metric_time_derivatives(model, t, x):
    return model.time_derivatives(t, x)


def bianchi_residual(model, t, x):
    """|div ġ - (c1/2) dR| for a scaled family."""
    td = model.time_derivatives(t, x)
    pack = model.curvature_pack(t, np.atleast_2d(x))
    return np.linalg.norm(td.div_gdot - 0.5 * model.c1(t) * pack.gradR, axis=-1)


def scalar_curvature_evolution_check(model, t_grid, x=None, h=1e-3, tol=1e-6):
    """Max over the grid of |dR/dt - (-(c1/2) lap R - c1 |Rc|^2 - c2 R)|.

    dR/dt is a 4th-order central difference with step ``h``; its error is
    estimated by comparing against step ``2h`` and GridTooCoarse is raised if
    that estimate exceeds ``tol``.
    """
    if not isinstance(model, ScaledFamily):
        raise ConfigError("scalar curvature evolution needs a scaled family", key="metric.kind")
    if x is None:
        x = np.array([[0.5 * (lo + hi) for lo, hi in zip(model.chart.lower, model.chart.upper)]])
    x = np.atleast_2d(x)

    def r_at(t):
        return model.curvature_pack(t, x).R

    def rdot(t, step):
        return (-r_at(t + 2 * step) + 8 * r_at(t + step) - 8 * r_at(t - step) + r_at(t - 2 * step)) / (12 * step)

    worst = 0.0
    for t in np.atleast_1d(t_grid):
        d1 = rdot(t, h)
        est = np.max(np.abs(rdot(t, 2 * h) - d1)) / 15.0
        if est > tol:
            raise GridTooCoarse(f"time step {h:g} cannot resolve dR/dt to {tol:g}", t=float(t), estimate=est)
        pack = model.curvature_pack(t, x)
        c1, c2 = model.c1(t), model.c2(t)
        rhs = -0.5 * c1 * pack.lapR - c1 * pack.normRc2 - c2 * pack.R
        worst = max(worst, float(np.max(np.abs(d1 - rhs))))
    return worst


# ----------------------------------------------------------------------------
# Reference measures
# ----------------------------------------------------------------------------

class MeasureModel:
    """Reference measure m_t: Riemannian volume, e^{-U} vol, or e^{k(t) u} vol.

    ``kind`` is ``riemannian_volume``, ``weighted`` (with ``weight`` a
    ScalarField U) or ``hj_weighted`` (with ``k`` a TimeFunction).
    """

    KINDS = ("riemannian_volume", "weighted", "hj_weighted")

    def __init__(self, kind, weight=None, k=None):
        if kind not in self.KINDS:
            raise ConfigError(f"unknown measure kind {kind!r}", key="measure.kind")
        if kind == "weighted" and weight is None:
            raise ConfigError("weighted measure needs measure.U", key="measure.U")
        if kind == "hj_weighted" and k is None:
            raise ConfigError("hj_weighted measure needs params.k", key="params.k")
        self.kind = kind
        self.weight = weight
        self.k = k

    @property
    def time_dependent(self):
        if self.kind == "hj_weighted":
            return True
        if self.kind == "weighted":
            return self.weight.time_dependent
        return False

    def __repr__(self):
        extra = {"weighted": self.weight, "hj_weighted": self.k}.get(self.kind)
        return f"MeasureModel({self.kind!r}{', ' + repr(extra) if extra is not None else ''})"


def chart_difference(chart, a, b):
    """a - b with periodic coordinates wrapped into [-L/2, L/2)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    span = chart.upper - chart.lower
    wrapped = (d + 0.5 * span) % span - 0.5 * span
    return np.where(chart.periodic, wrapped, d)
