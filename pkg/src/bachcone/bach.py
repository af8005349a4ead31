"""Curvature, the Bach tensor, and its linearization at the flat metric.

Metric-derived quantities are computed from grid samples by centered
differences of configurable order (2 or 4); every derivative level eats a
stencil radius off the valid region, tracked as ``margin``.  Two
independent routes to the Bach tensor are exposed:

* ``weyl``:    B_ij = div div W + (1/2) Ric . W, straight from the Weyl
                tensor;
* ``bianchi``: B_ij = (1/2)(lap Ric - (1/6) lap R g - (1/3) Hess R), the
                contracted-Bianchi reduction, exact at a flat metric and to
                first order around it (and far lighter on memory).

The linearized operator around the flat metric is evaluated both on grids
(coordinate stencils) and exactly on separated tensors (via
:mod:`bachcone.cone`); tests require the two paths to agree.  Sign
conventions: ``lap`` written here is the coordinate/analyst Laplacian
(negative of the rough Laplacian), divergences are positive contractions,
and ``delta_star`` is half the symmetrized gradient.

The displayed fourth-order operator equals -4 times the Frechet derivative
of the Bach map at the flat metric (the quadratic-remainder slope test pins
the factor), so :func:`bach_linearization` rescales accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from . import cone
from .cone import (
    GridSpec,
    Monomial,
    SeparatedOneForm,
    SeparatedScalar,
    SeparatedTensor,
    divergence_oneform,
    divergence_separated,
    hessian_scalar,
    interior_radial,
    laplacian_separated,
    bilaplacian_separated,
    rough_laplacian_scalar,
    scalar_times_flat_metric,
    symmetrized_gradient,
    trace_separated,
)

_D1_STENCILS = {
    2: (np.array([-0.5, 0.0, 0.5]), 1),
    4: (np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0, 2),
}


def _einsum(spec, *ops):
    """einsum with path optimization; the contractions here are BLAS-friendly."""
    return np.einsum(spec, *ops, optimize=True)


class GridTooSmallError(ValueError):
    """Raised when the padded grid cannot host the derivative levels needed."""


@dataclass(frozen=True)
class GaugeParameter:
    """Small gauge-perturbation parameter; the modified operators assume |t| small."""

    t: float

    def __post_init__(self):
        if abs(self.t) > 0.1:
            raise ValueError(f"|t| = {abs(self.t)} exceeds the small-parameter bound 0.1")


def partial_fd(arr: np.ndarray, axis: int, h: float, order: int = 4) -> np.ndarray:
    """Centered first derivative along one axis; edge zones become NaN."""
    coefs, rad = _D1_STENCILS[order]
    out = np.full_like(arr, np.nan)
    core = tuple(slice(rad, -rad) for _ in range(arr.ndim))
    acc = np.zeros_like(arr[core])
    for off, c in zip(range(-rad, rad + 1), coefs):
        if c == 0.0:
            continue
        sl = tuple(
            slice(rad + (off if ax == axis else 0), (off if ax == axis else 0) - rad or None)
            for ax in range(arr.ndim)
        )
        acc += c * arr[sl]
    out[core] = acc / h
    return out


def _grid_partial(comps: np.ndarray, axis: int, grid: GridSpec, order: int) -> np.ndarray:
    """Partial derivative of every component of a tensor sample array."""
    lead = comps.shape[: comps.ndim - 4]
    flat = comps.reshape((-1,) + comps.shape[-4:])
    out = np.empty_like(flat)
    for n in range(flat.shape[0]):
        out[n] = partial_fd(flat[n], axis, grid.h, order)
    return out.reshape(comps.shape)


# ---------------------------------------------------------------------------
# Curvature from metric samples
# ---------------------------------------------------------------------------


@dataclass
class CurvatureBundle:
    """Curvature of a sampled metric; ``margin`` cells at each face are invalid."""

    grid: GridSpec
    order: int
    metric: np.ndarray          # (4, 4, *shape)
    inverse: np.ndarray         # (4, 4, *shape)
    christoffel: np.ndarray     # (4, 4, 4, *shape), Gamma^k_ij = christoffel[k, i, j]
    ricci: np.ndarray           # (4, 4, *shape)
    scalar: np.ndarray          # (*shape,)
    schouten: np.ndarray        # (4, 4, *shape)
    riemann: np.ndarray | None  # (4, 4, 4, 4, *shape) in the pair convention
    weyl: np.ndarray | None
    margin: int

    def interior(self, extra: int = 0):
        return self.grid.interior(self.margin - self.grid.pad + extra)


def _invert_metric(g: np.ndarray) -> np.ndarray:
    mats = np.moveaxis(g, (0, 1), (-2, -1))
    if not np.all(np.isfinite(mats)):
        raise ValueError("metric samples contain non-finite values")
    sign, logdet = np.linalg.slogdet(mats)
    bad = sign <= 0
    if np.any(bad):
        idx = tuple(int(v[0]) for v in np.nonzero(bad))
        raise ValueError(f"metric is not positive definite at grid index {idx}")
    return np.moveaxis(np.linalg.inv(mats), (-2, -1), (0, 1))


def curvature(
    g: np.ndarray, grid: GridSpec, order: int = 4, want_weyl: bool = True
) -> CurvatureBundle:
    """Christoffel symbols, Ricci, scalar and Weyl-Schouten data from samples.

    ``g`` has shape (4, 4, *grid.shape).  Needs two derivative levels of
    padding; the Weyl tensor is optional because it is 256 components.
    """
    rad = _D1_STENCILS[order][1]
    if grid.pad < 2 * rad:
        raise GridTooSmallError(f"curvature needs pad >= {2 * rad}, got {grid.pad}")
    ginv = _invert_metric(g)
    dg = np.stack([_grid_partial(g, c, grid, order) for c in range(4)])  # dg[c,i,j]
    gamma_low = 0.5 * (
        np.moveaxis(dg, (0, 1, 2), (1, 0, 2))
        + np.moveaxis(dg, (0, 1, 2), (2, 0, 1))
        - dg
    )  # gamma_low[l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    gamma = _einsum("kl...,lij...->kij...", ginv, gamma_low)

    # Ricci assembled with early contractions to keep arrays at (4,4,4).
    ric = np.zeros_like(g)
    for i in range(4):
        ric += _grid_partial(gamma[i], i, grid, order)  # d_i Gamma^i_jk
    gamma_tr = _einsum("iik...->k...", gamma)  # Gamma^i_ik
    ric -= np.stack([_grid_partial(gamma_tr, j, grid, order) for j in range(4)])
    ric += _einsum("iim...,mjk...->jk...", gamma, gamma)
    ric -= _einsum("ijm...,mik...->jk...", gamma, gamma)
    ric = 0.5 * (ric + np.swapaxes(ric, 0, 1))

    scal = _einsum("jk...,jk...->...", ginv, ric)
    schouten = 0.5 * (ric - (scal / 6.0)[None, None] * g)

    riem = None
    weyl = None
    if want_weyl:
        driem = np.stack([_grid_partial(gamma, c, grid, order) for c in range(4)])
        # R^m_{ijl} = d_i Gamma^m_jl - d_j Gamma^m_il + Gamma^m_ip Gamma^p_jl - Gamma^m_jp Gamma^p_il
        r_up = np.zeros((4, 4, 4, 4) + grid.shape)
        for m in range(4):
            for i in range(4):
                for j in range(4):
                    for l in range(4):
                        r_up[m, i, j, l] = driem[i, m, j, l] - driem[j, m, i, l]
        r_up += _einsum("mip...,pjl...->mijl...", gamma, gamma)
        r_up -= _einsum("mjp...,pil...->mijl...", gamma, gamma)
        # pair-convention storage: riem[i, j, k, l] = g_{km} R^m_{ijl}
        riem = _einsum("km...,mijl...->ijkl...", g, r_up)
        del r_up, driem
        kn = (
            _einsum("ik...,jl...->ijkl...", schouten, g)
            + _einsum("jl...,ik...->ijkl...", schouten, g)
            - _einsum("il...,jk...->ijkl...", schouten, g)
            - _einsum("jk...,il...->ijkl...", schouten, g)
        )
        weyl = riem - kn
        del kn

    return CurvatureBundle(
        grid=grid,
        order=order,
        metric=g,
        inverse=ginv,
        christoffel=gamma,
        ricci=ric,
        scalar=scal,
        schouten=schouten,
        riemann=riem,
        weyl=weyl,
        margin=2 * rad,
    )


def bach_tensor(
    g: np.ndarray, grid: GridSpec, order: int = 4, route: str = "bianchi"
) -> Tuple[np.ndarray, int]:
    """Bach tensor samples and the valid margin (four derivative levels)."""
    rad = _D1_STENCILS[order][1]
    need = 4 * rad
    if grid.pad < need:
        raise GridTooSmallError(f"bach tensor needs pad >= {need}, got {grid.pad}")
    if route == "bianchi":
        cb = curvature(g, grid, order, want_weyl=False)
        return _bach_bianchi_from_cb(cb), 4 * rad
    if route == "weyl":
        cb = curvature(g, grid, order, want_weyl=True)
        B = _bach_from_weyl(cb)
        return B, 4 * rad
    raise ValueError(f"unknown route {route!r}")


def _bach_bianchi_from_cb(cb: CurvatureBundle) -> np.ndarray:
    lap_ric = _covariant_laplacian_02(cb.ricci, cb)
    hess_R = _scalar_hessian(cb.scalar, cb)
    lap_R = _einsum("ab...,ab...->...", cb.inverse, hess_R)
    return 0.5 * (lap_ric - (lap_R / 6.0)[None, None] * cb.metric - hess_R / 3.0)


def _scalar_hessian(s: np.ndarray, cb: CurvatureBundle) -> np.ndarray:
    grid, order = cb.grid, cb.order
    ds = np.stack([partial_fd(s, c, grid.h, order) for c in range(4)])
    out = np.empty((4, 4) + grid.shape)
    for i in range(4):
        for j in range(4):
            out[i, j] = partial_fd(ds[j], i, grid.h, order)
    out -= _einsum("pij...,p...->ij...", cb.christoffel, ds)
    return 0.5 * (out + np.swapaxes(out, 0, 1))


def _covariant_derivative_02(T: np.ndarray, cb: CurvatureBundle) -> np.ndarray:
    """(0,2) -> (0,3): out[a, i, j] = nabla_a T_ij."""
    grid, order = cb.grid, cb.order
    out = np.empty((4, 4, 4) + grid.shape)
    for a in range(4):
        for i in range(4):
            for j in range(4):
                out[a, i, j] = partial_fd(T[i, j], a, grid.h, order)
    out -= _einsum("pai...,pj...->aij...", cb.christoffel, T)
    out -= _einsum("paj...,ip...->aij...", cb.christoffel, T)
    return out


def _covariant_laplacian_02(T: np.ndarray, cb: CurvatureBundle) -> np.ndarray:
    """Analyst-sign tensor Laplacian g^{ab} nabla_a nabla_b T for (0,2) input."""
    grid, order = cb.grid, cb.order
    dT = _covariant_derivative_02(T, cb)
    out = np.zeros((4, 4) + grid.shape)
    for b in range(4):
        pb = np.empty((4, 4, 4) + grid.shape)
        for a in range(4):
            for i in range(4):
                for j in range(4):
                    pb[a, i, j] = partial_fd(dT[a, i, j], b, grid.h, order)
        term = pb
        term = term - _einsum("pa...,pij...->aij...", cb.christoffel[:, b], dT)
        term = term - _einsum("pi...,apj...->aij...", cb.christoffel[:, b], dT)
        term = term - _einsum("pj...,aip...->aij...", cb.christoffel[:, b], dT)
        out += _einsum("a...,aij...->ij...", cb.inverse[:, b], term)
    return out


def _covariant_derivative_03(T: np.ndarray, cb: CurvatureBundle) -> np.ndarray:
    """(0,3) -> (0,4): out[a, i, k, j] = nabla_a T_ikj."""
    grid, order = cb.grid, cb.order
    out = np.empty((4, 4, 4, 4) + grid.shape)
    for a in range(4):
        for i in range(4):
            for k in range(4):
                for j in range(4):
                    out[a, i, k, j] = partial_fd(T[i, k, j], a, grid.h, order)
    out -= _einsum("pai...,pkj...->aikj...", cb.christoffel, T)
    out -= _einsum("pak...,ipj...->aikj...", cb.christoffel, T)
    out -= _einsum("paj...,ikp...->aikj...", cb.christoffel, T)
    return out


def _bach_from_weyl(cb: CurvatureBundle) -> np.ndarray:
    """B_ij = nabla^k nabla^l W_{ikjl} + 1/2 Ric^{kl} W_{ikjl}.

    The Weyl tensor is stored in the pair convention W[i, k, j, l]; the
    inner derivative is contracted against the last slot immediately so no
    rank-5 array is ever held.
    """
    grid, order, W = cb.grid, cb.order, cb.weyl
    ginv, gamma = cb.inverse, cb.christoffel
    shape = grid.shape
    # V_{ikj} = g^{lb} (nabla_b W)_{ikjl}
    V = np.zeros((4, 4, 4) + shape)
    for b in range(4):
        dW = np.empty((4, 4, 4, 4) + shape)
        for i in range(4):
            for k in range(4):
                for j in range(4):
                    for l in range(4):
                        dW[i, k, j, l] = partial_fd(W[i, k, j, l], b, grid.h, order)
        dW -= _einsum("pi...,pkjl...->ikjl...", gamma[:, b], W)
        dW -= _einsum("pk...,ipjl...->ikjl...", gamma[:, b], W)
        dW -= _einsum("pj...,ikpl...->ikjl...", gamma[:, b], W)
        dW -= _einsum("pl...,ikjp...->ikjl...", gamma[:, b], W)
        V += _einsum("l...,ikjl...->ikj...", ginv[:, b], dW)
        del dW
    dV = _covariant_derivative_03(V, cb)
    div2 = _einsum("ak...,aikj...->ij...", ginv, dV)
    ric_up = _einsum("ka...,lb...,ab...->kl...", ginv, ginv, cb.ricci)
    curv_term = 0.5 * _einsum("kl...,ikjl...->ij...", ric_up, W)
    return div2 + curv_term


# ---------------------------------------------------------------------------
# Flat-background linear operators on grids
# ---------------------------------------------------------------------------


def _flat_partial(arr: np.ndarray, axis: int, grid: GridSpec, order: int) -> np.ndarray:
    return partial_fd(arr, axis, grid.h, order)


def _flat_lap(arr: np.ndarray, grid: GridSpec, order: int) -> np.ndarray:
    return cone.coordinate_laplacian_fd(arr, grid.h, order)


def _sym_comps(h: np.ndarray) -> List[Tuple[int, int]]:
    return [(i, j) for i in range(4) for j in range(i, 4)]


def flat_divergence_grid(h: np.ndarray, grid: GridSpec, order: int = 4) -> np.ndarray:
    """(div h)_j = d_i h_ij for sampled symmetric tensors on the flat background."""
    out = np.zeros((4,) + grid.shape)
    for j in range(4):
        acc = np.full(grid.shape, 0.0)
        for i in range(4):
            acc = acc + _flat_partial(h[i, j], i, grid, order)
        out[j] = acc
    return out


def flat_delta_star_grid(w: np.ndarray, grid: GridSpec, order: int = 4) -> np.ndarray:
    """Half the symmetrized gradient of a sampled 1-form."""
    out = np.empty((4, 4) + grid.shape)
    for i in range(4):
        for j in range(4):
            out[i, j] = 0.5 * (
                _flat_partial(w[j], i, grid, order) + _flat_partial(w[i], j, grid, order)
            )
    return out


def flat_hessian_grid(s: np.ndarray, grid: GridSpec, order: int = 4) -> np.ndarray:
    out = np.empty((4, 4) + grid.shape)
    ds = [ _flat_partial(s, c, grid, order) for c in range(4)]
    for i in range(4):
        for j in range(4):
            out[i, j] = _flat_partial(ds[j], i, grid, order)
    return 0.5 * (out + np.swapaxes(out, 0, 1))


def _lap_comps(h: np.ndarray, grid: GridSpec, order: int) -> np.ndarray:
    out = np.empty_like(h)
    for idx in np.ndindex(*h.shape[: h.ndim - 4]):
        out[idx] = _flat_lap(h[idx], grid, order)
    return out


def radial_contraction_grid(h: np.ndarray, grid: GridSpec) -> np.ndarray:
    """(i_{r^-1 d/dr} h)_j = (x^i / r^2) h_ij on samples."""
    pts = grid.points()
    r2 = np.sum(pts**2, axis=-1)
    if np.any(r2 <= 1e-4):
        raise ValueError("grid touches the cone point; radial weight is singular")
    return _einsum("...i,ij...->j...", pts, h) / r2


def delta_t_grid(h: np.ndarray, grid: GridSpec, t: float, order: int = 4) -> np.ndarray:
    """Gauge-modified divergence: div h - t i_{r^-1 d/dr} h."""
    GaugeParameter(t)
    return flat_divergence_grid(h, grid, order) - t * radial_contraction_grid(h, grid)


def modified_operator_grid(
    h: np.ndarray, grid: GridSpec, t: float = 0.0, order: int = 4
) -> Tuple[np.ndarray, int]:
    """The displayed fourth-order operator on sampled h at the flat background.

    At t = 0 this is the linearized operator display; the t-terms replace
    each bare divergence with t times the radial contraction.  Returns the
    samples and the valid margin.
    """
    GaugeParameter(t)
    rad = _D1_STENCILS[order][1]
    need = 4 * rad
    if grid.pad < need:
        raise GridTooSmallError(f"fourth-order operator needs pad >= {need}")
    tr = _einsum("ii...->...", h)
    lap2_h = _lap_comps(_lap_comps(h, grid, order), grid, order)
    if t == 0.0:
        w = flat_divergence_grid(h, grid, order)
        div2 = np.zeros(grid.shape)
        for j in range(4):
            div2 = div2 + _flat_partial(w[j], j, grid, order)
    else:
        w = radial_contraction_grid(h, grid) * t
        div2 = np.zeros(grid.shape)
        for j in range(4):
            div2 = div2 + _flat_partial(w[j], j, grid, order)
    ds = flat_delta_star_grid(w, grid, order)
    lap_ds = _lap_comps(ds, grid, order)
    lap_tr = _flat_lap(tr, grid, order)
    hess_lap_tr = flat_hessian_grid(lap_tr, grid, order)
    lap2_tr = _flat_lap(lap_tr, grid, order)
    lap_div2 = _flat_lap(div2, grid, order)
    hess_div2 = flat_hessian_grid(div2, grid, order)
    eye = np.zeros((4, 4) + grid.shape)
    for i in range(4):
        eye[i, i] = 1.0
    out = (
        lap2_h
        - 2.0 * lap_ds
        + (hess_lap_tr - lap2_tr[None, None] * eye + lap_div2[None, None] * eye + 2.0 * hess_div2) / 3.0
    )
    return out, need


def linearized_operator_grid(
    h: np.ndarray, grid: GridSpec, order: int = 4
) -> Tuple[np.ndarray, int]:
    return modified_operator_grid(h, grid, 0.0, order)


# ---------------------------------------------------------------------------
# Exact separated-path operators
# ---------------------------------------------------------------------------


def delta_t_separated(S: SeparatedTensor, t: float) -> SeparatedOneForm:
    GaugeParameter(t)
    return divergence_separated(S) + (-t) * interior_radial(S)


def modified_operator_separated(S: SeparatedTensor, t: float = 0.0) -> SeparatedTensor:
    """Exact separated-tensor evaluation of the displayed operator."""
    GaugeParameter(t)
    out = bilaplacian_separated(S)
    if t != 0.0:
        w = interior_radial(S)  # the 1-form the t-terms contract against
        ds = 0.5 * symmetrized_gradient(w)
        # -2 t Delta delta* w  with Delta = -rough
        out = out + (2.0 * t) * laplacian_separated(ds)
        div_w = divergence_oneform(w)
        lap_div_w = (-1.0) * rough_laplacian_scalar(div_w)
        out = out + (t / 3.0) * scalar_times_flat_metric(lap_div_w)
        out = out + (2.0 * t / 3.0) * hessian_scalar(div_w)
    trh = trace_separated(S)
    if trh.terms:
        lap_tr = (-1.0) * rough_laplacian_scalar(trh)
        lap2_tr = rough_laplacian_scalar(rough_laplacian_scalar(trh))
        out = out + (1.0 / 3.0) * hessian_scalar(lap_tr)
        out = out + (-1.0 / 3.0) * scalar_times_flat_metric(lap2_tr)
    if t == 0.0:
        w = divergence_separated(S)
        if w.tangential or w.radial:
            ds = 0.5 * symmetrized_gradient(w)
            out = out + 2.0 * laplacian_separated(ds)
            div2 = divergence_oneform(w)
            lap_div2 = (-1.0) * rough_laplacian_scalar(div2)
            out = out + (1.0 / 3.0) * scalar_times_flat_metric(lap_div2)
            out = out + (2.0 / 3.0) * hessian_scalar(div2)
    return out


def linearized_operator_separated(S: SeparatedTensor) -> SeparatedTensor:
    return modified_operator_separated(S, 0.0)


def bach_linearization_separated(S: SeparatedTensor, t: float = 0.0) -> SeparatedTensor:
    """Frechet derivative of the Bach map at the flat metric: -1/4 the display."""
    return (-0.25) * modified_operator_separated(S, t)


def scalar_curvature_linearization(S: SeparatedTensor) -> SeparatedScalar:
    """Frechet derivative of scalar curvature at the flat metric: div div h - lap tr h."""
    div2 = divergence_oneform(divergence_separated(S))
    lap_tr = (-1.0) * rough_laplacian_scalar(trace_separated(S))
    return div2 + (-1.0) * lap_tr


# ---------------------------------------------------------------------------
# Remainder slopes
# ---------------------------------------------------------------------------


def weighted_sup_norm(
    comps: np.ndarray, grid: GridSpec, margin: int, weight: float = 0.0
) -> float:
    """Sup over the valid interior of r**-weight times the frame norm."""
    inter = grid.interior(margin)
    sl = (slice(None), slice(None)) + inter
    vals = comps[sl]
    nrm = np.sqrt(_einsum("ij...,ij...->...", vals, vals))
    if weight:
        pts = grid.points()[inter]
        nrm = nrm * np.sum(pts**2, axis=-1) ** (-weight / 2.0)
    return float(np.max(nrm))


@dataclass(frozen=True)
class SlopeReport:
    direction: str
    eps: Tuple[float, ...]
    residuals: Tuple[float, ...]
    slope: float
    floor_hit: bool

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "eps": list(self.eps),
            "residuals": list(self.residuals),
            "slope": self.slope,
            "floor_hit": self.floor_hit,
        }


def _fit_slope(eps: Sequence[float], res: Sequence[float], floor: float) -> Tuple[float, bool]:
    eps = np.asarray(eps, dtype=float)
    res = np.asarray(res, dtype=float)
    keep = res > floor
    floor_hit = bool(np.any(~keep))
    if keep.sum() < 2:
        return float("nan"), floor_hit
    slope = float(np.polyfit(np.log(eps[keep]), np.log(res[keep]), 1)[0])
    return slope, floor_hit


def remainder_slopes(
    direction: SeparatedTensor,
    eps_list: Sequence[float] = (1e-1, 3e-2, 1e-2),
    grid: GridSpec | None = None,
    order: int = 4,
    label: str = "",
    noise_floor: float = 1e-9,
) -> Tuple[SlopeReport, SlopeReport]:
    """Quadratic-remainder slopes of the Bach map and of scalar curvature.

    For each eps the metric delta + eps*h is sampled, its Bach tensor and
    scalar curvature are computed by finite differences, and the exact
    first-order terms (separated-path evaluation of the derivative) are
    subtracted; the log-log slope of the leftover against eps measures the
    remainder's vanishing order.
    """
    if len(eps_list) < 3:
        raise ValueError("need at least 3 epsilon values")
    if any(not 0.0 < e <= 0.1 for e in eps_list):
        raise ValueError("epsilon values must lie in (0, 0.1]")
    rad = _D1_STENCILS[order][1]
    if grid is None:
        grid = GridSpec(13, lo=0.6, hi=0.9, pad=4 * rad)
    pts = grid.points()
    margin = 4 * rad
    inter = grid.interior(margin - grid.pad)

    eye = np.zeros((4, 4) + grid.shape)
    for i in range(4):
        eye[i, i] = 1.0
    h = cone.separated_components_dense(direction, pts)

    P = bach_linearization_separated(direction)
    P_samp = cone.separated_components_dense(P, pts)
    Rlin = scalar_curvature_linearization(direction)
    Rlin_samp = cone.scalar_values_at(Rlin, pts)

    h_scale = weighted_sup_norm(h, grid, margin - grid.pad)
    # Kernel directions (P = 0) still get a sane denominator from h itself.
    p_scale = max(weighted_sup_norm(P_samp, grid, margin - grid.pad), h_scale, 1e-30)
    r_scale = max(float(np.max(np.abs(Rlin_samp[inter]))) if Rlin.terms else 0.0, h_scale, 1e-30)

    bach_res = []
    scal_res = []
    for eps in eps_list:
        g = eye + eps * h
        cb = curvature(g, grid, order, want_weyl=False)
        B = _bach_bianchi_from_cb(cb)
        resid = B - eps * P_samp
        bach_res.append(weighted_sup_norm(resid, grid, margin - grid.pad) / (eps * p_scale))
        r_resid = cb.scalar - eps * Rlin_samp
        scal_res.append(float(np.max(np.abs(r_resid[inter]))) / (eps * r_scale))

    bach_slope, bach_floor = _fit_slope(eps_list, np.asarray(bach_res) * np.asarray(eps_list), noise_floor)
    scal_slope, scal_floor = _fit_slope(eps_list, np.asarray(scal_res) * np.asarray(eps_list), noise_floor)
    return (
        SlopeReport(label or "bach", tuple(eps_list), tuple(float(x * e) for x, e in zip(bach_res, eps_list)), bach_slope, bach_floor),
        SlopeReport((label or "scalar") + ":scalar", tuple(eps_list), tuple(float(x * e) for x, e in zip(scal_res, eps_list)), scal_slope, scal_floor),
    )
