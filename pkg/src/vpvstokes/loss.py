"""Discrete least-squares loss of the first-order Stokes system.

Mesh mode (one-point Gauss rules over a partition):

    sum_D |mom|^2 |D|  +  sum_D h^-2 |nu (w - curl u)|^2 |D|
         [+ sum_D h^-2 (div u)^2 |D| in 3D]
         +  alpha sum_e h_e^-1 |u - g|^2 |e|

with h the global cell side and h_e the facet size; the pressure/normal
velocity boundary mode swaps the boundary residual for (u.n - un0, p - p0)
and drops the h^-2 interior weights (vorticity_weight "unit").

Meshless mode over sampled points: momentum unweighted, alpha2 on the
vorticity (and 3D divergence) and boundary sums.

Gradients come from one reverse sweep; the loss accepts any FieldSample
provider in place of a network for oracle substitution (loss_from_fields).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .geometry import QuadratureSet
from .problems import FieldSample, StokesProblem
from .network import Network, forward_packed, register_network_params
from .tape import Node, StructureError, Tape, backward, register_backward

BOUNDARY_VELOCITY = "velocity"
BOUNDARY_PNV = "pressure_normal_velocity"


@dataclass(frozen=True)
class LossConfig:
    boundary_mode: str = BOUNDARY_VELOCITY
    alpha: float = 1.0
    alpha2: float = 2500.0
    mode: str = "mesh"  # mesh | meshless
    vorticity_weight_mode: Optional[str] = None  # h_minus_2 | unit
    per_element_h: bool = False  # opt-in: local h_D instead of global h

    def resolved_vorticity_mode(self) -> str:
        if self.vorticity_weight_mode is not None:
            return self.vorticity_weight_mode
        return "unit" if self.boundary_mode == BOUNDARY_PNV else "h_minus_2"

    def __post_init__(self):
        if self.alpha <= 0 or self.alpha2 <= 0:
            raise ValueError("boundary weights must be positive")
        if self.boundary_mode not in (BOUNDARY_VELOCITY, BOUNDARY_PNV):
            raise ValueError(f"unknown boundary mode {self.boundary_mode!r}")
        if self.mode not in ("mesh", "meshless"):
            raise ValueError(f"unknown loss mode {self.mode!r}")


@dataclass(frozen=True)
class LossBreakdown:
    momentum: float
    vorticity: float
    divergence: float
    boundary: float
    total: float

    @staticmethod
    def from_terms(momentum, vorticity, divergence, boundary) -> "LossBreakdown":
        return LossBreakdown(float(momentum), float(vorticity), float(divergence),
                             float(boundary),
                             float(momentum + vorticity + divergence + boundary))


def interior_residuals(fs: FieldSample, f: np.ndarray, nu: float):
    """Pointwise first-order residuals (momentum, vorticity, divergence).

    The vorticity residual carries the factor nu, matching the system
    nu (w - curl u) = 0; the divergence residual is identically zero in the
    2D stream-function formulation.
    """
    f = np.atleast_2d(f)
    if fs.dim == 2:
        mom = np.stack([
            fs.grad_p[:, 0] + nu * fs.grad_w[:, 1] - f[:, 0],
            fs.grad_p[:, 1] - nu * fs.grad_w[:, 0] - f[:, 1],
        ], axis=1)
        vort = nu * (fs.w + fs.grad_u[:, 0, 1] - fs.grad_u[:, 1, 0])
        div = np.zeros(fs.u.shape[0])
        return mom, vort, div
    gw = fs.grad_w
    curl_w = np.stack([gw[:, 2, 1] - gw[:, 1, 2],
                       gw[:, 0, 2] - gw[:, 2, 0],
                       gw[:, 1, 0] - gw[:, 0, 1]], axis=1)
    mom = fs.grad_p + nu * curl_w - f
    gu = fs.grad_u
    curl_u = np.stack([gu[:, 2, 1] - gu[:, 1, 2],
                       gu[:, 0, 2] - gu[:, 2, 0],
                       gu[:, 1, 0] - gu[:, 0, 1]], axis=1)
    vort = nu * (fs.w - curl_u)
    div = fs.divergence
    return mom, vort, div


@dataclass
class LossContext:
    """Everything about (problem, quadrature, config) that is constant
    across parameter updates."""

    dim: int
    nu: float
    X_int: np.ndarray
    X_bdy: np.ndarray
    f_int: np.ndarray
    g_bdy: np.ndarray
    w_mom: np.ndarray
    w_vort: np.ndarray
    w_div: np.ndarray
    w_bdy: np.ndarray
    pnv: bool
    normals: Optional[np.ndarray] = None
    un0: Optional[np.ndarray] = None
    p0: Optional[np.ndarray] = None


def prepare_context(prob: StokesProblem, qps: QuadratureSet,
                    cfg: LossConfig) -> LossContext:
    if qps.dim != prob.dim:
        raise StructureError(
            f"quadrature dimension {qps.dim} does not match problem {prob.dim}")
    if cfg.mode == "meshless" and qps.n_facets == 0:
        raise StructureError("meshless loss requires boundary sample points")
    nu = prob.viscosity
    if cfg.mode == "mesh":
        w_mom = qps.measures.copy()
        if cfg.resolved_vorticity_mode() == "h_minus_2":
            h2 = qps.sizes**2 if cfg.per_element_h else qps.global_h**2
            w_vort = qps.measures / h2
        else:
            w_vort = qps.measures.copy()
        w_div = w_vort.copy()
        w_bdy = cfg.alpha * qps.facet_measures / qps.facet_sizes
    else:
        n_i, n_b = qps.n_elements, qps.n_facets
        w_mom = np.ones(n_i)
        w_vort = np.full(n_i, cfg.alpha2)
        w_div = np.full(n_i, cfg.alpha2)
        w_bdy = np.full(n_b, cfg.alpha2)
    ctx = LossContext(
        dim=prob.dim, nu=nu,
        X_int=qps.centers, X_bdy=qps.facet_midpoints,
        f_int=prob.source(qps.centers),
        g_bdy=prob.dirichlet(qps.facet_midpoints),
        w_mom=w_mom, w_vort=w_vort, w_div=w_div, w_bdy=w_bdy,
        pnv=cfg.boundary_mode == BOUNDARY_PNV,
    )
    if ctx.pnv:
        if prob.pressure_bc is None:
            raise StructureError(
                f"problem {prob.name} provides no pressure boundary data")
        ctx.normals = qps.facet_normals
        ctx.un0 = np.einsum("pi,pi->p", ctx.g_bdy, ctx.normals)
        ctx.p0 = prob.pressure_bc(qps.facet_midpoints)
    return ctx


def loss_from_fields(provider, prob: StokesProblem, qps: QuadratureSet,
                     cfg: LossConfig) -> LossBreakdown:
    """Evaluate the loss for any FieldSample provider (no gradient).

    This is the oracle seam: substituting the exact solution must drive the
    total to the quadrature floor.
    """
    ctx = prepare_context(prob, qps, cfg)
    fs_int = provider(ctx.X_int)
    mom, vort, div = interior_residuals(fs_int, ctx.f_int, ctx.nu)
    momentum = float(np.sum(ctx.w_mom[:, None] * mom**2))
    if ctx.dim == 2:
        vorticity = float(np.sum(ctx.w_vort * vort**2))
        divergence = 0.0
    else:
        vorticity = float(np.sum(ctx.w_vort[:, None] * vort**2))
        divergence = float(np.sum(ctx.w_div * div**2))
    fs_bdy = provider(ctx.X_bdy)
    if ctx.pnv:
        un = np.einsum("pi,pi->p", fs_bdy.u, ctx.normals) - ctx.un0
        rp = fs_bdy.p - ctx.p0
        bdy = float(np.sum(ctx.w_bdy * (un**2 + rp**2)))
    else:
        bdy = float(np.sum(ctx.w_bdy[:, None] * (fs_bdy.u - ctx.g_bdy) ** 2))
    return LossBreakdown.from_terms(momentum, vorticity, divergence, bdy)


# ---------------------------------------------------------------------------
# tape assembly: one fused node turns the head jet block into the four
# weighted term values, with a hand-written adjoint into the head slots.


def _vpv_terms_fwd(H: np.ndarray, ctx: LossContext):
    ni = ctx.X_int.shape[0]
    nu = ctx.nu
    if ctx.dim == 2:
        # slots: value, gx, gy, hxx, hxy, hyy; columns: psi, w, p
        mom1 = H[:ni, 1, 2] + nu * H[:ni, 2, 1] - ctx.f_int[:, 0]
        mom2 = H[:ni, 2, 2] - nu * H[:ni, 1, 1] - ctx.f_int[:, 1]
        vort = nu * (H[:ni, 0, 1] + H[:ni, 5, 0] + H[:ni, 3, 0])
        momentum = np.dot(ctx.w_mom, mom1**2 + mom2**2)
        vorticity = np.dot(ctx.w_vort, vort**2)
        divergence = 0.0
        res = {"mom1": mom1, "mom2": mom2, "vort": vort}
        if ctx.pnv:
            u = H[ni:, 2, 0]
            v = -H[ni:, 1, 0]
            un = u * ctx.normals[:, 0] + v * ctx.normals[:, 1] - ctx.un0
            rp = H[ni:, 0, 2] - ctx.p0
            boundary = np.dot(ctx.w_bdy, un**2 + rp**2)
            res.update(un=un, rp=rp)
        else:
            ru = H[ni:, 2, 0] - ctx.g_bdy[:, 0]
            rv = -H[ni:, 1, 0] - ctx.g_bdy[:, 1]
            boundary = np.dot(ctx.w_bdy, ru**2 + rv**2)
            res.update(ru=ru, rv=rv)
        return np.array([momentum, vorticity, divergence, boundary]), res
    # 3D: slots value/gx/gy/gz + hess; columns u1,u2,u3,w1,w2,w3,p
    Hi = H[:ni]
    mom = np.stack([
        Hi[:, 1, 6] + nu * (Hi[:, 2, 5] - Hi[:, 3, 4]) - ctx.f_int[:, 0],
        Hi[:, 2, 6] + nu * (Hi[:, 3, 3] - Hi[:, 1, 5]) - ctx.f_int[:, 1],
        Hi[:, 3, 6] + nu * (Hi[:, 1, 4] - Hi[:, 2, 3]) - ctx.f_int[:, 2],
    ], axis=1)
    vort = nu * np.stack([
        Hi[:, 0, 3] - (Hi[:, 2, 2] - Hi[:, 3, 1]),
        Hi[:, 0, 4] - (Hi[:, 3, 0] - Hi[:, 1, 2]),
        Hi[:, 0, 5] - (Hi[:, 1, 1] - Hi[:, 2, 0]),
    ], axis=1)
    div = Hi[:, 1, 0] + Hi[:, 2, 1] + Hi[:, 3, 2]
    momentum = np.dot(ctx.w_mom, np.sum(mom**2, axis=1))
    vorticity = np.dot(ctx.w_vort, np.sum(vort**2, axis=1))
    divergence = np.dot(ctx.w_div, div**2)
    res = {"mom": mom, "vort": vort, "div": div}
    if ctx.pnv:
        un = np.einsum("pi,pi->p", H[ni:, 0, 0:3], ctx.normals) - ctx.un0
        rp = H[ni:, 0, 6] - ctx.p0
        boundary = np.dot(ctx.w_bdy, un**2 + rp**2)
        res.update(un=un, rp=rp)
    else:
        ru = H[ni:, 0, 0:3] - ctx.g_bdy
        boundary = np.dot(ctx.w_bdy, np.sum(ru**2, axis=1))
        res.update(ru=ru)
    return np.array([momentum, vorticity, divergence, boundary]), res


@register_backward("vpv_terms")
def _vpv_terms_bwd(node, a, acc, grad):
    (head,) = node.parents
    ctx, res = node.ctx
    H = head.data
    dH = np.zeros_like(H)
    ni = ctx.X_int.shape[0]
    nu = ctx.nu
    if ctx.dim == 2:
        g1 = 2.0 * a[0] * ctx.w_mom * res["mom1"]
        g2 = 2.0 * a[0] * ctx.w_mom * res["mom2"]
        gv = 2.0 * a[1] * ctx.w_vort * res["vort"] * nu
        dH[:ni, 1, 2] += g1
        dH[:ni, 2, 1] += nu * g1
        dH[:ni, 2, 2] += g2
        dH[:ni, 1, 1] -= nu * g2
        dH[:ni, 0, 1] += gv
        dH[:ni, 5, 0] += gv
        dH[:ni, 3, 0] += gv
        if ctx.pnv:
            gn = 2.0 * a[3] * ctx.w_bdy * res["un"]
            gp = 2.0 * a[3] * ctx.w_bdy * res["rp"]
            dH[ni:, 2, 0] += gn * ctx.normals[:, 0]
            dH[ni:, 1, 0] -= gn * ctx.normals[:, 1]
            dH[ni:, 0, 2] += gp
        else:
            gu = 2.0 * a[3] * ctx.w_bdy * res["ru"]
            gvb = 2.0 * a[3] * ctx.w_bdy * res["rv"]
            dH[ni:, 2, 0] += gu
            dH[ni:, 1, 0] -= gvb
    else:
        gm = 2.0 * a[0] * ctx.w_mom[:, None] * res["mom"]
        gv = 2.0 * a[1] * ctx.w_vort[:, None] * res["vort"] * nu
        gd = 2.0 * a[2] * ctx.w_div * res["div"]
        dH[:ni, 1, 6] += gm[:, 0]
        dH[:ni, 2, 5] += nu * gm[:, 0]
        dH[:ni, 3, 4] -= nu * gm[:, 0]
        dH[:ni, 2, 6] += gm[:, 1]
        dH[:ni, 3, 3] += nu * gm[:, 1]
        dH[:ni, 1, 5] -= nu * gm[:, 1]
        dH[:ni, 3, 6] += gm[:, 2]
        dH[:ni, 1, 4] += nu * gm[:, 2]
        dH[:ni, 2, 3] -= nu * gm[:, 2]
        # vorticity residual: + on w slots, - on the velocity curls
        dH[:ni, 0, 3] += gv[:, 0]
        dH[:ni, 2, 2] -= gv[:, 0]
        dH[:ni, 3, 1] += gv[:, 0]
        dH[:ni, 0, 4] += gv[:, 1]
        dH[:ni, 3, 0] -= gv[:, 1]
        dH[:ni, 1, 2] += gv[:, 1]
        dH[:ni, 0, 5] += gv[:, 2]
        dH[:ni, 1, 1] -= gv[:, 2]
        dH[:ni, 2, 0] += gv[:, 2]
        dH[:ni, 1, 0] += gd
        dH[:ni, 2, 1] += gd
        dH[:ni, 3, 2] += gd
        if ctx.pnv:
            gn = 2.0 * a[3] * ctx.w_bdy * res["un"]
            gp = 2.0 * a[3] * ctx.w_bdy * res["rp"]
            for i in range(3):
                dH[ni:, 0, i] += gn * ctx.normals[:, i]
            dH[ni:, 0, 6] += gp
        else:
            gu = 2.0 * a[3] * ctx.w_bdy[:, None] * res["ru"]
            dH[ni:, 0, 0:3] += gu
    acc(head, dH)


@register_backward("sum_terms")
def _sum_terms_bwd(node, a, acc, grad):
    (terms,) = node.parents
    acc(terms, np.full(4, float(a)))


def assemble_loss_context(net: Network, ctx: LossContext):
    """Loss + gradient for a prepared context (the training hot path)."""
    tape = Tape(ctx.dim, net.layout.n_params)
    register_network_params(net, tape)
    X = np.vstack([ctx.X_int, ctx.X_bdy])
    head = forward_packed(net, X, tape)
    values, res = _vpv_terms_fwd(head.data, ctx)
    terms = Node(tape, "vpv_terms", (head,), values, ctx=(ctx, res))
    total = Node(tape, "sum_terms", (terms,), float(values.sum()))
    grad = backward(tape, total)
    bd = LossBreakdown.from_terms(*values)
    return bd, grad


def assemble_loss(net: Network, prob: StokesProblem, qps: QuadratureSet,
                  cfg: LossConfig):
    """Mesh-mode loss of the network with its parameter gradient."""
    if net.dim != prob.dim:
        raise StructureError(
            f"network dimension {net.dim} does not match problem {prob.dim}")
    if cfg.mode != "mesh":
        raise ValueError("assemble_loss is the mesh-mode entry point")
    return assemble_loss_context(net, prepare_context(prob, qps, cfg))


def assemble_loss_meshless(net: Network, prob: StokesProblem,
                           points: QuadratureSet, cfg: LossConfig):
    """Sampled-point loss (unit weights scaled by alpha2)."""
    if net.dim != prob.dim:
        raise StructureError(
            f"network dimension {net.dim} does not match problem {prob.dim}")
    if cfg.mode != "meshless":
        cfg = replace(cfg, mode="meshless")
    return assemble_loss_context(net, prepare_context(prob, points, cfg))


def write_loss_log(path, rows) -> None:
    """CSV of per-iteration term values: iter,momentum,vorticity,divergence,boundary,total."""
    with open(path, "w") as fh:
        fh.write("iter,momentum,vorticity,divergence,boundary,total\n")
        for it, bd in rows:
            fh.write(f"{it},{bd.momentum!r},{bd.vorticity!r},{bd.divergence!r},"
                     f"{bd.boundary!r},{bd.total!r}\n")
