"""Quadrature point sets: grids, corner-refined partitions, random samples.

One-point Gauss rules throughout: each element contributes its center and
measure, each boundary facet its midpoint, measure and outward normal.
Internally everything is stored as arrays; the ``elements`` / ``facets``
properties expose per-entity views for inspection and tests.

``global_h`` is the mesh size used by the h^-2 residual weights.  It is the
largest cell side, not the cell diagonal: a 50x50 unit-square grid has
global_h = 1/50. Element.size, by contrast, is the diameter.  Corner-refined
grids keep global_h = side/n of the equivalent uniform grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Element:
    center: np.ndarray
    measure: float
    size: float  # diameter


@dataclass(frozen=True)
class BoundaryFacet:
    midpoint: np.ndarray
    measure: float
    size: float
    outward_normal: np.ndarray


@dataclass
class QuadratureSet:
    dim: int
    centers: np.ndarray          # (N, d)
    measures: np.ndarray         # (N,)
    sizes: np.ndarray            # (N,)  element diameters
    facet_midpoints: np.ndarray  # (M, d)
    facet_measures: np.ndarray   # (M,)
    facet_sizes: np.ndarray      # (M,)
    facet_normals: np.ndarray    # (M, d)
    global_h: float

    @property
    def n_elements(self) -> int:
        return self.centers.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facet_midpoints.shape[0]

    @property
    def elements(self) -> list[Element]:
        return [Element(self.centers[i], float(self.measures[i]), float(self.sizes[i]))
                for i in range(self.n_elements)]

    @property
    def facets(self) -> list[BoundaryFacet]:
        return [BoundaryFacet(self.facet_midpoints[i], float(self.facet_measures[i]),
                              float(self.facet_sizes[i]), self.facet_normals[i])
                for i in range(self.n_facets)]

    def to_csv(self, path) -> None:
        """x[,y,z], weight, kind for every interior and boundary point."""
        d = self.dim
        cols = ["x", "y", "z"][:d]
        with open(path, "w") as fh:
            fh.write(",".join(cols + ["weight", "kind"]) + "\n")
            for i in range(self.n_elements):
                coords = ",".join(repr(float(c)) for c in self.centers[i])
                fh.write(f"{coords},{self.measures[i]!r},interior\n")
            for i in range(self.n_facets):
                coords = ",".join(repr(float(c)) for c in self.facet_midpoints[i])
                fh.write(f"{coords},{self.facet_measures[i]!r},boundary\n")


def _tensor_grid(edges_per_axis: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cell centers, measures and diameters of a tensor-product partition."""
    d = len(edges_per_axis)
    mids = [0.5 * (e[1:] + e[:-1]) for e in edges_per_axis]
    widths = [e[1:] - e[:-1] for e in edges_per_axis]
    grids = np.meshgrid(*mids, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*widths, indexing="ij")
    wstack = np.stack([g.ravel() for g in wgrids], axis=1)
    measures = np.prod(wstack, axis=1)
    sizes = np.sqrt(np.sum(wstack**2, axis=1))
    return centers, measures, sizes


def _box_facets(edges_per_axis: list[np.ndarray], lo, hi):
    """Boundary facets of a tensor-product box partition."""
    d = len(edges_per_axis)
    mids = [0.5 * (e[1:] + e[:-1]) for e in edges_per_axis]
    widths = [e[1:] - e[:-1] for e in edges_per_axis]
    pts, meas, szs, nrms = [], [], [], []
    for axis in range(d):
        others = [i for i in range(d) if i != axis]
        if d == 2:
            om = mids[others[0]]
            ow = widths[others[0]]
            tang_meas = ow
            tang_size = ow
            other_coords = om[:, None]
        else:
            g0, g1 = np.meshgrid(mids[others[0]], mids[others[1]], indexing="ij")
            w0, w1 = np.meshgrid(widths[others[0]], widths[others[1]], indexing="ij")
            other_coords = np.stack([g0.ravel(), g1.ravel()], axis=1)
            tang_meas = (w0 * w1).ravel()
            tang_size = np.maximum(w0, w1).ravel()
        for side, coord in ((-1.0, lo[axis]), (+1.0, hi[axis])):
            m = other_coords.shape[0]
            p = np.empty((m, d))
            p[:, axis] = coord
            for j, oa in enumerate(others):
                p[:, oa] = other_coords[:, j]
            n = np.zeros((m, d))
            n[:, axis] = side
            pts.append(p)
            meas.append(tang_meas)
            szs.append(tang_size)
            nrms.append(n)
    return (np.concatenate(pts), np.concatenate(meas),
            np.concatenate(szs), np.concatenate(nrms))


def uniform_grid(rect, n: int) -> QuadratureSet:
    """n^d equal cells over an axis-aligned box given as (lo, hi)."""
    lo = np.asarray(rect[0], dtype=np.float64)
    hi = np.asarray(rect[1], dtype=np.float64)
    d = lo.size
    if n < 1:
        raise ValueError("n must be at least 1")
    if np.any(hi <= lo):
        raise ValueError("degenerate box")
    edges = [np.linspace(lo[i], hi[i], n + 1) for i in range(d)]
    centers, measures, sizes = _tensor_grid(edges)
    fp, fm, fs, fn = _box_facets(edges, lo, hi)
    global_h = float(np.max((hi - lo) / n))
    return QuadratureSet(d, centers, measures, sizes, fp, fm, fs, fn, global_h)


_LSHAPE_SQUARES = (((-1.0, 0.0), (0.0, 1.0)),   # second quadrant
                   ((0.0, 0.0), (1.0, 1.0)),    # first quadrant
                   ((-1.0, -1.0), (0.0, 0.0)))  # third quadrant


def lshape_grid(n: int) -> QuadratureSet:
    """Three n x n unit squares tiling (-1,1)^2 minus the fourth quadrant.

    Internal edges between the squares are not boundary facets; the 8-unit
    perimeter carries 8n facets.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    cs, ms, ss = [], [], []
    fp, fm, fs, fn = [], [], [], []
    # edges dropped because they are interior to the L: (square index, axis, side)
    internal = {(0, 0, +1), (1, 0, -1), (0, 1, -1), (2, 1, +1)}
    for sq, (lo, hi) in enumerate(_LSHAPE_SQUARES):
        lo = np.asarray(lo)
        hi = np.asarray(hi)
        edges = [np.linspace(lo[i], hi[i], n + 1) for i in range(2)]
        c, m, s = _tensor_grid(edges)
        cs.append(c), ms.append(m), ss.append(s)
        mids = [0.5 * (e[1:] + e[:-1]) for e in edges]
        for axis in range(2):
            other = 1 - axis
            for side, coord in ((-1, lo[axis]), (+1, hi[axis])):
                if (sq, axis, side) in internal:
                    continue
                p = np.empty((n, 2))
                p[:, axis] = coord
                p[:, other] = mids[other]
                nr = np.zeros((n, 2))
                nr[:, axis] = float(side)
                fp.append(p), fm.append(np.full(n, 1.0 / n))
                fs.append(np.full(n, 1.0 / n)), fn.append(nr)
    return QuadratureSet(2, np.concatenate(cs), np.concatenate(ms), np.concatenate(ss),
                         np.concatenate(fp), np.concatenate(fm), np.concatenate(fs),
                         np.concatenate(fn), 1.0 / n)


def _geometric_sizes(k: int, length: float, ratio: float) -> np.ndarray:
    """k cell sizes summing to length, growing by 1/ratio away from index 0."""
    q = 1.0 / ratio
    if abs(q - 1.0) < 1e-14:
        return np.full(k, length / k)
    s0 = length * (q - 1.0) / (q**k - 1.0)
    return s0 * q ** np.arange(k)


def _refined_axis(lo: float, hi: float, n: int, at_lo: bool, at_hi: bool,
                  ratio: float) -> np.ndarray:
    L = hi - lo
    if at_lo and at_hi:
        n1 = n // 2
        s_lo = _geometric_sizes(n1, L / 2, ratio)
        s_hi = _geometric_sizes(n - n1, L / 2, ratio)[::-1]
        sizes = np.concatenate([s_lo, s_hi])
    elif at_lo:
        sizes = _geometric_sizes(n, L, ratio)
    elif at_hi:
        sizes = _geometric_sizes(n, L, ratio)[::-1]
    else:
        sizes = np.full(n, L / n)
    edges = lo + np.concatenate([[0.0], np.cumsum(sizes)])
    edges[-1] = hi
    return edges


def refined_grid(rect, n: int, corners, ratio: float = 0.9) -> QuadratureSet:
    """Tensor-product grid geometrically contracted toward the given corners.

    ratio is the per-cell contraction factor (0 < ratio < 1); the default
    reproduces sizes between roughly 4e-3 and 5.4e-2 for a 50x50 unit square
    refined at all four corners.
    """
    lo = np.asarray(rect[0], dtype=np.float64)
    hi = np.asarray(rect[1], dtype=np.float64)
    d = lo.size
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    if np.any(hi <= lo):
        raise ValueError("degenerate box")
    corners = [np.asarray(c, dtype=np.float64) for c in corners]
    edges = []
    for axis in range(d):
        at_lo = any(abs(c[axis] - lo[axis]) < 1e-12 for c in corners)
        at_hi = any(abs(c[axis] - hi[axis]) < 1e-12 for c in corners)
        edges.append(_refined_axis(lo[axis], hi[axis], n, at_lo, at_hi, ratio))
    centers, measures, sizes = _tensor_grid(edges)
    fp, fm, fs, fn = _box_facets(edges, lo, hi)
    global_h = float(np.max((hi - lo) / n))
    return QuadratureSet(d, centers, measures, sizes, fp, fm, fs, fn, global_h)


# ---------------------------------------------------------------------------
# implicitly defined domains and meshless sampling


@dataclass(frozen=True)
class BoxDomain:
    lo: tuple
    hi: tuple

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((X > lo) & (X < hi), axis=1)

    def sample_interior(self, rng: np.random.Generator, n: int,
                        margin: float = 0.0) -> np.ndarray:
        lo = np.asarray(self.lo) + margin
        hi = np.asarray(self.hi) - margin
        return rng.uniform(lo, hi, (n, self.dim))


@dataclass(frozen=True)
class LShapeDomain:
    """(-1,1)^2 with the closed fourth-quadrant square removed."""

    dim: int = 2

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        in_box = np.all((X > -1.0) & (X < 1.0), axis=1)
        in_cut = (X[:, 0] >= 0.0) & (X[:, 1] <= 0.0)
        return in_box & ~in_cut

    def sample_interior(self, rng: np.random.Generator, n: int,
                        margin: float = 0.0, min_radius: float = 0.0) -> np.ndarray:
        out = np.empty((n, 2))
        have = 0
        while have < n:
            cand = rng.uniform(-1.0 + margin, 1.0 - margin, (4 * n, 2))
            ok = self.contains(cand)
            ok &= (cand[:, 0] < -margin) | (cand[:, 1] > margin)
            if min_radius > 0.0:
                ok &= np.hypot(cand[:, 0], cand[:, 1]) > min_radius
            cand = cand[ok]
            take = min(n - have, cand.shape[0])
            out[have: have + take] = cand[:take]
            have += take
        return out


@dataclass(frozen=True)
class ImplicitDomain:
    """Domain given by an inside predicate plus a boundary point sampler."""

    name: str
    dim: int
    bbox: tuple  # (lo, hi)
    inside_fn: object = field(repr=False)
    boundary_fn: object = field(repr=False)  # (rng, n) -> (points, normals)

    def contains(self, X: np.ndarray) -> np.ndarray:
        return self.inside_fn(np.atleast_2d(X))

    def sample_interior(self, rng: np.random.Generator, n: int,
                        margin: float = 0.0) -> np.ndarray:
        lo = np.asarray(self.bbox[0])
        hi = np.asarray(self.bbox[1])
        out = np.empty((n, self.dim))
        have = 0
        while have < n:
            cand = rng.uniform(lo, hi, (4 * n, self.dim))
            cand = cand[self.inside_fn(cand)]
            take = min(n - have, cand.shape[0])
            out[have: have + take] = cand[:take]
            have += take
        return out


def implicit_sample(domain: ImplicitDomain, n_interior: int, n_boundary: int,
                    seed: int) -> QuadratureSet:
    """Meshless point cloud: rejection-sampled interior points plus boundary
    points from the domain's sampler.  Measures and sizes are 1 (the
    meshless loss applies its own weights)."""
    rng = np.random.default_rng(seed)
    interior = domain.sample_interior(rng, n_interior)
    bpts, bnrm = domain.boundary_fn(rng, n_boundary)
    ones_i = np.ones(n_interior)
    ones_b = np.ones(n_boundary)
    return QuadratureSet(domain.dim, interior, ones_i, ones_i.copy(),
                         bpts, ones_b, ones_b.copy(), bnrm, 1.0)


# -- butterfly curve (2D) ----------------------------------------------------


def _butterfly_radius(theta):
    s = np.cos(5 * theta) ** 2 + np.cos(2 * theta) ** 2 + np.cos(theta) ** 2
    return 2.0 * np.sqrt(s), s


def _butterfly_inside(X):
    X = np.atleast_2d(X)
    x = X[:, 0]
    y = X[:, 1] / 1.4
    theta = np.arctan2(y, x)
    r, _ = _butterfly_radius(theta)
    return np.hypot(x, y) < r


def _butterfly_boundary(rng, n):
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    r, s = _butterfly_radius(theta)
    x = r * np.cos(theta)
    y = 1.4 * r * np.sin(theta)
    # tangent from the parametrisation; outward normal is its right rotation
    sp = -(5.0 * np.sin(10 * theta) + 2.0 * np.sin(4 * theta) + np.sin(2 * theta))
    rp = sp / np.sqrt(s)
    tx = rp * np.cos(theta) - r * np.sin(theta)
    ty = 1.4 * (rp * np.sin(theta) + r * np.cos(theta))
    nrm = np.stack([ty, -tx], axis=1)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return np.stack([x, y], axis=1), nrm


def butterfly_domain() -> ImplicitDomain:
    rmax = 2.0 * np.sqrt(3.0)
    return ImplicitDomain("butterfly", 2,
                          ((-rmax, -1.4 * rmax), (rmax, 1.4 * rmax)),
                          _butterfly_inside, _butterfly_boundary)


# -- heart surface (3D) ------------------------------------------------------


def _heart_phi(X):
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    q = x**2 + 2.25 * y**2 + z**2 - 1.0
    return q**3 - x**2 * z**3 - 0.1125 * y**2 * z**3


def _heart_grad(X):
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    q = x**2 + 2.25 * y**2 + z**2 - 1.0
    gx = 6.0 * x * q**2 - 2.0 * x * z**3
    gy = 13.5 * y * q**2 - 0.225 * y * z**3
    gz = 6.0 * z * q**2 - 3.0 * x**2 * z**2 - 0.3375 * y**2 * z**2
    return np.stack([gx, gy, gz], axis=1)


def _heart_inside(X):
    return _heart_phi(np.atleast_2d(X)) < 0.0


def _heart_boundary(rng, n, tol=1e-10, max_iter=50):
    """Newton projection of random seeds along grad(phi) onto phi = 0;
    seeds that fail to converge within max_iter are rejected and redrawn."""
    lo, hi = np.array([-1.5, -1.5, -1.5]), np.array([1.5, 1.5, 1.5])
    pts = np.empty((n, 3))
    have = 0
    while have < n:
        cand = rng.uniform(lo, hi, (2 * (n - have), 3))
        for row in cand:
            p = row.copy()
            ok = False
            for _ in range(max_iter):
                val = _heart_phi(p[None, :])[0]
                if abs(val) < tol:
                    ok = True
                    break
                g = _heart_grad(p[None, :])[0]
                gg = g @ g
                if gg < 1e-30:
                    break
                p -= val * g / gg
            if ok:
                pts[have] = p
                have += 1
                if have == n:
                    break
    nrm = _heart_grad(pts)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return pts, nrm


def heart_domain() -> ImplicitDomain:
    return ImplicitDomain("heart", 3, ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5)),
                          _heart_inside, _heart_boundary)
