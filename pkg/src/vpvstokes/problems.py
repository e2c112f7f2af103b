"""Benchmark Stokes problems: sources, boundary data, exact solutions.

Exact fields are written once as closed-form expressions and evaluated on
order-2 jets, so first derivatives of velocity, vorticity and pressure come
out exactly (no finite differencing in the field provider).  Manufactured
sources f are separate hand-derived closed forms; ``verify_manufactured``
guards them against transcription errors with high-order finite differences
of the exact field values.

Pressure conventions: exact pressures are stored as written; comparisons
mean-shift both fields because the velocity boundary condition determines
the network pressure only up to a constant.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import BoxDomain, LShapeDomain, butterfly_domain, heart_domain
from .jets import Jet2, jatan2, jcos, jexp, jhypot, jpow, jsin, seed_inputs


@dataclass
class FieldSample:
    """All field values and first derivatives the VPV residuals consume.

    grad_u[i, j] = du_i / dx_j.  In 2D, w is the scalar vorticity
    v_x - u_y and grad_w = (w_x, w_y); in 3D both are curl vectors.
    """

    dim: int
    u: np.ndarray       # (P, dim)
    p: np.ndarray       # (P,)
    w: np.ndarray       # (P,) in 2D, (P, 3) in 3D
    grad_u: np.ndarray  # (P, dim, dim)
    grad_w: np.ndarray  # (P, dim) in 2D, (P, 3, 3) in 3D
    grad_p: np.ndarray  # (P, dim)

    @property
    def divergence(self) -> np.ndarray:
        return np.einsum("pii->p", self.grad_u)


@dataclass
class ExactSolution:
    """Closed-form solution; ``fields`` is the provider used as the loss
    test seam."""

    fields: Callable[[np.ndarray], FieldSample]

    def u(self, X) -> np.ndarray:
        return self.fields(np.atleast_2d(X)).u

    def p(self, X) -> np.ndarray:
        return self.fields(np.atleast_2d(X)).p

    def w(self, X) -> np.ndarray:
        return self.fields(np.atleast_2d(X)).w

    def grad_u(self, X) -> np.ndarray:
        return self.fields(np.atleast_2d(X)).grad_u


@dataclass
class StokesProblem:
    name: str
    dim: int
    viscosity: float
    source: Callable[[np.ndarray], np.ndarray]     # X -> (P, dim)
    dirichlet: Callable[[np.ndarray], np.ndarray]  # X -> (P, dim)
    domain: object
    exact: Optional[ExactSolution] = None
    pressure_bc: Optional[Callable[[np.ndarray], np.ndarray]] = None


def _provider_2d(u_expr, v_expr, p_expr, w_expr=None):
    def provider(X: np.ndarray) -> FieldSample:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        x, y = seed_inputs(X)
        uj, vj, pj = u_expr(x, y), v_expr(x, y), p_expr(x, y)
        grad_u = np.stack([uj.grad, vj.grad], axis=1)
        if w_expr is not None:
            wj = w_expr(x, y)
            w, grad_w = wj.value, wj.grad
        else:
            # vorticity and its gradient from the velocity jets
            w = vj.grad[:, 0] - uj.grad[:, 1]
            grad_w = np.stack([vj.hess_at(0, 0) - uj.hess_at(0, 1),
                               vj.hess_at(0, 1) - uj.hess_at(1, 1)], axis=1)
        return FieldSample(2, np.stack([uj.value, vj.value], axis=1),
                           pj.value, w, grad_u, grad_w, pj.grad)
    return provider


def _provider_3d(u_exprs, p_expr, w_exprs):
    def provider(X: np.ndarray) -> FieldSample:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        x, y, z = seed_inputs(X)
        ujs = [e(x, y, z) for e in u_exprs]
        wjs = [e(x, y, z) for e in w_exprs]
        pj = p_expr(x, y, z)
        return FieldSample(
            3,
            np.stack([j.value for j in ujs], axis=1),
            pj.value,
            np.stack([j.value for j in wjs], axis=1),
            np.stack([j.grad for j in ujs], axis=1),
            np.stack([j.grad for j in wjs], axis=1),
            pj.grad,
        )
    return provider


# ---------------------------------------------------------------------------
# smooth 2D case on the unit square


def _smooth2d_u(x, y):
    return jsin(x) * jsin(x) * jcos(y) * jsin(y)


def _smooth2d_v(x, y):
    return -(jcos(x) * jsin(x) * jsin(y) * jsin(y))


def _smooth2d_p(x, y):
    return jcos(x) * jcos(y)


def _smooth2d_w(x, y):
    return -(jcos(x * 2.0) * jsin(y) * jsin(y)) - jsin(x) * jsin(x) * jcos(y * 2.0)


def _smooth2d_f(X):
    x, y = X[:, 0], X[:, 1]
    f1 = -np.cos(2 * x) * np.sin(2 * y) + 2 * np.sin(x) ** 2 * np.sin(2 * y) \
        - np.sin(x) * np.cos(y)
    f2 = -2 * np.sin(2 * x) * np.sin(y) ** 2 + np.sin(2 * x) * np.cos(2 * y) \
        - np.cos(x) * np.sin(y)
    return np.stack([f1, f2], axis=1)


def smooth2d() -> StokesProblem:
    exact = ExactSolution(_provider_2d(_smooth2d_u, _smooth2d_v, _smooth2d_p,
                                       _smooth2d_w))
    return StokesProblem("smooth2d", 2, 1.0, _smooth2d_f, exact.u,
                         BoxDomain((0.0, 0.0), (1.0, 1.0)), exact,
                         pressure_bc=exact.p)


# ---------------------------------------------------------------------------
# smooth 3D case on the unit cube


def _sm3_u1(x, y, z):
    return x + x * x + x * y + x * x * x * y


def _sm3_u2(x, y, z):
    return y + x * y + y * y + x * x * y * y


def _sm3_u3(x, y, z):
    return -(z * 2.0) - x * z * 3.0 - y * z * 3.0 - x * x * y * z * 5.0


def _sm3_p(x, y, z):
    return x * y * z + x * x * x * y * y * y * z - 5.0 / 32.0


def _sm3_w1(x, y, z):
    return -(z * 3.0) - x * x * z * 5.0


def _sm3_w2(x, y, z):
    return z * 3.0 + x * y * z * 10.0


def _sm3_w3(x, y, z):
    return y + x * y * y * 2.0 - x - x * x * x


def _smooth3d_f(X):
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    f1 = -(2.0 + 6.0 * x * y) + y * z + 3.0 * x**2 * y**3 * z
    f2 = -(2.0 + 2.0 * x**2 + 2.0 * y**2) + x * z + 3.0 * x**3 * y**2 * z
    f3 = 10.0 * y * z + x * y + x**3 * y**3
    return np.stack([f1, f2, f3], axis=1)


def smooth3d() -> StokesProblem:
    exact = ExactSolution(_provider_3d((_sm3_u1, _sm3_u2, _sm3_u3), _sm3_p,
                                       (_sm3_w1, _sm3_w2, _sm3_w3)))
    return StokesProblem("smooth3d", 3, 1.0, _smooth3d_f, exact.u,
                         BoxDomain((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), exact,
                         pressure_bc=exact.p)


# ---------------------------------------------------------------------------
# pressure-robust case: f collapses to (1 - nu) grad p, so f = 0 at nu = 1


def _pr_u(x, y):
    return -(jexp(x) * (y * jcos(y) + jsin(y)))


def _pr_v(x, y):
    return jexp(x) * y * jsin(y)


def _pr_p(x, y):
    return jexp(x) * jsin(y) * 2.0


def _pr_w(x, y):
    return jexp(x) * jcos(y) * 2.0


def _pr_exact() -> ExactSolution:
    return ExactSolution(_provider_2d(_pr_u, _pr_v, _pr_p, _pr_w))


def pressure_robust(nu: float) -> StokesProblem:
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    exact = _pr_exact()

    def f(X):
        x, y = X[:, 0], X[:, 1]
        c = 2.0 * (1.0 - nu) * np.exp(x)
        return np.stack([c * np.sin(y), c * np.cos(y)], axis=1)

    return StokesProblem("pressure_robust", 2, nu, f, exact.u,
                         BoxDomain((0.0, 0.0), (1.0, 1.0)), exact,
                         pressure_bc=exact.p)


def lshape_smooth() -> StokesProblem:
    """The pressure-robust fields on the L-shape; homogeneous at nu = 1."""
    exact = _pr_exact()
    return StokesProblem("lshape_smooth", 2, 1.0,
                         lambda X: np.zeros_like(np.atleast_2d(X)),
                         exact.u, LShapeDomain(), exact, pressure_bc=exact.p)


# ---------------------------------------------------------------------------
# singular corner solution on the L-shape


_SING_DELTA = 0.5444837
_SING_OMEGA = 1.5 * np.pi
_SING_A = 1.0 + _SING_DELTA
_SING_B = 1.0 - _SING_DELTA
_SING_C = np.cos(_SING_DELTA * _SING_OMEGA)


def _sing_psi(t: Jet2) -> Jet2:
    a, b, C = _SING_A, _SING_B, _SING_C
    return (jsin(t * a) * (C / a) - jcos(t * a)
            - jsin(t * b) * (C / b) + jcos(t * b))


def _sing_psi1(t: Jet2) -> Jet2:
    a, b, C = _SING_A, _SING_B, _SING_C
    return (jcos(t * a) * C + jsin(t * a) * a
            - jcos(t * b) * C - jsin(t * b) * b)


def _sing_psi3(t: Jet2) -> Jet2:
    a, b, C = _SING_A, _SING_B, _SING_C
    return (-(jcos(t * a) * (C * a * a)) - jsin(t * a) * a**3
            + jcos(t * b) * (C * b * b) + jsin(t * b) * b**3)


def _sing_polar(x: Jet2, y: Jet2) -> tuple[Jet2, Jet2]:
    r = jhypot(x, y)
    t = jatan2(y, x)
    # wrap to [0, 3pi/2]: adding the constant leaves derivatives unchanged
    t = Jet2(np.where(t.value < 0.0, t.value + 2.0 * np.pi, t.value),
             t.grad, t.hess)
    return r, t


def _sing_u(x, y):
    r, t = _sing_polar(x, y)
    return jpow(r, _SING_DELTA) * (jsin(t) * _sing_psi(t) * _SING_A
                                   + jcos(t) * _sing_psi1(t))


def _sing_v(x, y):
    r, t = _sing_polar(x, y)
    return jpow(r, _SING_DELTA) * (jsin(t) * _sing_psi1(t)
                                   - jcos(t) * _sing_psi(t) * _SING_A)


def _sing_p(x, y):
    # sign flipped relative to the usual printed form: this is the branch
    # for which -laplace(u) + grad p vanishes identically
    r, t = _sing_polar(x, y)
    phi = _sing_psi1(t) * _SING_A**2 + _sing_psi3(t)
    return -(jpow(r, _SING_DELTA - 1.0) * phi * (1.0 / _SING_B))


def lshape_singular() -> StokesProblem:
    """Re-entrant corner solution: u in H^(1+delta), p singular at the
    origin; homogeneous source, homogeneous Dirichlet data on the two edges
    meeting the corner.  Evaluation points must exclude (0, 0)."""
    exact = ExactSolution(_provider_2d(_sing_u, _sing_v, _sing_p))
    return StokesProblem("lshape_singular", 2, 1.0,
                         lambda X: np.zeros_like(np.atleast_2d(X)),
                         exact.u, LShapeDomain(), exact, pressure_bc=exact.p)


# ---------------------------------------------------------------------------
# lid-driven cavities (no exact solution)


def _lid_g(dim: int):
    def g(X):
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], dim))
        out[X[:, dim - 1] == 1.0, 0] = 1.0  # moving lid, corners included
        return out
    return g


def lid_driven(dim: int) -> StokesProblem:
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    name = "lid2d" if dim == 2 else "lid3d"
    zeros = lambda X: np.zeros_like(np.atleast_2d(X))
    return StokesProblem(name, dim, 1.0, zeros, _lid_g(dim),
                         BoxDomain((0.0,) * dim, (1.0,) * dim))


# ---------------------------------------------------------------------------
# meshless variants: the smooth solutions on irregular domains


def butterfly2d() -> StokesProblem:
    prob = smooth2d()
    return StokesProblem("butterfly2d", 2, 1.0, prob.source, prob.dirichlet,
                         butterfly_domain(), prob.exact, prob.pressure_bc)


def heart3d() -> StokesProblem:
    prob = smooth3d()
    return StokesProblem("heart3d", 3, 1.0, prob.source, prob.dirichlet,
                         heart_domain(), prob.exact, prob.pressure_bc)


PROBLEM_NAMES = ("smooth2d", "smooth3d", "pressure_robust", "lshape_smooth",
                 "lshape_singular", "lid2d", "lid3d", "butterfly2d", "heart3d")


def problem_by_name(name: str, nu: float | None = None) -> StokesProblem:
    if name == "smooth2d":
        return smooth2d()
    if name == "smooth3d":
        return smooth3d()
    if name == "pressure_robust":
        return pressure_robust(1.0 if nu is None else nu)
    if name == "lshape_smooth":
        return lshape_smooth()
    if name == "lshape_singular":
        return lshape_singular()
    if name == "lid2d":
        return lid_driven(2)
    if name == "lid3d":
        return lid_driven(3)
    if name == "butterfly2d":
        return butterfly2d()
    if name == "heart3d":
        return heart3d()
    raise KeyError(f"unknown problem {name!r}; valid: {', '.join(PROBLEM_NAMES)}")


# ---------------------------------------------------------------------------
# manufactured-solution verification


def _fd_first(f, X, axis, h):
    e = np.zeros(X.shape[1])
    e[axis] = 1.0
    return (8.0 * (f(X + h * e) - f(X - h * e))
            - (f(X + 2 * h * e) - f(X - 2 * h * e))) / (12.0 * h)


def _fd_second(f, X, axis, h):
    e = np.zeros(X.shape[1])
    e[axis] = 1.0
    return (-f(X + 2 * h * e) + 16.0 * f(X + h * e) - 30.0 * f(X)
            + 16.0 * f(X - h * e) - f(X - 2 * h * e)) / (12.0 * h * h)


@dataclass
class ManufacturedReport:
    ok: bool
    tol: float
    max_momentum: float
    max_divergence: float
    max_vorticity: float
    worst_term: str
    worst_point: np.ndarray

    def __str__(self):
        status = "PASS" if self.ok else "FAIL"
        return (f"{status} (tol {self.tol:g}): momentum {self.max_momentum:.3e}, "
                f"divergence {self.max_divergence:.3e}, vorticity {self.max_vorticity:.3e}; "
                f"worst term {self.worst_term} at {np.array2string(self.worst_point, precision=4)}")


def verify_manufactured(prob: StokesProblem, n_points: int = 100,
                        tol: float = 1e-6, seed: int = 0, step: float = 1e-3,
                        min_radius: float = 0.0) -> ManufacturedReport:
    """Check -nu lap(u) + grad p - f, div u and w - curl(u) at random
    interior points using fourth-order central differences of the exact
    field values."""
    if prob.exact is None:
        raise ValueError(f"problem {prob.name} has no exact solution")
    rng = np.random.default_rng(seed)
    margin = 5.0 * step
    if isinstance(prob.domain, LShapeDomain):
        X = prob.domain.sample_interior(rng, n_points, margin, min_radius)
    else:
        X = prob.domain.sample_interior(rng, n_points, margin)
    d = prob.dim
    nu = prob.viscosity
    exact = prob.exact

    u_comp = [lambda Y, i=i: exact.u(Y)[:, i] for i in range(d)]
    p_fn = lambda Y: exact.p(Y)

    lap_u = np.stack([sum(_fd_second(u_comp[i], X, ax, step) for ax in range(d))
                      for i in range(d)], axis=1)
    grad_p = np.stack([_fd_first(p_fn, X, ax, step) for ax in range(d)], axis=1)
    momentum = -nu * lap_u + grad_p - prob.source(X)

    div = sum(_fd_first(u_comp[i], X, i, step) for i in range(d))

    w = exact.w(X)
    if d == 2:
        curl = _fd_first(u_comp[1], X, 0, step) - _fd_first(u_comp[0], X, 1, step)
        vort_err = np.abs(w - curl)
    else:
        curl = np.stack([
            _fd_first(u_comp[2], X, 1, step) - _fd_first(u_comp[1], X, 2, step),
            _fd_first(u_comp[0], X, 2, step) - _fd_first(u_comp[2], X, 0, step),
            _fd_first(u_comp[1], X, 0, step) - _fd_first(u_comp[0], X, 1, step),
        ], axis=1)
        vort_err = np.abs(w - curl).max(axis=1)

    mom_err = np.abs(momentum).max(axis=1)
    div_err = np.abs(div)
    maxima = {"momentum": mom_err, "divergence": div_err, "vorticity": vort_err}
    worst_term = max(maxima, key=lambda k: maxima[k].max())
    worst_point = X[np.argmax(maxima[worst_term])]
    report = ManufacturedReport(
        ok=all(v.max() <= tol for v in maxima.values()),
        tol=tol,
        max_momentum=float(mom_err.max()),
        max_divergence=float(div_err.max()),
        max_vorticity=float(vort_err.max()),
        worst_term=worst_term,
        worst_point=worst_point,
    )
    return report


def exact_field_provider(prob: StokesProblem):
    """The exact-solution seam: a FieldSample provider for the loss."""
    if prob.exact is None:
        raise ValueError(f"problem {prob.name} has no exact solution")
    return prob.exact.fields
