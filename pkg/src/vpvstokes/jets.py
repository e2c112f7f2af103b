"""Order-2 jets: values with exact first and second spatial derivatives.

A ``Jet2`` carries f(x), grad f and the packed symmetric Hessian of a scalar
quantity with respect to the d spatial coordinates (d = 2 or 3).  Arithmetic
on jets propagates truncated Taylor series, so every derivative that comes
out is exact to machine precision.  All arrays are float64; leading axes are
free batch axes (a jet can hold one point or an array of points at once).

Hessian packing is upper triangular by rows:
    d=2: (xx, xy, yy)
    d=3: (xx, xy, xz, yy, yz, zz)
"upper triangle entry" means the value of the symmetric matrix at (i, j);
no factor-of-two convention is applied to off-diagonal slots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """Raised for numerically invalid operations (division by zero value,
    pow with non-positive base) instead of letting NaNs propagate."""


def hess_size(d: int) -> int:
    return d * (d + 1) // 2


def tri_index(i: int, j: int, d: int) -> int:
    """Flat index of symmetric entry (i, j) in the packed upper triangle."""
    if i > j:
        i, j = j, i
    return i * d - i * (i - 1) // 2 + (j - i)


def _triu_pairs(d: int):
    iu, ju = np.triu_indices(d)
    return iu, ju


@dataclass
class Jet2:
    """Truncated second-order Taylor expansion in the spatial inputs."""

    value: np.ndarray
    grad: np.ndarray   # (..., d)
    hess: np.ndarray   # (..., d(d+1)/2), packed symmetric

    @property
    def dim(self) -> int:
        return self.grad.shape[-1]

    def hess_at(self, i: int, j: int) -> np.ndarray:
        """Symmetric access: (i, j) and (j, i) give the identical entry."""
        return self.hess[..., tri_index(i, j, self.dim)]

    # operators delegate to the module-level jet arithmetic
    def __add__(self, other):
        return add(self, _coerce(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        if isinstance(other, Jet2):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            return div(self, other)
        return scale(self, 1.0 / other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return jpow(self, exponent)


def constant(value, d: int) -> Jet2:
    """A jet that does not vary with the spatial inputs."""
    value = np.asarray(value, dtype=np.float64)
    return Jet2(
        value,
        np.zeros(value.shape + (d,)),
        np.zeros(value.shape + (hess_size(d),)),
    )


def _coerce(x, like: Jet2) -> Jet2:
    if isinstance(x, Jet2):
        return x
    c = constant(x, like.dim)
    # broadcast constant against the jet's batch shape
    if c.value.shape != like.value.shape:
        c = Jet2(
            np.broadcast_to(c.value, like.value.shape).copy(),
            np.zeros(like.grad.shape),
            np.zeros(like.hess.shape),
        )
    return c


def seed_inputs(x) -> list[Jet2]:
    """Seed coordinate jets: jet i has value x_i, grad = e_i, hess = 0.

    Accepts a single point of shape (d,) or a batch of points (..., d);
    returns one jet per coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if d not in (2, 3):
        raise ValueError(f"spatial dimension must be 2 or 3, got {d}")
    batch = x.shape[:-1]
    hd = hess_size(d)
    out = []
    for i in range(d):
        grad = np.zeros(batch + (d,))
        grad[..., i] = 1.0
        out.append(Jet2(x[..., i].copy(), grad, np.zeros(batch + (hd,))))
    return out


# ---------------------------------------------------------------------------
# core arithmetic

def add(a: Jet2, b: Jet2) -> Jet2:
    return Jet2(a.value + b.value, a.grad + b.grad, a.hess + b.hess)


def sub(a: Jet2, b: Jet2) -> Jet2:
    return Jet2(a.value - b.value, a.grad - b.grad, a.hess - b.hess)


def neg(a: Jet2) -> Jet2:
    return Jet2(-a.value, -a.grad, -a.hess)


def scale(a: Jet2, c) -> Jet2:
    c = np.asarray(c, dtype=np.float64)
    return Jet2(c * a.value, c[..., None] * a.grad if c.ndim else c * a.grad,
                c[..., None] * a.hess if c.ndim else c * a.hess)


def _outer_packed(ga: np.ndarray, gb: np.ndarray, d: int) -> np.ndarray:
    """Symmetrised packed outer product: entry (i,j) = ga_i gb_j + ga_j gb_i
    for i < j, and 2 ga_i gb_i on the diagonal ... i.e. the (i,j) entry of
    ga gb^T + gb ga^T."""
    iu, ju = _triu_pairs(d)
    return ga[..., iu] * gb[..., ju] + ga[..., ju] * gb[..., iu]


def mul(a: Jet2, b: Jet2) -> Jet2:
    d = a.dim
    value = a.value * b.value
    grad = a.value[..., None] * b.grad + b.value[..., None] * a.grad
    hess = (
        a.value[..., None] * b.hess
        + b.value[..., None] * a.hess
        + _outer_packed(a.grad, b.grad, d)
    )
    return Jet2(value, grad, hess)


def compose(a: Jet2, f0, f1, f2) -> Jet2:
    """Jet of g(a) given g, g' and g'' evaluated at a.value."""
    iu, ju = _triu_pairs(a.dim)
    grad = f1[..., None] * a.grad
    hess = f1[..., None] * a.hess + f2[..., None] * (a.grad[..., iu] * a.grad[..., ju])
    return Jet2(f0, grad, hess)


def jsin(a: Jet2) -> Jet2:
    s = np.sin(a.value)
    return compose(a, s, np.cos(a.value), -s)


def jcos(a: Jet2) -> Jet2:
    c = np.cos(a.value)
    return compose(a, c, -np.sin(a.value), -c)


def jexp(a: Jet2) -> Jet2:
    e = np.exp(a.value)
    return compose(a, e, e, e)


def jtanh(a: Jet2) -> Jet2:
    t = np.tanh(a.value)
    d1 = 1.0 - t * t
    return compose(a, t, d1, -2.0 * t * d1)


def jsigmoid(a: Jet2) -> Jet2:
    s = 1.0 / (1.0 + np.exp(-a.value))
    d1 = s * (1.0 - s)
    return compose(a, s, d1, d1 * (1.0 - 2.0 * s))


def jpow(a: Jet2, exponent: float) -> Jet2:
    """a**exponent for real exponents; requires a strictly positive base."""
    if np.any(a.value <= 0.0):
        raise DomainError("pow requires a positive base")
    f0 = a.value ** exponent
    f1 = exponent * a.value ** (exponent - 1.0)
    f2 = exponent * (exponent - 1.0) * a.value ** (exponent - 2.0)
    return compose(a, f0, f1, f2)


def _recip(a: Jet2) -> Jet2:
    v = a.value
    return compose(a, 1.0 / v, -1.0 / v**2, 2.0 / v**3)


def div(a: Jet2, b: Jet2) -> Jet2:
    if np.any(b.value == 0.0):
        raise DomainError("division by a jet with zero value")
    return mul(a, _recip(b))


def jatan2(y: Jet2, x: Jet2) -> Jet2:
    """Two-argument arctangent of jets; undefined at the origin."""
    r2 = x.value**2 + y.value**2
    if np.any(r2 == 0.0):
        raise DomainError("atan2 is undefined at the origin")
    f0 = np.arctan2(y.value, x.value)
    fy = x.value / r2
    fx = -y.value / r2
    r4 = r2 * r2
    fyy = -2.0 * x.value * y.value / r4
    fxx = 2.0 * x.value * y.value / r4
    fxy = (y.value**2 - x.value**2) / r4
    d = x.dim
    iu, ju = _triu_pairs(d)
    grad = fy[..., None] * y.grad + fx[..., None] * x.grad
    hess = (
        fy[..., None] * y.hess
        + fx[..., None] * x.hess
        + fyy[..., None] * (y.grad[..., iu] * y.grad[..., ju])
        + fxx[..., None] * (x.grad[..., iu] * x.grad[..., ju])
        + fxy[..., None] * _outer_packed(y.grad, x.grad, d)
    )
    return Jet2(f0, grad, hess)


def jhypot(x: Jet2, y: Jet2) -> Jet2:
    """sqrt(x^2 + y^2), positive away from the origin."""
    return jpow(mul(x, x) + mul(y, y), 0.5)


_UNARY = {
    "neg": neg,
    "sin": jsin,
    "cos": jcos,
    "tanh": jtanh,
    "sigmoid": jsigmoid,
    "exp": jexp,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def jet_op(kind: str, a: Jet2, b=None) -> Jet2:
    """Dispatch by operation name.

    Binary kinds take two jets; ``scale`` and ``pow`` take a jet and a plain
    real; the remaining unary kinds take a single jet.
    """
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind == "scale":
        return scale(a, b)
    if kind == "pow":
        return jpow(a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ValueError(f"unknown jet operation {kind!r}")
