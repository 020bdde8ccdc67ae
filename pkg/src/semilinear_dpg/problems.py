"""Problem data for -div(kappa grad u + rho(u) beta) + gamma(u) = f.

Scalar functions of space take arrays of points with trailing dimension 2;
nonlinearities act elementwise on arrays of states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Field = Callable[[np.ndarray], np.ndarray]


def _zero(u):
    return np.zeros_like(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class ProblemSpec:
    f: Field
    beta: tuple = (0.0, 0.0)
    kappa: object = None  # None means the identity; else a 2x2 array or field
    rho: Callable = _zero
    drho: Callable = _zero
    d2rho: Callable = _zero
    gamma: Callable = _zero
    dgamma: Callable = _zero
    d2gamma: Callable = _zero
    g: Optional[Field] = None  # Dirichlet data, zero when None
    exact_u: Optional[Field] = None
    exact_grad: Optional[Field] = None
    name: str = "custom"

    @property
    def has_exact(self) -> bool:
        return self.exact_u is not None and self.exact_grad is not None

    def dirichlet(self, pts: np.ndarray) -> np.ndarray:
        if self.g is None:
            return np.zeros(pts.shape[:-1])
        return np.asarray(self.g(pts), dtype=float)


def manufactured(u, grad_u, laplace_u, *, beta=(0.0, 0.0), rho=None, gamma=None, name="custom"):
    """Problem with prescribed solution ``u`` and kappa = I.

    ``rho`` and ``gamma`` are triples ``(h, h', h'')``; the right-hand side is
    ``f = -laplace u - rho'(u) beta . grad u + gamma(u)``.
    """
    rho = rho or (_zero, _zero, _zero)
    gamma = gamma or (_zero, _zero, _zero)
    b = np.asarray(beta, dtype=float)

    def f(x):
        uu = u(x)
        return -laplace_u(x) - rho[1](uu) * (grad_u(x) @ b) + gamma[0](uu)

    return ProblemSpec(
        f=f,
        beta=tuple(b),
        rho=rho[0], drho=rho[1], d2rho=rho[2],
        gamma=gamma[0], dgamma=gamma[1], d2gamma=gamma[2],
        g=u, exact_u=u, exact_grad=grad_u, name=name,
    )


BETA = (1.0, 2.0)


def _ex1_u(x):
    return np.sin(2 * np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])


def _ex1_grad(x):
    sx, cx = np.sin(2 * np.pi * x[..., 0]), np.cos(2 * np.pi * x[..., 0])
    sy, cy = np.sin(np.pi * x[..., 1]), np.cos(np.pi * x[..., 1])
    return np.stack([2 * np.pi * cx * sy, np.pi * sx * cy], axis=-1)


def _ex1_f(x):
    u = _ex1_u(x)
    bgu = _ex1_grad(x) @ np.asarray(BETA)
    return 5 * np.pi**2 * u + np.sin(u) * bgu + np.arctan(u)


def example1() -> ProblemSpec:
    """Unit square, rho = cos, gamma = arctan, u = sin(2 pi x) sin(pi y)."""
    return ProblemSpec(
        f=_ex1_f,
        beta=BETA,
        rho=np.cos,
        drho=lambda u: -np.sin(u),
        d2rho=lambda u: -np.cos(u),
        gamma=np.arctan,
        dgamma=lambda u: 1.0 / (1.0 + u * u),
        d2gamma=lambda u: -2.0 * u / (1.0 + u * u) ** 2,
        g=None,
        exact_u=_ex1_u,
        exact_grad=_ex1_grad,
        name="ex1",
    )


# Example 2: polar angle measured from the ray at 3 pi / 4, so the solution
# vanishes on both edges meeting at the reentrant corner.
_PHI0 = 0.75 * np.pi


def lshape_angle(x):
    """Standard angle in [0, 2 pi); the L-shape occupies [0, 3 pi / 2]."""
    return np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)


def _ex2_u(x):
    r = np.hypot(x[..., 0], x[..., 1])
    phi = lshape_angle(x) - _PHI0
    return r ** (2.0 / 3.0) * np.cos(2.0 * phi / 3.0)


def _ex2_grad(x):
    r = np.hypot(x[..., 0], x[..., 1])
    th = lshape_angle(x)
    phi = th - _PHI0
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (2.0 / 3.0) * r ** (-1.0 / 3.0)
    ur = c * np.cos(2.0 * phi / 3.0)
    ut = -c * np.sin(2.0 * phi / 3.0)  # (1/r) du/dtheta
    return np.stack(
        [ur * np.cos(th) - ut * np.sin(th), ur * np.sin(th) + ut * np.cos(th)], axis=-1
    )


def _ex2_f(x):
    # harmonic u: f = -div(u^2 beta) + u^3
    u = _ex2_u(x)
    return -2.0 * u * (_ex2_grad(x) @ np.asarray(BETA)) + u**3


def example2() -> ProblemSpec:
    """L-shape, rho = u^2, gamma = u^3, corner singularity r^(2/3)."""
    return ProblemSpec(
        f=_ex2_f,
        beta=BETA,
        rho=lambda u: u * u,
        drho=lambda u: 2.0 * u,
        d2rho=lambda u: 2.0 * np.ones_like(u),
        gamma=lambda u: u**3,
        dgamma=lambda u: 3.0 * u * u,
        d2gamma=lambda u: 6.0 * u,
        g=_ex2_u,
        exact_u=_ex2_u,
        exact_grad=_ex2_grad,
        name="ex2",
    )


def affine(a=1.0, b=-2.0, c=0.5, beta=(0.0, 0.0)) -> ProblemSpec:
    """Linear problem (rho = gamma = 0) with exact solution a + b x + c y."""
    coef = np.array([b, c])
    return manufactured(
        lambda x: a + x @ coef,
        lambda x: np.broadcast_to(coef, x.shape).copy(),
        lambda x: np.zeros(x.shape[:-1]),
        beta=beta,
        name="affine",
    )


PROBLEMS = {"ex1": example1, "ex2": example2}
