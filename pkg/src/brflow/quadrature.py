"""Quadrature rules on reference simplices.

Rules are built as conical (Stroud) products of Gauss--Jacobi rules, so a
rule of requested degree integrates every polynomial of that total degree
exactly on the reference simplex.  Points are returned in barycentric
coordinates and weights are normalized to sum to one: an integral over a
physical simplex T is ``|T| * sum(w_q * f(x_q))``.
"""

from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi


def _gauss_jacobi_01(n: int, alpha: float):
    """Nodes/weights for int_0^1 (1-t)^alpha f(t) dt."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int):
    """Return (bary, weights) for the reference dim-simplex.

    bary has shape (nq, dim+1); weights sum to 1.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    n = degree // 2 + 1
    axes = [_gauss_jacobi_01(n, float(dim - 1 - k)) for k in range(dim)]
    # Collapsed coordinates: x_k = t_k * prod_{m<k}(1 - t_m).
    grids = np.meshgrid(*[t for t, _ in axes], indexing="ij")
    wgrids = np.meshgrid(*[w for _, w in axes], indexing="ij")
    x = np.empty((dim,) + grids[0].shape)
    rem = np.ones_like(grids[0])
    for k in range(dim):
        x[k] = grids[k] * rem
        rem = rem * (1.0 - grids[k])
    w = np.ones_like(grids[0])
    for wg in wgrids:
        w = w * wg
    pts = x.reshape(dim, -1).T
    w = w.reshape(-1)
    # Jacobi weights already carry the (1-t)^alpha Jacobian factors; the
    # product integrates over the unit simplex of volume 1/dim!.
    w = w * float(factorial(dim))
    bary = np.column_stack([1.0 - pts.sum(axis=1), pts])
    return bary, w


def physical_points(vertices: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Map barycentric points to physical space.

    vertices: (..., dim+1, dim) simplex vertex coordinates.
    bary: (nq, dim+1).
    Returns (..., nq, dim).
    """
    return np.einsum("qi,...id->...qd", bary, vertices)


def integrate_monomial_reference(dim: int, exponents) -> float:
    """Exact integral of a barycentric monomial over a unit-volume simplex.

    int_T lam^a dx = d! * |T| * prod(a_i!) / (sum(a_i) + d)!  with |T| = 1.
    """
    a = list(exponents)
    num = factorial(dim)
    for ai in a:
        num *= factorial(ai)
    return num / factorial(sum(a) + dim)
