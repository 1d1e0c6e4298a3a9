"""Pure NumPy implementations of the hot assembly kernels.

These are the fallback for the compiled extension; both expose the same
functions and must produce bitwise-comparable results (up to floating point
reassociation, which the vectorized forms here avoid by using the same
operation order per entry).
"""

import numpy as np

__all__ = ["bernoulli", "p1_local_stiffness", "eafe_local_matrices"]


def bernoulli(s):
    """Bernoulli function B(s) = s/(e^s - 1), B(0) = 1.

    Stable for |s| up to 1e12: series near 0, expm1 in the moderate range,
    s*exp(-s) for large positive s (monotone decay to 0), and -s asymptote
    for large negative s is delivered by the expm1 branch itself.
    """
    s = np.asarray(s, dtype=float)
    if np.any(np.isnan(s)):
        raise ValueError("NaN input to Bernoulli function")
    out = np.empty_like(s)
    small = np.abs(s) < 1e-4
    big = s > 700.0
    mid = ~(small | big)
    ss = s[small]
    # B(s) = 1 - s/2 + s^2/12 - s^4/720 + O(s^6)
    out[small] = 1.0 - ss / 2.0 + ss * ss / 12.0 - ss ** 4 / 720.0
    out[mid] = s[mid] / np.expm1(s[mid])
    with np.errstate(under="ignore"):
        out[big] = s[big] * np.exp(-s[big])
    return out


def p1_local_stiffness(grads, vols):
    """Per-cell P1 stiffness matrices a_ij = |T| grad(lam_i).grad(lam_j).

    grads: (nc, d+1, d); vols: (nc,).  Returns (nc, d+1, d+1).
    """
    return vols[:, None, None] * np.einsum("cid,cjd->cij", grads, grads)


def eafe_local_matrices(cells, vertices, grads, vols, conv, eps):
    """Per-cell EAFE convection-diffusion matrices.

    For the edge between local vertices (a, b) of a cell, oriented from the
    lower to the higher global index, the off-diagonal entries are
    eps * a_ab * B(+/- eps^-1 b_T . tau_E) and the diagonal completes each
    test row to zero sum, so the form annihilates constant trial functions.

    cells: (nc, d+1) int; vertices: (nv, d); grads: (nc, d+1, d);
    vols: (nc,); conv: (nc, d) cellwise constant field; eps: float > 0.
    Returns (nc, d+1, d+1) local matrices M with M[c, test, trial].
    """
    nc, nloc = cells.shape
    a_loc = p1_local_stiffness(grads, vols)
    M = np.zeros((nc, nloc, nloc))
    for a in range(nloc):
        for b in range(a + 1, nloc):
            gi = cells[:, a]
            gj = cells[:, b]
            swap = gi > gj
            lo = np.where(swap, gj, gi)
            hi = np.where(swap, gi, gj)
            tau = vertices[hi] - vertices[lo]
            s = np.einsum("cd,cd->c", conv, tau) / eps
            w_fwd = eps * a_loc[:, a, b] * bernoulli(s)
            w_bwd = eps * a_loc[:, a, b] * bernoulli(-s)
            # Entry (test=lo-side, trial=hi-side) uses B(+s).
            lo_is_a = ~swap
            M[lo_is_a, a, b] = w_fwd[lo_is_a]
            M[lo_is_a, b, a] = w_bwd[lo_is_a]
            M[swap, b, a] = w_fwd[swap]
            M[swap, a, b] = w_bwd[swap]
    for t in range(nloc):
        M[:, t, t] = 0.0
        M[:, t, t] = -M[:, t, :].sum(axis=1)
    return M
