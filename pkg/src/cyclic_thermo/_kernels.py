"""Compiled inner loops for the arrowhead one-body propagator."""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _apply_rows(X, diag, lam, c, nterms, nsub):
    """Replace each row x of X by exp(c G)^nsub x, G the arrowhead generator.

    G has diagonal ``diag``, first row (diag[0], lam) and first column
    (diag[0], conj(lam)).  Each exponential is a Taylor series of ``nterms``.
    Returns the largest change of a squared row norm (unitarity defect when
    c is imaginary).
    """
    n = X.shape[1]
    term = np.empty(n, dtype=np.complex128)
    new = np.empty(n, dtype=np.complex128)
    acc = np.empty(n, dtype=np.complex128)
    defect = 0.0
    for r in range(X.shape[0]):
        norm0 = 0.0
        for p in range(n):
            norm0 += X[r, p].real ** 2 + X[r, p].imag ** 2
        for _ in range(nsub):
            for p in range(n):
                acc[p] = X[r, p]
                term[p] = X[r, p]
            for k in range(1, nterms + 1):
                ck = c / k
                s = diag[0] * term[0]
                for j in range(1, n):
                    s += lam[j - 1] * term[j]
                t0 = term[0]
                new[0] = ck * s
                for j in range(1, n):
                    new[j] = ck * (diag[j] * term[j] + np.conj(lam[j - 1]) * t0)
                for p in range(n):
                    term[p] = new[p]
                    acc[p] += new[p]
            for p in range(n):
                X[r, p] = acc[p]
        norm1 = 0.0
        for p in range(n):
            norm1 += X[r, p].real ** 2 + X[r, p].imag ** 2
        d = abs(norm1 - norm0)
        if d > defect:
            defect = d
    return defect


def taylor_plan(diag, lam, dt, tol=1e-17, max_norm=0.5):
    """Substep count and series length for exp(i dt G) to relative accuracy tol."""
    bound = abs(dt) * (float(np.max(np.abs(diag))) + float(np.linalg.norm(lam)))
    nsub = max(1, int(math.ceil(bound / max_norm)))
    r = bound / nsub
    nterms, term = 0, 1.0
    while term > tol and nterms < 60:
        nterms += 1
        term *= r / nterms
    return nterms, nsub


def apply_exp_rows(X, diag, lam, dt, nsub_scale=1):
    """In place: rows x of X -> exp(i dt G) x.  Returns the unitarity defect."""
    nterms, nsub = taylor_plan(diag, lam, dt)
    nsub *= nsub_scale
    c = 1j * dt / nsub
    return _apply_rows(X, np.ascontiguousarray(diag, dtype=np.complex128),
                       np.ascontiguousarray(lam, dtype=np.complex128), c,
                       max(nterms, 2), nsub)
