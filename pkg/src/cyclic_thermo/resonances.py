"""Second-order Floquet resonances of the coupled system.

Two conventions are provided.  The ``C`` (C-Liouvillean) convention keeps the
reference vector in the kernel; the ``standard`` convention is the Floquet
Liouvillean whose degenerate block mixes the two populations with
detailed-balance factors.  Both are closed-form O(g^2) expressions built from
golden-rule weights and principal-value integrals of the Fourier weights.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .model_spec import ModelSpec, fourier_weight

CONVENTIONS = ("C", "standard")


class QuadratureError(RuntimeError):
    def __init__(self, msg, achieved):
        self.achieved = achieved
        super().__init__(f"{msg} (achieved error estimate {achieved:.3e})")


class UnsupportedConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class PVIntegrandSpec:
    """PV integral of weight(u) / (pole - u) over [lower, upper]."""

    weight: Callable
    pole: float
    lower: float = -np.inf
    upper: float = np.inf
    tol: float = 1e-9
    window: float = 1.0
    breakpoints: tuple = ()

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be > 0")
        if not self.lower < self.upper:
            raise ValueError("empty integration domain")


def _quad(f, a, b, tol, points=()):
    pts = [p for p in points if a < p < b] if np.isfinite(a) and np.isfinite(b) else None
    kw = dict(epsabs=tol, epsrel=1e-13, limit=400)
    # convergence trouble surfaces through the error estimate instead
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if pts:
            val, err = integrate.quad(f, a, b, points=pts, **kw)
        else:
            val, err = integrate.quad(f, a, b, **kw)
    return val, err


def pv_integral(spec: PVIntegrandSpec) -> float:
    """Principal value of the integral of W(u)/(E - u) by singularity subtraction.

    On a window [E - d, E + d] the regular integrand (W(u) - W(E))/(E - u) is
    integrated directly; the subtracted constant contributes W(E) log((E-a)/(b-E)),
    which vanishes for a symmetric window.  The rest is an ordinary integral.
    """
    W, E = spec.weight, float(spec.pole)
    a, b = spec.lower, spec.upper
    parts = []
    if E <= a or E >= b:
        parts.append(_quad(lambda u: W(u) / (E - u), a, b, spec.tol / 2, spec.breakpoints))
    else:
        d = min(spec.window, E - a, b - E)
        lo, hi = E - d, E + d
        WE = float(W(E))

        def regular(u):
            return (W(u) - WE) / (E - u)

        # split at the pole so it is never a quadrature node
        parts.append(_quad(regular, lo, E, spec.tol / 8, spec.breakpoints))
        parts.append(_quad(regular, E, hi, spec.tol / 8, spec.breakpoints))
        # the window is symmetric, so the log correction W(E) log((E-lo)/(hi-E)) is zero
        if a < lo:
            parts.append(_quad(lambda u: W(u) / (E - u), a, lo, spec.tol / 8, spec.breakpoints))
        if hi < b:
            parts.append(_quad(lambda u: W(u) / (E - u), hi, b, spec.tol / 8, spec.breakpoints))
    value = math.fsum(p[0] for p in parts)
    err = math.fsum(p[1] for p in parts)
    if not np.isfinite(value) or err > spec.tol:
        raise QuadratureError("principal-value quadrature did not converge", err)
    return value


# ---------------------------------------------------------------------------

def _poles(model: ModelSpec, k: int):
    """(reservoir, harmonic, pole) triples in a fixed order.

    The pole for harmonic m is the unperturbed quasi-energy minus (k - m) omega
    measured from k omega, i.e. 2 omega0 + m omega, so that the shift and the
    width are the same in every Floquet zone.
    """
    for i, res in enumerate(model.reservoirs):
        env = res.form_factor.envelope
        for m in env.harmonics:
            if env.coefficient(m) != 0:
                yield i, m, model.gap + m * env.omega


def _weight_fn(res, m):
    ff = res.form_factor
    return lambda u: fourier_weight(ff, res.beta, res.mu, m, u)


def lamb_shift(model: ModelSpec, k: int = 0, tol: float = 1e-9) -> float:
    """Second-order level shift: sum of PV integrals of the Fourier weights."""
    terms = []
    for i, m, pole in _poles(model, k):
        res = model.reservoirs[i]
        L = res.form_factor.radial.support
        spec = PVIntegrandSpec(_weight_fn(res, m), pole, -L, L, tol=tol, breakpoints=(0.0,))
        terms.append(pv_integral(spec))
    return math.fsum(terms)


def fgr_width(model: ModelSpec, k: int = 0) -> float:
    """Golden-rule width: pi times the Fourier weights at the poles."""
    terms = [fourier_weight(model.reservoirs[i].form_factor, model.reservoirs[i].beta,
                            model.reservoirs[i].mu, m, pole)
             for i, m, pole in _poles(model, k)]
    return math.pi * math.fsum(terms)


def second_order_coefficients(model: ModelSpec, k: int = 0, convention: str = "C",
                              block: str = "detailed_balance"):
    """Coefficients c_j with E_j(g) = E_j(0) + g^2 c_j.  Independent of g."""
    lam, gam = lamb_shift(model, k), fgr_width(model, k)
    if convention == "C":
        a0, a1 = 0j, -2j * gam
    elif convention == "standard":
        a0, a1 = _standard_block_eigs(model, k, block)
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return np.array([a0, a1, -lam - 1j * gam, lam - 1j * gam], dtype=complex), lam, gam


def unperturbed_resonances(model: ModelSpec, k: int = 0) -> np.ndarray:
    kw = k * model.omega
    return np.array([kw, kw, kw - model.gap, kw + model.gap], dtype=complex)


def c_liouvillean_resonances(model: ModelSpec, g=None, k: int = 0) -> np.ndarray:
    """E_0..E_3 in the C convention: k w, k w - 2i g^2 G, k w -/+ (2 w0 + g^2 L) - i g^2 G."""
    g = model.g if g is None else g
    c, _, _ = second_order_coefficients(model, k, "C")
    out = unperturbed_resonances(model, k) + g * g * c
    out[0] = k * model.omega  # exact, independent of rounding
    return out


def _check_standard(model: ModelSpec):
    res = model.reservoirs
    if len(res) > 2:
        raise UnsupportedConfiguration("standard convention supports at most two reservoirs")
    if len(res) == 2 and res[0].mu != res[1].mu:
        raise UnsupportedConfiguration("standard convention needs equal chemical potentials")


def standard_block(model: ModelSpec, k: int = 0, block: str = "detailed_balance") -> np.ndarray:
    """Summed 2x2 population block (without the -i pi prefactor).

    ``detailed_balance`` uses the symmetric form c (1, -e^{-b/2}; -e^{-b/2}, e^{-b})
    per term, b = beta (x - mu); ``literal`` uses c (1, -e^{-b/2}; -e^{b/2}, 1).
    Both have a vanishing determinant term by term.
    """
    _check_standard(model)
    if block not in ("detailed_balance", "literal"):
        raise ValueError(f"unknown block form {block!r}")
    M = np.zeros((2, 2))
    for i, m, pole in _poles(model, k):
        res = model.reservoirs[i]
        c = fourier_weight(res.form_factor, res.beta, res.mu, m, pole)
        if c == 0:
            continue
        b = res.beta * (pole - res.mu)
        if block == "detailed_balance":
            e = math.exp(-0.5 * b)
            M += c * np.array([[1.0, -e], [-e, e * e]])
        else:
            M += c * np.array([[1.0, -math.exp(-0.5 * b)], [-math.exp(0.5 * b), 1.0]])
    return M


def _eig2(M):
    """Eigenvalues of a real 2x2 matrix, smaller-magnitude root first, cancellation free."""
    tr = M[0, 0] + M[1, 1]
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    disc = complex(0.25 * tr * tr - det) ** 0.5
    big = 0.5 * tr + (disc if tr >= 0 else -disc)
    if big == 0:
        return 0j, 0j
    small = det / big
    return complex(small), complex(big)


def _standard_block_eigs(model, k, block):
    s, b = _eig2(standard_block(model, k, block))
    return -1j * math.pi * s, -1j * math.pi * b


def standard_floquet_resonances(model: ModelSpec, g=None, k: int = 0,
                                block: str = "detailed_balance") -> np.ndarray:
    """Resonances of the standard Floquet Liouvillean (at most two reservoirs, equal mu)."""
    _check_standard(model)
    g = model.g if g is None else g
    c, _, _ = second_order_coefficients(model, k, "standard", block)
    return unperturbed_resonances(model, k) + g * g * c


# ---------------------------------------------------------------------------

@dataclass
class ResonanceTable:
    convention: str
    g: float
    omega: float
    entries: dict = field(default_factory=dict)  # (k, j) -> complex
    lamb_shift: dict = field(default_factory=dict)  # k -> float
    width: dict = field(default_factory=dict)  # k -> float

    @property
    def k_range(self):
        return sorted(self.lamb_shift)

    def rows(self):
        for (k, j) in sorted(self.entries):
            E = self.entries[(k, j)]
            yield {"convention": self.convention, "k": k, "j": j, "re_E": E.real, "im_E": E.imag,
                   "lamb_shift": self.lamb_shift[k], "width": self.width[k], "g": self.g}

    def to_csv(self, path):
        cols = ["convention", "k", "j", "re_E", "im_E", "lamb_shift", "width", "g"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\r\n")
            w.writeheader()
            for r in self.rows():
                w.writerow({c: (repr(v) if isinstance(v, float) else v) for c, v in r.items()})

    def to_json(self, path=None):
        payload = {"convention": self.convention, "g": self.g, "omega": self.omega,
                   "rows": list(self.rows())}
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def resonance_table(model: ModelSpec, ks=(0,), convention: str = "C", g=None,
                    block: str = "detailed_balance") -> ResonanceTable:
    g = model.g if g is None else g
    tab = ResonanceTable(convention, float(g), model.omega)
    for k in ks:
        if convention == "C":
            E = c_liouvillean_resonances(model, g, k)
        elif convention == "standard":
            E = standard_floquet_resonances(model, g, k, block)
        else:
            raise ValueError(f"unknown convention {convention!r}")
        for j in range(4):
            tab.entries[(k, j)] = complex(E[j])
        tab.lamb_shift[k] = lamb_shift(model, k)
        tab.width[k] = fgr_width(model, k)
    return tab


def spectral_gap(table: ResonanceTable, modes=(1, 2, 3)) -> float:
    """Smallest decay rate -Im E_j^(0) over the selected modes.

    The default follows the slowest of the decaying resonances.  Pass
    ``modes=(1,)`` for the population mode, which is the only one excited by
    states that are diagonal in the system basis.
    """
    if not table.entries:
        raise ValueError("empty resonance table")
    k0 = 0 if 0 in table.lamb_shift else table.k_range[0]
    return min(-table.entries[(k0, j)].imag for j in modes)
