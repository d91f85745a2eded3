"""Finite quadratic-fermion model from the continuum specification.

The two-level system becomes one fermionic mode (index 0, on-site energy
2*omega0) and each reservoir is replaced by M discrete modes.  The resulting
one-body Hamiltonian has arrowhead form: a diagonal plus couplings in the
first row and column.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model_spec import ModelSpec, ReservoirSpec, fermi_occupation

SCHEMES = ("uniform", "gauss")


class RecurrenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModeGrid:
    nodes: np.ndarray
    weights: np.ndarray
    scheme: str
    u_max: float

    def __post_init__(self):
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if np.any(self.weights <= 0) or np.any(self.nodes < 0):
            raise ValueError("grid needs nonnegative nodes and positive weights")

    @property
    def size(self) -> int:
        return len(self.nodes)

    def to_dict(self):
        return {"scheme": self.scheme, "u_max": self.u_max,
                "nodes": [float(x) for x in self.nodes],
                "weights": [float(x) for x in self.weights]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["nodes"], float), np.array(d["weights"], float),
                   d["scheme"], float(d["u_max"]))


def default_u_max(model: ModelSpec) -> float:
    return max(4 * model.omega0, max(r.mu + 10.0 / r.beta for r in model.reservoirs))


def build_mode_grid(res: ReservoirSpec, scheme: str = "uniform", M: int = 400,
                    u_max: float = None, resonance: float = None) -> ModeGrid:
    """Nodes and weights on [0, u_max].

    ``uniform`` is the midpoint rule with spacing u_max/M; ``gauss`` is
    Gauss-Legendre.  ``resonance`` (the Bohr frequency 2*omega0) must lie inside
    the band.
    """
    if int(M) != M or M < 1:
        raise ValueError("M must be a positive integer")
    M = int(M)
    if u_max is None:
        u_max = max(2 * (resonance or 0.0), res.mu + 10.0 / res.beta)
    if not (np.isfinite(u_max) and u_max > 0):
        raise ValueError("u_max must be finite and > 0")
    top = max(resonance if resonance is not None else 0.0, res.mu)
    if u_max <= top:
        raise ValueError(f"u_max={u_max} does not cover the resonance/chemical potential {top}")
    if u_max < top + 3.0 / res.beta:
        warnings.warn(f"u_max={u_max} is within three thermal widths of {top}", stacklevel=2)
    if scheme == "uniform":
        du = u_max / M
        nodes = (np.arange(M) + 0.5) * du
        weights = np.full(M, du)
    elif scheme == "gauss":
        x, w = np.polynomial.legendre.leggauss(M)
        nodes = 0.5 * u_max * (x + 1.0)
        weights = 0.5 * u_max * w
    else:
        raise ValueError(f"unknown scheme {scheme!r}; use one of {SCHEMES}")
    return ModeGrid(nodes, weights, scheme, float(u_max))


def recurrence_estimate(grid: ModeGrid) -> float:
    """Heuristic recurrence time 2 pi / (smallest level spacing)."""
    if grid.size < 2:
        warnings.warn("single-node grid has no recurrence scale", RecurrenceWarning, stacklevel=2)
        return math.inf
    return 2 * math.pi / float(np.min(np.diff(grid.nodes)))


class DiscretizedModel:
    """Arrowhead one-body model: impurity mode 0 plus reservoir modes.

    Coupling of mode j in reservoir i: g h_i(t) sqrt(m(u_j)) phi_i(u_j) sqrt(w_j).
    """

    def __init__(self, model: ModelSpec, grids):
        grids = tuple(grids)
        if len(grids) != len(model.reservoirs):
            raise ValueError("need one grid per reservoir")
        self.model = model
        self.grids = grids
        self.epsilon = model.gap
        self.energies = np.concatenate([gr.nodes for gr in grids])
        self.diagonal = np.concatenate([[self.epsilon], self.energies])
        self.owner = np.concatenate([np.full(gr.size, i) for i, gr in enumerate(grids)])
        self.slices = []
        start = 1
        for gr in grids:
            self.slices.append(slice(start, start + gr.size))
            start += gr.size
        # static radial part of the couplings, per reservoir
        self._radial = []
        for res, gr in zip(model.reservoirs, grids):
            rad = res.form_factor.radial
            self._radial.append(np.sqrt(rad.measure_density(gr.nodes)) * rad.phi(gr.nodes)
                                * np.sqrt(gr.weights))
        self.betas = np.array([r.beta for r in model.reservoirs])
        self.mus = np.array([r.mu for r in model.reservoirs])

    @property
    def N(self) -> int:
        return len(self.diagonal)

    @property
    def n_reservoirs(self) -> int:
        return len(self.grids)

    @property
    def period(self) -> float:
        return self.model.period

    @property
    def is_real(self) -> bool:
        return all(r.form_factor.envelope.real for r in self.model.reservoirs)

    def couplings(self, t: float, g: float = None) -> np.ndarray:
        """Vector of lambda_j(t) for the reservoir modes, in mode order."""
        g = self.model.g if g is None else g
        parts = [g * complex(res.form_factor.envelope(t)) * rad
                 for res, rad in zip(self.model.reservoirs, self._radial)]
        return np.concatenate(parts).astype(complex)

    def recurrence_time(self) -> float:
        return min(recurrence_estimate(gr) for gr in self.grids)

    def check_horizon(self, horizon: float) -> bool:
        """True when the horizon is below the recurrence estimate; warns otherwise."""
        T = self.recurrence_time()
        if horizon > T:
            warnings.warn(f"horizon {horizon:.4g} exceeds recurrence estimate {T:.4g}",
                          RecurrenceWarning, stacklevel=2)
            return False
        return True

    def to_dict(self) -> dict:
        m = self.model
        return {
            "omega0": m.omega0, "g": m.g, "period": m.period,
            "initial_population": m.initial_population,
            "reservoirs": [
                {"beta": r.beta, "mu": r.mu,
                 "envelope": [[c.real, c.imag] for c in r.form_factor.envelope.coefficients],
                 "envelope_real": r.form_factor.envelope.real,
                 "profile": {"kind": r.form_factor.radial.kind, "power": r.form_factor.radial.power,
                             "scale": r.form_factor.radial.scale,
                             "amplitude": r.form_factor.radial.amplitude,
                             "measure": r.form_factor.radial.measure,
                             "table_u": list(r.form_factor.radial.table_u),
                             "table_phi": list(r.form_factor.radial.table_phi)},
                 "grid": gr.to_dict()}
                for r, gr in zip(m.reservoirs, self.grids)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def discretize(model: ModelSpec, M: int = 400, u_max: float = None, scheme: str = "uniform"):
    """DiscretizedModel with the same grid shape for every reservoir."""
    u_max = default_u_max(model) if u_max is None else u_max
    grids = [build_mode_grid(r, scheme, M, u_max, resonance=model.gap) for r in model.reservoirs]
    return DiscretizedModel(model, grids)


def single_particle_hamiltonian(dm: DiscretizedModel, t: float) -> np.ndarray:
    """Dense one-body Hamiltonian h(t): h_00 = eps, h_jj = u_j, h_j0 = lambda_j."""
    lam = dm.couplings(t)
    h = np.diag(dm.diagonal.astype(complex))
    h[1:, 0] = lam
    h[0, 1:] = np.conj(lam)
    return h


@dataclass
class CovarianceState:
    """One-body correlations gamma_pq = <a_p^dag a_q> at ``time``."""

    gamma: np.ndarray
    time: float = 0.0

    @property
    def N(self):
        return self.gamma.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.gamma).real)

    def spectrum(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.gamma)


def thermal_covariance(dm: DiscretizedModel, system_state=None) -> CovarianceState:
    """Product initial state: diagonal system state, Fermi seas in the reservoirs.

    ``system_state`` is the excited-state population or a 2x2 diagonal density
    matrix (excited state first).  Defaults to the model's initial population.
    """
    if system_state is None:
        p = dm.model.initial_population
    elif np.ndim(system_state) == 0:
        p = float(system_state)
    else:
        rho = np.asarray(system_state)
        if rho.shape != (2, 2) or abs(rho[0, 1]) > 0 or abs(rho[1, 0]) > 0:
            raise ValueError("only diagonal system states are supported")
        p = float(rho[0, 0].real)
    if not 0 <= p <= 1:
        raise ValueError("population must lie in [0, 1]")
    occ = [np.atleast_1d(fermi_occupation(r.beta, r.mu, gr.nodes))
           for r, gr in zip(dm.model.reservoirs, dm.grids)]
    diag = np.concatenate([[p]] + occ)
    return CovarianceState(np.diag(diag).astype(complex), 0.0)
