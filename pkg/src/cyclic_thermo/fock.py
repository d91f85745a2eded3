"""Exact many-body reference dynamics for small models.

The Hamiltonian is assembled from the spin model itself: Pauli matrices for
the two-level system tensored with Jordan-Wigner fermions for the reservoir
modes, coupled through sigma_- b^dag(f) + sigma_+ b(f).  No fermionization of
the spin is used, so agreement with the covariance path is a genuine check.
The total number (spin excitation plus bath fermions) is conserved, which is
used only to split the propagation into independent blocks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .discretization import DiscretizedModel
from .model_spec import fermi_occupation

MAX_MODES = 14

# spin basis (up, down)
_S3 = np.diag([1.0, -1.0])
_SPLUS = np.array([[0.0, 1.0], [0.0, 0.0]])
_SMINUS = _SPLUS.T
# single fermion mode basis (empty, occupied)
_A = np.array([[0.0, 1.0], [0.0, 0.0]])
_Z = np.diag([1.0, -1.0])


def _bath_annihilators(n):
    ops = []
    for j in range(n):
        factors = [_Z] * j + [_A] + [np.eye(2)] * (n - j - 1)
        op = sp.csr_matrix(np.ones((1, 1)))
        for f in factors:
            op = sp.kron(op, sp.csr_matrix(f), format="csr")
        ops.append(op)
    return ops


class FockSpace:
    """Operators of the spin-plus-bath model for a DiscretizedModel."""

    def __init__(self, dm: DiscretizedModel):
        if dm.N > MAX_MODES:
            raise ValueError(f"Fock oracle limited to N <= {MAX_MODES} modes (got {dm.N})")
        self.dm = dm
        nb = dm.N - 1
        self.nb = nb
        self.dim = 2 << nb
        idx = np.arange(self.dim)
        bath = idx & ((1 << nb) - 1)
        self.spin_up = (idx >> nb) == 0
        # bath mode j occupies bit (nb - 1 - j) because of the kron ordering
        self.occ = np.array([(bath >> (nb - 1 - j)) & 1 for j in range(nb)], dtype=float)
        self.number = self.spin_up.astype(int) + self.occ.sum(axis=0).astype(int)
        eye_b = sp.identity(1 << nb, format="csr")
        b = _bath_annihilators(nb)
        self.H0 = (dm.model.omega0 * sp.kron(sp.csr_matrix(_S3), eye_b)).tocsr()
        for j in range(nb):
            self.H0 = self.H0 + dm.energies[j] * sp.kron(sp.identity(2), b[j].T @ b[j])
        # sigma_- (x) b_j^dag for each bath mode
        self.gain = [sp.kron(sp.csr_matrix(_SMINUS), b[j].T, format="csr") for j in range(nb)]
        self.sectors = [np.flatnonzero(self.number == k) for k in range(nb + 2)]
        self.sectors = [s for s in self.sectors if s.size]
        self._blocks = []
        for s in self.sectors:
            H0b = self.H0[s][:, s].toarray()
            Gb = [op[s][:, s].toarray() for op in self.gain]
            self._blocks.append((H0b, Gb))

    def hamiltonian(self, t):
        lam = self.dm.couplings(t)
        H = self.H0.astype(complex)
        for j, op in enumerate(self.gain):
            H = H + lam[j] * op + np.conj(lam[j]) * op.T
        return H.tocsr()

    def block_hamiltonians(self, t):
        lam = self.dm.couplings(t)
        out = []
        for H0b, Gb in self._blocks:
            H = H0b.astype(complex)
            for j, A in enumerate(Gb):
                if lam[j] != 0:
                    H = H + lam[j] * A + np.conj(lam[j]) * A.T
            out.append(H)
        return out

    def reference_log_diagonal(self):
        """log of the diagonal reference state (trace state times Fermi seas)."""
        dm = self.dm
        out = np.full(self.dim, math.log(0.5))
        for j in range(self.nb):
            i = dm.owner[j]
            r = dm.model.reservoirs[i]
            rho = fermi_occupation(r.beta, r.mu, dm.energies[j])
            out += self.occ[j] * math.log(rho) + (1 - self.occ[j]) * math.log1p(-rho)
        return out


@dataclass
class FockState:
    """Block-diagonal density matrix (one block per total-number sector)."""

    space: FockSpace
    blocks: list
    time: float = 0.0

    def full(self):
        rho = np.zeros((self.space.dim, self.space.dim), dtype=complex)
        for s, b in zip(self.space.sectors, self.blocks):
            rho[np.ix_(s, s)] = b
        return rho

    def diagonal(self):
        d = np.zeros(self.space.dim)
        for s, b in zip(self.space.sectors, self.blocks):
            d[s] = np.real(np.diagonal(b))
        return d

    def trace(self):
        return float(sum(np.trace(b).real for b in self.blocks))


def thermal_fock_state(dm: DiscretizedModel, population=None, space: FockSpace = None) -> FockState:
    space = FockSpace(dm) if space is None else space
    p = dm.model.initial_population if population is None else population
    w = np.where(space.spin_up, p, 1.0 - p)
    for j in range(space.nb):
        r = dm.model.reservoirs[dm.owner[j]]
        rho = fermi_occupation(r.beta, r.mu, dm.energies[j])
        w = w * np.where(space.occ[j] > 0, rho, 1.0 - rho)
    blocks = [np.diag(w[s]).astype(complex) for s in space.sectors]
    return FockState(space, blocks, 0.0)


def _expm_herm(H, dt):
    e, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * e * dt)) @ V.conj().T


def propagate_fock_oracle(dm: DiscretizedModel, rho: FockState, t0: float, t1: float,
                          dt: float) -> FockState:
    """rho(t1) from midpoint exponentials of the many-body Hamiltonian."""
    if dm.N > MAX_MODES:
        raise ValueError(f"Fock oracle limited to N <= {MAX_MODES} modes")
    nsteps = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / nsteps
    blocks = [b.copy() for b in rho.blocks]
    for k in range(nsteps):
        Hs = rho.space.block_hamiltonians(t0 + (k + 0.5) * h)
        for n, H in enumerate(Hs):
            U = _expm_herm(H, h)
            blocks[n] = U @ blocks[n] @ U.conj().T
    return FockState(rho.space, blocks, t1)


def fock_observables(dm: DiscretizedModel, rho: FockState, ref_log=None) -> dict:
    """Reservoir energies/numbers, spin population and relative entropy to the reference."""
    space = rho.space
    d = rho.diagonal()
    E = np.zeros(dm.n_reservoirs)
    N = np.zeros(dm.n_reservoirs)
    for j in range(space.nb):
        i = dm.owner[j]
        nj = float(d @ space.occ[j])
        E[i] += dm.energies[j] * nj
        N[i] += nj
    ref_log = space.reference_log_diagonal() if ref_log is None else ref_log
    neg_s = 0.0
    for b in rho.blocks:
        ev = np.linalg.eigvalsh(0.5 * (b + b.conj().T))
        ev = ev[ev > 1e-300]
        neg_s += float(np.sum(ev * np.log(ev)))
    ent = neg_s - float(d @ ref_log)
    return {"energies": E, "numbers": N, "population": float(d @ space.spin_up),
            "entropy": ent, "trace": rho.trace()}


def fock_trajectory(dm: DiscretizedModel, cycles: int, steps_per_cycle: int = 64,
                    samples_per_cycle: int = 8):
    """Observables at every sample time nτ + s τ/S, using the same midpoint steps
    as :func:`cyclic_thermo.dynamics.simulate`."""
    space = FockSpace(dm)
    rho = thermal_fock_state(dm, space=space)
    tau = dm.period
    dt = tau / steps_per_cycle
    stride = steps_per_cycle // samples_per_cycle
    ref_log = space.reference_log_diagonal()
    times, rows = [], []
    total = cycles * steps_per_cycle
    blocks = rho.blocks
    for k in range(total + 1):
        if k % stride == 0:
            st = FockState(space, blocks, k * dt)
            times.append((k // steps_per_cycle) * tau + (k % steps_per_cycle) * dt)
            rows.append(fock_observables(dm, st, ref_log))
        if k == total:
            break
        phase = (k % steps_per_cycle + 0.5) * dt
        Us = [_expm_herm(H, dt) for H in space.block_hamiltonians(phase)]
        blocks = [U @ b @ U.conj().T for U, b in zip(Us, blocks)]
    out = {"times": np.array(times)}
    for key in rows[0]:
        out[key] = np.array([r[key] for r in rows])
    return out
