"""Time evolution of the one-body correlation matrix and thermodynamic observables.

With gamma_pq = <a_p^dag a_q> and one-body Hamiltonian h(t), the state evolves
as gamma(t) = W gamma(0) W^dag where W solves dW/dt = i conj(h) W.  W is
accumulated from midpoint exponentials; a full period W_tau is built once and
reused, so each further cycle costs two matrix products.
"""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._kernels import apply_exp_rows
from .discretization import CovarianceState, DiscretizedModel, thermal_covariance

UNITARITY_TOL = 1e-10
SNAPSHOT_MAGIC = b"CYTHSNAP"
SNAPSHOT_VERSION = 1


class PropagationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# propagation

class OneBodyPropagator:
    """Midpoint-exponential stepping of W (stored transposed, rows = columns of W)."""

    def __init__(self, dm: DiscretizedModel, dt: float, max_retries: int = 4):
        self.dm = dm
        self.dt = float(dt)
        self.max_retries = max_retries
        self.max_defect = 0.0

    def step(self, X, t):
        """Advance X = W^T by one step starting at time t."""
        lam = self.dm.couplings(t + 0.5 * self.dt)
        scale = 1
        for _ in range(self.max_retries + 1):
            trial = X.copy()
            defect = apply_exp_rows(trial, self.dm.diagonal, lam, self.dt, scale)
            if defect <= UNITARITY_TOL:
                X[...] = trial
                self.max_defect = max(self.max_defect, defect)
                return defect
            scale *= 2  # halve the internal step of the frozen exponential
        raise PropagationError(f"unitarity defect {defect:.2e} after {self.max_retries} retries")

    def advance(self, X, t0, nsteps):
        for k in range(nsteps):
            self.step(X, t0 + k * self.dt)
        return X


def period_propagator(dm: DiscretizedModel, steps_per_cycle: int = 512):
    """W over one period (and the propagator diagnostics)."""
    prop = OneBodyPropagator(dm, dm.period / steps_per_cycle)
    X = np.eye(dm.N, dtype=complex)
    prop.advance(X, 0.0, steps_per_cycle)
    return np.ascontiguousarray(X.T), prop.max_defect


def propagate_covariance(dm: DiscretizedModel, state: CovarianceState, t0: float, t1: float,
                         dt: float) -> CovarianceState:
    """gamma(t1) = W gamma(t0) W^dag with W built from midpoint exponentials."""
    if not dt > 0 or not t1 > t0:
        raise ValueError("need dt > 0 and t1 > t0")
    nsteps = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
    prop = OneBodyPropagator(dm, (t1 - t0) / nsteps)
    X = np.eye(dm.N, dtype=complex)
    prop.advance(X, t0, nsteps)
    W = X.T
    G = W @ state.gamma @ W.conj().T
    return CovarianceState(0.5 * (G + G.conj().T), t1)


# ---------------------------------------------------------------------------
# observables of a single correlation matrix

def reservoir_energies(dm: DiscretizedModel, gamma):
    d = np.real(np.diagonal(gamma))
    E = np.array([math.fsum(dm.diagonal[s] * d[s]) for s in dm.slices])
    N = np.array([math.fsum(d[s]) for s in dm.slices])
    return E, N


def heat_fluxes(dm: DiscretizedModel, gamma, t):
    """Energy flux out of each reservoir, -dE_i/dt, and its mu-shifted version.

    -dE_i/dt = 2 sum_j u_j Im(h_0j gamma_0j) from the one-body commutator.
    """
    lam = dm.couplings(t)
    im = np.imag(np.conj(lam) * gamma[0, 1:])
    flux = np.empty(dm.n_reservoirs)
    flux_eff = np.empty(dm.n_reservoirs)
    for i, s in enumerate(dm.slices):
        sl = slice(s.start - 1, s.stop - 1)
        flux[i] = 2.0 * math.fsum(dm.energies[sl] * im[sl])
        flux_eff[i] = 2.0 * math.fsum((dm.energies[sl] - dm.mus[i]) * im[sl])
    return flux, flux_eff


def initial_entropy(population: float) -> float:
    """Relative entropy of diag(p, 1-p) with respect to the trace state."""
    out = math.log(2.0)
    for q in (population, 1.0 - population):
        if q > 0:
            out += q * math.log(q)
    return out


def _ad(d, lam, X):
    """[G, X] for the arrowhead generator G (diag d, G_0j = lam_j)."""
    GX = d[:, None] * X
    GX[0] += lam @ X[1:]
    GX[1:] += np.conj(lam)[:, None] * X[0][None, :]
    XG = X * d[None, :]
    XG[:, 0] += X[:, 1:] @ np.conj(lam)
    XG[:, 1:] += X[:, 0][:, None] * lam[None, :]
    return GX - XG


def entropy_stencil(dm: DiscretizedModel, t: float, delta: float = None):
    """Operator D with Re sum(D * gamma^T) = five-point central difference of Ent.

    The stencil values Ent(+-delta), Ent(+-2 delta) are taken along the flow of
    the frozen Hamiltonian h(t); the frozen-flow entropy is exp(-iG s) A exp(iG s)
    paired with gamma, expanded in nested commutators, so no large numbers are
    subtracted.  The stencil error is O(delta^4).
    """
    d = dm.diagonal.astype(complex)
    lam = dm.couplings(t)
    gnorm = float(np.max(np.abs(dm.diagonal)) + np.linalg.norm(lam))
    if delta is None:
        delta = 0.01 / gnorm
    a = np.zeros(dm.N)
    for i, s in enumerate(dm.slices):
        a[s] = dm.betas[i] * (dm.diagonal[s] - dm.mus[i])
    X = np.diag(a).astype(complex)
    D = np.zeros_like(X)
    fact = 1.0
    for k in range(1, 40):
        X = _ad(d, lam, X)
        fact *= k
        if k % 2 == 0:
            continue
        coef = 2 * (-1j) ** k * delta ** (k - 1) * (8 - 2 ** k) / (12 * fact)
        term = coef * X
        D += term
        if k > 1 and np.max(np.abs(term)) <= 1e-18 * np.max(np.abs(D)):
            break
    return D


# ---------------------------------------------------------------------------
# trajectories

_PER_RES = ("energies", "numbers", "flux", "flux_eff")
_SCALAR = ("population", "entropy", "ep", "ep_fd", "trace")


@dataclass
class Trajectory:
    """Sampled observables; every cycle boundary n*tau is a sample."""

    times: np.ndarray
    cycle: np.ndarray
    phase: np.ndarray
    boundary: np.ndarray
    energies: np.ndarray
    numbers: np.ndarray
    flux: np.ndarray
    flux_eff: np.ndarray
    population: np.ndarray
    entropy: np.ndarray
    ep: np.ndarray
    ep_fd: np.ndarray
    trace: np.ndarray
    period: float
    betas: np.ndarray
    mus: np.ndarray
    n_cycles: int
    samples_per_cycle: int
    meta: dict = field(default_factory=dict)
    final_state: CovarianceState = None

    @property
    def n_reservoirs(self):
        return self.energies.shape[1]

    def boundary_values(self, name):
        """Observable at the cycle boundaries 0, tau, ..., n_cycles tau."""
        return getattr(self, name)[self.boundary]

    def cycle_samples(self, n):
        """Indices of the in-cycle samples of cycle n, plus the closing boundary."""
        idx = np.flatnonzero(self.cycle == n)
        end = np.flatnonzero(self.boundary & (self.cycle == n + 1))
        return np.concatenate([idx, end])

    def detailed_cycles(self):
        full = self.samples_per_cycle
        return [n for n in range(self.n_cycles) if np.count_nonzero(self.cycle == n) == full]

    def balance_residual(self) -> float:
        """max |dEnt/dt (finite differences) - Ep| relative to max |Ep|."""
        scale = float(np.max(np.abs(self.ep))) if len(self.ep) else 0.0
        err = float(np.max(np.abs(self.ep_fd - self.ep))) if len(self.ep) else 0.0
        if scale == 0.0:
            return err
        return err / scale

    def columns(self):
        cols = ["time", "cycle", "phase", "boundary", "population"]
        for name in _PER_RES:
            cols += [f"{name}_{i + 1}" for i in range(self.n_reservoirs)]
        return cols + ["entropy", "ep", "ep_fd", "trace"]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.columns()) + "\r\n")
            for k in range(len(self.times)):
                row = [repr(float(self.times[k])), str(int(self.cycle[k])), str(int(self.phase[k])),
                       "1" if self.boundary[k] else "0", repr(float(self.population[k]))]
                for name in _PER_RES:
                    row += [repr(float(x)) for x in getattr(self, name)[k]]
                row += [repr(float(getattr(self, n)[k])) for n in ("entropy", "ep", "ep_fd", "trace")]
                fh.write(",".join(row) + "\r\n")


def _interp(traj, values, t):
    if t < traj.times[0] - 1e-12 or t > traj.times[-1] + 1e-12:
        raise ValueError(f"time {t} outside the sampled range")
    return float(np.interp(t, traj.times, values))


def heat_flux(traj: Trajectory, i: int, t: float, effective: bool = False) -> float:
    """Phi_i(t) (interpolated linearly between samples)."""
    if not 0 <= i < traj.n_reservoirs:
        raise IndexError(f"unknown reservoir index {i}")
    arr = traj.flux_eff if effective else traj.flux
    return _interp(traj, arr[:, i], t)


def relative_entropy(traj: Trajectory, t: float) -> float:
    return _interp(traj, traj.entropy, t)


def entropy_production_rate(traj: Trajectory, t: float) -> float:
    return _interp(traj, traj.ep, t)


class _Recorder:
    def __init__(self, dm, gamma0, entropy0):
        self.dm = dm
        self.E0, self.N0 = reservoir_energies(dm, gamma0)
        self.entropy0 = entropy0
        self.rows = []
        self.spectrum = [np.inf, -np.inf]

    def record(self, n, s, t, gamma, stencil, check_spectrum=False):
        dm = self.dm
        E, Nn = reservoir_energies(dm, gamma)
        flux, flux_eff = heat_fluxes(dm, gamma, t)
        ent = self.entropy0 + math.fsum(dm.betas * ((E - self.E0) - dm.mus * (Nn - self.N0)))
        ep = -math.fsum(dm.betas * flux_eff)
        ep_fd = float(np.real(np.sum(stencil * gamma.T)))
        if check_spectrum:
            ev = np.linalg.eigvalsh(gamma)
            self.spectrum = [min(self.spectrum[0], ev[0]), max(self.spectrum[1], ev[-1])]
        self.rows.append((n, s, t, s == 0, E, Nn, flux, flux_eff, float(gamma[0, 0].real),
                          ent, ep, ep_fd, float(np.trace(gamma).real)))

    def build(self, dm, period, n_cycles, S, meta, final_state):
        rows = sorted(self.rows, key=lambda r: (r[0], r[1]))
        col = list(zip(*rows))
        return Trajectory(
            times=np.array(col[2]), cycle=np.array(col[0], dtype=int),
            phase=np.array(col[1], dtype=int), boundary=np.array(col[3], dtype=bool),
            energies=np.array(col[4]), numbers=np.array(col[5]), flux=np.array(col[6]),
            flux_eff=np.array(col[7]), population=np.array(col[8]), entropy=np.array(col[9]),
            ep=np.array(col[10]), ep_fd=np.array(col[11]), trace=np.array(col[12]),
            period=period, betas=dm.betas.copy(), mus=dm.mus.copy(), n_cycles=n_cycles,
            samples_per_cycle=S, meta=meta, final_state=final_state)


def _detail_set(detail, cycles):
    if detail == "all":
        return set(range(cycles))
    if detail is None or detail == "none":
        return set()
    if isinstance(detail, dict):
        head, tail, stride = detail.get("head", 0), detail.get("tail", 0), detail.get("stride", 0)
    else:
        head, tail = detail
        stride = 0
    out = set(range(min(head, cycles))) | set(range(max(0, cycles - tail), cycles))
    if stride:
        out |= set(range(0, cycles, stride))
    return out


def simulate(dm: DiscretizedModel, cycles: int, steps_per_cycle: int = 512,
             samples_per_cycle: int = 16, detail="all", initial: CovarianceState = None,
             spectrum_every: int = None, step_doubling: bool = False) -> Trajectory:
    """Run ``cycles`` periods and sample the observables.

    Every cycle boundary is sampled.  Cycles selected by ``detail`` ("all",
    "none", (head, tail) or {"head", "tail", "stride"}) are also sampled at
    ``samples_per_cycle`` equally spaced phases.
    """
    if cycles < 1:
        raise ValueError("need at least one cycle")
    if steps_per_cycle % samples_per_cycle:
        raise ValueError("samples_per_cycle must divide steps_per_cycle")
    tau = dm.period
    dt = tau / steps_per_cycle
    stride = steps_per_cycle // samples_per_cycle
    state0 = thermal_covariance(dm) if initial is None else initial
    gamma0 = np.array(state0.gamma, dtype=complex)
    p0 = float(gamma0[0, 0].real)
    rec = _Recorder(dm, gamma0, initial_entropy(p0))
    if spectrum_every is None:
        spectrum_every = 1 if dm.N <= 256 else max(cycles, 1)
    horizon_ok = dm.check_horizon(cycles * tau)

    Wt, defect = period_propagator(dm, steps_per_cycle)
    doubling_err = None
    if step_doubling:
        W2, _ = period_propagator(dm, steps_per_cycle // 2)
        # midpoint rule is second order: the fine-step error is about a third of the gap
        doubling_err = float(np.max(np.abs(Wt - W2))) / 3.0

    details = _detail_set(detail, cycles)
    stored = {}
    stencil0 = entropy_stencil(dm, 0.0)
    G = gamma0
    WtH = Wt.conj().T
    for n in range(cycles + 1):
        check = (n % spectrum_every == 0) or n == cycles
        rec.record(n, 0, n * tau, G, stencil0, check_spectrum=check)
        if n in details:
            stored[n] = G
        if n < cycles:
            G = Wt @ G @ WtH
            G = 0.5 * (G + G.conj().T)
    final_state = CovarianceState(G, cycles * tau)

    if stored and samples_per_cycle > 1:
        prop = OneBodyPropagator(dm, dt)
        X = np.eye(dm.N, dtype=complex)
        for s in range(1, samples_per_cycle):
            prop.advance(X, (s - 1) * stride * dt, stride)
            Ws = X.T
            WsH = Ws.conj().T
            ts = s * stride * dt
            stencil = entropy_stencil(dm, ts)
            for n in sorted(stored):
                Gs = Ws @ stored[n] @ WsH
                rec.record(n, s, n * tau + ts, 0.5 * (Gs + Gs.conj().T), stencil,
                           check_spectrum=dm.N <= 64)
        defect = max(defect, prop.max_defect)

    meta = {"N": dm.N, "steps_per_cycle": steps_per_cycle, "dt": dt,
            "max_unitarity_defect": defect, "step_doubling_error": doubling_err,
            "spectrum_min": float(rec.spectrum[0]), "spectrum_max": float(rec.spectrum[1]),
            "recurrence_time": dm.recurrence_time(), "horizon_below_recurrence": horizon_ok,
            "discretization_hash": dm.content_hash(), "initial_population": p0}
    return rec.build(dm, tau, cycles, samples_per_cycle, meta, final_state)


# ---------------------------------------------------------------------------
# restart snapshots

def save_snapshot(path, state: CovarianceState, meta: dict = None):
    """Binary snapshot: magic, version, JSON header length, JSON header, raw complex128."""
    g = np.ascontiguousarray(state.gamma, dtype="<c16")
    header = dict(meta or {})
    header.update({"shape": list(g.shape), "time": state.time})
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", SNAPSHOT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(g.tobytes())


def load_snapshot(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(SNAPSHOT_MAGIC))
        if magic != SNAPSHOT_MAGIC:
            raise ValueError("not a covariance snapshot (bad magic)")
        version, n = struct.unpack("<II", fh.read(8))
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        header = json.loads(fh.read(n).decode())
        shape = tuple(header["shape"])
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != shape[0] * shape[1]:
        raise ValueError("truncated snapshot")
    return CovarianceState(data.reshape(shape).astype(complex), float(header["time"])), header


from .fock import FockState, propagate_fock_oracle  # noqa: E402  (re-export)
