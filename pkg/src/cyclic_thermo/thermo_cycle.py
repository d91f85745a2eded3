"""Per-cycle thermodynamics of a sampled trajectory.

Heat extracted from reservoir i during cycle n is Q_i[n] = -(E_i((n+1)tau) - E_i(n tau)),
with E_i - mu_i N_i in place of E_i for the entropy balance.  The entropy
produced in a cycle is then exactly -sum_i beta_i Q_i[n].
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .dynamics import Trajectory


class NotConverged(RuntimeError):
    pass


def _plain(v):
    """JSON-ready copy: arrays to lists, non-finite floats to None."""
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


@dataclass
class CycleLedger:
    period: float
    betas: np.ndarray
    mus: np.ndarray
    heat: np.ndarray          # (n, R) energy extracted
    heat_eff: np.ndarray      # (n, R) with E - mu N
    entropy_change: np.ndarray
    work: np.ndarray
    identity_residual: np.ndarray
    quadrature_residual: np.ndarray  # nan where the cycle was not sampled inside
    population: np.ndarray    # at the boundaries, n + 1 values
    entropy: np.ndarray       # Ent at the boundaries, n + 1 values
    convergence_metric: np.ndarray
    recurrence_time: float = math.inf

    @property
    def n_cycles(self):
        return len(self.entropy_change)

    def observables(self):
        """Per-cycle series used for convergence detection."""
        obs = {f"heat_{i + 1}": self.heat_eff[:, i] for i in range(self.heat.shape[1])}
        obs["entropy_change"] = self.entropy_change
        obs["population"] = self.population[1:]
        return obs

    def to_dict(self):
        return {k: _plain(v) for k, v in asdict(self).items()}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), sort_keys=True, indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def per_cycle_heat(traj: Trajectory, i: int, n: int, effective: bool = False) -> float:
    """Heat extracted from reservoir i during cycle n."""
    if not 0 <= i < traj.n_reservoirs:
        raise IndexError(f"unknown reservoir index {i}")
    if not 0 <= n < traj.n_cycles:
        raise ValueError(f"cycle {n} is not complete in a run of {traj.n_cycles} cycles")
    E = traj.boundary_values("energies")[:, i]
    if effective:
        E = E - traj.mus[i] * traj.boundary_values("numbers")[:, i]
    return -(E[n + 1] - E[n])


def build_ledger(traj: Trajectory) -> CycleLedger:
    E = traj.boundary_values("energies")
    N = traj.boundary_values("numbers")
    heat = -np.diff(E, axis=0)
    heat_eff = -np.diff(E - traj.mus[None, :] * N, axis=0)
    ent = traj.boundary_values("entropy")
    dent = np.diff(ent)
    ident = dent + heat_eff @ traj.betas
    quad = np.full(traj.n_cycles, np.nan)
    for n in traj.detailed_cycles():
        idx = traj.cycle_samples(n)
        quad[n] = abs(dent[n] - trapezoid(traj.ep[idx], traj.times[idx]))
    pop = traj.boundary_values("population")
    series = [heat_eff[:, i] for i in range(heat.shape[1])] + [dent, pop[1:]]
    metric = np.zeros(traj.n_cycles)
    for x in series:
        scale = np.max(np.abs(x)) if len(x) else 0.0
        if scale > 0:
            metric[1:] = np.maximum(metric[1:], np.abs(np.diff(x)) / scale)
    return CycleLedger(traj.period, traj.betas, traj.mus, heat, heat_eff, dent, heat.sum(axis=1),
                       ident, quad, pop, ent, metric,
                       traj.meta.get("recurrence_time", math.inf))


# ---------------------------------------------------------------------------

@dataclass
class Convergence:
    converged: bool
    n_star: int = None
    limits: dict = field(default_factory=dict)
    gamma_fit: float = None          # decay rate per unit time (median over observables)
    rates: dict = field(default_factory=dict)
    window: int = 5
    usable_cycles: int = 0
    status: str = ""
    period: float = 1.0

    @property
    def contraction(self):
        """Fitted per-cycle contraction factor."""
        return None if self.gamma_fit is None else math.exp(-self.gamma_fit * self.period)


def _fit_rate(x, window, min_points=4):
    """Decay rate per cycle from log|x[n] - x_inf| on the clean exponential tail."""
    x_inf = float(np.mean(x[-window:]))
    e = np.abs(x - x_inf)
    scale = float(np.max(np.abs(x))) if len(x) else 0.0
    emax = float(np.max(e))
    floor = max(100.0 * float(np.max(e[-window:])), 1e-11 * scale)
    if emax <= floor:
        return None
    start = int(np.argmax(e <= 0.3 * emax)) if np.any(e <= 0.3 * emax) else 0
    above = np.flatnonzero(e[start:] > floor)
    if above.size == 0:
        return None
    stop = start + int(above[-1]) + 1
    idx = np.arange(start, stop)
    idx = idx[e[idx] > floor]
    if idx.size < min_points:
        return None
    slope = np.polyfit(idx, np.log(e[idx]), 1)[0]
    return -slope


def detect_periodic_convergence(ledger: CycleLedger, tol: float = 1e-6, window: int = 5) -> Convergence:
    """First cycle n* after which every per-cycle observable changes by less than
    ``tol`` (relative to its largest magnitude) for ``window`` consecutive cycles.

    Only cycles ending before the recurrence estimate are used.  The geometric
    rate is fitted on |x[n] - x_inf| for each observable.
    """
    tau = ledger.period
    usable = ledger.n_cycles
    if np.isfinite(ledger.recurrence_time):
        usable = min(usable, int(math.floor(ledger.recurrence_time / tau + 1e-9)))
    res = Convergence(False, window=window, usable_cycles=usable, period=tau)
    if usable < window + 1:
        res.status = "not-converged: fewer usable cycles than the window"
        return res
    obs = {k: v[:usable] for k, v in ledger.observables().items()}
    d = np.zeros(usable - 1)
    for x in obs.values():
        scale = float(np.max(np.abs(x)))
        if scale > 0:
            d = np.maximum(d, np.abs(np.diff(x)) / scale)
    ok = d < tol
    n_star = None
    for n in range(0, usable - window):
        if ok[n:n + window].all():
            n_star = n
            break
    rates = {}
    for k, x in obs.items():
        r = _fit_rate(x, window)
        if r is not None:
            rates[k] = r / tau
    res.rates = rates
    if rates:
        res.gamma_fit = float(np.median(list(rates.values())))
    if n_star is None:
        res.status = "not-converged: tolerance not met before the horizon"
        return res
    res.converged = True
    res.n_star = n_star
    res.limits = {k: float(np.mean(x[usable - window:usable])) for k, x in obs.items()}
    res.status = "converged"
    return res


@dataclass
class EntropyEstimate:
    value: float
    spread: float
    noise_floor: float
    balance_residual: float
    drift: float
    cycles: list

    @property
    def significant(self) -> bool:
        return self.value > self.noise_floor


def _aitken(x):
    if len(x) < 3:
        return float(x[-1])
    d1, d2 = x[-1] - x[-2], x[-2] - x[-3]
    if d2 == 0 or d1 == d2:
        return float(x[-1])
    r = d1 / d2
    if not abs(r) < 1:
        return float(x[-1])
    return float(x[-1] + d1 * r / (1 - r))


def entropy_per_cycle(ledger: CycleLedger, conv: Convergence, strict: bool = True) -> EntropyEstimate:
    """Entropy produced per cycle in the periodic regime.

    Averages the last ``window`` usable cycles.  The noise floor is ten times
    the balance residual: the largest identity and quadrature mismatches in
    the window plus the distance of the average from its geometric
    extrapolation.  With ``strict=False`` an unconverged run still gets an
    estimate from its last usable window; the drift term then carries the
    remaining transient.
    """
    if not conv.converged and strict:
        raise NotConverged(conv.status or "run did not converge")
    hi = conv.usable_cycles
    lo = max(conv.n_star or 0, hi - conv.window)
    cyc = list(range(lo, hi))
    x = ledger.entropy_change[lo:hi]
    mean = float(np.mean(x))
    spread = float(np.std(x))
    x_inf = _aitken(ledger.entropy_change[:hi])
    drift = max(abs(mean - x_inf), spread)
    ident = float(np.max(np.abs(ledger.identity_residual[lo:hi])))
    q = ledger.quadrature_residual[lo:hi]
    quad = float(np.nanmax(q)) if np.any(np.isfinite(q)) else 0.0
    balance = ident + quad + drift
    return EntropyEstimate(mean, spread, 10.0 * balance, balance, drift, cyc)


@dataclass
class EngineReport:
    regime: str
    eta: float
    eta_carnot: float
    margin: float
    n_star: int
    heat_hot: float
    heat_cold: float
    work: float
    entropy_per_cycle: float
    bound_slack: float = None     # (eta_C - T2 dEnt/Q1) - eta, >= 0 up to rounding
    second_law: float = 0.0       # -(beta1 Q1 + beta2 Q2)

    def to_dict(self):
        return {k: _plain(v) for k, v in asdict(self).items()}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), sort_keys=True, indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def efficiency(ledger: CycleLedger, conv: Convergence, T1: float = None, T2: float = None) -> EngineReport:
    """Regime and efficiency of a converged two-reservoir cycle (reservoir 1 hot)."""
    if ledger.heat.shape[1] != 2:
        raise ValueError("efficiency needs exactly two reservoirs")
    if not conv.converged:
        raise NotConverged(conv.status or "run did not converge")
    T1 = 1.0 / ledger.betas[0] if T1 is None else T1
    T2 = 1.0 / ledger.betas[1] if T2 is None else T2
    if T1 < T2:
        raise ValueError("reservoir 1 must be the hot one (T1 >= T2)")
    hi = conv.usable_cycles
    lo = max(conv.n_star, hi - conv.window)
    Q1 = float(np.mean(ledger.heat_eff[lo:hi, 0]))
    Q2 = float(np.mean(ledger.heat_eff[lo:hi, 1]))
    dA = Q1 + Q2
    dent = float(np.mean(ledger.entropy_change[lo:hi]))
    eta_c = (T1 - T2) / T1
    second = -(Q1 / T1 + Q2 / T2)
    if Q1 > 0 and dA >= 0:
        eta = dA / Q1
        rep = EngineReport("engine", eta, eta_c, eta_c - eta, conv.n_star, Q1, Q2, dA, dent,
                           (eta_c - T2 * dent / Q1) - eta, second)
        return rep
    if dA < 0 and Q2 > 0:
        regime = "refrigerator"
    elif dA < 0:
        regime = "heater"
    else:
        regime = "undetermined"
    return EngineReport(regime, None, eta_c, None, conv.n_star, Q1, Q2, dA, dent, None, second)


# ---------------------------------------------------------------------------

@dataclass
class ExcessEntropyReport:
    sup: float
    plateau: bool
    monotone_growth: bool
    final_growth: float
    running: np.ndarray


def excess_entropy_diagnostic(traj: Trajectory, ledger: CycleLedger, conv: Convergence = None,
                      window: int = 5, rel_tol: float = 1e-3) -> ExcessEntropyReport:
    """Running integral of (periodic-profile Ep - actual Ep) and whether it levels off.

    The periodic profile is the converged per-cycle entropy production (the
    last cycle when the run did not converge).  Inside sampled cycles the
    profile of the last sampled cycle is used.
    """
    n = ledger.n_cycles
    if conv is not None and conv.converged:
        hi = conv.usable_cycles
        per = float(np.mean(ledger.entropy_change[max(conv.n_star, hi - conv.window):hi]))
    else:
        per = float(ledger.entropy_change[-1])
    ent = ledger.entropy
    D = np.arange(n + 1) * per - (ent - ent[0])
    running = [abs(x) for x in D]
    det = traj.detailed_cycles()
    if det:
        ref = traj.cycle_samples(det[-1])
        prof = traj.entropy[ref] - traj.entropy[ref[0]]
        for c in det:
            idx = traj.cycle_samples(c)
            inner = D[c] + prof - (traj.entropy[idx] - traj.entropy[idx[0]])
            running.extend(abs(v) for v in inner)
    sup = float(max(running)) if running else 0.0
    w = min(window, n)
    tail = np.diff(D[n - w:]) if w > 0 else np.zeros(0)
    growth = float(abs(D[-1] - D[n - w])) if w > 0 else 0.0
    plateau = growth <= rel_tol * sup or sup == 0.0
    monotone = (not plateau) and tail.size > 0 and (np.all(tail > 0) or np.all(tail < 0))
    return ExcessEntropyReport(sup, bool(plateau), bool(monotone), growth, np.asarray(D))


def cesaro_average(traj: Trajectory, observable) -> float:
    """(1/(n tau)) * integral over the first n complete cycles.

    ``observable`` is a trajectory field name or an array aligned with
    ``traj.times``.  The entropy production rate needs only the boundaries
    (its integral is the entropy increment); other observables need every
    cycle to be sampled inside.
    """
    n = traj.n_cycles
    if n < 1:
        raise ValueError("need at least one complete cycle")
    T = n * traj.period
    if isinstance(observable, str) and observable in ("ep", "entropy_production_rate"):
        ent = traj.boundary_values("entropy")
        return float((ent[n] - ent[0]) / T)
    values = getattr(traj, observable) if isinstance(observable, str) else np.asarray(observable)
    if len(traj.detailed_cycles()) != n:
        raise ValueError("observable averages need every cycle sampled inside")
    return float(trapezoid(values, traj.times) / T)
