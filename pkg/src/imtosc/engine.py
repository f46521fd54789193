"""Event-driven simulation of piecewise-linear oscillator networks.

Within one conduction state the network is a linear circuit C x' = -G x + P.
Because C is symmetric positive definite and G symmetric positive
semidefinite, the pencil (G, C) has a real nonnegative spectrum; the flow is
computed exactly in the modal basis of that pencil (equivalent to the matrix
exponential of -C^-1 G, but valid for singular G and evaluable at arbitrary
times). Threshold crossings are bracketed on a sampling grid of the modal
solution and refined by bisection; all guards within the event tolerance of
the earliest crossing fire in one hybrid transition, which keeps symmetric
pairs switching atomically.

A cross-validation integrator based on adaptive Runge-Kutta with dense-output
event location, and a classic sine-coupled phase-oscillator baseline, live
here as well.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import eigh

from .device import ConductionState
from .netlist import LinearSystem, NetworkSpec, assemble, validate_oscillation

_ZERO_EIG = 1e-13  # relative cutoff below which a mode is treated as drift
_CONV_FACTOR = 1e-3  # modal amplitudes below event_tol * this count as converged
_MIN_EVENT_SPACING = 1e-12
_MAX_COINCIDENT = 64  # consecutive events closer than the spacing floor


class Transition(enum.Enum):
    TO_METALLIC = "to_metallic"
    TO_INSULATING = "to_insulating"


class ZenoError(RuntimeError):
    """Event budget exhausted or switching chatter detected."""

    def __init__(self, message: str, last_events: tuple["EventRecord", ...]):
        super().__init__(message)
        self.last_events = last_events


@dataclass(frozen=True)
class SimConfig:
    t_end: float
    sample_dt: float = 0.01
    event_tol: float = 1e-10
    max_events: int = 1_000_000
    seed: int = 0
    integrator: str = "exact"  # "exact" | "adaptive-rk"

    def __post_init__(self) -> None:
        if self.t_end < 0.0:
            raise ValueError("t_end must be nonnegative")
        if self.sample_dt <= 0.0:
            raise ValueError("sample_dt must be positive")
        if self.event_tol <= 0.0:
            raise ValueError("event_tol must be positive")
        if self.max_events <= 0:
            raise ValueError("max_events must be positive")
        if self.integrator not in ("exact", "adaptive-rk"):
            raise ValueError(f"unknown integrator {self.integrator!r}")


@dataclass(frozen=True)
class EventRecord:
    t: float
    osc: int
    transition: Transition
    x_at_event: np.ndarray


@dataclass(frozen=True)
class Guard:
    """Armed threshold for one oscillator in its current state."""

    osc: int
    threshold: float
    direction: int  # +1 fires on upward node-voltage crossing, -1 downward

    def residual(self, x: np.ndarray) -> float:
        return self.direction * (x[self.osc] - self.threshold)


@dataclass(frozen=True)
class StepResult:
    t: float  # time advanced within the current state
    x: np.ndarray  # state vector at that time
    fired: tuple[Guard, ...]  # guards that fired; empty means no event by t
    converged: bool  # flow reached its rest point with no crossing ahead


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray  # (m,) strictly increasing sample instants
    states: np.ndarray  # (m, n) node voltages
    events: tuple[EventRecord, ...]
    final_state: tuple[np.ndarray, tuple[int, ...], float]  # (x, s, t)
    s0: tuple[int, ...]
    net: NetworkSpec | None = None
    diagnostics: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return self.states.shape[1]

    def conduction_states(self) -> np.ndarray:
        """Per-sample conduction-state matrix (right-continuous at events)."""
        s = np.array(self.s0, int)
        out = np.empty((len(self.times), len(s)), int)
        ev_idx = 0
        events = self.events
        for k, t in enumerate(self.times):
            while ev_idx < len(events) and events[ev_idx].t <= t:
                e = events[ev_idx]
                s[e.osc] = (
                    ConductionState.METALLIC
                    if e.transition is Transition.TO_METALLIC
                    else ConductionState.INSULATING
                )
                ev_idx += 1
            out[k] = s
        return out


def active_guards(net: NetworkSpec, s: Sequence[int]) -> tuple[Guard, ...]:
    out = []
    for i, osc in enumerate(net.oscillators):
        thr, direction = osc.guard(int(s[i]))
        out.append(Guard(osc=i, threshold=thr, direction=direction))
    return tuple(out)


class _StateFlow:
    """Exact modal flow of one conduction state.

    Generalized symmetric eigendecomposition G v = lambda C v with
    V^T C V = I turns the circuit into decoupled scalar modes
    y_k' = -lambda_k y_k + q_k, solved in closed form. Zero modes (singular
    G) drift linearly, so no fixed point is ever required.
    """

    def __init__(self, sys: LinearSystem):
        lam, vec = eigh(sys.g, sys.c)
        scale = max(1.0, float(np.abs(lam).max()))
        lam = np.where(lam < _ZERO_EIG * scale, 0.0, lam)
        self.lam = lam
        self.vec = vec
        self.w = vec.T @ sys.c
        self.q = vec.T @ sys.p
        self.nonzero = lam > 0.0
        self.y_rest = np.zeros_like(lam)
        self.y_rest[self.nonzero] = self.q[self.nonzero] / lam[self.nonzero]
        self.drifting = (~self.nonzero) & (np.abs(self.q) > 0.0)

    def propagate(self, x0: np.ndarray, ts: np.ndarray) -> np.ndarray:
        """Node voltages at the requested times (shape (len(ts), n))."""
        y0 = self.w @ x0
        ts = np.atleast_1d(np.asarray(ts, float))
        decay = np.exp(-np.outer(ts, self.lam))
        y = self.y_rest + (y0 - self.y_rest) * decay
        if (~self.nonzero).any():
            z = ~self.nonzero
            y[:, z] = y0[z] + np.outer(ts, self.q[z])
        return y @ self.vec.T

    def _at(self, x0: np.ndarray, t: float) -> np.ndarray:
        return self.propagate(x0, np.array([t]))[0]

    def _convergence_horizon(self, x0: np.ndarray, tol: float) -> float | None:
        """Time after which every decaying mode is within tol of rest.

        None when a drifting mode keeps moving forever.
        """
        if self.drifting.any():
            return None
        y0 = self.w @ x0
        amp = np.abs(y0 - self.y_rest)[self.nonzero]
        if amp.size == 0:
            return 0.0
        lam = self.lam[self.nonzero]
        with np.errstate(divide="ignore"):
            t_each = np.log(np.maximum(amp / tol, 1.0)) / lam
        return float(t_each.max())

    def _grid(self, horizon: float, n: int) -> np.ndarray:
        pts = max(64, 16 * n)
        lin = np.linspace(0.0, horizon, pts)
        geo = np.geomspace(max(horizon * 1e-9, 1e-300), horizon, pts // 2)
        return np.unique(np.concatenate([lin, geo]))

    def _bisect(
        self, x0: np.ndarray, guard: Guard, a: float, b: float, event_tol: float
    ) -> float:
        """Refine a bracketed crossing; returns a time on the crossed side
        with guard residual at most event_tol."""
        for _ in range(200):
            gb = guard.residual(self._at(x0, b))
            if 0.0 <= gb <= event_tol:
                return b
            m = 0.5 * (a + b)
            if m <= a or m >= b:  # bracket below float resolution
                return b
            if guard.residual(self._at(x0, m)) < 0.0:
                a = m
            else:
                b = m
        return b

    def _earliest_crossing(
        self, x0: np.ndarray, guard: Guard, grid: np.ndarray, xs: np.ndarray, event_tol: float
    ) -> float | None:
        gv = guard.direction * (xs[:, guard.osc] - guard.threshold)
        if gv[0] >= 0.0:
            return 0.0
        hits = np.where((gv[:-1] < 0.0) & (gv[1:] >= 0.0))[0]
        if hits.size == 0:
            return None
        k = int(hits[0])
        return self._bisect(x0, guard, float(grid[k]), float(grid[k + 1]), event_tol)

    def step(
        self,
        x0: np.ndarray,
        guards: Sequence[Guard],
        t_max: float,
        event_tol: float,
    ) -> StepResult:
        """Advance until the earliest guard crossing or t_max."""
        n = x0.shape[0]
        conv = self._convergence_horizon(x0, event_tol * _CONV_FACTOR)
        horizon = t_max if conv is None else min(t_max, max(conv, 16 * np.finfo(float).tiny))
        if horizon <= 0.0:
            horizon = t_max
        while True:
            grid = self._grid(horizon, n)
            xs = self.propagate(x0, grid)
            t_star = np.inf
            for guard in guards:
                tc = self._earliest_crossing(x0, guard, grid, xs, event_tol)
                if tc is not None and tc < t_star:
                    t_star = tc
            if np.isfinite(t_star):
                x_ev = self._at(x0, t_star)
                fired = tuple(g for g in guards if g.residual(x_ev) >= -event_tol)
                if fired:
                    return StepResult(t=t_star, x=x_ev, fired=fired, converged=False)
            if horizon >= t_max:
                return StepResult(
                    t=t_max,
                    x=self._at(x0, t_max),
                    fired=(),
                    converged=conv is not None and conv < t_max,
                )
            horizon = min(2.0 * horizon, t_max)


def step_exact(
    sys: LinearSystem,
    x0: np.ndarray,
    guards: Sequence[Guard],
    t_max: float,
    event_tol: float = 1e-10,
) -> StepResult:
    """Locate the earliest guard crossing of the exact per-state flow."""
    return _StateFlow(sys).step(np.asarray(x0, float), guards, t_max, event_tol)


def _check_initial(net: NetworkSpec, x0, s0) -> tuple[np.ndarray, list[int], list[str]]:
    x = np.asarray(x0, float).copy()
    s = [int(v) for v in s0]
    if x.shape != (net.size,) or len(s) != net.size:
        raise ValueError(
            f"x0 and s0 must have length {net.size}, got {x.shape} and {len(s)}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    diagnostics = []
    for i, osc in enumerate(net.oscillators):
        ok, why = validate_oscillation(osc)
        if not ok:
            msg = f"oscillator {i} cannot self-oscillate: {why}"
            warnings.warn(msg, stacklevel=3)
            diagnostics.append(msg)
    return x, s, diagnostics


def _apply_transitions(
    s: list[int], fired: Sequence[Guard], t: float, x: np.ndarray
) -> list[EventRecord]:
    recs = []
    for g in fired:
        s[g.osc] = 1 - s[g.osc]
        tr = (
            Transition.TO_METALLIC
            if s[g.osc] == ConductionState.METALLIC
            else Transition.TO_INSULATING
        )
        recs.append(EventRecord(t=t, osc=g.osc, transition=tr, x_at_event=x.copy()))
    return recs


def simulate(net: NetworkSpec, x0, s0, cfg: SimConfig) -> Trajectory:
    """Event-driven run with the exact per-state flow.

    Deterministic: identical inputs produce a bit-identical trajectory.
    Samples land on the global grid k * sample_dt plus every event instant.
    """
    x, s, diagnostics = _check_initial(net, x0, s0)
    s_init = tuple(s)
    times = [0.0]
    samples = [x.copy()]
    events: list[EventRecord] = []
    t = 0.0
    if cfg.t_end == 0.0:
        return Trajectory(
            times=np.array(times),
            states=np.array(samples),
            events=(),
            final_state=(x.copy(), tuple(s), 0.0),
            s0=s_init,
            net=net,
            diagnostics=tuple(diagnostics),
        )

    flows: dict[tuple[int, ...], _StateFlow] = {}
    next_k = 1
    coincident = 0
    while t < cfg.t_end:
        if len(events) >= cfg.max_events:
            raise ZenoError(
                f"exceeded max_events={cfg.max_events} at t={t:.6g} "
                "(possible switching chatter)",
                tuple(events[-10:]),
            )
        key = tuple(s)
        flow = flows.get(key)
        if flow is None:
            flow = flows[key] = _StateFlow(assemble(net, s))
        res = flow.step(x, active_guards(net, s), cfg.t_end - t, cfg.event_tol)
        t_new = t + res.t
        while next_k * cfg.sample_dt < t_new:
            tg = next_k * cfg.sample_dt
            if tg > t:
                times.append(tg)
                samples.append(flow._at(x, tg - t))
            next_k += 1
        if not res.fired:
            if t_new > times[-1]:
                times.append(t_new)
                samples.append(res.x)
            t = t_new
            if res.converged:
                diagnostics.append(
                    f"no further switching after t={t:.6g}: flow converged to its "
                    "rest point without reaching a threshold (non-oscillating state)"
                )
            break
        if res.t <= _MIN_EVENT_SPACING:
            coincident += 1
            if coincident > _MAX_COINCIDENT:
                raise ZenoError(
                    f"more than {_MAX_COINCIDENT} events within {_MIN_EVENT_SPACING} "
                    f"of each other at t={t_new:.6g}",
                    tuple(events[-10:]),
                )
        else:
            coincident = 0
        x = res.x.copy()
        t = t_new
        events.extend(_apply_transitions(s, res.fired, t, x))
        if t > times[-1]:
            times.append(t)
            samples.append(x.copy())
    return Trajectory(
        times=np.array(times),
        states=np.array(samples),
        events=tuple(events),
        final_state=(x.copy(), tuple(s), t),
        s0=s_init,
        net=net,
        diagnostics=tuple(diagnostics),
    )


def simulate_adaptive(net: NetworkSpec, x0, s0, cfg: SimConfig) -> Trajectory:
    """Same contract as ``simulate`` but integrated with an adaptive
    Runge-Kutta pair and dense-output event location.

    Exists to cross-check the exact integrator; event semantics (co-firing
    within event_tol) match so event counts agree.
    """
    x, s, diagnostics = _check_initial(net, x0, s0)
    s_init = tuple(s)
    times = [0.0]
    samples = [x.copy()]
    events: list[EventRecord] = []
    t = 0.0
    if cfg.t_end == 0.0:
        return Trajectory(
            times=np.array(times),
            states=np.array(samples),
            events=(),
            final_state=(x.copy(), tuple(s), 0.0),
            s0=s_init,
            net=net,
            diagnostics=tuple(diagnostics),
        )

    systems: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}
    next_k = 1
    while t < cfg.t_end:
        if len(events) >= cfg.max_events:
            raise ZenoError(
                f"exceeded max_events={cfg.max_events} at t={t:.6g}",
                tuple(events[-10:]),
            )
        key = tuple(s)
        if key not in systems:
            sys = assemble(net, s)
            systems[key] = (
                np.linalg.solve(sys.c, -sys.g),
                np.linalg.solve(sys.c, sys.p),
            )
        m_mat, b_vec = systems[key]
        guards = active_guards(net, s)

        immediate = tuple(g for g in guards if g.residual(x) >= 0.0)
        if immediate:
            events.extend(_apply_transitions(s, immediate, t, x))
            continue

        def rhs(_t, y):
            return m_mat @ y + b_vec

        ev_fns = []
        for g in guards:

            def make(gg: Guard):
                def fn(_t, y):
                    return y[gg.osc] - gg.threshold

                fn.terminal = True
                fn.direction = float(gg.direction)
                return fn

            ev_fns.append(make(g))

        sol = solve_ivp(
            rhs,
            (0.0, cfg.t_end - t),
            x,
            method="RK45",
            events=ev_fns,
            dense_output=True,
            rtol=1e-10,
            atol=1e-12,
        )
        if sol.status == 1:  # terminated on an event
            t_hit = min(te[0] for te in sol.t_events if te.size)
            x_hit = sol.sol(t_hit)
        else:
            t_hit = cfg.t_end - t
            x_hit = sol.y[:, -1]
        t_new = t + t_hit
        while next_k * cfg.sample_dt < t_new:
            tg = next_k * cfg.sample_dt
            if tg > t:
                times.append(tg)
                samples.append(sol.sol(tg - t))
            next_k += 1
        if sol.status != 1:
            if t_new > times[-1]:
                times.append(t_new)
                samples.append(np.asarray(x_hit))
            t = t_new
            break
        x = np.asarray(x_hit).copy()
        t = t_new
        fired = tuple(g for g in guards if g.residual(x) >= -cfg.event_tol)
        events.extend(_apply_transitions(s, fired, t, x))
        if t > times[-1]:
            times.append(t)
            samples.append(x.copy())
    return Trajectory(
        times=np.array(times),
        states=np.array(samples),
        events=tuple(events),
        final_state=(x.copy(), tuple(s), t),
        s0=s_init,
        net=net,
        diagnostics=tuple(diagnostics),
    )


def random_initial_conditions(
    net: NetworkSpec, rng: np.random.Generator
) -> tuple[np.ndarray, list[int]]:
    """Node voltages uniform in each operating band, states uniform.

    Any conduction state is consistent strictly inside the hysteresis band,
    so voltages and states can be drawn independently.
    """
    x0 = np.empty(net.size)
    s0 = []
    for i, osc in enumerate(net.oscillators):
        lo, hi = osc.operating_band()
        x0[i] = rng.uniform(lo, hi)
        s0.append(int(rng.integers(0, 2)))
    return x0, s0


@dataclass(frozen=True)
class KuramotoTrajectory:
    times: np.ndarray
    phases: np.ndarray  # (m, n), reported mod 2*pi

    def order_parameter(self) -> np.ndarray:
        return np.abs(np.exp(1j * self.phases).mean(axis=1))


def kuramoto_simulate(
    omegas: Sequence[float], coupling: float, theta0: Sequence[float], cfg: SimConfig
) -> KuramotoTrajectory:
    """Sine-coupled phase oscillators: theta_i' = w_i + (K/N) sum_j sin(theta_j - theta_i)."""
    if coupling < 0.0:
        raise ValueError("coupling must be nonnegative")
    w = np.asarray(omegas, float)
    th0 = np.asarray(theta0, float)
    if w.shape != th0.shape:
        raise ValueError("omegas and theta0 must have the same length")
    n = w.size

    def rhs(_t, th):
        return w + (coupling / n) * np.sin(th[None, :] - th[:, None]).sum(axis=1)

    t_eval = np.arange(0.0, cfg.t_end, cfg.sample_dt)
    if t_eval.size == 0 or t_eval[-1] < cfg.t_end:
        t_eval = np.append(t_eval, cfg.t_end)
    sol = solve_ivp(
        rhs, (0.0, cfg.t_end), th0, method="RK45", t_eval=t_eval, rtol=1e-10, atol=1e-12
    )
    return KuramotoTrajectory(times=sol.t, phases=np.mod(sol.y.T, 2.0 * np.pi))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV export: time,v1,...,vN,s1,...,sN (states right-continuous)."""
    n = traj.size
    cond = traj.conduction_states()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        head = ["time"] + [f"v{i+1}" for i in range(n)] + [f"s{i+1}" for i in range(n)]
        fh.write(",".join(head) + "\n")
        for k in range(len(traj.times)):
            row = [_fmt(traj.times[k])]
            row += [_fmt(v) for v in traj.states[k]]
            row += [str(int(v)) for v in cond[k]]
            fh.write(",".join(row) + "\n")


def write_events_csv(traj: Trajectory, path) -> None:
    """CSV export of switching events: time,osc,transition."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("time,osc,transition\n")
        for e in traj.events:
            fh.write(f"{_fmt(e.t)},{e.osc},{e.transition.value}\n")
