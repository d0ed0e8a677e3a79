"""Driven-dissipative time evolution and temporal-mode output observables.

Implements fixed-step RK4 master-equation propagation of the qubit-cavity
system with a classical pulse drive and instantaneous qubit rotations,
multi-time correlation functions by regression insertions, the ladder of
output-mode moments (qubit-resolved mean amplitude, photon number, and
second-order moments of the reflected temporal mode), and an independent
capture-mode oracle that absorbs the outgoing field into an auxiliary
resonator for cross-validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels
from .linalg import QuantumState, dag, destroy
from .model import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    LindbladModel,
    SystemParams,
    TemporalMode,
)

# qubit basis ordering (|g>, |e>)
GATE_Y90 = np.array([[1.0, -1.0], [1.0, 1.0]], dtype=complex) / math.sqrt(2.0)
GATE_YM90 = np.array([[1.0, 1.0], [-1.0, 1.0]], dtype=complex) / math.sqrt(2.0)

TRACE_DRIFT_MAX = 1e-8
TOP_LEVEL_MAX = 1e-7
CAPTURE_TOP_MAX = 1e-5
EARLY_TAIL_MASS = 1e-5

_QIDX = {"g": 0, "e": 1}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class PulseSchedule:
    """Timing of the two qubit rotations and the readout relative to the pulse.

    The input envelope arrives as f(-t), peaked near t = 0.  The first
    rotation (+90 deg about y) fires at t_i, the second (-90 deg) at t_g,
    and observables are evaluated at t_f.  Setting ramsey_gates False
    disables both rotations while keeping the timing window.
    """

    t_i: float
    t_g: float
    t_f: float
    mode: TemporalMode
    alpha_in: complex = 0.0
    ramsey_gates: bool = True

    def __post_init__(self) -> None:
        _require(self.t_i < self.t_g, "t_i must precede t_g")
        _require(self.t_g <= self.t_f, "t_g must not exceed t_f")

    @property
    def mean_input_photons(self) -> float:
        return float(abs(self.alpha_in) ** 2)


@dataclass
class Trajectory:
    """States stored along one propagation, qubit rotations included."""

    times: np.ndarray
    rhos: np.ndarray
    dims: tuple
    max_trace_defect: float
    max_top_population: float

    def expect(self, op: np.ndarray) -> np.ndarray:
        return np.einsum("ij,tji->t", op, self.rhos)

    def state(self, idx: int = -1) -> QuantumState:
        return QuantumState(self.rhos[idx].copy(), self.dims)

    @property
    def final_state(self) -> QuantumState:
        return self.state(-1)


@dataclass
class MomentSet:
    """Normally ordered output-mode moments resolved on the qubit.

    moments[p, q, m, n] holds <sigma_pq Adag^m A^n> at the readout time,
    with p, q in {0: g, 1: e} and m, n up to 2.  A is the annihilator of
    the reflected temporal mode; classical = alpha_in times the overlap of
    the projection mode with the input envelope; phase_ref is the phase of
    the mean reflected amplitude of an empty-qubit (ground-pinned) linear
    reference used for gauge fixing; delay is the projection-mode delay.
    """

    moments: np.ndarray
    classical: complex
    overlap: complex
    phase_ref: float
    delay: float

    def moment(self, qubit_op: str, m: int = 0, n: int = 0) -> complex:
        p, q = _QIDX[qubit_op[0]], _QIDX[qubit_op[1]]
        return complex(self.moments[p, q, m, n])

    def rotated(self, phi: Optional[float] = None) -> "MomentSet":
        """Re-gauge the mode phase: A -> A e^{-i phi} (phi defaults to phase_ref)."""
        if phi is None:
            phi = self.phase_ref
        out = self.moments.copy()
        for m in range(3):
            for n in range(3):
                out[:, :, m, n] *= np.exp(1j * (m - n) * phi)
        return MomentSet(
            out,
            self.classical * np.exp(-1j * phi),
            self.overlap,
            self.phase_ref - phi,
            self.delay,
        )

    @property
    def qubit_populations(self) -> tuple:
        return (float(self.moments[0, 0, 0, 0].real), float(self.moments[1, 1, 0, 0].real))

    @property
    def mean_amplitude(self) -> complex:
        return complex(self.moments[0, 0, 0, 1] + self.moments[1, 1, 0, 1])

    @property
    def mean_photon(self) -> float:
        return float((self.moments[0, 0, 1, 1] + self.moments[1, 1, 1, 1]).real)

    def as_dict(self, qubit_op: str) -> dict:
        return {
            "P": self.moment(qubit_op, 0, 0),
            "A": self.moment(qubit_op, 0, 1),
            "N": self.moment(qubit_op, 1, 1),
            "A2": self.moment(qubit_op, 0, 2),
            "AdA2": self.moment(qubit_op, 1, 2),
            "Ad2A2": self.moment(qubit_op, 2, 2),
        }


# ---------------------------------------------------------------------------
# gates and grids


def gate_matrix(which: str) -> np.ndarray:
    try:
        return {"y90": GATE_Y90, "ym90": GATE_YM90}[which]
    except KeyError:
        raise ValueError(f"unknown gate {which!r}; expected 'y90' or 'ym90'") from None


def apply_gate(state: QuantumState, which: str) -> QuantumState:
    """Conjugate the qubit (first subsystem) by a +/-90 degree y rotation."""
    u2 = gate_matrix(which)
    rest = int(np.prod(state.dims[1:])) if len(state.dims) > 1 else 1
    u = np.kron(u2, np.eye(rest, dtype=complex))
    return QuantumState(u @ state.rho @ dag(u), state.dims)


def default_timestep(params: SystemParams, mode: TemporalMode) -> float:
    """Fixed RK4 step: resolves both the linewidth and the envelope."""
    peak2 = float(np.max(np.abs(mode.f) ** 2))
    _require(peak2 > 0, "mode envelope is identically zero")
    dt = (1.0 / peak2) / 160.0
    kappa = params.kappa_tot
    if np.isfinite(kappa) and kappa > 0:
        dt = min(dt, 1.0 / (40.0 * kappa))
    return dt


def _start_time(schedule: PulseSchedule) -> float:
    """Earliest time to propagate from so the leading pulse tail is covered."""
    if schedule.alpha_in == 0:
        return schedule.t_i
    mode = schedule.mode
    intensity = np.abs(mode.f) ** 2 * mode.dt
    trailing = np.cumsum(intensity[::-1])[::-1]
    late = mode.t[trailing <= EARLY_TAIL_MASS]
    s_star = float(late[0]) if late.size else float(mode.t[-1])
    return min(schedule.t_i, -s_star)


def _segment_steps(span: float, dt: float) -> int:
    return max(1, int(math.ceil(span / dt - 1e-12)))


def _half_grid(t0: float, nsteps: int, dt_seg: float) -> np.ndarray:
    return t0 + np.arange(2 * nsteps + 1) * (dt_seg / 2.0)


def _drive_samples(
    params: SystemParams,
    schedule: PulseSchedule,
    times: np.ndarray,
    drive: Optional[Callable[[np.ndarray], np.ndarray]],
) -> np.ndarray:
    if drive is not None:
        return np.asarray(drive(times), dtype=complex)
    if schedule.alpha_in == 0 or params.kappa_ex == 0:
        return np.zeros(times.shape, dtype=complex)
    amp = schedule.mode.amplitude(-times)
    off = schedule.mode.carrier_offset
    if off != 0.0:
        amp = amp * np.exp(-1j * off * times)
    return -1j * math.sqrt(params.kappa_ex) * schedule.alpha_in * amp


def _mode_u(output_mode: TemporalMode, times: np.ndarray) -> np.ndarray:
    """Projection-mode waveform u(t) = f_out(-t) in the propagation frame."""
    amp = output_mode.amplitude(-times)
    off = output_mode.carrier_offset
    if off != 0.0:
        amp = amp * np.exp(-1j * off * times)
    return amp


def _segments(schedule: PulseSchedule, t_start: float) -> list:
    return [
        (t_start, schedule.t_i, "y90"),
        (schedule.t_i, schedule.t_g, "ym90"),
        (schedule.t_g, schedule.t_f, None),
    ]


def _model_arrays(model: LindbladModel):
    d = model.dim
    if model.collapse:
        c_arr = np.ascontiguousarray(np.array(model.collapse, dtype=complex))
    else:
        c_arr = np.zeros((0, d, d), dtype=complex)
    sum_cc = np.zeros((d, d), dtype=complex)
    for i in range(c_arr.shape[0]):
        sum_cc += dag(c_arr[i]) @ c_arr[i]
    h_nh = np.ascontiguousarray(model.H - 0.5j * sum_cc)
    a_op = np.ascontiguousarray(model.a.astype(complex))
    adag_op = np.ascontiguousarray(dag(model.a))
    n_c = model.n_max + 1
    top_idx = np.array([n_c - 1, 2 * n_c - 1], dtype=np.int64)
    return d, c_arr, h_nh, a_op, adag_op, top_idx


def _check_monitors(max_tr: float, max_top: float, top_limit: float, label: str) -> None:
    if max_tr > TRACE_DRIFT_MAX:
        raise RuntimeError(f"{label}: trace drifted by {max_tr:.3e} (limit {TRACE_DRIFT_MAX:.0e})")
    if max_top > top_limit:
        raise RuntimeError(
            f"{label}: top-level population {max_top:.3e} exceeds {top_limit:.0e}; "
            "raise the truncation dimension"
        )


# ---------------------------------------------------------------------------
# propagation


def evolve(
    model: LindbladModel,
    schedule: PulseSchedule,
    *,
    initial: Optional[QuantumState] = None,
    dt: Optional[float] = None,
    store_every: int = 1,
    drive: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Trajectory:
    """Propagate from the start of the pulse window to t_f.

    Propagation begins before t_i when the leading tail of the input
    envelope would otherwise be clipped.  Qubit rotations fire at t_i and
    t_g when schedule.ramsey_gates is set.  The trajectory stores every
    store_every-th step plus segment boundaries (pre- and post-rotation).
    """
    p = model.params
    if dt is None:
        dt = default_timestep(p, schedule.mode)
    d, c_arr, h_nh, a_op, adag_op, top_idx = _model_arrays(model)
    state = initial if initial is not None else model.ground_state()
    _require(state.rho.shape[0] == d, "initial state dimension mismatch")
    stack = np.ascontiguousarray(state.rho[None, :, :].astype(complex))
    t_start = _start_time(schedule)
    times_out = [t_start]
    rhos_out = [stack[0].copy()]
    max_tr = 0.0
    max_top = 0.0
    for t0, t1, gate in _segments(schedule, t_start):
        span = t1 - t0
        if span > 1e-15:
            nsteps = _segment_steps(span, dt)
            dt_seg = span / nsteps
            tt = _half_grid(t0, nsteps, dt_seg)
            eps = _drive_samples(p, schedule, tt, drive)
            w = np.zeros(tt.shape, dtype=complex)
            stack, traj, m_tr, m_top = _kernels.lindblad_rk4(
                stack, h_nh, c_arr, a_op, adag_op, eps, w, False,
                dt_seg, nsteps, store_every, top_idx,
            )
            max_tr = max(max_tr, m_tr)
            max_top = max(max_top, m_top)
            for k in range(1, traj.shape[0]):
                times_out.append(t0 + dt_seg * store_every * k)
                rhos_out.append(traj[k])
            if nsteps % store_every:
                times_out.append(t1)
                rhos_out.append(stack[0].copy())
        if gate is not None and schedule.ramsey_gates:
            u2 = gate_matrix(gate)
            u = np.kron(u2, np.eye(d // 2, dtype=complex))
            stack = np.ascontiguousarray(u @ stack @ dag(u))
            times_out.append(t1)
            rhos_out.append(stack[0].copy())
    _check_monitors(max_tr, max_top, TOP_LEVEL_MAX, "evolve")
    return Trajectory(
        np.array(times_out), np.array(rhos_out), model.dims, max_tr, max_top
    )


def correlator(
    model: LindbladModel,
    schedule: PulseSchedule,
    insertions,
    observable: np.ndarray,
    *,
    initial: Optional[QuantumState] = None,
    dt: Optional[float] = None,
    drive: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> complex:
    """Multi-time correlation by regression insertions.

    insertions is a sequence of (time, operator, side) with side 'left'
    (operator applied from the left at its time; annihilation-like slots)
    or 'right' (applied from the right; creation-like slots).  Times must
    be non-decreasing and inside [t_i, t_f].  Qubit rotations fire at
    their scheduled times; the observable is traced at t_f.
    """
    p = model.params
    if dt is None:
        dt = default_timestep(p, schedule.mode)
    d, c_arr, h_nh, a_op, adag_op, top_idx = _model_arrays(model)
    state = initial if initial is not None else model.ground_state()
    rho = state.rho.astype(complex)

    ins = list(insertions)
    t_prev = None
    for t, op, side in ins:
        _require(side in ("left", "right"), f"side must be left or right, got {side!r}")
        _require(schedule.t_i <= t <= schedule.t_f, "insertion time outside [t_i, t_f]")
        _require(t_prev is None or t >= t_prev, "insertion times must be ordered")
        _require(np.shape(op) == (d, d), "insertion operator dimension mismatch")
        t_prev = t

    t_start = _start_time(schedule)
    events = []
    if schedule.ramsey_gates:
        events.append((schedule.t_i, 0, "gate", gate_matrix("y90")))
        events.append((schedule.t_g, 0, "gate", gate_matrix("ym90")))
    for k, (t, op, side) in enumerate(ins):
        events.append((t, 1, side, np.asarray(op, dtype=complex)))
    events.sort(key=lambda ev: (ev[0], ev[1]))

    def run_to(rho, t0, t1):
        span = t1 - t0
        if span <= 1e-15:
            return rho
        nsteps = _segment_steps(span, dt)
        dt_seg = span / nsteps
        tt = _half_grid(t0, nsteps, dt_seg)
        eps = _drive_samples(p, schedule, tt, drive)
        w = np.zeros(tt.shape, dtype=complex)
        stack, _, _, _ = _kernels.lindblad_rk4(
            np.ascontiguousarray(rho[None, :, :]), h_nh, c_arr, a_op, adag_op,
            eps, w, False, dt_seg, nsteps, nsteps, top_idx,
        )
        return stack[0]

    t_cur = t_start
    for t_ev, _, kind, op in events:
        rho = run_to(rho, t_cur, t_ev)
        t_cur = t_ev
        if kind == "gate":
            u = np.kron(op, np.eye(d // 2, dtype=complex))
            rho = u @ rho @ dag(u)
        elif kind == "left":
            rho = op @ rho
        else:
            rho = rho @ op
    rho = run_to(rho, t_cur, schedule.t_f)
    return complex(np.trace(np.asarray(observable, dtype=complex) @ rho))


# ---------------------------------------------------------------------------
# linear (ground-pinned) reference and delay choice


def _linear_alpha(
    params: SystemParams,
    schedule: PulseSchedule,
    t0: float,
    t1: float,
    dt: float,
    drive: Optional[Callable] = None,
):
    """Scalar cavity amplitude with the qubit pinned in its ground state."""
    nsteps = _segment_steps(t1 - t0, dt)
    dt_seg = (t1 - t0) / nsteps
    tt = _half_grid(t0, nsteps, dt_seg)
    eps = _drive_samples(params, schedule, tt, drive)
    lam = -(1j * params.chi + params.kappa_tot / 2.0)
    alpha = np.empty(nsteps + 1, dtype=complex)
    alpha[0] = 0.0
    a = 0.0 + 0.0j
    for k in range(nsteps):
        j = 2 * k
        k1 = lam * a + eps[j]
        k2 = lam * (a + dt_seg / 2 * k1) + eps[j + 1]
        k3 = lam * (a + dt_seg / 2 * k2) + eps[j + 1]
        k4 = lam * (a + dt_seg * k3) + eps[j + 2]
        a = a + dt_seg / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        alpha[k + 1] = a
    t_full = t0 + np.arange(nsteps + 1) * dt_seg
    return t_full, alpha


def linear_reference(
    params: SystemParams,
    schedule: PulseSchedule,
    output_mode: TemporalMode,
    *,
    dt: Optional[float] = None,
) -> dict:
    """Mean output field of the ground-pinned linear cavity.

    Returns the windowed projection a_ref = <u, psi_out> over [t_i, t_f],
    the input-projection overlap o_f = <u, f_in(- .)>, and the gauge phase
    (the argument of a_ref, 0 for zero input).
    """
    if dt is None:
        dt = default_timestep(params, schedule.mode)
    t_start = _start_time(schedule)
    t_full, alpha = _linear_alpha(params, schedule, t_start, schedule.t_f, dt)
    beta = _drive_samples(params, schedule, t_full, None)
    if params.kappa_ex > 0:
        beta = beta / (-1j * math.sqrt(params.kappa_ex))
    psi_out = beta - 1j * math.sqrt(params.kappa_ex) * alpha
    sel = t_full >= schedule.t_i - 1e-15
    uu = _mode_u(output_mode, t_full[sel])
    a_ref = complex(np.trapezoid(np.conjugate(uu) * psi_out[sel], t_full[sel]))
    fin =schedule.mode.amplitude(-t_full[sel])
    off = schedule.mode.carrier_offset
    if off != 0.0:
        fin = fin * np.exp(-1j * off * t_full[sel])
    o_f = complex(np.trapezoid(np.conjugate(uu) * fin, t_full[sel]))
    phase = float(np.angle(a_ref)) if abs(a_ref) > 1e-300 else 0.0
    return {
        "times": t_full,
        "alpha_g": alpha,
        "psi_out": psi_out,
        "a_ref": a_ref,
        "o_f": o_f,
        "phase": phase,
    }


def optimize_delay(
    params: SystemParams, mode: TemporalMode, *, dt: Optional[float] = None
) -> float:
    """Delay of the projection mode maximizing captured reflected energy.

    Maximizes |<f(. - tau), psi_out>|^2 for the ground-pinned linear cavity
    over tau in [0, 5/kappa_ex] (bounded scalar search, ~1 ns resolution).
    """
    if params.kappa_ex <= 0:
        return 0.0
    if dt is None:
        dt = default_timestep(params, mode)
    t0 = float(mode.t[0])
    t1 = float(mode.t[-1]) + 5.0 / params.kappa_ex
    sched = PulseSchedule(t0, (t0 + t1) / 2, t1, mode, alpha_in=1.0, ramsey_gates=False)
    t_full, alpha = _linear_alpha(params, sched, t0, t1, dt)
    beta = mode.amplitude(-t_full)
    off = mode.carrier_offset
    if off != 0.0:
        beta = beta * np.exp(-1j * off * t_full)
    psi_out = beta - 1j * math.sqrt(params.kappa_ex) * alpha

    def negative_capture(tau: float) -> float:
        uu = mode.amplitude(tau - t_full)
        if off != 0.0:
            uu = uu * np.exp(-1j * off * t_full)
        return -abs(np.trapezoid(np.conjugate(uu) * psi_out, t_full)) ** 2

    res = minimize_scalar(
        negative_capture,
        bounds=(0.0, 5.0 / params.kappa_ex),
        method="bounded",
        options={"xatol": 1e-9},
    )
    return float(res.x)


# ---------------------------------------------------------------------------
# output-mode moments: regression ladder


def _resolve_output_mode(
    params: SystemParams,
    schedule: PulseSchedule,
    output_mode: Optional[TemporalMode],
    delay: Optional[float],
):
    if output_mode is not None:
        return output_mode, (delay if delay is not None else float("nan"))
    tau = delay if delay is not None else optimize_delay(params, schedule.mode)
    return schedule.mode.delayed(tau), tau


def _window_overlap(schedule: PulseSchedule, output_mode: TemporalMode, dt: float) -> complex:
    n = 4 * _segment_steps(schedule.t_f - schedule.t_i, dt) + 1
    tt = np.linspace(schedule.t_i, schedule.t_f, n)
    uu = _mode_u(output_mode, tt)
    fin = schedule.mode.amplitude(-tt)
    off = schedule.mode.carrier_offset
    if off != 0.0:
        fin = fin * np.exp(-1j * off * tt)
    return complex(np.trapezoid(np.conjugate(uu) * fin, tt))


def _assemble_a_moments(mb: np.ndarray, c: complex) -> np.ndarray:
    """Shift normally ordered ladder moments by the classical amplitude c."""
    out = np.zeros_like(mb)
    cbar = np.conjugate(c)
    for m in range(3):
        for n in range(3):
            acc = np.zeros(mb.shape[:2], dtype=complex)
            for j in range(m + 1):
                for k in range(n + 1):
                    acc += (
                        math.comb(m, j)
                        * math.comb(n, k)
                        * cbar ** (m - j)
                        * c ** (n - k)
                        * mb[:, :, j, k]
                    )
            out[:, :, m, n] = acc
    return out


def output_mode_moments(
    model: LindbladModel,
    schedule: PulseSchedule,
    *,
    output_mode: Optional[TemporalMode] = None,
    delay: Optional[float] = None,
    qubit_op: Optional[str] = None,
    max_order: int = 2,
    dt: Optional[float] = None,
    initial: Optional[QuantumState] = None,
) -> Union[MomentSet, dict]:
    """Qubit-resolved moments of the reflected temporal mode at t_f.

    Propagates a ladder of matrices sourced by ladder-operator insertions
    weighted with the projection-mode waveform (regression route), then
    shifts by the classical input amplitude.  With qubit_op given ("gg",
    "ge", "eg", "ee"), returns that operator's moment dictionary; otherwise
    the full MomentSet.
    """
    _require(0 <= max_order <= 2, "max_order must be 0, 1, or 2")
    p = model.params
    if dt is None:
        dt = default_timestep(p, schedule.mode)
    output_mode, tau = _resolve_output_mode(p, schedule, output_mode, delay)
    d, c_arr, h_nh, a_op, adag_op, top_idx = _model_arrays(model)
    state = initial if initial is not None else model.ground_state()
    stack = np.zeros((9, d, d), dtype=complex)
    stack[0] = state.rho
    stack = np.ascontiguousarray(stack)
    t_start = _start_time(schedule)
    sqrt_kex = math.sqrt(p.kappa_ex) if p.kappa_ex > 0 else 0.0
    max_tr = 0.0
    max_top = 0.0
    for t0, t1, gate in _segments(schedule, t_start):
        span = t1 - t0
        if span > 1e-15:
            nsteps = _segment_steps(span, dt)
            dt_seg = span / nsteps
            tt = _half_grid(t0, nsteps, dt_seg)
            eps = _drive_samples(p, schedule, tt, None)
            if t1 <= schedule.t_i + 1e-15:
                w = np.zeros(tt.shape, dtype=complex)
            else:
                w = -1j * sqrt_kex * np.conjugate(_mode_u(output_mode, tt))
            stack, _, m_tr, m_top = _kernels.lindblad_rk4(
                stack, h_nh, c_arr, a_op, adag_op, eps, w, True,
                dt_seg, nsteps, nsteps, top_idx,
            )
            max_tr = max(max_tr, m_tr)
            max_top = max(max_top, m_top)
        if gate is not None and schedule.ramsey_gates:
            u = np.kron(gate_matrix(gate), np.eye(d // 2, dtype=complex))
            stack = np.ascontiguousarray(u @ stack @ dag(u))
    _check_monitors(max_tr, max_top, TOP_LEVEL_MAX, "output_mode_moments")

    n_c = model.n_max + 1
    sig = {
        (pp, qq): np.kron(
            np.outer(np.eye(2)[:, pp], np.eye(2)[qq, :]), np.eye(n_c)
        ).astype(complex)
        for pp in range(2)
        for qq in range(2)
    }
    mb = np.zeros((2, 2, 3, 3), dtype=complex)
    for m in range(3):
        for n in range(3):
            node = stack[3 * m + n]
            fac = math.factorial(m) * math.factorial(n)
            for pp in range(2):
                for qq in range(2):
                    mb[pp, qq, m, n] = fac * np.trace(sig[(pp, qq)] @ node)
    o_f = _window_overlap(schedule, output_mode, dt)
    c = schedule.alpha_in * o_f
    moments = _assemble_a_moments(mb, c)
    if schedule.alpha_in != 0:
        phase = linear_reference(p, schedule, output_mode, dt=dt)["phase"]
    else:
        phase = 0.0
    ms = MomentSet(moments, c, o_f, phase, tau)
    if qubit_op is not None:
        return ms.as_dict(qubit_op)
    return ms


# ---------------------------------------------------------------------------
# capture-mode oracle


def capture_mode_oracle(
    model: LindbladModel,
    schedule: PulseSchedule,
    *,
    output_mode: Optional[TemporalMode] = None,
    delay: Optional[float] = None,
    qubit_op: Optional[str] = None,
    max_order: int = 2,
    dt: Optional[float] = None,
    dim_b: int = 7,
    eps_floor: float = 1e-6,
    initial: Optional[QuantumState] = None,
    return_state: bool = False,
) -> Union[MomentSet, dict, tuple]:
    """Independent route to the output-mode moments via an absorbing mode.

    Augments the system with an auxiliary resonator whose time-dependent
    coupling is shaped so it absorbs exactly the projection mode of the
    reflected field; at t_f the auxiliary-mode moments are read directly
    from the joint state.  The coupling denominator is floored at
    eps_floor of the windowed mode energy to regularize the leading tail.
    """
    _require(0 <= max_order <= 2, "max_order must be 0, 1, or 2")
    _require(dim_b >= 4, "capture mode needs at least 4 levels")
    p = model.params
    _require(p.kappa_ex > 0, "capture oracle needs an external port")
    if dt is None:
        dt = default_timestep(p, schedule.mode)
    output_mode, tau = _resolve_output_mode(p, schedule, output_mode, delay)
    n_c = model.n_max + 1
    db = dim_b
    d = 2 * n_c * db
    eye_q = np.eye(2, dtype=complex)
    eye_c = np.eye(n_c, dtype=complex)
    eye_b = np.eye(db, dtype=complex)
    a_full = np.kron(np.kron(eye_q, destroy(n_c)), eye_b)
    b_full = np.kron(np.kron(eye_q, eye_c), destroy(db))
    adag_full = dag(a_full)
    bdag_full = dag(b_full)
    h_ext = np.kron(model.H, eye_b)
    c_list = []
    if p.kappa_in > 0:
        c_list.append(math.sqrt(p.kappa_in) * a_full)
    g1, g2, gphi = p.gamma_1, p.gamma_2, max(p.gamma_phi, 0.0)
    if g1 > 0:
        c_list.append(math.sqrt(g1) * np.kron(np.kron(SIGMA_MINUS, eye_c), eye_b))
    if g2 > 0:
        c_list.append(math.sqrt(g2) * np.kron(np.kron(SIGMA_PLUS, eye_c), eye_b))
    if gphi > 0:
        see = np.diag([0.0, 1.0]).astype(complex)
        c_list.append(math.sqrt(2 * gphi) * np.kron(np.kron(see, eye_c), eye_b))
    if c_list:
        c_const = np.ascontiguousarray(np.array(c_list, dtype=complex))
    else:
        c_const = np.zeros((0, d, d), dtype=complex)
    sum_cc = np.zeros((d, d), dtype=complex)
    for i in range(c_const.shape[0]):
        sum_cc += dag(c_const[i]) @ c_const[i]
    sqrt_kex = math.sqrt(p.kappa_ex)
    k_const = np.ascontiguousarray(
        h_ext - 0.5j * (sum_cc + p.kappa_ex * (adag_full @ a_full))
    )
    c0 = np.ascontiguousarray(-1j * sqrt_kex * a_full)

    if initial is not None:
        _require(initial.rho.shape[0] == 2 * n_c, "initial state dimension mismatch")
        rho = np.kron(initial.rho, np.diag(np.eye(db)[0]).astype(complex))
    else:
        rho = np.zeros((d, d), dtype=complex)
        rho[0, 0] = 1.0
    rho = np.ascontiguousarray(rho.astype(complex))

    # fine-grid mode energy and coupling magnitude inside the window
    t_start = _start_time(schedule)
    n_fine = 64 * _segment_steps(schedule.t_f - schedule.t_i, dt) + 1
    t_fine = np.linspace(schedule.t_i, schedule.t_f, n_fine)
    u_fine = _mode_u(output_mode, t_fine)
    inten = np.abs(u_fine) ** 2
    cum = np.concatenate(
        [[0.0], np.cumsum((inten[1:] + inten[:-1]) / 2 * np.diff(t_fine))]
    )
    energy = float(cum[-1])
    _require(energy > 0, "projection mode carries no energy inside the window")
    f_fine = eps_floor * energy + cum
    g2_fine = inten / f_fine

    def f_interp(times):
        return np.interp(times, t_fine, f_fine)

    def stage_arrays(t0, nsteps, dt_seg, in_window):
        nsub = np.empty(nsteps, dtype=np.int64)
        if in_window:
            edges = t0 + np.arange(nsteps + 1) * dt_seg
            for k in range(nsteps):
                lo = np.searchsorted(t_fine, edges[k] - 1e-15)
                hi = np.searchsorted(t_fine, edges[k + 1] + 1e-15)
                gmax = float(g2_fine[lo:hi].max()) if hi > lo else 0.0
                nsub[k] = min(256, max(1, int(math.ceil(dt_seg * gmax / 2.0))))
        else:
            nsub[:] = 1
        offsets = np.zeros(nsteps, dtype=np.int64)
        acc = 0
        for k in range(nsteps):
            offsets[k] = acc
            acc += 2 * int(nsub[k]) + 1
        gt = np.zeros(acc, dtype=complex)
        beta = np.zeros(acc, dtype=complex)
        for k in range(nsteps):
            ns = int(nsub[k])
            ts = t0 + k * dt_seg + np.arange(2 * ns + 1) * (dt_seg / (2 * ns))
            o = int(offsets[k])
            if schedule.alpha_in != 0:
                bamp = schedule.mode.amplitude(-ts)
                off = schedule.mode.carrier_offset
                if off != 0.0:
                    bamp = bamp * np.exp(-1j * off * ts)
                beta[o:o + 2 * ns + 1] = schedule.alpha_in * bamp
            if in_window:
                us = _mode_u(output_mode, ts)
                gt[o:o + 2 * ns + 1] = -us / np.sqrt(f_interp(ts))
        return gt, beta, offsets, nsub

    cav_idx = np.array(
        [(q * n_c + (n_c - 1)) * db + m for q in range(2) for m in range(db)],
        dtype=np.int64,
    )
    b_idx = np.array(
        [(q * n_c + n) * db + (db - 1) for q in range(2) for n in range(n_c)],
        dtype=np.int64,
    )
    max_tr = 0.0
    max_cav = 0.0
    max_b = 0.0
    for t0, t1, gate in _segments(schedule, t_start):
        span = t1 - t0
        if span > 1e-15:
            nsteps = _segment_steps(span, dt)
            dt_seg = span / nsteps
            in_window = t1 > schedule.t_i + 1e-15
            gt, beta, offsets, nsub = stage_arrays(t0, nsteps, dt_seg, in_window)
            rho, m_tr, m_cav, m_b = _kernels.capture_rk4(
                rho, k_const, c_const, a_full, adag_full, b_full, bdag_full,
                np.ascontiguousarray(bdag_full @ a_full),
                np.ascontiguousarray(bdag_full @ b_full),
                c0, sqrt_kex, gt, beta, offsets, nsub, dt_seg, cav_idx, b_idx,
            )
            rho = np.ascontiguousarray(rho)
            max_tr = max(max_tr, m_tr)
            max_cav = max(max_cav, m_cav)
            max_b = max(max_b, m_b)
        if gate is not None and schedule.ramsey_gates:
            u = np.kron(gate_matrix(gate), np.eye(n_c * db, dtype=complex))
            rho = np.ascontiguousarray(u @ rho @ dag(u))
    _check_monitors(max_tr, max_cav, TOP_LEVEL_MAX, "capture_mode_oracle")
    if max_b > CAPTURE_TOP_MAX:
        raise RuntimeError(
            f"capture_mode_oracle: capture-mode top population {max_b:.3e} "
            f"exceeds {CAPTURE_TOP_MAX:.0e}; raise dim_b"
        )

    f_final = eps_floor * energy + energy
    scale = math.sqrt(f_final)
    sig = {
        (pp, qq): np.kron(
            np.kron(np.outer(eye_q[:, pp], eye_q[qq, :]), eye_c), eye_b
        )
        for pp in range(2)
        for qq in range(2)
    }
    bpow = [np.eye(d, dtype=complex), b_full, b_full @ b_full]
    bdpow = [np.eye(d, dtype=complex), bdag_full, bdag_full @ bdag_full]
    moments = np.zeros((2, 2, 3, 3), dtype=complex)
    for m in range(3):
        for n in range(3):
            op = bdpow[m] @ bpow[n]
            for pp in range(2):
                for qq in range(2):
                    moments[pp, qq, m, n] = (
                        np.trace(sig[(pp, qq)] @ op @ rho) * scale ** (m + n)
                    )
    o_f = _window_overlap(schedule, output_mode, dt)
    c = schedule.alpha_in * o_f
    if schedule.alpha_in != 0:
        phase = linear_reference(p, schedule, output_mode, dt=dt)["phase"]
    else:
        phase = 0.0
    ms = MomentSet(moments, c, o_f, phase, tau)
    if return_state:
        return ms, QuantumState(rho, (2, n_c, db))
    if qubit_op is not None:
        return ms.as_dict(qubit_op)
    return ms
