"""Linear small-signal model of one grid-following converter.

The converter tracks the terminal voltage angle with a PLL, regulates
its filter current with decoupled PI loops in the PLL frame, and drives
the current references from active/reactive power PI loops that act on
the power injected into the grid at the terminal.  The linearization
keeps the controller-frame vs. grid-frame rotation terms exactly; these
are what make weak-grid synchronization limits visible.  Voltage
feedforward applies the filtered voltage magnitude (d axis of the
tracking frame) only; feeding the angle-sensitive q component forward
would cancel most of the synchronization coupling the analysis is
after.

The 2x2 frequency response exposed to the margin analysis maps
normalized terminal-voltage deviations (U^-1 dU, d_delta) to the power
mismatch they create, i.e. the negative of the injected-power response
with references held fixed.  With that orientation the grid feedback
loop closes as inv(J_cig) @ J_net and the sensitivity peak measures the
distance to synchronization instability.  The filter capacitor
contributes its reactive support to the injection and, in the frequency
response, a direct feedthrough growing with s that keeps the loop
well-posed at high frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .base import SystemBase

_J2 = np.array([[0.0, -1.0], [1.0, 0.0]])

# Damping ratio of the angle-tracking loop.  Lightly damped: the loop
# natural frequency sits at the named bandwidth and the resulting
# tracking resonance is what couples with weak grids in the 10..15 Hz
# band, matching observed converter behavior.
PLL_DAMPING = 0.32


class FrequencyEvalError(RuntimeError):
    """Resolvent evaluation failed at a grid frequency."""


def _cmul(z: complex) -> np.ndarray:
    """2x2 real matrix acting on [re, im] as multiplication by z."""
    return np.array([[z.real, -z.imag], [z.imag, z.real]])


def _rot(angle: float) -> np.ndarray:
    return _cmul(complex(math.cos(angle), math.sin(angle)))


def pll_gains_from_bandwidth(bw_hz: float, zeta: float | None = None) -> tuple[float, float]:
    """PI gains (kp, ki) of the angle-tracking loop.

    The loop natural frequency is placed at 2*pi*bw_hz and the damping
    at ``zeta`` (module default when omitted), giving kp = 2*zeta*wn and
    ki = wn^2.
    """
    if bw_hz <= 0.0:
        raise ValueError("PLL bandwidth must be positive")
    if zeta is None:
        zeta = PLL_DAMPING
    wn = 2.0 * math.pi * bw_hz
    return 2.0 * zeta * wn, wn**2


@dataclass(frozen=True)
class ConverterParams:
    """Control gains and filter values of one converter (per unit, SI time)."""

    l_f: float = 0.05
    c_f: float = 0.05
    r_f: float = 0.02
    kp_i: float = 0.3
    ki_i: float = 10.0
    kp_p: float = 1.0
    ki_p: float = 20.0
    kp_q: float = 1.0
    ki_q: float = 20.0
    pll_bw_hz: float = 15.0
    t_vff: float = 0.002
    c_dc: float = 0.038  # retained for config fidelity; no dc-side dynamics
    p_rated: float = 1.0

    def __post_init__(self) -> None:
        if self.l_f <= 0.0:
            raise ValueError("filter inductance must be positive")
        if self.pll_bw_hz <= 0.0:
            raise ValueError("PLL bandwidth must be positive")
        for name in ("kp_i", "ki_i", "kp_p", "ki_p", "kp_q", "ki_q", "r_f", "c_f", "t_vff"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"converter parameter {name} must be non-negative")


@dataclass(frozen=True)
class ConverterModel:
    """State-space linearization of one converter at an operating point.

    ``a, b, c, d`` use input order (U^-1 dU, d_delta, dP_ref, dQ_ref) and
    output order (dP, dQ), powers being the injection into the grid at
    the terminal (capacitor reactive support included, up to the
    derivative feedthrough that only exists in the frequency response).
    ``sim_b_voltage`` / ``sim_c_current`` expose the cartesian DQ voltage
    inputs and converter-current outputs used by the closed-loop
    time-domain assembly.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    sim_b_voltage: np.ndarray
    sim_b_ref: np.ndarray
    sim_c_current: np.ndarray
    sim_d_power_voltage: np.ndarray
    state_labels: tuple[str, ...]
    params: ConverterParams
    op: tuple[float, float, float, float]
    omega0: float

    @property
    def n_states(self) -> int:
        return self.a.shape[0]


def linearize_converter(
    params: ConverterParams,
    p: float,
    q: float,
    u: float,
    delta: float,
    base: SystemBase,
) -> ConverterModel:
    """Linearize the converter control scheme at (P, Q, U, delta).

    (P, Q) is the power injected into the grid at the terminal; the
    converter current source carries the filter-capacitor current on
    top of the grid injection, and the power loops regulate the grid
    injection itself.
    """
    if u <= 0.0:
        raise ValueError("terminal voltage magnitude must be positive")
    w0 = base.omega0
    lf, rf, cf = params.l_f, params.r_f, params.c_f
    kp_pll, ki_pll = pll_gains_from_bandwidth(params.pll_bw_hz)

    u0 = u * np.exp(1j * delta)
    s0 = complex(p, q)
    i_net0 = np.conj(s0 / u0)
    i_l0 = i_net0 + 1j * cf * u0  # converter current feeds the filter capacitor too
    i_l0c = i_l0 * np.exp(-1j * delta)
    vm0c = u + (rf + 1j * lf) * i_l0c

    use_vff_state = params.t_vff > 0.0
    labels = ["i_d", "i_q", "theta_pll", "x_pll", "xi_id", "xi_iq", "zeta_p", "zeta_q"]
    if use_vff_state:
        labels.append("vff_d")
    nx = len(labels)
    nu = 4  # u_D, u_Q, P_ref, Q_ref (cartesian voltage while assembling)
    ix = {name: k for k, name in enumerate(labels)}

    def sig(*pairs: tuple[int, float]) -> np.ndarray:
        row = np.zeros((1, nx + nu))
        for col, val in pairs:
            row[0, col] += val
        return row

    def usig(k: int) -> np.ndarray:
        return sig((nx + k, 1.0))

    i_vec = np.vstack([sig((ix["i_d"], 1.0)), sig((ix["i_q"], 1.0))])
    u_vec = np.vstack([usig(0), usig(1)])
    theta = sig((ix["theta_pll"], 1.0))
    p_ref = usig(2)
    q_ref = usig(3)

    rot_neg = _rot(-delta)
    # PLL-frame terminal voltage and converter current deviations
    u_c = rot_neg @ u_vec + np.vstack([0.0 * theta, -u * theta])
    i_c = rot_neg @ i_vec + np.vstack([i_l0c.imag * theta, -i_l0c.real * theta])
    eps = u_c[1:2] / u

    # Power injected into the grid: converter power minus capacitor draw.
    # The capacitor's derivative terms cannot live in a proper state
    # space; they are added analytically in the frequency response.
    p_meas = (
        u0.real * i_vec[0:1]
        + u0.imag * i_vec[1:2]
        + i_l0.real * u_vec[0:1]
        + i_l0.imag * u_vec[1:2]
    )
    q_meas = (
        u0.imag * i_vec[0:1]
        - u0.real * i_vec[1:2]
        + i_l0.real * u_vec[1:2]
        - i_l0.imag * u_vec[0:1]
        + 2.0 * cf * (u0.real * u_vec[0:1] + u0.imag * u_vec[1:2])
    )

    # Outer power loops -> current references (PLL frame)
    id_ref = params.kp_p * (p_ref - p_meas) + params.ki_p * sig((ix["zeta_p"], 1.0))
    iq_ref = -params.kp_q * (q_ref - q_meas) - params.ki_q * sig((ix["zeta_q"], 1.0))
    i_ref = np.vstack([id_ref, iq_ref])

    # Voltage-magnitude feedforward (filtered d-axis terminal voltage)
    if use_vff_state:
        vff_d = sig((ix["vff_d"], 1.0))
    else:
        vff_d = u_c[0:1]

    # Current PI with nominal-frequency decoupling
    xi = np.vstack([sig((ix["xi_id"], 1.0)), sig((ix["xi_iq"], 1.0))])
    vm_c = (
        params.kp_i * (i_ref - i_c)
        + params.ki_i * xi
        + lf * (_J2 @ i_c)
        + np.vstack([vff_d, 0.0 * theta])
    )
    vm0 = vm0c * np.exp(1j * delta)
    vm = _rot(delta) @ vm_c + np.vstack([-vm0.imag * theta, vm0.real * theta])

    rows = np.zeros((nx, nx + nu))
    rows[[ix["i_d"], ix["i_q"]], :] = (w0 / lf) * (vm - u_vec - rf * i_vec - lf * (_J2 @ i_vec))
    rows[ix["theta_pll"], :] = kp_pll * eps + ki_pll * sig((ix["x_pll"], 1.0))
    rows[ix["x_pll"], :] = eps
    rows[[ix["xi_id"], ix["xi_iq"]], :] = i_ref - i_c
    rows[ix["zeta_p"], :] = p_ref - p_meas
    rows[ix["zeta_q"], :] = q_ref - q_meas
    if use_vff_state:
        rows[ix["vff_d"], :] = (u_c[0:1] - vff_d) / params.t_vff

    a = rows[:, :nx]
    b_cart = rows[:, nx:]
    c_power = np.vstack([p_meas, q_meas])[:, :nx]
    d_power_cart = np.vstack([p_meas, q_meas])[:, nx:]

    # Repackage the voltage channel in polar form (U^-1 dU, d_delta)
    to_cart = u * _rot(delta)
    b = np.hstack([b_cart[:, :2] @ to_cart, b_cart[:, 2:]])
    d = np.hstack([d_power_cart[:, :2] @ to_cart, d_power_cart[:, 2:]])

    return ConverterModel(
        a=a,
        b=b,
        c=c_power,
        d=d,
        sim_b_voltage=b_cart[:, :2],
        sim_b_ref=b_cart[:, 2:],
        sim_c_current=np.eye(2, nx),
        sim_d_power_voltage=d_power_cart[:, :2],
        state_labels=tuple(labels),
        params=params,
        op=(float(p), float(q), float(u), float(delta)),
        omega0=w0,
    )


@dataclass(frozen=True)
class FreqResponse2x2:
    """A 2x2 complex matrix sampled on an ascending frequency grid.

    ``fn``, when present, evaluates the underlying model exactly at any
    point of the s-plane; sampled-only responses (imported scans) fall
    back to log-frequency interpolation on the imaginary axis.
    """

    omegas: np.ndarray
    values: np.ndarray
    fn: Callable[[complex], np.ndarray] | None = None

    def __post_init__(self) -> None:
        om = np.asarray(self.omegas, dtype=float)
        vals = np.asarray(self.values, dtype=complex)
        if om.ndim != 1 or np.any(np.diff(om) <= 0.0) or np.any(om <= 0.0):
            raise ValueError("frequency grid must be positive and strictly ascending")
        if vals.shape != (len(om), 2, 2):
            raise ValueError("values must have shape (n_freq, 2, 2)")
        if not np.all(np.isfinite(np.abs(vals))):
            raise ValueError("frequency response contains non-finite entries")
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "values", vals)

    def at(self, s: complex) -> np.ndarray:
        """Evaluate at one point (exactly if possible, else interpolate)."""
        if self.fn is not None:
            return self.fn(s)
        s = complex(s)
        if abs(s.real) > 1e-12 * max(abs(s.imag), 1.0):
            raise ValueError("sampled-only response can only be evaluated on the jw axis")
        w = abs(s.imag)
        lw = np.log(np.clip(w, self.omegas[0], self.omegas[-1]))
        lg = np.log(self.omegas)
        flat = self.values.reshape(len(self.omegas), 4)
        out = np.empty(4, dtype=complex)
        for k in range(4):
            out[k] = np.interp(lw, lg, flat[:, k].real) + 1j * np.interp(lw, lg, flat[:, k].imag)
        mat = out.reshape(2, 2)
        return mat if s.imag >= 0 else np.conj(mat)

    def resampled(self, omegas: np.ndarray) -> "FreqResponse2x2":
        vals = np.stack([self.at(1j * w) for w in omegas])
        return FreqResponse2x2(np.asarray(omegas, float), vals, fn=self.fn)


def _jcig_fn(model: ConverterModel) -> Callable[[complex], np.ndarray]:
    a = model.a
    b_v = model.b[:, :2]
    c = model.c
    d_v = model.d[:, :2]
    eye = np.eye(a.shape[0])
    cf = model.params.c_f
    u = model.op[2]
    cap_gain = cf * u * u / model.omega0

    def fn(s: complex) -> np.ndarray:
        try:
            x = np.linalg.solve(s * eye - a, b_v)
        except np.linalg.LinAlgError as exc:
            raise FrequencyEvalError(f"converter resolvent is singular at s = {s:.6g}") from exc
        resp = c @ x + d_v
        # capacitor derivative feedthrough on the injected power
        resp = resp - s * cap_gain * np.array([[1.0, 0.0], [0.0, -1.0]])
        return -resp

    return fn


def eval_jcig(model: ConverterModel, omegas: Sequence[float] | np.ndarray) -> FreqResponse2x2:
    """Grid-loop-oriented converter Jacobian on a frequency grid.

    Entries are C (jw I - A)^-1 B + D on the voltage channel plus the
    capacitor feedthrough, negated to the power-mismatch orientation
    used by the feedback analysis.
    """
    om = np.asarray(omegas, dtype=float)
    fn = _jcig_fn(model)
    vals = np.stack([fn(1j * w) for w in om])
    finite = np.all(np.isfinite(np.abs(vals)), axis=(1, 2))
    if not np.all(finite):
        bad = om[~finite][0]
        raise FrequencyEvalError(f"non-finite converter response at {bad / (2 * np.pi):.6g} Hz")
    return FreqResponse2x2(om, vals, fn=fn)


def complexify_2x2(mat: np.ndarray, phi: float, s_apparent: float) -> np.ndarray:
    """Transform one 2x2 response to normalized complex power coordinates."""
    t_phi = np.array([[math.cos(phi), math.sin(phi)], [-math.sin(phi), math.cos(phi)]]) / s_apparent
    t_j = np.array([[1.0, 1j], [1.0, -1j]]) / math.sqrt(2.0)
    return t_j @ (t_phi @ mat) @ t_j.conj().T


def to_complex_jcig(resp: FreqResponse2x2, p: float, q: float) -> FreqResponse2x2:
    """Converter Jacobian in normalized complex power/voltage coordinates.

    Needs the converter's operating power to normalize rows by apparent
    power and rotate by the power-factor angle.
    """
    s_app = math.hypot(p, q)
    if s_app == 0.0:
        raise ValueError("zero apparent power: complex transform undefined")
    phi = math.atan2(q, p)
    vals = np.stack([complexify_2x2(m, phi, s_app) for m in resp.values])
    fn = None
    if resp.fn is not None:
        base_fn = resp.fn

        def fn(s: complex) -> np.ndarray:
            return complexify_2x2(base_fn(s), phi, s_app)

    return FreqResponse2x2(resp.omegas, vals, fn=fn)


def default_frequency_grid(
    n: int = 400, f_min_hz: float = 0.01, f_max_hz: float = 2000.0
) -> np.ndarray:
    """Log-spaced angular frequency grid spanning the quasi-static range
    through the nominal-frequency sidebands."""
    if not (0 < f_min_hz < f_max_hz):
        raise ValueError("need 0 < f_min_hz < f_max_hz")
    return 2.0 * np.pi * np.geomspace(f_min_hz, f_max_hz, n)


def export_response_csv(path: str, resp: FreqResponse2x2) -> None:
    """Write a response as CSV (f_Hz, then Re/Im of the four entries)."""
    header = "f_hz,re_pp,im_pp,re_pd,im_pd,re_qp,im_qp,re_qd,im_qd"
    rows = []
    for w, m in zip(resp.omegas, resp.values):
        flat = m.reshape(4)
        rows.append([w / (2 * np.pi)] + [x for z in flat for x in (z.real, z.imag)])
    np.savetxt(path, np.asarray(rows), delimiter=",", header=header, comments="")


def load_response_csv(path: str) -> FreqResponse2x2:
    """Read a converter frequency scan written by ``export_response_csv``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 9:
        raise ValueError("expected 9 columns: f_hz plus Re/Im of four entries")
    om = 2.0 * np.pi * data[:, 0]
    vals = (data[:, 1::2] + 1j * data[:, 2::2]).reshape(-1, 2, 2)
    return FreqResponse2x2(om, vals)
