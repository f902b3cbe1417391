"""Electrical network model.

Builds the lossless susceptance Laplacian over the converter buses
(interior buses eliminated by Kron reduction, infinite-bus ties and
shunt loads folded into the diagonal), solves the lossy AC power flow,
and dresses the result into the complex matrices used by the zero and
margin analysis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .base import SystemBase

BUS_KINDS = ("converter", "interior", "infinite")


class NetworkError(ValueError):
    """Ill-formed network description."""


class PowerFlowError(RuntimeError):
    """The power flow has no acceptable solution (itself a voltage-stability signal)."""


@dataclass(frozen=True)
class Bus:
    """One node of the grid.  ``e`` is the held voltage of an infinite bus."""

    id: int
    kind: str
    e: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in BUS_KINDS:
            raise NetworkError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.kind == "infinite" and self.e <= 0.0:
            raise NetworkError(f"bus {self.id}: infinite-bus voltage must be positive")


@dataclass(frozen=True)
class Branch:
    """Series r + jx element between two buses (per unit)."""

    from_bus: int
    to_bus: int
    r: float
    x: float

    def __post_init__(self) -> None:
        if self.x <= 0.0:
            raise NetworkError(
                f"branch {self.from_bus}-{self.to_bus}: reactance must be positive"
            )
        if self.r < 0.0:
            raise NetworkError(
                f"branch {self.from_bus}-{self.to_bus}: negative resistance"
            )

    @property
    def impedance(self) -> complex:
        return complex(self.r, self.x)


@dataclass(frozen=True)
class Shunt:
    """Constant-impedance shunt element.

    Either a series ``r + jx`` load to ground, or a pure susceptance
    when ``b`` is given (positive = inductive, negative = capacitive).
    """

    bus: int
    r: float = 0.0
    x: float = 0.0
    b: float | None = None

    def __post_init__(self) -> None:
        if self.b is None and self.r == 0.0 and self.x == 0.0:
            raise NetworkError(f"shunt at bus {self.bus}: zero impedance")

    @property
    def admittance(self) -> complex:
        if self.b is not None:
            return complex(0.0, -self.b)
        return 1.0 / complex(self.r, self.x)

    @property
    def susceptance_to_ground(self) -> float:
        """Contribution to the Laplacian diagonal (loads keep only Im of y)."""
        return -self.admittance.imag


@dataclass(frozen=True)
class NetworkSpec:
    """Raw grid description: buses, series branches and shunts."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    shunts: tuple[Shunt, ...] = ()

    def __post_init__(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate bus ids")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise NetworkError(
                    f"branch {br.from_bus}-{br.to_bus} references an unknown bus"
                )
            if br.from_bus == br.to_bus:
                raise NetworkError(f"branch at bus {br.from_bus} loops on itself")
        for sh in self.shunts:
            if sh.bus not in known:
                raise NetworkError(f"shunt references unknown bus {sh.bus}")
        if not self.converter_buses:
            raise NetworkError("network has no converter bus")
        self._check_connected()

    def _check_connected(self) -> None:
        adjacency: dict[int, set[int]] = {b.id: set() for b in self.buses}
        for br in self.branches:
            adjacency[br.from_bus].add(br.to_bus)
            adjacency[br.to_bus].add(br.from_bus)
        seen = {self.buses[0].id}
        stack = [self.buses[0].id]
        while stack:
            for nxt in adjacency[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        missing = sorted(set(b.id for b in self.buses) - seen)
        if missing:
            raise NetworkError(f"network graph is disconnected (unreachable buses {missing})")

    @property
    def converter_buses(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses if b.kind == "converter")

    @property
    def interior_buses(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses if b.kind == "interior")

    @property
    def infinite_buses(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses if b.kind == "infinite")

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise NetworkError(f"unknown bus {bus_id}")

    def shunts_at(self, bus_id: int) -> tuple[Shunt, ...]:
        return tuple(s for s in self.shunts if s.bus == bus_id)


@dataclass(frozen=True)
class SusceptanceLaplacian:
    """Grounded susceptance Laplacian over the converter buses (p.u.)."""

    b: np.ndarray
    buses: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.buses)


def build_laplacian(net: NetworkSpec) -> SusceptanceLaplacian:
    """Reduce the lossless susceptance matrix to the converter buses.

    Branch resistances are dropped (weak-grid lines have R << X), shunt
    loads contribute the imaginary part of their admittance, and ties to
    infinite buses become grounded diagonal terms.  Interior buses are
    eliminated by Kron reduction.
    """
    finite = [b.id for b in net.buses if b.kind != "infinite"]
    index = {bus_id: k for k, bus_id in enumerate(finite)}
    infinite = set(net.infinite_buses)
    n_all = len(finite)
    full = np.zeros((n_all, n_all))
    for br in net.branches:
        b_line = 1.0 / br.x
        i_inf = br.from_bus in infinite
        j_inf = br.to_bus in infinite
        if i_inf and j_inf:
            continue
        if i_inf or j_inf:
            k = index[br.to_bus if i_inf else br.from_bus]
            full[k, k] += b_line
            continue
        i, j = index[br.from_bus], index[br.to_bus]
        full[i, i] += b_line
        full[j, j] += b_line
        full[i, j] -= b_line
        full[j, i] -= b_line
    for sh in net.shunts:
        if sh.bus in infinite:
            continue
        full[index[sh.bus], index[sh.bus]] += sh.susceptance_to_ground

    conv = [index[b] for b in net.converter_buses]
    intr = [index[b] for b in net.interior_buses]
    b_cc = full[np.ix_(conv, conv)]
    if intr:
        b_ii = full[np.ix_(intr, intr)]
        b_ci = full[np.ix_(conv, intr)]
        try:
            reduced = b_cc - b_ci @ np.linalg.solve(b_ii, b_ci.T)
        except np.linalg.LinAlgError as exc:
            raise NetworkError(
                "Kron reduction failed: interior susceptance block is singular "
                "(some interior bus has no path to ground or an infinite bus)"
            ) from exc
    else:
        reduced = b_cc.copy()
    reduced = 0.5 * (reduced + reduced.T)

    eigmin = float(np.linalg.eigvalsh(reduced).min())
    if eigmin <= 0.0:
        raise NetworkError(
            "susceptance Laplacian is not positive definite "
            f"(min eigenvalue {eigmin:.3e}); a converter bus lacks a path to "
            "ground or an infinite bus"
        )
    return SusceptanceLaplacian(b=reduced, buses=net.converter_buses)


@dataclass(frozen=True)
class OperatingPoint:
    """Converter-bus linearization point: (P, Q, U, delta) per bus, p.u. / rad.

    Apparent power may be zero here (a legitimate no-load flow result);
    the dressing step rejects such points because the zero analysis
    needs S_i > 0.
    """

    buses: tuple[int, ...]
    p: np.ndarray
    q: np.ndarray
    u: np.ndarray
    delta: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.buses)
        for name in ("p", "q", "u", "delta"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"operating point field {name!r} must have shape ({n},)")
            object.__setattr__(self, name, arr)
        if np.any(self.u <= 0.0):
            raise ValueError("operating point has a non-positive voltage magnitude")

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def s(self) -> np.ndarray:
        """Apparent power magnitudes."""
        return np.hypot(self.p, self.q)

    def at_bus(self, bus_id: int) -> tuple[float, float, float, float]:
        k = self.buses.index(bus_id)
        return float(self.p[k]), float(self.q[k]), float(self.u[k]), float(self.delta[k])


@dataclass(frozen=True)
class PQInjection:
    bus: int
    p: float
    q: float


@dataclass(frozen=True)
class PUInjection:
    bus: int
    p: float
    u: float

    def __post_init__(self) -> None:
        if self.u <= 0.0:
            raise ValueError(f"bus {self.bus}: held voltage must be positive")


Injection = PQInjection | PUInjection


def _ybus(net: NetworkSpec) -> tuple[list[int], np.ndarray]:
    """Full lossy nodal admittance matrix (loads included as shunts)."""
    ids = [b.id for b in net.buses]
    index = {bus_id: k for k, bus_id in enumerate(ids)}
    n = len(ids)
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        y_series = 1.0 / br.impedance
        i, j = index[br.from_bus], index[br.to_bus]
        y[i, i] += y_series
        y[j, j] += y_series
        y[i, j] -= y_series
        y[j, i] -= y_series
    for sh in net.shunts:
        k = index[sh.bus]
        y[k, k] += sh.admittance
    return ids, y


def solve_powerflow(
    net: NetworkSpec,
    injections: Sequence[Injection] | Mapping[int, Injection],
    tol: float = 1e-8,
    max_iter: int = 50,
) -> OperatingPoint:
    """Newton power flow on the full lossy network.

    Converter buses carry the given (P, Q) or (P, U) injections,
    interior buses are zero-injection, the single infinite bus is the
    slack.  Returns the converter-bus operating point; the residual
    infinity norm of the converged solution is below ``tol``.
    """
    if isinstance(injections, Mapping):
        injections = list(injections.values())
    inj_by_bus = {inj.bus: inj for inj in injections}
    if len(inj_by_bus) != len(injections):
        raise NetworkError("duplicate injection entries")
    conv = set(net.converter_buses)
    if set(inj_by_bus) != conv:
        raise NetworkError(
            "injections must cover exactly the converter buses "
            f"{sorted(conv)}, got {sorted(inj_by_bus)}"
        )
    if len(net.infinite_buses) != 1:
        raise NetworkError("power flow needs exactly one infinite (slack) bus")

    ids, y = _ybus(net)
    index = {bus_id: k for k, bus_id in enumerate(ids)}
    n = len(ids)
    g, b = y.real, y.imag

    slack = index[net.infinite_buses[0]]
    pv = sorted(index[bid] for bid, inj in inj_by_bus.items() if isinstance(inj, PUInjection))
    pq = sorted(k for k in range(n) if k != slack and k not in pv)
    non_slack = sorted(pq + pv)

    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    v = np.ones(n)
    th = np.zeros(n)
    v[slack] = net.bus(ids[slack]).e
    for bid, inj in inj_by_bus.items():
        k = index[bid]
        p_spec[k] = inj.p
        if isinstance(inj, PQInjection):
            q_spec[k] = inj.q
        else:
            v[k] = inj.u

    def calc_pq(v: np.ndarray, th: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        vc = v * np.exp(1j * th)
        s = vc * np.conj(y @ vc)
        return s.real, s.imag

    for _ in range(max_iter):
        p_calc, q_calc = calc_pq(v, th)
        mis_p = p_spec[non_slack] - p_calc[non_slack]
        mis_q = q_spec[pq] - q_calc[pq]
        mismatch = np.concatenate([mis_p, mis_q])
        if np.max(np.abs(mismatch)) < tol:
            break

        # Polar-coordinate Jacobian, dense (networks here are small).
        cos_th = np.cos(th[:, None] - th[None, :])
        sin_th = np.sin(th[:, None] - th[None, :])
        vv = np.outer(v, v)
        dp_dth = vv * (g * sin_th - b * cos_th)
        np.fill_diagonal(dp_dth, -q_calc - b.diagonal() * v**2)
        dp_dv = v[:, None] * (g * cos_th + b * sin_th)
        np.fill_diagonal(dp_dv, p_calc / v + g.diagonal() * v)
        dq_dth = -vv * (g * cos_th + b * sin_th)
        np.fill_diagonal(dq_dth, p_calc - g.diagonal() * v**2)
        dq_dv = v[:, None] * (g * sin_th - b * cos_th)
        np.fill_diagonal(dq_dv, q_calc / v - b.diagonal() * v)

        jac = np.block(
            [
                [dp_dth[np.ix_(non_slack, non_slack)], dp_dv[np.ix_(non_slack, pq)]],
                [dq_dth[np.ix_(pq, non_slack)], dq_dv[np.ix_(pq, pq)]],
            ]
        )
        try:
            step = np.linalg.solve(jac, mismatch)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(
                "no equilibrium: singular power-flow Jacobian at an iterate"
            ) from exc
        if not np.all(np.isfinite(step)):
            raise PowerFlowError("no equilibrium: power-flow iteration diverged")
        th[non_slack] += step[: len(non_slack)]
        v[pq] += step[len(non_slack) :]
        if np.any(v[pq] <= 0.0):
            raise PowerFlowError("no equilibrium: voltage collapsed below zero during iteration")
    else:
        raise PowerFlowError(
            f"no equilibrium: power flow did not converge in {max_iter} iterations"
        )

    p_calc, q_calc = calc_pq(v, th)
    order = [index[bid] for bid in net.converter_buses]
    return OperatingPoint(
        buses=net.converter_buses,
        p=p_calc[order],
        q=q_calc[order],
        u=v[order],
        delta=th[order],
    )


def solve_interior_voltages(net: NetworkSpec, op: OperatingPoint) -> dict[int, complex]:
    """All bus voltage phasors consistent with fixed converter voltages.

    Converter buses are anchored at the operating point, infinite buses
    at their held voltage; interior buses carry no injection and follow
    from the lossy admittance matrix.  Used by the time-domain model to
    linearize around a network state that honours a given operating
    point even when it was not produced by this power flow.
    """
    ids, y = _ybus(net)
    index = {bus_id: k for k, bus_id in enumerate(ids)}
    fixed = {}
    for k, bid in enumerate(net.converter_buses):
        fixed[index[bid]] = op.u[k] * np.exp(1j * op.delta[k])
    for bid in net.infinite_buses:
        fixed[index[bid]] = complex(net.bus(bid).e)
    free = [k for k in range(len(ids)) if k not in fixed]
    volts = np.zeros(len(ids), dtype=complex)
    for k, val in fixed.items():
        volts[k] = val
    if free:
        rhs = -y[np.ix_(free, sorted(fixed))] @ np.array(
            [fixed[k] for k in sorted(fixed)]
        )
        volts[free] = np.linalg.solve(y[np.ix_(free, free)], rhs)
    return {bid: complex(volts[index[bid]]) for bid in ids}


@dataclass(frozen=True)
class ComplexDressing:
    """Operating-point-dressed complex matrices of the grid.

    ``s_tilde`` is the diagonal complex power (stored as a vector),
    ``y_tilde`` the complex susceptance matrix U_i U_j B_ij e^{j d_ij},
    ``s_diag`` the apparent powers and ``phi`` the power-factor angles.
    """

    s_tilde: np.ndarray
    y_tilde: np.ndarray
    s_diag: np.ndarray
    phi: np.ndarray
    omega0: float

    @property
    def n(self) -> int:
        return len(self.s_tilde)

    @property
    def s_tilde_matrix(self) -> np.ndarray:
        return np.diag(self.s_tilde)

    @classmethod
    def from_matrices(
        cls, s_tilde: np.ndarray, y_tilde: np.ndarray, omega0: float
    ) -> "ComplexDressing":
        """Build directly from given matrices (e.g. externally reported data)."""
        s_vec = np.asarray(s_tilde, dtype=complex)
        if s_vec.ndim == 2:
            s_vec = np.diag(s_vec)
        y = np.asarray(y_tilde, dtype=complex)
        if y.shape != (len(s_vec), len(s_vec)):
            raise ValueError("s_tilde and y_tilde dimensions disagree")
        if np.any(np.abs(s_vec) == 0.0):
            raise ValueError("zero apparent power entry in s_tilde")
        return cls(
            s_tilde=s_vec,
            y_tilde=y,
            s_diag=np.abs(s_vec),
            phi=np.angle(s_vec),
            omega0=float(omega0),
        )


def dress(op: OperatingPoint, lap: SusceptanceLaplacian, base: SystemBase) -> ComplexDressing:
    """Dress the susceptance Laplacian with the operating point."""
    if op.buses != lap.buses:
        raise ValueError(
            f"operating point buses {op.buses} do not match Laplacian buses {lap.buses}"
        )
    s = op.s
    for bus_id, s_i in zip(op.buses, s):
        if s_i == 0.0:
            raise ValueError(f"zero apparent power at bus {bus_id}")
    s_tilde = op.p + 1j * op.q
    phase = np.exp(1j * op.delta)
    y_tilde = np.outer(op.u * phase, op.u * np.conj(phase)) * lap.b
    return ComplexDressing(
        s_tilde=s_tilde,
        y_tilde=y_tilde,
        s_diag=s,
        phi=np.arctan2(op.q, op.p),
        omega0=base.omega0,
    )
