"""Right-half-plane zeros of the grid power-transfer matrix.

The critical quantities all derive from the eigenvalues of
``H_eq = inv(S~) Y~ inv(conj(S~)) conj(Y~)``: each eigenvalue maps to a
pair of real transmission zeros symmetric about the imaginary axis, the
smallest one locates the critical right-half-plane zero, and at rated
conditions its square root collapses to the familiar short-circuit
ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ComplexDressing

REAL_EIG_RTOL = 1e-8


class ZeroAnalysisError(RuntimeError):
    """The equivalent susceptance product failed its structural checks."""


@dataclass(frozen=True)
class NmpzResult:
    """Zero locations and critical eigenpair of one dressing.

    ``lambdas`` are sorted ascending; ``rho_z`` is the smallest one.
    ``z_nmp[i]`` is the right-half-plane zero in rad/s, or ``None`` when
    the eigenvalue sits below one and the zero pair has moved onto the
    imaginary axis (operating point past the static limit).  ``w1`` is
    the critical eigenvector, gauge-fixed so its largest entry is real
    positive; ``mu1`` is the scalar grid coupling of the critical
    single-converter equivalent.
    """

    rho_z: float
    lambdas: np.ndarray
    z_nmp: tuple[float | None, ...]
    w1: np.ndarray
    mu1: complex
    omega0: float

    @property
    def z_critical(self) -> float | None:
        return self.z_nmp[0]


@dataclass(frozen=True)
class ScrResult:
    """Static grid-strength metrics at rated conditions."""

    scr: float | None
    gscr: float
    rho_z_rated: float


def compute_heq(dress: ComplexDressing) -> np.ndarray:
    """Equivalent normalized susceptance product of a dressed grid."""
    if np.any(np.abs(dress.s_tilde) == 0.0):
        raise ValueError("singular complex power matrix (zero apparent power)")
    n_mat = dress.y_tilde / dress.s_tilde[:, None]
    return n_mat @ np.conj(n_mat)


def eigen_heq(
    h: np.ndarray,
    omega0: float,
    n_matrix: np.ndarray | None = None,
    real_rtol: float = REAL_EIG_RTOL,
) -> NmpzResult:
    """Eigensolve the susceptance product and locate all RHP zeros.

    A general complex eigensolver is used and the structural guarantee
    (similar to a positive-definite matrix, hence real positive
    eigenvalues) is asserted rather than exploited.  ``n_matrix`` is the
    normalized susceptance matrix the product was formed from; it is
    needed for the coupling scalar ``mu1``.
    """
    h = np.asarray(h, dtype=complex)
    lams, vecs = np.linalg.eig(h)
    scale = float(np.max(np.abs(lams)))
    if np.any(np.abs(lams.imag) > real_rtol * max(scale, 1e-300)):
        worst = float(np.max(np.abs(lams.imag)))
        raise ZeroAnalysisError(
            "H_eq not similar-to-positive (check inputs): eigenvalue imaginary "
            f"residue {worst:.3e} exceeds tolerance"
        )
    order = np.argsort(lams.real)
    lams = lams.real[order]
    vecs = vecs[:, order]
    if lams[0] <= 0.0:
        raise ZeroAnalysisError(
            f"H_eq not similar-to-positive (check inputs): min eigenvalue {lams[0]:.3e}"
        )

    w1 = vecs[:, 0]
    w1 = w1 / np.linalg.norm(w1)
    # Gauge convention: rotate so the largest-magnitude entry is real positive.
    pivot = int(np.argmax(np.abs(w1)))
    w1 = w1 * np.exp(-1j * np.angle(w1[pivot]))

    mu1 = complex(np.vdot(w1, n_matrix @ np.conj(w1))) if n_matrix is not None else complex("nan")

    zeros: list[float | None] = []
    for lam in lams:
        zeros.append(float(omega0 * np.sqrt(lam - 1.0)) if lam >= 1.0 else None)

    return NmpzResult(
        rho_z=float(lams[0]),
        lambdas=lams,
        z_nmp=tuple(zeros),
        w1=w1,
        mu1=mu1,
        omega0=float(omega0),
    )


def compute_nmpz(dress: ComplexDressing) -> NmpzResult:
    """Full zero analysis of a dressed grid."""
    h = compute_heq(dress)
    n_mat = dress.y_tilde / dress.s_tilde[:, None]
    return eigen_heq(h, dress.omega0, n_matrix=n_mat)


def compute_scr(b_l: float, p_n: float = 1.0) -> ScrResult:
    """Short-circuit ratio of a single line feeding one converter."""
    if p_n <= 0.0:
        raise ValueError("rated power must be positive")
    scr = b_l / p_n
    return ScrResult(scr=scr, gscr=scr, rho_z_rated=scr**2)


def compute_gscr(b: np.ndarray, p_n: np.ndarray | float = 1.0) -> ScrResult:
    """Generalized short-circuit ratio of a multi-converter grid.

    Smallest eigenvalue of ``inv(P_N) B``; its square equals the zero
    factor of the rated dressing (unit voltages, zero angles, rated
    active powers).
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    p_vec = np.full(n, float(p_n)) if np.isscalar(p_n) else np.asarray(p_n, dtype=float)
    if np.any(p_vec <= 0.0):
        raise ValueError("rated powers must be positive")
    m = b / p_vec[:, None]
    lams = np.linalg.eigvals(m)
    if np.any(np.abs(lams.imag) > 1e-9 * max(float(np.max(np.abs(lams))), 1e-300)):
        raise ZeroAnalysisError("inv(P_N) B has non-real eigenvalues; B is not a valid Laplacian")
    gscr = float(np.min(lams.real))
    result = ScrResult(scr=gscr if n == 1 else None, gscr=gscr, rho_z_rated=gscr**2)
    return result
