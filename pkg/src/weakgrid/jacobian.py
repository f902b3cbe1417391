"""Grid Jacobian transfer matrices and their complex-coordinate form.

The network's power response to bus-voltage variations is a 2n x 2n
transfer matrix built from the dressed susceptance matrix and two
scalar line-dynamics kernels.  A non-singular coordinate change turns
it into a form with unit diagonal blocks whose determinant factors over
the eigenvalues of the susceptance product, which is what makes the
zero locations computable in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ComplexDressing


@dataclass(frozen=True)
class ScalarKernels:
    """Closed-form line-dynamics kernels parameterized by omega0.

    ``alpha`` is the static kernel (1 at s = 0), ``beta`` the quadrature
    one (0 at s = 0); ``gamma = beta + j alpha`` and its mirror
    ``gamma_conj = beta - j alpha`` are the complex-coordinate pair.
    Note gamma_conj is the conjugate *function*, which coincides with
    the pointwise conjugate only for real s.
    """

    omega0: float

    def alpha(self, s: complex | np.ndarray) -> complex | np.ndarray:
        return self.omega0**2 / (np.asarray(s) ** 2 + self.omega0**2)

    def beta(self, s: complex | np.ndarray) -> complex | np.ndarray:
        return np.asarray(s) * self.omega0 / (np.asarray(s) ** 2 + self.omega0**2)

    def gamma(self, s: complex | np.ndarray) -> complex | np.ndarray:
        return self.beta(s) + 1j * self.alpha(s)

    def gamma_conj(self, s: complex | np.ndarray) -> complex | np.ndarray:
        return self.beta(s) - 1j * self.alpha(s)


def eval_jnet(dress: ComplexDressing, s: complex) -> np.ndarray:
    """Network Jacobian transfer matrix at one point of the s-plane.

    Rows/columns are ordered (P-block, Q-block) over the converter
    buses; inputs are (normalized voltage magnitudes, angles).  At
    s = 0 this is the static power-flow Jacobian.
    """
    kern = ScalarKernels(dress.omega0)
    a = kern.alpha(s)
    b = kern.beta(s)
    y_re = dress.y_tilde.real
    y_im = dress.y_tilde.imag
    p = np.diag(dress.s_tilde.real)
    q = np.diag(dress.s_tilde.imag)
    top = np.hstack([b * y_re - a * y_im + p, a * y_re + b * y_im - q])
    bot = np.hstack([a * y_re + b * y_im + q, a * y_im - b * y_re + p])
    return np.vstack([top, bot]).astype(complex)


def to_complex_jnet(dress: ComplexDressing, s: complex) -> np.ndarray:
    """Complex-coordinate network Jacobian (unit diagonal blocks).

    Evaluates the closed form [[I, gamma*N], [gamma_conj*conj(N), I]]
    with N the normalized susceptance matrix; equal to the transformed
    ``eval_jnet`` (see ``to_complex_jnet_via_transform``).
    """
    if np.any(np.abs(dress.s_tilde) == 0.0):
        raise ValueError("singular complex power matrix (zero apparent power)")
    kern = ScalarKernels(dress.omega0)
    n = dress.n
    n_mat = dress.y_tilde / dress.s_tilde[:, None]
    eye = np.eye(n)
    top = np.hstack([eye, kern.gamma(s) * n_mat])
    bot = np.hstack([kern.gamma_conj(s) * np.conj(n_mat), eye])
    return np.vstack([top, bot]).astype(complex)


def polar_transform(dress: ComplexDressing) -> np.ndarray:
    """Block transform from (P, Q) rows to normalized polar power rows."""
    s_inv = np.diag(1.0 / dress.s_diag)
    c = np.diag(np.cos(dress.phi))
    sn = np.diag(np.sin(dress.phi))
    rot = np.block([[c, sn], [-sn, c]])
    return np.block([[s_inv, np.zeros_like(s_inv)], [np.zeros_like(s_inv), s_inv]]) @ rot


def complexification_transform(n: int) -> np.ndarray:
    """Unitary map from (magnitude, angle) pairs to conjugate complex pairs."""
    eye = np.eye(n)
    return np.block([[eye, 1j * eye], [eye, -1j * eye]]) / np.sqrt(2.0)


def to_complex_jnet_via_transform(dress: ComplexDressing, s: complex) -> np.ndarray:
    """Secondary path: transform the real-coordinate Jacobian explicitly.

    Cross-validates the closed form of ``to_complex_jnet``.
    """
    t_phi = polar_transform(dress)
    t_j = complexification_transform(dress.n)
    return t_j @ (t_phi @ eval_jnet(dress, s)) @ t_j.conj().T
