"""Attack-mitigating feedback control: stabilizing gain, rejection gains,
implicit attack-estimate resolution, and closed-loop assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._numeric import COND_LIMIT, pinv_trunc, spectral_radius, sym
from .filtering import SteadyStateGains, TransformedMode
from .model import ModeModel


class UnstabilizableError(RuntimeError):
    """The Riccati iteration diverged: (A, B) is not stabilizable."""


class ControllerDesignError(RuntimeError):
    """The requested gain combination cannot be realized."""


def design_feedback(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray | None = None,
    R: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 200_000,
) -> np.ndarray:
    """LQR state-feedback gain by infinite-horizon Riccati iteration.

    Iterates the discrete Riccati recursion to a 1e-10 fixed point and returns
    Kc with A - B Kc Schur stable.  Divergence (growth past 1e12) or a residual
    unstable closed loop raises UnstabilizableError.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.eye(m) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        BtPB = R + B.T @ P @ B
        K = np.linalg.solve(BtPB, B.T @ P @ A)
        P_next = sym(Q + A.T @ P @ (A - B @ K))
        if not np.all(np.isfinite(P_next)) or np.linalg.norm(P_next, ord="fro") > 1e12:
            raise UnstabilizableError("Riccati iteration diverged; (A, B) is not stabilizable")
        if np.linalg.norm(P_next - P, ord="fro") <= tol * max(1.0, np.linalg.norm(P, ord="fro")):
            P = P_next
            break
        P = P_next
    else:
        raise UnstabilizableError("Riccati iteration did not converge")
    Kc = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if spectral_radius(A - B @ Kc) >= 1.0:
        raise UnstabilizableError(
            f"closed loop not Schur stable (spectral radius "
            f"{spectral_radius(A - B @ Kc):.6f})"
        )
    return Kc


def design_rejection(
    B: np.ndarray,
    G1: np.ndarray,
    G2: np.ndarray,
    d2_bound: float = np.inf,
    d2_rate_bound: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Attack-rejection gains minimizing the residual spectral norms.

    J_i = pinv(B) G_i attains the minimum of ||G_i - B J_i||_2: subtracting the
    orthogonal projection of G_i onto range(B) is optimal in any unitarily
    invariant norm, so the semidefinite program reduces to this closed form.
    J2 is zeroed when the attack's variation bound exceeds its magnitude bound,
    because the delayed estimate then hurts more than it helps.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    G1 = np.atleast_2d(np.asarray(G1, dtype=float))
    G2 = np.atleast_2d(np.asarray(G2, dtype=float))
    B_pinv = pinv_trunc(B)
    P_perp = np.eye(B.shape[0]) - B @ B_pinv

    J1 = B_pinv @ G1
    gamma1 = float(np.linalg.norm(P_perp @ G1, 2)) if G1.size else 0.0
    if d2_rate_bound > d2_bound:
        J2 = np.zeros((B.shape[1], G2.shape[1]))
        gamma2 = float(np.linalg.norm(G2, 2)) if G2.size else 0.0
    else:
        J2 = B_pinv @ G2
        gamma2 = float(np.linalg.norm(P_perp @ G2, 2)) if G2.size else 0.0
    return J1, J2, gamma1, gamma2


@dataclass(frozen=True)
class ControllerGains:
    """Designed gains plus the implicit-estimate coupling matrix.

    J_tilde couples the attack estimates to the control through the actuated
    channels' measurement feedthrough (D1_fb, D2_fb); it is validated by
    condition number at design time with the steady-state filter gains, never
    rejected at runtime.
    """

    Kc: np.ndarray
    J1: np.ndarray
    J2: np.ndarray
    gamma1: float
    gamma2: float
    J_tilde: np.ndarray
    tm: TransformedMode
    M2_ss: np.ndarray
    D1_fb: np.ndarray
    D2_fb: np.ndarray


def _j_tilde(
    tm: TransformedMode,
    J1: np.ndarray,
    J2: np.ndarray,
    M2: np.ndarray,
    D1_fb: np.ndarray,
    D2_fb: np.ndarray,
) -> np.ndarray:
    p_H = tm.p_H
    p2 = tm.mode.p - p_H
    top = np.hstack(
        [np.eye(p_H) - tm.M1 @ D1_fb @ J1, -tm.M1 @ D1_fb @ J2]
    )
    bot = np.hstack(
        [-M2 @ D2_fb @ J1, np.eye(p2) - M2 @ D2_fb @ J2]
    )
    return np.vstack([top, bot]) if p_H + p2 else np.zeros((0, 0))


def design_controller(
    tm: TransformedMode,
    ss: SteadyStateGains,
    lqr_Q: np.ndarray | None = None,
    lqr_R: np.ndarray | None = None,
    d2_bound: float = np.inf,
    d2_rate_bound: float = 0.0,
    fb_cols: list[int] | None = None,
) -> ControllerGains:
    """Design the full attack-mitigating controller for one mode.

    fb_cols restricts actuation to a subset of input columns (default: all).
    The coupling matrix J_tilde is checked invertible (condition < 1e12) here,
    at design time, so the per-step solve never has to refuse.
    """
    mode = tm.mode
    cols = list(range(mode.m)) if fb_cols is None else list(fb_cols)
    B = mode.B[:, cols]
    D1_fb = tm.D1[:, cols]
    D2_fb = tm.D2[:, cols]
    Kc = design_feedback(mode.A, B, Q=lqr_Q, R=lqr_R)
    J1, J2, gamma1, gamma2 = design_rejection(
        B, tm.G1, tm.G2, d2_bound=d2_bound, d2_rate_bound=d2_rate_bound
    )
    Jt = _j_tilde(tm, J1, J2, ss.M2, D1_fb, D2_fb)
    if Jt.size:
        s = np.linalg.svd(Jt, compute_uv=False)
        if s[-1] == 0.0 or s[0] / s[-1] > COND_LIMIT:
            raise ControllerDesignError(
                "the implicit attack-estimate coupling J_tilde is singular for "
                "this gain combination; choose different rejection gains"
            )
    return ControllerGains(
        Kc=Kc,
        J1=J1,
        J2=J2,
        gamma1=gamma1,
        gamma2=gamma2,
        J_tilde=Jt,
        tm=tm,
        M2_ss=ss.M2,
        D1_fb=D1_fb,
        D2_fb=D2_fb,
    )


@dataclass(frozen=True)
class ControlStep:
    u: np.ndarray
    d1_hat: np.ndarray
    d2_hat: np.ndarray


def control_step(
    gains: ControllerGains,
    z1: np.ndarray,
    z2: np.ndarray,
    x_hat: np.ndarray,
    x_hat_pred: np.ndarray,
    M2: np.ndarray | None = None,
) -> ControlStep:
    """One feedback evaluation with implicit attack-estimate resolution.

    Because the control also enters the attack estimates through the known-
    input feedthrough, (d1, d2) solve a linear system with matrix J_tilde whose
    right-hand side carries the feedback compensation D_i Kc x_hat; the
    returned triple satisfies the implicit filter/control equations exactly.
    With no feedthrough this reduces to plain gains on the raw residuals.
    """
    tm = gains.tm
    M2 = gains.M2_ss if M2 is None else M2
    p_H = tm.p_H
    rhs1 = tm.M1 @ (z1 - tm.C1 @ x_hat + gains.D1_fb @ (gains.Kc @ x_hat))
    rhs2 = M2 @ (z2 - tm.C2 @ x_hat_pred + gains.D2_fb @ (gains.Kc @ x_hat))
    Jt = _j_tilde(tm, gains.J1, gains.J2, M2, gains.D1_fb, gains.D2_fb)
    if Jt.size:
        d = np.linalg.solve(Jt, np.concatenate([rhs1, rhs2]))
    else:
        d = np.zeros(0)
    d1, d2 = d[:p_H], d[p_H:]
    u = -gains.Kc @ x_hat - gains.J1 @ d1 - gains.J2 @ d2
    return ControlStep(u=u, d1_hat=d1, d2_hat=d2)


def closed_loop_matrices(
    mode: ModeModel,
    tm: TransformedMode,
    gains: ControllerGains,
    ss: SteadyStateGains,
    fb_cols: list[int] | None = None,
) -> np.ndarray:
    """Assemble the 2x2 block state matrix of plant state and estimator error.

    The block-triangular structure makes the closed-loop spectrum the union of
    the controller spectrum eig(A - B Kc) and the estimator spectrum
    eig((I - L C2) (I - G2 M2 C2)(A - G1 M1 C1)): the separation principle.
    """
    A = mode.A
    B = mode.B if fb_cols is None else mode.B[:, list(fb_cols)]
    n = A.shape[0]
    M1, M2, L = ss.M1, ss.M2, ss.L_tilde
    top_left = A - B @ gains.Kc
    top_right = B @ (
        gains.Kc
        - gains.J1 @ M1 @ tm.C1
        - gains.J2 @ M2 @ tm.C2 @ (A + tm.G1 @ M1 @ tm.C1)
    )
    A_bar = (np.eye(n) - tm.G2 @ M2 @ tm.C2) @ (A - tm.G1 @ M1 @ tm.C1)
    bottom_right = (np.eye(n) - L @ tm.C2) @ A_bar
    return np.block(
        [[top_left, top_right], [np.zeros((n, n)), bottom_right]]
    )


def gains_to_json(gains: ControllerGains) -> dict:
    """Audit export of the designed gains (row-major nested lists)."""
    return {
        "Kc": gains.Kc.tolist(),
        "J1": gains.J1.tolist(),
        "J2": gains.J2.tolist(),
        "gamma1": gains.gamma1,
        "gamma2": gains.gamma2,
        "J_tilde": gains.J_tilde.tolist(),
        "mode_label": repr(gains.tm.mode.label),
    }
