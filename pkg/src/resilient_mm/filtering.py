"""Mode-matched simultaneous input and state filter.

The measurement is split by an SVD of the attack feedthrough H into a channel
z1 that carries the attack directly and a channel z2 that does not.  The filter
then alternates: estimate the feedthrough attack component d1 from z1, estimate
the dynamics-only component d2 (one step delayed) from z2, time-update, and
measurement-update on z2.  With no attack channels the recursion reduces
algebraically to a standard Kalman filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._numeric import COND_LIMIT, NumericsError, assert_psd, inv_checked, sym
from .model import ModeModel

# Singular values of H below this (relative) threshold count as zero when
# deciding the feedthrough rank.
H_RANK_RTOL = 1e-10


class FilterStepError(RuntimeError):
    """A filter step could not be completed; `reason` explains why."""

    def __init__(self, message: str, reason: str = "numerics"):
        super().__init__(message)
        self.reason = reason


@dataclass(frozen=True)
class TransformedMode:
    """Mode matrices after the output-decoupling transformation.

    T = [T1; T2] is nonsingular, z1 = T1 y carries the full-rank feedthrough
    Sigma, z2 = T2 y is feedthrough-free, and T1 R T2' = 0 so the two channels
    have uncorrelated noise.
    """

    mode: ModeModel
    p_H: int
    Sigma: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    T1: np.ndarray
    T2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    M1: np.ndarray  # Sigma^{-1}, the d1 estimator gain

    @property
    def V(self) -> np.ndarray:
        return np.hstack([self.V1, self.V2])

    def z_split(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.T1 @ y, self.T2 @ y


@dataclass(frozen=True)
class FilterState:
    """One mode-matched filter's estimates and per-step intermediates.

    x_hat/P_x are the posterior state estimate, d1_hat/P_d1 the current
    feedthrough attack estimate.  d_hat/P_d estimate the full attack vector of
    the *previous* step (d2 is only observable with one step of delay).
    """

    x_hat: np.ndarray
    P_x: np.ndarray
    d1_hat: np.ndarray
    P_d1: np.ndarray
    x_hat_pred: np.ndarray
    x_star: np.ndarray
    P_star_x: np.ndarray
    R2_star: np.ndarray
    d2_hat: np.ndarray
    P_d2: np.ndarray
    d_hat: np.ndarray
    P_d: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    L_tilde: np.ndarray


def transform(mode: ModeModel) -> TransformedMode:
    """Decouple the output of a mode by SVD of its feedthrough matrix H.

    Raises ValueError if R is not positive definite.  The rank of H is decided
    with a relative singular-value threshold so the split is deterministic.
    """
    l, p = mode.H.shape
    if np.linalg.eigvalsh(mode.R)[0] <= 0.0:
        raise ValueError("R must be positive definite to decouple the output")

    if mode.H.size == 0 or not np.any(mode.H):
        p_H = 0
    else:
        s = np.linalg.svd(mode.H, compute_uv=False)
        p_H = int(np.sum(s > H_RANK_RTOL * s[0]))

    if p_H == 0:
        # no direct feedthrough: keep the output untouched (identity transform)
        U1 = np.zeros((l, 0))
        U2 = np.eye(l)
        V1 = np.zeros((p, 0))
        V2 = np.eye(p)
        Sigma = np.zeros((0, 0))
    else:
        U, s, Vt = np.linalg.svd(mode.H)
        U1, U2 = U[:, :p_H], U[:, p_H:]
        V = Vt.T
        V1, V2 = V[:, :p_H], V[:, p_H:]
        Sigma = np.diag(s[:p_H])

    if l - p_H > 0:
        R2_inner = inv_checked(U2.T @ mode.R @ U2, "U2' R U2")
        T1 = U1.T - U1.T @ mode.R @ U2 @ R2_inner @ U2.T
    else:
        T1 = U1.T
    T2 = U2.T
    M1 = np.diag(1.0 / np.diag(Sigma)) if p_H else np.zeros((0, 0))

    return TransformedMode(
        mode=mode,
        p_H=p_H,
        Sigma=Sigma,
        U1=U1,
        U2=U2,
        V1=V1,
        V2=V2,
        T1=T1,
        T2=T2,
        C1=T1 @ mode.C,
        C2=T2 @ mode.C,
        D1=T1 @ mode.D,
        D2=T2 @ mode.D,
        G1=mode.G @ V1,
        G2=mode.G @ V2,
        R1=sym(T1 @ mode.R @ T1.T),
        R2=sym(T2 @ mode.R @ T2.T),
        M1=M1,
    )


def init_filter(
    tm: TransformedMode,
    x0_hat: np.ndarray,
    P0: np.ndarray,
    u0: np.ndarray,
    y0: np.ndarray,
) -> FilterState:
    """Initialize a mode-matched filter from the first measurement.

    d1 and its covariance are read directly off the feedthrough channel:
    d1 = Sigma^{-1}(z1 - C1 x0 - D1 u0).
    """
    x0_hat = np.asarray(x0_hat, dtype=float)
    P0 = assert_psd(np.asarray(P0, dtype=float), "P0")
    z1, _ = tm.z_split(np.asarray(y0, dtype=float))
    d1 = tm.M1 @ (z1 - tm.C1 @ x0_hat - tm.D1 @ np.asarray(u0, dtype=float))
    P_d1 = sym(tm.M1 @ (tm.C1 @ P0 @ tm.C1.T + tm.R1) @ tm.M1.T)
    n = x0_hat.shape[0]
    p = tm.mode.p
    return FilterState(
        x_hat=x0_hat,
        P_x=P0,
        d1_hat=d1,
        P_d1=P_d1,
        x_hat_pred=x0_hat.copy(),
        x_star=x0_hat.copy(),
        P_star_x=P0.copy(),
        R2_star=tm.R2.copy(),
        d2_hat=np.zeros(p - tm.p_H),
        P_d2=np.zeros((p - tm.p_H, p - tm.p_H)),
        d_hat=np.zeros(p),
        P_d=np.zeros((p, p)),
        M1=tm.M1.copy(),
        M2=np.zeros((p - tm.p_H, tm.C2.shape[0])),
        L_tilde=np.zeros((n, tm.C2.shape[0])),
    )


def filter_step(
    tm: TransformedMode,
    st: FilterState,
    u_prev: np.ndarray,
    u_now: np.ndarray,
    y_now: np.ndarray,
) -> FilterState:
    """Advance one mode-matched filter by one measurement.

    u_prev enters the state prediction, u_now the measurement residuals.
    Raises FilterStepError with reason "not_strongly_detectable" when the
    delayed attack component is unobservable (C2 G2 rank deficient), and with
    reason "numerics" when an inversion exceeds the conditioning limit.
    """
    mode = tm.mode
    A, B, Q = mode.A, mode.B, mode.Q
    C1, C2, D1, D2 = tm.C1, tm.C2, tm.D1, tm.D2
    G1, G2, R1, R2, M1 = tm.G1, tm.G2, tm.R1, tm.R2, tm.M1
    n = A.shape[0]
    u_prev = np.asarray(u_prev, dtype=float)
    u_now = np.asarray(u_now, dtype=float)
    z1, z2 = tm.z_split(np.asarray(y_now, dtype=float))

    # estimation of the delayed attack component and the full attack vector
    A_hat = A - G1 @ M1 @ C1
    Q_hat = G1 @ M1 @ R1 @ M1.T @ G1.T + Q
    P_tilde = sym(A_hat @ st.P_x @ A_hat.T + Q_hat)
    R2_tilde = sym(C2 @ P_tilde @ C2.T + R2)
    R2_tilde_inv = _sym_inv_guarded(R2_tilde, "the z2 residual covariance")
    inner = G2.T @ C2.T @ R2_tilde_inv @ C2 @ G2
    P_d2 = _inv_detectability_guarded(inner)
    M2 = P_d2 @ G2.T @ C2.T @ R2_tilde_inv
    x_pred = A @ st.x_hat + B @ u_prev + G1 @ st.d1_hat
    d2 = M2 @ (z2 - C2 @ x_pred - D2 @ u_now)
    d_prev = tm.V1 @ st.d1_hat + tm.V2 @ d2
    P_d12 = (
        M1 @ C1 @ st.P_x @ A.T @ C2.T @ M2.T
        - st.P_d1 @ G1.T @ C2.T @ M2.T
    )
    V = tm.V
    p, p_H = mode.p, tm.p_H
    P_d_inner = np.empty((p, p))
    P_d_inner[:p_H, :p_H] = st.P_d1
    P_d_inner[:p_H, p_H:] = P_d12
    P_d_inner[p_H:, :p_H] = P_d12.T
    P_d_inner[p_H:, p_H:] = P_d2
    P_d = sym(V @ P_d_inner @ V.T)

    # time update
    x_star = x_pred + G2 @ d2
    I_GMC = np.eye(n) - G2 @ M2 @ C2
    P_star_x = sym(G2 @ M2 @ R2 @ M2.T @ G2.T + I_GMC @ P_tilde @ I_GMC.T)
    R2_star = sym(
        C2 @ P_star_x @ C2.T + R2 - C2 @ G2 @ M2 @ R2 - R2 @ M2.T @ G2.T @ C2.T
    )

    # measurement update
    P_breve = P_star_x @ C2.T - G2 @ M2 @ R2
    L_tilde = P_breve @ _sym_pinv(R2_star)
    x_hat = x_star + L_tilde @ (z2 - C2 @ x_star - D2 @ u_now)
    P_x = P_star_x + L_tilde @ R2_star @ L_tilde.T - L_tilde @ P_breve.T - P_breve @ L_tilde.T
    try:
        P_x = assert_psd(P_x, "P_x")
        P_star_x = assert_psd(P_star_x, "P_star_x")
    except NumericsError as exc:
        raise FilterStepError(str(exc), reason="numerics") from exc

    # estimation of the current feedthrough attack component
    R1_tilde = C1 @ P_x @ C1.T + R1
    P_d1 = sym(M1 @ R1_tilde @ M1.T)
    d1 = M1 @ (z1 - C1 @ x_hat - D1 @ u_now)

    return FilterState(
        x_hat=x_hat,
        P_x=P_x,
        d1_hat=d1,
        P_d1=P_d1,
        x_hat_pred=x_pred,
        x_star=x_star,
        P_star_x=P_star_x,
        R2_star=R2_star,
        d2_hat=d2,
        P_d2=sym(P_d2),
        d_hat=d_prev,
        P_d=P_d,
        M1=M1,
        M2=M2,
        L_tilde=L_tilde,
    )


def _sym_inv_guarded(mat: np.ndarray, what: str) -> np.ndarray:
    """Eigendecomposition-based inverse of a symmetric matrix, with cond guard."""
    if mat.shape[0] == 0:
        return mat.copy()
    lam, vec = np.linalg.eigh(mat)
    small = np.abs(lam).min()
    if small == 0.0 or np.abs(lam).max() / small > COND_LIMIT:
        raise FilterStepError(
            f"{what} is singular or ill-conditioned", reason="numerics"
        )
    return (vec / lam) @ vec.T


def _sym_pinv(mat: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Truncated pseudo-inverse of a symmetric matrix."""
    if mat.shape[0] == 0:
        return mat.copy()
    lam, vec = np.linalg.eigh(mat)
    cutoff = rtol * max(np.abs(lam).max(), 1e-300)
    inv_lam = np.where(np.abs(lam) > cutoff, 1.0 / np.where(lam == 0.0, 1.0, lam), 0.0)
    return (vec * inv_lam) @ vec.T


def _inv_detectability_guarded(inner: np.ndarray) -> np.ndarray:
    """Invert G2' C2' Rt2^{-1} C2 G2; singularity means d2 is unobservable."""
    if inner.shape[0] == 0:
        return np.zeros((0, 0))
    lam = np.abs(np.linalg.eigvalsh(inner))
    if lam.min() == 0.0 or lam.max() / lam.min() > COND_LIMIT:
        raise FilterStepError(
            "C2 G2 lost column rank: the delayed attack component is not "
            "observable; mode is not strongly detectable at runtime",
            reason="not_strongly_detectable",
        )
    return np.linalg.inv(inner)


@dataclass(frozen=True)
class SteadyStateGains:
    """Converged covariances and gains of a mode-matched filter."""

    P_x: np.ndarray
    P_d1: np.ndarray
    P_tilde: np.ndarray
    P_star_x: np.ndarray
    R2_star: np.ndarray
    P_d2: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    L_tilde: np.ndarray
    iterations: int


def steady_state_gains(
    tm: TransformedMode,
    P0: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 50_000,
) -> SteadyStateGains:
    """Iterate the covariance recursion (data-free) to its fixed point."""
    n = tm.mode.n
    p = tm.mode.p
    st = FilterState(
        x_hat=np.zeros(n),
        P_x=np.eye(n) if P0 is None else np.asarray(P0, dtype=float),
        d1_hat=np.zeros(tm.p_H),
        P_d1=np.eye(tm.p_H),
        x_hat_pred=np.zeros(n),
        x_star=np.zeros(n),
        P_star_x=np.eye(n),
        R2_star=tm.R2.copy(),
        d2_hat=np.zeros(p - tm.p_H),
        P_d2=np.zeros((p - tm.p_H, p - tm.p_H)),
        d_hat=np.zeros(p),
        P_d=np.zeros((p, p)),
        M1=tm.M1.copy(),
        M2=np.zeros((p - tm.p_H, tm.C2.shape[0])),
        L_tilde=np.zeros((n, tm.C2.shape[0])),
    )
    u = np.zeros(tm.mode.m)
    y = np.zeros(tm.mode.l)
    prev = st.P_x
    for it in range(1, max_iter + 1):
        st = filter_step(tm, st, u, u, y)
        if np.linalg.norm(st.P_x - prev, ord="fro") <= tol * max(1.0, np.linalg.norm(prev, ord="fro")):
            break
        prev = st.P_x
    else:
        raise FilterStepError(
            f"filter covariances did not converge within {max_iter} iterations",
            reason="no_steady_state",
        )
    A_hat = tm.mode.A - tm.G1 @ tm.M1 @ tm.C1
    Q_hat = tm.G1 @ tm.M1 @ tm.R1 @ tm.M1.T @ tm.G1.T + tm.mode.Q
    P_tilde = sym(A_hat @ st.P_x @ A_hat.T + Q_hat)
    return SteadyStateGains(
        P_x=st.P_x,
        P_d1=st.P_d1,
        P_tilde=P_tilde,
        P_star_x=st.P_star_x,
        R2_star=st.R2_star,
        P_d2=st.P_d2,
        M1=st.M1,
        M2=st.M2,
        L_tilde=st.L_tilde,
        iterations=it,
    )
