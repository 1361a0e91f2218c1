"""Fundamental limits: strong detectability, correctable-attack bounds,
resilience guarantees, and red-team synthesis of unidentifiable attacks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._numeric import matrix_rank, pinv_trunc, psd_factor, sym
from .filtering import TransformedMode, transform
from .model import ModeModel, ModeSet, PlantTopology

# Internal seed for the randomized pencil compression: the algorithm is
# randomized but its output must be reproducible run to run.
_PENCIL_SEED = 0x5EED
_ZERO_DEDUPE_TOL = 1e-8


@dataclass(frozen=True)
class DetectabilityVerdict:
    """Strong-detectability decision for one mode.

    The mode is strongly detectable iff the system pencil [zI-A, -G; C, H]
    keeps full column rank n+p everywhere on and outside the unit circle:
    equivalently, full normal rank and all invariant zeros strictly inside.
    """

    strongly_detectable: bool
    normal_rank: int
    invariant_zeros: list[complex]
    max_zero_modulus: float
    reason: str | None = None


def _pencil(mode_or_mats) -> tuple[np.ndarray, np.ndarray, int, int, int]:
    if isinstance(mode_or_mats, ModeModel):
        A, G, C, H = mode_or_mats.A, mode_or_mats.G, mode_or_mats.C, mode_or_mats.H
    else:
        A, G, C, H = (np.atleast_2d(np.asarray(M, dtype=float)) for M in mode_or_mats)
    n = A.shape[0]
    l, p = H.shape
    E = np.zeros((n + l, n + p))
    E[:n, :n] = np.eye(n)
    F = np.block([[-A, -G], [C, H]])
    return E, F, n, l, p


def _rank_at(E: np.ndarray, F: np.ndarray, z: complex) -> int:
    return matrix_rank(z * E + F)


def strong_detectability(mode_or_mats) -> DetectabilityVerdict:
    """Decide strong detectability of a mode (or an (A, G, C, H) tuple).

    Normal rank is taken as the maximum pencil rank over random complex
    evaluation points.  Candidate zeros come from two independent random
    square compressions of the pencil solved as generalized eigenvalue
    problems; every candidate is then confirmed by a direct rank test, so no
    false zeros are reported.
    """
    E, F, n, l, p = _pencil(mode_or_mats)
    rng = np.random.default_rng(_PENCIL_SEED)
    pts = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    normal_rank = max(_rank_at(E, F, z) for z in pts)

    if normal_rank < n + p:
        return DetectabilityVerdict(
            strongly_detectable=False,
            normal_rank=normal_rank,
            invariant_zeros=[],
            max_zero_modulus=0.0,
            reason="pencil rank deficient everywhere",
        )

    # two independent compressions: every finite zero is an eigenvalue of both
    # compressed pencils, so the union loses nothing.  Candidates whose
    # homogeneous coordinate beta nearly vanishes belong to the pencil's
    # structural infinite part and are dropped, as is anything beyond a modulus
    # cap scaled to the pencil norm (the rank test is meaningless out there);
    # the rank test then removes the finite compression-specific spurious
    # eigenvalues with probability one.
    cap = 1e6 * max(1.0, float(np.linalg.norm(F, 2)))
    candidates: list[complex] = []
    draws = 2 if n + l > n + p else 1
    for _ in range(draws):
        if n + l > n + p:
            M = rng.standard_normal((n + p, n + l))
            a, b = M @ F, -(M @ E)
        else:
            a, b = F, -E
        alpha, beta = sla.eig(a, b, right=False, homogeneous_eigvals=True)
        healthy = np.abs(beta) > 1e-10 * (np.abs(alpha) + np.abs(beta))
        w = alpha[healthy] / beta[healthy]
        candidates.extend(w[np.abs(w) <= cap])

    zeros: list[complex] = []
    for z in candidates:
        if _rank_at(E, F, z) < normal_rank:
            if not any(abs(z - zz) < _ZERO_DEDUPE_TOL * max(1.0, abs(zz)) for zz in zeros):
                zeros.append(complex(z))
    zeros.sort(key=lambda z: (z.real, z.imag))
    max_mod = max((abs(z) for z in zeros), default=0.0)
    return DetectabilityVerdict(
        strongly_detectable=max_mod < 1.0,
        normal_rank=normal_rank,
        invariant_zeros=zeros,
        max_zero_modulus=max_mod,
        reason=None if max_mod < 1.0 else "invariant zero on or outside the unit circle",
    )


@dataclass(frozen=True)
class CorrectableBound:
    """Attack-count budget: at most l injected signals are ever correctable."""

    p_star: int
    entries: list[tuple[tuple, int, bool]]  # (mode label, p, within bound)

    @property
    def all_within_bound(self) -> bool:
        return all(ok for _, _, ok in self.entries)


def max_correctable(target: ModeModel | ModeSet | PlantTopology, p: int | None = None) -> CorrectableBound:
    """Report the fundamental bound p* = l and flag any mode exceeding it."""
    if isinstance(target, PlantTopology):
        l = target.l
        checked_p = target.t_a + target.t_s if p is None else p
        entries = [(("topology",), checked_p, checked_p <= l)]
    elif isinstance(target, ModeModel):
        l = target.l
        entries = [(target.label, target.p, target.p <= l)]
    else:
        l = target[0].l
        entries = [(m.label, m.p, m.p <= l) for m in target]
    return CorrectableBound(p_star=l, entries=entries)


@dataclass(frozen=True)
class PairCondition:
    """One ordered-pair check of the resilience-guarantee rank conditions."""

    q: int
    q_prime: int
    condition: str  # "distinct_C" or "equal_C"
    required_rank: int
    rank: int
    satisfiable: bool

    @property
    def holds(self) -> bool:
        return self.satisfiable and self.rank == self.required_rank


@dataclass(frozen=True)
class ResilienceReport:
    hypothesis_ok: bool
    hypothesis_note: str | None
    pairs: list[PairCondition]

    @property
    def guaranteed(self) -> bool:
        return self.hypothesis_ok and all(p.holds for p in self.pairs)


def resilience_guarantee(modes: ModeSet) -> ResilienceReport:
    """Check the unbiasedness guarantee rank conditions for every mode pair.

    Requires identical feedthrough matrices H and D across modes (otherwise the
    hypothesis is violated and reported as such).  For each ordered pair (q, q'):
    distinct C matrices need rank [T2^q C^q', T2^q C^q] = 2n; identical C needs
    rank(T2^q C^q) = n.  Transforms are the steady-state ones (constant here).
    """
    mats = list(modes)
    H0, D0 = mats[0].H, mats[0].D
    for m in mats[1:]:
        if m.H.shape != H0.shape or not np.allclose(m.H, H0):
            return ResilienceReport(False, "feedthrough H differs across modes", [])
        if not np.allclose(m.D, D0):
            return ResilienceReport(False, "known-input feedthrough D differs across modes", [])
    tms = [transform(m) for m in mats]
    n = mats[0].n
    pairs: list[PairCondition] = []
    for qi, tm_q in enumerate(tms):
        rows = tm_q.C2.shape[0]
        for qj, m_qp in enumerate(mats):
            if np.allclose(mats[qi].C, m_qp.C):
                req, cond = n, "equal_C"
                mat = tm_q.C2
            else:
                req, cond = 2 * n, "distinct_C"
                mat = np.hstack([tm_q.T2 @ m_qp.C, tm_q.C2])
            pairs.append(
                PairCondition(
                    q=qi,
                    q_prime=qj,
                    condition=cond,
                    required_rank=req,
                    rank=matrix_rank(mat),
                    satisfiable=rows >= req,
                )
            )
    return ResilienceReport(True, None, pairs)


@dataclass(frozen=True)
class AttackerMoments:
    """Second moment of the masquerade mismatch term, and the mean known input."""

    mu_outer: np.ndarray  # E[mu mu'], l x l
    u_mean: np.ndarray


@dataclass
class UnidentifiablePlan:
    """Masquerade recipe: run mode `star` while looking like mode `q`.

    The injected attack is Gaussian with a filter-referenced mean (computed
    online from the two mode-matched filters) and constant covariance D_s.
    Feasible iff the stacked projection W = T2^q H^star has full row rank and
    D_s is positive semidefinite.
    """

    q: int
    star: int
    feasible: bool
    D_s: np.ndarray
    diagnostics: str | None
    W: np.ndarray
    proj: np.ndarray  # W^+ @ T2^q
    tm_q: TransformedMode
    tm_star: TransformedMode
    u_mean: np.ndarray
    _factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._factor = psd_factor(self.D_s if self.feasible else self.D_s * 0.0)

    def d_mean(self, x_ref_star: np.ndarray, x_star_q: np.ndarray) -> np.ndarray:
        """Deterministic attack component from the two filters' state references.

        x_ref_star is the true-mode filter's current (unbiased) state reference
        and x_star_q the masqueraded filter's time-updated estimate.
        """
        mq, ms = self.tm_q.mode, self.tm_star.mode
        mismatch = ms.C @ x_ref_star - mq.C @ x_star_q + (ms.D - mq.D) @ self.u_mean
        return -self.proj @ mismatch

    def sample_fluctuation(self, rng: np.random.Generator) -> np.ndarray:
        """Zero-mean Gaussian part with covariance D_s (degenerate allowed)."""
        return self._factor @ rng.standard_normal(self._factor.shape[1])

    def draw(
        self, x_ref_star: np.ndarray, x_star_q: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        return self.d_mean(x_ref_star, x_star_q) + self.sample_fluctuation(rng)


def synth_unidentifiable(
    modes: ModeSet,
    q: int,
    star: int,
    moments: AttackerMoments,
    S_star: np.ndarray,
) -> UnidentifiablePlan:
    """Shape a Gaussian attack on mode `star` that mode `q` cannot rule out.

    S_star is the true mode's steady-state attack-free residual covariance
    (see `filtering.steady_state_gains`); moments supply the attacker's
    estimate of the mismatch second moment (see `sim.estimate_attack_moments`).
    The covariance D_s is accepted when positive semidefinite; a degenerate
    Gaussian is sampled through a rank factor of D_s.
    """
    tm_q = transform(modes[q])
    tm_star = transform(modes[star])
    W = tm_q.T2 @ modes[star].H
    rows = W.shape[0]

    def infeasible(diag: str) -> UnidentifiablePlan:
        return UnidentifiablePlan(
            q=q,
            star=star,
            feasible=False,
            D_s=np.zeros((modes[star].p, modes[star].p)),
            diagnostics=diag,
            W=W,
            proj=pinv_trunc(W) @ tm_q.T2,
            tm_q=tm_q,
            tm_star=tm_star,
            u_mean=moments.u_mean,
        )

    if matrix_rank(W) < rows:
        return infeasible(
            "T2^q H^star does not have full row rank; the attack cannot match "
            "the masqueraded residual distribution"
        )
    if S_star.shape[0] != rows:
        return infeasible(
            f"residual dimensions differ between modes ({S_star.shape[0]} vs {rows})"
        )
    W_pinv = pinv_trunc(W)
    R = modes[star].R
    D_s = sym(
        W_pinv
        @ (S_star - tm_q.T2 @ (moments.mu_outer + R) @ tm_q.T2.T)
        @ W_pinv.T
    )
    lam = np.linalg.eigvalsh(D_s) if D_s.size else np.zeros(1)
    tol = 1e-10 * max(abs(lam[-1]), 1.0e-12) if D_s.size else 0.0
    if D_s.size and lam[0] < -tol:
        return infeasible(
            f"shaped covariance is indefinite (lambda_min={lam[0]:.3e}); the "
            f"masquerade target is unreachable from this mode pair"
        )
    plan = UnidentifiablePlan(
        q=q,
        star=star,
        feasible=True,
        D_s=D_s,
        diagnostics=None,
        W=W,
        proj=W_pinv @ tm_q.T2,
        tm_q=tm_q,
        tm_star=tm_star,
        u_mean=moments.u_mean,
    )
    return plan
