"""Static multiple-model estimator: likelihoods, mode probabilities, fusion.

Each hypothesis runs its own input-and-state filter.  The attack-free residual
of each filter feeds a Gaussian likelihood (pseudo-inverse/pseudo-determinant
form, evaluated in log space), mode probabilities follow a floored Bayes
update, and the output is that of the most probable mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .filtering import FilterState, TransformedMode, filter_step, init_filter, transform
from .model import ModeSet

LIKELIHOOD_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class EstimatorConfig:
    """Tunables of the probability engine.

    epsilon floors the unnormalized posterior so dormant modes stay alive
    across attack switches; rho and window parameterize the windowed
    geometric-mean dominance test used for detection and identification.
    """

    epsilon: float = 1e-6
    rho: float = 1.05
    window: int = 200


@dataclass(frozen=True)
class DetectionReport:
    """Outcome of the windowed dominance test.

    indistinguishable_set lists the modes statistically tied with the leading
    one (geometric-mean likelihood-ratio within [1/rho, rho] over the window);
    identified_mode is set only when a non-nominal mode dominates uniquely.
    """

    attack_detected: bool
    identified_mode: int | None
    indistinguishable_set: list[int]
    favored_mode: int
    window: int


def gen_innovation(
    tm: TransformedMode,
    st: FilterState,
    u_now: np.ndarray,
    y_now: np.ndarray,
    n_modes: int = 1,
) -> np.ndarray:
    """Attack-free measurement residual nu = z2 - C2 x_star - D2 u.

    With a full-rank square feedthrough the residual is empty; that is an error
    whenever more than one hypothesis must be ranked, because there is then no
    attack-free evidence to rank them with.
    """
    _, z2 = tm.z_split(np.asarray(y_now, dtype=float))
    if z2.shape[0] == 0 and n_modes > 1:
        raise ValueError(
            "the attack-free residual is empty (feedthrough rank equals the "
            "number of measurements); mode probabilities cannot be computed"
        )
    return z2 - tm.C2 @ st.x_star - tm.D2 @ np.asarray(u_now, dtype=float)


def log_likelihood(residual: np.ndarray, R2_star: np.ndarray) -> float:
    """Log Gaussian density with pseudo-inverse and pseudo-determinant.

    The normalizing power is the rank of R2_star.  Rank zero with a nonzero
    residual gives -inf (density 0); an empty residual gives 0 (density 1).
    """
    residual = np.asarray(residual, dtype=float)
    if residual.shape[0] == 0:
        return 0.0
    lam, vec = np.linalg.eigh(0.5 * (R2_star + R2_star.T))
    lam_max = max(float(lam[-1]), 0.0)
    keep = lam > LIKELIHOOD_RANK_RTOL * max(lam_max, 1e-300)
    rank = int(np.count_nonzero(keep))
    if rank == 0:
        return 0.0 if not np.any(residual) else -math.inf
    proj = vec[:, keep].T @ residual
    quad = float(np.sum(proj**2 / lam[keep]))
    logdet = float(np.sum(np.log(lam[keep])))
    return -0.5 * (rank * math.log(2.0 * math.pi) + logdet + quad)


def likelihood(residual: np.ndarray, R2_star: np.ndarray) -> float:
    """Gaussian density of the attack-free residual (linear scale)."""
    return math.exp(log_likelihood(residual, R2_star))


def update_probabilities(
    mu: np.ndarray,
    log_likelihoods: np.ndarray,
    epsilon: float = 1e-6,
) -> tuple[np.ndarray, bool]:
    """Floored Bayes update of the mode probabilities, in log space.

    Returns the new simplex vector and a flag that is True when every
    likelihood was zero, in which case mu is returned unchanged.
    """
    mu = np.asarray(mu, dtype=float)
    ll = np.asarray(log_likelihoods, dtype=float)
    if np.all(np.isneginf(ll)):
        return mu.copy(), True
    with np.errstate(divide="ignore"):
        log_bar = np.maximum(ll + np.log(mu), math.log(epsilon))
    log_bar -= log_bar.max()
    w = np.exp(log_bar)
    return w / w.sum(), False


def fuse_output(
    mu: np.ndarray, states: list[FilterState]
) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Hard selection: outputs of the most probable mode (ties -> lowest index)."""
    q_hat = int(np.argmax(mu))
    st = states[q_hat]
    return q_hat, st.x_hat, st.d_hat, st.P_x, st.P_d


@dataclass
class EstimatorBank:
    """Mode probabilities plus one filter per hypothesis, with history.

    Step order within one measurement: every filter advances, likelihoods are
    evaluated, probabilities are updated, and the fused output is selected.
    Per-mode work is independent; results do not depend on evaluation order.
    """

    modes: ModeSet
    config: EstimatorConfig = field(default_factory=EstimatorConfig)
    transformed: list[TransformedMode] = field(init=False)
    states: list[FilterState] = field(init=False, default_factory=list)
    mu: np.ndarray = field(init=False)
    mu_history: list[np.ndarray] = field(init=False, default_factory=list)
    loglik_history: list[np.ndarray] = field(init=False, default_factory=list)
    all_zero_flag: bool = field(init=False, default=False)

    def __post_init__(self) -> None:
        self.transformed = [transform(m) for m in self.modes]
        if len(self.modes) > 1:
            for tm in self.transformed:
                if tm.mode.l - tm.p_H == 0:
                    raise ValueError(
                        f"mode {tm.mode.label}: attack feedthrough spans all "
                        f"measurements, leaving no attack-free residual to "
                        f"rank hypotheses with"
                    )

    def __len__(self) -> int:
        return len(self.modes)

    def initialize(
        self,
        x0_hat: np.ndarray,
        P0: np.ndarray,
        u0: np.ndarray,
        y0: np.ndarray,
        mu0: np.ndarray | None = None,
    ) -> None:
        n_modes = len(self.modes)
        self.states = [init_filter(tm, x0_hat, P0, u0, y0) for tm in self.transformed]
        self.mu = (
            np.full(n_modes, 1.0 / n_modes) if mu0 is None else np.asarray(mu0, dtype=float)
        )
        if abs(self.mu.sum() - 1.0) > 1e-9 or np.any(self.mu <= 0.0):
            raise ValueError("mu0 must be strictly positive and sum to 1")
        self.mu_history = [self.mu.copy()]
        self.loglik_history = []

    def step(
        self, u_prev: np.ndarray, u_now: np.ndarray, y_now: np.ndarray
    ) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Advance the whole bank by one measurement and return the fused output."""
        n_modes = len(self.modes)
        new_states: list[FilterState] = []
        logls = np.empty(n_modes)
        for j, tm in enumerate(self.transformed):
            st = filter_step(tm, self.states[j], u_prev, u_now, y_now)
            nu = gen_innovation(tm, st, u_now, y_now, n_modes=n_modes)
            logls[j] = log_likelihood(nu, st.R2_star)
            new_states.append(st)
        self.states = new_states
        self.mu, self.all_zero_flag = update_probabilities(
            self.mu, logls, self.config.epsilon
        )
        self.mu_history.append(self.mu.copy())
        self.loglik_history.append(logls)
        return fuse_output(self.mu, self.states)


def detection_report(
    bank: EstimatorBank,
    nominal_mode: int,
    window: int | None = None,
) -> DetectionReport:
    """Windowed dominance test over the bank's recorded history.

    The favored mode maximizes the windowed geometric mean of its probability.
    A competing mode is indistinguishable from it when the geometric mean of
    their per-step likelihood ratios over the window stays within [1/rho, rho];
    identification requires unique dominance by more than that margin.
    """
    window = bank.config.window if window is None else window
    if len(bank.loglik_history) < window:
        raise ValueError(
            f"detection needs at least {window} steps of history, "
            f"have {len(bank.loglik_history)}"
        )
    mu_win = np.stack(bank.mu_history[-window:])
    gm_mu = np.exp(np.mean(np.log(np.maximum(mu_win, 1e-300)), axis=0))
    favored = int(np.argmax(gm_mu))

    ll_win = np.stack(bank.loglik_history[-window:])
    rates = ll_win.mean(axis=0)
    log_rho = math.log(bank.config.rho)
    ties = [
        j
        for j in range(len(bank.modes))
        if j != favored and (rates[favored] - rates[j]) <= log_rho
    ]
    indistinguishable = sorted([favored, *ties]) if ties else []
    attack_detected = favored != nominal_mode or bool(ties)
    identified = favored if (favored != nominal_mode and not ties) else None
    return DetectionReport(
        attack_detected=attack_detected,
        identified_mode=identified,
        indistinguishable_set=indistinguishable,
        favored_mode=favored,
        window=window,
    )
