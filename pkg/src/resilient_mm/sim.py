"""Scenario simulation: ground truth, estimator bank, optional mitigation loop.

Also houses the shipped case studies (five-sensor benchmark, three-area swing
network, generic swing-equation network builder, mirror masquerade pair) and
the red-team execution machinery for unidentifiable-attack plans.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._numeric import psd_factor
from .analysis import (
    AttackerMoments,
    UnidentifiablePlan,
    strong_detectability,
    synth_unidentifiable,
)
from .controller import ControllerGains, control_step, design_controller
from .filtering import FilterStepError, steady_state_gains, transform
from .mm_estimator import EstimatorBank, EstimatorConfig
from .model import (
    AttackSupport,
    ModeSet,
    OperationMode,
    PlantTopology,
    build_mode,
    enumerate_modes,
)

TRACE_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    """Ground-truth script: true modes, known inputs, attack signal, seed.

    mode_schedule maps each step to the index of the true mode in the ModeSet.
    `attack` is either None, an (N, p) array of injected values for the true
    mode, or an object with generate(k, bank, u_prev, rng) for reactive attacks.
    """

    horizon: int
    mode_schedule: np.ndarray
    inputs: np.ndarray
    seed: int
    x0: np.ndarray
    x0_hat: np.ndarray
    P0: np.ndarray
    attack: object | None = None
    nominal_mode: int = 0

    def __post_init__(self) -> None:
        self.mode_schedule = np.asarray(self.mode_schedule, dtype=int)
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if self.inputs.shape[0] != self.horizon:
            raise ValueError("inputs must provide one row per step")
        if self.mode_schedule.shape[0] != self.horizon:
            raise ValueError("mode_schedule must provide one entry per step")
        self.x0 = np.asarray(self.x0, dtype=float)
        self.x0_hat = np.asarray(self.x0_hat, dtype=float)
        P0 = np.asarray(self.P0, dtype=float)
        self.P0 = P0 if P0.ndim == 2 else np.eye(self.x0.shape[0]) * float(P0)


def schedule_from_segments(
    horizon: int, width: int, segments: list[tuple[int, int, np.ndarray]]
) -> np.ndarray:
    """Piecewise-constant (horizon, width) schedule from [start, stop) segments."""
    out = np.zeros((horizon, width))
    for start, stop, value in segments:
        out[int(start) : int(stop)] = np.asarray(value, dtype=float)
    return out


def mode_schedule_from_pairs(horizon: int, pairs: list[tuple[int, int]]) -> np.ndarray:
    """Step function from (from_step, mode) pairs, earliest first."""
    sched = np.zeros(horizon, dtype=int)
    for start, mode_idx in sorted(pairs):
        sched[int(start) :] = int(mode_idx)
    return sched


def scenario_from_json(doc: dict | str | Path) -> Scenario:
    if isinstance(doc, (str, Path)):
        path = Path(doc)
        doc = json.loads(path.read_text() if path.exists() else str(doc))
    horizon = int(doc["horizon"])
    x0 = np.asarray(doc["x0"], dtype=float)
    inputs = schedule_from_segments(
        horizon,
        int(doc["input_width"]),
        [(s, e, np.asarray(v, dtype=float)) for s, e, v in doc.get("input_segments", [])],
    )
    attack = None
    if doc.get("attack_segments"):
        width = max(len(v) for _, _, v in doc["attack_segments"])
        attack = schedule_from_segments(
            horizon,
            width,
            [(s, e, np.asarray(v, dtype=float)) for s, e, v in doc["attack_segments"]],
        )
    return Scenario(
        horizon=horizon,
        mode_schedule=mode_schedule_from_pairs(
            horizon, [tuple(p) for p in doc.get("mode_schedule", [[0, 0]])]
        ),
        inputs=inputs,
        seed=int(doc["seed"]),
        x0=x0,
        x0_hat=np.asarray(doc.get("x0_hat", x0), dtype=float),
        P0=np.asarray(doc.get("P0", 1.0), dtype=float),
        attack=attack,
        nominal_mode=int(doc.get("nominal_mode", 0)),
    )


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

@dataclass
class Trace:
    """Time-indexed simulation and estimation record (fixed, documented columns)."""

    k: np.ndarray
    q_true: np.ndarray
    x_true: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    q_hat: np.ndarray
    x_hat: np.ndarray
    d_hat: np.ndarray
    u: np.ndarray
    P_x_diag: np.ndarray
    d_true: np.ndarray
    truncated: bool = False
    diagnostic: str | None = None
    bank: EstimatorBank | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.k.shape[0]

    def header(self) -> list[str]:
        cols = ["k", "q_true"]
        cols += [f"x_true_{i}" for i in range(self.x_true.shape[1])]
        cols += [f"y_{i}" for i in range(self.y.shape[1])]
        cols += [f"mu_{i}" for i in range(self.mu.shape[1])]
        cols += ["q_hat"]
        cols += [f"x_hat_{i}" for i in range(self.x_hat.shape[1])]
        cols += [f"d_hat_{i}" for i in range(self.d_hat.shape[1])]
        cols += [f"u_{i}" for i in range(self.u.shape[1])]
        cols += [f"P_x_{i}" for i in range(self.P_x_diag.shape[1])]
        return cols

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# resilient-mm trace schema v{TRACE_SCHEMA_VERSION}\n")
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for i in range(len(self)):
                row: list[str] = [str(int(self.k[i])), str(int(self.q_true[i]))]
                for block in (self.x_true, self.y, self.mu):
                    row += [f"{v:.17g}" for v in block[i]]
                row.append(str(int(self.q_hat[i])))
                for block in (self.x_hat, self.d_hat, self.u, self.P_x_diag):
                    row += [f"{v:.17g}" for v in block[i]]
                writer.writerow(row)

    def summary(self) -> dict:
        err = self.x_hat - self.x_true
        tail = slice(3 * len(self) // 4, len(self))
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "steps": int(len(self)),
            "truncated": self.truncated,
            "diagnostic": self.diagnostic,
            "final_mu": [float(v) for v in self.mu[-1]],
            "final_q_hat": int(self.q_hat[-1]),
            "rms_state_error": float(np.sqrt(np.mean(err**2))),
            "tail_mean_state_error": [float(v) for v in err[tail].mean(axis=0)],
        }


# ---------------------------------------------------------------------------
# Closed-loop controller wrapper
# ---------------------------------------------------------------------------

@dataclass
class ClosedLoopController:
    """Per-mode gains plus the actuated input columns.

    The simulator applies the gains of the currently fused mode.  Feedback is
    added on the `fb_cols` input channels on top of the scheduled input; those
    channels must not feed through to the measurements (checked at run start).
    """

    gains: list[ControllerGains | None]
    fb_cols: list[int]


def design_controller_bank(
    modes: ModeSet,
    fb_cols: list[int] | None = None,
    lqr_Q: np.ndarray | None = None,
    lqr_R: np.ndarray | None = None,
    d2_bound: float = np.inf,
    d2_rate_bound: float = 0.0,
    rejection: bool = True,
) -> ClosedLoopController:
    """Design mitigation gains for every mode; rejection=False keeps plain LQR."""
    fb_cols = list(range(modes[0].m)) if fb_cols is None else list(fb_cols)
    gains: list[ControllerGains | None] = []
    for mode in modes:
        tm = transform(mode)
        ss = steady_state_gains(tm)
        g = design_controller(
            tm,
            ss,
            lqr_Q=lqr_Q,
            lqr_R=lqr_R,
            d2_bound=d2_bound,
            d2_rate_bound=d2_rate_bound,
            fb_cols=fb_cols,
        )
        if not rejection:
            g = replace(
                g,
                J1=np.zeros_like(g.J1),
                J2=np.zeros_like(g.J2),
                gamma1=float(np.linalg.norm(tm.G1, 2)) if tm.G1.size else 0.0,
                gamma2=float(np.linalg.norm(tm.G2, 2)) if tm.G2.size else 0.0,
                J_tilde=np.eye(mode.p),
            )
        gains.append(g)
    return ClosedLoopController(gains=gains, fb_cols=fb_cols)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _attack_value(attack, k, bank, u_prev, rng, p_true) -> np.ndarray:
    if attack is None:
        return np.zeros(p_true)
    if isinstance(attack, np.ndarray):
        row = attack[k]
        return np.asarray(row, dtype=float)[:p_true]
    if k == 0 or not bank.states:
        return np.zeros(p_true)
    return np.asarray(attack.generate(k, bank, u_prev, rng), dtype=float)


def simulate(
    modes: ModeSet,
    scenario: Scenario,
    config: EstimatorConfig | None = None,
    controller: ClosedLoopController | None = None,
    probe=None,
    warn_detectability: bool = True,
) -> Trace:
    """Run truth, estimator bank, and (optionally) the mitigation loop.

    All randomness flows from scenario.seed through one generator with a fixed
    per-step draw order, so identical scenarios give bitwise-identical traces.
    On a filter failure the trace is truncated at the failing step and carries
    the diagnostic.  `probe(k, x_true, y, bank)` is called after every
    estimator step (used by the attacker-moment estimation and by tests).
    """
    config = config or EstimatorConfig()
    n = modes[0].n
    l = modes[0].l
    m = modes[0].m
    p_max = modes.max_p
    N = scenario.horizon
    if scenario.mode_schedule.min() < 0 or scenario.mode_schedule.max() >= len(modes):
        raise ValueError(
            f"mode schedule references mode "
            f"{int(scenario.mode_schedule.max())} outside the {len(modes)}-mode bank"
        )

    if warn_detectability:
        for q in np.unique(scenario.mode_schedule):
            verdict = strong_detectability(modes[int(q)])
            if not verdict.strongly_detectable:
                warnings.warn(
                    f"scheduled true mode {int(q)} is not strongly detectable "
                    f"({verdict.reason}); estimates may be biased",
                    RuntimeWarning,
                    stacklevel=2,
                )

    fb_embed = None
    if controller is not None:
        fb_embed = np.zeros((m, len(controller.fb_cols)))
        for col, idx in enumerate(controller.fb_cols):
            fb_embed[idx, col] = 1.0
        for mode in modes:
            if np.any(np.abs(mode.D @ fb_embed) > 1e-12):
                raise ValueError(
                    "closed-loop simulation requires actuated channels without "
                    "measurement feedthrough; use control_step directly for "
                    "feedthrough configurations"
                )

    rng = np.random.default_rng(scenario.seed)
    Lqs = [psd_factor(mode.Q) for mode in modes]
    Lrs = [np.linalg.cholesky(mode.R) for mode in modes]

    bank = EstimatorBank(modes, config)

    ks = np.arange(N)
    q_true = scenario.mode_schedule.copy()
    x_true = np.zeros((N, n))
    ys = np.zeros((N, l))
    mus = np.zeros((N, len(modes)))
    q_hats = np.zeros(N, dtype=int)
    x_hats = np.zeros((N, n))
    d_hats = np.full((N, p_max), np.nan)
    us = np.zeros((N, m))
    P_diags = np.zeros((N, n))
    d_trues = np.full((N, p_max), np.nan)

    def record(k, x, y, mu, q_hat, x_hat, d_hat, u_total, P_diag, d):
        x_true[k] = x
        ys[k] = y
        mus[k] = mu
        q_hats[k] = q_hat
        x_hats[k] = x_hat
        d_hats[k, : d_hat.shape[0]] = d_hat
        us[k] = u_total
        P_diags[k] = P_diag
        d_trues[k, : d.shape[0]] = d

    def feedback(k, u_sched):
        if controller is None:
            return np.zeros(0), u_sched
        q_hat = int(np.argmax(bank.mu))
        gains = controller.gains[q_hat]
        if gains is None:
            return np.zeros(len(controller.fb_cols)), u_sched
        tm = bank.transformed[q_hat]
        st = bank.states[q_hat]
        z1, z2 = tm.z_split(ys[k])
        step = control_step(
            gains,
            z1 - tm.D1 @ u_sched,
            z2 - tm.D2 @ u_sched,
            st.x_hat,
            st.x_hat_pred,
            M2=st.M2,
        )
        return step.u, u_sched + fb_embed @ step.u

    # step 0
    x = scenario.x0.copy()
    q0 = int(q_true[0])
    u_sched = scenario.inputs[0]
    d0 = _attack_value(scenario.attack, 0, bank, u_sched, rng, modes[q0].p)
    v0 = Lrs[q0] @ rng.standard_normal(l)
    y0 = modes[q0].C @ x + modes[q0].D @ u_sched + modes[q0].H @ d0 + v0
    ys[0] = y0
    bank.initialize(scenario.x0_hat, scenario.P0, u_sched, y0)
    _, u_total = feedback(0, u_sched)
    record(
        0, x, y0, bank.mu, int(np.argmax(bank.mu)), scenario.x0_hat,
        np.zeros(modes[int(np.argmax(bank.mu))].p), u_total,
        np.diag(scenario.P0), d0,
    )
    if probe is not None:
        probe(0, x, y0, bank)

    u_prev_total = u_total
    d_prev = d0
    truncated = False
    diagnostic = None
    last = N
    for k in range(1, N):
        q_prev = int(q_true[k - 1])
        qk = int(q_true[k])
        mode_prev = modes[q_prev]
        mode_k = modes[qk]
        Lq = Lqs[q_prev]
        w = Lq @ rng.standard_normal(Lq.shape[1])
        x = mode_prev.A @ x + mode_prev.B @ u_prev_total + mode_prev.G @ d_prev + w
        u_sched = scenario.inputs[k]
        d = _attack_value(scenario.attack, k, bank, u_prev_total, rng, mode_k.p)
        v = Lrs[qk] @ rng.standard_normal(l)
        y = mode_k.C @ x + mode_k.D @ u_sched + mode_k.H @ d + v
        ys[k] = y
        try:
            q_hat, x_hat, d_hat, P_x, _ = bank.step(u_prev_total, u_sched, y)
        except FilterStepError as exc:
            truncated = True
            diagnostic = f"step {k}: {exc} [{exc.reason}]"
            last = k
            break
        _, u_total = feedback(k, u_sched)
        record(k, x, y, bank.mu, q_hat, x_hat, d_hat, u_total, np.diag(P_x), d)
        if probe is not None:
            probe(k, x, y, bank)
        u_prev_total = u_total
        d_prev = d

    sl = slice(0, last)
    return Trace(
        k=ks[sl],
        q_true=q_true[sl],
        x_true=x_true[sl],
        y=ys[sl],
        mu=mus[sl],
        q_hat=q_hats[sl],
        x_hat=x_hats[sl],
        d_hat=d_hats[sl],
        u=us[sl],
        P_x_diag=P_diags[sl],
        d_true=d_trues[sl],
        truncated=truncated,
        diagnostic=diagnostic,
        bank=bank,
    )


# ---------------------------------------------------------------------------
# Benchmark case study (five states, five sensors, one vulnerable actuator)
# ---------------------------------------------------------------------------

def benchmark_topology() -> PlantTopology:
    """Five-state single-input benchmark with one vulnerable actuator and four
    vulnerable sensors (the fifth sensor is trusted)."""
    A = np.array(
        [
            [0.5, 2.0, 0.0, 0.0, 0.0],
            [0.0, 0.2, 1.0, 0.0, 1.0],
            [0.0, 0.0, 0.3, 0.0, 1.0],
            [0.0, 0.0, 0.0, 0.7, 1.0],
            [0.0, 0.0, 0.0, 0.0, 0.1],
        ]
    )
    B = np.array([[1.0], [0.1], [0.1], [1.0], [0.0]])
    C = np.array(
        [
            [1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, -0.1, 0.0, 0.0],
            [0.0, 0.0, 1.0, -0.5, 0.2],
            [0.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.25, 0.0, 0.0, 1.0],
        ]
    )
    D = np.zeros((5, 1))
    Q = 1e-4 * np.array(
        [
            [1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.5, 0.0, 0.0],
            [0.0, 0.5, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0],
        ]
    )
    R = 1e-4 * np.array(
        [
            [1.0, 0.0, 0.0, 0.5, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.3],
            [0.0, 0.0, 1.0, 0.0, 0.0],
            [0.5, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.3, 0.0, 0.0, 1.0],
        ]
    )
    calH = np.zeros((5, 4))
    calH[:4, :4] = np.eye(4)
    return PlantTopology(
        operation_modes=[OperationMode(A=A, B=B, C=C, D=D)],
        calG=B.copy(),
        calH=calH,
        Q=Q,
        R=R,
    )


def benchmark_attack_signal(horizon: int) -> np.ndarray:
    """Desk-scale attack magnitudes: one slow sinusoid plus three biases."""
    k = np.arange(horizon)
    d = np.zeros((horizon, 4))
    d[:, 0] = 0.5 * np.sin(2.0 * np.pi * k / 400.0)
    d[:, 1] = 1.0
    d[:, 2] = -0.8
    d[:, 3] = 0.6
    return d


def build_benchmark(horizon: int = 1000, seed: int = 42) -> tuple[ModeSet, Scenario]:
    """Benchmark bank (five hypotheses) and its attack-switch scenario.

    The known input steps to +2 on [100, 300] and -2 on [500, 700]; the true
    attack location set switches from hypothesis index 2 to index 1 at k=500.
    """
    topo = benchmark_topology()
    modes = enumerate_modes(topo, p=4)
    inputs = np.zeros((horizon, 1))
    inputs[100:301] = 2.0
    inputs[500:701] = -2.0
    scenario = Scenario(
        horizon=horizon,
        mode_schedule=mode_schedule_from_pairs(horizon, [(0, 2), (500, 1)]),
        inputs=inputs,
        seed=seed,
        x0=np.zeros(5),
        x0_hat=np.zeros(5),
        P0=np.eye(5),
        attack=benchmark_attack_signal(horizon),
        nominal_mode=0,
    )
    return modes, scenario


# ---------------------------------------------------------------------------
# Swing-equation power networks
# ---------------------------------------------------------------------------

@dataclass
class PowerNetwork:
    """Bus/line description of a swing-equation network.

    kinds[i] is "gen" or "load"; edges hold (i, j, susceptance) with symmetric
    coupling.  Measurements per bus: electrical power output, phase angle,
    angular frequency, each with noise scale r_scale.
    """

    kinds: list[str]
    edges: list[tuple[int, int, float]]
    damping: float = 1.0
    inertia_gen: float = 10.0
    inertia_load: float = 100.0
    dt: float = 0.01
    q_intensity: float = 0.01
    r_scale: float = 0.01**4

    def __post_init__(self) -> None:
        for i, j, t in self.edges:
            if i == j:
                raise ValueError("self-loops are not allowed")
            if not (0 <= i < self.n_buses and 0 <= j < self.n_buses):
                raise ValueError(f"edge ({i},{j}) references an unknown bus")
            if t <= 0:
                raise ValueError("susceptances must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n_buses(self) -> int:
        return len(self.kinds)

    @property
    def inertias(self) -> np.ndarray:
        return np.array(
            [self.inertia_gen if k == "gen" else self.inertia_load for k in self.kinds]
        )

    @property
    def generators(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == "gen"]


@dataclass(frozen=True)
class PowerAttackMode:
    """One attack hypothesis: a set of severed lines plus attacked signals."""

    name: str
    cut_lines: tuple[tuple[int, int], ...] = ()
    attacked_gens: tuple[int, ...] = ()
    attacked_sensors: tuple[tuple[int, int], ...] = ()  # (bus, channel 0..2)


def load_edges_csv(path: str | Path) -> list[tuple[int, int, float]]:
    """Edge list ingestion: CSV rows `from,to,susceptance` (header optional)."""
    edges: list[tuple[int, int, float]] = []
    with Path(path).open() as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                i, j, t = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                continue  # header row
            edges.append((i, j, t))
    return edges


def _connected(n_buses: int, edges: list[tuple[int, int, float]]) -> bool:
    if n_buses == 0:
        return True
    adj: dict[int, list[int]] = {i: [] for i in range(n_buses)}
    for i, j, _ in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n_buses


def power_topology(
    network: PowerNetwork, attack_modes: list[PowerAttackMode]
) -> tuple[PlantTopology, list[AttackSupport]]:
    """Assemble the switched state-space family for a set of attack modes.

    State is [theta_0..theta_{V-1}, omega_0..omega_{V-1}] in deviation
    coordinates, discretized by forward Euler at network.dt.  Known inputs are
    the generator mechanical powers followed by one load-demand channel per
    bus; the demand feeds through to the power measurement.  Process noise
    enters the frequency dynamics through the same Euler/inertia scaling as
    the inputs.
    """
    V = network.n_buses
    m_i = network.inertias
    gens = network.generators
    dt = network.dt
    n = 2 * V
    m = len(gens) + V
    l = 3 * V

    def a_matrix(edges: list[tuple[int, int, float]]) -> np.ndarray:
        lap = np.zeros((V, V))
        for i, j, t in edges:
            lap[i, i] += t
            lap[j, j] += t
            lap[i, j] -= t
            lap[j, i] -= t
        Ac = np.zeros((n, n))
        Ac[:V, V:] = np.eye(V)
        Ac[V:, :V] = -lap / m_i[:, None]
        Ac[V:, V:] = -np.diag(network.damping / m_i * np.ones(V))
        return np.eye(n) + dt * Ac

    Bc = np.zeros((n, m))
    for col, g in enumerate(gens):
        Bc[V + g, col] = 1.0 / m_i[g]
    for bus in range(V):
        Bc[V + bus, len(gens) + bus] = -1.0 / m_i[bus]
    B = dt * Bc

    C = np.zeros((l, n))
    Dm = np.zeros((l, m))
    for bus in range(V):
        C[3 * bus + 0, V + bus] = network.damping  # electrical power ~ D_i * omega
        Dm[3 * bus + 0, len(gens) + bus] = 1.0     # ... plus the known demand
        C[3 * bus + 1, bus] = 1.0                  # angle
        C[3 * bus + 2, V + bus] = 1.0              # frequency
    Q = np.zeros((n, n))
    for bus in range(V):
        Q[V + bus, V + bus] = network.q_intensity * (dt / m_i[bus]) ** 2
    R = network.r_scale * np.eye(l)

    vulnerable_gens = sorted({g for am in attack_modes for g in am.attacked_gens})
    vulnerable_sensors = sorted(
        {(b, c) for am in attack_modes for (b, c) in am.attacked_sensors}
    )
    calG = np.zeros((n, len(vulnerable_gens)))
    for col, g in enumerate(vulnerable_gens):
        calG[V + g, col] = dt / m_i[g]
    calH = np.zeros((l, len(vulnerable_sensors)))
    for col, (b, c) in enumerate(vulnerable_sensors):
        calH[3 * b + c, col] = 1.0

    cut_sets: list[tuple[tuple[int, int], ...]] = []
    for am in attack_modes:
        cuts = tuple(sorted(tuple(sorted(e)) for e in am.cut_lines))
        if cuts not in cut_sets:
            cut_sets.append(cuts)
    op_modes = []
    for cuts in cut_sets:
        cut_lookup = set(cuts)
        edges = [
            e for e in network.edges if tuple(sorted((e[0], e[1]))) not in cut_lookup
        ]
        if not _connected(V, edges):
            warnings.warn(
                f"line cuts {cuts} leave the network disconnected; estimation "
                f"is still attempted on the islanded dynamics",
                RuntimeWarning,
                stacklevel=2,
            )
        op_modes.append(OperationMode(A=a_matrix(edges), B=B, C=C, D=Dm))

    topo = PlantTopology(
        operation_modes=op_modes, calG=calG, calH=calH, Q=Q, R=R
    )
    supports = []
    for am in attack_modes:
        cuts = tuple(sorted(tuple(sorted(e)) for e in am.cut_lines))
        supports.append(
            AttackSupport.from_signals(
                topo,
                cut_sets.index(cuts),
                actuators=[vulnerable_gens.index(g) for g in am.attacked_gens],
                sensors=[vulnerable_sensors.index(s) for s in am.attacked_sensors],
            )
        )
    return topo, supports


def build_power_network(
    network: PowerNetwork, attack_modes: list[PowerAttackMode]
) -> ModeSet:
    """One ModeModel per attack mode (line cuts pick the operation mode)."""
    topo, supports = power_topology(network, attack_modes)
    return ModeSet([build_mode(topo, s) for s in supports])


def three_area_network() -> PowerNetwork:
    """Three interconnected control areas, one equivalent generator each."""
    return PowerNetwork(
        kinds=["gen", "gen", "gen"],
        edges=[(0, 1, 1.5), (1, 2, 1.5), (0, 2, 1.5)],
    )


def three_area_breaker_modes() -> list[PowerAttackMode]:
    """Bus-attack hypotheses: all breakers closed, or one area severed."""
    modes = [PowerAttackMode(name="all-closed")]
    for area in range(3):
        cuts = tuple(
            (i, j)
            for (i, j, _) in three_area_network().edges
            if area in (i, j)
        )
        modes.append(PowerAttackMode(name=f"breaker-{area}-open", cut_lines=cuts))
    return modes


def three_area_actuator_modes() -> list[PowerAttackMode]:
    """Single hypothesis: data injection on generator 0, topology intact."""
    return [PowerAttackMode(name="gen0-injection", attacked_gens=(0,))]


# ---------------------------------------------------------------------------
# Mirror masquerade pair (red-team demonstration system)
# ---------------------------------------------------------------------------

def mirror_pair_modes(
    a: float = 0.95,
    b: float = 1.0,
    pole: float = 0.8,
    r: float = 1e-4,
    noise_corr: float = 0.95,
    q: float = 1e-4,
) -> ModeSet:
    """Two sensor-attack hypotheses that are mirror images of each other.

    The two modes swap which of two sensors carries the attack, with the
    output gains swapped accordingly, so their filters have identical residual
    statistics; the gain asymmetry a < b leaves room for a strictly positive
    shaped-attack covariance.
    """
    A = np.array([[pole]])
    B = np.array([[1.0]])
    Q = np.array([[q]])
    R = r * np.array([[1.0, noise_corr], [noise_corr, 1.0]])
    G = np.zeros((1, 1))
    mode_q = dict(A=A, B=B, G=G, Q=Q, R=R, D=np.zeros((2, 1)))
    from .model import ModeModel

    return ModeSet(
        [
            ModeModel(
                C=np.array([[a], [b]]),
                H=np.array([[1.0], [0.0]]),
                label=(0, (("s", 0),)),
                **mode_q,
            ),
            ModeModel(
                C=np.array([[b], [a]]),
                H=np.array([[0.0], [1.0]]),
                label=(0, (("s", 1),)),
                **mode_q,
            ),
        ]
    )


def mirror_pair_scenario(
    horizon: int = 12000, seed: int = 7, true_mode: int = 1, input_amp: float = 5.0
) -> Scenario:
    k = np.arange(horizon)
    inputs = (input_amp * np.sin(2.0 * np.pi * k / 500.0)).reshape(-1, 1)
    return Scenario(
        horizon=horizon,
        mode_schedule=np.full(horizon, true_mode, dtype=int),
        inputs=inputs,
        seed=seed,
        x0=np.zeros(1),
        x0_hat=np.zeros(1),
        P0=np.eye(1),
        nominal_mode=0,
    )


# ---------------------------------------------------------------------------
# Red-team execution
# ---------------------------------------------------------------------------

class PlanAttack:
    """Reactive attack source executing an unidentifiable-attack plan.

    Each step it rebuilds the plan's filter references from the estimator bank
    (the attacker runs the same bank), evaluates the shaped mean, and adds the
    D_s fluctuation unless mean_only.  Used both for final execution and for
    the attacker's own moment-estimation runs.
    """

    def __init__(self, plan: UnidentifiablePlan, mean_only: bool = False):
        self.plan = plan
        self.mean_only = mean_only
        self.last_mean: np.ndarray | None = None
        self.last_x_star_q: np.ndarray | None = None

    def _references(self, bank: EstimatorBank, u_prev: np.ndarray):
        plan = self.plan
        tm_q = bank.transformed[plan.q]
        st_q = bank.states[plan.q]
        tm_s = bank.transformed[plan.star]
        st_s = bank.states[plan.star]
        x_star_q = (
            tm_q.mode.A @ st_q.x_hat + tm_q.mode.B @ u_prev + tm_q.G1 @ st_q.d1_hat
        )
        x_ref_star = (
            tm_s.mode.A @ st_s.x_hat + tm_s.mode.B @ u_prev + tm_s.G1 @ st_s.d1_hat
        )
        return x_ref_star, x_star_q

    def generate(self, k: int, bank: EstimatorBank, u_prev: np.ndarray, rng) -> np.ndarray:
        x_ref_star, x_star_q = self._references(bank, u_prev)
        mean = self.plan.d_mean(x_ref_star, x_star_q)
        self.last_mean = mean
        self.last_x_star_q = x_star_q
        if self.mean_only:
            return mean
        return mean + self.plan.sample_fluctuation(rng)


def estimate_attack_moments(
    modes: ModeSet,
    q: int,
    star: int,
    scenario: Scenario,
    plan: UnidentifiablePlan,
    n_runs: int = 100,
    burn_in: int = 200,
    mean_only: bool = True,
) -> AttackerMoments:
    """Monte-Carlo estimate of the masquerade mismatch second moment.

    Averages the outer product of mu = C* x - C^q x_star^q + (D*-D^q) u + H* d_mean
    over `n_runs` simulations driven by the plan's mean attack (plus the current
    fluctuation when mean_only=False, used to refine a provisional plan).
    """
    mode_q, mode_s = modes[q], modes[star]
    acc = np.zeros((mode_s.l, mode_s.l))
    count = 0

    for run in range(n_runs):
        attack = PlanAttack(plan, mean_only=mean_only)
        collected: list[np.ndarray] = []

        def probe(k, x_true, y, bank, _attack=attack, _collected=collected):
            if k <= burn_in or _attack.last_mean is None:
                return
            u_k = scenario.inputs[k]
            mu_vec = (
                mode_s.C @ x_true
                - mode_q.C @ _attack.last_x_star_q
                + (mode_s.D - mode_q.D) @ u_k
                + mode_s.H @ _attack.last_mean
            )
            _collected.append(np.outer(mu_vec, mu_vec))

        run_scenario = replace(scenario, seed=scenario.seed + 7919 * (run + 1), attack=attack)
        simulate(modes, run_scenario, probe=probe, warn_detectability=False)
        if collected:
            acc += np.sum(collected, axis=0)
            count += len(collected)
    if count == 0:
        raise ValueError("no mismatch samples collected; increase the horizon")
    u_mean = scenario.inputs.mean(axis=0)
    return AttackerMoments(mu_outer=acc / count, u_mean=u_mean)


def design_unidentifiable_attack(
    modes: ModeSet,
    q: int,
    star: int,
    scenario: Scenario,
    n_runs: int = 100,
    refine: int = 1,
    burn_in: int = 200,
) -> UnidentifiablePlan:
    """Full red-team pipeline: moment estimation, shaping, optional refinement.

    The first moment pass drives the system with the mean attack alone; each
    refinement pass re-estimates the moments under the currently shaped attack,
    because the injected fluctuation feeds back into the masqueraded filter.
    """
    ss_star = steady_state_gains(transform(modes[star]))
    S_star = ss_star.R2_star
    u_mean = scenario.inputs.mean(axis=0)
    provisional = synth_unidentifiable(
        modes,
        q,
        star,
        AttackerMoments(mu_outer=np.zeros((modes[star].l,) * 2), u_mean=u_mean),
        S_star,
    )
    if not provisional.feasible and "full row rank" in (provisional.diagnostics or ""):
        return provisional  # structurally infeasible, no moments can repair it
    plan = provisional
    runs_per_pass = max(1, n_runs // (1 + max(0, refine)))
    moments = estimate_attack_moments(
        modes, q, star, scenario, plan, n_runs=runs_per_pass, burn_in=burn_in, mean_only=True
    )
    plan = synth_unidentifiable(modes, q, star, moments, S_star)
    for _ in range(max(0, refine)):
        if not plan.feasible:
            break
        moments = estimate_attack_moments(
            modes, q, star, scenario, plan, n_runs=runs_per_pass, burn_in=burn_in, mean_only=False
        )
        plan = synth_unidentifiable(modes, q, star, moments, S_star)
    return plan


def masquerade_band_fraction(
    bank: EstimatorBank, q: int, star: int, window: int, rho: float, burn_in: int = 500
) -> float:
    """Fraction of sliding windows whose geometric-mean likelihood ratio
    between modes q and star stays inside [1/rho, rho]."""
    ll = np.stack(bank.loglik_history)
    diff = ll[:, q] - ll[:, star]
    if diff.shape[0] < burn_in + window:
        raise ValueError("history too short for the requested window")
    csum = np.concatenate([[0.0], np.cumsum(diff)])
    starts = np.arange(burn_in, diff.shape[0] - window + 1)
    rates = (csum[starts + window] - csum[starts]) / window
    return float(np.mean(np.abs(rates) <= math.log(rho)))
