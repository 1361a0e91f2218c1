"""Mode models for switched linear systems under signal and switching attacks.

A plant is described once (per operation mode) together with the catalogue of
vulnerable actuators and sensors.  An attack hypothesis picks an operation mode
and a subset of vulnerable signals; `build_mode` turns that into the concrete
state-space matrices used by the filters, and `enumerate_modes` generates the
full hypothesis bank.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._numeric import is_symmetric


class DimensionError(ValueError):
    """A supplied matrix has a shape inconsistent with the topology."""


def _check_shape(mat: np.ndarray, shape: tuple[int, int], name: str) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape != shape:
        raise DimensionError(f"{name} has shape {mat.shape}, expected {shape}")
    return mat


@dataclass(frozen=True)
class OperationMode:
    """Base matrices of one operation mode (one switching/topology hypothesis)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


@dataclass(frozen=True)
class PlantTopology:
    """Plant description plus the catalogue of vulnerable signals.

    operation_modes holds (A, B, C, D) per switching hypothesis; calG maps the
    t_a vulnerable actuator channels into the state equation and calH maps the
    t_s vulnerable sensor channels into the output equation.
    """

    operation_modes: list[OperationMode]
    calG: np.ndarray
    calH: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        if not self.operation_modes:
            raise ValueError("at least one operation mode is required")
        n, m = self.operation_modes[0].A.shape[0], self.operation_modes[0].B.shape[1]
        l = self.operation_modes[0].C.shape[0]
        for i, om in enumerate(self.operation_modes):
            _check_shape(om.A, (n, n), f"A[{i}]")
            _check_shape(om.B, (n, m), f"B[{i}]")
            _check_shape(om.C, (l, n), f"C[{i}]")
            _check_shape(om.D, (l, m), f"D[{i}]")
        t_a = self.calG.shape[1]
        t_s = self.calH.shape[1]
        _check_shape(self.calG, (n, t_a), "calG")
        _check_shape(self.calH, (l, t_s), "calH")
        _check_shape(self.Q, (n, n), "Q")
        _check_shape(self.R, (l, l), "R")
        if t_a > m:
            raise ValueError(f"t_a={t_a} exceeds the number of inputs m={m}")
        if t_s > l:
            raise ValueError(f"t_s={t_s} exceeds the number of outputs l={l}")
        if not is_symmetric(self.Q):
            raise ValueError("Q must be symmetric")
        if not is_symmetric(self.R):
            raise ValueError("R must be symmetric")
        if self.Q.size and np.linalg.eigvalsh(self.Q)[0] < -1e-10 * max(np.trace(self.Q), 1e-30):
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(self.R)[0] <= 0.0:
            raise ValueError("R must be positive definite")

    @property
    def n(self) -> int:
        return self.operation_modes[0].A.shape[0]

    @property
    def m(self) -> int:
        return self.operation_modes[0].B.shape[1]

    @property
    def l(self) -> int:
        return self.operation_modes[0].C.shape[0]

    @property
    def t_m(self) -> int:
        return len(self.operation_modes)

    @property
    def t_a(self) -> int:
        return self.calG.shape[1]

    @property
    def t_s(self) -> int:
        return self.calH.shape[1]


@dataclass(frozen=True)
class AttackSupport:
    """One attack-location hypothesis: operation mode plus signal index matrices.

    I_G (t_a x p) and I_H (t_s x p) are 0/1 matrices selecting which vulnerable
    signal each of the p attack channels hits.  A column may select one actuator,
    one sensor, or (for a mixed attack) one of each; never two of the same kind.
    """

    q_m: int
    I_G: np.ndarray
    I_H: np.ndarray

    def __post_init__(self) -> None:
        ig = np.atleast_2d(np.asarray(self.I_G, dtype=float))
        ih = np.atleast_2d(np.asarray(self.I_H, dtype=float))
        if ig.shape[1] != ih.shape[1]:
            raise DimensionError(
                f"I_G has {ig.shape[1]} columns but I_H has {ih.shape[1]}"
            )
        for name, mat in (("I_G", ig), ("I_H", ih)):
            if mat.size and not np.all((mat == 0.0) | (mat == 1.0)):
                raise ValueError(f"{name} must be a 0/1 matrix")
        for col in range(ig.shape[1]):
            n_act = int(ig[:, col].sum()) if ig.size else 0
            n_sen = int(ih[:, col].sum()) if ih.size else 0
            if n_act > 1 or n_sen > 1:
                raise ValueError(
                    f"attack channel {col} selects more than one signal of the same kind"
                )
            if n_act + n_sen == 0:
                raise ValueError(f"attack channel {col} selects no signal")
        object.__setattr__(self, "I_G", ig)
        object.__setattr__(self, "I_H", ih)

    @property
    def p(self) -> int:
        return self.I_G.shape[1]

    @property
    def support_key(self) -> tuple[tuple[str, int], ...]:
        """Canonical, order-stable identity of the attacked signal set."""
        sigs: list[tuple[str, int]] = []
        for col in range(self.p):
            rows_a = np.nonzero(self.I_G[:, col])[0]
            rows_s = np.nonzero(self.I_H[:, col])[0]
            for r in rows_a:
                sigs.append(("a", int(r)))
            for r in rows_s:
                sigs.append(("s", int(r)))
        return tuple(sorted(sigs))

    @staticmethod
    def from_signals(
        topology: PlantTopology,
        q_m: int,
        actuators: list[int] = (),
        sensors: list[int] = (),
        mixed: list[tuple[int, int]] = (),
    ) -> "AttackSupport":
        """Build index matrices from vulnerable-signal indices.

        `actuators`/`sensors` list indices into the columns of calG/calH; each
        entry of `mixed` is an (actuator, sensor) pair sharing one attack channel.
        Channels are ordered actuators, then sensors, then mixed pairs.
        """
        p = len(actuators) + len(sensors) + len(mixed)
        ig = np.zeros((topology.t_a, p))
        ih = np.zeros((topology.t_s, p))
        col = 0
        for a in sorted(actuators):
            ig[a, col] = 1.0
            col += 1
        for s in sorted(sensors):
            ih[s, col] = 1.0
            col += 1
        for a, s in mixed:
            ig[a, col] = 1.0
            ih[s, col] = 1.0
            col += 1
        return AttackSupport(q_m=q_m, I_G=ig, I_H=ih)


@dataclass(frozen=True)
class ModeModel:
    """Concrete state-space matrices of one attack-mode hypothesis."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    C: np.ndarray
    D: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    label: tuple = ()

    def __post_init__(self) -> None:
        n = self.A.shape[0]
        m = self.B.shape[1]
        l = self.C.shape[0]
        p = self.G.shape[1]
        _check_shape(self.A, (n, n), "A")
        _check_shape(self.B, (n, m), "B")
        _check_shape(self.G, (n, p), "G")
        _check_shape(self.C, (l, n), "C")
        _check_shape(self.D, (l, m), "D")
        _check_shape(self.H, (l, p), "H")
        _check_shape(self.Q, (n, n), "Q")
        _check_shape(self.R, (l, l), "R")
        if np.linalg.eigvalsh(self.R)[0] <= 0.0:
            raise ValueError("R must be positive definite")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def l(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.G.shape[1]


@dataclass
class ModeSet:
    """Ordered bank of mode hypotheses sharing state/input/output dimensions."""

    modes: list[ModeModel] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.modes:
            raise ValueError("a ModeSet needs at least one mode")
        n, m, l = self.modes[0].n, self.modes[0].m, self.modes[0].l
        for i, mode in enumerate(self.modes):
            if (mode.n, mode.m, mode.l) != (n, m, l):
                raise DimensionError(f"mode {i} has dims {(mode.n, mode.m, mode.l)}, expected {(n, m, l)}")

    def __len__(self) -> int:
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __getitem__(self, idx: int) -> ModeModel:
        return self.modes[idx]

    @property
    def max_p(self) -> int:
        return max(mode.p for mode in self.modes)


def build_mode(topology: PlantTopology, support: AttackSupport) -> ModeModel:
    """Assemble the mode matrices G = calG @ I_G and H = calH @ I_H."""
    if not 0 <= support.q_m < topology.t_m:
        raise ValueError(f"operation mode {support.q_m} outside 0..{topology.t_m - 1}")
    if support.I_G.shape[0] != topology.t_a:
        raise DimensionError(
            f"I_G has {support.I_G.shape[0]} rows, expected t_a={topology.t_a}"
        )
    if support.I_H.shape[0] != topology.t_s:
        raise DimensionError(
            f"I_H has {support.I_H.shape[0]} rows, expected t_s={topology.t_s}"
        )
    om = topology.operation_modes[support.q_m]
    return ModeModel(
        A=om.A.copy(),
        B=om.B.copy(),
        G=topology.calG @ support.I_G,
        C=om.C.copy(),
        D=om.D.copy(),
        H=topology.calH @ support.I_H,
        Q=topology.Q.copy(),
        R=topology.R.copy(),
        label=(support.q_m, support.support_key),
    )


def enumerate_supports(
    topology: PlantTopology,
    p: int,
    n_a: int | None = None,
    n_s: int | None = None,
) -> list[AttackSupport]:
    """All attack-location hypotheses for up to p attacks, one ModeSet entry each.

    Without per-kind limits every p-subset of the t_a + t_s vulnerable signals
    is a hypothesis.  With limits n_a/n_s the hypotheses are, for each actuator
    count i <= min(n_a, p), the i-subsets of actuators paired with the
    min(p - i, n_s)-subsets of sensors.
    """
    t_a, t_s = topology.t_a, topology.t_s
    supports: list[AttackSupport] = []
    if n_a is None and n_s is None:
        if p > t_a + t_s:
            raise ValueError(f"p={p} exceeds the {t_a + t_s} vulnerable signals")
        for combo in itertools.combinations(range(t_a + t_s), p):
            acts = [i for i in combo if i < t_a]
            sens = [i - t_a for i in combo if i >= t_a]
            for q_m in range(topology.t_m):
                supports.append(AttackSupport.from_signals(topology, q_m, acts, sens))
    else:
        n_a = t_a if n_a is None else n_a
        n_s = t_s if n_s is None else n_s
        if n_a > t_a or n_s > t_s:
            raise ValueError(f"n_a={n_a}, n_s={n_s} exceed t_a={t_a}, t_s={t_s}")
        combos: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
        for i in range(min(n_a, p) + 1):
            k_s = min(p - i, n_s)
            for acts in itertools.combinations(range(t_a), i):
                for sens in itertools.combinations(range(t_s), k_s):
                    combos.append((acts, sens))
        combos.sort(key=lambda cs: tuple(sorted(cs[0] + tuple(t_a + s for s in cs[1]))))
        for acts, sens in combos:
            for q_m in range(topology.t_m):
                supports.append(
                    AttackSupport.from_signals(topology, q_m, list(acts), list(sens))
                )
    # stable order: (operation mode, sorted support set)
    supports.sort(key=lambda s: (s.q_m, s.support_key))
    return supports


def enumerate_modes(
    topology: PlantTopology,
    p: int,
    n_a: int | None = None,
    n_s: int | None = None,
) -> ModeSet:
    """Generate the full hypothesis bank for at most p signal attacks.

    Raises when p exceeds the number of sensor measurements (more attacks than
    that are never correctable); warns when several hypotheses are enumerated
    with p >= l, because the attack-free measurement residual is then empty and
    mode probabilities cannot be computed.
    """
    l = topology.l
    if p > l:
        raise ValueError(
            f"p={p} attacks can never be corrected with l={l} measurements "
            f"(the correctable maximum is p* = l)"
        )
    supports = enumerate_supports(topology, p, n_a=n_a, n_s=n_s)
    if len(supports) > 1 and p >= l:
        warnings.warn(
            "with several hypotheses the attack count must stay strictly below "
            "the number of measurements; the attack-free residual is empty and "
            "mode probabilities cannot be computed",
            RuntimeWarning,
            stacklevel=2,
        )
    return ModeSet([build_mode(topology, s) for s in supports])


def expected_mode_count(
    topology: PlantTopology,
    p: int,
    n_a: int | None = None,
    n_s: int | None = None,
) -> int:
    """Closed-form hypothesis count matching :func:`enumerate_modes`."""
    t_a, t_s, t_m = topology.t_a, topology.t_s, topology.t_m
    if n_a is None and n_s is None:
        return t_m * math.comb(t_a + t_s, p)
    n_a = t_a if n_a is None else n_a
    n_s = t_s if n_s is None else n_s
    total = 0
    for i in range(min(n_a, p) + 1):
        total += math.comb(t_a, i) * math.comb(t_s, min(p - i, n_s))
    return t_m * total


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

def topology_to_json(
    topology: PlantTopology, supports: list[AttackSupport] | None = None
) -> dict:
    """Serialize a topology (matrices as row-major nested lists)."""
    doc: dict = {
        "operation_modes": [
            {
                "A": om.A.tolist(),
                "B": om.B.tolist(),
                "C": om.C.tolist(),
                "D": om.D.tolist(),
            }
            for om in topology.operation_modes
        ],
        "calG": topology.calG.tolist(),
        "calH": topology.calH.tolist(),
        "Q": topology.Q.tolist(),
        "R": topology.R.tolist(),
    }
    if supports is not None:
        doc["supports"] = [
            {
                "q_m": s.q_m,
                "actuators": [int(i) for i in np.nonzero(s.I_G.sum(axis=1))[0]],
                "sensors": [int(i) for i in np.nonzero(s.I_H.sum(axis=1))[0]],
            }
            for s in supports
        ]
    return doc


def topology_from_json(doc: dict | str | Path) -> tuple[PlantTopology, list[AttackSupport]]:
    """Load a topology document (dict, JSON string, or path to a JSON file)."""
    if isinstance(doc, (str, Path)):
        path = Path(doc)
        if path.exists():
            doc = json.loads(path.read_text())
        else:
            doc = json.loads(str(doc))
    modes = [
        OperationMode(
            A=np.asarray(om["A"], dtype=float),
            B=np.asarray(om["B"], dtype=float),
            C=np.asarray(om["C"], dtype=float),
            D=np.asarray(om["D"], dtype=float),
        )
        for om in doc["operation_modes"]
    ]
    topo = PlantTopology(
        operation_modes=modes,
        calG=np.asarray(doc["calG"], dtype=float),
        calH=np.asarray(doc["calH"], dtype=float),
        Q=np.asarray(doc["Q"], dtype=float),
        R=np.asarray(doc["R"], dtype=float),
    )
    supports = [
        AttackSupport.from_signals(
            topo,
            s.get("q_m", 0),
            actuators=s.get("actuators", []),
            sensors=s.get("sensors", []),
            mixed=[tuple(x) for x in s.get("mixed", [])],
        )
        for s in doc.get("supports", [])
    ]
    return topo, supports
