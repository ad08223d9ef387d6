"""Sequential nurse-patient assignment environment.

One step is ``step_minutes`` of simulated time. Per step the agent makes one
decision, either a single feasible ``Assign(nurse, patient)`` or ``Null``,
after which the clock advances, idle nurses recover, patients past their
maximum wait leave the queue, and new patients arrive.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .domain import (
    CARE_LEVELS,
    SHIFTS,
    SKILLS,
    URGENCY_LEVELS,
    ArrivalModel,
    ConstraintConfig,
    Nurse,
    Patient,
    Roster,
    ValidationError,
    generate_patient,
    sample_arrival_count,
    skill_match,
)
from .geo import haversine_km
from .rng import Rng

NURSE_FEATURES = (
    "available",
    "fatigue",
    "shift_load",
    "workload",
    "busy_remaining",
    "experience",
    "shift_day",
    "shift_evening",
    "shift_night",
    "full_time",
    "weekly_hours",
    "episode_progress",
) + tuple(f"skill:{s}" for s in SKILLS)
PATIENT_FEATURES = (
    "urgency",
    "care_level",
    "waiting",
    "service_duration",
    "max_wait",
    "prefers_continuity",
    "assigned",
    "returning",
) + tuple(f"requires:{s}" for s in SKILLS)
EDGE_FEATURES = ("distance", "skill_match", "served_before")

D_NURSE = len(NURSE_FEATURES)
D_PATIENT = len(PATIENT_FEATURES)
D_EDGE = len(EDGE_FEATURES)
_NURSE_SKILLS = slice(D_NURSE - len(SKILLS), D_NURSE)
_PATIENT_SKILLS = slice(D_PATIENT - len(SKILLS), D_PATIENT)


class ContractViolation(RuntimeError):
    """An action that the feasibility mask forbids was submitted."""


@dataclass(frozen=True)
class Assign:
    nurse: int
    patient: int


@dataclass(frozen=True)
class Null:
    pass


NULL = Null()
Action = Union[Assign, Null]


@dataclass(frozen=True)
class EnvConfig:
    constraints: ConstraintConfig = ConstraintConfig()
    arrivals: ArrivalModel = ArrivalModel()
    horizon: int = 32
    step_minutes: float = 15.0
    travel_speed_kmh: float = 40.0
    max_nurses: int = 12
    max_patients: int = 8
    fatigue_decay: float = 5.0

    def __post_init__(self):
        if self.horizon < 1 or self.max_nurses < 1 or self.max_patients < 1:
            raise ValidationError("horizon, max_nurses and max_patients must be >= 1")
        if not (self.step_minutes > 0 and self.travel_speed_kmh > 0 and self.fatigue_decay >= 0):
            raise ValidationError("step_minutes and travel_speed_kmh must be > 0, fatigue_decay >= 0")

    @property
    def n_actions(self) -> int:
        return self.max_nurses * self.max_patients + 1


@dataclass
class NurseRuntime:
    nurse: Nurse
    fatigue: float
    busy_until: Optional[int] = None
    assignments_served: list = field(default_factory=list)
    # (nurse, attribute columns of its feature row), filled on first encoding
    static_row: Optional[tuple] = field(default=None, repr=False, compare=False)

    def available(self, t: int) -> bool:
        return self.busy_until is None or self.busy_until <= t


@dataclass
class PatientRuntime:
    patient: Patient
    waiting_since: int
    assigned: bool = False
    served_by: Optional[str] = None
    # distances to each nurse of the episode, filled on first use
    distances: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    static_row: Optional[tuple] = field(default=None, repr=False, compare=False)


@dataclass
class EnvState:
    t: int
    nurses: list
    patients: list
    history: list
    rng: Rng
    config: EnvConfig
    served: dict = field(default_factory=dict)
    total_arrivals: int = 0
    total_assigned: int = 0
    total_expired: int = 0
    total_dropped: int = 0
    serial: int = 0

    def copy(self) -> "EnvState":
        nurses = [
            NurseRuntime(n.nurse, n.fatigue, n.busy_until, list(n.assignments_served), n.static_row)
            for n in self.nurses
        ]
        patients = [
            PatientRuntime(p.patient, p.waiting_since, p.assigned, p.served_by, p.distances, p.static_row)
            for p in self.patients
        ]
        return replace(
            self,
            nurses=nurses,
            patients=patients,
            history=list(self.history),
            rng=self.rng.copy(),
            served=dict(self.served),
        )


@dataclass
class FeasibilityMask:
    mask: np.ndarray
    null_allowed: bool = True

    def popcount(self) -> int:
        return int(self.mask.sum())


@dataclass
class StepOutcome:
    reward: float
    next_state: EnvState
    done: bool
    info: dict


@dataclass
class FeatureEncoding:
    nurse_features: np.ndarray
    patient_features: np.ndarray
    edge_features: np.ndarray
    nurse_present: np.ndarray
    patient_present: np.ndarray
    action_mask: np.ndarray  # flat row-major pairs, then the null slot


def _patient_distances(state: EnvState, pr: PatientRuntime) -> np.ndarray:
    d = pr.distances
    if d is None or len(d) != len(state.nurses):
        radius = state.config.constraints.earth_radius_km
        d = np.array([haversine_km(nr.nurse.base_location, pr.patient.location, radius) for nr in state.nurses])
        pr.distances = d
    return d


def distance_km(state: EnvState, n: int, p: int) -> float:
    return float(_patient_distances(state, state.patients[p])[n])


def distance_matrix(state: EnvState) -> np.ndarray:
    """Haversine km, shape ``(len(nurses), len(patients))``."""
    if not state.patients:
        return np.zeros((len(state.nurses), 0))
    return np.stack([_patient_distances(state, pr) for pr in state.patients], axis=1)


def reset(seed: int, roster: Roster, config: EnvConfig = EnvConfig()) -> EnvState:
    if len(roster) < config.max_nurses:
        raise ValidationError(f"roster has {len(roster)} nurses, need at least {config.max_nurses}")
    rng = Rng(seed)
    picked = rng.sample(range(len(roster)), config.max_nurses)
    nurses = [NurseRuntime(roster[i], float(roster[i].initial_fatigue)) for i in picked]
    return EnvState(t=0, nurses=nurses, patients=[], history=[], rng=rng, config=config)


def _free_nurses(state: EnvState) -> np.ndarray:
    return np.array([nr.available(state.t) for nr in state.nurses], dtype=bool)


def _mask(state: EnvState, free: np.ndarray, dist: np.ndarray) -> np.ndarray:
    open_ = np.array([not pr.assigned for pr in state.patients], dtype=bool)
    return free[:, None] & open_[None, :] & (dist <= state.config.constraints.d_max_km)


def feasibility_mask(state: EnvState) -> FeasibilityMask:
    return FeasibilityMask(_mask(state, _free_nurses(state), distance_matrix(state)))


def enumerate_actions(state: EnvState) -> list:
    m = feasibility_mask(state).mask
    actions: list = [Assign(int(i), int(j)) for i, j in zip(*np.nonzero(m))]
    actions.append(NULL)
    return actions


def action_to_index(action: Action, config: EnvConfig) -> int:
    """Position of ``action`` in the flat policy output (pairs row-major, null last)."""
    if isinstance(action, Null):
        return config.max_nurses * config.max_patients
    return action.nurse * config.max_patients + action.patient


def index_to_action(index: int, config: EnvConfig) -> Action:
    if index == config.max_nurses * config.max_patients:
        return NULL
    return Assign(*divmod(int(index), config.max_patients))


def _check_feasible(state: EnvState, action: Action) -> None:
    if isinstance(action, Null):
        return
    if not isinstance(action, Assign):
        raise ContractViolation(f"not an action: {action!r}")
    n, p = action.nurse, action.patient
    if not (0 <= n < len(state.nurses) and 0 <= p < len(state.patients)):
        raise ContractViolation(f"{action} out of bounds for {len(state.nurses)}x{len(state.patients)}")
    if not feasibility_mask(state).mask[n, p]:
        raise ContractViolation(f"{action} is infeasible at t={state.t}")


def served_before(state: EnvState, n: int, p: int) -> bool:
    return state.patients[p].patient.id in state.nurses[n].assignments_served


def _reward(state: EnvState, action: Action) -> float:
    if isinstance(action, Null):
        return 0.0
    nr = state.nurses[action.nurse]
    patient = state.patients[action.patient].patient
    bonus = 0.0
    if patient.prefers_continuity and served_before(state, action.nurse, action.patient):
        bonus = state.config.constraints.continuity_weight
    return (
        2.0
        + 5.0 * skill_match(nr.nurse, patient)
        - 0.0005 * distance_km(state, action.nurse, action.patient)
        - 0.2 * min(nr.fatigue / 60.0, 1.0)
        + bonus
    )


def reward(state: EnvState, action: Action) -> float:
    _check_feasible(state, action)
    return _reward(state, action)


def step(state: EnvState, action: Action) -> StepOutcome:
    """Apply ``action`` and advance one tick. ``state`` is left untouched."""
    _check_feasible(state, action)
    r = _reward(state, action)
    cfg = state.config
    s = state.copy()
    info = {"assigned": False, "skill_match": 0, "requirements": 0, "travel_km": 0.0, "expired": 0, "arrivals": 0, "dropped": 0}

    assigned_nurse = None
    if isinstance(action, Assign):
        nr = s.nurses[action.nurse]
        pr = s.patients[action.patient]
        dist = distance_km(state, action.nurse, action.patient)
        travel_minutes = dist / cfg.travel_speed_kmh * 60.0
        nr.busy_until = s.t + max(1, math.ceil((pr.patient.service_duration + travel_minutes) / cfg.step_minutes))
        nr.fatigue += pr.patient.service_duration
        nr.assignments_served.append(pr.patient.id)
        pr.assigned = True
        pr.served_by = nr.nurse.id
        s.history.append((s.t, nr.nurse.id, pr.patient.id))
        s.served[pr.patient.id] = pr.patient
        s.patients.pop(action.patient)
        s.total_assigned += 1
        assigned_nurse = action.nurse
        info.update(
            assigned=True,
            skill_match=skill_match(nr.nurse, pr.patient),
            requirements=len(pr.patient.requirements),
            travel_km=dist,
        )

    for i, nr in enumerate(s.nurses):
        if i != assigned_nurse and nr.available(s.t):
            nr.fatigue = max(0.0, nr.fatigue - cfg.fatigue_decay)

    s.t += 1
    for nr in s.nurses:
        if nr.busy_until is not None and nr.busy_until <= s.t:
            nr.busy_until = None

    kept = []
    for pr in s.patients:
        if (s.t - pr.waiting_since) * cfg.step_minutes > pr.patient.max_wait:
            info["expired"] += 1
        else:
            kept.append(pr)
    s.patients = kept
    s.total_expired += info["expired"]

    n_new = sample_arrival_count(s.rng, cfg.arrivals.lam)
    admitted = min(n_new, cfg.max_patients - len(s.patients))
    for _ in range(admitted):
        s.patients.append(PatientRuntime(_next_patient(s), waiting_since=s.t))
    s.total_arrivals += admitted
    s.total_dropped += n_new - admitted
    info["arrivals"] = admitted
    info["dropped"] = n_new - admitted

    return StepOutcome(reward=r, next_state=s, done=state.t + 1 >= cfg.horizon, info=info)


def _next_patient(s: EnvState) -> Patient:
    model = s.config.arrivals
    u = s.rng.uniform()
    waiting = {pr.patient.id for pr in s.patients}
    candidates = [pid for pid in s.served if pid not in waiting]
    if candidates and u < model.revisit_prob:
        previous = s.served[candidates[s.rng.randbelow(len(candidates))]]
        return replace(previous, arrival_time=s.t)
    s.serial += 1
    return generate_patient(s.rng, model, s.t, patient_id=f"P{s.serial:04d}")


def _nurse_static_row(nurse: Nurse) -> np.ndarray:
    row = np.zeros(D_NURSE)
    row[5] = (nurse.experience_level - 1) / 4.0
    row[6 + SHIFTS.index(nurse.shift_preference)] = 1.0
    row[9] = 1.0 if nurse.employment_type == "full_time" else 0.0
    row[10] = min(nurse.max_weekly_hours / 60.0, 1.0)
    for s in nurse.skills:
        row[_NURSE_SKILLS.start + SKILLS.index(s)] = 1.0
    return row


def _patient_static_row(patient: Patient) -> np.ndarray:
    row = np.zeros(D_PATIENT)
    row[0] = URGENCY_LEVELS.index(patient.urgency) / 2.0
    row[1] = CARE_LEVELS.index(patient.care_level) / 2.0
    row[3] = min(patient.service_duration / 120.0, 1.0)
    row[4] = patient.max_wait / 120.0
    row[5] = 1.0 if patient.prefers_continuity else 0.0
    for s in patient.requirements:
        row[_PATIENT_SKILLS.start + SKILLS.index(s)] = 1.0
    return row


def encode_features(state: EnvState) -> FeatureEncoding:
    """Fixed-size, [0, 1]-valued encoding. Column order follows
    ``NURSE_FEATURES``, ``PATIENT_FEATURES`` and ``EDGE_FEATURES``."""
    cfg = state.config
    c = cfg.constraints
    N, P = cfg.max_nurses, cfg.max_patients
    nurses, patients, t = state.nurses, state.patients, state.t
    n_n, n_p = len(nurses), len(patients)
    nf = np.zeros((N, D_NURSE))
    pf = np.zeros((P, D_PATIENT))
    ef = np.zeros((N, P, D_EDGE))
    n_present = np.zeros(N, dtype=bool)
    p_present = np.zeros(P, dtype=bool)
    n_present[:n_n] = True
    p_present[:n_p] = True
    dist = distance_matrix(state)
    free = _free_nurses(state)
    feasible = _mask(state, free, dist)

    for nr in nurses:
        if nr.static_row is None or nr.static_row[0] is not nr.nurse:
            nr.static_row = (nr.nurse, _nurse_static_row(nr.nurse))
    if n_n:
        fatigue = np.array([nr.fatigue for nr in nurses])
        served = np.array([len(nr.assignments_served) for nr in nurses])
        remaining = np.array([0 if nr.busy_until is None else max(nr.busy_until - t, 0) for nr in nurses])
        rows = nf[:n_n]
        rows[:] = np.stack([nr.static_row[1] for nr in nurses])
        rows[:, 0] = free
        rows[:, 1] = np.minimum(fatigue / 60.0, 1.0)
        rows[:, 2] = np.minimum(fatigue / c.max_shift_minutes, 1.0)
        rows[:, 3] = np.minimum(served / cfg.horizon, 1.0)
        rows[:, 4] = np.minimum(remaining / 8.0, 1.0)
        rows[:, 11] = min(t / cfg.horizon, 1.0)

    for pr in patients:
        if pr.static_row is None or pr.static_row[0] is not pr.patient:
            pr.static_row = (pr.patient, _patient_static_row(pr.patient))
    if n_p:
        waited = np.array([(t - pr.waiting_since) * cfg.step_minutes for pr in patients])
        rows = pf[:n_p]
        rows[:] = np.stack([pr.static_row[1] for pr in patients])
        rows[:, 2] = np.minimum(waited / np.array([pr.patient.max_wait for pr in patients]), 1.0)
        rows[:, 6] = [pr.assigned for pr in patients]
        rows[:, 7] = [pr.patient.id in state.served for pr in patients]

        ef[:n_n, :n_p, 0] = np.minimum(dist / c.d_max_km, 1.0)
        # skill bits are 0/1, so the product counts shared skills exactly
        ef[:n_n, :n_p, 1] = nf[:n_n, _NURSE_SKILLS] @ pf[:n_p, _PATIENT_SKILLS].T / 3.0
        for i, nr in enumerate(nurses):
            if nr.assignments_served:
                seen = set(nr.assignments_served)
                for j, pr in enumerate(patients):
                    if pr.patient.id in seen:
                        ef[i, j, 2] = 1.0

    action_mask = np.zeros(N * P + 1, dtype=bool)
    padded = np.zeros((N, P), dtype=bool)
    padded[: feasible.shape[0], : feasible.shape[1]] = feasible
    action_mask[:-1] = padded.reshape(-1)
    action_mask[-1] = True
    return FeatureEncoding(nf, pf, ef, n_present, p_present, action_mask)


def trace_record(state: EnvState, action: Action, outcome: StepOutcome) -> dict:
    return {
        "t": state.t,
        "action": None if isinstance(action, Null) else [action.nurse, action.patient],
        "reward": outcome.reward,
        "mask_popcount": feasibility_mask(state).popcount(),
        "expired": outcome.info["expired"],
    }


def write_trace(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


class SchedulingEnv:
    """Gym-style wrapper: ``reset(seed)`` then ``step(action)`` until ``done``."""

    def __init__(self, roster: Roster, config: EnvConfig = EnvConfig()):
        self.roster = roster
        self.config = config
        self.state: Optional[EnvState] = None

    def reset(self, seed: int) -> EnvState:
        self.state = reset(seed, self.roster, self.config)
        return self.state

    def step(self, action: Action) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        out = step(self.state, action)
        self.state = out.next_state
        return out
