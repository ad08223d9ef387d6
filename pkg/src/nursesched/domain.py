"""Nurses, patients, constraints and the seeded generators that produce them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Any, Iterable, Optional

from .rng import Rng

SKILLS: tuple[str, ...] = (
    "wound care",
    "medication",
    "elderly care",
    "mobility assistance",
    "ICU",
    "emergency",
    "dementia care",
    "physio",
)
URGENCY_LEVELS = ("routine", "urgent", "emergency")
CARE_LEVELS = ("low", "medium", "high")
SHIFTS = ("day", "evening", "night")
EMPLOYMENT_TYPES = ("full_time", "part_time")


class ValidationError(ValueError):
    """Input data violates a domain invariant."""


class SchemaError(ValidationError):
    """A JSON document does not follow the dataset schema."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValidationError(f"coordinates must be finite, got ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise ValidationError(f"degenerate region {self}")
        GeoPoint(self.lat_min, self.lon_min)
        GeoPoint(self.lat_max, self.lon_max)

    def contains(self, p: GeoPoint) -> bool:
        return self.lat_min <= p.lat <= self.lat_max and self.lon_min <= p.lon <= self.lon_max

    def sample(self, rng: Rng) -> GeoPoint:
        lat = rng.uniform(self.lat_min, self.lat_max)
        lon = rng.uniform(self.lon_min, self.lon_max)
        return GeoPoint(lat, lon)


# Roughly 33 km x 31 km of Greater London.
DEFAULT_REGION = BoundingBox(51.35, 51.65, -0.35, 0.10)


def _check_skills(skills: Iterable[str], field_name: str = "skills") -> frozenset[str]:
    skills = list(skills)
    unknown = [s for s in skills if s not in SKILLS]
    if unknown:
        raise ValidationError(f"{field_name}: unknown skill(s) {unknown}")
    if len(set(skills)) != len(skills):
        raise ValidationError(f"{field_name}: duplicate skills {skills}")
    return frozenset(skills)


def sorted_skills(skills: Iterable[str]) -> list[str]:
    """Skills in vocabulary order, which is the order used for serialisation and features."""
    s = set(skills)
    return [k for k in SKILLS if k in s]


@dataclass(frozen=True)
class Nurse:
    id: str
    base_location: GeoPoint
    skills: frozenset
    experience_level: int = 1
    shift_preference: str = "day"
    employment_type: str = "full_time"
    max_weekly_hours: float = 40.0
    initial_fatigue: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "skills", _check_skills(self.skills))
        if not self.skills:
            raise ValidationError(f"nurse {self.id}: skills must be non-empty")
        if not 1 <= self.experience_level <= 5:
            raise ValidationError(f"nurse {self.id}: experience_level {self.experience_level} outside 1..5")
        if self.shift_preference not in SHIFTS:
            raise ValidationError(f"nurse {self.id}: unknown shift {self.shift_preference!r}")
        if self.employment_type not in EMPLOYMENT_TYPES:
            raise ValidationError(f"nurse {self.id}: unknown employment {self.employment_type!r}")
        if not self.max_weekly_hours > 0:
            raise ValidationError(f"nurse {self.id}: max_weekly_hours must be > 0")
        if not self.initial_fatigue >= 0:
            raise ValidationError(f"nurse {self.id}: initial_fatigue must be >= 0")


@dataclass(frozen=True)
class Patient:
    id: str
    location: GeoPoint
    urgency: str
    care_level: str
    requirements: frozenset
    max_wait: float
    prefers_continuity: bool
    arrival_time: int
    service_duration: float

    def __post_init__(self):
        object.__setattr__(self, "requirements", _check_skills(self.requirements, "requirements"))
        if not 1 <= len(self.requirements) <= 3:
            raise ValidationError(f"patient {self.id}: needs 1-3 requirements, got {len(self.requirements)}")
        if not 30.0 <= self.max_wait <= 120.0:
            raise ValidationError(f"patient {self.id}: max_wait {self.max_wait} outside [30, 120]")
        if self.urgency not in URGENCY_LEVELS:
            raise ValidationError(f"patient {self.id}: unknown urgency {self.urgency!r}")
        if self.care_level not in CARE_LEVELS:
            raise ValidationError(f"patient {self.id}: unknown care level {self.care_level!r}")
        if not self.service_duration > 0:
            raise ValidationError(f"patient {self.id}: service_duration must be > 0")


@dataclass(frozen=True)
class ConstraintConfig:
    d_max_km: float = 20.0
    max_shift_minutes: float = 480.0
    continuity_weight: float = 1.0
    earth_radius_km: float = 6371.0

    def __post_init__(self):
        for name in ("d_max_km", "max_shift_minutes", "continuity_weight", "earth_radius_km"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be a positive number, got {v!r}")


@dataclass(frozen=True)
class ArrivalModel:
    lam: float = 0.5
    urgency_probs: tuple = (0.7, 0.25, 0.05)
    care_probs: tuple = (0.5, 0.35, 0.15)
    continuity_prob: float = 0.5
    region: BoundingBox = DEFAULT_REGION
    service_minutes: tuple = (20.0, 90.0)
    max_wait_minutes: tuple = (30.0, 120.0)
    # chance that an arrival is a return visit of a patient served earlier in the episode
    revisit_prob: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "urgency_probs", tuple(float(p) for p in self.urgency_probs))
        object.__setattr__(self, "care_probs", tuple(float(p) for p in self.care_probs))
        if not self.lam > 0:
            raise ValidationError(f"arrival rate must be > 0, got {self.lam}")
        for name, probs, n in (("urgency_probs", self.urgency_probs, 3), ("care_probs", self.care_probs, 3)):
            if len(probs) != n or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
                raise ValidationError(f"{name} must be {n} non-negative probabilities summing to 1")
        for name in ("continuity_prob", "revisit_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        lo, hi = self.max_wait_minutes
        if not 30.0 <= lo <= hi <= 120.0:
            raise ValidationError("max_wait_minutes must lie inside [30, 120]")
        lo, hi = self.service_minutes
        if not 0 < lo <= hi:
            raise ValidationError("service_minutes must be a positive range")


@dataclass(frozen=True)
class Roster:
    nurses: tuple

    def __post_init__(self):
        object.__setattr__(self, "nurses", tuple(self.nurses))
        ids = [n.id for n in self.nurses]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ValidationError(f"duplicate nurse ids: {dup}")

    def __len__(self) -> int:
        return len(self.nurses)

    def __iter__(self):
        return iter(self.nurses)

    def __getitem__(self, i):
        return self.nurses[i]


def skill_match(nurse: Nurse, patient: Patient) -> int:
    return len(nurse.skills & patient.requirements)


def sample_arrival_count(rng: Rng, lam: float) -> int:
    return rng.poisson(lam)


def generate_patient(rng: Rng, model: ArrivalModel, t: int, patient_id: Optional[str] = None) -> Patient:
    """Draw one patient. Draw order: lat, lon, urgency, care, #requirements,
    requirements, max_wait, continuity, service_duration."""
    location = model.region.sample(rng)
    urgency = URGENCY_LEVELS[rng.categorical(model.urgency_probs)]
    care = CARE_LEVELS[rng.categorical(model.care_probs)]
    n_req = 1 + rng.randbelow(3)
    requirements = frozenset(rng.sample(SKILLS, n_req))
    max_wait = rng.uniform(*model.max_wait_minutes)
    prefers_continuity = rng.bernoulli(model.continuity_prob)
    service = rng.uniform(*model.service_minutes)
    return Patient(
        id=patient_id if patient_id is not None else f"P{t:04d}",
        location=location,
        urgency=urgency,
        care_level=care,
        requirements=requirements,
        max_wait=max_wait,
        prefers_continuity=prefers_continuity,
        arrival_time=t,
        service_duration=service,
    )


def generate_roster(seed: int, count: int = 40, region: BoundingBox = DEFAULT_REGION) -> Roster:
    """Seeded synthetic roster.

    Each nurse holds 2-4 distinct skills. When ``count >= 8`` the first eight
    nurses are each seeded with a different vocabulary skill (a random
    permutation), so every skill is covered by at least one nurse.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    if not isinstance(region, BoundingBox):
        region = BoundingBox(*region)
    rng = Rng(seed)
    anchors = rng.sample(SKILLS, len(SKILLS)) if count >= len(SKILLS) else []
    nurses = []
    for i in range(count):
        location = region.sample(rng)
        size = 2 + rng.randbelow(3)
        if i < len(anchors):
            rest = [s for s in SKILLS if s != anchors[i]]
            skills = [anchors[i]] + rng.sample(rest, size - 1)
        else:
            skills = rng.sample(SKILLS, size)
        experience = 1 + rng.randbelow(5)
        shift = SHIFTS[rng.randbelow(3)]
        full_time = rng.bernoulli(0.7)
        fatigue = rng.uniform(0.0, 60.0)
        nurses.append(
            Nurse(
                id=f"N{i + 1:03d}",
                base_location=location,
                skills=frozenset(skills),
                experience_level=experience,
                shift_preference=shift,
                employment_type="full_time" if full_time else "part_time",
                max_weekly_hours=40.0 if full_time else 24.0,
                initial_fatigue=fatigue,
            )
        )
    return Roster(tuple(nurses))


# -- JSON I/O ---------------------------------------------------------------

_NURSE_FIELDS = {
    "id": str,
    "lat": (int, float),
    "lon": (int, float),
    "skills": list,
    "experience": int,
    "shift": str,
    "employment": str,
    "max_weekly_hours": (int, float),
    "initial_fatigue": (int, float),
}


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise SchemaError(key, f"missing in {where}")
    value = obj[key]
    if isinstance(value, bool) and kind is not bool:
        raise SchemaError(key, f"expected {kind}, got bool in {where}")
    if not isinstance(value, kind):
        raise SchemaError(key, f"expected {kind}, got {type(value).__name__} in {where}")
    return value


def roster_from_dict(doc: Any) -> Roster:
    if not isinstance(doc, dict):
        raise SchemaError("nurses", "document must be an object")
    entries = _require(doc, "nurses", list, "document")
    nurses = []
    for i, entry in enumerate(entries):
        where = f"nurses[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(where, "entry must be an object")
        vals = {k: _require(entry, k, kind, where) for k, kind in _NURSE_FIELDS.items()}
        if not all(isinstance(s, str) for s in vals["skills"]):
            raise SchemaError("skills", f"entries must be strings in {where}")
        try:
            nurses.append(
                Nurse(
                    id=vals["id"],
                    base_location=GeoPoint(float(vals["lat"]), float(vals["lon"])),
                    skills=vals["skills"],
                    experience_level=vals["experience"],
                    shift_preference=vals["shift"],
                    employment_type=vals["employment"],
                    max_weekly_hours=float(vals["max_weekly_hours"]),
                    initial_fatigue=float(vals["initial_fatigue"]),
                )
            )
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from exc
    return Roster(tuple(nurses))


def roster_to_dict(roster: Roster) -> dict:
    return {
        "nurses": [
            {
                "id": n.id,
                "lat": n.base_location.lat,
                "lon": n.base_location.lon,
                "skills": sorted_skills(n.skills),
                "experience": n.experience_level,
                "shift": n.shift_preference,
                "employment": n.employment_type,
                "max_weekly_hours": n.max_weekly_hours,
                "initial_fatigue": n.initial_fatigue,
            }
            for n in roster.nurses
        ]
    }


def _read_json(path: str | PathLike):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("document", f"invalid JSON in {path}: {exc}") from exc


def load_roster(path: str | PathLike) -> Roster:
    return roster_from_dict(_read_json(path))


def save_roster(roster: Roster, path: str | PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(roster_to_dict(roster), fh, indent=2)
        fh.write("\n")


def constraints_from_dict(doc: Any) -> ConstraintConfig:
    if not isinstance(doc, dict):
        raise SchemaError("constraints", "document must be an object")
    vals = {k: float(_require(doc, k, (int, float), "constraints")) for k in ("d_max_km", "max_shift_minutes", "continuity_weight")}
    return ConstraintConfig(**vals)


def constraints_to_dict(c: ConstraintConfig) -> dict:
    return {"d_max_km": c.d_max_km, "max_shift_minutes": c.max_shift_minutes, "continuity_weight": c.continuity_weight}


def load_constraints(path: str | PathLike) -> ConstraintConfig:
    return constraints_from_dict(_read_json(path))


def save_constraints(c: ConstraintConfig, path: str | PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(constraints_to_dict(c), fh, indent=2)
        fh.write("\n")
