"""Independent oracles and builders shared by the test modules."""

from __future__ import annotations

import math

import numpy as np

from nursesched.domain import GeoPoint, Nurse, Patient
from nursesched.env import EnvConfig, EnvState, NurseRuntime, PatientRuntime
from nursesched.rng import Rng


def central_difference(f, x: np.ndarray, h: float = 1e-5, entries=None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place and restoring it."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size) if entries is None else entries:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Worst |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dividing by noise."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / scale).max()) if a.size else 0.0


def haversine_oracle(lat1, lon1, lat2, lon2, R=6371.0):
    """Spherical law of cosines; an algebraically different route to the same distance."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return R * math.acos(max(-1.0, min(1.0, c)))


def reward_oracle(skills, requirements, dist_km, fatigue, prefers_continuity, served_before, continuity_weight=1.0):
    """Term-by-term evaluation of the composite assignment reward."""
    match = len(set(skills) & set(requirements))
    bonus = continuity_weight if (prefers_continuity and served_before) else 0.0
    return 2.0 + 5 * match - 0.0005 * dist_km - 0.2 * min(fatigue / 60.0, 1.0) + bonus


def nurse(i=0, lat=51.5, lon=0.0, skills=("ICU",), fatigue=0.0, **kw):
    return Nurse(id=f"N{i:03d}", base_location=GeoPoint(lat, lon), skills=frozenset(skills), initial_fatigue=fatigue, **kw)


def patient(i=0, lat=51.5, lon=0.0, requirements=("ICU",), max_wait=60.0, service=30.0, continuity=False, t=0, **kw):
    return Patient(
        id=f"P{i:03d}",
        location=GeoPoint(lat, lon),
        urgency=kw.pop("urgency", "routine"),
        care_level=kw.pop("care_level", "low"),
        requirements=frozenset(requirements),
        max_wait=max_wait,
        prefers_continuity=continuity,
        arrival_time=t,
        service_duration=service,
    )


def make_state(nurses, patients, t=0, busy=None, config=None, seed=0, served=None):
    """Hand-built state. ``busy`` maps nurse index -> busy_until; ``served`` maps nurse index -> patient ids."""
    config = config or EnvConfig()
    busy = busy or {}
    served = served or {}
    nrs = [NurseRuntime(n, n.initial_fatigue, busy.get(i), list(served.get(i, []))) for i, n in enumerate(nurses)]
    prs = [PatientRuntime(p, waiting_since=p.arrival_time) for p in patients]
    return EnvState(t=t, nurses=nrs, patients=prs, history=[], rng=Rng(seed), config=config)
