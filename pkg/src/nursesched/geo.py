"""Great-circle distance on a spherical Earth."""

from __future__ import annotations

import math

EARTH_RADIUS_KM = 6371.0
_DEG = math.pi / 180.0


def haversine_km(a, b, radius_km: float = EARTH_RADIUS_KM) -> float:
    """Haversine distance in kilometres between two points with ``lat``/``lon`` in degrees.

    The operands enter only through absolute differences and a commutative
    product, so ``haversine_km(a, b) == haversine_km(b, a)`` bit for bit.
    """
    lat1, lon1, lat2, lon2 = a.lat, a.lon, b.lat, b.lon
    for v in (lat1, lon1, lat2, lon2):
        if not math.isfinite(v):
            raise ValueError(f"non-finite coordinate {v!r}")
    dphi = abs(lat2 - lat1) * _DEG
    dlam = abs(lon2 - lon1) * _DEG
    s_phi = math.sin(dphi / 2.0)
    s_lam = math.sin(dlam / 2.0)
    h = s_phi * s_phi + (math.cos(lat1 * _DEG) * math.cos(lat2 * _DEG)) * (s_lam * s_lam)
    # rounding can push h a hair outside [0, 1] near antipodes
    h = min(max(h, 0.0), 1.0)
    return radius_km * 2.0 * math.atan2(math.sqrt(h), math.sqrt(1.0 - h))
