"""Place-name resolution: local gazetteer first, external client optional.

The external client speaks the common public-geocoder query shape
(GET <base>?q=<name>&format=json returning a list of {lat, lon}). It
is consulted only when a base URL is configured; the test suite never
configures one.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from terrafuse.model import GeoPoint


class GazetteerError(ValueError):
    pass


class GeocodeNotFound(LookupError):
    pass


class ExternalUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class GazetteerEntry:
    name: str
    location: GeoPoint
    admin_path: tuple[str, ...]  # region ids, coarse to fine

    def __post_init__(self) -> None:
        if not self.name:
            raise GazetteerError("gazetteer name must be non-empty")


class Gazetteer:
    """Case-insensitive exact-name lookup over fixed entries."""

    def __init__(self, entries: list[GazetteerEntry], known_region_ids: set[str] | None = None):
        self.entries = list(entries)
        self._by_folded: dict[str, GazetteerEntry] = {}
        for e in self.entries:
            folded = e.name.casefold()
            if folded in self._by_folded:
                raise GazetteerError(f"duplicate gazetteer name {e.name!r}")
            if known_region_ids is not None:
                unknown = [rid for rid in e.admin_path if rid not in known_region_ids]
                if unknown:
                    raise GazetteerError(f"{e.name}: unresolved region ids {unknown}")
            self._by_folded[folded] = e

    def lookup(self, name: str) -> GazetteerEntry:
        entry = self._by_folded.get(name.casefold())
        if entry is None:
            raise GeocodeNotFound(name)
        return entry


def load_gazetteer(text: str, known_region_ids: set[str] | None = None) -> Gazetteer:
    """Parse the `name,lon,lat,admin_path` CSV; path ids separated by ';'."""
    entries = []
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["name", "lon", "lat", "admin_path"]:
        raise GazetteerError(f"unexpected gazetteer header {header!r}")
    for row in reader:
        if not row:
            continue
        name, lon, lat, path = row
        admin_path = tuple(p for p in path.split(";") if p)
        entries.append(GazetteerEntry(name, GeoPoint(float(lon), float(lat)), admin_path))
    return Gazetteer(entries, known_region_ids)


class Geocoder:
    """Gazetteer-backed geocoding with an optional external fallback."""

    def __init__(self, gazetteer: Gazetteer, external_url: str | None = None):
        self.gazetteer = gazetteer
        self.external_url = external_url

    def geocode(self, name: str) -> tuple[GeoPoint, tuple[str, ...]]:
        try:
            entry = self.gazetteer.lookup(name)
            return entry.location, entry.admin_path
        except GeocodeNotFound:
            if self.external_url is None:
                raise
        return self._geocode_external(name), ()

    def _geocode_external(self, name: str) -> GeoPoint:
        import httpx

        try:
            resp = httpx.get(self.external_url, params={"q": name, "format": "json"}, timeout=10.0)
            resp.raise_for_status()
            hits = resp.json()
        except Exception as exc:
            raise ExternalUnavailable(str(exc)) from exc
        if not hits:
            raise GeocodeNotFound(name)
        first = hits[0]
        return GeoPoint(float(first["lon"]), float(first["lat"]))
