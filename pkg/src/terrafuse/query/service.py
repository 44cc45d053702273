"""HTTP surface over one immutable snapshot.

All state lives in a ServiceState object captured by the route
closures; replacing a snapshot means building a new state and app.
Responses are plain JSON derived deterministically from the snapshot,
so identical requests return identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from fastapi import FastAPI, Query
from fastapi.responses import JSONResponse

from terrafuse.model import FusedTable, GeoPoint, ModelError
from terrafuse.query.gazetteer import Gazetteer, GeocodeNotFound, Geocoder
from terrafuse.query.regions import AdminRegion, admin_hierarchy
from terrafuse.query.retrieval import (
    BBox,
    QueryError,
    TooManyFeatures,
    query_feature_distribution,
    query_samples,
)
from terrafuse.query.screening import FeatureEmbedding, build_feature_index, screen_features


@dataclass
class ServiceState:
    table: FusedTable
    gazetteer: Gazetteer
    regions: dict[str, AdminRegion]
    external_geocoder_url: str | None = None
    feature_index: list[FeatureEmbedding] = field(init=False)
    geocoder: Geocoder = field(init=False)

    def __post_init__(self) -> None:
        self.feature_index = build_feature_index(self.table.features)
        self.geocoder = Geocoder(self.gazetteer, self.external_geocoder_url)


def _error(status: int, code: str, detail: str = "") -> JSONResponse:
    body: dict = {"error": code}
    if detail:
        body["detail"] = detail
    return JSONResponse(body, status_code=status)


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(
        title="terrafuse query service",
        description="Geographic, screening, and retrieval queries over a fused soil-sample snapshot.",
        version="0.1.0",
    )

    @app.get("/geocode")
    def geocode(q: str = Query(..., min_length=1)):
        try:
            location, admin_path = state.geocoder.geocode(q)
        except GeocodeNotFound:
            return _error(404, "not-found", q)
        return {
            "name": q,
            "lon": location.lon,
            "lat": location.lat,
            "admin_path": list(admin_path),
        }

    @app.get("/regions")
    def regions(lon: float, lat: float):
        try:
            p = GeoPoint(lon, lat)
        except ModelError as exc:
            return _error(400, "bad-coordinates", str(exc))
        chain = admin_hierarchy(p, state.regions.values())
        return {
            "regions": [
                {"id": r.id, "level": r.level, "parent_id": r.parent_id} for r in chain
            ]
        }

    @app.get("/features/screen")
    def features_screen(q: str = Query(..., min_length=1), k: int = Query(10, ge=1)):
        ranked = screen_features(q, k, state.feature_index)
        return {"results": [{"feature_id": fid, "score": score} for fid, score in ranked]}

    @app.get("/samples")
    def samples(lon: float, lat: float, k: int = Query(10, ge=1), features: str = ""):
        try:
            center = GeoPoint(lon, lat)
        except ModelError as exc:
            return _error(400, "bad-coordinates", str(exc))
        feature_ids = [f for f in features.split(",") if f]
        try:
            results = query_samples(state.table, center, k, feature_ids)
        except QueryError as exc:
            return _error(400, "unknown-feature", str(exc))
        return {"results": results}

    @app.get("/features/distribution")
    def features_distribution(ids: str, bbox: str = "", region: str = ""):
        feature_ids = [f for f in ids.split(",") if f]
        if bool(bbox) == bool(region):
            return _error(400, "bad-area", "pass exactly one of bbox=w,s,e,n or region=<id>")
        area: BBox | AdminRegion
        if bbox:
            parts = bbox.split(",")
            if len(parts) != 4:
                return _error(400, "bad-area", "bbox must be w,s,e,n")
            try:
                area = BBox(*(float(v) for v in parts))
            except (ValueError, QueryError) as exc:
                return _error(400, "bad-area", str(exc))
        else:
            found = state.regions.get(region)
            if found is None:
                return _error(404, "unknown-region", region)
            area = found
        try:
            per_feature = query_feature_distribution(state.table, area, feature_ids)
        except TooManyFeatures as exc:
            return _error(400, "too-many-features", str(exc))
        except QueryError as exc:
            return _error(400, "unknown-feature", str(exc))
        return {"features": per_feature}

    return app
