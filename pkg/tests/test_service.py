"""HTTP endpoints over a fixture snapshot."""

from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from terrafuse.model import (
    Cell,
    FeatureDef,
    FusedTable,
    GeoPoint,
    Provenance,
    Sample,
    Scalar,
    SourceKind,
)
from terrafuse.query.gazetteer import load_gazetteer
from terrafuse.query.regions import load_regions
from terrafuse.query.service import ServiceState, create_app

GAZETTEER_CSV = """name,lon,lat,admin_path
TestTown,10.25,45.35,country-x;province-y
"""

REGIONS_JSON = """[
  {"id": "country-x", "level": 0, "parent_id": null,
   "boundary": [[9.0, 44.0], [12.0, 44.0], [12.0, 47.0], [9.0, 47.0]]},
  {"id": "province-y", "level": 1, "parent_id": "country-x",
   "boundary": [[10.0, 45.0], [11.0, 45.0], [11.0, 46.0], [10.0, 46.0]]}
]"""


@pytest.fixture(scope="module")
def client() -> TestClient:
    prov = Provenance("alpha", SourceKind.SAMPLE_STRUCTURED, 0.0)
    features = [
        FeatureDef(id="ph_in_water", name="pH in water", theme="chemistry"),
        FeatureDef(id="organic_carbon_pct", name="organic carbon content", unit="%"),
    ]
    samples = [
        Sample("alpha:0001", GeoPoint(10.24, 45.36), "alpha",
               {"ph_in_water": Cell(Scalar(6.5), prov)}),
        Sample("alpha:0002", GeoPoint(10.80, 45.10), "alpha",
               {"ph_in_water": Cell(Scalar(7.1), prov),
                "organic_carbon_pct": Cell(Scalar(2.5), prov)}),
        Sample("alpha:0003", GeoPoint(11.90, 46.80), "alpha", {}),
    ]
    state = ServiceState(
        table=FusedTable(features, samples),
        gazetteer=load_gazetteer(GAZETTEER_CSV),
        regions=load_regions(REGIONS_JSON),
    )
    return TestClient(create_app(state))


class TestGeocodeEndpoint:
    def test_known_name(self, client):
        resp = client.get("/geocode", params={"q": "testtown"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["lon"] == 10.25 and body["lat"] == 45.35
        assert body["admin_path"] == ["country-x", "province-y"]

    def test_unknown_name_404(self, client):
        resp = client.get("/geocode", params={"q": "Atlantis"})
        assert resp.status_code == 404
        assert resp.json()["error"] == "not-found"


class TestRegionsEndpoint:
    def test_nested_chain(self, client):
        resp = client.get("/regions", params={"lon": 10.5, "lat": 45.5})
        assert [r["id"] for r in resp.json()["regions"]] == ["country-x", "province-y"]

    def test_ocean_empty(self, client):
        resp = client.get("/regions", params={"lon": 0.0, "lat": 0.0})
        assert resp.json()["regions"] == []

    def test_bad_coordinates(self, client):
        resp = client.get("/regions", params={"lon": 500.0, "lat": 45.0})
        assert resp.status_code == 400


class TestScreenEndpoint:
    def test_ranked_results(self, client):
        resp = client.get("/features/screen", params={"q": "organic carbon content", "k": 2})
        results = resp.json()["results"]
        assert results[0]["feature_id"] == "organic_carbon_pct"
        assert results[0]["score"] == pytest.approx(1.0)


class TestSamplesEndpoint:
    def test_nearest_with_cells(self, client):
        resp = client.get(
            "/samples",
            params={"lon": 10.25, "lat": 45.35, "k": 1, "features": "ph_in_water"},
        )
        body = resp.json()["results"]
        assert len(body) == 1
        assert body[0]["sample_id"] == "alpha:0001"
        assert body[0]["features"]["ph_in_water"]["value"] == 6.5

    def test_missing_marker(self, client):
        resp = client.get(
            "/samples",
            params={"lon": 10.24, "lat": 45.36, "k": 1, "features": "organic_carbon_pct"},
        )
        assert resp.json()["results"][0]["features"]["organic_carbon_pct"] == {"missing": True}

    def test_unknown_feature(self, client):
        resp = client.get("/samples", params={"lon": 10, "lat": 45, "k": 1, "features": "xx"})
        assert resp.status_code == 400


class TestDistributionEndpoint:
    def test_bbox_query(self, client):
        resp = client.get(
            "/features/distribution",
            params={"ids": "ph_in_water", "bbox": "10.0,45.0,11.0,46.0"},
        )
        values = resp.json()["features"]["ph_in_water"]
        assert [v["sample_id"] for v in values] == ["alpha:0001", "alpha:0002"]

    def test_region_query(self, client):
        resp = client.get(
            "/features/distribution",
            params={"ids": "ph_in_water", "region": "province-y"},
        )
        assert [v["sample_id"] for v in resp.json()["features"]["ph_in_water"]] == [
            "alpha:0001", "alpha:0002",
        ]

    def test_unknown_region_404(self, client):
        resp = client.get("/features/distribution", params={"ids": "ph_in_water", "region": "zz"})
        assert resp.status_code == 404

    def test_cap(self, client):
        resp = client.get(
            "/features/distribution",
            params={"ids": "a,b,c,d,e,f", "bbox": "0,0,1,1"},
        )
        assert resp.status_code == 400
        assert resp.json()["error"] == "too-many-features"


class TestServiceContract:
    def test_openapi_served_and_parseable(self, client):
        resp = client.get("/openapi.json")
        assert resp.status_code == 200
        doc = json.loads(resp.content)
        paths = set(doc["paths"])
        assert {"/geocode", "/regions", "/features/screen", "/samples",
                "/features/distribution"} <= paths

    def test_identical_requests_byte_identical(self, client):
        params = {"lon": 10.3, "lat": 45.4, "k": 3, "features": "ph_in_water,organic_carbon_pct"}
        first = client.get("/samples", params=params).content
        for _ in range(5):
            assert client.get("/samples", params=params).content == first
