"""Fusion engine: distance, screening, raster lookup, schema execution."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, strategies as st

from terrafuse.fuse import (
    EARTH_RADIUS_M,
    FeatureCollisionError,
    FuseError,
    RasterHit,
    ScreeningMeta,
    build_location_index,
    execute_schema,
    fuse_sources,
    haversine_m,
    link_asset,
    locate_cell,
    sample_raster_at,
    screen_dataset,
)
from terrafuse.model import (
    MISSING,
    Category,
    ColumnMap,
    FeatureDef,
    FusedTable,
    FusionSchema,
    GeoPoint,
    InvalidRule,
    Modality,
    RasterGrid,
    Scalar,
    SourceKind,
    Vector,
)
from terrafuse.standardize import StandardizedRecord


class TestHaversine:
    def test_zero_identity(self):
        p = GeoPoint(12.3, 45.6)
        assert haversine_m(p, p) == 0.0

    def test_one_degree_longitude_at_equator(self):
        d = haversine_m(GeoPoint(0.0, 0.0), GeoPoint(1.0, 0.0))
        expected = math.pi * EARTH_RADIUS_M / 180.0
        assert d == pytest.approx(expected, rel=1e-3)
        assert d == pytest.approx(111_194.93, rel=1e-3)

    @given(
        st.floats(-180, 180), st.floats(-90, 90),
        st.floats(-180, 180), st.floats(-90, 90),
    )
    def test_symmetric_nonnegative(self, lon1, lat1, lon2, lat2):
        a, b = GeoPoint(lon1, lat1), GeoPoint(lon2, lat2)
        assert haversine_m(a, b) == haversine_m(b, a)
        assert haversine_m(a, b) >= 0.0


class TestScreening:
    def test_coarse_resolution_excluded(self):
        d = screen_dataset(ScreeningMeta(SourceKind.MAP_STRUCTURED, True, resolution_m=10_000))
        assert not d.keep and d.reason == "coarse resolution"

    def test_fine_resolution_kept(self):
        d = screen_dataset(ScreeningMeta(SourceKind.MAP_STRUCTURED, True, resolution_m=250))
        assert d.keep

    def test_no_georef_excluded(self):
        d = screen_dataset(ScreeningMeta(SourceKind.SAMPLE_STRUCTURED, has_georef=False))
        assert not d.keep and d.reason == "no georeference"

    def test_projection_excluded(self):
        d = screen_dataset(
            ScreeningMeta(SourceKind.MAP_STRUCTURED, True, resolution_m=100, is_long_term_projection=True)
        )
        assert not d.keep and d.reason == "long-term projection"

    def test_boundary_resolution_kept(self):
        assert screen_dataset(ScreeningMeta(SourceKind.MAP_STRUCTURED, True, resolution_m=5000)).keep

    @given(
        st.sampled_from(list(SourceKind)),
        st.booleans(),
        st.one_of(st.none(), st.floats(min_value=1, max_value=50_000)),
        st.booleans(),
    )
    def test_matches_rule_conjunction(self, kind, has_georef, res, projection):
        meta = ScreeningMeta(kind, has_georef, res, projection)
        should_exclude = (
            (res is not None and res > 5000)
            or projection
            or (kind is SourceKind.SAMPLE_STRUCTURED and not has_georef)
        )
        assert screen_dataset(meta).keep == (not should_exclude)


def brute_force_nearest(grid: RasterGrid, p: GeoPoint) -> tuple[int, int]:
    best: tuple[float, int, int] | None = None
    for r in range(grid.nrows):
        for c in range(grid.ncols):
            d = haversine_m(p, grid.cell_center(r, c))
            if best is None or d < best[0]:
                best = (d, r, c)
    assert best is not None
    return best[1], best[2]


def random_grid(rng: random.Random, high_lat: bool = False) -> RasterGrid:
    ncols = rng.randint(1, 8)
    nrows = rng.randint(1, 8)
    cellsize = rng.uniform(0.01, 1.0)
    xll = rng.uniform(-170, 160)
    yll = rng.uniform(70, 85) if high_lat else rng.uniform(-85, 60)
    yll = min(yll, 89.9 - nrows * cellsize)
    values = [[float(rng.randint(0, 100)) for _ in range(ncols)] for _ in range(nrows)]
    return RasterGrid(ncols, nrows, xll, yll, cellsize, -9999.0, values)


class TestRasterSampling:
    def grid(self) -> RasterGrid:
        return RasterGrid(
            ncols=2, nrows=2, xllcorner=10.0, yllcorner=45.0, cellsize=0.5,
            nodata_value=-9999.0, values=[[1.0, 2.0], [3.0, -9999.0]],
        )

    def test_exact_center_distance_zero(self):
        g = self.grid()
        center = g.cell_center(0, 0)
        hit = sample_raster_at(g, center)
        assert hit is not None
        assert hit.value == 1.0 and hit.distance_m == 0.0

    def test_offset_point_hits_nearest_center(self):
        g = self.grid()
        p = GeoPoint(10.3, 45.8)  # in the northwest cell, off-center
        hit = sample_raster_at(g, p)
        assert hit is not None
        assert (hit.row, hit.col) == (0, 0)
        assert hit.distance_m == pytest.approx(haversine_m(p, g.cell_center(0, 0)))

    def test_nodata_cell_is_missing(self):
        g = self.grid()
        assert sample_raster_at(g, g.cell_center(1, 1)) is None

    def test_outside_extent_is_missing(self):
        g = self.grid()
        assert sample_raster_at(g, GeoPoint(12.0, 45.5)) is None
        assert locate_cell(g, GeoPoint(12.0, 45.5)) is None

    def test_east_edge_clamps_into_grid(self):
        g = self.grid()
        p = GeoPoint(11.0, 46.0)  # exact northeast corner of the extent
        loc = locate_cell(g, p)
        assert loc == (0, 1)

    def test_matches_brute_force_on_random_grids(self):
        rng = random.Random(20240817)
        for trial in range(200):
            g = random_grid(rng, high_lat=(trial % 2 == 0))
            lon = rng.uniform(g.xllcorner, g.xllcorner + g.ncols * g.cellsize)
            lat = rng.uniform(g.yllcorner, g.yllcorner + g.nrows * g.cellsize)
            p = GeoPoint(lon, lat)
            assert locate_cell(g, p) == brute_force_nearest(g, p)


def survey_features() -> list[FeatureDef]:
    return [
        FeatureDef(id="ph_in_water", name="pH in water", unit="pH", theme="chemistry"),
        FeatureDef(id="organic_carbon_pct", name="organic carbon", unit="%", theme="chemistry"),
        FeatureDef(
            id="land_cover_class", name="land cover", theme="land use",
            modality=Modality.CATEGORICAL, vocabulary=("cropland", "forest", "grassland"),
        ),
        FeatureDef(id="clay_content_pct", name="clay content", unit="%", theme="texture"),
    ]


def survey_schema() -> FusionSchema:
    return FusionSchema(
        dataset_id="alpha",
        kind=SourceKind.SAMPLE_STRUCTURED,
        georef_columns=("lon", "lat"),
        column_maps=(
            ColumnMap("ph", "ph_in_water"),
            ColumnMap("oc", "organic_carbon_pct"),
            ColumnMap("lc", "land_cover_class", codebook_ref="landcover"),
        ),
    )


def survey_records() -> list[StandardizedRecord]:
    rows = [
        (10.02, 45.11, 6.5, 2.5, "cropland"),
        (10.18, 45.27, MISSING, 3.14, "forest"),
        (10.33, 45.42, 7.2, 1.8, "cropland"),
    ]
    return [
        StandardizedRecord(GeoPoint(lon, lat), {"ph": ph, "oc": oc, "lc": lc})
        for lon, lat, ph, oc, lc in rows
    ]


def clay_schema(resolution_m: float = 4000.0) -> FusionSchema:
    return FusionSchema(
        dataset_id="clay_map",
        kind=SourceKind.MAP_STRUCTURED,
        resolution_m=resolution_m,
        column_maps=(ColumnMap("value", "clay_content_pct"),),
    )


def clay_grid() -> RasterGrid:
    values = [[float(10 + r * 3 + c) for c in range(5)] for r in range(5)]
    return RasterGrid(5, 5, 10.0, 45.0, 0.1, -9999.0, values)


class TestExecuteSchema:
    def test_survey_creates_samples_with_zero_distances(self):
        table = FusedTable(survey_features(), [])
        table, report = execute_schema(survey_schema(), survey_records(), table)
        assert len(table) == 3
        assert report.samples_created == 3
        assert report.cells_written == 8  # 9 slots, one ph missing
        assert report.cells_missing == 1
        for s in table.samples:
            for cell in s.cells.values():
                assert cell.provenance.alignment_distance_m == 0.0
        assert table.samples[0].sample_id == "alpha:0001"
        assert table.samples[0].cells["land_cover_class"].value == Category("cropland")

    def test_raster_adds_cells_with_measured_distances(self):
        table = FusedTable(survey_features(), [])
        table, _ = execute_schema(survey_schema(), survey_records(), table)
        grid = clay_grid()
        table, report = execute_schema(clay_schema(), grid, table)
        assert report.cells_written == 3
        assert report.samples_created == 0
        for s in table.samples:
            cell = s.cells["clay_content_pct"]
            hit = sample_raster_at(grid, s.location)
            assert hit is not None
            assert cell.value == Scalar(hit.value)
            assert cell.provenance.alignment_distance_m == hit.distance_m

    def test_feature_collision_rejected(self):
        table = FusedTable(survey_features(), [])
        table, _ = execute_schema(survey_schema(), survey_records(), table)
        imposter = FusionSchema(
            dataset_id="beta",
            kind=SourceKind.SAMPLE_STRUCTURED,
            georef_columns=("lon", "lat"),
            column_maps=(ColumnMap("ph2", "ph_in_water"),),
        )
        with pytest.raises(FeatureCollisionError):
            execute_schema(imposter, [], table)

    def test_unregistered_target_rejected(self):
        schema = FusionSchema(
            dataset_id="alpha",
            kind=SourceKind.SAMPLE_STRUCTURED,
            georef_columns=("lon", "lat"),
            column_maps=(ColumnMap("x", "no_such_feature"),),
        )
        with pytest.raises(FuseError):
            execute_schema(schema, survey_records()[:1], FusedTable(survey_features(), []))

    def test_map_fusion_conserves_samples(self):
        table = FusedTable(survey_features(), [])
        table, _ = execute_schema(survey_schema(), survey_records(), table)
        before = [s.sample_id for s in table.samples]
        table, _ = execute_schema(clay_schema(), clay_grid(), table)
        assert [s.sample_id for s in table.samples] == before

    def test_raster_order_independence(self):
        features = survey_features() + [
            FeatureDef(id="sand_content_pct", name="sand content", unit="%", theme="texture")
        ]
        sand_schema = FusionSchema(
            dataset_id="sand_map",
            kind=SourceKind.MAP_STRUCTURED,
            resolution_m=4000.0,
            column_maps=(ColumnMap("value", "sand_content_pct"),),
        )
        sand_values = [[float(60 - r - c) for c in range(5)] for r in range(5)]
        sand = RasterGrid(5, 5, 10.0, 45.0, 0.1, -9999.0, sand_values)

        base = FusedTable(features, [])
        base, _ = execute_schema(survey_schema(), survey_records(), base)
        ab, _ = execute_schema(sand_schema, sand, execute_schema(clay_schema(), clay_grid(), base)[0])
        ba, _ = execute_schema(clay_schema(), clay_grid(), execute_schema(sand_schema, sand, base)[0])
        assert [(s.sample_id, s.cells) for s in ab.samples] == [
            (s.sample_id, s.cells) for s in ba.samples
        ]

    def test_distance_soundness_cell_diagonal_bound(self):
        rng = random.Random(7)
        for _ in range(50):
            g = random_grid(rng)
            lon = rng.uniform(g.xllcorner, g.xllcorner + g.ncols * g.cellsize)
            lat = rng.uniform(g.yllcorner, g.yllcorner + g.nrows * g.cellsize)
            p = GeoPoint(lon, lat)
            hit = sample_raster_at(g, p)
            if hit is None:
                continue
            sw = GeoPoint(
                g.xllcorner + hit.col * g.cellsize,
                g.yllcorner + (g.nrows - hit.row - 1) * g.cellsize,
            )
            ne = GeoPoint(sw.lon + g.cellsize, sw.lat + g.cellsize)
            assert hit.distance_m <= haversine_m(sw, ne) + 1e-9

    def test_raster_invalid_rule_and_unit_apply(self):
        features = [FeatureDef(id="f", name="f")]
        schema = FusionSchema(
            dataset_id="m",
            kind=SourceKind.MAP_STRUCTURED,
            resolution_m=1000.0,
            column_maps=(
                ColumnMap("value", "f", scale=0.5, invalid_rules=(InvalidRule("equals_sentinel", 99.0),)),
            ),
        )
        grid = RasterGrid(2, 1, 0.0, 0.0, 0.1, -9999.0, [[99.0, 8.0]])
        samples_at = [GeoPoint(0.05, 0.05), GeoPoint(0.15, 0.05)]
        from terrafuse.model import Sample
        table = FusedTable(
            features, [Sample(f"s:{i}", p, "s", {}) for i, p in enumerate(samples_at)]
        )
        table, report = execute_schema(schema, grid, table)
        assert report.cells_missing == 1 and report.cells_written == 1
        assert table.samples[1].cells["f"].value == Scalar(4.0)

    def test_vector_components_assemble(self):
        features = [
            FeatureDef(id="monthly", name="monthly", modality=Modality.VECTOR_NUM, vector_dim=3)
        ]
        schema = FusionSchema(
            dataset_id="v",
            kind=SourceKind.SAMPLE_STRUCTURED,
            georef_columns=("lon", "lat"),
            column_maps=(
                ColumnMap("m1", "monthly", component=1),
                ColumnMap("m2", "monthly", component=2),
                ColumnMap("m3", "monthly", component=3),
            ),
        )
        records = [
            StandardizedRecord(GeoPoint(1.0, 2.0), {"m1": 0.1, "m2": 0.2, "m3": 0.3}),
            StandardizedRecord(GeoPoint(1.1, 2.0), {"m1": 0.4, "m2": MISSING, "m3": 0.6}),
        ]
        table, report = execute_schema(schema, records, FusedTable(features, []))
        assert table.samples[0].cells["monthly"].value == Vector((0.1, 0.2, 0.3))
        assert "monthly" not in table.samples[1].cells  # partial vector stays missing
        assert report.cells_missing == 1


class TestLinkAsset:
    def photo_table(self) -> FusedTable:
        from terrafuse.model import Sample
        features = [FeatureDef(id="photo", name="site photo", modality=Modality.IMAGE_REF)]
        return FusedTable(features, [Sample("a:1", GeoPoint(1.0, 2.0), "a", {})])

    def test_link_writes_reference(self):
        table, warnings = link_asset(self.photo_table(), "a:1", "photo", "photos/a1.png")
        assert warnings == []
        from terrafuse.model import ImageRef
        assert table.sample_map["a:1"].cells["photo"].value == ImageRef("photos/a1.png")

    def test_unknown_sample_rejected(self):
        with pytest.raises(FuseError):
            link_asset(self.photo_table(), "nope", "photo", "x.png")

    def test_relink_overwrites_with_warning(self):
        table, _ = link_asset(self.photo_table(), "a:1", "photo", "one.png")
        table, warnings = link_asset(table, "a:1", "photo", "two.png")
        assert len(warnings) == 1
        from terrafuse.model import ImageRef
        assert table.sample_map["a:1"].cells["photo"].value == ImageRef("two.png")


class TestFuseSources:
    def test_screening_excludes_coarse_raster(self):
        coarse = clay_schema(resolution_m=10_000.0)
        table, report = fuse_sources(
            survey_features(),
            [survey_schema(), coarse],
            {"alpha": survey_records(), "clay_map": clay_grid()},
        )
        assert ("clay_map", "coarse resolution") in report.excluded
        assert all("clay_content_pct" not in s.cells for s in table.samples)

    def test_full_pipeline(self):
        table, report = fuse_sources(
            survey_features(),
            [clay_schema(), survey_schema()],  # order given does not matter
            {"alpha": survey_records(), "clay_map": clay_grid()},
        )
        assert len(table) == 3
        ids = [r.dataset_id for r in report.schema_reports]
        assert ids == ["alpha", "clay_map"]  # surveys always run first
        assert all("clay_content_pct" in s.cells for s in table.samples)

    def test_location_index_groups(self):
        from terrafuse.model import Sample
        samples = [
            Sample("a:1", GeoPoint(10.0, 45.0), "a", {}),
            Sample("a:2", GeoPoint(10.0, 45.0), "a", {}),
            Sample("a:3", GeoPoint(10.000001, 45.000001), "a", {}),
            Sample("a:4", GeoPoint(11.0, 45.0), "a", {}),
        ]
        index = build_location_index(FusedTable([], samples))
        assert len(index) == 2
        assert sorted(len(v) for v in index.values()) == [1, 3]
