"""Training view: filtering rules, location splits, z-scoring, persistence."""

from __future__ import annotations

import math

import pytest

from terrafuse.model import (
    Category,
    Cell,
    FeatureDef,
    FusedTable,
    GeoPoint,
    Modality,
    Provenance,
    Sample,
    Scalar,
    SourceKind,
    Text,
    Vector,
)
from terrafuse.view import (
    EVAL,
    TRAIN,
    ViewError,
    build_training_view,
    filter_training_view,
    fit_apply_zscore,
    load_view,
    save_view,
    split_by_location,
)

PROV = Provenance("alpha", SourceKind.SAMPLE_STRUCTURED, 0.0)


def grid_table(n: int, observed: dict[str, list[bool]], values: dict[str, list[float]] | None = None,
               extra_features: list[FeatureDef] | None = None,
               extra_cells=None) -> FusedTable:
    feats = [FeatureDef(id=fid, name=fid, theme="t") for fid in observed]
    if extra_features:
        feats += extra_features
    samples = []
    for i in range(n):
        cells = {}
        for fid, flags in observed.items():
            if flags[i]:
                v = values[fid][i] if values and fid in values else float(i)
                cells[fid] = Cell(Scalar(v), PROV)
        if extra_cells:
            cells.update(extra_cells(i) or {})
        samples.append(Sample(f"a:{i + 1:04d}", GeoPoint(10.0 + i * 0.001, 45.0), "alpha", cells))
    return FusedTable(feats, samples)


class TestFilterTrainingView:
    def test_availability_boundary(self):
        t = grid_table(
            100,
            {
                "just_below": [i < 49 for i in range(100)],
                "at_boundary": [i < 50 for i in range(100)],
            },
        )
        kept, excluded = filter_training_view(t)
        assert [f.id for f in kept] == ["at_boundary"]
        rules = {e.feature_id: e.rule for e in excluded}
        assert rules["just_below"] == "availability"

    def test_text_excluded_despite_high_availability(self):
        feats = [FeatureDef(id="notes", name="notes", modality=Modality.TEXT)]
        samples = [
            Sample(f"a:{i}", GeoPoint(10.0 + i * 0.01, 45.0), "alpha",
                   {"notes": Cell(Text(f"n{i}"), PROV)})
            for i in range(10)
        ]
        kept, excluded = filter_training_view(FusedTable(feats, samples))
        assert kept == []
        assert excluded[0].rule == "modality"

    def test_alignment_over_200m_excluded(self):
        feats = [FeatureDef(id="clay", name="clay", theme="t")]
        samples = []
        for i in range(4):
            d = 250.0 if i == 0 else 10.0
            samples.append(
                Sample(f"a:{i}", GeoPoint(10.0 + i * 0.01, 45.0), "alpha",
                       {"clay": Cell(Scalar(float(i)), Provenance("m", SourceKind.MAP_STRUCTURED, d))})
            )
        kept, excluded = filter_training_view(FusedTable(feats, samples))
        assert kept == []
        assert excluded[0].rule == "alignment"

    def test_constant_column_excluded(self):
        t = grid_table(4, {"flat": [True] * 4, "ok": [True] * 4},
                       values={"flat": [7.0] * 4, "ok": [1.0, 2.0, 3.0, 4.0]})
        kept, excluded = filter_training_view(t)
        assert [f.id for f in kept] == ["ok"]
        assert excluded[0].rule == "constant"

    def test_survivors_satisfy_all_rules(self):
        t = grid_table(
            20,
            {
                "a": [i % 2 == 0 for i in range(20)],  # availability 0.5
                "b": [i < 5 for i in range(20)],       # availability 0.25
                "c": [True] * 20,
            },
        )
        kept, _ = filter_training_view(t)
        n = len(t.samples)
        for feat in kept:
            observed = sum(1 for s in t.samples if feat.id in s.cells)
            assert observed / n >= 0.5
            assert all(
                s.cells[feat.id].provenance.alignment_distance_m <= 200.0
                for s in t.samples if feat.id in s.cells
            )
            assert feat.modality is not Modality.TEXT


class TestSplitByLocation:
    def make_table(self, n_locations: int, visits_at_first: int = 1) -> FusedTable:
        samples = []
        k = 0
        for loc in range(n_locations):
            visits = visits_at_first if loc == 0 else 1
            for _ in range(visits):
                k += 1
                samples.append(
                    Sample(f"a:{k:04d}", GeoPoint(10.0 + loc * 0.01, 45.0), "alpha", {})
                )
        return FusedTable([], samples)

    def test_colocated_samples_share_tag(self):
        t = self.make_table(10, visits_at_first=3)
        tags = split_by_location(t, 0.3, seed=5)
        first = [tags[f"a:{i:04d}"] for i in (1, 2, 3)]
        assert len(set(first)) == 1

    def test_deterministic(self):
        t = self.make_table(30)
        assert split_by_location(t, 0.2, seed=11) == split_by_location(t, 0.2, seed=11)

    def test_floor_rule_on_location_count(self):
        t = self.make_table(100)
        tags = split_by_location(t, 0.1, seed=0)
        assert sum(1 for v in tags.values() if v == EVAL) == 10

    def test_fraction_validated(self):
        with pytest.raises(ViewError):
            split_by_location(self.make_table(5), 0.0, seed=0)
        with pytest.raises(ViewError):
            split_by_location(self.make_table(5), 1.0, seed=0)


def small_view():
    feats = [
        FeatureDef(id="x", name="x", theme="t"),
        FeatureDef(id="lc", name="lc", modality=Modality.CATEGORICAL,
                   vocabulary=("cropland", "forest")),
    ]
    samples = []
    data = [(1.0, "cropland", TRAIN), (2.0, "forest", TRAIN), (3.0, None, TRAIN), (10.0, "forest", EVAL)]
    tags = {}
    for i, (x, lc, tag) in enumerate(data):
        cells = {"x": Cell(Scalar(x), PROV)}
        if lc is not None:
            cells["lc"] = Cell(Category(lc), PROV)
        sid = f"a:{i + 1:04d}"
        samples.append(Sample(sid, GeoPoint(10.0 + i * 0.01, 45.0), "alpha", cells))
        tags[sid] = tag
    table = FusedTable(feats, samples)
    return build_training_view(table, feats, tags)


class TestZScore:
    def test_population_statistics(self):
        view = small_view()
        stats, scaled = fit_apply_zscore(view)
        # train column {1,2,3}: mean 2, population std sqrt(2/3)
        assert stats.mean[0] == pytest.approx(2.0)
        assert stats.std[0] == pytest.approx(0.81649658, abs=1e-8)
        assert scaled.numeric[2][0] == pytest.approx(1.22474487, abs=1e-8)

    def test_train_split_normalizes_to_unit(self):
        view = small_view()
        _, scaled = fit_apply_zscore(view)
        train_vals = [scaled.numeric[i][0] for i in scaled.rows_with_tag(TRAIN)]
        mean = sum(train_vals) / len(train_vals)
        std = math.sqrt(sum((v - mean) ** 2 for v in train_vals) / len(train_vals))
        assert abs(mean) < 1e-9
        assert abs(std - 1.0) < 1e-9

    def test_eval_split_uses_train_statistics(self):
        view = small_view()
        _, scaled = fit_apply_zscore(view)
        # eval value 10 scaled by train stats, far from (0, 1)
        assert scaled.numeric[3][0] == pytest.approx((10.0 - 2.0) / 0.8164965809277)

    def test_already_scaled_is_near_identity(self):
        view = small_view()
        _, once = fit_apply_zscore(view)
        _, twice = fit_apply_zscore(once)
        for i in range(len(once.numeric)):
            if once.numeric_mask[i][0] == 1:
                assert twice.numeric[i][0] == pytest.approx(once.numeric[i][0], abs=1e-9)

    def test_constant_train_column_rejected(self):
        feats = [FeatureDef(id="x", name="x")]
        samples = [
            Sample(f"a:{i}", GeoPoint(10.0 + i * 0.01, 45.0), "alpha",
                   {"x": Cell(Scalar(5.0), PROV)})
            for i in range(3)
        ]
        view = build_training_view(FusedTable(feats, samples), feats,
                                   {f"a:{i}": TRAIN for i in range(3)})
        with pytest.raises(ViewError):
            fit_apply_zscore(view)

    def test_missing_untouched(self):
        view = small_view()
        _, scaled = fit_apply_zscore(view)
        assert scaled.numeric_mask == view.numeric_mask
        assert scaled.categorical == view.categorical


class TestViewPersistence:
    def test_round_trip(self, tmp_path):
        view = small_view()
        stats, scaled = fit_apply_zscore(view)
        save_view(scaled, stats, str(tmp_path))
        loaded, loaded_stats = load_view(str(tmp_path))
        assert loaded.sample_ids == scaled.sample_ids
        assert loaded.numeric_mask == scaled.numeric_mask
        assert loaded.categorical == scaled.categorical
        assert loaded.categorical_mask == scaled.categorical_mask
        assert loaded.split_tags == scaled.split_tags
        assert loaded.numeric_columns == scaled.numeric_columns
        assert loaded.features == scaled.features
        for a, b in zip(loaded.numeric, scaled.numeric):
            for x, y in zip(a, b):
                assert x == y  # repr round-trip is exact
        assert loaded_stats is not None
        assert loaded_stats.mean == stats.mean
        assert loaded_stats.std == stats.std

    def test_vector_feature_columns(self, tmp_path):
        feats = [FeatureDef(id="m", name="m", modality=Modality.VECTOR_NUM, vector_dim=3)]
        samples = [
            Sample("a:1", GeoPoint(10.0, 45.0), "alpha",
                   {"m": Cell(Vector((1.0, 2.0, 3.0)), PROV)}),
            Sample("a:2", GeoPoint(10.1, 45.0), "alpha", {}),
        ]
        view = build_training_view(FusedTable(feats, samples), feats,
                                   {"a:1": TRAIN, "a:2": EVAL})
        assert view.numeric_columns == [("m", 1), ("m", 2), ("m", 3)]
        assert view.numeric[0] == [1.0, 2.0, 3.0]
        assert view.numeric_mask[1] == [0, 0, 0]
        save_view(view, None, str(tmp_path))
        loaded, stats = load_view(str(tmp_path))
        assert stats is None
        assert loaded.numeric == view.numeric
