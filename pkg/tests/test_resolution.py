"""Tests for resolution augmentation and the spacing histogram."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st


@pytest.mark.parametrize("u,expected", [(0.0, 0.954), (1.0, 2.692), (0.5, 1.823)])
def test_area_from_uniform(u, expected):
    from sdaug.resolution import RAConfig, area_from_uniform

    assert area_from_uniform(u, RAConfig()) == pytest.approx(expected, abs=1e-9)


def test_zoom_geometry_exact():
    from sdaug.resolution import zoom_geometry

    factor, height, width = zoom_geometry((300, 300), (1.0, 1.0), 2.25)
    assert factor == pytest.approx(2.0 / 3.0)
    assert (height, width) == (200, 200)


def test_resample_spacing_follows_target(make_sample):
    from sdaug.resolution import resample_to_area

    out = resample_to_area(make_sample(shape=(60, 60), spacing=(1.0, 1.0)), 2.25)
    assert out.image.shape == (40, 40)
    assert out.image.spacing_mm == pytest.approx((1.5, 1.5))
    assert out.mask.shape == (40, 40)


def test_resample_identity_area_keeps_pixels(make_sample):
    from sdaug.resolution import resample_to_area

    sample = make_sample(spacing=(1.2, 1.2))
    out = resample_to_area(sample, 1.44)
    assert np.array_equal(out.image.pixels, sample.image.pixels)
    assert np.array_equal(out.mask.labels, sample.mask.labels)


def test_disk_area_scales_with_zoom():
    from sdaug.data import Image2D, Sample, SegMask
    from sdaug.resolution import resample_to_area

    yy, xx = np.mgrid[0:128, 0:128]
    disk = (np.hypot(yy - 63.5, xx - 63.5) <= 30).astype(np.uint8)
    sample = Sample(Image2D(disk.astype(np.float32), (1.0, 1.0), "A", "s"), SegMask(disk))
    out = resample_to_area(sample, 4.0)
    assert out.mask.label_set() <= {0, 1}
    expected = 0.25 * disk.sum()
    assert abs(int(out.mask.labels.sum()) - expected) <= 0.15 * expected


@settings(max_examples=60, deadline=None)
@given(
    height=st.integers(24, 96),
    width=st.integers(24, 96),
    area0=st.floats(0.9, 2.8),
    target=st.floats(0.954, 2.692),
)
def test_resample_round_trip_recovers_dims(height, width, area0, target):
    from sdaug.data import Image2D, Sample, SegMask
    from sdaug.resolution import resample_to_area

    side = float(np.sqrt(area0))
    labels = (np.arange(height * width) % 4).reshape(height, width).astype(np.uint8)
    sample = Sample(Image2D(np.zeros((height, width), dtype=np.float32), (side, side), "A", "s"), SegMask(labels))
    back = resample_to_area(resample_to_area(sample, target), area0)
    assert abs(back.image.shape[0] - height) <= 1
    assert abs(back.image.shape[1] - width) <= 1
    assert back.image.pixel_area == pytest.approx(area0, rel=1e-9)
    assert back.mask.label_set() <= {0, 1, 2, 3}


def test_degenerate_zoom(make_sample):
    from sdaug.errors import DegenerateZoomError
    from sdaug.resolution import resample_to_area

    with pytest.raises(DegenerateZoomError, match="below 8x8"):
        resample_to_area(make_sample(shape=(16, 16), spacing=(1.0, 1.0)), 9.0)
    with pytest.raises(DegenerateZoomError, match="positive"):
        resample_to_area(make_sample(), 0.0)


def test_ra_config_validation():
    from sdaug.errors import ConfigError
    from sdaug.resolution import RAConfig

    with pytest.raises(ConfigError, match="lo <= hi"):
        RAConfig(area_lo=2.0, area_hi=1.0)
    with pytest.raises(ConfigError, match="target size"):
        RAConfig(target_size=4)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_apply_ra_output_contract(make_sample, seed):
    from sdaug.resolution import RAConfig, apply_ra

    sample = make_sample(shape=(48, 40), spacing=(1.3, 1.3))
    out = apply_ra(sample, np.random.default_rng(seed), RAConfig(target_size=64))
    assert out.image.shape == (64, 64)
    assert out.mask is not None and out.mask.shape == (64, 64)
    assert out.mask.label_set() <= sample.mask.label_set()
    area = out.image.spacing_mm[0] * out.image.spacing_mm[1]
    assert 0.954 - 1e-9 <= area <= 2.692 + 1e-9


def test_apply_ra_keeps_unlabeled_unlabeled(make_sample):
    from sdaug.resolution import RAConfig, apply_ra

    out = apply_ra(make_sample(labeled=False), np.random.default_rng(0), RAConfig(target_size=32))
    assert out.mask is None


def test_apply_ra_is_deterministic_per_stream(make_sample):
    from sdaug.resolution import RAConfig, apply_ra
    from sdaug.utils import stream_rng

    sample = make_sample()
    cfg = RAConfig(target_size=32)
    first = apply_ra(sample, stream_rng(5, 3, 0, 1), cfg)
    second = apply_ra(sample, stream_rng(5, 3, 0, 1), cfg)
    assert np.array_equal(first.image.pixels, second.image.pixels)


@pytest.mark.slow
def test_sampled_areas_are_uniform():
    from scipy.stats import chisquare

    from sdaug.resolution import RAConfig, sample_target_area

    cfg = RAConfig()
    rng = np.random.default_rng(2024)
    areas = np.array([sample_target_area(rng, cfg) for _ in range(10_000)])
    assert areas.min() >= cfg.area_lo and areas.max() <= cfg.area_hi
    counts, _ = np.histogram(areas, bins=10, range=(cfg.area_lo, cfg.area_hi))
    assert chisquare(counts).pvalue > 0.01


def test_histogram_single_record(sandbox: Path, write_dataset):
    from sdaug.resolution import resolution_histogram

    manifest = write_dataset(sandbox / "ds", vendors=("A",), subjects=1, slices=1)
    manifest = replace(manifest, records=(replace(manifest.records[0], spacing_mm=(1.2, 1.0)),))
    rows = resolution_histogram(manifest, [1.0, 1.5, 2.0])
    assert [(row["vendor"], row["count"]) for row in rows] == [("A", 1), ("A", 0)]


def test_histogram_conserves_counts_and_clamps(sandbox: Path, write_dataset):
    from sdaug.resolution import resolution_histogram

    manifest = write_dataset(sandbox / "ds", vendors=("A", "B"), subjects=2, slices=2)
    # A has area 1.0, B has 1.44; both sit outside these edges
    rows = resolution_histogram(manifest, [2.0, 2.5, 3.0])
    totals = {}
    for row in rows:
        totals[row["vendor"]] = totals.get(row["vendor"], 0) + row["count"]
    assert totals == {"A": 4, "B": 4}
    assert rows[0]["count"] == 4


def test_histogram_vendor_c_is_coarse(phantom_manifest):
    from sdaug.resolution import resolution_histogram

    rows = [row for row in resolution_histogram(phantom_manifest) if row["vendor"] == "C"]
    coarse = sum(row["count"] for row in rows if row["bin_lo"] >= 2.0 - 1e-9)
    assert coarse == sum(row["count"] for row in rows) > 0


def test_histogram_errors():
    from sdaug.data import DatasetManifest
    from sdaug.errors import ManifestError
    from sdaug.resolution import resolution_histogram

    with pytest.raises(ManifestError, match="empty manifest"):
        resolution_histogram(DatasetManifest(vendors=("A",), records=()))


def test_histogram_csv(sandbox: Path, write_dataset):
    from sdaug.resolution import resolution_histogram, write_histogram_csv

    rows = resolution_histogram(write_dataset(sandbox / "ds"), [0.5, 1.25, 2.0])
    text = write_histogram_csv(rows, sandbox / "hist.csv").read_text().splitlines()
    assert text[0] == "vendor,bin_lo,bin_hi,count"
    assert len(text) == 5


def test_augment_dataset_ra_is_deterministic(sandbox: Path, write_dataset):
    from sdaug.data import read_sample
    from sdaug.resolution import RAConfig, augment_dataset_ra

    manifest = write_dataset(sandbox / "ds", vendors=("A",))
    cfg = RAConfig(target_size=32)
    first = augment_dataset_ra(manifest, sandbox / "ra1", seed=4, copies=2, cfg=cfg)
    second = augment_dataset_ra(manifest, sandbox / "ra2", seed=4, copies=2, cfg=cfg)
    assert len(first) == 2 * len(manifest)
    for a, b in zip(first.records, second.records):
        assert a.spacing_mm == b.spacing_mm
        assert np.array_equal(read_sample(a).image.pixels, read_sample(b).image.pixels)
    assert (sandbox / "ra1" / "manifest.json").is_file()
    assert {read_sample(record).image.shape for record in first.records} == {(32, 32)}
