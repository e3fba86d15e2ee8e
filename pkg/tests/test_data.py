"""Tests for the sample format, manifests and preprocessing."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays


def test_sample_roundtrip_is_bit_exact(sandbox: Path, make_sample):
    from sdaug.data import read_sample, write_sample

    sample = make_sample(shape=(20, 24))
    record = write_sample(sample, sandbox / "s0", slice_index=3)
    loaded = read_sample(record)
    assert loaded.image.pixels.tobytes() == sample.image.pixels.tobytes()
    assert loaded.mask.labels.tobytes() == sample.mask.labels.tobytes()
    assert loaded.image.spacing_mm == (1.2, 1.2)
    assert record.slice_index == 3
    meta = json.loads((sandbox / "s0" / "meta.json").read_text())
    assert meta["height"] == 20 and meta["width"] == 24 and meta["has_mask"] is True


def test_unlabeled_sample_has_no_mask_file(sandbox: Path, make_sample):
    from sdaug.data import read_sample, write_sample

    record = write_sample(make_sample(labeled=False), sandbox / "u")
    assert record.mask_uri is None
    assert not (sandbox / "u" / "mask.u8").exists()
    assert read_sample(record).mask is None


def test_truncated_image_is_corrupt(sandbox: Path, make_sample):
    from sdaug.data import read_sample, write_sample
    from sdaug.errors import SampleFormatError

    record = write_sample(make_sample(), sandbox / "c")
    path = Path(record.image_uri)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(SampleFormatError, match="corrupt header"):
        read_sample(record)


def test_mask_length_mismatch(sandbox: Path, make_sample):
    from sdaug.data import read_sample, write_sample
    from sdaug.errors import ShapeError

    record = write_sample(make_sample(), sandbox / "m")
    Path(record.mask_uri).write_bytes(b"\x00" * 10)
    with pytest.raises(ShapeError, match="dimension mismatch"):
        read_sample(record)


def test_invalid_label_on_disk(sandbox: Path, make_sample):
    from sdaug.data import read_sample, write_sample
    from sdaug.errors import InvalidLabelError

    record = write_sample(make_sample(), sandbox / "l")
    raw = bytearray(Path(record.mask_uri).read_bytes())
    raw[0] = 7
    Path(record.mask_uri).write_bytes(bytes(raw))
    with pytest.raises(InvalidLabelError, match="7"):
        read_sample(record)


@pytest.mark.parametrize("shape", [(12, 32), (32, 15)])
def test_stored_samples_must_be_16px(sandbox: Path, make_sample, shape):
    from sdaug.data import write_sample
    from sdaug.errors import ShapeError

    with pytest.raises(ShapeError, match="16x16"):
        write_sample(make_sample(shape=shape), sandbox / "small")


def test_image_validation():
    from sdaug.data import Image2D, Sample, SegMask
    from sdaug.errors import SampleFormatError, ShapeError

    with pytest.raises(ShapeError):
        Image2D(np.zeros((4, 32)), (1.0, 1.0), "A", "s")
    with pytest.raises(SampleFormatError, match="non-finite"):
        Image2D(np.full((8, 8), np.nan), (1.0, 1.0), "A", "s")
    with pytest.raises(SampleFormatError, match="spacing"):
        Image2D(np.zeros((8, 8)), (0.0, 1.0), "A", "s")
    with pytest.raises(ShapeError, match="does not match"):
        Sample(Image2D(np.zeros((8, 8)), (1.0, 1.0), "A", "s"), SegMask(np.zeros((8, 9), dtype=np.uint8)))


def test_manifest_roundtrip_relative_uris(sandbox: Path, write_dataset):
    manifest = write_dataset(sandbox / "ds", unlabeled=("B",))
    raw = json.loads((sandbox / "ds" / "manifest.json").read_text())
    assert not raw["records"][0]["image_uri"].startswith("/")
    assert len(manifest) == 8
    assert len(manifest.labeled_records()) == 4
    assert len(manifest.unlabeled_records()) == 4
    keys = [record.sort_key() for record in manifest.records]
    assert keys == sorted(keys)
    assert set(manifest.by_vendor()) == {"A", "B"}


def test_manifest_dangling_uri_names_record(sandbox: Path, write_dataset):
    from sdaug.data import load_manifest
    from sdaug.errors import ManifestError

    write_dataset(sandbox / "ds")
    path = sandbox / "ds" / "manifest.json"
    raw = json.loads(path.read_text())
    raw["records"][2]["image_uri"] = "nowhere/image.f32"
    path.write_text(json.dumps(raw))
    with pytest.raises(ManifestError, match="record 2: dangling image_uri") as info:
        load_manifest(path)
    assert info.value.index == 2


@pytest.mark.parametrize(
    "mutate,message",
    [
        (lambda r: r.pop("vendor"), "missing key 'vendor'"),
        (lambda r: r.update(spacing_mm=[1.0, -1.0]), "spacing_mm"),
        (lambda r: r.update(vendor="Z"), "not declared"),
        (lambda r: r.update(phase="mid"), "unknown phase"),
    ],
)
def test_manifest_malformed_records(sandbox: Path, write_dataset, mutate, message):
    from sdaug.data import load_manifest
    from sdaug.errors import ManifestError

    write_dataset(sandbox / "ds")
    path = sandbox / "ds" / "manifest.json"
    raw = json.loads(path.read_text())
    mutate(raw["records"][0])
    path.write_text(json.dumps(raw))
    with pytest.raises(ManifestError, match=message):
        load_manifest(path)


def test_select_and_training_view(sandbox: Path, write_dataset):
    from dataclasses import replace

    manifest = replace(write_dataset(sandbox / "ds", vendors=("A", "B", "D")), held_out=("D",))
    assert manifest.training_view().vendors == ("A", "B")
    assert len(manifest.training_view(include_held_out=True)) == 12
    assert {r.vendor for r in manifest.select(["B"]).records} == {"B"}


def test_normalize_constant_image_is_zero():
    from sdaug.data import normalize_pixels

    assert np.array_equal(normalize_pixels(np.full((8, 8), 5.0)), np.zeros((8, 8), dtype=np.float32))


def test_normalize_worked_example():
    from sdaug.data import normalize_pixels

    out = normalize_pixels(np.array([[2.0, 4.0, 6.0]]))
    assert out.ravel().tolist() == pytest.approx([-0.4082, 0.0, 0.4082], abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_normalize_is_zero_mean_unit_variance_before_clipping(values):
    from sdaug.data import NORMALIZE_CLIP, normalize_pixels

    assume(np.ptp(values) > 1e-2)
    # nine values cannot reach |z| = 3, so nothing is clipped
    z = normalize_pixels(values).astype(np.float64) * NORMALIZE_CLIP
    assert abs(z.mean()) < 1e-5
    assert z.std() == pytest.approx(1.0, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (8, 10), elements=st.floats(-1e4, 1e4, allow_nan=False)))
def test_normalize_range_and_determinism(values):
    from sdaug.data import normalize_pixels

    out = normalize_pixels(values)
    assert out.dtype == np.float32
    assert out.min() >= -1.0 and out.max() <= 1.0
    assert np.array_equal(out, normalize_pixels(values))


@pytest.mark.parametrize("shape", [(300, 280), (200, 180), (224, 224), (225, 223)])
def test_center_crop_or_pad_shape_and_offset(shape):
    from sdaug.data import Image2D, SegMask, center_crop_or_pad

    pixels = np.arange(shape[0] * shape[1], dtype=np.float32).reshape(shape)
    labels = (np.arange(shape[0] * shape[1]) % 4).reshape(shape).astype(np.uint8)
    out = center_crop_or_pad(Image2D(pixels, (1.0, 1.0), "A", "s"), SegMask(labels), 224)
    assert out.image.shape == (224, 224) and out.mask.shape == (224, 224)
    if shape[0] >= 224 and shape[1] >= 224:
        top, left = (shape[0] - 224) // 2, (shape[1] - 224) // 2
        assert out.image.pixels[0, 0] == pixels[top, left]
    if shape[0] < 224:
        assert out.image.pixels[0, 0] == -1.0
        assert out.mask.labels[0, 0] == 0


def test_preprocess_keeps_spacing_and_labels(make_sample):
    from sdaug.data import preprocess

    sample = make_sample(shape=(40, 40))
    out = preprocess(sample, 32)
    assert out.image.shape == (32, 32)
    assert out.image.spacing_mm == sample.image.spacing_mm
    assert out.mask.label_set() <= sample.mask.label_set()
