from __future__ import annotations

import os
import shutil
from dataclasses import replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pytest


@pytest.fixture()
def sandbox(tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
    root_cwd = Path.cwd()
    original_env = dict(os.environ)
    os.chdir(tmp_path)
    try:
        yield tmp_path
    finally:
        os.chdir(root_cwd)
        shutil.rmtree(tmp_path, ignore_errors=True)
        os.environ.clear()
        os.environ.update(original_env)


@pytest.fixture()
def tiny_arch():
    """SDNet small enough for CPU tests on 32x32 inputs."""
    from sdaug.sdnet import ArchSpec

    return ArchSpec(widths=(4, 8), modality_width=4, segmentor_width=4, decoder_width=4)


def heart_labels(shape: Tuple[int, int] = (32, 32), center: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """LV disk, MYO ring and an RV blob on one side."""
    height, width = shape
    cy, cx = center or ((height - 1) / 2.0, (width - 1) / 2.0)
    yy, xx = np.mgrid[0:height, 0:width]
    radius = np.hypot(yy - cy, xx - cx)
    unit = min(height, width) / 32.0
    labels = np.zeros(shape, dtype=np.uint8)
    labels[np.hypot(yy - cy, xx - (cx + 9 * unit)) <= 4 * unit] = 3
    labels[radius <= 7 * unit] = 2
    labels[radius <= 4 * unit] = 1
    return labels


@pytest.fixture()
def make_sample():
    """Build a synthetic Sample whose intensities follow its labels."""
    from sdaug.data import Image2D, Phase, Sample, SegMask

    def _create(
        shape: Tuple[int, int] = (32, 32),
        spacing: Tuple[float, float] = (1.2, 1.2),
        vendor: str = "A",
        subject_id: str = "A000",
        labeled: bool = True,
        seed: int = 0,
        phase: Phase = Phase.ED,
    ) -> Sample:
        rng = np.random.default_rng(seed)
        labels = heart_labels(shape)
        levels = np.array([0.2, 0.9, 0.3, 0.8], dtype=np.float32)[labels]
        pixels = levels + rng.normal(0.0, 0.02, size=shape).astype(np.float32)
        image = Image2D(pixels=pixels, spacing_mm=spacing, vendor=vendor, subject_id=subject_id, phase=phase)
        return Sample(image=image, mask=SegMask(labels) if labeled else None)

    return _create


@pytest.fixture()
def write_dataset(make_sample):
    """Write a small dataset of synthetic samples and return its loaded manifest."""
    from sdaug.data import DatasetManifest, load_manifest, sorted_records, write_manifest, write_sample

    def _create(
        root: Path,
        vendors: Tuple[str, ...] = ("A", "B"),
        subjects: int = 2,
        slices: int = 2,
        unlabeled: Tuple[str, ...] = (),
        shape: Tuple[int, int] = (32, 32),
    ):
        records = []
        for v_index, vendor in enumerate(vendors):
            for subject in range(subjects):
                subject_id = f"{vendor}{subject:03d}"
                for slice_index in range(slices):
                    sample = make_sample(
                        shape=shape,
                        spacing=(1.0 + 0.2 * v_index, 1.0 + 0.2 * v_index),
                        vendor=vendor,
                        subject_id=subject_id,
                        labeled=vendor not in unlabeled,
                        seed=100 * v_index + 10 * subject + slice_index,
                    )
                    directory = root / vendor / subject_id / f"slice{slice_index:02d}"
                    records.append(write_sample(sample, directory, slice_index=slice_index))
        manifest = DatasetManifest(vendors=tuple(vendors), records=sorted_records(records), root=root)
        write_manifest(manifest, root)
        return load_manifest(root)

    return _create


@pytest.fixture(scope="session")
def phantom_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """A small four-vendor phantom generated once per session."""
    from sdaug.phantom import default_desk_config, generate_phantom_dataset

    root = tmp_path_factory.mktemp("phantom")
    config = replace(
        default_desk_config(seed=3),
        subjects_per_vendor=3,
        slices_per_subject=2,
        canvas_size=96,
        eval_subjects_per_vendor=1,
    )
    generate_phantom_dataset(config, root)
    return root


@pytest.fixture()
def phantom_manifest(phantom_dir: Path):
    from sdaug.data import load_manifest

    return load_manifest(phantom_dir)


@pytest.fixture()
def tiny_train_config():
    from sdaug.training import TrainConfig

    def _create(**overrides):
        base = TrainConfig(
            name="tiny",
            widths=(4, 8),
            target_size=32,
            epochs=2,
            batch_size=2,
            seed=0,
        )
        return replace(base, **overrides)

    return _create
