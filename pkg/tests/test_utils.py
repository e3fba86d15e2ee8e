"""Tests for utils module."""

from __future__ import annotations

from pathlib import Path

import pytest


@pytest.mark.parametrize("value,expected", [(2.5, 3), (-2.5, -3), (0.49, 0), (223.5, 224), (7.0, 7)])
def test_round_half_away(value, expected):
    from sdaug.utils import round_half_away

    assert round_half_away(value) == expected


def test_stream_rng_reproducible_and_independent():
    from sdaug.utils import stream_rng

    assert stream_rng(1, 2, 3).random() == stream_rng(1, 2, 3).random()
    assert stream_rng(1, 2, 3).random() != stream_rng(1, 2, 4).random()
    assert stream_rng(1, 2).random() != stream_rng(2, 2).random()


def test_dump_json_is_canonical():
    from sdaug.utils import dump_json

    text = dump_json({"b": 1, "a": [1, 2]})
    assert text.endswith("}\n")
    assert text.index('"a"') < text.index('"b"')


def test_csv_roundtrip_formats_floats(sandbox: Path):
    from sdaug.utils import read_csv, write_csv

    path = write_csv(sandbox / "out" / "t.csv", ("name", "value"), [{"name": "x", "value": 0.5}, {"name": "y", "value": 2}])
    assert path.read_text() == "name,value\nx,0.50000000\ny,2\n"
    assert read_csv(path)[0] == {"name": "x", "value": "0.50000000"}
