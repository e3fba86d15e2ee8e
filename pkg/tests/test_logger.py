"""Tests for logger module."""

from __future__ import annotations

import json
from pathlib import Path


def test_logger_human_entry_disabled(capsys):
    from sdaug.logger import HumanEntry, Logger

    logger = Logger(command="test", enable_human_logs=False)
    logger.human(HumanEntry(title="test", body="content", variant="epoch"))
    logger.render("table")
    assert capsys.readouterr().err == ""


def test_logger_human_variants(capsys):
    from sdaug.logger import HumanEntry, Logger

    logger = Logger(command="test")
    logger.warn("careful", "details")
    logger.human(HumanEntry(title="epoch 1/2", body="lr=1e-3", variant="epoch"))
    err = capsys.readouterr().err
    assert "[warn] careful" in err
    assert "details" in err
    assert "[epoch] epoch 1/2" in err


def test_logger_json_entry(sandbox: Path):
    from sdaug.logger import Logger

    log_file = sandbox / "logs" / "log.jsonl"
    logger = Logger(command="train", log_json_path=str(log_file), enable_human_logs=False, enable_file_logs=True)
    logger.json({"type": "epoch", "val_dice": 0.5})
    logger.json({"type": "epoch", "val_dice": 0.6})

    lines = [json.loads(line) for line in log_file.read_text().splitlines()]
    assert [line["val_dice"] for line in lines] == [0.5, 0.6]
    assert all(line["command"] == "train" and "timestamp" in line for line in lines)


def test_logger_json_needs_path(sandbox: Path):
    from sdaug.logger import Logger

    logger = Logger(command="x", enable_file_logs=True)
    assert logger.enable_file_logs is False
    logger.json({"type": "ignored"})
    assert list(sandbox.iterdir()) == []


def test_logger_spinner():
    from sdaug.logger import Logger

    logger = Logger(command="test", enable_human_logs=False)
    stop = logger.start_spinner()
    assert callable(stop)
    stop()
    assert logger.supports_spinner() is False


def test_null_logger_is_silent(capsys):
    from sdaug.logger import null_logger

    logger = null_logger()
    logger.error("boom", "nothing printed")
    assert capsys.readouterr() == ("", "")
