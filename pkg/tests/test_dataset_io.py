"""Tests for src/dataset_io.py — container round trip, error classes, CSV export."""

import csv
import json

import numpy as np
import pytest

from src import config
from src.dataset_io import export_trace_csv, load_dataset, read_container, save_dataset, write_container
from src.errors import (
    ArtifactIOError,
    ChecksumError,
    FormatError,
    MissingArtifactError,
    TruncatedFileError,
    VersionError,
)


@pytest.fixture()
def saved(tmp_path, small_meta_ds):
    path = tmp_path / "ds.bin"
    save_dataset(small_meta_ds, path)
    return path


class TestRoundTrip:
    def test_load_equals_saved(self, saved, small_meta_ds):
        loaded = load_dataset(saved)
        assert loaded == small_meta_ds
        assert loaded.tasks[0].snr.dtype == np.float32
        assert loaded.positive_rate() == small_meta_ds.positive_rate()

    def test_header_is_readable_json(self, saved):
        data = saved.read_bytes()
        assert data.startswith(config.DATASET_MAGIC + b" ")
        header_len = int(data[9:19])
        header = json.loads(data[20 : 20 + header_len])
        assert header["num_tasks"] == 2
        assert header["num_devices"] == 3
        assert header["mode"] == "any"
        assert header["version"] == config.DATASET_VERSION
        assert len(header["sha256"]) == 64

    def test_no_temp_file_left(self, saved):
        assert not saved.with_name(saved.name + ".tmp").exists()


class TestErrors:
    def test_missing(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_dataset(tmp_path / "nope.bin")

    def test_bad_magic(self, saved):
        data = bytearray(saved.read_bytes())
        data[:8] = b"XXXXXXXX"
        saved.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_dataset(saved)

    def test_truncated(self, saved):
        data = saved.read_bytes()
        saved.write_bytes(data[:-100])
        with pytest.raises(TruncatedFileError):
            load_dataset(saved)

    def test_checksum(self, saved):
        data = bytearray(saved.read_bytes())
        data[-1] ^= 0xFF
        saved.write_bytes(bytes(data))
        with pytest.raises(ChecksumError):
            load_dataset(saved)

    def test_older_version(self, tmp_path):
        path = tmp_path / "old.bin"
        write_container(path, config.DATASET_MAGIC, {"version": config.DATASET_VERSION - 1}, b"")
        with pytest.raises(VersionError) as exc:
            load_dataset(path)
        assert exc.value.found == config.DATASET_VERSION - 1
        assert exc.value.exit_code == config.EXIT_IO

    def test_errors_are_distinct(self):
        classes = {FormatError, TruncatedFileError, ChecksumError, VersionError, MissingArtifactError}
        assert len(classes) == 5
        assert all(issubclass(c, ArtifactIOError) for c in classes)


class TestContainer:
    def test_generic_round_trip(self, tmp_path):
        path = tmp_path / "c.bin"
        write_container(path, b"TESTMAGC", {"version": 7, "note": "x"}, b"\x00\x01\x02")
        header, payload = read_container(path, b"TESTMAGC", 7)
        assert header["note"] == "x"
        assert payload == b"\x00\x01\x02"

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "c.bin"
        write_container(path, b"TESTMAGC", {"version": 1}, b"abc")
        path.write_bytes(path.read_bytes() + b"zz")
        with pytest.raises(FormatError):
            read_container(path, b"TESTMAGC", 1)


class TestExportTrace:
    def test_rows(self, tmp_path, small_meta_ds):
        task = small_meta_ds.tasks[0]
        path = tmp_path / "trace.csv"
        rows = export_trace_csv(task, path)
        assert rows == task.num_devices * task.num_slots
        with open(path, newline="") as fh:
            reader = list(csv.DictReader(fh))
        assert len(reader) == rows
        first = reader[0]
        assert set(first) == {"slot", "device", "snr_db", "zeta", "blocked", "label"}
        assert int(first["blocked"]) == int(task.snr[0, 0] <= 0.01)
        assert reader[task.num_slots - 1]["label"] == ""  # invalid tail
