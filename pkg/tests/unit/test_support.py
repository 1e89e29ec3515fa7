"""Atomic writes, manifests, field QC, event lines and report fingerprints."""

from __future__ import annotations

import json
import os

import numpy as np
import pytest

from cli.deterministic import report_fingerprint, set_seed
from rods import events
from rods.atomic_io import (
    atomic_write_json,
    canonical_json,
    compute_file_hash,
    verify_manifest,
    write_manifest,
)
from rods.field_qc import qc_clamped, qc_field


class TestAtomicIO:
    def test_json_is_canonical(self, tmp_path):
        result = atomic_write_json(str(tmp_path / "sub" / "a.json"), {"b": 1, "a": [1.5]})
        assert result["success"]
        text = (tmp_path / "sub" / "a.json").read_text()
        assert text == canonical_json({"a": [1.5], "b": 1})
        assert text.index('"a"') < text.index('"b"')
        assert result["sha256"] == compute_file_hash(result["path"])
        assert not os.path.exists(result["path"] + ".tmp")

    def test_non_finite_values_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            atomic_write_json(str(tmp_path / "a.json"), {"x": float("nan")})
        assert not (tmp_path / "a.json").exists()
        assert not (tmp_path / "a.json.tmp").exists()

    def test_manifest_detects_changes(self, tmp_path):
        for name in ("x.txt", "y.txt"):
            (tmp_path / name).write_text(name)
        write_manifest(str(tmp_path), ["x.txt", "y.txt"], "manifest.json")
        assert verify_manifest(str(tmp_path), "manifest.json")["valid"]
        (tmp_path / "x.txt").write_text("changed")
        (tmp_path / "y.txt").unlink()
        check = verify_manifest(str(tmp_path), "manifest.json")
        assert not check["valid"]
        assert check["mismatched"] == ["x.txt"]
        assert check["missing"] == ["y.txt"]


class TestFieldQC:
    def test_metrics(self):
        qc = qc_field(np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]]), "U")
        assert qc["peak"] == pytest.approx(5.0)
        assert qc["rms"] == pytest.approx(5.0 / np.sqrt(2.0))
        assert qc["is_valid"] and not qc["is_zero"]

    def test_non_finite(self):
        assert not qc_field(np.array([[np.inf, 0.0, 0.0]]))["is_valid"]

    def test_clamped_nodes(self):
        values = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        assert qc_clamped(values, np.array([0]))["is_valid"]
        assert not qc_clamped(values, np.array([1]))["is_valid"]
        assert qc_clamped(values, np.array([], dtype=int))["clamped_nodes"] == 0


class TestEvents:
    def test_event_line_is_json(self, monkeypatch, capsys):
        monkeypatch.setenv("ROD_LOG_LEVEL", "info")
        events.log_event("mesh_built", dofs=np.int64(12), h=np.float64(0.5))
        line = capsys.readouterr().err.strip().splitlines()[-1]
        entry = json.loads(line)
        assert entry["event"] == "mesh_built"
        assert entry["dofs"] == 12 and entry["h"] == 0.5

    def test_debug_events_hidden_at_info(self, monkeypatch, capsys):
        monkeypatch.setenv("ROD_LOG_LEVEL", "info")
        events.log_event("detail", debug=True)
        assert "detail" not in capsys.readouterr().err

    def test_quiet(self, capsys):
        events.log_event("anything")
        events.status("anything")
        assert capsys.readouterr().err == ""


class TestDeterminism:
    def test_seed_reproduces_draws(self):
        a = set_seed(7).normal(size=4)
        b = set_seed(7).normal(size=4)
        np.testing.assert_array_equal(a, b)
        assert os.environ["ROD_SEED"] == "7"

    def test_fingerprint(self):
        report = {"b": [1.0, -0.0], "a": 0.30000000000000004}
        fp = report_fingerprint(report)
        assert len(fp) == 16
        assert fp == report_fingerprint({"a": 0.30000000000000004, "b": [1.0, -0.0]})
        assert report_fingerprint(report, digits=6) == report_fingerprint({"a": 0.3, "b": [1.0, 0.0]}, digits=6)
        assert fp != report_fingerprint({"a": 0.3, "b": [1.0, 0.0]})
