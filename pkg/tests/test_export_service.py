"""
Tests for CSV/JSON rendering and the table emitters.
"""

import io
import json

import numpy as np
import pandas as pd
import pytest

from cltlab.services.bridge_service import bridge_sum_table
from cltlab.services.export_service import ExportService, write_statistics
from cltlab.services.mixing_service import clt_condition_report
from cltlab.services.moments_service import model_checksum


@pytest.fixture
def buffer():
    return io.StringIO()


class TestRendering:
    """Tests for the static renderers."""

    def test_csv_layout(self):
        text = ExportService.render_csv({"a": [0.1, 1.0]}, header={"n": 2}, notes=["ok"])
        assert text == '# {"n": 2}\na\n0.10000000000000001\n1\n# ok\n'

    def test_csv_without_header(self):
        text = ExportService.render_csv({"x": [1, 2], "y": [0.5, 0.25]})
        assert text.splitlines() == ["x,y", "1,0.5", "2,0.25"]
        assert "\r" not in text

    def test_json_nan_is_null(self):
        payload = json.loads(ExportService.render_json({"x": float("nan"), "y": np.float64(2.5)}))
        assert payload == {"x": None, "y": 2.5}

    def test_json_numpy_values(self):
        payload = json.loads(ExportService.render_json({"v": np.arange(3), "ok": np.bool_(True)}))
        assert payload == {"v": [0, 1, 2], "ok": True}


class TestEmitters:
    """Tests for the table emitters."""

    def test_record_csv(self, buffer):
        ExportService("csv", stream=buffer).emit_record({"valid": True, "size": 2})
        assert buffer.getvalue() == "valid,size\nTrue,2\n"

    def test_table_json(self, buffer):
        ExportService("json", stream=buffer).emit_table({"n": [1, 2]}, header={"N": 2}, notes=["done"])
        payload = json.loads(buffer.getvalue())
        assert payload == {"header": {"N": 2}, "rows": [{"n": 1}, {"n": 2}], "notes": ["done"]}

    def test_bridge_table_csv(self, symmetric, buffer):
        ExportService("csv", stream=buffer).emit_bridge_table(bridge_sum_table(symmetric, 2), model_checksum(symmetric))
        text = buffer.getvalue()
        header = json.loads(text.splitlines()[0][2:])
        assert header == {"model_checksum": model_checksum(symmetric), "n": 2}
        frame = pd.read_csv(io.StringIO(text), comment="#")
        assert list(frame.columns) == ["x", "y", "reachable", "B_n"]
        assert len(frame) == 4
        assert frame["reachable"].all()
        assert frame.loc[(frame.x == 0) & (frame.y == 0), "B_n"].item() == pytest.approx(-1.8)

    def test_bridge_table_unreachable_json(self, flip, buffer):
        ExportService("json", stream=buffer).emit_bridge_table(bridge_sum_table(flip, 1), model_checksum(flip))
        rows = json.loads(buffer.getvalue())["rows"]
        diagonal = [row for row in rows if row["x"] == row["y"]]
        assert all(row["reachable"] is False and row["B_n"] is None for row in diagonal)
        off_diagonal = [row for row in rows if row["x"] != row["y"]]
        assert all(row["reachable"] is True for row in off_diagonal)

    def test_mixing_profile(self, symmetric, buffer):
        profile = clt_condition_report(symmetric, 64)
        ExportService("csv", stream=buffer).emit_mixing_profile(profile, model_checksum(symmetric))
        lines = buffer.getvalue().splitlines()
        assert json.loads(lines[0][2:])["N"] == 64
        assert lines[1].startswith("n,beta,beta2s,rho")
        notes = [line for line in lines[1:] if line.startswith("#")]
        assert len(lines) == 2 + 64 + len(notes)
        assert "# (cond beta): PASS (n·∫Q² → 0)" in notes

    def test_output_file(self, tmp_path):
        target = tmp_path / "nested" / "out.csv"
        ExportService("csv", output=str(target)).emit_record({"a": 1})
        assert target.read_bytes() == b"a\n1\n"


class TestWriteStatistics:
    """Tests for the raw statistics dump."""

    def test_one_column(self, tmp_path):
        target = tmp_path / "stats.csv"
        write_statistics(str(target), np.array([0.5, -1.25, 3.0]))
        assert target.read_text(encoding="utf-8").splitlines() == ["statistic", "0.5", "-1.25", "3"]
