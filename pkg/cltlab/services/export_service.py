"""
Export Service
Writes analysis results as CSV (pandas, 17 significant digits, LF line endings) or JSON to a
file or stdout.

CSV tables may carry a leading "# {json}" header line and trailing "# ..." note lines; both
are skipped by readers that treat '#' as a comment marker.
"""

import json
import math
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Literal, Mapping, Optional, TextIO

import numpy as np
import pandas as pd

from cltlab.logging_config import get_logger
from cltlab.services.blocks_service import BlockDecomposition
from cltlab.services.bridge_service import BridgeTable
from cltlab.services.mixing_service import MixingProfile

logger = get_logger("cltlab.export_service")

FLOAT_FORMAT = "%.17g"

Format = Literal["csv", "json"]


def _plain(value: Any) -> Any:
    """Convert numpy scalars/arrays to JSON-ready values; non-finite floats become None."""
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


class ExportService:
    """Sink for one command's output."""

    def __init__(self, fmt: Format = "csv", output: Optional[str] = None, stream: Optional[TextIO] = None):
        """
        Args:
            fmt: "csv" or "json"
            output: File path; stdout when None
            stream: Explicit text stream (overrides stdout when output is None)
        """
        self.fmt = fmt
        self.output = Path(output) if output else None
        self.stream = stream

    def _write(self, text: str) -> None:
        if self.output is not None:
            self.output.parent.mkdir(parents=True, exist_ok=True)
            with open(self.output, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(text)
            logger.info(f"Wrote {len(text)} characters to {self.output}")
        else:
            (self.stream or sys.stdout).write(text)

    # ==================== Rendering ====================

    @staticmethod
    def render_csv(
        columns: Mapping[str, Iterable[Any]],
        header: Optional[Dict[str, Any]] = None,
        notes: Optional[Iterable[str]] = None,
    ) -> str:
        frame = pd.DataFrame(dict(columns))
        body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        lines = []
        if header is not None:
            lines.append("# " + json.dumps(_plain(header), sort_keys=True) + "\n")
        lines.append(body)
        for note in notes or ():
            lines.append(f"# {note}\n")
        return "".join(lines)

    @staticmethod
    def render_json(payload: Any) -> str:
        return json.dumps(_plain(payload), indent=2, sort_keys=False, ensure_ascii=False) + "\n"

    # ==================== Emitters ====================

    def emit_table(
        self,
        columns: Mapping[str, Iterable[Any]],
        header: Optional[Dict[str, Any]] = None,
        notes: Optional[Iterable[str]] = None,
    ) -> None:
        """Emit one table; in JSON mode the header, rows and notes become one document."""
        if self.fmt == "csv":
            self._write(self.render_csv(columns, header, notes))
            return
        rows = _plain(pd.DataFrame(dict(columns)).to_dict(orient="records"))
        payload: Dict[str, Any] = {}
        if header is not None:
            payload["header"] = header
        payload["rows"] = rows
        if notes:
            payload["notes"] = list(notes)
        self._write(self.render_json(payload))

    def emit_record(self, record: Mapping[str, Any]) -> None:
        """Emit one summary record: a one-row CSV or a JSON object."""
        if self.fmt == "csv":
            self._write(self.render_csv({key: [value] for key, value in record.items()}))
        else:
            self._write(self.render_json(dict(record)))

    def emit_bridge_table(self, table: BridgeTable, checksum: str) -> None:
        """Columns (x, y, reachable, B_n) with a header carrying n and the model checksum."""
        size = table.values.shape[0]
        x, y = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        self.emit_table(
            {
                "x": x.ravel(),
                "y": y.ravel(),
                "reachable": table.support_mask.ravel(),
                "B_n": table.values.ravel(),
            },
            header={"n": table.n, "model_checksum": checksum},
        )

    def emit_mixing_profile(self, profile: MixingProfile, checksum: str) -> None:
        """One row per n followed by the verdict lines."""
        self.emit_table(
            profile.columns(),
            header={"N": profile.horizon, "model_checksum": checksum},
            notes=[verdict.line for verdict in profile.verdicts()],
        )

    def emit_blocks(self, decomposition: BlockDecomposition, aggregate: Dict[str, Any]) -> None:
        self.emit_table(decomposition.rows(), header=aggregate)


def write_statistics(path: str, values: np.ndarray, name: str = "statistic") -> None:
    """Dump raw per-replication statistics as a one-column CSV."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({name: np.asarray(values, dtype=float)}).to_csv(
        target, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
    )
    logger.info(f"Dumped {len(values)} statistics to {target}")
