# mcco_services/utils/report_writer.py
import json
import logging
import math
import os
import uuid
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from models import EstimateReport
from .. import __version__
from ..analysis import confidence_interval

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["run_id", "seed", "n1", "estimate", "stderr", "ci_low", "ci_high", "scenarios", "expected_cost", "wall_ms"]


def _ensure_parent(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def new_run_id() -> str:
    return uuid.uuid4().hex[:12]


def _interval(report: EstimateReport):
    if report.tree_values.size < 2:
        return float("nan"), float("nan")
    return confidence_interval(report.tree_values)


def estimate_row(report: EstimateReport, run_id: Optional[str] = None) -> Dict[str, Any]:
    low, high = _interval(report)
    return {
        "run_id": run_id or new_run_id(),
        "seed": report.seed,
        "n1": report.n1,
        "estimate": report.value,
        "stderr": report.stderr,
        "ci_low": low,
        "ci_high": high,
        "scenarios": report.scenario_count,
        "expected_cost": report.expected_cost,
        "wall_ms": report.wall_ms,
    }


def append_csv(path: str, rows: Iterable[Dict[str, Any]], columns: Optional[List[str]] = None) -> None:
    """Append rows, writing the header only when the file is new."""
    frame = pd.DataFrame(list(rows), columns=columns or CSV_COLUMNS)
    _ensure_parent(path)
    exists = os.path.isfile(path) and os.path.getsize(path) > 0
    frame.to_csv(path, mode="a" if exists else "w", header=not exists, index=False)
    logger.debug(f"Wrote {len(frame)} rows to {path}.")


def write_table(path: str, rows: Iterable[Dict[str, Any]]) -> None:
    frame = pd.DataFrame(list(rows))
    _ensure_parent(path)
    frame.to_csv(path, index=False)
    logger.debug(f"Wrote table of {len(frame)} rows to {path}.")


def report_payload(report, include_trees: bool = False) -> Dict[str, Any]:
    """Report fields for the JSON record; per-tree arrays only on request."""
    skip = set() if include_trees else {"tree_values", "tree_gradients"}
    payload = {k: v for k, v in report.model_dump().items() if k not in skip}
    payload["stderr"] = report.stderr
    if isinstance(report, EstimateReport):
        payload["ci"] = list(_interval(report))
    return _jsonable(payload)


def write_json(path: str, payload: Dict[str, Any], seed: Optional[int], config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Superset record: toolkit version, seed, resolved config and the payload."""
    record = {"version": __version__, "seed": seed, "config": _jsonable(config or {})}
    record.update(_jsonable(payload))
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2)
    logger.info(f"Wrote report to {path}.")
    return record


def read_json(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
