"""
Record Exporter

JSON and CSV writers for run artifacts. Every CSV starts with a schema line

    # schema: <name> v<version>

followed by the column header. Readers refuse a file whose schema name or
version differs from what they expect; bumping a version is a breaking change.
"""

import csv
import json
import os
from typing import Any, Iterable

SCHEMAS: dict[str, tuple[int, list[str]]] = {
    "accuracy-matrix": (1, ["after_task", "task", "accuracy"]),
    "summary": (1, [
        "dataset", "run", "strategy", "metric", "sigma_duplicate", "splits",
        "mean_average_accuracy", "std_average_accuracy", "first_split_average_accuracy",
        "final_widths", "complete",
    ]),
    "forgetting": (1, ["dataset", "run", "fold", "seed", "task", "initial_accuracy", "final_accuracy", "forgetting"]),
    "trajectory": (1, ["dataset", "run", "after_task", "mean_average_accuracy", "std_average_accuracy"]),
    "sweep": (1, [
        "metric", "sigma_duplicate", "mean_average_accuracy", "std_average_accuracy",
        "final_widths", "run", "best",
    ]),
    "separation": (1, ["metric", "threshold", "duplicate_count", "coefficient_of_variation"]),
    "separation-summary": (1, [
        "dataset", "run", "metric", "threshold", "reports",
        "mean_duplicate_count", "mean_coefficient_of_variation",
    ]),
}


def schema_line(name: str) -> str:
    version, _ = SCHEMAS[name]
    return f"# schema: {name} v{version}"


def _ensure_parent(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


def write_json(path: str, payload: Any) -> str:
    """Atomic JSON write (temp file + rename)."""
    _ensure_parent(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, ensure_ascii=False)
    os.replace(tmp, path)
    return path


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path: str, schema: str, rows: Iterable[Iterable[Any]]) -> str:
    _, columns = SCHEMAS[schema]
    _ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(schema_line(schema) + "\n")
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            row = list(row)
            if len(row) != len(columns):
                raise ValueError(f"{schema} row has {len(row)} fields, expected {len(columns)}")
            writer.writerow(row)
    return path


def read_csv(path: str, schema: str) -> list[dict[str, str]]:
    """Rows of a schema-versioned CSV as dicts; ValueError on a schema mismatch."""
    with open(path, "r", newline="", encoding="utf-8") as f:
        first = f.readline().rstrip("\r\n")
        if first != schema_line(schema):
            raise ValueError(f"{path}: expected '{schema_line(schema)}', found '{first}'")
        return list(csv.DictReader(f))


def accuracy_matrix_rows(matrix: list[list[float]]) -> list[list[Any]]:
    return [[i, t, repr(float(acc))] for i, row in enumerate(matrix) for t, acc in enumerate(row)]


def write_accuracy_matrix(path: str, matrix: list[list[float]]) -> str:
    return write_csv(path, "accuracy-matrix", accuracy_matrix_rows(matrix))
