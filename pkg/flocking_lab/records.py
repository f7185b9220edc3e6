"""時系列テーブルと CSV 入出力（再実行でビット単位一致する .17g 形式）"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


def format_value(value: Any) -> str:
    """float は .17g、None は空文字、それ以外は str"""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def parse_value(text: str) -> float:
    return math.nan if text == "" else float(text)


def write_csv_rows(path: Path, rows: Iterable[Mapping[str, Any]], fieldnames: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format_value(row.get(k)) for k in fieldnames})
    return path


@dataclass
class SeriesTable:
    """列名付きの数値行の並び（ソルバーの診断出力）"""

    columns: tuple[str, ...]
    rows: list[tuple[float, ...]] = field(default_factory=list)

    def append(self, row: Mapping[str, float]) -> None:
        self.rows.append(tuple(float(row[c]) for c in self.columns))

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        index = self.columns.index(name)
        return np.array([row[index] for row in self.rows], dtype=float)

    def last(self) -> dict[str, float]:
        return dict(zip(self.columns, self.rows[-1]))

    def write_csv(self, path: Path) -> Path:
        return write_csv_rows(path, (dict(zip(self.columns, row)) for row in self.rows), self.columns)

    @classmethod
    def read_csv(cls, path: Path) -> "SeriesTable":
        with Path(path).open(encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            columns = tuple(reader.fieldnames or ())
            rows = [tuple(parse_value(r[c]) for c in columns) for r in reader]
        return cls(columns, rows)
