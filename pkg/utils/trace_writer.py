"""
Proof trace output
Human-readable listing on stdout and one JSON record per iteration
"""
import json
import sys
import threading
from typing import IO, Any, Dict, List, Optional, Sequence

import pandas as pd

from utils.helpers import format_bound, format_point, format_seconds, to_jsonable


def box_listing(box) -> str:
    """'[(4, 4.41); (4, 4.41)]' rendering of a BoxDomain"""
    parts = []
    for iv in box.intervals:
        lo, hi = iv.as_floats()
        parts.append(f"({lo:.6g}, {hi:.6g})")
    return "[" + "; ".join(parts) + "]"


def _points_listing(points: Sequence[float]) -> str:
    return "[" + "; ".join(f"{p:.4f}" for p in points) + "]"


class TraceWriter:
    """Prints the iteration listing and mirrors it as JSON lines"""

    def __init__(self, stream: Optional[IO[str]] = None, jsonl_path: Optional[str] = None,
                 quiet: bool = False):
        self.stream = stream or sys.stdout
        self.quiet = quiet
        self.jsonl_path = jsonl_path
        self._jsonl = open(jsonl_path, 'w', encoding='utf-8') if jsonl_path else None
        self._lock = threading.Lock()
        self.records: List[Dict[str, Any]] = []

    def _print(self, line: str = ""):
        if not self.quiet:
            print(line, file=self.stream)

    def _emit(self, record: Dict[str, Any]):
        record = to_jsonable(record)
        self.records.append(record)
        if self._jsonl is not None:
            self._jsonl.write(json.dumps(record, sort_keys=True) + "\n")
            self._jsonl.flush()

    def start(self, problem, objective_text: str):
        with self._lock:
            summary = objective_text if len(objective_text) <= 60 else objective_text[:60] + " ..."
            self._print(f"Proving that {summary} >= 0 over the box {box_listing(problem.box)} ...")
            self._emit({'event': 'start', 'name': problem.name, 'box': problem.box.to_text(),
                        'objective': objective_text})

    def iteration(self, record):
        """Print one IterationRecord (transcendental listing or single SOS bound)"""
        with self._lock:
            if record.control_points:
                if record.iteration == 1 and record.enclosures:
                    self._print("Bounding semialgebraic components")
                    for text, (lo, hi) in record.enclosures.items():
                        self._print(f" Computing approximation on [{lo:.4f}, {hi:.4f}] for {text[:50]}")
                    self._print("Semialgebraic components bounded")
                    self._print()
                self._print(f"Iteration {record.iteration}")
                for points in record.control_points.values():
                    self._print(f"  Control points set: {_points_listing(points)} ...")
                self._print(f" [SOS] Lower bound = {format_bound(record.bound)}")
                self._print(f" Minimizer candidate x = {format_point(record.candidate)}")
            else:
                numeric = record.numeric_bound if record.numeric_bound is not None else record.bound
                self._print(f"[SOS] Lower bound with SOS = {format_bound(numeric)}")
            if record.certified is not None:
                self._print(f" [CERT] Proving non-negativity with exact rational arithmetic = "
                            f"{str(record.certified).lower()}")
                if record.certified and not record.control_points:
                    self._print(f"{format_bound(record.bound)} >= {format_bound(0.0)}")
            self._emit(dict(record.to_dict(), event='iteration'))

    def verdict(self, verdict):
        with self._lock:
            status = verdict.status.value
            if status == "Proved":
                if verdict.leaves > 1:
                    self._print(f"Proved on {verdict.leaves} sub-boxes")
                self._print(f"Inequality {verdict.name} verified")
            elif status == "Disproved":
                self._print(f"Inequality {verdict.name} disproved: {verdict.message}")
                if verdict.witness is not None:
                    self._print(f" Counterexample x = {format_point(verdict.witness, 10)}")
            else:
                self._print(f"Inequality {verdict.name} not proved: {verdict.message}")
                for box in verdict.unresolved[:10]:
                    self._print(f" Unresolved box {box_listing(box)}")
            self._print(f"Total time: {format_seconds(verdict.elapsed)}")
            self._emit(dict(verdict.to_dict(), event='verdict'))

    def message(self, tag: str, text: str):
        with self._lock:
            self._print(f"[{tag}] {text}")

    def close(self):
        if self._jsonl is not None:
            self._jsonl.close()
            self._jsonl = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def trace_frame(records: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """Iteration records as a table (one row per iteration)"""
    rows = [r for r in records if r.get('event', 'iteration') == 'iteration']
    if not rows:
        return pd.DataFrame(columns=['iteration', 'bound', 'certified', 'elapsed'])
    df = pd.DataFrame(rows)
    df['points'] = df['control_points'].apply(lambda cp: sum(len(v) for v in cp.values()) if cp else 0)
    columns = [c for c in ['box', 'iteration', 'points', 'bound', 'certified', 'elapsed'] if c in df.columns]
    return df[columns]


def read_trace(path: str) -> List[Dict[str, Any]]:
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]
