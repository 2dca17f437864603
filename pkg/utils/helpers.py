"""
Utility functions for the nlcert verifier
Hashing, JSON export, number formatting and the test-script runner shared by the engine and tools
"""
import hashlib
import json
import os
from fractions import Fraction
from typing import Any, Dict, List

import numpy as np


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def to_jsonable(obj: Any) -> Any:
    """Convert numpy and Fraction values to native JSON types"""
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}" if obj.denominator != 1 else str(obj.numerator)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(key): to_jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(item) for item in obj]
    if hasattr(obj, 'value') and hasattr(obj, 'name') and not isinstance(obj, type):
        return obj.value
    return obj


def export_results_to_json(results: Dict[str, Any], filename: str) -> bool:
    """Export a result dictionary to a JSON file"""
    try:
        with open(filename, 'w', encoding='utf-8') as f:
            json.dump(to_jsonable(results), f, indent=2, ensure_ascii=False, default=str)
        return True
    except OSError as e:
        print(f"Error exporting results: {e}")
        return False


def ensure_directory(path: str) -> str:
    if path and not os.path.exists(path):
        os.makedirs(path, exist_ok=True)
    return path


def format_bound(value: Any, digits: int = 10) -> str:
    """Fixed-point rendering used in traces, e.g. 0.0000021642"""
    v = float(value)
    if v != 0 and abs(v) < 10 ** (-digits):
        return f"{v:.4e}"
    return f"{v:.{digits}f}"


def format_point(point: List[Any], digits: int = 4) -> str:
    """'[4; 4; 4; 8; 4; 4]' style rendering of a point"""
    return "[" + "; ".join(f"{float(v):.{digits}g}" for v in point) + "]"


def format_seconds(seconds: float) -> str:
    return f"{seconds:.6f} secs"


def run_test_functions(namespace: Dict[str, Any], title: str) -> int:
    """Run every test_* callable of a test script; returns a process exit status"""
    tests = [obj for name, obj in sorted(namespace.items()) if name.startswith('test_') and callable(obj)]
    print(f"🧪 {title}")
    print("=" * 50)
    failures = 0
    for test in tests:
        try:
            test()
            print(f"✅ {test.__name__}")
        except Exception as e:
            failures += 1
            print(f"❌ {test.__name__}: {type(e).__name__}: {e}")
    print("=" * 50)
    print(f"{len(tests) - failures}/{len(tests)} passed")
    return 1 if failures else 0
