#!/usr/bin/env python3
"""
Run the bundled benchmark corpus and print a summary table
"""
import argparse
import glob
import os
import sys
import time

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pandas as pd

from nlcert import NlcertError
from nlcert.driver import solve
from nlcert.expr import load_problem
from utils.config_manager import config_manager, setup_logging
from utils.helpers import ensure_directory, export_results_to_json

BENCH_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'bench')
SLOW = ('flyspeck9922_fullbox', 'flyspeck9922_subbox', 'motzkin_box')


def run_one(path: str) -> dict:
    stem = os.path.splitext(os.path.basename(path))[0]
    start = time.time()
    try:
        problem = load_problem(path)
        config = config_manager.load_config(problem.options)
        verdict = solve(problem, config)
    except NlcertError as e:
        return {'problem': stem, 'status': 'Error', 'bound': None, 'iterations': 0, 'leaves': 0,
                'certificates': 0, 'seconds': round(time.time() - start, 3), 'message': str(e)}
    return {
        'problem': stem,
        'status': verdict.status.value,
        'bound': verdict.bound,
        'iterations': len(verdict.trace),
        'leaves': verdict.leaves,
        'certificates': len(verdict.certificates),
        'seconds': round(time.time() - start, 3),
        'message': verdict.message,
    }


def main():
    parser = argparse.ArgumentParser(description="Run the nlcert benchmark corpus")
    parser.add_argument("--only", nargs="*", help="problem stems to run")
    parser.add_argument("--include-slow", action="store_true", help="also run the Flyspeck and Motzkin problems")
    parser.add_argument("--output", default=None, help="JSON summary path")
    args = parser.parse_args()

    setup_logging(config_manager.section('logging'))
    paths = sorted(glob.glob(os.path.join(BENCH_DIR, '*.nlc')))
    rows = []
    for path in paths:
        stem = os.path.splitext(os.path.basename(path))[0]
        if args.only and stem not in args.only:
            continue
        if not args.only and not args.include_slow and stem in SLOW:
            continue
        print(f"🔄 {stem} ...")
        rows.append(run_one(path))

    df = pd.DataFrame(rows)
    if df.empty:
        print("No benchmark selected")
        return 0
    with pd.option_context('display.max_colwidth', 60, 'display.width', 160):
        print(df[['problem', 'status', 'bound', 'iterations', 'leaves', 'certificates', 'seconds']].to_string(index=False))
    output = args.output or os.path.join(ensure_directory(config_manager.section('output').get('directory', 'results')),
                                         'benchmarks.json')
    if export_results_to_json({'benchmarks': rows}, output):
        print(f"📄 Summary written to {output}")
    return 0 if (df['status'] != 'Error').all() else 1


if __name__ == "__main__":
    sys.exit(main())
