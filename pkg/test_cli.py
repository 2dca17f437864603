#!/usr/bin/env python3
"""
Command-line tests: exit statuses, prove/check round trip, tampering and mismatches
"""
import contextlib
import io
import json
import os
import sys
import tempfile
from fractions import Fraction

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from nlcert.cli import (EXIT_DISPROVED, EXIT_INCONCLUSIVE, EXIT_MALFORMED, EXIT_MISMATCH, EXIT_PROVED,
                        EXIT_USAGE, run)
from utils.helpers import run_test_functions
from utils.trace_writer import read_trace, trace_frame

BENCH_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "bench")
RUN_SLOW = os.getenv("NLCERT_RUN_SLOW") == "1"
GOAL = "name: square_gap\nobjective: (x1 - x2)^2 + 0.1 >= 0\nbox: [-1, 1]^2\noption check_certif = true\n"


def _run(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        try:
            status = run(argv)
        except SystemExit as exc:
            status = exc.code
    return status, out.getvalue(), err.getvalue()


def _write(directory: str, name: str, text: str) -> str:
    path = os.path.join(directory, name)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return path


def _prove(tmp: str, text: str = GOAL, stem: str = "square_gap"):
    problem = _write(tmp, f"{stem}.nlc", text)
    status, out, err = _run(["prove", problem, "--output-dir", tmp])
    return problem, os.path.join(tmp, f"{stem}.cert"), status, out


def test_usage_errors_exit_64():
    assert _run([])[0] == EXIT_USAGE
    assert _run(["prove"])[0] == EXIT_USAGE
    assert _run(["prove", "x.nlc", "--relax-order", "two"])[0] == EXIT_USAGE


def test_prove_then_check():
    with tempfile.TemporaryDirectory() as tmp:
        problem, cert, status, out = _prove(tmp)
        assert status == EXIT_PROVED, out
        assert "[SOS] Lower bound with SOS" in out
        assert "Inequality square_gap verified" in out
        assert os.path.exists(cert)
        status, out, _ = _run(["check", cert, problem])
        assert status == EXIT_PROVED, out
        assert "Verified" in out


def test_trace_file_is_written():
    with tempfile.TemporaryDirectory() as tmp:
        _prove(tmp)
        records = read_trace(os.path.join(tmp, "square_gap.trace.jsonl"))
        events = [r['event'] for r in records]
        assert events[0] == 'start' and events[-1] == 'verdict'
        frame = trace_frame(records)
        assert len(frame) == 1 and bool(frame['certified'].iloc[0])
        json.dumps(records)


def test_tampered_certificate_is_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        problem, cert, status, _ = _prove(tmp)
        assert status == EXIT_PROVED
        with open(cert, 'r', encoding='utf-8') as f:
            lines = f.read().splitlines()
        lines = ["lambda: 1" if line.startswith("lambda:") else line for line in lines]
        _write(tmp, "square_gap.cert", "\n".join(lines) + "\n")
        status, out, _ = _run(["check", cert, problem])
        assert status != EXIT_PROVED
        assert "Rejected" in out


def test_certificate_for_another_problem():
    with tempfile.TemporaryDirectory() as tmp:
        _, cert, status, _ = _prove(tmp)
        assert status == EXIT_PROVED
        other = _write(tmp, "other.nlc", GOAL.replace("0.1", "0.2"))
        status, _, err = _run(["check", cert, other])
        assert status == EXIT_MISMATCH, err


def test_malformed_inputs():
    with tempfile.TemporaryDirectory() as tmp:
        bad_problem = _write(tmp, "bad.nlc", "objective: x1 + >= 0\nbox: [0, 1]\n")
        assert _run(["prove", bad_problem, "--output-dir", tmp])[0] == EXIT_MALFORMED
        problem = _write(tmp, "good.nlc", GOAL)
        garbage = _write(tmp, "garbage.cert", "this is not a certificate\n")
        assert _run(["check", garbage, problem])[0] == EXIT_MALFORMED
        assert _run(["check", os.path.join(tmp, "missing.cert"), problem])[0] == EXIT_MALFORMED


def test_disproved_and_inconclusive_statuses():
    with tempfile.TemporaryDirectory() as tmp:
        false_goal = _write(tmp, "false.nlc", "x1 - 0.5 >= 0 on [0, 1]\n")
        status, out, _ = _run(["prove", false_goal, "--output-dir", tmp, "--no-check-certif"])
        assert status == EXIT_DISPROVED
        assert "disproved" in out
        loose = _write(tmp, "loose.nlc", "exp(x1) - 1 - x1 + 0.01 >= 0 on [-1, 1]\n")
        status, _, _ = _run(["prove", loose, "--output-dir", tmp, "--no-check-certif", "--samp-iters", "1",
                             "--quiet"])
        assert status == EXIT_INCONCLUSIVE


def test_command_line_overrides_problem_options():
    with tempfile.TemporaryDirectory() as tmp:
        text = GOAL.replace("option check_certif = true", "option relax_order = 0")
        problem = _write(tmp, "order.nlc", text)
        assert _run(["prove", problem, "--output-dir", tmp])[0] == EXIT_MALFORMED
        status, _, _ = _run(["prove", problem, "--output-dir", tmp, "--relax-order", "2", "--quiet"])
        assert status == EXIT_PROVED


def _read(path: str) -> str:
    with open(path, 'r', encoding='utf-8') as f:
        return f.read()


def _blocks(text: str):
    """Header lines (without the link count) and the link blocks of a certificate file"""
    header, blocks = [], []
    for line in text.splitlines():
        if line.startswith("begin "):
            blocks.append([line])
        elif blocks and blocks[-1][-1] != "end":
            blocks[-1].append(line)
        elif not line.startswith("links:"):
            header.append(line)
    return header, blocks


def _assemble(header, blocks) -> str:
    lines = list(header) + [f"links: {len(blocks)}"]
    for block in blocks:
        lines.extend(block)
    return "\n".join(lines) + "\n"


def _replace_first(lines, prefix, make):
    out, done = [], False
    for line in lines:
        if not done and line.startswith(prefix):
            line, done = make(line), True
        out.append(line)
    assert done, prefix
    return out


def _drop_first(lines, prefix):
    out, done = [], False
    for line in lines:
        if not done and line.startswith(prefix):
            done = True
            continue
        out.append(line)
    assert done, prefix
    return out


def _double_weight(index: int):
    def mutate(lines):
        weights = [i for i, line in enumerate(lines) if line.startswith("weight:")]
        out = list(lines)
        position = weights[index % len(weights)]
        weight_part, square_part = out[position].split(";", 1)
        weight = Fraction(weight_part.split(":", 1)[1].strip())
        out[position] = f"weight: {weight * 2} ;{square_part}"
        return out
    return mutate


def _shift_lambda(delta: Fraction):
    def mutate(lines):
        return _replace_first(lines, "lambda:",
                              lambda line: f"lambda: {Fraction(line.split(':', 1)[1].strip()) + delta}")
    return mutate


MUTATIONS = [
    _shift_lambda(Fraction(1, 1000)),
    _shift_lambda(Fraction(-1, 1000)),
    _shift_lambda(Fraction(1)),
    _double_weight(0),
    _double_weight(1),
    _double_weight(2),
    _double_weight(-1),
    lambda lines: _replace_first(lines, "remainder:", lambda line: "remainder: 1"),
    lambda lines: _replace_first(lines, "certified-bound:",
                                 lambda line: f"certified-bound: {Fraction(line.split(':', 1)[1].strip()) + 1}"),
    lambda lines: _replace_first(lines, "objective:", lambda line: line + " + 1"),
    lambda lines: _drop_first(lines, "constraint:"),
    lambda lines: _replace_first(lines, "box:", lambda line: "box: [0, 1]^2"),
    lambda lines: _replace_first(lines, "derivation:", lambda line: 'derivation: {"box":"[-1, 0] x [-1, 1]"}'),
    lambda lines: _drop_first(lines, "derivation:"),
    lambda lines: _replace_first(lines, "pop-hash:", lambda line: "pop-hash: " + "0" * 64),
    lambda lines: _replace_first(lines, "variables:", lambda line: "variables: 3"),
    lambda lines: _replace_first(lines, "begin ", lambda line: "begin other_goal"),
    lambda lines: lines[:-1],
    lambda lines: _drop_first(lines, "weight:"),
    lambda lines: _replace_first(lines, "remainder-interval:", lambda line: "remainder-interval: 1 ; 2"),
]


def test_mutated_certificates_fail_the_check():
    with tempfile.TemporaryDirectory() as tmp:
        problem, cert, status, _ = _prove(tmp)
        assert status == EXIT_PROVED
        header, blocks = _blocks(_read(cert))
        assert len(blocks) == 1
        assert len(MUTATIONS) == 20
        for number, mutate in enumerate(MUTATIONS):
            path = _write(tmp, f"mutant{number}.cert", _assemble(header, [mutate(blocks[0])]))
            status, out, err = _run(["check", path, problem])
            assert status != EXIT_PROVED, f"mutation {number} was accepted:\n{out}{err}"


def test_mutated_header_fails_the_check():
    with tempfile.TemporaryDirectory() as tmp:
        problem, cert, status, _ = _prove(tmp)
        assert status == EXIT_PROVED
        header, blocks = _blocks(_read(cert))
        unscaled = [line.replace("scale_pol=true", "scale_pol=false") for line in header]
        assert unscaled != header
        path = _write(tmp, "unscaled.cert", _assemble(unscaled, blocks))
        assert _run(["check", path, problem])[0] != EXIT_PROVED
        rehashed = _replace_first(header, "problem-hash:", lambda line: "problem-hash: " + "0" * 64)
        path = _write(tmp, "rehashed.cert", _assemble(rehashed, blocks))
        assert _run(["check", path, problem])[0] == EXIT_MISMATCH


ATAN_GOAL = "name: atan_goal\nobjective: atan(x1) + 0.01 >= 0\nbox: [0, 1]\noption check_certif = true\n"


def test_forged_goal_link_is_rejected():
    # a valid certificate of an easier goal, relabelled as the goal link of a transcendental problem
    with tempfile.TemporaryDirectory() as tmp:
        problem, cert, status, _ = _prove(tmp, ATAN_GOAL, "atan_goal")
        assert status == EXIT_PROVED
        status, _, _ = _run(["check", cert, problem])
        assert status == EXIT_PROVED
        easy_text = ATAN_GOAL.replace("atan(x1) + 0.01", "x1 + 1")
        _, easy_cert, status, _ = _prove(tmp, easy_text, "easy_goal")
        assert status == EXIT_PROVED
        header, blocks = _blocks(_read(cert))
        _, easy_blocks = _blocks(_read(easy_cert))
        goal = blocks[-1]
        forged = easy_blocks[-1]
        assert goal[0] == forged[0] == "begin atan_goal"
        real_derivation = next(line for line in goal if line.startswith("derivation:"))
        variants = [
            forged,
            _drop_first(forged, "derivation:"),
            _replace_first(forged, "derivation:", lambda line: real_derivation),
        ]
        for number, variant in enumerate(variants):
            path = _write(tmp, f"forged{number}.cert", _assemble(header, blocks[:-1] + [variant]))
            status, out, err = _run(["check", path, problem])
            assert status != EXIT_PROVED, f"forged goal {number} was accepted:\n{out}{err}"
        # dropping the enclosure links leaves the goal without the ranges it relies on
        path = _write(tmp, "bare_goal.cert", _assemble(header, [goal]))
        assert _run(["check", path, problem])[0] != EXIT_PROVED


def test_certificates_are_reproducible():
    with tempfile.TemporaryDirectory() as tmp:
        _, cert, status, _ = _prove(tmp, ATAN_GOAL, "atan_goal")
        assert status == EXIT_PROVED
        with open(cert, 'rb') as f:
            first = f.read()
        _, cert, status, _ = _prove(tmp, ATAN_GOAL, "atan_goal")
        assert status == EXIT_PROVED
        with open(cert, 'rb') as f:
            assert f.read() == first


def test_caprasse_certificates_are_byte_identical():
    if not RUN_SLOW:
        print("   (skipped: set NLCERT_RUN_SLOW=1)")
        return
    with tempfile.TemporaryDirectory() as tmp:
        problem = os.path.join(BENCH_DIR, "caprasse.nlc")
        outputs = []
        for run_dir in ("first", "second"):
            directory = os.path.join(tmp, run_dir)
            status, out, _ = _run(["prove", problem, "--output-dir", directory, "--quiet"])
            assert status == EXIT_PROVED, out
            with open(os.path.join(directory, "caprasse.cert"), 'rb') as f:
                outputs.append(f.read())
        assert outputs[0] == outputs[1]
        status, _, _ = _run(["check", os.path.join(tmp, "first", "caprasse.cert"), problem])
        assert status == EXIT_PROVED


def test_envelope_figure():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "atan.html")
        status, out, _ = _run(["envelope", "--function", "atan", "--interval", "-1", "1",
                               "--points", "-0.5", "0.5", "--output", path])
        assert status == EXIT_PROVED, out
        assert os.path.exists(path)


if __name__ == "__main__":
    sys.exit(run_test_functions(globals(), "Command-line tests"))
