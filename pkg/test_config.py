#!/usr/bin/env python3
"""
Configuration tests: option layering, coercion and the trace writer
"""
import io
import json
import os
import sys
import tempfile

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from nlcert import ConfigError
from nlcert import expr as ex
from nlcert.driver import solve
from utils.config_manager import Config, ConfigManager
from utils.helpers import run_test_functions
from utils.trace_writer import TraceWriter, trace_frame


def _manager(tmp: str, settings: dict) -> ConfigManager:
    path = os.path.join(tmp, 'config.json')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(settings, f)
    return ConfigManager(path)


def test_defaults_are_valid():
    config = Config().validate()
    assert config.relax_order == 2 and config.check_certif
    assert config.denom_limit == 2 ** 20


def test_option_strings_are_coerced():
    config = Config().with_options({'denom_limit': '2^30', 'check_certif_coq': 'false', 'scale-pol': 'no',
                                    'sdp_gap_tol': '1e-6'})
    assert config.denom_limit == 2 ** 30
    assert config.check_certif is False and config.scale_pol is False
    assert config.sdp_gap_tol == 1e-6


def test_invalid_options_are_rejected():
    for options in ({'no_such_option': '1'}, {'approx_mode': 'taylor'}, {'relax_order': '0'},
                    {'bb': 'maybe'}, {'samp_iters': 'three'}):
        try:
            Config().with_options(options)
            raise AssertionError(f"expected ConfigError for {options}")
        except ConfigError:
            pass


def test_layering_order():
    with tempfile.TemporaryDirectory() as tmp:
        manager = _manager(tmp, {'solver_settings': {'relax_order': 3, 'samp_iters': 5},
                                 'output': {'directory': 'out'}})
        config = manager.load_config()
        assert config.relax_order == 3 and config.output_dir == 'out'
        previous = os.environ.get('NLCERT_SAMP_ITERS')
        os.environ['NLCERT_SAMP_ITERS'] = '7'
        try:
            assert manager.load_config().samp_iters == 7
            config = manager.load_config({'samp_iters': '2'}, {'relax_order': 1, 'bb': None})
            assert config.samp_iters == 2 and config.relax_order == 1 and config.bb is False
        finally:
            if previous is None:
                del os.environ['NLCERT_SAMP_ITERS']
            else:
                os.environ['NLCERT_SAMP_ITERS'] = previous


def test_flag_repairs_problem_option():
    with tempfile.TemporaryDirectory() as tmp:
        manager = _manager(tmp, {})
        assert manager.load_config({'relax_order': '0'}, {'relax_order': 2}).relax_order == 2


def test_unreadable_config_file():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'config.json')
        with open(path, 'w', encoding='utf-8') as f:
            f.write("{ not json")
        try:
            ConfigManager(path)
            raise AssertionError("expected ConfigError")
        except ConfigError:
            pass


def test_header_text_is_stable():
    text = Config().header_text()
    assert text.startswith("relax_order=2,scale_pol=true,")
    assert "check_certif" not in text
    assert Config().with_options({'relax_order': 3}).header_text() != text


def test_trace_writer_listing():
    problem = ex.parse_problem("(x1 - x2)^2 + 0.1 >= 0 on [-1, 1]^2")
    stream = io.StringIO()
    with TraceWriter(stream=stream) as writer:
        writer.start(problem, ex.to_text(problem.objective))
        verdict = solve(problem, Config(check_certif=False), on_iteration=writer.iteration)
        writer.verdict(verdict)
    listing = stream.getvalue()
    assert listing.startswith("Proving that")
    assert "Inequality goal verified" in listing
    assert [r['event'] for r in writer.records] == ['start', 'iteration', 'verdict']
    assert len(trace_frame(writer.records)) == 1


def test_quiet_writer_still_records():
    stream = io.StringIO()
    writer = TraceWriter(stream=stream, quiet=True)
    writer.message("CERT", "nothing to say")
    assert stream.getvalue() == ""
    writer.close()


if __name__ == "__main__":
    sys.exit(run_test_functions(globals(), "Configuration tests"))
