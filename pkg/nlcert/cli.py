"""
Command-line front end
nlcert prove <problem>     prove objective >= 0 over the box, write certificate and trace
nlcert check <cert> <problem>  exact re-check of a certificate file
nlcert envelope ...        HTML figure of a maxplus estimator hierarchy
"""
import argparse
import logging
import os
import sys
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

from nlcert import (ApproximationError, CertificateError, ConfigError, DimensionError, NlcertError,
                    ParseError, UnsupportedExpression, __version__)
from nlcert import expr as ex
from nlcert.cert import CheckReport, CheckVerdict, SosCertificate, check, read_certificate, write_certificate
from nlcert.domain import BoxDomain, Interval, tiles
from nlcert.driver import EnclosureClaim, VerdictStatus, rederive, solve
from nlcert.maxplus import envelope_figure
from utils.config_manager import Config, ConfigManager, config_manager, setup_logging
from utils.helpers import ensure_directory, format_bound, sha256_text
from utils.trace_writer import TraceWriter

cli_logger = logging.getLogger("nlcert.cli")

EXIT_PROVED = 0
EXIT_DISPROVED = 1
EXIT_INCONCLUSIVE = 2
EXIT_MALFORMED = 3
EXIT_MISMATCH = 4
EXIT_USAGE = 64

VERDICT_EXIT = {
    VerdictStatus.PROVED: EXIT_PROVED,
    VerdictStatus.DISPROVED: EXIT_DISPROVED,
    VerdictStatus.INCONCLUSIVE: EXIT_INCONCLUSIVE,
}


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 64"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_solver_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("solver options")
    group.add_argument("--relax-order", type=int, dest="relax_order",
                       help="relaxation order k (SOS degree at most 2k)")
    group.add_argument("--scale-pol", dest="scale_pol", action="store_true", default=None,
                       help="rescale the box to [0,1]^n before relaxing")
    group.add_argument("--no-scale-pol", dest="scale_pol", action="store_false")
    group.add_argument("--bound-squares", dest="bound_squares_variables", action="store_true", default=None,
                       help="add the redundant constraints 1 - x_i^2 >= 0 and x_i (1 - x_i) >= 0")
    group.add_argument("--check-certif", dest="check_certif", action="store_true", default=None,
                       help="extract and check exact rational certificates")
    group.add_argument("--no-check-certif", dest="check_certif", action="store_false")
    group.add_argument("--samp-iters", type=int, dest="samp_iters",
                       help="maximum number of maxplus iterations")
    group.add_argument("--bb", dest="bb", action="store_true", default=None,
                       help="subdivide inconclusive boxes")
    group.add_argument("--bb-depth", type=int, dest="bb_depth", help="subdivision depth limit")
    group.add_argument("--xconvert", dest="xconvert_variables", action="store_true", default=None,
                       help="replace sqrt(x_i) leaves by variables y_i with y_i^2 = x_i")
    group.add_argument("--denom-limit", type=int, dest="denom_limit",
                       help="denominator bound for rational rounding of Gram matrices")
    group.add_argument("--approx-mode", choices=["maxplus", "minimax"], dest="approx_mode")
    group.add_argument("--minimax-degree", type=int, dest="minimax_degree")
    group.add_argument("--samp-budget", type=int, dest="samp_budget", help="initial sample count")
    group.add_argument("--jobs", type=int, dest="jobs", help="parallel sub-boxes during subdivision")
    group.add_argument("--output-dir", dest="output_dir", help="directory for certificates and traces")


FLAG_NAMES = ("relax_order", "scale_pol", "bound_squares_variables", "check_certif", "samp_iters",
              "bb", "bb_depth", "xconvert_variables", "denom_limit", "approx_mode", "minimax_degree",
              "samp_budget", "jobs", "output_dir")


def build_parser() -> UsageParser:
    parser = UsageParser(prog="nlcert", description="Certified nonnegativity of nonlinear functions")
    parser.add_argument("--version", action="version", version=f"nlcert {__version__}")
    parser.add_argument("--config", help="path to a config.json (default: the repository's)")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", parser_class=UsageParser)

    prove = sub.add_parser("prove", help="prove objective >= 0 over the box")
    prove.add_argument("problem", help="problem file (.nlc)")
    prove.add_argument("--quiet", action="store_true", help="suppress the trace listing")
    _add_solver_flags(prove)

    check_cmd = sub.add_parser("check", help="re-check a certificate file against a problem")
    check_cmd.add_argument("certificate")
    check_cmd.add_argument("problem")

    envelope = sub.add_parser("envelope", help="plot a maxplus estimator hierarchy")
    envelope.add_argument("--function", required=True, help="atan, exp, log, sin or cos")
    envelope.add_argument("--interval", nargs=2, type=float, required=True, metavar=("M_LO", "M_HI"))
    envelope.add_argument("--points", nargs="+", type=float, required=True)
    envelope.add_argument("--output", default="envelope.html")
    return parser


def _manager(args) -> ConfigManager:
    return ConfigManager(args.config) if args.config else config_manager


def _read_text(path: str) -> str:
    with open(path, 'r', encoding='utf-8') as f:
        return f.read()


def problem_hash(problem: ex.Problem) -> str:
    return sha256_text(problem.to_text())


def _certificate_header(problem: ex.Problem, source: str, config: Config, status: str) -> Dict[str, str]:
    return {
        'name': problem.name,
        'problem-hash': problem_hash(problem),
        'source-hash': sha256_text(source),
        'options': config.header_text(),
        'status': status,
    }


def run_prove(args) -> int:
    manager = _manager(args)
    try:
        source = _read_text(args.problem)
        problem = ex.parse_problem(source)
        flags = {name: getattr(args, name) for name in FLAG_NAMES}
        config = manager.load_config(problem.options, flags)
    except OSError as e:
        print(f"nlcert: cannot read {args.problem}: {e}", file=sys.stderr)
        return EXIT_MALFORMED
    except (ParseError, DimensionError, ConfigError) as e:
        print(f"nlcert: {args.problem}: {e}", file=sys.stderr)
        return EXIT_MALFORMED

    output_dir = ensure_directory(config.output_dir)
    stem = os.path.splitext(os.path.basename(args.problem))[0]
    with TraceWriter(jsonl_path=os.path.join(output_dir, f"{stem}.trace.jsonl"), quiet=args.quiet) as writer:
        writer.start(problem, ex.to_text(problem.objective))
        verdict = solve(problem, config, on_iteration=writer.iteration)
        if verdict.certificates:
            path = os.path.join(output_dir, f"{stem}.cert")
            write_certificate(path, _certificate_header(problem, source, config, verdict.status.value),
                              verdict.certificates)
            writer.message("CERT", f"certificate chain of {len(verdict.certificates)} link(s) written to {path}")
        writer.verdict(verdict)
    return VERDICT_EXIT[verdict.status]


def _options_from_header(header: Dict[str, str]) -> Dict[str, str]:
    options = {}
    for item in header.get('options', '').split(','):
        if '=' in item:
            key, value = item.split('=', 1)
            options[key.strip()] = value.strip()
    return options


def _derivation_box(cert: SosCertificate, problem: ex.Problem) -> BoxDomain:
    text = cert.derivation.get('box')
    if not isinstance(text, str):
        raise CertificateError(f"link {cert.label} does not record the box it was derived on")
    try:
        box = ex.parse_box(text)
    except ParseError as e:
        raise CertificateError(f"link {cert.label}: {e}") from None
    if box.n != problem.n:
        raise CertificateError(f"link {cert.label} was derived on a {box.n}-dimensional box", mismatch=True)
    return box


def _claimed_link(pending: List[SosCertificate], box_text: str, claim: EnclosureClaim) -> Optional[SosCertificate]:
    for link in pending:
        d = link.derivation
        if d.get('box') == box_text and d.get('node') == claim.node and d.get('side') == claim.side:
            return link
    return None


def _rejected(label: str, message: str) -> CheckReport:
    cli_logger.warning("certificate %s rejected: %s", label, message)
    return CheckReport(CheckVerdict.REJECTED, None, None, 0.0, message, label)


def check_links(links: Sequence[SosCertificate], problem: ex.Problem, config: Config) -> List[CheckReport]:
    """Check a chain against POPs re-derived from the problem, never against the links' own data

    Each goal link (labelled with the problem name) is rebuilt from its
    recorded box, enclosures and control points; the enclosure links it relies
    on are rebuilt too. Goal boxes must tile the problem box, and a link no
    derivation asks for is rejected.
    """
    reports: List[CheckReport] = []
    goals = [c for c in links if c.label == problem.name]
    pending = [c for c in links if c.label != problem.name]
    boxes: List[BoxDomain] = []
    for cert in goals:
        box = _derivation_box(cert, problem)
        boxes.append(box)
        pop, claims = rederive(problem.with_box(box), cert.derivation, config)
        reports.append(check(cert, pop, pop.box, Fraction(0)))
        for claim in claims:
            link = _claimed_link(pending, box.to_text(), claim)
            if link is None:
                reports.append(_rejected(f"{problem.name}/{claim.node}-{claim.side}",
                                         f"no {claim.side} enclosure certificate for node {claim.node}"))
                continue
            pending.remove(link)
            reports.append(check(link, claim.pop, claim.pop.box, claim.threshold))
    if goals and not tiles(problem.box, boxes):
        reports.append(_rejected(problem.name, "goal certificates do not cover the problem box"))
    for link in pending:
        reports.append(_rejected(link.label, "link is not used by any goal derivation"))
    return reports


def run_check(args) -> int:
    try:
        certificate = read_certificate(args.certificate)
        problem = ex.load_problem(args.problem)
    except OSError as e:
        print(f"nlcert: {e}", file=sys.stderr)
        return EXIT_MALFORMED
    except (CertificateError, ParseError, DimensionError) as e:
        print(f"nlcert: malformed input: {e}", file=sys.stderr)
        return EXIT_MALFORMED

    if certificate.header.get('problem-hash') != problem_hash(problem):
        print(f"nlcert: certificate {args.certificate} was issued for a different problem", file=sys.stderr)
        return EXIT_MISMATCH
    try:
        config = Config().with_options(_options_from_header(certificate.header), source="certificate header")
        reports = check_links(certificate.links, problem, config)
    except CertificateError as e:
        print(f"nlcert: {e}", file=sys.stderr)
        return EXIT_MISMATCH if e.mismatch else EXIT_MALFORMED
    except (ConfigError, UnsupportedExpression) as e:
        print(f"nlcert: malformed certificate header: {e}", file=sys.stderr)
        return EXIT_MALFORMED

    goal_seen = False
    for report in reports:
        goal_seen = goal_seen or report.label == problem.name
        bound = format_bound(report.certified_bound) if report.certified_bound is not None else "-"
        print(f"[CERT] {report.label}: {report.verdict.value}, bound {bound}"
              + (f" ({report.message})" if report.message else ""))
    if not goal_seen:
        print(f"nlcert: no certificate for goal {problem.name}", file=sys.stderr)
        return EXIT_DISPROVED
    if all(r.verified for r in reports):
        print(f"Inequality {problem.name} verified")
        return EXIT_PROVED
    return EXIT_DISPROVED


def run_envelope(args) -> int:
    lo, hi = args.interval
    try:
        path = envelope_figure(args.function, Interval.outward(lo, hi, ulps=0), args.points, args.output)
    except ApproximationError as e:
        print(f"nlcert: {e}", file=sys.stderr)
        return EXIT_MALFORMED
    print(f"Envelope figure written to {path}")
    return EXIT_PROVED


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    setup_logging(_manager(args).section('logging'), args.log_level)
    handlers = {'prove': run_prove, 'check': run_check, 'envelope': run_envelope}
    try:
        return handlers[args.command](args)
    except NlcertError as e:
        cli_logger.error("%s failed: %s", args.command, e)
        print(f"nlcert: {e}", file=sys.stderr)
        return EXIT_MALFORMED


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
