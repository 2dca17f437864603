"""
Configuration manager for nlcert
Layered option loading: dataclass defaults < config.json < environment < problem file < flags
"""
import json
import logging
import logging.handlers
import os
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Optional

from nlcert import ConfigError

# Try to load python-dotenv for .env file support
try:
    from dotenv import load_dotenv
    load_dotenv()
    DOTENV_AVAILABLE = True
except ImportError:
    DOTENV_AVAILABLE = False

ENV_PREFIX = "NLCERT_"
APPROX_MODES = ("maxplus", "minimax")


@dataclass
class Config:
    """Solver options; names follow the option vocabulary of problem files"""
    relax_order: int = 2
    scale_pol: bool = True
    bound_squares_variables: bool = False
    check_certif: bool = True
    samp_iters: int = 3
    bb: bool = False
    bb_depth: int = 12
    xconvert_variables: bool = False
    denom_limit: int = 2 ** 20
    approx_mode: str = "maxplus"
    minimax_degree: int = 4
    sdp_gap_tol: float = 1e-8
    sdp_feas_tol: float = 1e-8
    sdp_max_iters: int = 200
    samp_budget: int = 256
    jobs: int = 1
    output_dir: str = "results"

    def validate(self) -> 'Config':
        for name in ("relax_order", "samp_iters", "bb_depth", "denom_limit", "minimax_degree",
                     "sdp_max_iters", "samp_budget", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"option {name} must be positive, got {getattr(self, name)}")
        for name in ("sdp_gap_tol", "sdp_feas_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"option {name} must be positive, got {getattr(self, name)}")
        if self.approx_mode not in APPROX_MODES:
            raise ConfigError(f"option approx_mode must be one of {', '.join(APPROX_MODES)}, "
                              f"got {self.approx_mode!r}")
        return self

    def with_options(self, options: Dict[str, Any], source: str = "options") -> 'Config':
        """Copy with string or typed overrides applied; unknown names raise ConfigError"""
        types = {f.name: f.type for f in fields(self)}
        updates = {}
        for name, value in options.items():
            key = name.strip().lower().replace('-', '_')
            if key == "check_certif_coq":
                key = "check_certif"
            if key not in types:
                raise ConfigError(f"unknown option '{name}' in {source}")
            updates[key] = _coerce(key, types[key], value)
        return replace(self, **updates).validate()

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def header_text(self) -> str:
        """Options that change the mathematics, in a fixed order (certificate header)"""
        keys = ("relax_order", "scale_pol", "bound_squares_variables", "xconvert_variables",
                "denom_limit", "approx_mode", "minimax_degree", "samp_iters")
        return ",".join(f"{k}={_render(getattr(self, k))}" for k in keys)


def _render(value: Any) -> str:
    return str(value).lower() if isinstance(value, bool) else str(value)


def _coerce(name: str, kind: Any, value: Any) -> Any:
    kind_name = kind if isinstance(kind, str) else getattr(kind, '__name__', str(kind))
    try:
        if kind_name == 'bool':
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("true", "1", "yes", "on"):
                return True
            if text in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        if kind_name == 'int':
            if isinstance(value, str) and '^' in value:
                base, exponent = value.split('^', 1)
                return int(base) ** int(exponent)
            return int(value)
        if kind_name == 'float':
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} for option {name}") from None


class ConfigManager:
    """Loads Config from config.json and NLCERT_* environment variables"""

    def __init__(self, config_path: Optional[str] = None):
        self.config_path = config_path or os.path.join(os.path.dirname(__file__), '..', 'config.json')
        self.settings: Dict[str, Any] = {}
        self.load_settings()

    def load_settings(self):
        """Read config.json once (missing file means built-in defaults)"""
        try:
            if os.path.exists(self.config_path):
                with open(self.config_path, 'r', encoding='utf-8') as f:
                    self.settings = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"could not read {self.config_path}: {e}") from None

    def section(self, name: str) -> Dict[str, Any]:
        return dict(self.settings.get(name, {}))

    def load_from_config_file(self, config: Config) -> Config:
        solver = self.section('solver_settings')
        output_dir = self.section('output').get('directory')
        if output_dir:
            solver['output_dir'] = output_dir
        return config.with_options(solver, source=os.path.basename(self.config_path))

    def load_from_environment(self, config: Config) -> Config:
        """NLCERT_<OPTION> variables override config.json"""
        overrides = {}
        for f in fields(config):
            value = os.getenv(ENV_PREFIX + f.name.upper())
            if value is not None and value != "":
                overrides[f.name] = value
        return config.with_options(overrides, source="environment") if overrides else config

    def load_config(self, problem_options: Optional[Dict[str, str]] = None,
                    flags: Optional[Dict[str, Any]] = None) -> Config:
        config = self.load_from_config_file(Config())
        config = self.load_from_environment(config)
        # one pass so a flag can repair an invalid problem-file option
        merged = dict(problem_options or {})
        merged.update({k: v for k, v in (flags or {}).items() if v is not None})
        if merged:
            config = config.with_options(merged, source="problem file or command line")
        return config.validate()


def setup_logging(settings: Optional[Dict[str, Any]] = None, level: Optional[str] = None) -> logging.Logger:
    """Configure the nlcert logger tree once: stderr plus optional rotating file"""
    settings = settings or {}
    logger = logging.getLogger("nlcert")
    level_name = (level or os.getenv(ENV_PREFIX + "LOG_LEVEL") or settings.get('level', 'WARNING')).upper()
    logger.setLevel(getattr(logging, level_name, logging.WARNING))
    if getattr(logger, '_nlcert_configured', False):
        return logger
    formatter = logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s")
    stream = logging.StreamHandler()
    stream.setFormatter(formatter)
    logger.addHandler(stream)
    log_file = settings.get('file')
    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        rotating = logging.handlers.RotatingFileHandler(
            log_file, maxBytes=int(settings.get('max_size_mb', 10)) * 1024 * 1024,
            backupCount=int(settings.get('backup_count', 3)), encoding='utf-8')
        rotating.setFormatter(formatter)
        logger.addHandler(rotating)
    logger.propagate = False
    logger._nlcert_configured = True
    return logger


# Global config manager instance
config_manager = ConfigManager()
