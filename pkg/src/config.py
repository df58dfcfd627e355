import configparser
import logging
import os
import sys
from dataclasses import dataclass, field

from src.errors import ConfigurationError

DEFAULT_BLOCK_SIZE = 1 << 20
DEFAULT_MEMORY_BUDGET = 256 << 20
DEFAULT_MAX_ITERATIONS = 100
RECOMMENDED_MIN_RHO = 0.8
BLOCK_SIZE_ENV = "ORFEL_BLOCK_SIZE"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

CONFIG_SECTIONS = ("preprocess", "detect", "gen", "inject", "eval", "bench")

logger = logging.getLogger(__name__)


def block_size_from_env(default=DEFAULT_BLOCK_SIZE):
    """Block size in bytes, honouring ORFEL_BLOCK_SIZE when set."""
    raw = os.environ.get(BLOCK_SIZE_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{BLOCK_SIZE_ENV}={raw!r} is not an integer") from exc
    if value <= 0:
        raise ConfigurationError(f"{BLOCK_SIZE_ENV} must be positive, got {value}")
    return value


def configure_logging(verbosity=0, quiet=False):
    if quiet:
        level = logging.WARNING
    elif verbosity > 0:
        level = logging.DEBUG
    else:
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger().setLevel(level)


def load_config_file(path):
    """Read an INI config file into {section: {key: raw string}}."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse config file {path}: {exc}") from exc
    unknown = [s for s in parser.sections() if s not in CONFIG_SECTIONS]
    if unknown:
        logger.warning("ignoring unknown config sections: %s", ", ".join(unknown))
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _coerce(raw, default):
    if isinstance(default, bool):
        lowered = str(raw).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        for cast in (int, float):
            try:
                return cast(raw)
            except ValueError:
                pass
    return raw


@dataclass
class RunConfig:
    """Fully resolved parameters of one CLI command."""

    command: str
    values: dict = field(default_factory=dict)

    @classmethod
    def resolve(cls, command, flags, file_values, defaults):
        """Flags override config-file values, which override defaults.

        `flags` holds parsed command-line values (None when not given);
        `defaults` also fixes the type each config-file value is coerced to.
        """
        file_values = file_values or {}
        resolved = {}
        for key, default in defaults.items():
            flag = flags.get(key)
            if flag is not None:
                resolved[key] = flag
            elif key in file_values:
                try:
                    resolved[key] = _coerce(file_values[key], default)
                except ValueError as exc:
                    raise ConfigurationError(
                        f"[{command}] {key}={file_values[key]!r}: {exc}"
                    ) from exc
            else:
                resolved[key] = default
        for key, flag in flags.items():
            if key not in resolved and flag is not None:
                resolved[key] = flag
        return cls(command, resolved)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def as_metadata(self):
        return {"command": self.command, **{k: _jsonable(v) for k, v in self.values.items()}}


def _jsonable(value):
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)
