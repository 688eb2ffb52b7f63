import logging
import os
import sys
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Optional

import yaml

from hybrid_ap.errors import ConfigError

logger = logging.getLogger()

# Handlers installed by the last Config, removed again when a new one is loaded
_installed_handlers: List[logging.Handler] = []


@dataclass(frozen=True)
class H2mpConfig:
    """Solver parameters shared by ap and h2mp.

    Raises:
        ConfigError: If a value is out of range.
    """

    damping: float = 0.5
    max_iter: int = 1000
    conv_window: int = 10
    lambda_image: float = 1.0
    lambda_tag: float = 1.0
    theta: float = -15.0
    log_every: int = 50

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise ConfigError(f"damping must lie in [0, 1), got {self.damping}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.conv_window < 1:
            raise ConfigError(
                f"conv_window must be at least 1, got {self.conv_window}"
            )
        if self.theta > 0:
            raise ConfigError(f"theta must be non-positive, got {self.theta}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be at least 1, got {self.log_every}")

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


class Config:
    """Creates a Config object from a YAML-encoded config file from a given filepath.

    Without a filepath every option takes its default value.
    """

    def __init__(self, filepath: Optional[str] = None):
        self.filepath = filepath
        self.config_dict: Dict[str, Any] = {}
        if filepath is not None:
            if not os.path.isfile(filepath):
                raise ConfigError(f"Config file '{filepath}' does not exist")

            with open(filepath) as file_stream:
                try:
                    self.config_dict = yaml.safe_load(file_stream.read()) or {}
                except yaml.YAMLError as e:
                    raise ConfigError(f"Config file '{filepath}' is not valid YAML: {e}")
            if not isinstance(self.config_dict, dict):
                raise ConfigError(f"Config file '{filepath}' must hold a mapping")

        self._parse_config_values()

    def _parse_config_values(self):
        """Read and validate each config option"""
        # Logging setup
        self.log_level = str(self._get_cfg(["logging", "level"], default="INFO"))
        self.file_logging_enabled = self._get_cfg(
            ["logging", "file_logging", "enabled"], default=False
        )
        self.file_logging_filepath = self._get_cfg(
            ["logging", "file_logging", "filepath"], default="hybrid_ap.log"
        )
        self.console_logging_enabled = self._get_cfg(
            ["logging", "console_logging", "enabled"], default=True
        )

        # Solver defaults, overridden later by command line flags
        self.solver: Dict[str, Any] = {}
        for name in H2mpConfig.field_names():
            value = self._get_cfg(["solver", name], required=False)
            if value is not None:
                self.solver[name] = value

        # Fail early on bad values
        self.solver_config()

    def setup_logging(self, level: Optional[str] = None):
        """Configure the root logger. Console output goes to stderr so results may
        be written to stdout."""
        formatter = logging.Formatter(
            "%(asctime)s | %(name)s [%(levelname)s] %(message)s"
        )

        for handler in _installed_handlers:
            logger.removeHandler(handler)
            handler.close()
        _installed_handlers.clear()

        try:
            logger.setLevel((level or self.log_level).upper())
        except ValueError:
            raise ConfigError(f"Unknown log level '{level or self.log_level}'")

        if self.file_logging_enabled:
            handler = logging.FileHandler(self.file_logging_filepath)
            handler.setFormatter(formatter)
            logger.addHandler(handler)
            _installed_handlers.append(handler)

        if self.console_logging_enabled:
            handler = logging.StreamHandler(sys.stderr)
            handler.setFormatter(formatter)
            logger.addHandler(handler)
            _installed_handlers.append(handler)

    def solver_config(self, **overrides: Any) -> H2mpConfig:
        """Build solver parameters: built-in defaults, then the config file's
        `solver` section, then `overrides` (ignoring None values).

        Raises:
            ConfigError: If a value has the wrong type or is out of range.
        """
        values = dict(self.solver)
        values.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(values) - set(H2mpConfig.field_names())
        if unknown:
            raise ConfigError(f"Unknown solver options: {', '.join(sorted(unknown))}")

        try:
            for name in ("max_iter", "conv_window", "log_every"):
                if name in values:
                    values[name] = int(values[name])
            for name in ("damping", "lambda_image", "lambda_tag", "theta"):
                if name in values:
                    values[name] = float(values[name])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid solver option: {e}")

        return H2mpConfig(**values)

    def _get_cfg(
        self,
        path: List[str],
        default: Optional[Any] = None,
        required: Optional[bool] = True,
    ) -> Any:
        """Get a config option from a path and option name, specifying whether it is
        required.

        Raises:
            ConfigError: If required is True and the object is not found (and there is
                no default value provided), a ConfigError will be raised.
        """
        # Sift through the the config until we reach our option
        config = self.config_dict
        for name in path:
            config = config.get(name) if isinstance(config, dict) else None

            # If at any point we don't get our expected option...
            if config is None:
                # Raise an error if it was required
                if required and default is None:
                    raise ConfigError(f"Config option {'.'.join(path)} is required")

                # or return the default value
                return default

        # We found the option. Return it.
        return config
