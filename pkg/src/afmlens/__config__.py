#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

import logging
import os
from configparser import ConfigParser
from pathlib import Path

from . import ENCODING

logger = logging.getLogger(__name__)

CFGVARS = ConfigParser()

_GLOBALCFG = Path("/etc/afmlens.conf")
_USERCFG = Path.home() / ".local" / "afmlens.conf"

THREADS_ENV = "AFMLENS_THREADS"

_PIPELINE_DEFAULTS = {
    'target_quantile': '0.95',
    'bias': '0.5',
    'curvature_threshold': '0.5',
    'error_threshold': '0.15',
    'max_buckets': '20',
    'mean_buckets': '100',
    'min_bucket_samples': '10',
    'envelope_quantile': '0.95',
}
_SKETCH_DEFAULTS = {
    'compression': '100',
}
_RUNTIME_DEFAULTS = {
    'threads': '',
}

# Load defaults; read_cfg() overlays the config files.
CFGVARS['pipeline'] = _PIPELINE_DEFAULTS
CFGVARS['sketch'] = _SKETCH_DEFAULTS
CFGVARS['runtime'] = _RUNTIME_DEFAULTS


def read_cfg() -> None:
    """Read Configuration Files, the user file overriding the global one."""
    read = CFGVARS.read((_GLOBALCFG, _USERCFG), encoding=ENCODING)
    logger.debug("Configuration read from %s", read or "defaults")


def write_cfg(user: bool = False) -> Path:
    """Write a default Configuration File.

    Keyword Arguments:
        user (bool): Write to the home of the current user instead of /etc. (default: {False})

    Raises:
        FileExistsError: If the Configuration File already exists.

    Returns:
        Path: The Path the Configuration was written to.
    """
    cfg_path = _USERCFG if user else _GLOBALCFG
    if cfg_path.is_file():
        raise FileExistsError(f"'{str(cfg_path)}' already exists.")

    cfg = ConfigParser()
    cfg['pipeline'] = _PIPELINE_DEFAULTS
    cfg['sketch'] = _SKETCH_DEFAULTS
    cfg['runtime'] = _RUNTIME_DEFAULTS

    cfg_path.parent.mkdir(parents=True, exist_ok=True)
    with open(cfg_path, 'w', encoding=ENCODING) as configfile:
        cfg.write(configfile)
    print(f"Config File written to '{str(cfg_path)}'.")
    return cfg_path


def get_threads() -> int:
    """Return the worker count for parallel evaluations.

    The environment variable AFMLENS_THREADS takes precedence over the [runtime] section.

    Raises:
        ValueError: If the configured value is not a positive integer.

    Returns:
        int: The maximum number of worker threads.
    """
    raw = os.environ.get(THREADS_ENV) or CFGVARS.get('runtime', 'threads', fallback='')
    if not raw:
        return os.cpu_count() or 1
    threads = int(raw)
    if threads < 1:
        raise ValueError(f"Thread count must be positive, got {threads}.")
    return threads
