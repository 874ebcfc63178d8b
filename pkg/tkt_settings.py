"""
Project Settings
Built-in defaults, config.yaml loading and logging setup
"""

import copy
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

logger = logging.getLogger(__name__)

DEFAULT_SETTINGS_PATH = "config.yaml"


def _default_settings() -> Dict[str, Any]:
    """Defaults used when config.yaml is absent or leaves a key out"""
    return {
        "mining": {"k": 2, "absolute_clock": True, "dump_stages": False},
        "guards": {"config_id": "M1"},
        "evaluation": {
            "folds": 10,
            "repetitions": 5,
            "extractions": 10,
            "fractions": [1.0],
            "seed": 0,
            "n_jobs": 1,
        },
        "generation": {"seed": 0, "traces": 100},
        "logging": {
            "level": "INFO",
            "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        },
    }


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(config_path: Optional[str] = None) -> Dict[str, Any]:
    """Defaults overlaid with the YAML settings file, when it can be read"""
    settings = _default_settings()
    path = Path(config_path or DEFAULT_SETTINGS_PATH)
    if not path.exists():
        if config_path:
            logger.warning(f"Settings file not found: {path}; using defaults")
        return settings

    try:
        with open(path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ValueError("top level must be a mapping")
        settings = _deep_merge(settings, loaded)
        logger.debug(f"Settings loaded from {path}")
    except (OSError, ValueError, yaml.YAMLError) as e:
        logger.warning(f"Failed to load settings from {path}: {e}")
        logger.info("Using default settings")
    return settings


def setup_logging(settings: Dict[str, Any], level: Optional[str] = None) -> None:
    options = settings.get("logging", {})
    logging.basicConfig(
        level=getattr(logging, (level or options.get("level", "INFO")).upper(), logging.INFO),
        format=options.get("format", _default_settings()["logging"]["format"]),
    )
