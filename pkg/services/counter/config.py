"""
Configuration settings for the exemplar counting service
Loads from settings.yml with environment variable overrides, and reads /
writes the YAML train config files used by the CLI
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from loguru import logger
from pydantic import AliasChoices, BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import ConfigurationError
from models.config_models import TrainConfig


class Settings(BaseSettings):
    """Application settings with YAML and environment variable support"""

    model_config = SettingsConfigDict(
        env_prefix="COUNTER_", env_file=".env", case_sensitive=False, extra="ignore", populate_by_name=True
    )

    # Runtime
    threads: int = Field(
        default=1,
        ge=1,
        validation_alias=AliasChoices("COUNTER_THREADS", "MAFEA_THREADS"),
        description="Evaluation worker threads",
    )
    log_level: str = Field(default="INFO")
    precision: str = Field(default="float64", pattern="^(float64|float32)$")

    # Full YAML config (loaded dynamically)
    _yaml_config: Optional[Dict[str, Any]] = None

    def load_yaml_config(self, config_path: Optional[Path] = None) -> Dict[str, Any]:
        """
        Load configuration from settings.yml

        Args:
            config_path: Optional path to settings file

        Returns:
            Dictionary of configuration values
        """
        if config_path is None:
            config_path = Path(__file__).parent / "settings.yml"

        if not config_path.exists():
            logger.warning(f"Settings file not found: {config_path}, using defaults")
            self._yaml_config = {}
            return {}

        try:
            with open(config_path, "r", encoding="utf-8") as f:
                config = yaml.safe_load(f) or {}
                self._yaml_config = config
                logger.debug(f"Loaded configuration from {config_path}")
                return config
        except yaml.YAMLError as e:
            logger.error(f"Failed to load settings from {config_path}: {e}")
            self._yaml_config = {}
            return {}

    def get(self, key_path: str, default: Any = None) -> Any:
        """
        Get a configuration value using dot notation.

        Example: get("training.metrics_name") -> "metrics.jsonl"
        """
        if self._yaml_config is None:
            self.load_yaml_config()

        value: Any = self._yaml_config
        for key in key_path.split("."):
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default
        return value


# Global settings instance
settings = Settings()


# ============================================================================
# TRAIN CONFIG FILES
# ============================================================================

PathLike = Union[str, Path]


def parse_train_config(data: Dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigurationError(f"Invalid train config: {e}") from e


def load_train_config(path: PathLike) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Config file {path} is not valid YAML: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError(f"Config file {path} must hold a mapping at top level")
    config = parse_train_config(data)
    logger.debug(f"Loaded train config from {path}")
    return config


def dump_train_config(config: TrainConfig, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)


def _render_value(value: Any) -> str:
    # JSON scalars and flow lists are valid YAML
    return json.dumps(value)


def render_config_template(profile: str = "desk") -> str:
    """Commented YAML train config for one of the shipped profiles"""
    config = TrainConfig.profile(profile)
    lines = [
        "# " + "=" * 76,
        f"# Counter Train Configuration (profile: {profile})",
        "# " + "=" * 76,
        "# Sizes accept a single int (square) or [height, width].",
        "# Ablation graph: tbd requires bt, bt requires mrm.",
        "",
    ]
    for name, field in TrainConfig.model_fields.items():
        value = getattr(config, name)
        if isinstance(value, BaseModel):
            lines.append(f"# --- {name} ---")
            if field.description:
                lines.append(f"# {field.description}")
            lines.append(f"{name}:")
            for sub_name, sub_field in type(value).model_fields.items():
                rendered = _render_value(value.model_dump(mode="json")[sub_name])
                comment = f"  # {sub_field.description}" if sub_field.description else ""
                lines.append(f"  {sub_name}: {rendered}{comment}")
            lines.append("")
        else:
            comment = f"  # {field.description}" if field.description else ""
            lines.append(f"{name}: {_render_value(value)}{comment}")
    return "\n".join(lines) + "\n"
