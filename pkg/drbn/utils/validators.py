"""
Input validation helpers and the validated run configuration.
Key=value config files feed argparse defaults; flags given on the command
line win over file values.
"""

from pathlib import Path
from typing import Optional

from dotenv import dotenv_values
from dotenv.parser import parse_stream
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from drbn.config.settings import file_settings
from drbn.core.errors import ConfigError

DATA_SOURCES = ("mnist", "idx", "images")
BINARIZE_MODES = ("threshold", "bernoulli")


def normalize_key(key: str) -> str:
    """`--learning-rate`, `learning-rate` and `learning_rate` all map to `learning_rate`."""
    return key.strip().lstrip("-").replace("-", "_").lower()


def load_config_file(path: Path) -> dict[str, str]:
    """
    Read a `key=value` file with python-dotenv: `#` comments, blank lines,
    single or double quotes and `export` prefixes behave as in a `.env` file.
    Keys are normalized; a malformed line or a key without a value raises
    ConfigError naming the line.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with path.open(encoding="utf-8") as stream:
        for binding in parse_stream(stream):
            if binding.error:
                text = binding.original.string.strip()
                raise ConfigError(f"{path}:{binding.original.line}: expected key=value, got '{text}'")
            if binding.key is not None and binding.value is None:
                raise ConfigError(f"{path}:{binding.original.line}: '{binding.key}' has no value")
    values: dict[str, str] = {}
    for key, value in dotenv_values(path, interpolate=False, encoding="utf-8").items():
        name = normalize_key(key)
        if not name:
            raise ConfigError(f"{path}: empty key '{key}'")
        values[name] = value.strip()
    return values


def pydantic_errors(exc: ValidationError) -> str:
    """One-line summary of a pydantic ValidationError."""
    return "; ".join(
        f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors()
    )


def build_model(model_cls: type[BaseModel], **values) -> BaseModel:
    """Instantiate a pydantic config, turning validation failures into ConfigError."""
    try:
        return model_cls(**{k: v for k, v in values.items() if v is not None})
    except ValidationError as exc:
        raise ConfigError(f"invalid {model_cls.__name__}: {pydantic_errors(exc)}") from exc


class RunConfig(BaseModel):
    """Dataset, architecture and output settings shared by the commands."""
    model_config = ConfigDict(frozen=True)

    data: Optional[str] = None
    data_source: Optional[str] = None
    arch: Optional[str] = None
    output_dir: Path = file_settings.OUTPUT_DIR
    seed: Optional[int] = Field(default=None, ge=0)
    binarize: str = "threshold"
    threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    limit: Optional[int] = Field(default=None, ge=1)
    image_size: int = Field(default=32, ge=1)

    @field_validator("data_source")
    @classmethod
    def _known_source(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and value not in DATA_SOURCES:
            raise ValueError(f"must be one of {', '.join(DATA_SOURCES)}")
        return value

    @field_validator("binarize")
    @classmethod
    def _known_mode(cls, value: str) -> str:
        if value not in BINARIZE_MODES:
            raise ValueError(f"must be one of {', '.join(BINARIZE_MODES)}")
        return value

    def require_seed(self, command: str) -> int:
        if self.seed is None:
            raise ConfigError(f"{command} requires --seed")
        return self.seed
