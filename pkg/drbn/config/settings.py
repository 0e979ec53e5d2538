"""
Application settings loaded from environment variables.
All configuration is centralized here; validated run configs (TrainConfig,
HeadConfig, RunConfig) take their defaults from these singletons.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load .env from project root
load_dotenv(dotenv_path=Path(__file__).resolve().parents[2] / ".env")


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, default))


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, default))


class AppSettings:
    """Core application settings."""

    NAME: str = os.getenv("APP_NAME", "drbn-lab")
    ENV: str = os.getenv("APP_ENV", "development")


class ComputeSettings:
    """Numeric precision and threading."""

    DTYPE: str = os.getenv("DRBN_DTYPE", "float64")          # float64 | float32
    THREADS: int = _env_int("DRBN_THREADS", 0)               # 0 = library default


class TrainSettings:
    """Joint PCD training defaults: PCD(5, 100) with minibatch 100."""

    K: int = _env_int("DRBN_K", 5)
    PARTICLES: int = _env_int("DRBN_PARTICLES", 100)
    BATCH: int = _env_int("DRBN_BATCH", 100)
    EPOCHS: int = _env_int("DRBN_EPOCHS", 10)
    LR: float = _env_float("DRBN_LR", 1e-3)
    FINETUNE_LR: float = _env_float("DRBN_FINETUNE_LR", 1e-4)
    BETA1: float = _env_float("DRBN_BETA1", 0.9)
    BETA2: float = _env_float("DRBN_BETA2", 0.999)
    EPSILON: float = _env_float("DRBN_EPSILON", 1e-8)
    INIT_STD: float = _env_float("DRBN_INIT_STD", 0.01)
    EVAL_EVERY: int = _env_int("DRBN_EVAL_EVERY", 100)
    SAMPLE_EVERY: int = _env_int("DRBN_SAMPLE_EVERY", 1000)
    CHECKPOINT_EVERY: int = _env_int("DRBN_CHECKPOINT_EVERY", 0)


class GenerateSettings:
    """Image generation defaults."""

    STEPS: int = _env_int("DRBN_GEN_STEPS", 10000)
    COUNT: int = _env_int("DRBN_GEN_COUNT", 100)
    GRID_COLS: int = _env_int("DRBN_GRID_COLS", 10)


class SemisupSettings:
    """Semi-supervised evaluation protocol."""

    HEAD_EPOCHS: int = _env_int("DRBN_HEAD_EPOCHS", 100)
    FINETUNE_EPOCHS: int = _env_int("DRBN_FINETUNE_EPOCHS", 30)
    HEAD_BATCH: int = _env_int("DRBN_HEAD_BATCH", 100)
    RUNS: int = _env_int("DRBN_SEMISUP_RUNS", 10)
    VALIDATION_SIZE: int = _env_int("DRBN_VALIDATION_SIZE", 10000)
    LABEL_BUDGETS: tuple[int, ...] = tuple(
        int(x) for x in os.getenv("DRBN_LABEL_BUDGETS", "600,3000,6000").split(",")
    )


class FileSettings:
    """Input and output locations."""

    BASE_DIR: Path = Path(__file__).resolve().parents[2]
    OUTPUT_DIR: Path = BASE_DIR / os.getenv("OUTPUT_DIR", "outputs")
    DATA_DIR: Path = BASE_DIR / os.getenv("DATA_DIR", "data")
    LOG_DIR: Path = BASE_DIR / os.getenv("LOG_DIR", "logs")


class LogSettings:
    """Logging configuration."""

    LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    DIR: str = os.getenv("LOG_DIR", "logs")
    ROTATION: str = os.getenv("LOG_ROTATION", "10 MB")
    RETENTION: str = os.getenv("LOG_RETENTION", "30 days")


# ─── Singleton Instances ──────────────────────────────────────────────────────
app_settings = AppSettings()
compute_settings = ComputeSettings()
train_settings = TrainSettings()
generate_settings = GenerateSettings()
semisup_settings = SemisupSettings()
file_settings = FileSettings()
log_settings = LogSettings()
