import os
import yaml
from pathlib import Path
from typing import Optional, Union

from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.models.schemas import EngineConfig
from app.utils.exceptions import ConfigError

load_dotenv()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Configurações da aplicação
    APP_NAME: str = "MoaRouter"
    ENVIRONMENT: str = os.getenv("ENVIRONMENT", "development")
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"

    # Motor (pool, roteamento, backends) e checkpoint do scorer
    ENGINE_CONFIG_PATH: str = os.getenv("ENGINE_CONFIG_PATH", "config/engine.example.yaml")
    SCORER_PATH: Optional[str] = os.getenv("SCORER_PATH")

    # Cliente chat-completions
    LLM_BASE_URL: str = os.getenv("LLM_BASE_URL", "https://openrouter.ai/api/v1")
    LLM_API_KEY_ENV: str = "LLM_API_KEY"
    HTTP_TIMEOUT_CONNECT: float = 10.0
    HTTP_TIMEOUT_READ: float = 120.0
    HTTP_MAX_RETRIES: int = 2
    HTTP_BACKOFF_SECONDS: float = 1.0

    # Fan-out por camada
    MAX_IN_FLIGHT: int = int(os.getenv("MAX_IN_FLIGHT", "8"))

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_DIR: str = os.getenv("LOG_DIR", "logs")
    LOG_TO_FILE: bool = True
    SLOW_OPERATION_MS: float = 1000.0

    # API
    API_PREFIX: str = "/api"
    API_VERSION: str = "v1"

    # CORS
    CORS_ORIGINS: str = os.getenv("CORS_ORIGINS", "*")


settings = Settings()


def load_engine_config(path: Union[str, Path]) -> EngineConfig:
    """Lê e valida o arquivo YAML do motor.

    Caminhos relativos de checkpoint são resolvidos a partir do diretório
    do próprio arquivo de configuração.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Arquivo de configuração não encontrado: {path}")

    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (yaml.YAMLError, UnicodeDecodeError) as e:
        raise ConfigError(f"YAML inválido em {path}: {e}") from e

    try:
        config = EngineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Configuração inválida em {path}: {e}") from e

    checkpoint = config.scorer.checkpoint
    if checkpoint and not Path(checkpoint).is_absolute():
        resolved = str((path.parent / checkpoint).resolve())
        config = config.model_copy(
            update={"scorer": config.scorer.model_copy(update={"checkpoint": resolved})}
        )

    return config
