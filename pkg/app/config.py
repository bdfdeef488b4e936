"""
Configuración del proyecto leída desde variables de entorno (.env).

En desarrollo se usa el archivo .env local; en cualquier otro entorno
basta con exportar las variables TBES_*.
"""

import logging
import os
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from services.errors import ConfigError

load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class Settings(BaseModel):
    """Valores por defecto de la línea de comandos y del harness"""

    model_config = ConfigDict(frozen=True)

    jobs: int = Field(default=1, ge=1)
    w_max: int = Field(default=7, ge=1)
    pca_dim: int = Field(default=8, ge=1)
    grid_cell: int = Field(default=16, ge=1)
    prior_path: Optional[str] = None
    log_level: str = "INFO"
    log_file: Optional[str] = None

    @field_validator("w_max")
    @classmethod
    def _w_max_impar(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"el tamaño de ventana debe ser impar, no {value}")
        return value


_ENV_VARS = {
    "jobs": "TBES_JOBS",
    "w_max": "TBES_WMAX",
    "pca_dim": "TBES_PCA_DIM",
    "grid_cell": "TBES_GRID_CELL",
    "prior_path": "TBES_PRIOR_PATH",
    "log_level": "TBES_LOG_LEVEL",
    "log_file": "TBES_LOG_FILE",
}


def load_settings() -> Settings:
    """
    Construye Settings a partir del entorno.

    Returns:
        Settings validados

    Raises:
        ConfigError: si alguna variable tiene un valor inválido
    """
    valores = {}
    for campo, variable in _ENV_VARS.items():
        valor = os.getenv(variable)
        if valor is not None and valor.strip() != "":
            valores[campo] = valor.strip()

    try:
        return Settings(**valores)
    except ValidationError as e:
        campo = e.errors()[0]["loc"][0]
        raise ConfigError(
            f"Valor inválido en {_ENV_VARS.get(campo, campo)}: {e.errors()[0]['msg']}"
        ) from e


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return load_settings()


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """
    Configura el logging raíz: stderr siempre, archivo si TBES_LOG_FILE está definido.
    """
    settings = get_settings()
    handlers = [logging.StreamHandler()]
    archivo = log_file or settings.log_file
    if archivo:
        handlers.append(logging.FileHandler(archivo))

    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
