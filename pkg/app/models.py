from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ColorSpace(str, Enum):
    RGB = "RGB"
    LAB = "Lab"
    YUV = "YUV"
    XYZ = "XYZ"
    HSV = "HSV"


class MetricName(str, Enum):
    PRI = "pri"
    VOI = "voi"
    GFM = "gfm"


class BoundaryCoding(str, Enum):
    ADAPTIVE = "adaptive"  # código de diferencias contra el prior
    FREEMAN = "freeman"  # 3 bits por código


class StageEvent(str, Enum):
    MERGE = "merge"
    DESCEND = "descend"
    STOP = "stop"


class CodingParams(BaseModel):
    """Parámetros de las funciones de longitud de código con pérdida"""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(gt=0)
    window_size: int = Field(ge=1)
    dimension: int = Field(ge=1)

    @field_validator("window_size")
    @classmethod
    def _ventana_impar(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"window_size debe ser impar, no {value}")
        return value


class ChainCodePrior(BaseModel):
    """Probabilidades a priori de los 8 códigos de diferencia (orden 0..7)"""

    model_config = ConfigDict(frozen=True)

    probabilities: List[float] = Field(min_length=8, max_length=8)

    @field_validator("probabilities")
    @classmethod
    def _distribucion_valida(cls, value: List[float]) -> List[float]:
        if any(p < 0 for p in value):
            raise ValueError(f"probabilidades negativas en el prior: {value}")
        if abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"el prior debe sumar 1, suma {sum(value)}")
        return value

    @classmethod
    def normalized(cls, values) -> "ChainCodePrior":
        """Crea un prior dividiendo por la suma (los archivos guardan 3 decimales)"""
        total = float(sum(values))
        if total <= 0:
            raise ValueError("el prior no puede tener masa total cero")
        return cls(probabilities=[float(v) / total for v in values])


class StageLogEntry(BaseModel):
    step: int
    event: StageEvent
    window: int
    pair: Optional[Tuple[int, int]] = None
    gain: Optional[float] = None
    regions: int
    bits_total: Optional[float] = None


class SegmentationReport(BaseModel):
    """Resumen de una segmentación: longitud de código total y su desglose"""

    epsilon: float
    w_schedule: List[int]
    merges: int = 0
    regions: int
    bits_texture: float
    bits_boundary: float
    bits_total: float
    boundary_coding: BoundaryCoding = BoundaryCoding.ADAPTIVE
    degenerate_regions: int = 0
    stage_log: List[StageLogEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _total_consistente(self):
        esperado = self.bits_texture + 0.5 * self.bits_boundary
        if abs(self.bits_total - esperado) > 1e-6 * max(1.0, abs(esperado)):
            raise ValueError(
                f"bits_total={self.bits_total} no coincide con textura + ½·borde = {esperado}"
            )
        return self


class MetricResult(BaseModel):
    name: MetricName
    value: float
    per_ground_truth: List[float] = Field(default_factory=list)  # en GFM, el recall de cada referencia
    precision: Optional[float] = None  # solo GFM
    recall: Optional[float] = None  # solo GFM


class ContrastFeatures(BaseModel):
    """Desvío estándar de la intensidad a 4 escalas"""

    model_config = ConfigDict(frozen=True)

    values: List[float] = Field(min_length=4, max_length=4)

    @field_validator("values")
    @classmethod
    def _no_negativos(cls, value: List[float]) -> List[float]:
        if any(v < 0 for v in value):
            raise ValueError(f"features de contraste negativas: {value}")
        return value


class DiscrepancyFit(BaseModel):
    """Ajuste d(ε) ≈ a·ε² + b·ε + c de una imagen de entrenamiento"""

    a: float
    b: float
    c: float
    samples: List[Tuple[float, float]] = Field(default_factory=list)

    @field_validator("a")
    @classmethod
    def _convexo(cls, value: float) -> float:
        if value <= 0:
            raise ValueError(f"el ajuste debe ser convexo (a > 0), a={value}")
        return value

    @property
    def vertex(self) -> float:
        return -self.b / (2.0 * self.a)


DEFAULT_SCALES = [1.0, 0.5, 0.25, 0.125]
DEFAULT_CLAMP = (25.0, 400.0)


class EpsilonRegressor(BaseModel):
    """Modelo lineal ε(f) = θᵀf; se persiste tal cual como JSON"""

    theta: List[float] = Field(min_length=4, max_length=4)
    scales: List[float] = Field(default_factory=lambda: list(DEFAULT_SCALES))
    clamp: Tuple[float, float] = DEFAULT_CLAMP
    metric: MetricName = MetricName.PRI
    trained_on: int = 0

    @field_validator("clamp")
    @classmethod
    def _rango_valido(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if value[0] > value[1]:
            raise ValueError(f"rango de clamp invertido: {value}")
        return value


class ImageBenchmark(BaseModel):
    id: str
    epsilon: Optional[float] = None
    pri: Optional[float] = None
    voi: Optional[float] = None
    gfm: Optional[float] = None
    bits: Optional[float] = None
    regions: Optional[int] = None
    seconds: Optional[float] = None
    ground_truths: int = 0


class BenchmarkSummary(BaseModel):
    images: List[ImageBenchmark]
    aggregate: Dict[str, float] = Field(default_factory=dict)
    human: Optional[Dict[str, float]] = None


class ColorSpaceScore(BaseModel):
    colorspace: ColorSpace
    scale_factor: float
    mean_bits: float
    rank: int
