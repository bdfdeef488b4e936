"""
Selección adaptativa de la distorsión ε.

Por imagen de entrenamiento se muestrea la discrepancia d(ε) contra las
segmentaciones humanas, se ajusta una parábola convexa y se resuelve en
forma cerrada la regresión lineal ε(f) = θᵀf sobre features de contraste.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial
from pydantic import ValidationError
from scipy import linalg
from skimage.measure import block_reduce

from app.models import (
    DEFAULT_SCALES,
    BoundaryCoding,
    ChainCodePrior,
    ContrastFeatures,
    DiscrepancyFit,
    EpsilonRegressor,
    MetricName,
)
from services.boundary_coding import BSD_PRIOR
from services.errors import NonConvexFitError, TrainingError
from services.features import FeatureField, build_feature_fields
from services.imagecore import RasterImage, luminance
from services.label_io import LabelMap
from services.metrics import evaluate
from services.segmenter import as_lab, grid_superpixels, tbes_segment, window_schedule

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Sample = Tuple[float, float]

EPSILON_GRID = [float(e) for e in range(25, 401, 25)]
DEFAULT_RIDGE = 1e-8
_CONVEXITY_TOLERANCE = 1e-9


# ----------------------------------------------------------------------------
# Features de contraste
# ----------------------------------------------------------------------------
def contrast_features(img: RasterImage, scales: Sequence[float] = DEFAULT_SCALES) -> ContrastFeatures:
    """
    Desvío estándar del canal L a cada escala (reducción por promedio de bloques).

    Para el factor 1/k la imagen se recorta a un múltiplo de k y cada bloque
    k×k se reemplaza por su media.
    """
    gris = luminance(img)
    valores = []
    for escala in scales:
        k = max(1, int(round(1.0 / escala)))
        alto, ancho = (gris.shape[0] // k) * k, (gris.shape[1] // k) * k
        if alto == 0 or ancho == 0:
            valores.append(0.0)
            continue
        reducida = gris[:alto, :ancho] if k == 1 else block_reduce(gris[:alto, :ancho], (k, k), np.mean)
        valores.append(float(np.std(reducida)))
    return ContrastFeatures(values=valores)


# ----------------------------------------------------------------------------
# Discrepancia
# ----------------------------------------------------------------------------
def discrepancy(test: LabelMap, truths: Sequence[LabelMap], metric: MetricName) -> float:
    """1 − PRI, VOI o 1 − GFM"""
    metric = MetricName(metric)
    valor = evaluate(test, truths, [metric])[metric].value
    return valor if metric == MetricName.VOI else 1.0 - valor


def sample_discrepancy(
    img: RasterImage,
    ground_truths: Sequence[LabelMap],
    metric: MetricName = MetricName.PRI,
    grid: Sequence[float] = EPSILON_GRID,
    superpixels: Optional[LabelMap] = None,
    w_max: int = 7,
    dimension: int = 8,
    grid_cell: int = 16,
    prior: ChainCodePrior = BSD_PRIOR,
    coding: BoundaryCoding = BoundaryCoding.ADAPTIVE,
    fields: Optional[Dict[int, FeatureField]] = None,
) -> List[Sample]:
    """
    Segmenta con cada ε de la grilla y mide la discrepancia contra las referencias.

    Returns:
        Pares (ε, d) en orden ascendente de ε
    """
    if not ground_truths:
        raise TrainingError("sample_discrepancy necesita segmentaciones de referencia")
    if superpixels is None:
        superpixels = grid_superpixels(img, grid_cell)
    if fields is None:
        fields = build_feature_fields(as_lab(img), window_schedule(w_max), dimension)

    muestras = []
    for epsilon in sorted(float(e) for e in grid):
        labels, _ = tbes_segment(
            img, superpixels, epsilon, w_max, dimension, prior, coding, fields=fields
        )
        d = discrepancy(labels, ground_truths, metric)
        logger.debug(f"ε={epsilon:g}: d={d:.4f} ({labels.num_regions} regiones)")
        muestras.append((epsilon, d))
    return muestras


def fit_quadratic(samples: Sequence[Sample]) -> DiscrepancyFit:
    """
    Ajuste por mínimos cuadrados de d(ε) ≈ a·ε² + b·ε + c.

    Raises:
        ValueError: menos de 3 muestras
        NonConvexFitError: a <= 0 (relativo a la escala de los datos)
    """
    if len(samples) < 3:
        raise ValueError(f"se necesitan al menos 3 muestras, hay {len(samples)}")
    eps = np.array([s[0] for s in samples], dtype=np.float64)
    d = np.array([s[1] for s in samples], dtype=np.float64)

    coef = Polynomial.fit(eps, d, 2).convert().coef
    coef = np.pad(coef, (0, 3 - coef.size))
    c, b, a = (float(v) for v in coef)

    span = float(eps.max() - eps.min())
    if a * span ** 2 <= _CONVEXITY_TOLERANCE * max(1.0, float(np.abs(d).max())):
        raise NonConvexFitError(f"ajuste no convexo: a={a:.3e}")
    return DiscrepancyFit(a=a, b=b, c=c, samples=[(float(x), float(y)) for x, y in samples])


def optimal_epsilon(samples: Sequence[Sample]) -> float:
    """ε de la grilla con menor discrepancia (el menor ε en caso de empate)"""
    if not samples:
        raise ValueError("no hay muestras")
    return float(min(samples, key=lambda s: (s[1], s[0]))[0])


# ----------------------------------------------------------------------------
# Regresión
# ----------------------------------------------------------------------------
def _feature_matrix(features: Sequence[ContrastFeatures]) -> np.ndarray:
    return np.array([f.values for f in features], dtype=np.float64)


def train_regressor(
    fits: Sequence[DiscrepancyFit],
    features: Sequence[ContrastFeatures],
    ridge: float = DEFAULT_RIDGE,
    metric: MetricName = MetricName.PRI,
) -> EpsilonRegressor:
    """
    θ = −½·(Σ a_k f_k f_kᵀ + ridge·I)⁻¹ · Σ b_k f_k

    Minimiza Σ_k a_k(θᵀf_k)² + b_k(θᵀf_k) + c_k + ridge·‖θ‖².

    Raises:
        TrainingError: sin ajustes o listas de distinto largo
    """
    if not fits:
        raise TrainingError("no hay imágenes con ajuste convexo para entrenar")
    if len(fits) != len(features):
        raise TrainingError(f"{len(fits)} ajustes pero {len(features)} vectores de features")

    f = _feature_matrix(features)
    a = np.array([fit.a for fit in fits])
    b = np.array([fit.b for fit in fits])
    matriz = (f * a[:, None]).T @ f + ridge * np.eye(f.shape[1])
    vector = f.T @ b
    theta = -0.5 * linalg.solve(matriz, vector, assume_a="pos")
    return EpsilonRegressor(theta=theta.tolist(), metric=metric, trained_on=len(fits))


def train_classical(
    epsilons: Sequence[float],
    features: Sequence[ContrastFeatures],
    ridge: float = DEFAULT_RIDGE,
    metric: MetricName = MetricName.PRI,
) -> EpsilonRegressor:
    """Mínimos cuadrados de ε*_k sobre f_k (la regresión de referencia)"""
    if not epsilons:
        raise TrainingError("no hay imágenes para entrenar")
    if len(epsilons) != len(features):
        raise TrainingError(f"{len(epsilons)} valores de ε pero {len(features)} vectores de features")

    f = _feature_matrix(features)
    objetivo = np.asarray(epsilons, dtype=np.float64)
    theta = linalg.solve(f.T @ f + ridge * np.eye(f.shape[1]), f.T @ objetivo, assume_a="pos")
    return EpsilonRegressor(theta=theta.tolist(), metric=metric, trained_on=len(epsilons))


def raw_prediction(reg: EpsilonRegressor, features: ContrastFeatures) -> float:
    return float(np.dot(reg.theta, features.values))


def predict_epsilon(reg: EpsilonRegressor, features: ContrastFeatures) -> float:
    """θᵀf recortado al rango del modelo"""
    low, high = reg.clamp
    return float(np.clip(raw_prediction(reg, features), low, high))


def save_model(reg: EpsilonRegressor, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(reg.model_dump_json(indent=2) + "\n")
    logger.info(f"✅ Modelo guardado en {path}")
    return path


def load_model(path: PathLike) -> EpsilonRegressor:
    path = Path(path)
    try:
        return EpsilonRegressor.model_validate_json(path.read_text())
    except ValidationError as e:
        raise ValueError(f"{path.name}: modelo inválido ({e.errors()[0]['msg']})") from e
