"""
Métricas de discrepancia entre segmentaciones: PRI, VOI y GFM, promediadas
sobre varias segmentaciones de referencia.
"""

import logging
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import entropy
from sklearn.metrics import mutual_info_score, rand_score

from app.models import MetricName, MetricResult
from services.errors import ImageFormatError
from services.label_io import LabelMap

logger = logging.getLogger(__name__)

GFM_TOLERANCE_FRACTION = 0.0075


def _check_maps(test: LabelMap, truths: Sequence[LabelMap]) -> None:
    if not truths:
        raise ValueError("se necesita al menos una segmentación de referencia")
    for gt in truths:
        if tuple(gt.shape) != tuple(test.shape):
            raise ImageFormatError(
                f"dimensiones distintas: prueba {test.shape}, referencia {gt.shape}"
            )


# ----------------------------------------------------------------------------
# PRI / VOI
# ----------------------------------------------------------------------------
def pri(test: LabelMap, truths: Sequence[LabelMap]) -> MetricResult:
    """
    Probabilistic Rand Index: fracción de pares de píxeles con etiquetado
    consistente, promediada sobre las referencias. Se calcula con la tabla
    de contingencia (sklearn), no con todos los pares.
    """
    _check_maps(test, truths)
    a = test.labels.ravel()
    valores = [float(rand_score(gt.labels.ravel(), a)) for gt in truths]
    return MetricResult(name=MetricName.PRI, value=float(np.mean(valores)), per_ground_truth=valores)


def _entropy_bits(labels: np.ndarray) -> float:
    _, counts = np.unique(labels, return_counts=True)
    return float(entropy(counts, base=2))


def variation_of_information(a: np.ndarray, b: np.ndarray) -> float:
    """H(A) + H(B) − 2·I(A;B) en bits"""
    mi_bits = mutual_info_score(a, b) / np.log(2.0)
    return max(_entropy_bits(a) + _entropy_bits(b) - 2.0 * mi_bits, 0.0)


def voi(test: LabelMap, truths: Sequence[LabelMap]) -> MetricResult:
    _check_maps(test, truths)
    a = test.labels.ravel()
    valores = [variation_of_information(a, gt.labels.ravel()) for gt in truths]
    return MetricResult(name=MetricName.VOI, value=float(np.mean(valores)), per_ground_truth=valores)


# ----------------------------------------------------------------------------
# GFM
# ----------------------------------------------------------------------------
def boundary_map(labels) -> np.ndarray:
    """Un píxel es de borde si algún 4-vecino tiene otra etiqueta (se marcan ambos lados)"""
    etiquetas = np.asarray(getattr(labels, "labels", labels))
    borde = np.zeros(etiquetas.shape, dtype=bool)
    horizontal = etiquetas[:, :-1] != etiquetas[:, 1:]
    vertical = etiquetas[:-1, :] != etiquetas[1:, :]
    borde[:, :-1] |= horizontal
    borde[:, 1:] |= horizontal
    borde[:-1, :] |= vertical
    borde[1:, :] |= vertical
    return borde


def default_tolerance(shape) -> float:
    alto, ancho = shape
    return GFM_TOLERANCE_FRACTION * float(np.hypot(alto, ancho))


def _distance_to(mask: np.ndarray) -> np.ndarray:
    return ndimage.distance_transform_edt(~mask)


def gfm(
    test: LabelMap, truths: Sequence[LabelMap], tolerance_px: Optional[float] = None
) -> MetricResult:
    """
    F-measure de bordes.

    La precisión se mide contra la unión de los bordes de referencia; el
    recall se calcula por referencia y se promedia (una referencia sin bordes
    tiene recall 1).

    Args:
        test: segmentación a evaluar
        truths: segmentaciones de referencia
        tolerance_px: distancia máxima para un acierto (por defecto 0.75% de la diagonal)
    """
    _check_maps(test, truths)
    if tolerance_px is None:
        tolerance_px = default_tolerance(test.shape)
    if tolerance_px < 0:
        raise ValueError(f"la tolerancia no puede ser negativa: {tolerance_px}")

    borde_test = boundary_map(test)
    bordes_gt = [boundary_map(gt) for gt in truths]
    union = np.logical_or.reduce(bordes_gt)
    total_gt = int(sum(b.sum() for b in bordes_gt))

    if not borde_test.any() and total_gt == 0:
        return MetricResult(name=MetricName.GFM, value=1.0, precision=1.0, recall=1.0)

    if borde_test.any() and union.any():
        precision = float(np.mean(_distance_to(union)[borde_test] <= tolerance_px))
    else:
        precision = 0.0

    distancia = _distance_to(borde_test) if borde_test.any() else None
    recalls = []
    for b in bordes_gt:
        if not b.any():
            recalls.append(1.0)
        elif distancia is None:
            recalls.append(0.0)
        else:
            recalls.append(float(np.mean(distancia[b] <= tolerance_px)))
    recall = float(np.mean(recalls))

    f = 0.0 if precision + recall == 0 else 2.0 * precision * recall / (precision + recall)
    return MetricResult(
        name=MetricName.GFM, value=f, per_ground_truth=recalls, precision=precision, recall=recall
    )


# ----------------------------------------------------------------------------
# Agregados
# ----------------------------------------------------------------------------
def evaluate(
    test: LabelMap,
    truths: Sequence[LabelMap],
    metrics: Iterable[MetricName] = tuple(MetricName),
    tolerance_px: Optional[float] = None,
) -> Dict[MetricName, MetricResult]:
    resultados = {}
    for metric in metrics:
        metric = MetricName(metric)
        if metric == MetricName.PRI:
            resultados[metric] = pri(test, truths)
        elif metric == MetricName.VOI:
            resultados[metric] = voi(test, truths)
        else:
            resultados[metric] = gfm(test, truths, tolerance_px)
    return resultados


def human_consistency(
    truths: Sequence[LabelMap], metric: MetricName, tolerance_px: Optional[float] = None
) -> MetricResult:
    """
    Cada segmentación humana evaluada contra las demás (dejando una afuera).

    Raises:
        ValueError: menos de dos referencias
    """
    if len(truths) < 2:
        raise ValueError("la consistencia humana necesita al menos dos referencias")
    metric = MetricName(metric)
    valores: List[float] = []
    for k, held_out in enumerate(truths):
        otras = [gt for i, gt in enumerate(truths) if i != k]
        valores.append(evaluate(held_out, otras, [metric], tolerance_px)[metric].value)
    return MetricResult(name=metric, value=float(np.mean(valores)), per_ground_truth=valores)
