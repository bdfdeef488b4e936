"""
Longitud de código con pérdida de una región de textura modelada como
fuente gaussiana con distorsión ε.
"""

import numpy as np
from scipy import linalg

from app.models import CodingParams
from services.errors import NotPositiveSemidefiniteError
from services.features import RegionStats

_LN2 = np.log(2.0)


def _log2det_identity_plus(covariance: np.ndarray, scale: float) -> float:
    """log2 det(I + scale·Σ) vía Cholesky"""
    dim = covariance.shape[0]
    tolerancia = 1e-10 * max(1.0, float(np.abs(covariance).max(initial=0.0)))
    if not np.allclose(covariance, covariance.T, rtol=0.0, atol=tolerancia):
        raise NotPositiveSemidefiniteError("la covarianza no es simétrica")
    try:
        factor = linalg.cholesky(np.eye(dim) + scale * covariance, lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveSemidefiniteError(f"la covarianza no es PSD: {e}") from e
    return float(2.0 * np.sum(np.log(np.diag(factor))) / _LN2)


def _coding_length(mean, covariance, n_effective: float, params: CodingParams) -> float:
    mean = np.asarray(mean, dtype=np.float64).ravel()
    covariance = np.asarray(covariance, dtype=np.float64)
    d = params.dimension
    if covariance.shape != (d, d) or mean.shape != (d,):
        raise ValueError(
            f"dimensiones inconsistentes: D={d}, media {mean.shape}, covarianza {covariance.shape}"
        )
    if n_effective < 0:
        raise ValueError(f"el número de muestras no puede ser negativo: {n_effective}")

    eps2 = params.epsilon ** 2
    log_det = _log2det_identity_plus(covariance, d / eps2)
    mean_term = 0.5 * d * np.log1p(float(mean @ mean) / eps2) / _LN2
    bits = (0.5 * d + 0.5 * n_effective) * log_det + mean_term
    return max(float(bits), 0.0)


def coding_length_full(mean, covariance, n: float, params: CodingParams) -> float:
    """
    Bits para codificar N vectores gaussianos con distorsión ε.

    (D/2 + N/2)·log2 det(I + (D/ε²)Σ) + (D/2)·log2(1 + ‖μ‖²/ε²)

    Raises:
        NotPositiveSemidefiniteError: Σ no simétrica o no PSD
    """
    return _coding_length(mean, covariance, float(n), params)


def region_coding_length(stats: RegionStats, params: CodingParams) -> float:
    """
    Longitud de código de una región contando solo ventanas que la teselan:
    N se reemplaza por N/w².
    """
    if stats.window_size != params.window_size:
        raise ValueError(
            f"estadísticas de w={stats.window_size} evaluadas con w={params.window_size}"
        )
    w2 = float(params.window_size ** 2)
    return _coding_length(stats.mean, stats.covariance, stats.pixel_count / w2, params)
