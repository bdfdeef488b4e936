"""
Features de textura: ventanas w×w apiladas, PCA por tamaño de ventana,
píxeles interiores y estadísticas gaussianas por región.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from app.models import ColorSpace
from services.errors import DegenerateRegionError, RegionError
from services.imagecore import RasterImage

logger = logging.getLogger(__name__)

COVARIANCE_RIDGE = 1e-9


def _check_window(w: int) -> int:
    if int(w) != w or w < 1 or w % 2 == 0:
        raise ValueError(f"el tamaño de ventana debe ser un entero impar >= 1, no {w}")
    return int(w)


# ----------------------------------------------------------------------------
# Tipos
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class WindowMatrix:
    """
    Ventanas apiladas de todos los píxeles.

    `rows` tiene una fila de largo 3w² por píxel en orden raster; la matriz
    del modelo (3w² × píxeles) es su transpuesta, `columns`.
    """

    window_size: int
    shape: Tuple[int, int]
    rows: np.ndarray

    @property
    def raw_dim(self) -> int:
        return self.rows.shape[1]

    @property
    def num_pixels(self) -> int:
        return self.rows.shape[0]

    @property
    def columns(self) -> np.ndarray:
        return self.rows.T


@dataclass(frozen=True)
class PcaBasis:
    window_size: int
    mean_vector: np.ndarray
    components: np.ndarray  # D × rawDim, filas ortonormales
    eigenvalues: np.ndarray
    energy_fraction: float

    @property
    def raw_dim(self) -> int:
        return self.components.shape[1]

    @property
    def reduced_dim(self) -> int:
        return self.components.shape[0]


@dataclass(frozen=True)
class FeatureField:
    """Un vector D por píxel (H×W×D) para un tamaño de ventana"""

    window_size: int
    per_pixel: np.ndarray

    @property
    def dimension(self) -> int:
        return self.per_pixel.shape[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.per_pixel.shape[:2]


@dataclass(frozen=True)
class RegionStats:
    region_id: int
    window_size: int
    pixel_count: int
    interior_count: int
    mean: np.ndarray
    covariance: np.ndarray


# ----------------------------------------------------------------------------
# Ventanas y PCA
# ----------------------------------------------------------------------------
def extract_windows(img: RasterImage, w: int) -> WindowMatrix:
    """
    Apila la ventana w×w×3 alrededor de cada píxel.

    Los bordes se completan por espejo (np.pad "reflect"). Dentro de cada
    columna el orden es fila de la ventana, columna de la ventana, canal.

    Args:
        img: imagen (normalmente en Lab)
        w: tamaño de ventana impar

    Raises:
        ValueError: w par o mayor que 2·min(H, W)
    """
    w = _check_window(w)
    height, width = img.shape
    if w > 2 * min(height, width):
        raise ValueError(f"ventana {w} demasiado grande para una imagen {height}x{width}")
    if img.colorspace != ColorSpace.LAB:
        logger.debug(f"extract_windows sobre una imagen {img.colorspace.value}")

    r = w // 2
    padded = np.pad(img.data, ((r, r), (r, r), (0, 0)), mode="reflect")
    # (H, W, 3, w, w) -> (H, W, w, w, 3)
    ventanas = sliding_window_view(padded, (w, w), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
    rows = np.ascontiguousarray(ventanas.reshape(height * width, 3 * w * w))
    return WindowMatrix(window_size=w, shape=(height, width), rows=rows)


def fit_pca(raw: WindowMatrix, dimension: int) -> PcaBasis:
    """
    Ajusta la base PCA sobre todas las ventanas de la imagen.

    D se recorta a min(D, 3w²). Cada componente se orienta para que su
    entrada de mayor magnitud sea positiva.

    Raises:
        ValueError: menos muestras que D
    """
    if dimension < 1:
        raise ValueError(f"la dimensión reducida debe ser >= 1, no {dimension}")
    d = min(int(dimension), raw.raw_dim)
    if raw.num_pixels < d:
        raise ValueError(f"{raw.num_pixels} muestras no alcanzan para D={d}")

    mean_vector = raw.rows.mean(axis=0)
    centered = raw.rows - mean_vector
    covariance = centered.T @ centered / raw.num_pixels
    covariance = 0.5 * (covariance + covariance.T)

    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    orden = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[orden], 0.0, None)
    components = eigenvectors[:, orden[:d]].T.copy()

    pivotes = np.argmax(np.abs(components), axis=1)
    signos = np.sign(components[np.arange(d), pivotes])
    signos[signos == 0] = 1.0
    components *= signos[:, None]

    total = float(eigenvalues.sum())
    energy = 1.0 if total <= 0 else float(np.clip(eigenvalues[:d].sum() / total, 0.0, 1.0))

    return PcaBasis(
        window_size=raw.window_size,
        mean_vector=mean_vector,
        components=components,
        eigenvalues=eigenvalues[:d].copy(),
        energy_fraction=energy,
    )


def project(basis: PcaBasis, raw: WindowMatrix) -> FeatureField:
    """perPixel[p] = components · (raw_p − meanVector)"""
    if raw.raw_dim != basis.raw_dim:
        raise ValueError(
            f"dimensión de ventana {raw.raw_dim} no coincide con la base PCA ({basis.raw_dim})"
        )
    proyectado = (raw.rows - basis.mean_vector) @ basis.components.T
    height, width = raw.shape
    return FeatureField(
        window_size=raw.window_size,
        per_pixel=proyectado.reshape(height, width, basis.reduced_dim),
    )


def build_feature_fields(
    img: RasterImage, windows: Iterable[int], dimension: int
) -> Dict[int, FeatureField]:
    """Extrae, ajusta PCA y proyecta para cada tamaño de ventana del esquema"""
    fields = {}
    for w in windows:
        raw = extract_windows(img, w)
        basis = fit_pca(raw, dimension)
        fields[w] = project(basis, raw)
        logger.info(
            f"📊 PCA w={w}: D={basis.reduced_dim}/{basis.raw_dim}, "
            f"energía {basis.energy_fraction:.4f}"
        )
    return fields


# ----------------------------------------------------------------------------
# Interior y estadísticas
# ----------------------------------------------------------------------------
def interior_of_mask(mask: np.ndarray, w: int) -> np.ndarray:
    """
    Píxeles de la máscara cuya ventana w×w completa cae dentro de ella.

    Lo que queda fuera del arreglo cuenta como fuera de la región.
    """
    w = _check_window(w)
    mask = np.asarray(mask, dtype=bool)
    if w == 1:
        return mask.copy()
    return ndimage.binary_erosion(mask, structure=np.ones((w, w), dtype=bool), border_value=0)


def interior_mask(labels, region: int, w: int) -> np.ndarray:
    """Máscara H×W de I_w(R) para la región `region` del mapa"""
    w = _check_window(w)
    etiquetas = np.asarray(getattr(labels, "labels", labels))
    mask = etiquetas == region
    filas, columnas = np.nonzero(mask)
    if filas.size == 0:
        raise RegionError(f"la región {region} no existe en el mapa")

    r = w // 2
    caja = (
        slice(max(filas.min() - r, 0), filas.max() + r + 1),
        slice(max(columnas.min() - r, 0), columnas.max() + r + 1),
    )
    salida = np.zeros_like(mask)
    salida[caja] = interior_of_mask(mask[caja], w)
    return salida


def interior_pixels(labels, region: int, w: int) -> np.ndarray:
    """Coordenadas (fila, columna) de I_w(R) en orden raster"""
    return np.argwhere(interior_mask(labels, region, w))


def gaussian_stats(
    vectors: np.ndarray, region_id: int, pixel_count: int, window_size: int
) -> RegionStats:
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if n == 0:
        raise DegenerateRegionError(
            f"la región {region_id} no tiene píxeles interiores para w={window_size}"
        )
    mean = vectors.mean(axis=0)
    centered = vectors - mean
    covariance = centered.T @ centered / n
    covariance = 0.5 * (covariance + covariance.T) + COVARIANCE_RIDGE * np.eye(vectors.shape[1])
    return RegionStats(
        region_id=region_id,
        window_size=window_size,
        pixel_count=int(pixel_count),
        interior_count=int(n),
        mean=mean,
        covariance=covariance,
    )


def region_stats(
    field: FeatureField, interior: np.ndarray, region_id: int, pixel_count: int
) -> RegionStats:
    """
    Media y covarianza sesgada (1/n) de los features del interior, más τI.

    Args:
        field: campo de features de un tamaño de ventana
        interior: máscara booleana H×W o coordenadas (n, 2)
        region_id: id de la región
        pixel_count: N = |R|

    Raises:
        DegenerateRegionError: interior vacío
    """
    interior = np.asarray(interior)
    if interior.dtype == bool and interior.shape == field.shape:
        vectors = field.per_pixel[interior]
    else:
        coords = interior.reshape(-1, 2).astype(np.intp)
        vectors = field.per_pixel[coords[:, 0], coords[:, 1]]
    return gaussian_stats(vectors, region_id, pixel_count, field.window_size)
