"""
Segmentación TBES: fusión aglomerativa voraz que minimiza la longitud de
código total (textura + ½·borde) con ventanas jerárquicas.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from app.models import (
    BoundaryCoding,
    ChainCodePrior,
    CodingParams,
    ColorSpace,
    SegmentationReport,
    StageEvent,
    StageLogEntry,
)
from services.boundary_coding import BSD_PRIOR, mask_boundary_length
from services.errors import ImageFormatError, ObjectiveError
from services.features import FeatureField, build_feature_fields, gaussian_stats, interior_of_mask
from services.imagecore import RasterImage, convert_back, convert_color
from services.label_io import MAX_LABEL, LabelMap, load_label_map
from services.merge_queue import MergeQueue
from services.rag import RegionAdjacencyGraph
from services.texture_coding import region_coding_length

logger = logging.getLogger(__name__)

DEFAULT_W_MAX = 7
DEFAULT_DIMENSION = 8
OBJECTIVE_TOLERANCE = 1e-9


def window_schedule(w_max: int) -> List[int]:
    """{wMax, wMax−2, …, 1}"""
    if w_max < 1 or w_max % 2 == 0:
        raise ValueError(f"wMax debe ser impar >= 1, no {w_max}")
    return list(range(w_max, 0, -2))


def as_lab(img: RasterImage) -> RasterImage:
    if img.colorspace == ColorSpace.LAB:
        return img
    rgb = img if img.colorspace == ColorSpace.RGB else convert_back(img)
    return convert_color(rgb, ColorSpace.LAB)


# ----------------------------------------------------------------------------
# Superpíxeles
# ----------------------------------------------------------------------------
def grid_superpixels(img, cell_size: int) -> LabelMap:
    """
    Partición en grilla regular; la última fila/columna de celdas absorbe el resto.

    Args:
        img: RasterImage o tupla (alto, ancho)
        cell_size: lado de la celda en píxeles
    """
    if cell_size < 1:
        raise ValueError(f"cell_size debe ser >= 1, no {cell_size}")
    alto, ancho = img.shape if hasattr(img, "shape") else img
    filas_celda = max(1, alto // cell_size)
    columnas_celda = max(1, ancho // cell_size)
    fila = np.minimum(np.arange(alto) // cell_size, filas_celda - 1)
    columna = np.minimum(np.arange(ancho) // cell_size, columnas_celda - 1)
    return LabelMap(fila[:, None] * columnas_celda + columna[None, :])


def load_superpixels(path, shape: Optional[Tuple[int, int]] = None) -> LabelMap:
    """
    Lee superpíxeles desde un PGM (valor = id) y los deja canónicos.

    Raises:
        ImageFormatError: dimensiones distintas de la imagen o más de 65535 regiones
    """
    crudo = load_label_map(path)
    if shape is not None and tuple(crudo.shape) != tuple(shape):
        raise ImageFormatError(
            f"superpíxeles de {crudo.width}x{crudo.height}, la imagen es {shape[1]}x{shape[0]}"
        )
    canonico = LabelMap.canonical(crudo.labels)
    if canonico.num_regions > MAX_LABEL:
        raise ImageFormatError(f"{canonico.num_regions} superpíxeles, el máximo es {MAX_LABEL}")
    if canonico.num_regions != crudo.num_regions:
        logger.info(f"Superpíxeles: {crudo.num_regions} ids -> {canonico.num_regions} regiones conexas")
    return canonico


# ----------------------------------------------------------------------------
# Longitud de código total
# ----------------------------------------------------------------------------
def total_coding_length(
    labels: LabelMap,
    fields: Dict[int, FeatureField],
    prior: ChainCodePrior,
    params: CodingParams,
    coding: BoundaryCoding = BoundaryCoding.ADAPTIVE,
) -> SegmentationReport:
    """
    Σ_i [L_w(R_i) + ½·B(R_i)] con la ventana params.window_size.

    Raises:
        DegenerateRegionError: alguna región sin interior en esa ventana
    """
    w = params.window_size
    field = fields[w]
    params = params.model_copy(update={"dimension": field.dimension})
    canonico = LabelMap.canonical(labels.labels).labels
    alto, ancho = canonico.shape
    r = w // 2

    texture = 0.0
    boundary = 0.0
    for indice, caja in enumerate(ndimage.find_objects(canonico + 1)):
        ampliada = (
            slice(max(caja[0].start - r, 0), min(caja[0].stop + r, alto)),
            slice(max(caja[1].start - r, 0), min(caja[1].stop + r, ancho)),
        )
        mask = canonico[ampliada] == indice
        vectors = field.per_pixel[ampliada][interior_of_mask(mask, w)]
        stats = gaussian_stats(vectors, indice, int(mask.sum()), w)
        texture += region_coding_length(stats, params)
        boundary += mask_boundary_length(canonico[caja] == indice, prior, coding)

    return SegmentationReport(
        epsilon=params.epsilon,
        w_schedule=[w],
        regions=int(canonico.max()) + 1,
        bits_texture=texture,
        bits_boundary=boundary,
        bits_total=texture + 0.5 * boundary,
        boundary_coding=coding,
    )


def merge_gain(rag: RegionAdjacencyGraph, i: int, j: int, w: int) -> float:
    """ΔL de fusionar i y j como candidatos de la ventana w (ε y prior los fija el RAG)"""
    return rag.merge_gain(i, j, w)


# ----------------------------------------------------------------------------
# Algoritmo
# ----------------------------------------------------------------------------
class TbesSegmenter:
    """
    Estado de una corrida de TBES.

    En wMax las ganancias viven en una cola de prioridad persistente; en las
    ventanas menores se recalculan los pares marginales en cada etapa. Toda
    fusión vuelve a wMax. La corrida termina cuando la etapa w=1 (o wMax,
    si ninguna región es degenerada ahí) no tiene ganancias positivas.
    `bits_total` es el total que reporta `report()`; cada fusión lo baja en su ΔL.
    """

    def __init__(
        self,
        img: RasterImage,
        superpixels: LabelMap,
        epsilon: float,
        w_max: int = DEFAULT_W_MAX,
        dimension: int = DEFAULT_DIMENSION,
        prior: ChainCodePrior = BSD_PRIOR,
        coding: BoundaryCoding = BoundaryCoding.ADAPTIVE,
        fields: Optional[Dict[int, FeatureField]] = None,
    ):
        if epsilon <= 0:
            raise ValueError(f"epsilon debe ser positivo, no {epsilon}")
        if tuple(superpixels.shape) != tuple(img.shape):
            raise ImageFormatError(
                f"superpíxeles {superpixels.shape} no coinciden con la imagen {img.shape}"
            )
        self.epsilon = float(epsilon)
        self.schedule = window_schedule(w_max)
        self.w_max = w_max
        self.coding = BoundaryCoding(coding)
        if fields is None:
            fields = build_feature_fields(as_lab(img), self.schedule, dimension)
        missing = [w for w in self.schedule if w not in fields]
        if missing:
            raise ValueError(f"faltan FeatureFields para w={missing}")

        self.rag = RegionAdjacencyGraph(
            LabelMap.canonical(superpixels.labels),
            {w: fields[w] for w in self.schedule},
            self.epsilon,
            prior,
            self.coding,
        )
        self.window = w_max
        self.merges = 0
        self.finished = False
        self.stage_log: List[StageLogEntry] = []
        self.queue = MergeQueue()
        for i, j in sorted(self.rag.edges()):
            self._push(i, j)
        self.bits_total = self._current_total()

    # ------------------------------------------------------------------
    def _push(self, i: int, j: int) -> None:
        w = self.w_max
        if self.rag.is_degenerate(i, w) or self.rag.is_degenerate(j, w):
            return
        gain = self.rag.merge_gain(i, j, w)
        self.queue.push(gain, i, j, self.rag.version[i], self.rag.version[j])

    def _log(self, event: StageEvent, pair=None, gain=None) -> None:
        self.stage_log.append(StageLogEntry(
            step=len(self.stage_log),
            event=event,
            window=self.window,
            pair=pair,
            gain=gain,
            regions=self.rag.num_regions,
            bits_total=self.bits_total,
        ))

    def merge_gain(self, i: int, j: int, w: int) -> float:
        return self.rag.merge_gain(i, j, w)

    def is_marginal(self, region: int, w: int) -> bool:
        """I_w(R) ≠ ∅ e I_{w+2}(R) = ∅"""
        if self.rag.is_degenerate(region, w):
            return False
        return w == self.w_max or self.rag.is_degenerate(region, w + 2)

    def candidates(self, w: int) -> List[Tuple[int, int]]:
        """
        Pares adyacentes a considerar en la ventana w.

        En wMax, ambos no degenerados; debajo, ambos no degenerados en w y
        al menos uno marginal.
        """
        pares = []
        for i, j in sorted(self.rag.edges()):
            if self.rag.is_degenerate(i, w) or self.rag.is_degenerate(j, w):
                continue
            if w == self.w_max or self.is_marginal(i, w) or self.is_marginal(j, w):
                pares.append((i, j))
        return pares

    def _best_at(self, w: int) -> Optional[Tuple[float, int, int]]:
        if w == self.w_max:
            return self.queue.peek(self.rag.is_current)
        mejor = None
        for i, j in self.candidates(w):
            gain = self.rag.merge_gain(i, j, w)
            if mejor is None or gain > mejor[0]:
                mejor = (gain, i, j)
        return mejor

    def _degenerate_at_w_max(self) -> int:
        return sum(1 for r in self.rag.regions if self.rag.is_degenerate(r, self.w_max))

    def step(self) -> Optional[Tuple[int, int, float]]:
        """
        Avanza hasta la próxima fusión.

        Returns:
            (i, j, ΔL) de la fusión realizada, o None si la corrida terminó
        """
        while not self.finished:
            w = self.window
            mejor = self._best_at(w)
            if mejor is not None and mejor[0] > 0:
                gain, i, j = mejor
                if w == self.w_max:
                    self.queue.pop(self.rag.is_current)
                antes = self.bits_total
                keep = self.rag.merge(i, j)
                self.merges += 1
                self.bits_total = self._current_total()
                self._check_objective(antes, gain, (i, j))
                self._log(StageEvent.MERGE, pair=(i, j), gain=gain)
                self.window = self.w_max
                for vecino in self.rag.neighbors(keep):
                    self._push(keep, vecino)
                return i, j, gain

            if w == self.w_max and self._degenerate_at_w_max() == 0:
                self.finished = True
                self._log(StageEvent.STOP)
            elif w == self.schedule[-1]:
                restantes = self._degenerate_at_w_max()
                if restantes:
                    logger.warning(
                        f"⚠️ Sin ganancias positivas en w={w}; {restantes} regiones "
                        f"siguen degeneradas en w={self.w_max}"
                    )
                self.finished = True
                self._log(StageEvent.STOP)
            else:
                self.window = w - 2
                self._log(StageEvent.DESCEND)

        return None

    def run(self) -> Tuple[LabelMap, SegmentationReport]:
        inicial = self.rag.num_regions
        while self.step() is not None:
            pass
        report = self.report()
        logger.info(
            f"✅ TBES ε={self.epsilon:g}: {inicial} -> {report.regions} regiones, "
            f"{report.bits_total:.1f} bits"
        )
        return self.rag.label_map(), report

    def _current_total(self) -> float:
        texture, boundary = self.rag.total_bits()
        return texture + 0.5 * boundary

    def _check_objective(self, antes: float, gain: float, pair: Tuple[int, int]) -> None:
        baja = antes - self.bits_total
        if not (self.bits_total < antes and abs(baja - gain) <= OBJECTIVE_TOLERANCE * max(1.0, abs(antes))):
            logger.error(f"❌ Fusión {pair}: el total bajó {baja:.6g} bits, ΔL={gain:.6g}")
            raise ObjectiveError(
                f"la fusión {pair} llevó el total de {antes:.6f} a {self.bits_total:.6f} con ΔL={gain:.6f}"
            )

    def report(self) -> SegmentationReport:
        """
        Longitud de código de la partición actual: en wMax si todas las
        regiones son no degeneradas ahí, si no cada región en su mayor
        ventana no degenerada. Es el mismo total que baja ΔL en cada fusión.
        """
        texture, boundary = self.rag.total_bits()
        return SegmentationReport(
            epsilon=self.epsilon,
            w_schedule=self.schedule,
            merges=self.merges,
            regions=self.rag.num_regions,
            bits_texture=texture,
            bits_boundary=boundary,
            bits_total=texture + 0.5 * boundary,
            boundary_coding=self.coding,
            degenerate_regions=self._degenerate_at_w_max(),
            stage_log=list(self.stage_log),
        )


def tbes_segment(
    img: RasterImage,
    superpixels: LabelMap,
    epsilon: float,
    w_max: int = DEFAULT_W_MAX,
    dimension: int = DEFAULT_DIMENSION,
    prior: ChainCodePrior = BSD_PRIOR,
    coding: BoundaryCoding = BoundaryCoding.ADAPTIVE,
    fields: Optional[Dict[int, FeatureField]] = None,
) -> Tuple[LabelMap, SegmentationReport]:
    """
    Segmenta una imagen partiendo de superpíxeles.

    Args:
        img: imagen (se convierte a Lab si hace falta)
        superpixels: partición inicial
        epsilon: distorsión ε
        w_max: ventana más grande del esquema (impar)
        dimension: D de la PCA
        prior: prior de códigos de diferencia
        coding: codificación de bordes
        fields: FeatureFields ya calculados (para reusar entre varios ε)

    Returns:
        (mapa de etiquetas canónico, reporte)
    """
    segmenter = TbesSegmenter(img, superpixels, epsilon, w_max, dimension, prior, coding, fields)
    return segmenter.run()
