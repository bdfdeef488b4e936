"""
Codificación de bordes: trazado de contornos (Moore, sentido horario),
código de cadena de Freeman, código de diferencias y su longitud contra
un prior, y estimación del prior a partir de segmentaciones de referencia.

Convención de direcciones (fila hacia abajo):

    3 2 1
    4 . 0
    5 6 7
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from app.config import get_settings
from app.models import BoundaryCoding, ChainCodePrior
from services.errors import RegionError, TracingError, TrainingError
from services.label_io import FOUR_CONNECTED, LabelMap

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# código -> (dfila, dcolumna)
DIRECTIONS = np.array([
    (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1),
])
_CODE_OF = {tuple(d): code for code, d in enumerate(DIRECTIONS.tolist())}

BSD_PRIOR = ChainCodePrior(probabilities=[0.585, 0.190, 0.020, 0.000, 0.002, 0.003, 0.031, 0.169])
P_FLOOR = 5e-4
INITIAL_CODE_BITS = 3.0


@dataclass(frozen=True)
class ChainCodeSequence:
    """Contorno cerrado: píxel inicial (fila, columna) y códigos 0..7"""

    start: Tuple[int, int]
    codes: Tuple[int, ...]
    closed: bool = True

    @property
    def length(self) -> int:
        return len(self.codes)

    def pixels(self) -> List[Tuple[int, int]]:
        """Reproduce el recorrido desde el inicio (incluye el regreso si es cerrado)"""
        fila, columna = self.start
        recorrido = [(fila, columna)]
        for code in self.codes:
            df, dc = DIRECTIONS[code]
            fila, columna = fila + int(df), columna + int(dc)
            recorrido.append((fila, columna))
        return recorrido


# ----------------------------------------------------------------------------
# Trazado
# ----------------------------------------------------------------------------
def _moore_trace(
    mask: np.ndarray, start: Tuple[int, int], backtrack: int, max_steps: Optional[int] = None
) -> List[int]:
    """
    Sigue el contorno con el vecino de Moore girando en sentido horario.

    `mask` tiene un marco de ceros. `backtrack` es la dirección, desde el
    inicio, de un píxel de fondo del contorno a seguir. Termina al volver al
    inicio con el mismo primer movimiento.
    """
    codes: List[int] = []
    actual = start
    desde = backtrack
    primero = None
    limite = max_steps if max_steps is not None else 4 * int(mask.sum()) + 8

    for _ in range(limite):
        movimiento = None
        for paso in range(1, 8):
            code = (desde - paso) % 8
            df, dc = DIRECTIONS[code]
            if mask[actual[0] + df, actual[1] + dc]:
                movimiento = code
                previo = (code + 1) % 8
                break
        if movimiento is None:
            return codes  # píxel aislado

        if primero is None:
            primero = movimiento
        elif actual == start and movimiento == primero:
            return codes

        codes.append(movimiento)
        df, dc = DIRECTIONS[movimiento]
        siguiente = (actual[0] + int(df), actual[1] + int(dc))
        # el último vecino de fondo revisado, visto desde el nuevo píxel
        bf, bc = DIRECTIONS[previo]
        fondo = (actual[0] + int(bf) - siguiente[0], actual[1] + int(bc) - siguiente[1])
        desde = _CODE_OF[fondo]
        actual = siguiente

    raise TracingError(f"el trazado no cerró en {limite} pasos desde {start}")


def trace_mask_boundaries(mask, origin: Tuple[int, int] = (0, 0)) -> List[ChainCodeSequence]:
    """
    Contornos de una máscara: primero el exterior, después cada agujero.

    El exterior arranca en el píxel más arriba y a la izquierda. Un agujero
    es una componente 4-conexa del complemento que no toca el borde; su
    contorno arranca en el píxel de la región justo encima del primer píxel
    del agujero. Las coordenadas se devuelven desplazadas por `origin`.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise RegionError("la máscara está vacía")
    marco = np.pad(mask, 1, mode="constant", constant_values=False)
    oy, ox = origin[0] - 1, origin[1] - 1

    contornos = []
    inicio = tuple(int(v) for v in np.argwhere(marco)[0])
    codes = _moore_trace(marco, inicio, backtrack=4)
    contornos.append(ChainCodeSequence((inicio[0] + oy, inicio[1] + ox), tuple(codes)))

    fondo, cantidad = ndimage.label(~marco, structure=FOUR_CONNECTED)
    exterior = fondo[0, 0]
    for etiqueta in range(1, cantidad + 1):
        if etiqueta == exterior:
            continue
        fila, columna = (int(v) for v in np.argwhere(fondo == etiqueta)[0])
        inicio = (fila - 1, columna)
        codes = _moore_trace(marco, inicio, backtrack=6)
        contornos.append(ChainCodeSequence((inicio[0] + oy, inicio[1] + ox), tuple(codes)))

    return contornos


def _region_crop(labels: np.ndarray, region: int):
    mask = labels == region
    filas, columnas = np.nonzero(mask)
    if filas.size == 0:
        raise RegionError(f"la región {region} no existe en el mapa")
    caja = (slice(filas.min(), filas.max() + 1), slice(columnas.min(), columnas.max() + 1))
    return mask[caja], (int(filas.min()), int(columnas.min()))


def trace_boundaries(labels, region: int) -> List[ChainCodeSequence]:
    """
    Contornos de una región de un LabelMap.

    Raises:
        RegionError: la región no existe o no es 4-conexa
    """
    etiquetas = np.asarray(getattr(labels, "labels", labels))
    crop, origin = _region_crop(etiquetas, region)
    _, componentes = ndimage.label(crop, structure=FOUR_CONNECTED)
    if componentes != 1:
        raise RegionError(f"la región {region} tiene {componentes} componentes conexas")
    return trace_mask_boundaries(crop, origin)


# ----------------------------------------------------------------------------
# Longitudes
# ----------------------------------------------------------------------------
def freeman_length(seq: ChainCodeSequence) -> float:
    return 3.0 * seq.length


def difference_codes(seq: ChainCodeSequence) -> List[int]:
    """Δo_t = mod(o_t − o_{t+1}, 8), T−1 valores"""
    codes = np.asarray(seq.codes, dtype=np.int64)
    if codes.size < 2:
        return []
    return np.mod(codes[:-1] - codes[1:], 8).tolist()


def _code_costs(prior: ChainCodePrior) -> np.ndarray:
    return -np.log2(np.maximum(np.asarray(prior.probabilities, dtype=np.float64), P_FLOOR))


def entropy_boundary_length(seq: ChainCodeSequence, prior: ChainCodePrior) -> float:
    """3 bits por la orientación inicial más −log2 P[Δo] por cada diferencia"""
    if seq.length == 0:
        return 0.0
    counts = np.bincount(np.asarray(difference_codes(seq), dtype=np.int64), minlength=8)
    return INITIAL_CODE_BITS + float(np.sum(counts * _code_costs(prior)))


def boundary_bits(
    contours: Iterable[ChainCodeSequence],
    prior: ChainCodePrior = BSD_PRIOR,
    coding: BoundaryCoding = BoundaryCoding.ADAPTIVE,
) -> float:
    if BoundaryCoding(coding) == BoundaryCoding.FREEMAN:
        return float(sum(freeman_length(seq) for seq in contours))
    return float(sum(entropy_boundary_length(seq, prior) for seq in contours))


def mask_boundary_length(
    mask,
    prior: ChainCodePrior = BSD_PRIOR,
    coding: BoundaryCoding = BoundaryCoding.ADAPTIVE,
) -> float:
    """Bits de borde de una máscara (recorte) ya conocida como 4-conexa"""
    return boundary_bits(trace_mask_boundaries(mask), prior, coding)


def region_boundary_length(
    labels,
    region: int,
    prior: ChainCodePrior = BSD_PRIOR,
    coding: BoundaryCoding = BoundaryCoding.ADAPTIVE,
) -> float:
    """B(R): suma sobre todos los contornos trazados de la región"""
    return boundary_bits(trace_boundaries(labels, region), prior, coding)


# ----------------------------------------------------------------------------
# Prior
# ----------------------------------------------------------------------------
def difference_histogram(labels: LabelMap) -> np.ndarray:
    """Conteo de códigos de diferencia sobre todas las regiones conexas de un mapa"""
    canonico = LabelMap.canonical(labels.labels).labels
    conteo = np.zeros(8, dtype=np.int64)
    for indice, caja in enumerate(ndimage.find_objects(canonico + 1)):
        if caja is None:
            continue
        origin = (caja[0].start, caja[1].start)
        for seq in trace_mask_boundaries(canonico[caja] == indice, origin):
            diffs = difference_codes(seq)
            if diffs:
                conteo += np.bincount(diffs, minlength=8)
    return conteo


def estimate_prior(ground_truths: Sequence[LabelMap]) -> ChainCodePrior:
    """
    Histograma normalizado de códigos de diferencia de un conjunto de mapas.

    Raises:
        TrainingError: lista vacía o sin ningún contorno con diferencias
    """
    if not ground_truths:
        raise TrainingError("estimate_prior necesita al menos un mapa de referencia")
    total = np.zeros(8, dtype=np.int64)
    for gt in ground_truths:
        total += difference_histogram(gt)
    if total.sum() == 0:
        raise TrainingError("los mapas no tienen contornos con códigos de diferencia")
    logger.info(f"📊 Prior estimado con {int(total.sum())} códigos de {len(ground_truths)} mapas")
    return ChainCodePrior.normalized(total.tolist())


def save_prior(prior: ChainCodePrior, path: PathLike) -> Path:
    """Guarda el prior como arreglo JSON de 8 reales con 3 decimales"""
    path = Path(path)
    path.write_text(json.dumps([round(p, 3) for p in prior.probabilities]) + "\n")
    return path


def load_prior(path: PathLike) -> ChainCodePrior:
    """Lee un arreglo JSON de 8 reales y lo renormaliza"""
    path = Path(path)
    try:
        valores = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path.name}: JSON inválido ({e})") from e
    if not isinstance(valores, list) or len(valores) != 8:
        raise ValueError(f"{path.name}: se esperaba un arreglo de 8 probabilidades")
    return ChainCodePrior.normalized(valores)


def resolve_prior(path: Optional[PathLike] = None) -> ChainCodePrior:
    """Prior desde archivo si hay ruta (argumento o TBES_PRIOR_PATH), si no el de BSD"""
    if path is None:
        path = get_settings().prior_path
    if path:
        prior = load_prior(path)
        logger.info(f"✅ Prior cargado desde {path}")
        return prior
    return BSD_PRIOR
