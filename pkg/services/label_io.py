"""
Mapas de etiquetas: tipo LabelMap y lectura/escritura en PGM/PNG.
"""

import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from services.errors import ImageFormatError
from services.imagecore import PNG_SIGNATURE, read_netpbm_header

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAX_LABEL = 65535
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class LabelMap:
    """Identificador de región por píxel (H×W)"""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise ImageFormatError(f"un mapa de etiquetas debe ser 2D no vacío, forma {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise ImageFormatError("las etiquetas deben ser enteras")
        if labels.min() < 0:
            raise ImageFormatError("las etiquetas deben ser no negativas")
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    @property
    def region_ids(self) -> np.ndarray:
        return np.unique(self.labels)

    @property
    def num_regions(self) -> int:
        return int(self.region_ids.size)

    def is_dense(self) -> bool:
        ids = self.region_ids
        return bool(ids[0] == 0 and ids[-1] == ids.size - 1)

    def is_canonical(self) -> bool:
        """Ids densos y cada región 4-conexa"""
        return self.is_dense() and np.array_equal(self.labels, LabelMap.canonical(self.labels).labels)

    @classmethod
    def canonical(cls, labels) -> "LabelMap":
        """
        Densifica las etiquetas y separa las regiones desconectadas.

        Los ids nuevos respetan el orden de los ids originales; las
        componentes de un mismo id se numeran en orden raster.
        """
        labels = np.asarray(labels)
        salida = np.empty(labels.shape, dtype=np.int64)
        siguiente = 0
        ids = np.unique(labels)
        desplazado = np.searchsorted(ids, labels) + 1
        for indice, caja in enumerate(ndimage.find_objects(desplazado)):
            if caja is None:
                continue
            mascara = desplazado[caja] == indice + 1
            componentes, cantidad = ndimage.label(mascara, structure=FOUR_CONNECTED)
            destino = salida[caja]
            destino[mascara] = componentes[mascara] - 1 + siguiente
            siguiente += cantidad
        return cls(salida)


def load_label_map(path: PathLike) -> LabelMap:
    """
    Lee un mapa de etiquetas PGM (P5, 8 o 16 bits) o PNG en escala de grises.

    Las etiquetas se devuelven tal cual (sin densificar), como se necesita
    para las segmentaciones de referencia.
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            head = f.read(4096)
    except OSError as e:
        raise ImageFormatError(f"No se pudo leer {path}: {e}") from e

    if head[:2] == b"P5":
        _, _, _, maxval = read_netpbm_header(head)
        if maxval > MAX_LABEL:
            raise ImageFormatError(f"{path.name}: maxval {maxval} fuera de rango")
    elif head[:8] != PNG_SIGNATURE:
        raise ImageFormatError(f"{path.name}: se esperaba PGM P5 o PNG en escala de grises")

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "I", "I;16", "I;16B", "P"):
                raise ImageFormatError(f"{path.name}: modo {im.mode} no es un mapa de etiquetas")
            valores = np.asarray(im)
    except ImageFormatError:
        raise
    except (OSError, ValueError) as e:
        raise ImageFormatError(f"No se pudo decodificar {path}: {e}") from e

    return LabelMap(valores.astype(np.int64))


def save_label_map(labels: LabelMap, path: PathLike) -> Path:
    """
    Escribe el mapa como PGM P5 de 16 bits (valor de píxel = id de región).

    Escribe a un temporal en el mismo directorio y lo renombra.
    """
    path = Path(path)
    arreglo = labels.labels
    if arreglo.max() > MAX_LABEL:
        raise ImageFormatError(f"más de {MAX_LABEL + 1} etiquetas no entran en un PGM de 16 bits")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            Image.fromarray(arreglo.astype(np.uint16)).save(f, format="PPM")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug(f"💾 Mapa de etiquetas guardado en {path}")
    return path
