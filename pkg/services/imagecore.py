"""
Ingesta de imágenes, conversión de espacios de color y factor de escala
para comparar la compresibilidad entre espacios de color.

Las imágenes RGB se manejan internamente en [0, 1]. Lab queda en su rango
nativo (L en [0, 100]); la normalización entre espacios se hace a nivel de
features con color_scale_factor.
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from PIL import Image
from skimage import color as skcolor

from app.models import ColorSpace
from services.errors import ColorSpaceError, ImageFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_NETPBM_HEADER = re.compile(
    rb"(P[1-7])(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s"
)

# sRGB (primarias Rec. 709) -> XYZ, iluminante D65
_XYZ_FROM_RGB = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_RGB_FROM_XYZ = np.linalg.inv(_XYZ_FROM_RGB)
# blanco de referencia = suma de filas, así RGB (1,1,1) cae en a = b = 0 exactos
_WHITE_D65 = _XYZ_FROM_RGB.sum(axis=1)
_CIE_EPSILON = 216.0 / 24389.0
_CIE_KAPPA = 24389.0 / 27.0


@dataclass(frozen=True)
class RasterImage:
    """Grilla H×W×3 de valores reales con la etiqueta de su espacio de color"""

    data: np.ndarray
    colorspace: ColorSpace = ColorSpace.RGB

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ImageFormatError(f"se esperaban 3 canales, forma {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ImageFormatError(f"imagen vacía, forma {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "colorspace", ColorSpace(self.colorspace))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


def read_netpbm_header(raw: bytes) -> Tuple[str, int, int, int]:
    """
    Lee el encabezado de un archivo PNM binario.

    Returns:
        (magic, ancho, alto, maxval)
    """
    match = _NETPBM_HEADER.match(raw)
    if not match:
        raise ImageFormatError("encabezado PNM inválido")
    magic, width, height, maxval = match.groups()
    return magic.decode("ascii"), int(width), int(height), int(maxval)


def _read_head(path: Path, size: int = 4096) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read(size)
    except OSError as e:
        raise ImageFormatError(f"No se pudo leer {path}: {e}") from e


def load_image(path: PathLike) -> RasterImage:
    """
    Carga una imagen PPM (P6, 8 bits) o PNG (RGB de 8 bits).

    Args:
        path: ruta al archivo

    Returns:
        RasterImage en RGB con canales en [0, 1]

    Raises:
        ImageFormatError: archivo ilegible, profundidad no soportada o no RGB
    """
    path = Path(path)
    head = _read_head(path)

    if head[:2] == b"P6":
        _, _, _, maxval = read_netpbm_header(head)
        if maxval != 255:
            raise ImageFormatError(f"{path.name}: PPM con maxval {maxval}, solo se soporta 8 bits")
    elif head[:2] in (b"P1", b"P2", b"P4", b"P5"):
        raise ImageFormatError(f"{path.name}: imagen sin 3 canales ({head[:2].decode()})")
    elif head[:8] == PNG_SIGNATURE:
        bit_depth, color_type = head[24], head[25]
        if bit_depth != 8:
            raise ImageFormatError(f"{path.name}: PNG de {bit_depth} bits, solo se soporta 8 bits")
        if color_type != 2:
            raise ImageFormatError(f"{path.name}: PNG sin 3 canales (color type {color_type})")
    else:
        raise ImageFormatError(f"{path.name}: formato no soportado (se espera PPM P6 o PNG)")

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "RGB":
                raise ImageFormatError(f"{path.name}: modo {im.mode}, se esperaba RGB")
            pixels = np.asarray(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except (OSError, ValueError) as e:
        raise ImageFormatError(f"No se pudo decodificar {path}: {e}") from e

    logger.debug(f"🖼️ Imagen cargada {path.name}: {pixels.shape[1]}x{pixels.shape[0]}")
    return RasterImage(pixels.astype(np.float64) / 255.0, ColorSpace.RGB)


# ----------------------------------------------------------------------------
# Conversiones de color
# ----------------------------------------------------------------------------
def _srgb_to_linear(rgb: np.ndarray) -> np.ndarray:
    return np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(lin: np.ndarray) -> np.ndarray:
    lin = np.clip(lin, 0.0, None)
    return np.where(lin <= 0.0031308, lin * 12.92, 1.055 * lin ** (1.0 / 2.4) - 0.055)


def _rgb_to_xyz(rgb: np.ndarray) -> np.ndarray:
    return _srgb_to_linear(rgb) @ _XYZ_FROM_RGB.T


def _xyz_to_rgb(xyz: np.ndarray) -> np.ndarray:
    return _linear_to_srgb(xyz @ _RGB_FROM_XYZ.T)


def _xyz_to_lab(xyz: np.ndarray) -> np.ndarray:
    t = xyz / _WHITE_D65
    f = np.where(t > _CIE_EPSILON, np.cbrt(t), (_CIE_KAPPA * t + 16.0) / 116.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def _lab_to_xyz(lab: np.ndarray) -> np.ndarray:
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    cubo = f ** 3
    t = np.where(cubo > _CIE_EPSILON, cubo, (116.0 * f - 16.0) / _CIE_KAPPA)
    return t * _WHITE_D65


_FORWARD = {
    ColorSpace.RGB: lambda rgb: rgb.copy(),
    ColorSpace.LAB: lambda rgb: _xyz_to_lab(_rgb_to_xyz(rgb)),
    ColorSpace.XYZ: _rgb_to_xyz,
    ColorSpace.YUV: skcolor.rgb2yuv,
    ColorSpace.HSV: skcolor.rgb2hsv,
}

_BACKWARD = {
    ColorSpace.RGB: lambda rgb: rgb.copy(),
    ColorSpace.LAB: lambda lab: _xyz_to_rgb(_lab_to_xyz(lab)),
    ColorSpace.XYZ: _xyz_to_rgb,
    ColorSpace.YUV: skcolor.yuv2rgb,
    ColorSpace.HSV: skcolor.hsv2rgb,
}


def _as_colorspace(target) -> ColorSpace:
    try:
        return ColorSpace(target)
    except ValueError as e:
        raise ColorSpaceError(f"espacio de color no soportado: {target!r}") from e


def convert_color(img: RasterImage, target) -> RasterImage:
    """
    Convierte una imagen RGB al espacio de color pedido.

    Args:
        img: imagen en RGB
        target: ColorSpace (o su nombre, p. ej. "Lab")

    Returns:
        Nueva RasterImage etiquetada con el espacio destino
    """
    destino = _as_colorspace(target)
    if img.colorspace != ColorSpace.RGB:
        raise ColorSpaceError(
            f"convert_color espera una imagen RGB, recibió {img.colorspace.value}"
        )
    return RasterImage(_FORWARD[destino](img.data), destino)


def convert_back(img: RasterImage) -> RasterImage:
    """Transformación inversa a RGB desde cualquiera de los espacios soportados"""
    return RasterImage(_BACKWARD[img.colorspace](img.data), ColorSpace.RGB)


def luminance(img: RasterImage) -> np.ndarray:
    """Canal L de Lab (H×W)"""
    if img.colorspace == ColorSpace.LAB:
        return np.array(img.data[..., 0])
    rgb = img if img.colorspace == ColorSpace.RGB else convert_back(img)
    return convert_color(rgb, ColorSpace.LAB).data[..., 0]


def color_scale_factor(max_eigenvalues: Sequence[float]) -> float:
    """
    Factor c = 1/sqrt(promedio de los autovalores máximos) de un espacio de color.

    Raises:
        ValueError: lista vacía o algún autovalor no positivo
    """
    valores = np.asarray(list(max_eigenvalues), dtype=np.float64)
    if valores.size == 0:
        raise ValueError("color_scale_factor necesita al menos un autovalor")
    if np.any(valores <= 0):
        raise ValueError(f"autovalores no positivos: {valores[valores <= 0].tolist()}")
    return float(1.0 / np.sqrt(valores.mean()))


def save_rendering(labels, img: RasterImage, path: PathLike) -> Path:
    """
    Guarda un PNG donde cada región se pinta con su color RGB medio.

    Args:
        labels: LabelMap o arreglo H×W de etiquetas
        img: imagen original (cualquier espacio de color)
        path: archivo de salida
    """
    etiquetas = np.asarray(getattr(labels, "labels", labels))
    rgb = img if img.colorspace == ColorSpace.RGB else convert_back(img)
    if etiquetas.shape != rgb.shape:
        raise ImageFormatError(
            f"el mapa de etiquetas {etiquetas.shape} no coincide con la imagen {rgb.shape}"
        )

    _, planas = np.unique(etiquetas.ravel(), return_inverse=True)
    conteo = np.bincount(planas).astype(np.float64)
    pintada = np.empty_like(rgb.data)
    for canal in range(3):
        medias = np.bincount(planas, weights=rgb.data[..., canal].ravel()) / conteo
        pintada[..., canal] = medias[planas].reshape(etiquetas.shape)

    path = Path(path)
    salida = np.clip(np.rint(pintada * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(salida).save(path, format="PNG")
    logger.info(f"✅ Render guardado en {path}")
    return path
