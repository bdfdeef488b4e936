"""
Harness sobre directorios de imágenes y segmentaciones de referencia:
evaluación, entrenamiento de ε, estudio de espacios de color y estimación
del prior de bordes.

Convención de archivos: una imagen `<id>.ppm|.png`; sus referencias son
los PGM/PNG de `truths/<id>/` o, si no existe esa carpeta, los archivos
`truths/<id>.pgm` y `truths/<id>_*.pgm`.
"""

import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import plotly.express as px

from app.models import (
    BenchmarkSummary,
    BoundaryCoding,
    ChainCodePrior,
    CodingParams,
    ColorSpace,
    ColorSpaceScore,
    EpsilonRegressor,
    ImageBenchmark,
    MetricName,
)
from services import epsilon_model
from services.boundary_coding import BSD_PRIOR, estimate_prior
from services.errors import NonConvexFitError, TbesError, TrainingError
from services.features import build_feature_fields
from services.imagecore import color_scale_factor, convert_color, load_image
from services.label_io import LabelMap, load_label_map
from services.metrics import evaluate, human_consistency
from services.pool import run_jobs
from services.segmenter import load_superpixels
from services.texture_coding import coding_length_full

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

IMAGE_SUFFIXES = (".ppm", ".png")
LABEL_SUFFIXES = (".pgm", ".png")
STUDY_COLORSPACES = [ColorSpace.LAB, ColorSpace.YUV, ColorSpace.RGB, ColorSpace.XYZ, ColorSpace.HSV]
STUDY_EPSILON = 100.0


# ----------------------------------------------------------------------------
# Archivos
# ----------------------------------------------------------------------------
def list_files(directory: PathLike, suffixes: Sequence[str]) -> List[Path]:
    """Archivos con esas extensiones, ordenados por nombre"""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"No existe el directorio {directory}")
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in suffixes)


def truth_paths(truths_dir: PathLike, image_id: str) -> List[Path]:
    truths_dir = Path(truths_dir)
    carpeta = truths_dir / image_id
    if carpeta.is_dir():
        return list_files(carpeta, LABEL_SUFFIXES)
    return [
        p for p in list_files(truths_dir, LABEL_SUFFIXES)
        if p.stem == image_id or p.stem.startswith(f"{image_id}_")
    ]


def load_truths(truths_dir: PathLike, image_id: str) -> List[LabelMap]:
    return [load_label_map(p) for p in truth_paths(truths_dir, image_id)]


def write_atomic(path: PathLike, text: str) -> Path:
    """Escribe a un temporal en el mismo directorio y lo renombra"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


# ----------------------------------------------------------------------------
# Evaluación
# ----------------------------------------------------------------------------
def _mean(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def evaluate_directory(
    test_dir: PathLike,
    truths_dir: PathLike,
    metrics: Sequence[MetricName] = tuple(MetricName),
    tolerance_px: Optional[float] = None,
    human: bool = False,
) -> BenchmarkSummary:
    """
    Evalúa cada mapa de `test_dir` contra sus referencias.

    Las imágenes sin referencias se saltean con un warning.
    """
    metrics = [MetricName(m) for m in metrics]
    filas: List[ImageBenchmark] = []
    humanos: Dict[str, List[float]] = {m.value: [] for m in metrics}

    for path in list_files(test_dir, LABEL_SUFFIXES):
        image_id = path.stem
        truths = load_truths(truths_dir, image_id)
        if not truths:
            logger.warning(f"⚠️ {image_id}: sin segmentaciones de referencia, se saltea")
            continue
        inicio = time.perf_counter()
        test = load_label_map(path)
        resultados = evaluate(test, truths, metrics, tolerance_px)
        fila = ImageBenchmark(
            id=image_id,
            regions=test.num_regions,
            ground_truths=len(truths),
            seconds=time.perf_counter() - inicio,
            **{m.value: r.value for m, r in resultados.items()},
        )
        filas.append(fila)
        if human and len(truths) >= 2:
            for m in metrics:
                humanos[m.value].append(human_consistency(truths, m, tolerance_px).value)

    return summarize(filas, humanos if human else None)


def summarize(
    images: List[ImageBenchmark], human: Optional[Dict[str, List[float]]] = None
) -> BenchmarkSummary:
    """Agregado = media aritmética de cada columna presente"""
    aggregate = {}
    for campo in ("pri", "voi", "gfm", "bits", "regions", "seconds", "epsilon"):
        media = _mean(getattr(img, campo) for img in images)
        if media is not None:
            aggregate[campo] = media
    humano = None
    if human is not None:
        humano = {k: float(np.mean(v)) for k, v in human.items() if v}
    return BenchmarkSummary(images=images, aggregate=aggregate, human=humano)


def summary_table(summary: BenchmarkSummary) -> str:
    """Tabla de texto alineada con una fila por imagen más la media (y Human)"""
    columnas = ["id", "epsilon", "pri", "voi", "gfm", "bits", "regions", "seconds"]
    df = pd.DataFrame([img.model_dump() for img in summary.images], columns=columnas + ["ground_truths"])
    df = df.drop(columns=["ground_truths"])
    filas_extra = [{"id": "mean", **summary.aggregate}]
    if summary.human:
        filas_extra.append({"id": "human", **summary.human})
    df = pd.concat([df, pd.DataFrame(filas_extra, columns=columnas)], ignore_index=True)
    df = df.dropna(axis=1, how="all")
    return df.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="-")


# ----------------------------------------------------------------------------
# Entrenamiento de ε
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class TrainingJob:
    image_path: str
    truths_dir: str
    metric: MetricName
    superpixels_dir: Optional[str]
    w_max: int
    dimension: int
    grid_cell: int
    grid: Tuple[float, ...]
    prior: ChainCodePrior
    coding: BoundaryCoding


def _superpixels_for(directory: Optional[str], image_id: str, shape):
    if not directory:
        return None
    for suffix in LABEL_SUFFIXES:
        path = Path(directory) / f"{image_id}{suffix}"
        if path.exists():
            return load_superpixels(path, shape)
    logger.warning(f"⚠️ {image_id}: sin superpíxeles en {directory}, se usa la grilla")
    return None


def training_sample(job: TrainingJob) -> Optional[dict]:
    """
    Muestrea d(ε) para una imagen y ajusta su parábola.

    Returns:
        dict con id, features, samples, fit (o None si no es convexo) y
        epsilon óptimo; None si la imagen no tiene referencias
    """
    path = Path(job.image_path)
    truths = load_truths(job.truths_dir, path.stem)
    if not truths:
        logger.warning(f"⚠️ {path.stem}: sin segmentaciones de referencia, se saltea")
        return None

    img = load_image(path)
    superpixels = _superpixels_for(job.superpixels_dir, path.stem, img.shape)
    muestras = epsilon_model.sample_discrepancy(
        img, truths, job.metric, job.grid,
        superpixels=superpixels, w_max=job.w_max, dimension=job.dimension,
        grid_cell=job.grid_cell, prior=job.prior, coding=job.coding,
    )
    try:
        fit = epsilon_model.fit_quadratic(muestras)
    except NonConvexFitError as e:
        logger.warning(f"⚠️ {path.stem}: excluida del entrenamiento cuadrático ({e})")
        fit = None
    return {
        "id": path.stem,
        "features": epsilon_model.contrast_features(img),
        "samples": muestras,
        "fit": fit,
        "optimal": epsilon_model.optimal_epsilon(muestras),
    }


def train_from_directory(
    images_dir: PathLike,
    truths_dir: PathLike,
    metric: MetricName = MetricName.PRI,
    regression: str = "quadratic",
    superpixels_dir: Optional[PathLike] = None,
    w_max: int = 7,
    dimension: int = 8,
    grid_cell: int = 16,
    grid: Sequence[float] = epsilon_model.EPSILON_GRID,
    prior: ChainCodePrior = BSD_PRIOR,
    coding: BoundaryCoding = BoundaryCoding.ADAPTIVE,
    jobs: int = 1,
) -> EpsilonRegressor:
    """
    Pipeline completo: muestreo por imagen, ajustes y regresión.

    Raises:
        TrainingError: ninguna imagen utilizable
    """
    metric = MetricName(metric)
    trabajos = [
        TrainingJob(
            image_path=str(p), truths_dir=str(truths_dir), metric=metric,
            superpixels_dir=str(superpixels_dir) if superpixels_dir else None,
            w_max=w_max, dimension=dimension, grid_cell=grid_cell,
            grid=tuple(float(e) for e in grid), prior=prior, coding=coding,
        )
        for p in list_files(images_dir, IMAGE_SUFFIXES)
    ]
    resultados = [r for r in run_jobs(training_sample, trabajos, jobs) if r is not None]
    if not resultados:
        raise TrainingError(f"no hay imágenes con referencias en {images_dir}")

    if regression == "classical":
        reg = epsilon_model.train_classical(
            [r["optimal"] for r in resultados], [r["features"] for r in resultados], metric=metric
        )
    elif regression == "quadratic":
        aceptadas = [r for r in resultados if r["fit"] is not None]
        excluidas = len(resultados) - len(aceptadas)
        if excluidas:
            logger.warning(f"⚠️ {excluidas} imágenes excluidas por ajuste no convexo")
        reg = epsilon_model.train_regressor(
            [r["fit"] for r in aceptadas], [r["features"] for r in aceptadas], metric=metric
        )
    else:
        raise ValueError(f"regresión desconocida: {regression}")

    logger.info(f"📊 θ = {np.round(reg.theta, 6).tolist()} con {reg.trained_on} imágenes")
    return reg


# ----------------------------------------------------------------------------
# Estudio de espacios de color
# ----------------------------------------------------------------------------
def _region_moments(per_pixel: np.ndarray, labels: LabelMap):
    """(N, media, covarianza sesgada) de los features de cada región"""
    canonico = LabelMap.canonical(labels.labels).labels
    planas = per_pixel.reshape(-1, per_pixel.shape[2])
    ids = canonico.ravel()
    momentos = []
    for region in range(int(canonico.max()) + 1):
        vectores = planas[ids == region]
        media = vectores.mean(axis=0)
        centrados = vectores - media
        covarianza = centrados.T @ centrados / vectores.shape[0]
        momentos.append((vectores.shape[0], media, 0.5 * (covarianza + covarianza.T)))
    return momentos


def colorspace_study(
    images_dir: PathLike,
    truths_dir: PathLike,
    epsilon: float = STUDY_EPSILON,
    window_size: int = 7,
    dimension: int = 8,
    colorspaces: Sequence[ColorSpace] = STUDY_COLORSPACES,
) -> List[ColorSpaceScore]:
    """
    Compara la compresibilidad de los espacios de color.

    Para cada espacio: features PCA por imagen, factor c a partir de los
    autovalores máximos de todas las regiones de referencia, y longitud de
    código completa de cada región con (c·μ, c²·Σ). Se promedia por
    referencia dentro de cada imagen y luego sobre las imágenes.
    """
    imagenes = []
    for path in list_files(images_dir, IMAGE_SUFFIXES):
        truths = load_truths(truths_dir, path.stem)
        if not truths:
            logger.warning(f"⚠️ {path.stem}: sin segmentaciones de referencia, se saltea")
            continue
        imagenes.append((load_image(path), truths))
    if not imagenes:
        raise TrainingError(f"no hay imágenes con referencias en {images_dir}")

    puntajes = []
    for espacio in colorspaces:
        espacio = ColorSpace(espacio)
        por_imagen = []
        autovalores = []
        for img, truths in imagenes:
            field = build_feature_fields(convert_color(img, espacio), [window_size], dimension)[window_size]
            momentos = [_region_moments(field.per_pixel, gt) for gt in truths]
            for lista in momentos:
                autovalores.extend(float(np.linalg.eigvalsh(cov)[-1]) for _, _, cov in lista)
            por_imagen.append((field.dimension, momentos))

        positivos = [v for v in autovalores if v > 0]
        c = color_scale_factor(positivos) if positivos else 1.0

        bits_por_imagen = []
        for d, momentos in por_imagen:
            params = CodingParams(epsilon=epsilon, window_size=window_size, dimension=d)
            totales = [
                sum(coding_length_full(c * media, c * c * cov, n, params) for n, media, cov in lista)
                for lista in momentos
            ]
            bits_por_imagen.append(float(np.mean(totales)))
        puntajes.append((espacio, c, float(np.mean(bits_por_imagen))))
        logger.info(f"📊 {espacio.value}: c={c:.4g}, {puntajes[-1][2]:.1f} bits por imagen")

    orden = sorted(puntajes, key=lambda p: p[2])
    return [
        ColorSpaceScore(colorspace=espacio, scale_factor=c, mean_bits=bits, rank=rank)
        for rank, (espacio, c, bits) in enumerate(orden, start=1)
    ]


def colorspace_table(scores: Sequence[ColorSpaceScore]) -> str:
    df = pd.DataFrame([s.model_dump(mode="json") for s in scores])
    return df[["rank", "colorspace", "mean_bits", "scale_factor"]].to_string(
        index=False, float_format=lambda v: f"{v:.4f}"
    )


def colorspace_plot(scores: Sequence[ColorSpaceScore], path: PathLike, epsilon: float = STUDY_EPSILON) -> Path:
    """Gráfico de barras HTML del ranking"""
    df = pd.DataFrame([s.model_dump(mode="json") for s in scores])
    fig = px.bar(
        df, x="colorspace", y="mean_bits", text="rank",
        title=f"Longitud de código promedio por imagen (ε={epsilon:g})",
        labels={"colorspace": "Espacio de color", "mean_bits": "bits"},
    )
    path = Path(path)
    fig.write_html(str(path))
    logger.info(f"✅ Gráfico guardado en {path}")
    return path


# ----------------------------------------------------------------------------
# Prior de bordes
# ----------------------------------------------------------------------------
def prior_from_directory(truths_dir: PathLike) -> ChainCodePrior:
    """Estima el prior con todos los mapas de referencia (recursivo)"""
    truths_dir = Path(truths_dir)
    if not truths_dir.is_dir():
        raise FileNotFoundError(f"No existe el directorio {truths_dir}")
    paths = sorted(p for p in truths_dir.rglob("*") if p.is_file() and p.suffix.lower() in LABEL_SUFFIXES)
    if not paths:
        raise TrainingError(f"no hay mapas de referencia en {truths_dir}")
    mapas = []
    for p in paths:
        try:
            mapas.append(load_label_map(p))
        except TbesError as e:
            logger.warning(f"⚠️ {p.name}: {e}")
    return estimate_prior(mapas)
