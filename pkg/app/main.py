"""
Línea de comandos: python -m app.main <subcomando> [flags]

Subcomandos:
    segment           segmenta una imagen (ε fijo o predicho por un modelo)
    train-epsilon     entrena el regresor de ε sobre un directorio
    eval              evalúa segmentaciones contra referencias humanas
    colorspace-study  ranking de compresibilidad de espacios de color
    estimate-prior    estima el prior de códigos de diferencia

Códigos de salida: 0 éxito, 1 error de ejecución, 2 flags inválidos.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app.config import configure_logging, get_settings
from app.models import BoundaryCoding, MetricName
from services import benchmark
from services.boundary_coding import resolve_prior, save_prior
from services.epsilon_model import contrast_features, load_model, predict_epsilon, save_model
from services.errors import TbesError
from services.imagecore import load_image, save_rendering
from services.label_io import save_label_map
from services.segmenter import grid_superpixels, load_superpixels, tbes_segment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1


def _positive_float(value: str) -> float:
    try:
        numero = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"no es un número: {value}")
    if numero <= 0:
        raise argparse.ArgumentTypeError(f"debe ser positivo: {value}")
    return numero


def _positive_int(value: str) -> int:
    try:
        numero = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"no es un entero: {value}")
    if numero < 1:
        raise argparse.ArgumentTypeError(f"debe ser >= 1: {value}")
    return numero


def _odd_window(value: str) -> int:
    try:
        numero = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"no es un entero: {value}")
    if numero < 1 or numero % 2 == 0:
        raise argparse.ArgumentTypeError(f"debe ser impar >= 1: {value}")
    return numero


def _metric_list(value: str) -> List[MetricName]:
    try:
        return [MetricName(v.strip().lower()) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"métricas válidas: pri, voi, gfm (recibido {value})")


# ----------------------------------------------------------------------------
# Subcomandos
# ----------------------------------------------------------------------------
def cmd_segment(args) -> int:
    settings = get_settings()
    img = load_image(args.input)

    if args.superpixels:
        superpixels = load_superpixels(args.superpixels, img.shape)
    else:
        superpixels = grid_superpixels(img, args.grid_cell or settings.grid_cell)

    if args.model:
        modelo = load_model(args.model)
        epsilon = predict_epsilon(modelo, contrast_features(img))
        logger.info(f"ε predicho por {args.model}: {epsilon:.2f}")
    else:
        epsilon = args.epsilon

    labels, report = tbes_segment(
        img,
        superpixels,
        epsilon,
        w_max=args.wmax or settings.w_max,
        dimension=args.pca_dim or settings.pca_dim,
        prior=resolve_prior(args.prior),
        coding=BoundaryCoding(args.boundary_coding),
    )

    out = Path(args.out) if args.out else Path(args.input).with_name(f"{Path(args.input).stem}_seg.pgm")
    report_path = Path(args.report) if args.report else out.with_suffix(".json")
    save_label_map(labels, out)
    benchmark.write_atomic(report_path, report.model_dump_json(indent=2) + "\n")
    if args.render:
        save_rendering(labels, img, args.render)

    print(f"{out}: {report.regions} regiones, {report.merges} fusiones, "
          f"{report.bits_total:.2f} bits (ε={epsilon:g})")
    return EXIT_OK


def cmd_train_epsilon(args) -> int:
    settings = get_settings()
    reg = benchmark.train_from_directory(
        args.images,
        args.truths,
        metric=MetricName(args.metric),
        regression=args.regression,
        superpixels_dir=args.superpixels,
        w_max=args.wmax or settings.w_max,
        dimension=args.pca_dim or settings.pca_dim,
        grid_cell=args.grid_cell or settings.grid_cell,
        prior=resolve_prior(args.prior),
        jobs=args.jobs or settings.jobs,
    )
    save_model(reg, args.out)
    print(f"{args.out}: θ={reg.theta} ({reg.trained_on} imágenes, métrica {reg.metric.value})")
    return EXIT_OK


def cmd_eval(args) -> int:
    summary = benchmark.evaluate_directory(
        args.test, args.truths, args.metrics, args.tolerance, human=args.human
    )
    if not summary.images:
        logger.error(f"❌ Ninguna segmentación de {args.test} tiene referencias en {args.truths}")
        return EXIT_FAILURE
    texto = summary.model_dump_json(indent=2, exclude_none=True)
    if args.json:
        benchmark.write_atomic(args.json, texto + "\n")
    print(texto)
    print()
    print(benchmark.summary_table(summary))
    return EXIT_OK


def cmd_colorspace_study(args) -> int:
    settings = get_settings()
    scores = benchmark.colorspace_study(
        args.images,
        args.truths,
        epsilon=args.epsilon,
        window_size=args.wmax or settings.w_max,
        dimension=args.pca_dim or settings.pca_dim,
    )
    print(f"ε = {args.epsilon:g}")
    print(benchmark.colorspace_table(scores))
    if args.plot:
        benchmark.colorspace_plot(scores, args.plot, args.epsilon)
    return EXIT_OK


def cmd_estimate_prior(args) -> int:
    prior = benchmark.prior_from_directory(args.truths)
    save_prior(prior, args.out)
    print(" ".join(f"{p:.3f}" for p in prior.probabilities))
    return EXIT_OK


# ----------------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tbes",
        description="Segmentación de imágenes por codificación de textura y bordes (TBES)",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    def _pipeline_flags(p, with_prior=True):
        p.add_argument("--wmax", type=_odd_window, default=None, help="ventana más grande (TBES_WMAX)")
        p.add_argument("--pca-dim", type=_positive_int, default=None, help="dimensión D (TBES_PCA_DIM)")
        if with_prior:
            p.add_argument("--prior", default=None, help="prior JSON (TBES_PRIOR_PATH)")

    seg = sub.add_parser("segment", help="segmenta una imagen")
    seg.add_argument("--input", required=True, help="imagen PPM (P6) o PNG")
    grupo = seg.add_mutually_exclusive_group(required=True)
    grupo.add_argument("--epsilon", type=_positive_float, help="distorsión ε")
    grupo.add_argument("--model", help="modelo JSON para predecir ε")
    seg.add_argument("--superpixels", default=None, help="PGM de superpíxeles")
    seg.add_argument("--grid-cell", type=_positive_int, default=None, help="celda de la grilla si no hay superpíxeles")
    seg.add_argument("--out", default=None, help="PGM de salida")
    seg.add_argument("--report", default=None, help="reporte JSON")
    seg.add_argument("--render", default=None, help="PNG con el color medio de cada región")
    seg.add_argument(
        "--boundary-coding", choices=[c.value for c in BoundaryCoding], default=BoundaryCoding.ADAPTIVE.value
    )
    _pipeline_flags(seg)
    seg.set_defaults(func=cmd_segment)

    train = sub.add_parser("train-epsilon", help="entrena el regresor de ε")
    train.add_argument("--images", required=True)
    train.add_argument("--truths", required=True)
    train.add_argument("--metric", required=True, choices=[m.value for m in MetricName])
    train.add_argument("--out", required=True)
    train.add_argument("--regression", choices=["quadratic", "classical"], default="quadratic")
    train.add_argument("--superpixels", default=None, help="directorio de PGM <id>.pgm")
    train.add_argument("--grid-cell", type=_positive_int, default=None)
    train.add_argument("--jobs", type=_positive_int, default=None, help="procesos en paralelo (TBES_JOBS)")
    _pipeline_flags(train)
    train.set_defaults(func=cmd_train_epsilon)

    ev = sub.add_parser("eval", help="evalúa segmentaciones")
    ev.add_argument("--test", required=True, help="directorio de PGM <id>.pgm")
    ev.add_argument("--truths", required=True)
    ev.add_argument("--metrics", type=_metric_list, default=list(MetricName), help="p. ej. pri,voi,gfm")
    ev.add_argument("--tolerance", type=float, default=None, help="tolerancia GFM en píxeles")
    ev.add_argument("--human", action="store_true", help="agrega la consistencia humana")
    ev.add_argument("--json", default=None, help="guarda el resumen JSON")
    ev.set_defaults(func=cmd_eval)

    study = sub.add_parser("colorspace-study", help="ranking de espacios de color")
    study.add_argument("--images", required=True)
    study.add_argument("--truths", required=True)
    study.add_argument("--epsilon", type=_positive_float, default=benchmark.STUDY_EPSILON)
    study.add_argument("--plot", default=None, help="HTML con el gráfico de barras")
    _pipeline_flags(study, with_prior=False)
    study.set_defaults(func=cmd_colorspace_study)

    prior = sub.add_parser("estimate-prior", help="estima el prior de códigos de diferencia")
    prior.add_argument("--truths", required=True)
    prior.add_argument("--out", required=True)
    prior.set_defaults(func=cmd_estimate_prior)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # SystemExit(2) en flags inválidos

    try:
        configure_logging(args.log_level)
        return args.func(args)
    except (TbesError, OSError, ValueError) as e:
        logger.error(f"❌ {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
