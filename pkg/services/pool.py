"""
Pool de procesos acotado para correr trabajos independientes por imagen.
"""

import logging
from multiprocessing import Pool
from typing import Callable, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def run_jobs(func: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> List[R]:
    """
    Aplica `func` a cada elemento con hasta `jobs` procesos.

    Los resultados vuelven en el orden de `items`. Con jobs <= 1 (o un solo
    elemento) corre en el proceso actual. `func` tiene que ser una función
    de módulo para poder serializarse.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    procesos = min(jobs, len(items))
    logger.info(f"Ejecutando {len(items)} trabajos con {procesos} procesos")
    with Pool(processes=procesos) as pool:
        return pool.map(func, items, chunksize=1)
