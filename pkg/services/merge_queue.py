"""
Cola de prioridad de fusiones (máximo ΔL primero) con invalidación perezosa.

Cada entrada guarda la versión de sus dos regiones al momento de
calcularse; al fusionar, la región sobreviviente cambia de versión y sus
entradas viejas se descartan recién cuando llegan al tope.
"""

import heapq
from typing import Callable, List, Optional, Tuple

Entry = Tuple[float, int, int, int, int]


class MergeQueue:
    def __init__(self):
        self._heap: List[Entry] = []

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, gain: float, i: int, j: int, version_i: int, version_j: int) -> None:
        if i > j:
            i, j, version_i, version_j = j, i, version_j, version_i
        # desempate: menor par (i, j)
        heapq.heappush(self._heap, (-gain, i, j, version_i, version_j))

    def _discard_stale(self, is_current: Callable[[int, int], bool]) -> None:
        while self._heap:
            _, i, j, vi, vj = self._heap[0]
            if is_current(i, vi) and is_current(j, vj):
                return
            heapq.heappop(self._heap)

    def peek(self, is_current: Callable[[int, int], bool]) -> Optional[Tuple[float, int, int]]:
        """Mejor entrada vigente sin sacarla, o None si no queda ninguna"""
        self._discard_stale(is_current)
        if not self._heap:
            return None
        neg_gain, i, j, _, _ = self._heap[0]
        return -neg_gain, i, j

    def pop(self, is_current: Callable[[int, int], bool]) -> Optional[Tuple[float, int, int]]:
        self._discard_stale(is_current)
        if not self._heap:
            return None
        neg_gain, i, j, _, _ = heapq.heappop(self._heap)
        return -neg_gain, i, j

    def clear(self) -> None:
        self._heap.clear()
