"""
Grafo de adyacencia de regiones (RAG) con cachés de longitudes de código.

Los nodos son ids de región con su cantidad de píxeles y su caja
envolvente; las aristas unen regiones que comparten un par de píxeles
4-vecinos. Las longitudes de textura (por tamaño de ventana), de borde y
las ganancias de fusión se cachean por versión de región.
"""

import logging
from typing import Dict, Iterable, Optional, Set, Tuple

import networkx as nx
import numpy as np
from scipy import ndimage

from app.models import BoundaryCoding, ChainCodePrior, CodingParams
from services.boundary_coding import BSD_PRIOR, mask_boundary_length
from services.errors import DegenerateRegionError, RegionError
from services.features import FeatureField, gaussian_stats, interior_of_mask
from services.label_io import LabelMap
from services.texture_coding import region_coding_length

logger = logging.getLogger(__name__)

Box = Tuple[int, int, int, int]  # fila0, fila1, columna0, columna1 (exclusivos al final)


def edges_from_labels(labels) -> Set[Tuple[int, int]]:
    """Pares (i, j), i < j, de regiones con algún par de píxeles 4-vecinos"""
    etiquetas = np.asarray(getattr(labels, "labels", labels))
    izquierda, derecha = etiquetas[:, :-1].ravel(), etiquetas[:, 1:].ravel()
    arriba, abajo = etiquetas[:-1, :].ravel(), etiquetas[1:, :].ravel()
    a = np.concatenate([izquierda, arriba])
    b = np.concatenate([derecha, abajo])
    distintos = a != b
    if not distintos.any():
        return set()
    pares = np.stack([np.minimum(a[distintos], b[distintos]), np.maximum(a[distintos], b[distintos])], axis=1)
    return {(int(i), int(j)) for i, j in np.unique(pares, axis=0)}


class RegionAdjacencyGraph:
    """
    RAG sobre un mapa de etiquetas canónico que se va fusionando.

    Args:
        labels: mapa canónico (ids densos, regiones 4-conexas)
        fields: FeatureField por tamaño de ventana
        epsilon: distorsión ε
        prior: prior de códigos de diferencia
        coding: codificación de bordes
    """

    def __init__(
        self,
        labels: LabelMap,
        fields: Dict[int, FeatureField],
        epsilon: float,
        prior: ChainCodePrior = BSD_PRIOR,
        coding: BoundaryCoding = BoundaryCoding.ADAPTIVE,
    ):
        if not fields:
            raise ValueError("se necesita al menos un FeatureField")
        for w, field in fields.items():
            if field.shape != labels.shape:
                raise ValueError(f"FeatureField w={w} {field.shape} no coincide con {labels.shape}")

        self.labels = np.array(labels.labels, dtype=np.int64)
        self.fields = fields
        self.epsilon = float(epsilon)
        self.prior = prior
        self.coding = BoundaryCoding(coding)
        self.margin = max(fields) // 2
        self.params = {
            w: CodingParams(epsilon=self.epsilon, window_size=w, dimension=field.dimension)
            for w, field in fields.items()
        }

        self.graph = nx.Graph()
        self.version: Dict[int, int] = {}
        for indice, caja in enumerate(ndimage.find_objects(self.labels + 1)):
            if caja is None:
                continue
            conteo = int(np.count_nonzero(self.labels[caja] == indice))
            self.graph.add_node(
                indice,
                pixel_count=conteo,
                box=(caja[0].start, caja[0].stop, caja[1].start, caja[1].stop),
            )
            self.version[indice] = 0
        self.graph.add_edges_from(edges_from_labels(self.labels))

        self._texture: Dict[Tuple[int, int], Optional[float]] = {}
        self._boundary: Dict[int, float] = {}
        self._gains: Dict[Tuple[int, int], Tuple[int, int, float]] = {}

    # ------------------------------------------------------------------
    # consultas
    # ------------------------------------------------------------------
    @property
    def regions(self) -> Iterable[int]:
        return sorted(self.graph.nodes)

    @property
    def num_regions(self) -> int:
        return self.graph.number_of_nodes()

    def cached_pairs(self) -> Set[Tuple[int, int]]:
        return set(self._gains)

    def edges(self) -> Set[Tuple[int, int]]:
        return {(min(i, j), max(i, j)) for i, j in self.graph.edges}

    def neighbors(self, region: int):
        return sorted(self.graph.neighbors(region))

    def is_current(self, region: int, version: int) -> bool:
        return self.version.get(region) == version

    def _check_region(self, region: int) -> None:
        if region not in self.graph:
            raise RegionError(f"la región {region} no existe en el RAG")

    def _union_box(self, ids: Iterable[int]) -> Box:
        cajas = [self.graph.nodes[i]["box"] for i in ids]
        return (
            min(c[0] for c in cajas),
            max(c[1] for c in cajas),
            min(c[2] for c in cajas),
            max(c[3] for c in cajas),
        )

    def _crop(self, ids: Tuple[int, ...], margin: int):
        f0, f1, c0, c1 = self._union_box(ids)
        alto, ancho = self.labels.shape
        caja = (
            slice(max(f0 - margin, 0), min(f1 + margin, alto)),
            slice(max(c0 - margin, 0), min(c1 + margin, ancho)),
        )
        etiquetas = self.labels[caja]
        mask = etiquetas == ids[0]
        for otro in ids[1:]:
            mask |= etiquetas == otro
        return caja, mask

    # ------------------------------------------------------------------
    # longitudes de código
    # ------------------------------------------------------------------
    def _texture_of(self, ids: Tuple[int, ...], w: int) -> Optional[float]:
        caja, mask = self._crop(ids, self.margin)
        interior = interior_of_mask(mask, w)
        vectors = self.fields[w].per_pixel[caja][interior]
        if vectors.shape[0] == 0:
            return None
        pixel_count = sum(self.graph.nodes[i]["pixel_count"] for i in ids)
        stats = gaussian_stats(vectors, ids[0], pixel_count, w)
        return region_coding_length(stats, self.params[w])

    def _boundary_of(self, ids: Tuple[int, ...]) -> float:
        _, mask = self._crop(ids, 0)
        return mask_boundary_length(mask, self.prior, self.coding)

    def texture_bits(self, region: int, w: int) -> Optional[float]:
        """L_w(R) o None si la región es degenerada en w"""
        self._check_region(region)
        clave = (region, w)
        if clave not in self._texture:
            self._texture[clave] = self._texture_of((region,), w)
        return self._texture[clave]

    def boundary_bits(self, region: int) -> float:
        self._check_region(region)
        if region not in self._boundary:
            self._boundary[region] = self._boundary_of((region,))
        return self._boundary[region]

    def is_degenerate(self, region: int, w: int) -> bool:
        return self.texture_bits(region, w) is None

    def largest_nondegenerate_window(self, region: int) -> int:
        for w in self.windows:
            if not self.is_degenerate(region, w):
                return w
        raise DegenerateRegionError(f"la región {region} es degenerada incluso con w={self.windows[-1]}")

    @property
    def windows(self):
        return sorted(self.fields, reverse=True)

    def charged_texture(self, region: int) -> float:
        """L(R) en su mayor ventana no degenerada: lo que la región aporta al total"""
        return self.texture_bits(region, self.largest_nondegenerate_window(region))

    def _charged_union(self, ids: Tuple[int, ...], desde: int) -> float:
        # I_w(Ri ∪ Rj) ⊇ I_w(Ri), así que la unión no baja de `desde`
        for w in self.windows:
            if w < desde:
                break
            texture = self._texture_of(ids, w)
            if texture is not None:
                return texture
        raise DegenerateRegionError(f"la unión {ids} es degenerada desde w={desde}")

    def total_bits(self) -> Tuple[float, float]:
        """(textura, borde) de la partición actual con cada región en su mayor ventana no degenerada"""
        texture = sum(self.charged_texture(r) for r in self.regions)
        boundary = sum(self.boundary_bits(r) for r in self.regions)
        return texture, boundary

    def merge_gain(self, i: int, j: int, w: int) -> float:
        """
        ΔL = L(Ri) + L(Rj) − L(Ri ∪ Rj) + ½·(B(Ri) + B(Rj) − B(Ri ∪ Rj)).

        `w` decide si el par es candidato (las dos regiones no degeneradas en
        w). Cada L se toma en la mayor ventana no degenerada de su región,
        igual que en `total_bits`, así que fusionar baja el total en ΔL
        exacto. En wMax es la ganancia con las tres regiones en wMax.

        Raises:
            RegionError: regiones inexistentes o no adyacentes
            DegenerateRegionError: alguna de las dos es degenerada en w
        """
        self._check_region(i)
        self._check_region(j)
        if not self.graph.has_edge(i, j):
            raise RegionError(f"las regiones {i} y {j} no son adyacentes")
        i, j = min(i, j), max(i, j)
        if self.is_degenerate(i, w) or self.is_degenerate(j, w):
            raise DegenerateRegionError(f"par ({i}, {j}) degenerado en w={w}")

        cache = self._gains.get((i, j))
        if cache is not None and cache[0] == self.version[i] and cache[1] == self.version[j]:
            return cache[2]

        wi, wj = self.largest_nondegenerate_window(i), self.largest_nondegenerate_window(j)
        lij = self._charged_union((i, j), max(wi, wj))
        bij = self._boundary_of((i, j))
        gain = (
            self.texture_bits(i, wi) + self.texture_bits(j, wj) - lij
            + 0.5 * (self.boundary_bits(i) + self.boundary_bits(j) - bij)
        )

        self._gains[(i, j)] = (self.version[i], self.version[j], gain)
        return gain

    # ------------------------------------------------------------------
    # fusión
    # ------------------------------------------------------------------
    def merge(self, i: int, j: int) -> int:
        """Fusiona dos regiones adyacentes; sobrevive el id menor"""
        self._check_region(i)
        self._check_region(j)
        if not self.graph.has_edge(i, j):
            raise RegionError(f"las regiones {i} y {j} no son adyacentes")
        keep, gone = min(i, j), max(i, j)

        for region in (keep, gone):
            for vecino in self.graph.neighbors(region):
                self._gains.pop((min(region, vecino), max(region, vecino)), None)

        f0, f1, c0, c1 = self.graph.nodes[gone]["box"]
        sub = self.labels[f0:f1, c0:c1]
        sub[sub == gone] = keep

        nodo = self.graph.nodes[keep]
        nodo["box"] = self._union_box((keep, gone))
        nodo["pixel_count"] += self.graph.nodes[gone]["pixel_count"]
        for vecino in list(self.graph.neighbors(gone)):
            if vecino != keep:
                self.graph.add_edge(keep, vecino)
        self.graph.remove_node(gone)

        del self.version[gone]
        self.version[keep] += 1
        for w in self.fields:
            self._texture.pop((keep, w), None)
            self._texture.pop((gone, w), None)
        self._boundary.pop(keep, None)
        self._boundary.pop(gone, None)

        logger.debug(f"🔗 Fusión {gone} -> {keep}, quedan {self.num_regions} regiones")
        return keep

    def label_map(self) -> LabelMap:
        """Mapa actual con ids re-densificados en orden ascendente"""
        return LabelMap.canonical(self.labels)
