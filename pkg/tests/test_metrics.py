from itertools import combinations

import numpy as np
import pytest

from app.models import MetricName
from services.errors import ImageFormatError
from services.label_io import LabelMap
from services.metrics import (
    boundary_map,
    default_tolerance,
    evaluate,
    gfm,
    human_consistency,
    pri,
    voi,
)


def _map(values):
    return LabelMap(np.array(values, dtype=np.int64))


def _split(size=16, column=None, row=None):
    labels = np.zeros((size, size), dtype=np.int64)
    if column is not None:
        labels[:, column:] = 1
    if row is not None:
        labels[row:, :] += 2
    return LabelMap(labels)


def _pri_por_pares(a, b):
    a, b = a.ravel(), b.ravel()
    pares = list(combinations(range(a.size), 2))
    consistentes = sum((a[i] == a[j]) == (b[i] == b[j]) for i, j in pares)
    return consistentes / len(pares)


# ----------------------------------------------------------------------------
# PRI
# ----------------------------------------------------------------------------
def test_pri_examples():
    assert pri(_map([[0, 0, 1]]), [_map([[0, 1, 1]])]).value == pytest.approx(1 / 3)
    assert pri(_map([[0, 1], [2, 3]]), [_map([[0, 0], [0, 0]])]).value == 0.0
    mismo = _split(column=5)
    assert pri(mismo, [mismo]).value == 1.0


def test_pri_averages_over_truths():
    test = _map([[0, 0, 1]])
    resultado = pri(test, [_map([[0, 1, 1]]), test])
    assert resultado.name == MetricName.PRI
    assert resultado.per_ground_truth == pytest.approx([1 / 3, 1.0])
    assert resultado.value == pytest.approx(2 / 3)


def test_pri_matches_all_pairs_and_is_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.integers(0, 4, (8, 8))
        b = rng.integers(0, 3, (8, 8))
        directo = pri(LabelMap(a), [LabelMap(b)]).value
        assert directo == pytest.approx(_pri_por_pares(a, b), abs=1e-12)
        assert directo == pytest.approx(pri(LabelMap(b), [LabelMap(a)]).value, abs=1e-12)


# ----------------------------------------------------------------------------
# VOI
# ----------------------------------------------------------------------------
def test_voi_examples():
    assert voi(_map([[0, 0, 1, 1]]), [_map([[0, 1, 0, 1]])]).value == pytest.approx(2.0)
    assert voi(_split(column=3), [_split(column=3)]).value == pytest.approx(0.0, abs=1e-12)


def test_voi_of_a_refinement():
    # H(prueba) = 1.5, H(referencia) = 1, I = 1
    prueba = _map([[0, 1], [2, 2]])
    referencia = _map([[0, 0], [1, 1]])
    assert voi(prueba, [referencia]).value == pytest.approx(0.5)


def test_voi_is_symmetric_and_nonnegative():
    rng = np.random.default_rng(1)
    for _ in range(30):
        a = LabelMap(rng.integers(0, 5, (6, 6)))
        b = LabelMap(rng.integers(0, 2, (6, 6)))
        ab = voi(a, [b]).value
        assert ab >= 0.0
        assert ab == pytest.approx(voi(b, [a]).value, abs=1e-12)


# ----------------------------------------------------------------------------
# GFM
# ----------------------------------------------------------------------------
def test_boundary_map_marks_both_sides():
    borde = boundary_map(_map([[0, 0, 1, 1]]))
    np.testing.assert_array_equal(borde, [[False, True, True, False]])


def test_default_tolerance():
    assert default_tolerance((300, 400)) == pytest.approx(0.0075 * 500)


def test_gfm_identical_maps():
    mapa = _split(column=8, row=4)
    resultado = gfm(mapa, [mapa])
    assert (resultado.precision, resultado.recall, resultado.value) == (1.0, 1.0, 1.0)


def test_gfm_without_test_boundaries():
    resultado = gfm(_split(), [_split(column=8)], tolerance_px=2)
    assert resultado.recall == 0.0
    assert resultado.value == 0.0


def test_gfm_without_any_boundaries():
    assert gfm(_split(), [_split()], tolerance_px=1).value == 1.0


def test_gfm_offset_boundary_within_tolerance():
    resultado = gfm(_split(column=8), [_split(column=9)], tolerance_px=2)
    assert resultado.precision == 1.0
    assert resultado.recall == 1.0

    lejos = gfm(_split(column=4), [_split(column=12)], tolerance_px=2)
    assert lejos.value == 0.0


def test_gfm_averages_recall_over_truths():
    vertical = _split(column=8)
    cuadrantes = _split(column=8, row=8)
    resultado = gfm(vertical, [vertical, cuadrantes], tolerance_px=0)

    # 32 píxeles de borde en la vertical, 60 en los cuadrantes (32 + 32 − 4)
    assert resultado.per_ground_truth == pytest.approx([1.0, 32 / 60])
    assert resultado.precision == 1.0
    assert resultado.recall == pytest.approx((1.0 + 32 / 60) / 2)
    assert resultado.recall != pytest.approx(64 / 92)
    assert resultado.value == pytest.approx(2 * resultado.recall / (1 + resultado.recall))


def test_gfm_ignores_label_ids():
    rng = np.random.default_rng(2)
    test = rng.integers(0, 3, (10, 10))
    truth = _split(size=10, column=4, row=6)
    permutado = np.array([2, 0, 1])[test]
    assert gfm(LabelMap(test), [truth], 1.5).value == gfm(LabelMap(permutado), [truth], 1.5).value


def test_gfm_rejects_negative_tolerance():
    with pytest.raises(ValueError):
        gfm(_split(), [_split()], tolerance_px=-1)


# ----------------------------------------------------------------------------
# Agregados y errores
# ----------------------------------------------------------------------------
def test_evaluate_selected_metrics():
    mapa = _split(column=8)
    resultados = evaluate(mapa, [mapa], ["pri", MetricName.VOI])
    assert set(resultados) == {MetricName.PRI, MetricName.VOI}
    assert resultados[MetricName.PRI].value == 1.0
    assert resultados[MetricName.VOI].value == pytest.approx(0.0, abs=1e-12)


def test_human_consistency_leaves_one_out():
    a, b = _split(column=8), _split(column=9)
    resultado = human_consistency([a, a, b], MetricName.PRI)
    assert len(resultado.per_ground_truth) == 3
    # las dos copias de `a` tienen una referencia idéntica entre las otras dos
    assert resultado.per_ground_truth[0] == pytest.approx(resultado.per_ground_truth[1])
    assert resultado.per_ground_truth[2] < 1.0

    with pytest.raises(ValueError):
        human_consistency([a], MetricName.VOI)


def test_maps_must_match():
    with pytest.raises(ValueError):
        pri(_split(), [])
    with pytest.raises(ImageFormatError):
        voi(_split(size=16), [_split(size=8)])
