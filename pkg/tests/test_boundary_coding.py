import numpy as np
import pytest
from scipy import ndimage

from app.config import get_settings
from app.models import BoundaryCoding, ChainCodePrior
from services.boundary_coding import (
    BSD_PRIOR,
    P_FLOOR,
    ChainCodeSequence,
    _moore_trace,
    boundary_bits,
    difference_codes,
    difference_histogram,
    entropy_boundary_length,
    estimate_prior,
    freeman_length,
    load_prior,
    region_boundary_length,
    resolve_prior,
    save_prior,
    trace_boundaries,
    trace_mask_boundaries,
)
from services.errors import RegionError, TbesError, TracingError, TrainingError
from services.label_io import LabelMap
from tests.synthetic import random_blob, rectangles_map

UNIFORM = ChainCodePrior.normalized([1] * 8)


def _borde_4(mask):
    """Píxeles de la máscara con algún 4-vecino fuera (el exterior del arreglo cuenta)"""
    marco = np.pad(mask, 1)
    interior = marco[:-2, 1:-1] & marco[2:, 1:-1] & marco[1:-1, :-2] & marco[1:-1, 2:]
    return {tuple(p) for p in np.argwhere(mask & ~interior)}


# ----------------------------------------------------------------------------
# Trazado
# ----------------------------------------------------------------------------
def test_horizontal_bar():
    (seq,) = trace_mask_boundaries(np.ones((1, 3), dtype=bool))
    assert seq.start == (0, 0)
    assert seq.codes == (0, 0, 4, 4)


def test_square_goes_clockwise():
    labels = np.zeros((6, 6), dtype=np.int64)
    labels[1:5, 1:5] = 1
    (seq,) = trace_boundaries(labels, 1)

    assert seq.start == (1, 1)
    assert seq.codes == (0, 0, 0, 6, 6, 6, 4, 4, 4, 2, 2, 2)
    assert freeman_length(seq) == 36.0


def test_single_pixel_has_no_codes():
    (seq,) = trace_mask_boundaries(np.ones((1, 1), dtype=bool))
    assert seq.length == 0
    assert region_boundary_length(LabelMap(np.array([[0, 1], [1, 1]])), 0) == 0.0


def test_ring_has_outer_and_hole_contours():
    mask = np.ones((3, 3), dtype=bool)
    mask[1, 1] = False

    exterior, agujero = trace_mask_boundaries(mask, origin=(10, 20))

    assert exterior.start == (10, 20)
    assert exterior.length == 8
    assert agujero.length == 4
    assert agujero.start == (10, 21)
    assert boundary_bits([exterior, agujero], coding=BoundaryCoding.FREEMAN) == 36.0
    for seq in (exterior, agujero):
        assert seq.pixels()[-1] == seq.start


def test_trace_visits_exactly_the_boundary_of_random_blobs():
    rng = np.random.default_rng(123)
    for _ in range(200):
        lado = int(rng.integers(4, 33))
        mask = random_blob(rng, lado, int(rng.integers(1, lado * lado // 2)))
        (seq,) = trace_mask_boundaries(mask)

        recorrido = seq.pixels()
        assert recorrido[-1] == seq.start
        assert all(mask[f, c] for f, c in recorrido)
        assert set(recorrido) == _borde_4(mask)

        dibujada = np.zeros_like(mask)
        dibujada[tuple(np.array(recorrido).T)] = True
        np.testing.assert_array_equal(ndimage.binary_fill_holes(dibujada), mask)


def test_trace_errors():
    labels = np.array([
        [1, 0, 1],
        [0, 0, 0],
    ])
    with pytest.raises(RegionError):
        trace_boundaries(labels, 1)
    with pytest.raises(RegionError):
        trace_boundaries(labels, 5)
    with pytest.raises(RegionError):
        trace_mask_boundaries(np.zeros((2, 2), dtype=bool))


def test_trace_that_does_not_close_is_a_domain_error():
    marco = np.pad(np.ones((3, 3), dtype=bool), 1)
    with pytest.raises(TracingError) as e:
        _moore_trace(marco, (1, 1), backtrack=4, max_steps=2)
    assert isinstance(e.value, TbesError)


# ----------------------------------------------------------------------------
# Longitudes
# ----------------------------------------------------------------------------
def test_difference_codes():
    seq = ChainCodeSequence((0, 0), (0, 0, 6, 4, 2, 1))
    assert difference_codes(seq) == [0, 2, 2, 2, 1]
    assert difference_codes(ChainCodeSequence((0, 0), (3,))) == []


def test_straight_line_cost_with_default_prior():
    seq = ChainCodeSequence((0, 0), (0,) * 11, closed=False)
    esperado = 3.0 + 10 * -np.log2(0.585)
    assert entropy_boundary_length(seq, BSD_PRIOR) == pytest.approx(esperado)
    assert esperado == pytest.approx(10.735, abs=1e-3)


def test_zero_probability_codes_use_the_floor():
    # 0 -> 5 -> 0: diferencias 3 y 5
    seq = ChainCodeSequence((0, 0), (0, 5, 0), closed=False)
    esperado = 3.0 - np.log2(P_FLOOR) - np.log2(0.003)
    assert entropy_boundary_length(seq, BSD_PRIOR) == pytest.approx(esperado)


def test_entropy_length_matches_direct_sum():
    rng = np.random.default_rng(5)
    probabilidades = np.asarray(BSD_PRIOR.probabilities)
    for _ in range(50):
        codes = tuple(int(c) for c in rng.integers(0, 8, int(rng.integers(1, 40))))
        seq = ChainCodeSequence((0, 0), codes, closed=False)
        esperado = 3.0 + sum(
            -np.log2(max(probabilidades[(a - b) % 8], P_FLOOR)) for a, b in zip(codes, codes[1:])
        )
        assert entropy_boundary_length(seq, BSD_PRIOR) == pytest.approx(esperado)


def test_uniform_prior_costs_the_same_as_freeman():
    mask = random_blob(np.random.default_rng(9), 10, 40)
    contornos = trace_mask_boundaries(mask)
    assert boundary_bits(contornos, UNIFORM) == pytest.approx(
        boundary_bits(contornos, coding=BoundaryCoding.FREEMAN)
    )


def test_region_boundary_length_of_square():
    labels = np.zeros((6, 6), dtype=np.int64)
    labels[1:5, 1:5] = 1
    esperado = 3.0 + 8 * -np.log2(0.585) + 3 * -np.log2(0.020)
    assert region_boundary_length(labels, 1) == pytest.approx(esperado)
    assert region_boundary_length(labels, 1, coding="freeman") == 36.0


# ----------------------------------------------------------------------------
# Prior
# ----------------------------------------------------------------------------
def test_histogram_of_full_square_map():
    conteo = difference_histogram(LabelMap(np.zeros((5, 5), dtype=np.int64)))
    np.testing.assert_array_equal(conteo, [12, 0, 3, 0, 0, 0, 0, 0])


def test_prior_from_rectangles():
    prior = estimate_prior([rectangles_map()])
    assert sum(prior.probabilities) == pytest.approx(1.0)
    assert prior.probabilities[4] == 0.0
    assert prior.probabilities[0] > 0.5
    assert prior.probabilities[2] > 0.0


def test_estimate_prior_needs_codes():
    with pytest.raises(TrainingError):
        estimate_prior([])
    with pytest.raises(TrainingError):
        estimate_prior([LabelMap(np.zeros((1, 1), dtype=np.int64))])


def test_prior_file_roundtrip(tmp_path):
    path = save_prior(BSD_PRIOR, tmp_path / "prior.json")
    assert path.read_text().startswith("[0.585, 0.19")
    cargado = load_prior(path)
    np.testing.assert_allclose(cargado.probabilities, BSD_PRIOR.probabilities, atol=1e-3)

    malo = tmp_path / "malo.json"
    malo.write_text("[0.5, 0.5]")
    with pytest.raises(ValueError):
        load_prior(malo)


def test_resolve_prior_from_environment(tmp_path, monkeypatch):
    assert resolve_prior() is BSD_PRIOR
    path = save_prior(UNIFORM, tmp_path / "u.json")
    monkeypatch.setenv("TBES_PRIOR_PATH", str(path))
    get_settings.cache_clear()
    assert resolve_prior().probabilities == pytest.approx([0.125] * 8)
