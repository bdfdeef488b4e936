import numpy as np
import pytest
from scipy.optimize import minimize

from app.models import ColorSpace, ContrastFeatures, DiscrepancyFit, EpsilonRegressor, MetricName
from services.epsilon_model import (
    EPSILON_GRID,
    contrast_features,
    discrepancy,
    fit_quadratic,
    load_model,
    optimal_epsilon,
    predict_epsilon,
    raw_prediction,
    sample_discrepancy,
    save_model,
    train_classical,
    train_regressor,
)
from services.errors import NonConvexFitError, TrainingError
from services.imagecore import RasterImage, luminance
from tests.synthetic import two_texture_image


def _features(*values):
    return ContrastFeatures(values=list(values))


def _objetivo(theta, fits, features, ridge):
    total = ridge * float(theta @ theta)
    for fit, f in zip(fits, features):
        x = float(theta @ np.asarray(f.values))
        total += fit.a * x ** 2 + fit.b * x + fit.c
    return total


# ----------------------------------------------------------------------------
# Features de contraste
# ----------------------------------------------------------------------------
def test_constant_image_has_no_contrast():
    img = RasterImage(np.full((16, 16, 3), 0.4), ColorSpace.RGB)
    assert contrast_features(img).values == pytest.approx([0.0] * 4, abs=1e-9)


def test_checkerboard_vanishes_when_averaged():
    tablero = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float64)
    img = RasterImage(np.repeat(tablero[..., None], 3, axis=2), ColorSpace.RGB)
    valores = contrast_features(img).values
    assert valores[0] == pytest.approx(50.0, abs=1e-6)
    assert valores[1] == pytest.approx(0.0, abs=1e-9)


def test_contrast_matches_direct_std():
    img = RasterImage(np.random.default_rng(4).uniform(size=(17, 20, 3)), ColorSpace.RGB)
    gris = luminance(img)
    valores = contrast_features(img).values

    assert valores[0] == pytest.approx(np.std(gris))
    bloques = gris[:16, :20].reshape(4, 4, 5, 4).mean(axis=(1, 3))
    assert valores[2] == pytest.approx(np.std(bloques))


# ----------------------------------------------------------------------------
# Ajuste cuadrático
# ----------------------------------------------------------------------------
def test_fit_is_exact_on_a_parabola():
    fit = fit_quadratic([(e, (e - 100.0) ** 2) for e in EPSILON_GRID])
    assert fit.a == pytest.approx(1.0, abs=1e-6)
    assert fit.b == pytest.approx(-200.0, abs=1e-6)
    assert fit.c == pytest.approx(10000.0, rel=1e-9)
    assert fit.vertex == pytest.approx(100.0)
    assert len(fit.samples) == 16


def test_flat_discrepancy_is_not_convex():
    with pytest.raises(NonConvexFitError):
        fit_quadratic([(e, 5.0) for e in EPSILON_GRID])
    with pytest.raises(NonConvexFitError):
        fit_quadratic([(e, -(e - 200.0) ** 2) for e in EPSILON_GRID])


def test_noisy_fit_matches_least_squares():
    rng = np.random.default_rng(12)
    eps = np.asarray(EPSILON_GRID)
    d = 2e-6 * (eps - 180.0) ** 2 + 0.3 + rng.normal(0, 0.01, eps.size)

    fit = fit_quadratic(list(zip(eps, d)))

    x = eps / 100.0
    diseno = np.column_stack([np.ones_like(x), x, x ** 2])
    c, b, a = np.linalg.lstsq(diseno, d, rcond=None)[0]
    a, b = a / 1e4, b / 100.0
    assert (fit.a, fit.b, fit.c) == pytest.approx((a, b, c), rel=1e-6)


def test_fit_needs_three_samples():
    with pytest.raises(ValueError):
        fit_quadratic([(25.0, 1.0), (50.0, 0.5)])


def test_optimal_epsilon_breaks_ties_with_the_smaller_value():
    assert optimal_epsilon([(50.0, 0.2), (25.0, 0.3), (75.0, 0.2)]) == 50.0


# ----------------------------------------------------------------------------
# Regresión
# ----------------------------------------------------------------------------
def test_single_image_recovers_the_vertex():
    fit = DiscrepancyFit(a=1.0, b=-2.0, c=0.0)
    reg = train_regressor([fit], [_features(1, 0, 0, 0)])

    np.testing.assert_allclose(reg.theta, [1, 0, 0, 0], atol=1e-6)
    assert raw_prediction(reg, _features(1, 0, 0, 0)) == pytest.approx(fit.vertex, abs=1e-6)
    assert reg.trained_on == 1


def test_duplicated_images_give_the_same_theta():
    fit = DiscrepancyFit(a=0.5, b=-3.0, c=1.0)
    f = _features(2.0, 1.0, 0.5, 0.1)
    una = train_regressor([fit], [f])
    dos = train_regressor([fit, fit], [f, f])
    assert raw_prediction(dos, f) == pytest.approx(raw_prediction(una, f), rel=1e-6)


def test_closed_form_matches_numeric_minimum():
    rng = np.random.default_rng(99)
    ridge = 1e-3
    for _ in range(20):
        k = int(rng.integers(5, 12))
        fits = [
            DiscrepancyFit(a=float(rng.uniform(0.5, 2)), b=float(rng.uniform(-3, 3)), c=0.0)
            for _ in range(k)
        ]
        features = [ContrastFeatures(values=rng.uniform(0, 1, 4).tolist()) for _ in range(k)]

        theta = np.asarray(train_regressor(fits, features, ridge=ridge).theta)

        f = np.array([x.values for x in features])
        a = np.array([x.a for x in fits])
        b = np.array([x.b for x in fits])
        hess = 2.0 * ((f * a[:, None]).T @ f + ridge * np.eye(4))
        numerico = minimize(
            lambda t: _objetivo(t, fits, features, ridge),
            np.zeros(4),
            jac=lambda t: hess @ t + f.T @ b,
            hess=lambda t: hess,
            method="trust-exact",
            options={"gtol": 1e-12},
        )
        np.testing.assert_allclose(theta, numerico.x, atol=1e-6)


def test_theta_is_a_local_minimum():
    rng = np.random.default_rng(3)
    fits = [DiscrepancyFit(a=float(rng.uniform(0.5, 2)), b=float(rng.uniform(-3, 3)), c=0.1) for _ in range(6)]
    features = [ContrastFeatures(values=rng.uniform(0, 1, 4).tolist()) for _ in range(6)]
    theta = np.asarray(train_regressor(fits, features).theta)

    base = _objetivo(theta, fits, features, 1e-8)
    for i in range(4):
        for delta in (1e-3, -1e-3):
            movido = theta.copy()
            movido[i] += delta
            assert _objetivo(movido, fits, features, 1e-8) > base


def test_training_errors():
    with pytest.raises(TrainingError):
        train_regressor([], [])
    with pytest.raises(TrainingError):
        train_regressor([DiscrepancyFit(a=1, b=0, c=0)], [])
    with pytest.raises(TrainingError):
        train_classical([], [])


def test_classical_regression_recovers_a_linear_rule():
    rng = np.random.default_rng(8)
    verdadero = np.array([3.0, -1.0, 0.5, 2.0])
    features = [ContrastFeatures(values=rng.uniform(0, 10, 4).tolist()) for _ in range(10)]
    epsilons = [float(verdadero @ np.asarray(f.values)) for f in features]

    reg = train_classical(epsilons, features)

    np.testing.assert_allclose(reg.theta, verdadero, atol=1e-6)


# ----------------------------------------------------------------------------
# Predicción y persistencia
# ----------------------------------------------------------------------------
@pytest.mark.parametrize("theta, f, esperado", [
    ([1, 0, 0, 0], [100, 7, 7, 7], 100.0),
    ([1, 0, 0, 0], [1000, 0, 0, 0], 400.0),
    ([-1, 0, 0, 0], [5, 0, 0, 0], 25.0),
])
def test_prediction_is_clamped(theta, f, esperado):
    reg = EpsilonRegressor(theta=theta)
    assert predict_epsilon(reg, _features(*f)) == esperado


def test_model_file_roundtrip(tmp_path):
    reg = EpsilonRegressor(theta=[1.5, -0.25, 3.0, 0.0], metric=MetricName.GFM, trained_on=7)
    path = save_model(reg, tmp_path / "model.json")
    assert load_model(path) == reg

    path.write_text('{"theta": [1, 2]}')
    with pytest.raises(ValueError):
        load_model(path)


# ----------------------------------------------------------------------------
# Muestreo de la discrepancia
# ----------------------------------------------------------------------------
def test_discrepancy_of_identical_maps(two_texture):
    _, truth = two_texture
    assert discrepancy(truth, [truth], MetricName.PRI) == 0.0
    assert discrepancy(truth, [truth], MetricName.VOI) == pytest.approx(0.0, abs=1e-12)
    assert discrepancy(truth, [truth], "gfm") == 0.0


def test_sample_discrepancy_covers_the_grid_in_order():
    img, truth = two_texture_image(size=32)
    muestras = sample_discrepancy(img, [truth], MetricName.PRI, w_max=3, grid_cell=8)

    assert [e for e, _ in muestras] == EPSILON_GRID
    assert all(0.0 <= d <= 1.0 for _, d in muestras)

    desordenado = sample_discrepancy(img, [truth], grid=[200, 50, 100], w_max=3, grid_cell=8)
    assert [e for e, _ in desordenado] == [50.0, 100.0, 200.0]

    with pytest.raises(TrainingError):
        sample_discrepancy(img, [], w_max=3)
