import pytest

from app.config import get_settings
from tests.synthetic import quadrant_image, two_texture_image, write_pgm, write_ppm


@pytest.fixture(autouse=True)
def _fresh_settings(monkeypatch):
    for var in ("TBES_JOBS", "TBES_WMAX", "TBES_PCA_DIM", "TBES_GRID_CELL",
                "TBES_PRIOR_PATH", "TBES_LOG_LEVEL", "TBES_LOG_FILE"):
        monkeypatch.delenv(var, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(scope="session")
def two_texture():
    return two_texture_image()


@pytest.fixture(scope="session")
def quadrants():
    return quadrant_image()


@pytest.fixture
def dataset(tmp_path):
    """Dos imágenes de 16×16 con su referencia en truths/<id>.pgm"""
    images = tmp_path / "images"
    truths = tmp_path / "truths"
    images.mkdir()
    truths.mkdir()
    for image_id, sigma, seed in (("a", 0.01, 0), ("b", 0.05, 3)):
        img, truth = two_texture_image(size=16, sigma=sigma, seed=seed)
        write_ppm(img, images / f"{image_id}.ppm")
        write_pgm(truth, truths / f"{image_id}.pgm")
    return images, truths
