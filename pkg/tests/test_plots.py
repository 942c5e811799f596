import numpy as np
import PIL.Image
import pytest

from saakit.data import gen_synthetic
from saakit.errors import SaaError
from saakit.metrics import write_metrics
from saakit.model import AugmentConfig, MetricsRecord
from saakit.plots import export_curves, line_plot, preview_grid
from saakit.utils.image import tile_grid, to_hwc, upscale


def records():
    return [MetricsRecord(epoch=e, iteration=e * 10, test_acc=0.25 * e, sup_loss=1.0, unsup_loss=0.5, mask_rate=0.5,
                          naive_fraction=0.1 * e, lr=0.03, wall_ms=0) for e in (1, 2, 3)]


def test_export_curves(tmp_path):
    write_metrics(str(tmp_path / 'metrics.csv'), records())
    written = export_curves(str(tmp_path))

    assert set(written) == {'test_acc', 'naive_fraction', 'curves'}
    assert (tmp_path / 'accuracy.csv').read_text() == 'iteration,test_acc\n10,0.25\n20,0.5\n30,0.75\n'
    naive = (tmp_path / 'naive_fraction.csv').read_text().splitlines()
    assert naive[1:] == [f'{10 * e},{0.1 * e!r}' for e in (1, 2, 3)]
    assert PIL.Image.open(written['curves']).size == (480, 240)

    assert 'curves' not in export_curves(str(tmp_path), str(tmp_path / 'csv'), raster=False)


def test_export_curves_without_rows(tmp_path):
    write_metrics(str(tmp_path / 'metrics.csv'), [])
    with pytest.raises(SaaError):
        export_curves(str(tmp_path))


def test_line_plot_draws_series():
    image = np.asarray(line_plot([([0, 1, 2], [0.0, 0.5, 1.0], (255, 0, 0))], width=100, height=60))
    assert image.shape == (60, 100, 3)
    assert ((image == [255, 0, 0]).all(axis=2)).any()
    # no series, only axes
    assert np.asarray(line_plot([])).min() == 0


def test_image_helpers():
    gray = np.arange(4, dtype=np.uint8).reshape(1, 2, 2)
    hwc = to_hwc(gray)
    assert hwc.shape == (2, 2, 3)
    assert (hwc[..., 0] == hwc[..., 2]).all()
    with pytest.raises(ValueError):
        to_hwc(np.zeros((2, 4, 4), dtype=np.uint8))

    big = upscale(hwc, 2)
    assert big.shape == (4, 4, 3)
    assert big[3, 3, 0] == 3

    grid = tile_grid(np.zeros((5, 4, 4, 3), dtype=np.uint8), columns=2)
    assert grid.shape == (3 * 5, 2 * 5, 3)
    # the missing sixth tile is padding
    assert (grid[10:, 5:] == 255).all()


def test_preview_grid():
    train, _ = gen_synthetic(0, classes=2, n_train=8, n_test=2, side=8)
    grid = preview_grid(train, 2, AugmentConfig(), seed=1)
    assert grid.shape == (2 * 33, 5 * 33, 3)
    assert np.array_equal(grid, preview_grid(train, 2, AugmentConfig(), seed=1))
    # the first column is the original image
    assert np.array_equal(grid[:32:4, :32:4], to_hwc(train.images[0]))

    with pytest.raises(SaaError):
        preview_grid(train, 9, AugmentConfig())
