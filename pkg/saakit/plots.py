"""
Training curves and augmentation previews of a run directory.
"""
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import PIL.Image
import PIL.ImageDraw

from saakit.augment import augment_view
from saakit.errors import SaaError
from saakit.metrics import read_metrics, write_rows
from saakit.model import AugmentConfig, Dataset
from saakit.utils.image import tile_grid, to_hwc, upscale

logger = logging.getLogger(__name__)

CURVES = (
    ('test_acc', 'accuracy.csv', (31, 119, 180)),
    ('naive_fraction', 'naive_fraction.csv', (214, 39, 40)),
)

PREVIEW_VIEWS = ('original', 'weak', 'strong', 'diverse', 'patchwise')


def line_plot(series: Sequence[Tuple[Sequence[float], Sequence[float], Tuple[int, int, int]]], width: int = 480,
              height: int = 240, y_range: Tuple[float, float] = (0.0, 1.0), margin: int = 24) -> PIL.Image.Image:
    """
    Plain raster line plot: white background, axes, one polyline per (xs, ys, color).
    """
    image = PIL.Image.new('RGB', (width, height), (255, 255, 255))
    draw = PIL.ImageDraw.Draw(image)
    left, top, right, bottom = margin, margin // 2, width - margin // 2, height - margin
    draw.line([(left, top), (left, bottom), (right, bottom)], fill=(0, 0, 0))

    all_x = [x for xs, _, _ in series for x in xs]
    if not all_x:
        return image
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = y_range

    def point(x, y):
        fx = 0.5 if x_hi == x_lo else (x - x_lo) / (x_hi - x_lo)
        fy = (min(max(y, y_lo), y_hi) - y_lo) / (y_hi - y_lo)
        return left + fx * (right - left), bottom - fy * (bottom - top)

    for xs, ys, color in series:
        points = [point(x, y) for x, y in zip(xs, ys)]
        if len(points) > 1:
            draw.line(points, fill=color, width=2)
        for px, py in points:
            draw.ellipse([px - 2, py - 2, px + 2, py + 2], fill=color)

    draw.text((left + 4, top), f'{y_hi:g}', fill=(0, 0, 0))
    draw.text((left + 4, bottom - 12), f'{y_lo:g}', fill=(0, 0, 0))
    draw.text((right - 60, bottom + 4), f'iter {x_hi:g}', fill=(0, 0, 0))
    return image


def export_curves(run_dir: str, out_dir: Optional[str] = None, raster: bool = True) -> Dict[str, str]:
    """
    Writes accuracy.csv and naive_fraction.csv, (iteration, value) per epoch taken verbatim from
    metrics.csv, and curves.png.

    :return: name -> written path
    """
    records = read_metrics(os.path.join(run_dir, 'metrics.csv'))
    if not records:
        raise SaaError(f'{run_dir}: metrics file has no rows')

    out_dir = out_dir or run_dir
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    iterations = [r.iteration for r in records]
    plot_series = []
    for column, filename, color in CURVES:
        values = [getattr(r, column) for r in records]
        path = os.path.join(out_dir, filename)
        write_rows(path, ['iteration', column], zip(iterations, values))
        written[column] = path
        plot_series.append((iterations, values, color))

    if raster:
        path = os.path.join(out_dir, 'curves.png')
        line_plot(plot_series).save(path)
        written['curves'] = path

    logger.info('exported %d points per curve to %s', len(records), out_dir)
    return written


def preview_views(image: np.ndarray, rng: np.random.Generator, config: AugmentConfig) -> List[np.ndarray]:
    return [
        image,
        augment_view('weak', image, rng, config),
        augment_view('strong', image, rng, config),
        augment_view('diverse', image, rng, config._replace(patchwise=False)),
        augment_view('diverse', image, rng, config._replace(patchwise=True)),
    ]


def preview_grid(dataset: Dataset, count: int, config: AugmentConfig, seed: int = 0, scale: int = 4) -> np.ndarray:
    """
    One row per image: the original and its weak, strong, diverse and patchwise views.
    """
    if not 1 <= count <= dataset.size:
        raise SaaError(f'preview needs 1..{dataset.size} images, got {count}')

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E11]))
    tiles = []
    for i in range(count):
        tiles.extend(upscale(to_hwc(v), scale) for v in preview_views(dataset.images[i], rng, config))

    return tile_grid(np.stack(tiles), columns=len(PREVIEW_VIEWS))


def export_preview(path: str, dataset: Dataset, count: int, config: AugmentConfig, seed: int = 0) -> str:
    PIL.Image.fromarray(preview_grid(dataset, count, config, seed), 'RGB').save(path)
    return path
