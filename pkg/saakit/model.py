from typing import NamedTuple, Optional, Tuple

import numpy as np

STRONG_OPS = (
    'identity', 'autocontrast', 'equalize', 'rotate', 'solarize', 'posterize', 'brightness',
    'contrast', 'sharpness', 'shear_x', 'shear_y', 'translate_x', 'translate_y',
)

POLICY_KINDS = ('otsu', 'fixed', 'prop', 'all', 'none', 'random')


class ContextOptions(NamedTuple):
    """
    Per default a context only keeps its streams in memory. With `run_dir` set, log lines go to
    `run.log` and every metrics record is appended to `metrics.csv` inside that directory.
    """
    run_dir: Optional[str] = None

    """
    Mirror log lines to stderr.
    """
    echo: bool = True


class ArchConfig(NamedTuple):
    # channels, side and classes are filled in from the dataset by the trainer
    channels: int = 3
    side: int = 16
    classes: int = 4
    conv1: int = 16
    conv2: int = 32
    hidden: int = 128


class AugmentConfig(NamedTuple):
    ops: Tuple[str, ...] = STRONG_OPS
    n: int = 2
    cutout: bool = True
    cutout_fraction: float = 0.5
    patchwise: bool = False
    flip_prob: float = 0.5
    max_shift: float = 0.125


class DatasetConfig(NamedTuple):
    kind: str = 'synthetic'
    path: str = ''
    classes: int = 4
    n_train: int = 2000
    n_test: int = 1000
    side: int = 16
    channels: int = 3
    noise: float = 25.0
    labels_per_class: int = 4
    split_seed: Optional[int] = None


class TrainConfig(NamedTuple):
    labeled_batch: int = 16
    mu: int = 4
    lambda_u: float = 1.0
    threshold: float = 0.95
    history_decay: float = 0.999
    otsu_bins: int = 256
    policy: str = 'otsu'
    warmup_epochs: int = 12
    epochs: int = 120
    iters_per_epoch: int = 64
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    ema_decay: float = 0.999
    seed: int = 0
    threads: int = 1
    precision: str = 'float32'
    checkpoint_every: int = 10
    eval_batch: int = 256
    wall_clock: bool = True
    progress: bool = True
    track_samples: Tuple[int, ...] = ()
    dataset: DatasetConfig = DatasetConfig()
    aug: AugmentConfig = AugmentConfig()
    arch: ArchConfig = ArchConfig()

    @property
    def unlabeled_batch(self) -> int:
        return self.mu * self.labeled_batch

    @property
    def total_iterations(self) -> int:
        return self.epochs * self.iters_per_epoch


class SelectionPolicy(NamedTuple):
    kind: str
    value: float = 0.0

    def __str__(self):
        if self.kind in ('fixed', 'prop', 'random'):
            return f'{self.kind}:{self.value:g}'
        return self.kind


class PseudoLabel(NamedTuple):
    label: int
    confidence: float
    accepted: bool


class LossReport(NamedTuple):
    sup_loss: float
    unsup_loss: float
    total: float
    mask_rate: float
    raw_losses: np.ndarray


class OtsuResult(NamedTuple):
    threshold: float
    degenerate: bool


class MarkerUpdate(NamedTuple):
    tau: float
    degenerate: bool
    naive_count: int
    flips: int


class MetricsRecord(NamedTuple):
    epoch: int
    iteration: int
    test_acc: float
    sup_loss: float
    unsup_loss: float
    mask_rate: float
    naive_fraction: float
    lr: float
    wall_ms: int


class Dataset(NamedTuple):
    """
    images are uint8 arrays of shape (N, channels, height, width); labels is None for an
    unlabeled view.
    """
    images: np.ndarray
    labels: Optional[np.ndarray]
    classes: int
    split: str = 'train'

    @property
    def size(self) -> int:
        return len(self.images)


class SplitSpec(NamedTuple):
    labels_per_class: int
    seed: int = 0
