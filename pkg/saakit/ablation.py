"""
Selection-policy comparison: one run per (row, seed), all rows of a seed share the seed, and a
table of final accuracies with mean and standard deviation over seeds.
"""
import logging
import os
from typing import Iterable, List, NamedTuple, Optional, Sequence

import numpy as np

from saakit.config import parse_policy, validate_config
from saakit.errors import ConfigError, SaaError
from saakit.metrics import manifest_diff, read_manifest, write_rows
from saakit.model import TrainConfig
from saakit.trainer import run

logger = logging.getLogger(__name__)

ROW_LABELS = {
    'none': 'Baseline-1 (strong augmentation for all samples)',
    'all': 'Baseline-2 (diverse augmentation for all samples)',
    'otsu': 'Otsu threshold',
    'fixed': 'Fixed threshold',
    'prop': 'Fixed proportion',
    'random': 'Random selection',
}

# keys a row may change; every other manifest key must agree between runs of one seed
ROW_KEYS = {'policy', 'config.policy', 'config.aug.patchwise', 'config.warmup_epochs', 'hardware'}


class AblationRow(NamedTuple):
    policy: str
    patchwise: bool = False
    warmup_epochs: Optional[int] = None

    @property
    def name(self) -> str:
        res = self.policy.replace(':', '-')
        if self.patchwise:
            res += '+patchwise'
        if self.warmup_epochs is not None:
            res += f'+warmup{self.warmup_epochs}'
        return res

    @property
    def label(self) -> str:
        res = ROW_LABELS[parse_policy(self.policy).kind]
        if self.patchwise:
            res += ', patchwise'
        if self.warmup_epochs is not None:
            res += f', warm-up {self.warmup_epochs}'
        return res

    def apply(self, config: TrainConfig) -> TrainConfig:
        config = config._replace(policy=self.policy, aug=config.aug._replace(patchwise=self.patchwise))
        if self.warmup_epochs is not None:
            config = config._replace(warmup_epochs=self.warmup_epochs)
        return config


class AblationResult(NamedTuple):
    row: AblationRow
    seeds: List[int]
    accuracies: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def parse_rows(policies: Iterable[str], warmups: Iterable[int] = ()) -> List[AblationRow]:
    """
    :param policies: policy strings, optionally suffixed with `+patchwise`
    :param warmups: extra otsu rows, one per warm-up length
    """
    rows = []
    for text in policies:
        text = text.strip()
        if not text:
            continue
        policy, _, flag = text.partition('+')
        if flag not in ('', 'patchwise'):
            raise ConfigError(f'unknown policy modifier {flag!r} in {text!r}, only +patchwise is known')
        rows.append(AblationRow(str(parse_policy(policy)), flag == 'patchwise'))

    for warmup in warmups:
        rows.append(AblationRow('otsu', False, int(warmup)))

    if not rows:
        raise ConfigError('ablation needs at least one policy')
    return rows


def check_shared_seed(run_dirs: Sequence[str]):
    """
    Manifests of the runs of one seed may only differ in the keys a row changes.
    """
    manifests = [read_manifest(os.path.join(d, 'manifest.json')) for d in run_dirs]
    for run_dir, manifest in zip(run_dirs[1:], manifests[1:]):
        differing = [k for k in manifest_diff(manifests[0], manifest)
                     if k not in ROW_KEYS and not k.startswith('hardware.')]
        if differing:
            raise SaaError(f'{run_dir} differs from {run_dirs[0]} in {", ".join(differing)}')


def run_ablation(config: TrainConfig, rows: Sequence[AblationRow], seeds: Sequence[int], out_dir: str,
                 echo: bool = False) -> List[AblationResult]:
    for row in rows:
        validate_config(row.apply(config))

    accuracies = {row: [] for row in rows}
    for seed in seeds:
        run_dirs = []
        for row in rows:
            run_dir = os.path.join(out_dir, f'{row.name}_seed{seed}')
            if os.path.exists(os.path.join(run_dir, 'metrics.csv')):
                raise SaaError(f'{run_dir} already holds a run')
            logger.info('ablation row %s, seed %d', row.name, seed)
            result = run(row.apply(config._replace(seed=seed)), run_dir, echo=echo)
            accuracies[row].append(result.final.test_acc)
            run_dirs.append(run_dir)
        check_shared_seed(run_dirs)

    return [AblationResult(row, list(seeds), accuracies[row]) for row in rows]


def write_table(path_or_stream, results: Sequence[AblationResult]):
    seeds = results[0].seeds if results else []
    columns = ['method', 'policy', 'patchwise', 'warmup_epochs'] + [f'acc_seed{s}' for s in seeds] + ['mean', 'std']
    rows = []
    for r in results:
        warmup = '' if r.row.warmup_epochs is None else r.row.warmup_epochs
        rows.append([r.row.label, r.row.policy, r.row.patchwise, warmup] + list(r.accuracies) + [r.mean, r.std])
    write_rows(path_or_stream, columns, rows)
