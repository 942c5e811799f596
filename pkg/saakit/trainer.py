"""
FixMatch training with sample adaptive augmentation.

Every iteration draws a labeled and an unlabeled batch, pseudo-labels the weak views of the
unlabeled batch, and takes one SGD step on the supervised loss plus the masked consistency loss.
The per-sample consistency losses feed a SampleHistory; at every epoch end the naive markers are
refreshed from it, and after the warm-up, marked samples get the diverse augmentation instead of
the strong one.

All randomness is drawn from SeedSequence streams keyed by (seed, stream, position), so nothing
but parameters, velocity and history has to be checkpointed.
"""
import enum
import logging
import os
import platform
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import simplejson
from tqdm import tqdm

import saakit
from saakit.augment import augment_view
from saakit.checkpoint import load_checkpoint, save_checkpoint
from saakit.config import config_from_dict, config_to_dict, config_to_text, parse_policy, validate_config
from saakit.context import Context, hardware_info
from saakit.data import load_dataset, split_labels
from saakit.errors import CheckpointError, ConfigError, DatasetError, TrainingAbort
from saakit.losses import pseudo_labels, sup_loss, total_loss, unsup_loss
from saakit.metrics import (MARKER_COLUMNS, TRACKED_COLUMNS, append_row, read_metrics, write_history, write_manifest,
                            write_metrics)
from saakit.model import ArchConfig, ContextOptions, Dataset, LossReport, MetricsRecord, SplitSpec, TrainConfig
from saakit.network import (ClassifierParams, LossSpec, cosine_lr, ema_update_params, init_params, loss_and_grads,
                            model_graph, one_hot, predict, softmax, sgd_momentum_step)
from saakit.selection import SampleHistory, naive_fraction, update_markers

logger = logging.getLogger(__name__)

STREAM_INIT = 1
STREAM_UNLABELED_SAMPLING = 2
STREAM_LABELED_SHUFFLE = 3
STREAM_LABELED_AUG = 4
STREAM_UNLABELED_AUG = 5
STREAM_SELECTION = 6


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


class AugmentationKind(enum.Enum):
    Strong = 'strong'
    Diverse = 'diverse'


def select_augmentation(naive: bool, epoch: int, warmup_epochs: int) -> AugmentationKind:
    """
    Naive samples get the diverse augmentation, but only once the warm-up is over.
    """
    if epoch >= warmup_epochs and naive:
        return AugmentationKind.Diverse
    return AugmentationKind.Strong


def resolve_arch(config: TrainConfig, train: Dataset) -> ArchConfig:
    _, channels, height, width = train.images.shape
    if height != width:
        raise DatasetError(f'images must be square, got {height}x{width}')
    return config.arch._replace(channels=channels, side=height, classes=train.classes)


def evaluate(ema_params: ClassifierParams, test: Dataset, arch: ArchConfig, batch_size: int = 256) -> float:
    """
    Top-1 accuracy of the given parameters on un-augmented test images.
    """
    if test.size == 0:
        raise DatasetError('cannot evaluate on an empty test set')
    if test.labels is None:
        raise DatasetError('test set has no labels')

    probs = predict(ema_params, test.images, arch, batch_size)
    return float(np.count_nonzero(np.argmax(probs, axis=1) == test.labels)) / test.size


class RunState:
    """
    Everything that changes during training. iteration == epoch * iters_per_epoch at every
    epoch boundary.
    """

    def __init__(self, params: ClassifierParams, ema_params: ClassifierParams, velocity: ClassifierParams,
                 history: SampleHistory, epoch: int = 0, iteration: int = 0):
        self.params = params
        self.ema_params = ema_params
        self.velocity = velocity
        self.history = history
        self.epoch = epoch
        self.iteration = iteration

    def tensors(self) -> 'OrderedDict[str, np.ndarray]':
        res = OrderedDict()
        for prefix, params in (('params', self.params), ('ema', self.ema_params), ('velocity', self.velocity)):
            for name, tensor in params:
                res[f'{prefix}/{name}'] = tensor
        res['history/h'] = self.history.h
        res['history/f'] = self.history.f
        res['history/observed'] = self.history.observed
        return res

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], names: Sequence[str], decay: float, epoch: int,
                     iteration: int, version: int) -> 'RunState':
        def group(prefix):
            try:
                return ClassifierParams(OrderedDict((n, tensors[f'{prefix}/{n}']) for n in names), version)
            except KeyError as e:
                raise CheckpointError(f'checkpoint misses tensor {e}')

        history = SampleHistory(0, decay)
        try:
            history.h = tensors['history/h'].astype(np.float64)
            history.f = tensors['history/f'].astype(bool)
            history.observed = tensors['history/observed'].astype(np.int64)
        except KeyError as e:
            raise CheckpointError(f'checkpoint misses tensor {e}')

        return cls(group('params'), group('ema'), group('velocity'), history, epoch, iteration)


class EpochAudit:
    """
    Per-epoch running sums of the iteration reports and the number of strong and diverse views
    handed out.
    """

    def __init__(self):
        self.sup_loss = 0.0
        self.unsup_loss = 0.0
        self.mask_rate = 0.0
        self.iterations = 0
        self.lr = 0.0
        self.strong_applied = 0
        self.diverse_applied = 0

    def add(self, report: LossReport, lr: float):
        self.sup_loss += report.sup_loss
        self.unsup_loss += report.unsup_loss
        self.mask_rate += report.mask_rate
        self.iterations += 1
        self.lr = lr

    def mean(self, value: float) -> float:
        return value / self.iterations if self.iterations else 0.0


class RunResult(NamedTuple):
    final: MetricsRecord
    records: List[MetricsRecord]
    run_dir: Optional[str]


class Trainer:
    def __init__(self, config: TrainConfig, context: Optional[Context] = None,
                 data: Optional[Tuple[Dataset, Dataset]] = None, state: Optional[RunState] = None):
        """
        :param context: receives logs and metrics; without one, records are only kept in memory
        :param data: (train, test) to use instead of loading config.dataset
        :param state: resumed state, otherwise parameters are initialised from the seed
        """
        validate_config(config)
        self.config = config
        self.policy = parse_policy(config.policy)
        self.context = context
        self.records: List[MetricsRecord] = []
        self.audits: List[EpochAudit] = []

        train, self.test = data if data is not None else load_dataset(config.dataset, config.seed)
        split_seed = config.dataset.split_seed if config.dataset.split_seed is not None else config.seed
        self.labeled, self.unlabeled, self.labeled_indices = split_labels(
            train, SplitSpec(config.dataset.labels_per_class, split_seed))
        self.arch = resolve_arch(config, train)

        if state is None:
            params = init_params(self.arch, stream(config.seed, STREAM_INIT), config.precision)
            state = RunState(params, params.copy(), params.zeros_like(),
                             SampleHistory(self.unlabeled.size, config.history_decay))
        elif state.history.size != self.unlabeled.size:
            raise CheckpointError(f'checkpoint history covers {state.history.size} samples, '
                                  f'dataset has {self.unlabeled.size}')
        self.state = state
        # observation counts at the last marker refresh
        self._refreshed_observed = state.history.observed.copy()

        self.tracked = set(int(i) for i in config.track_samples)
        self._shuffles: Dict[int, np.ndarray] = {}
        self._pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None

    def close(self):
        if self._pool:
            self._pool.shutdown()
            self._pool = None

    def path(self, name: str) -> Optional[str]:
        return self.context.path(name) if self.context else None

    def labeled_ids(self, iteration: int) -> np.ndarray:
        """
        Labeled batch of an iteration: consecutive draws from a cycle of shuffled labeled indices,
        reshuffled per cycle.
        """
        n = self.labeled.size
        b = self.config.labeled_batch
        draws = np.arange(iteration * b, (iteration + 1) * b)
        res = np.empty(b, dtype=np.int64)
        for j, draw in enumerate(draws):
            cycle = int(draw // n)
            if cycle not in self._shuffles:
                self._shuffles = {cycle: stream(self.config.seed, STREAM_LABELED_SHUFFLE, cycle).permutation(n)}
            res[j] = self._shuffles[cycle][draw % n]
        return res

    def unlabeled_ids(self, epoch: int) -> np.ndarray:
        """
        All unlabeled batches of an epoch, sampled uniformly with replacement.

        :return: (iters_per_epoch, unlabeled_batch) sample ids
        """
        rng = stream(self.config.seed, STREAM_UNLABELED_SAMPLING, epoch)
        return rng.integers(0, self.unlabeled.size, size=(self.config.iters_per_epoch, self.config.unlabeled_batch))

    def _map(self, fn, items):
        if self._pool:
            return list(self._pool.map(fn, items))
        return [fn(item) for item in items]

    def augment_labeled(self, images: np.ndarray, iteration: int) -> np.ndarray:
        aug = self.config.aug
        seed = self.config.seed

        def view(slot):
            return augment_view('weak', images[slot], stream(seed, STREAM_LABELED_AUG, iteration, slot), aug)

        return np.stack(self._map(view, range(len(images))))

    def augment_unlabeled(self, images: np.ndarray, kinds: Sequence[AugmentationKind],
                          iteration: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        :return: (weak views, strong or diverse views), both drawn from one stream per slot
        """
        aug = self.config.aug
        seed = self.config.seed

        def views(slot):
            rng = stream(seed, STREAM_UNLABELED_AUG, iteration, slot)
            weak = augment_view('weak', images[slot], rng, aug)
            return weak, augment_view(kinds[slot].value, images[slot], rng, aug)

        pairs = self._map(views, range(len(images)))
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    def train_iteration(self, labeled_ids: np.ndarray, unlabeled_ids: np.ndarray,
                        audit: Optional[EpochAudit] = None) -> LossReport:
        config = self.config
        state = self.state
        iteration = state.iteration
        n_x = len(labeled_ids)
        n_u = len(unlabeled_ids)

        weak_x = self.augment_labeled(self.labeled.images[labeled_ids], iteration)
        labels_x = self.labeled.labels[labeled_ids]

        kinds = [select_augmentation(bool(state.history.f[i]), state.epoch, config.warmup_epochs)
                 for i in unlabeled_ids]
        weak_u, strong_u = self.augment_unlabeled(self.unlabeled.images[unlabeled_ids], kinds, iteration)

        weak_probs = predict(state.params, weak_u, self.arch)
        labels_u, mask = pseudo_labels(weak_probs, config.threshold)

        classes = self.arch.classes
        targets = np.concatenate([one_hot(labels_x, classes), one_hot(labels_u, classes)])
        weights = np.concatenate([np.full(n_x, 1.0 / n_x), config.lambda_u * mask / n_u])
        try:
            _, grads, logits = loss_and_grads(state.params, np.concatenate([weak_x, strong_u]),
                                              LossSpec(targets, weights), self.arch)
        except TrainingAbort as e:
            rows = [r for r in e.sample_ids if r >= n_x]
            raise self._abort(iteration, [int(unlabeled_ids[r - n_x]) for r in rows])

        probs = softmax(logits)
        sup = sup_loss(probs[:n_x], labels_x)
        unsup, raws, mask_rate = unsup_loss(weak_probs, probs[n_x:], config.threshold)
        total = total_loss(sup, unsup, config.lambda_u)
        if not np.all(np.isfinite(raws)) or not np.isfinite(total):
            raise self._abort(iteration, [int(i) for i, r in zip(unlabeled_ids, raws) if not np.isfinite(r)])

        lr = cosine_lr(iteration, config.total_iterations, config.lr)
        state.params, state.velocity = sgd_momentum_step(state.params, grads, state.velocity, lr, config.momentum,
                                                         config.weight_decay)
        state.ema_params = ema_update_params(state.ema_params, state.params, config.ema_decay)
        state.history.record_losses(unlabeled_ids, raws)

        if self.tracked:
            self._track(unlabeled_ids, raws, kinds)

        report = LossReport(sup, unsup, total, mask_rate, raws)
        if audit is not None:
            audit.add(report, lr)
            diverse = sum(1 for k in kinds if k is AugmentationKind.Diverse)
            audit.diverse_applied += diverse
            audit.strong_applied += len(kinds) - diverse

        state.iteration += 1
        return report

    def _abort(self, iteration: int, sample_ids: List[int]) -> TrainingAbort:
        e = TrainingAbort('non-finite loss', iteration, sample_ids)
        path = self.path('abort.json')
        if path:
            with open(path, 'w') as h:
                simplejson.dump({'epoch': self.state.epoch, 'iteration': iteration, 'sample_ids': sample_ids,
                                 'message': str(e)}, h, indent=2)
        logger.error(str(e))
        return e

    def _track(self, unlabeled_ids: np.ndarray, raws: np.ndarray, kinds: Sequence[AugmentationKind]):
        path = self.path('tracked.csv')
        if not path:
            return
        history = self.state.history
        for slot, sample_id in enumerate(unlabeled_ids):
            if int(sample_id) in self.tracked:
                append_row(path, TRACKED_COLUMNS, [self.state.epoch + 1, self.state.iteration, int(sample_id),
                                                   float(raws[slot]), float(history.h[sample_id]),
                                                   bool(history.f[sample_id]), kinds[slot].value])

    def train_epoch(self) -> MetricsRecord:
        config = self.config
        epoch = self.state.epoch
        started = time.time()
        audit = EpochAudit()
        batches = self.unlabeled_ids(epoch)

        bar = tqdm(range(config.iters_per_epoch), desc=f'epoch {epoch + 1}/{config.epochs}', leave=False,
                   disable=not config.progress)
        for i in bar:
            report = self.train_iteration(self.labeled_ids(self.state.iteration), batches[i], audit)
            bar.set_postfix(loss=f'{report.total:.4f}', mask=f'{report.mask_rate:.2f}')
        bar.close()

        wall_ms = int((time.time() - started) * 1000) if config.wall_clock else 0
        return self.end_epoch(audit, wall_ms)

    def end_epoch(self, audit: Optional[EpochAudit] = None, wall_ms: int = 0) -> MetricsRecord:
        """
        Refreshes the naive markers, evaluates the averaged parameters and emits the epoch record.
        """
        config = self.config
        state = self.state
        audit = audit or EpochAudit()

        drawn = state.history.observed > self._refreshed_observed
        update = update_markers(state.history, self.policy, stream(config.seed, STREAM_SELECTION, state.epoch),
                                config.otsu_bins, drawn)
        self._refreshed_observed = state.history.observed.copy()
        accuracy = evaluate(state.ema_params, self.test, self.arch, config.eval_batch)
        state.epoch += 1

        record = MetricsRecord(
            epoch=state.epoch,
            iteration=state.iteration,
            test_acc=accuracy,
            sup_loss=audit.mean(audit.sup_loss),
            unsup_loss=audit.mean(audit.unsup_loss),
            mask_rate=audit.mean(audit.mask_rate),
            naive_fraction=naive_fraction(state.history),
            lr=audit.lr,
            wall_ms=wall_ms,
        )
        self.records.append(record)
        self.audits.append(audit)

        if self.context:
            self.context.metric(record)
            markers = self.path('markers.csv')
            if markers:
                append_row(markers, MARKER_COLUMNS, [
                    state.epoch, update.tau, update.degenerate, update.naive_count, update.flips,
                    audit.diverse_applied, audit.strong_applied, int(np.count_nonzero(state.history.observed)),
                ])
            self.context.epoch(state.epoch, config.epochs)

        logger.info('epoch %d: acc %.4f sup %.4f unsup %.4f mask %.3f naive %.3f tau %s', state.epoch, accuracy,
                    record.sup_loss, record.unsup_loss, record.mask_rate, record.naive_fraction,
                    'degenerate' if update.degenerate else f'{update.tau:.5f}')

        if self.context and self.context.run_dir and config.checkpoint_every and (
                state.epoch % config.checkpoint_every == 0 or state.epoch == config.epochs):
            self.save(self.path(f'checkpoint_e{state.epoch:04d}.bin'))
            self.save(self.path('checkpoint.bin'))

        return record

    def checkpoint_meta(self) -> dict:
        return {
            'epoch': self.state.epoch,
            'iteration': self.state.iteration,
            'version': self.state.params.version,
            'config': config_to_dict(self.config),
        }

    def save(self, path: str):
        save_checkpoint(path, self.state.tensors(), self.arch, self.checkpoint_meta())

    @classmethod
    def resume(cls, path: str, config: Optional[TrainConfig] = None, context: Optional[Context] = None,
               data: Optional[Tuple[Dataset, Dataset]] = None) -> 'Trainer':
        """
        Rebuilds a trainer from a checkpoint. `config` may extend the run (more epochs); by default
        the stored config is used.
        """
        if data is None:
            stored = config or checkpoint_config(path)
            data = load_dataset(stored.dataset, stored.seed)
        config, state, _ = load_state(path, config, data)
        trainer = cls(config, context, data, state)
        logger.info('resumed %s at epoch %d, iteration %d', path, state.epoch, state.iteration)
        return trainer

    def write_manifest(self):
        path = self.path('manifest.json')
        if not path:
            return
        config = self.config
        write_manifest(path, {
            'config': config_to_dict(config),
            'seed': config.seed,
            'policy': str(self.policy),
            'build': {
                'saakit': saakit.__version__,
                'numpy': np.__version__,
                'python': platform.python_version(),
            },
            'threads': config.threads,
            'hardware': hardware_info(),
            'labeled_indices': self.labeled_indices.tolist(),
            'model_graph': model_graph(self.arch),
        })
        with open(self.path('config.cfg'), 'w') as h:
            h.write(config_to_text(config))

    def _truncate_outputs(self):
        """
        On resume, drops rows of the run files that lie beyond the resumed epoch.
        """
        epoch = self.state.epoch
        metrics = self.path('metrics.csv')
        if metrics and os.path.isfile(metrics):
            write_metrics(metrics, [r for r in read_metrics(metrics) if r.epoch <= epoch])
        for name in ('markers.csv', 'tracked.csv'):
            path = self.path(name)
            if not path or not os.path.isfile(path):
                continue
            with open(path) as h:
                lines = h.readlines()
            kept = lines[:1] + [line for line in lines[1:] if int(line.split(',', 1)[0]) <= epoch]
            with open(path, 'w') as h:
                h.writelines(kept)

    def run(self) -> RunResult:
        config = self.config
        if self.state.epoch > 0:
            self._truncate_outputs()
        manifest = self.path('manifest.json')
        if manifest and not os.path.isfile(manifest):
            self.write_manifest()

        logger.info('training %d epochs of %d iterations, policy %s, warm-up %d epochs, %d labeled / %d unlabeled',
                    config.epochs, config.iters_per_epoch, self.policy, config.warmup_epochs, self.labeled.size,
                    self.unlabeled.size)
        try:
            while self.state.epoch < config.epochs:
                self.train_epoch()
        finally:
            self.close()

        history = self.path('history.csv')
        if history:
            write_history(history, self.state.history)

        if not self.records:
            raise TrainingAbort(f'nothing to train, checkpoint is already at epoch {self.state.epoch}')
        return RunResult(self.records[-1], self.records, self.context.run_dir if self.context else None)


def _stored_config(path: str, meta: dict) -> TrainConfig:
    try:
        return config_from_dict(meta['config'], path)
    except (KeyError, ConfigError) as e:
        raise CheckpointError(f'{path}: invalid checkpoint metadata: {e}')


def checkpoint_config(path: str) -> TrainConfig:
    """
    The configuration a checkpoint was written with.
    """
    meta, _ = load_checkpoint(path)
    return _stored_config(path, meta)


def run(config: TrainConfig, run_dir: Optional[str] = None, echo: bool = True,
        data: Optional[Tuple[Dataset, Dataset]] = None, resume: Optional[str] = None) -> RunResult:
    """
    Trains one configuration. With `run_dir`, the run directory receives manifest.json, config.cfg,
    metrics.csv, markers.csv, history.csv, run.log and checkpoints.
    """
    context = Context(ContextOptions(run_dir=run_dir, echo=echo))
    try:
        if resume:
            trainer = Trainer.resume(resume, config, context, data)
        else:
            trainer = Trainer(config, context, data)
        return trainer.run()
    finally:
        context.shutdown()



def load_state(path: str, config: Optional[TrainConfig] = None,
               data: Optional[Tuple[Dataset, Dataset]] = None) -> Tuple[TrainConfig, RunState, Dataset]:
    """
    Reads a checkpoint back into a RunState.

    :return: (config, state, test set)
    """
    meta, _ = load_checkpoint(path)
    config = config or _stored_config(path, meta)
    train, test = data if data is not None else load_dataset(config.dataset, config.seed)
    arch = resolve_arch(config, train)
    meta, tensors = load_checkpoint(path, arch)
    try:
        epoch, iteration, version = int(meta['epoch']), int(meta['iteration']), int(meta['version'])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f'{path}: invalid checkpoint metadata: {e}')
    names = [k[len('params/'):] for k in tensors if k.startswith('params/')]
    state = RunState.from_tensors(tensors, names, config.history_decay, epoch, iteration, version)
    return config, state, test


def evaluate_checkpoint(path: str, config: Optional[TrainConfig] = None,
                        data: Optional[Tuple[Dataset, Dataset]] = None) -> dict:
    """
    Test accuracy of the averaged and of the raw parameters stored in a checkpoint.
    """
    config, state, test = load_state(path, config, data)
    arch = config.arch._replace(channels=test.images.shape[1], side=test.images.shape[2], classes=test.classes)
    return {
        'epoch': state.epoch,
        'iteration': state.iteration,
        'ema_acc': evaluate(state.ema_params, test, arch, config.eval_batch),
        'acc': evaluate(state.params, test, arch, config.eval_batch),
    }
