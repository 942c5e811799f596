"""
Flat `key=value` configuration files.

    # comments and blank lines are ignored
    epochs=120
    policy=fixed:0.001
    aug.ops=[identity, rotate, solarize]

Values are typed with YAML, dotted keys address the nested sections (`dataset.`, `aug.`, `arch.`)
and the assembled dictionary is loaded into `TrainConfig` with typedload.
Precedence: defaults < file < overrides.
"""
import os
import re
import typing
from typing import Dict, Iterable, Optional, Tuple, Union

import typedload
import yaml

from saakit.errors import ConfigError
from saakit.model import AugmentConfig, ArchConfig, DatasetConfig, POLICY_KINDS, STRONG_OPS, SelectionPolicy, \
    TrainConfig
from saakit.utils import flatten_parameters, set_parameter_by_path

SECTIONS = {'dataset': DatasetConfig, 'aug': AugmentConfig, 'arch': ArchConfig}

DATASET_KINDS = ('synthetic', 'cifar10', 'mnist')

Location = Tuple[str, int]

SCIENTIFIC = re.compile(r'[-+]?\d+(\.\d*)?[eE][-+]?\d+')


def field_type(key: str):
    head, _, rest = key.partition('.')
    if rest:
        if head not in SECTIONS or '.' in rest:
            return None
        hints = typing.get_type_hints(SECTIONS[head])
        return hints.get(rest)

    if key in SECTIONS:
        return None

    return typing.get_type_hints(TrainConfig).get(key)


def parse_value(raw: str):
    raw = raw.strip()
    if raw == '':
        return ''
    if SCIENTIFIC.fullmatch(raw):
        # YAML 1.1 reads 1e-05 as a string
        return float(raw)
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        # fall back to the literal text, typedload decides whether it fits
        return raw


def parse_lines(lines: Iterable[str], source: str) -> Dict[str, Tuple[object, Location]]:
    entries = {}
    for number, line in enumerate(lines, start=1):
        stripped = line.split('#', 1)[0].strip()
        if not stripped:
            continue
        if '=' not in stripped:
            raise ConfigError(f'{source}:{number}: expected key=value, got {stripped!r}')

        key, raw = stripped.split('=', 1)
        key = key.strip()
        if not key:
            raise ConfigError(f'{source}:{number}: empty key')

        entries[key] = (parse_value(raw), (source, number))

    return entries


def _check_entry(key: str, value, location: Location):
    source, number = location
    where = f'{source}:{number}' if number else source
    hint = field_type(key)
    if hint is None:
        raise ConfigError(f'{where}: unknown key {key!r}')

    try:
        return typedload.load(value, hint)
    except Exception as e:
        raise ConfigError(f'{where}: invalid value {value!r} for {key}: {e}')


def warmup_for(epochs: int) -> int:
    """
    Warm-up length used when a config sets epochs but not warmup_epochs: a tenth of the run.
    """
    return max(0, int(epochs) // 10)


def load_config(path: Optional[str] = None,
                overrides: Union[None, Dict[str, object], Iterable[str]] = None) -> TrainConfig:
    """
    :param path: config file, or None for the defaults
    :param overrides: either a dict of dotted keys to values, or `key=value` strings. Both win over the file.
    """
    entries: Dict[str, Tuple[object, Location]] = {}

    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f'{path}: config file not found')
        with open(path, 'r') as h:
            entries.update(parse_lines(h, path))

    if overrides:
        if isinstance(overrides, dict):
            for key, value in overrides.items():
                if value is not None:
                    entries[key] = (value, ('override ' + key, 0))
        else:
            entries.update(parse_lines(list(overrides), 'override'))

    data: dict = {}
    for key, (value, location) in entries.items():
        set_parameter_by_path(data, key, _check_entry(key, value, location))

    if 'epochs' in data and 'warmup_epochs' not in data:
        data['warmup_epochs'] = warmup_for(data['epochs'])

    try:
        config = typedload.load(data, TrainConfig)
    except Exception as e:
        raise ConfigError(f'{path or "config"}: {e}')

    try:
        validate_config(config)
    except ConfigError as e:
        key = getattr(e, 'key', None)
        if key in entries:
            source, number = entries[key][1]
            raise ConfigError(f'{source}:{number}: {e}' if number else f'{source}: {e}')
        raise

    return config


def _invalid(key: str, message: str):
    e = ConfigError(f'{key}: {message}')
    e.key = key
    raise e


def parse_policy(text: str) -> SelectionPolicy:
    kind, _, value = str(text).strip().lower().partition(':')
    if kind not in POLICY_KINDS:
        _invalid('policy', f'unknown selection policy {text!r}, use one of otsu, fixed:<tau>, prop:<p>, all, none, '
                           f'random:<p>')

    if kind in ('fixed', 'prop', 'random'):
        if not value:
            _invalid('policy', f'policy {kind} needs a value, e.g. {kind}:0.5')
        try:
            number = float(value)
        except ValueError:
            _invalid('policy', f'invalid number in policy {text!r}')
        if kind == 'fixed' and number < 0:
            _invalid('policy', 'fixed threshold must be >= 0')
        if kind in ('prop', 'random') and not 0.0 <= number <= 1.0:
            _invalid('policy', f'{kind} fraction must be in [0, 1]')
        return SelectionPolicy(kind, number)

    if value:
        _invalid('policy', f'policy {kind} takes no value')

    return SelectionPolicy(kind)


def validate_config(config: TrainConfig):
    parse_policy(config.policy)

    if config.epochs < 1:
        _invalid('epochs', 'must be >= 1')
    if not 0 <= config.warmup_epochs <= config.epochs:
        _invalid('warmup_epochs', f'must be in [0, epochs={config.epochs}]')
    if config.iters_per_epoch < 1:
        _invalid('iters_per_epoch', 'must be >= 1')
    if config.labeled_batch < 1:
        _invalid('labeled_batch', 'must be >= 1')
    if config.mu < 1:
        _invalid('mu', 'must be >= 1')
    if config.lambda_u < 0:
        _invalid('lambda_u', 'must be >= 0')
    if config.threshold < 0:
        _invalid('threshold', 'must be >= 0')
    for key in ('history_decay', 'ema_decay'):
        if not 0.0 <= getattr(config, key) < 1.0:
            _invalid(key, 'must be in [0, 1)')
    if not 0.0 <= config.momentum < 1.0:
        _invalid('momentum', 'must be in [0, 1)')
    if config.lr <= 0:
        _invalid('lr', 'must be > 0')
    if config.weight_decay < 0:
        _invalid('weight_decay', 'must be >= 0')
    if config.otsu_bins < 2:
        _invalid('otsu_bins', 'must be >= 2')
    if config.threads < 1:
        _invalid('threads', 'must be >= 1')
    if config.precision not in ('float32', 'float64'):
        _invalid('precision', 'must be float32 or float64')
    if config.checkpoint_every < 0:
        _invalid('checkpoint_every', 'must be >= 0')
    if config.eval_batch < 1:
        _invalid('eval_batch', 'must be >= 1')

    dataset = config.dataset
    if dataset.kind not in DATASET_KINDS:
        _invalid('dataset.kind', f'must be one of {", ".join(DATASET_KINDS)}')
    if dataset.kind in ('cifar10', 'mnist') and not dataset.path:
        _invalid('dataset.path', f'{dataset.kind} needs a path')
    if dataset.side < 4 or dataset.side % 4:
        _invalid('dataset.side', 'must be a positive multiple of 4 (two 2x2 poolings)')
    if dataset.labels_per_class < 1:
        _invalid('dataset.labels_per_class', 'must be >= 1')
    if dataset.kind == 'synthetic':
        if not 1 <= dataset.classes <= 16:
            _invalid('dataset.classes', 'synthetic datasets support 1..16 classes')
        if dataset.channels not in (1, 3):
            _invalid('dataset.channels', 'must be 1 or 3')
        if dataset.n_train < 1 or dataset.n_test < 1:
            _invalid('dataset.n_train', 'synthetic sizes must be >= 1')
        if dataset.noise < 0:
            _invalid('dataset.noise', 'must be >= 0')

    aug = config.aug
    unknown = [op for op in aug.ops if op not in STRONG_OPS]
    if unknown:
        _invalid('aug.ops', f'unknown ops {unknown}, known: {", ".join(STRONG_OPS)}')
    if not aug.ops:
        _invalid('aug.ops', 'needs at least one op')
    if aug.n < 0:
        _invalid('aug.n', 'must be >= 0')
    if not 0.0 < aug.cutout_fraction <= 1.0:
        _invalid('aug.cutout_fraction', 'must be in (0, 1]')
    if not 0.0 <= aug.flip_prob <= 1.0:
        _invalid('aug.flip_prob', 'must be in [0, 1]')
    if not 0.0 <= aug.max_shift < 0.5:
        _invalid('aug.max_shift', 'must be in [0, 0.5)')

    for key in ('conv1', 'conv2', 'hidden'):
        if getattr(config.arch, key) < 1:
            _invalid('arch.' + key, 'must be >= 1')


def config_to_dict(config) -> dict:
    res = {}
    for k, v in config._asdict().items():
        if hasattr(v, '_asdict'):
            res[k] = config_to_dict(v)
        elif isinstance(v, tuple):
            res[k] = list(v)
        else:
            res[k] = v

    return res


def config_to_text(config: TrainConfig) -> str:
    lines = []
    for key, value in flatten_parameters(config_to_dict(config)).items():
        if isinstance(value, list):
            value = '[' + ', '.join(str(v) for v in value) + ']'
        elif value is None:
            value = 'null'
        elif isinstance(value, bool):
            value = 'true' if value else 'false'
        lines.append(f'{key}={value}')

    return '\n'.join(lines) + '\n'


def config_from_dict(data: dict, source: str = 'config') -> TrainConfig:
    """
    Inverse of config_to_dict, for configs stored in manifests and checkpoints.
    """
    try:
        config = typedload.load(data, TrainConfig)
    except Exception as e:
        raise ConfigError(f'{source}: {e}')
    validate_config(config)
    return config
