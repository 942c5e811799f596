import pytest
import typedload

from saakit.config import config_from_dict, config_to_dict, config_to_text, load_config, parse_policy
from saakit.errors import ConfigError
from saakit.home import get_out_root
from saakit.model import SelectionPolicy, TrainConfig


def write(tmp_path, text):
    path = tmp_path / 'run.cfg'
    path.write_text(text)
    return str(path)


def test_train_config_convert():
    config = typedload.load({
        'epochs': 10,
        'policy': 'prop:0.3',
        'dataset': {'kind': 'synthetic', 'classes': 3},
        'aug': {'ops': ['identity', 'rotate'], 'patchwise': True},
    }, TrainConfig)

    assert config.epochs == 10
    assert config.dataset.classes == 3
    assert config.aug.ops == ('identity', 'rotate')
    assert config.aug.patchwise
    assert config.arch == TrainConfig().arch


def test_defaults():
    config = load_config()
    assert config == TrainConfig()
    assert config.unlabeled_batch == config.mu * config.labeled_batch
    assert config.total_iterations == config.epochs * config.iters_per_epoch


def test_file_values(tmp_path):
    path = write(tmp_path, '\n'.join([
        '# desk run',
        'epochs=20',
        '',
        'warmup_epochs=2  # short',
        'threshold=0.9',
        'weight_decay=1e-4',
        'policy=fixed:0.01',
        'aug.ops=[identity, solarize]',
        'dataset.split_seed=null',
        'wall_clock=false',
    ]))
    config = load_config(path)

    assert config.epochs == 20
    assert config.warmup_epochs == 2
    assert config.threshold == 0.9
    assert config.weight_decay == 1e-4
    assert config.policy == 'fixed:0.01'
    assert config.aug.ops == ('identity', 'solarize')
    assert config.dataset.split_seed is None
    assert config.wall_clock is False


def test_unknown_key_names_line(tmp_path):
    path = write(tmp_path, 'epochs=20\n\nlearning_rate=0.1\n')
    with pytest.raises(ConfigError) as e:
        load_config(path)
    assert str(e.value).startswith(f'{path}:3:')
    assert 'learning_rate' in str(e.value)


def test_malformed_line(tmp_path):
    path = write(tmp_path, 'epochs 20\n')
    with pytest.raises(ConfigError) as e:
        load_config(path)
    assert str(e.value).startswith(f'{path}:1:')


def test_bad_value_type(tmp_path):
    path = write(tmp_path, 'seed=0\nepochs=many\n')
    with pytest.raises(ConfigError) as e:
        load_config(path)
    assert str(e.value).startswith(f'{path}:2:')


def test_cross_field_error_names_key_and_line(tmp_path):
    path = write(tmp_path, 'epochs=10\nwarmup_epochs=11\n')
    with pytest.raises(ConfigError) as e:
        load_config(path)
    assert str(e.value).startswith(f'{path}:2:')
    assert 'warmup_epochs' in str(e.value)


@pytest.mark.parametrize('line', ['mu=0', 'threshold=-1', 'history_decay=1.0', 'dataset.side=18',
                                  'aug.ops=[identity, blur]', 'policy=prop:1.5', 'precision=float16'])
def test_invalid_values(tmp_path, line):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, line + '\n'))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'missing.cfg'))


def test_overrides_win_over_file(tmp_path):
    path = write(tmp_path, 'epochs=5\nseed=3\n')
    assert load_config(path, ['epochs=7']).epochs == 7
    assert load_config(path, ['epochs=7']).seed == 3
    assert load_config(path, {'epochs': 9, 'seed': None}).epochs == 9
    assert load_config(path, {'epochs': 9, 'seed': None}).seed == 3


def test_text_round_trip():
    config = TrainConfig(epochs=7, warmup_epochs=3, policy='random:0.25', weight_decay=0.0005, track_samples=(1, 5))
    config = config._replace(aug=config.aug._replace(ops=('rotate', 'posterize'), patchwise=True))

    assert load_config(None, config_to_text(config).splitlines()) == config
    assert config_from_dict(config_to_dict(config)) == config


def test_parse_policy():
    assert parse_policy('otsu') == SelectionPolicy('otsu')
    assert parse_policy('fixed:0.5') == SelectionPolicy('fixed', 0.5)
    assert parse_policy('PROP:0.25') == SelectionPolicy('prop', 0.25)
    assert str(parse_policy('random:0.5')) == 'random:0.5'
    assert str(parse_policy('all')) == 'all'

    for bad in ('bogus', 'fixed', 'prop:2', 'none:1', 'fixed:abc'):
        with pytest.raises(ConfigError):
            parse_policy(bad)


def test_out_root(monkeypatch, tmp_path):
    monkeypatch.setenv('SAA_OUT_DIR', str(tmp_path))
    assert get_out_root() == str(tmp_path)

    monkeypatch.delenv('SAA_OUT_DIR')
    monkeypatch.chdir(tmp_path)
    assert get_out_root() == str(tmp_path / 'runs')


def test_warmup_follows_epochs(tmp_path):
    assert load_config(None, ['epochs=1']).warmup_epochs == 0
    assert load_config(None, ['epochs=30']).warmup_epochs == 3
    assert load_config(write(tmp_path, 'epochs=50\n'), ['seed=7']).warmup_epochs == 5
    # an explicit warm-up is kept, and still checked against epochs
    assert load_config(None, ['epochs=30', 'warmup_epochs=0']).warmup_epochs == 0
    with pytest.raises(ConfigError):
        load_config(None, ['epochs=1', 'warmup_epochs=2'])
    assert load_config().warmup_epochs == TrainConfig().warmup_epochs
