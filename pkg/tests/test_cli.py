import os

import pytest

from saakit.cli import build_parser, flag_overrides, main, unique_dir
from saakit.metrics import read_metrics

TINY = '''
dataset.classes=2
dataset.n_train=40
dataset.n_test=20
dataset.side=8
dataset.labels_per_class=2
labeled_batch=4
mu=2
epochs=2
iters_per_epoch=2
warmup_epochs=1
history_decay=0.9
checkpoint_every=1
wall_clock=false
progress=false
arch.conv1=4
arch.conv2=4
arch.hidden=8
'''


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'tiny.cfg'
    path.write_text(TINY)
    return str(path)


def train(tmp_path, config_file, *extra, name='run'):
    code = main(['train', '--config', config_file, '--out-dir', str(tmp_path), '--name', name, '-q'] + list(extra))
    return code, tmp_path / name


def test_flag_overrides():
    args = build_parser().parse_args(['train', '--set', 'seed=3', '--seed', '4', '--policy', 'prop:0.3',
                                      '--warmup', '2', '--patchwise', '--no-progress'])
    assert flag_overrides(args) == ['seed=3', 'seed=4', 'policy=prop:0.3', 'warmup_epochs=2', 'aug.patchwise=true',
                                    'progress=false']


def test_unique_dir(tmp_path):
    assert unique_dir(str(tmp_path), 'a') == str(tmp_path / 'a')
    (tmp_path / 'a').mkdir()
    (tmp_path / 'a_2').mkdir()
    assert unique_dir(str(tmp_path), 'a') == str(tmp_path / 'a_3')


def test_config_errors_exit_2(tmp_path, config_file):
    assert main(['train', '--config', str(tmp_path / 'missing.cfg'), '--out-dir', str(tmp_path)]) == 2
    assert train(tmp_path, config_file, '--policy', 'median')[0] == 2
    assert train(tmp_path, config_file, '--set', 'warmup_epochs=5')[0] == 2
    assert main(['ablate', '--config', config_file, '--policies', 'otsu+cutmix', '--out-dir', str(tmp_path)]) == 2


def test_train_and_inspect(tmp_path, config_file, capsys):
    code, run_dir = train(tmp_path, config_file, '--set', 'track_samples=[0, 1]')
    assert code == 0
    out = capsys.readouterr().out
    assert f'run_dir={run_dir}' in out
    for name in ('manifest.json', 'config.cfg', 'metrics.csv', 'markers.csv', 'history.csv', 'checkpoint.bin'):
        assert (run_dir / name).exists()
    assert len(read_metrics(str(run_dir / 'metrics.csv'))) == 2

    assert main(['inspect-history', str(run_dir), '--csv', str(tmp_path / 'h.csv')]) == 0
    out = capsys.readouterr().out
    assert 'size=40' in out
    assert 'epoch=2' in out
    assert len((tmp_path / 'h.csv').read_text().splitlines()) == 41

    assert main(['eval', str(run_dir / 'checkpoint.bin')]) == 0
    assert '"epoch": 2' in capsys.readouterr().out

    assert main(['inspect-history', str(tmp_path)]) == 1


def test_resume_continues_in_the_run_directory(tmp_path, config_file):
    _, run_dir = train(tmp_path, config_file)
    before = read_metrics(str(run_dir / 'metrics.csv'))

    assert main(['train', '--resume', str(run_dir / 'checkpoint_e0001.bin'), '-q']) == 0
    assert read_metrics(str(run_dir / 'metrics.csv')) == before

    assert main(['train', '--resume', str(run_dir / 'checkpoint.bin'), '--epochs', '3', '-q']) == 0
    after = read_metrics(str(run_dir / 'metrics.csv'))
    assert after[:2] == before
    assert after[2].epoch == 3


def test_export_plots(tmp_path, config_file, capsys):
    _, run_dir = train(tmp_path, config_file)
    out = tmp_path / 'plots'
    assert main(['export-plots', str(run_dir), '--out', str(out), '--preview', '2']) == 0

    records = read_metrics(str(run_dir / 'metrics.csv'))
    accuracy = (out / 'accuracy.csv').read_text().splitlines()
    assert accuracy[0] == 'iteration,test_acc'
    assert accuracy[1:] == [f'{r.iteration},{r.test_acc!r}' for r in records]
    naive = (out / 'naive_fraction.csv').read_text().splitlines()
    assert len(naive) == 1 + 2
    assert (out / 'curves.png').exists()
    assert (out / 'preview.png').exists()

    assert main(['export-plots', str(tmp_path / 'nothing')]) == 1


def test_ablate(tmp_path, config_file, capsys):
    code = main(['ablate', '--config', config_file, '--policies', 'otsu,none', '--out-dir', str(tmp_path),
                 '--name', 'abl', '-q'])
    assert code == 0
    table = (tmp_path / 'abl' / 'ablation.csv').read_text().splitlines()
    assert table[0] == 'method,policy,patchwise,warmup_epochs,acc_seed0,mean,std'
    assert len(table) == 3
    assert table[1].startswith('Otsu threshold,otsu,0,')
    assert os.path.isdir(str(tmp_path / 'abl' / 'none_seed0'))


def test_seed_and_epochs_flags_on_a_short_run(tmp_path, config_file, capsys):
    # no epochs or warm-up in the file, so the warm-up follows --epochs
    short = tmp_path / 'short.cfg'
    short.write_text('\n'.join(line for line in TINY.splitlines() if not line.startswith(('epochs', 'warmup'))))
    code, run_dir = train(tmp_path, str(short), '--seed', '7', '--epochs', '1')
    assert code == 0
    records = read_metrics(str(run_dir / 'metrics.csv'))
    assert [r.epoch for r in records] == [1]
    assert 'seed=7' in (run_dir / 'config.cfg').read_text().splitlines()
    assert 'warmup_epochs=0' in (run_dir / 'config.cfg').read_text().splitlines()
