import io

import pytest

from saakit.errors import SaaError
from saakit.metrics import (HISTORY_COLUMNS, append_metrics, history_csv, manifest_diff, read_manifest, read_metrics,
                            write_manifest, write_metrics, write_rows)
from saakit.model import MetricsRecord
from saakit.selection import SampleHistory


def record(epoch, acc=0.1 + 0.2):
    return MetricsRecord(epoch=epoch, iteration=epoch * 64, test_acc=acc, sup_loss=1 / 3, unsup_loss=0.0,
                         mask_rate=0.5, naive_fraction=0.0, lr=0.03, wall_ms=0)


def test_metrics_file(tmp_path):
    path = str(tmp_path / 'metrics.csv')
    append_metrics(path, record(1))
    append_metrics(path, record(2, 0.75))

    lines = open(path).read().splitlines()
    assert lines[0] == 'epoch,iteration,test_acc,sup_loss,unsup_loss,mask_rate,naive_fraction,lr,wall_ms'
    assert len(lines) == 3
    # repr keeps every bit of the float
    assert read_metrics(path) == [record(1), record(2, 0.75)]

    copy = str(tmp_path / 'copy.csv')
    write_metrics(copy, read_metrics(path))
    assert open(copy).read() == open(path).read()


def test_read_metrics_errors(tmp_path):
    with pytest.raises(SaaError):
        read_metrics(str(tmp_path / 'missing.csv'))
    bad = tmp_path / 'bad.csv'
    bad.write_text('a,b\n1,2\n')
    with pytest.raises(SaaError):
        read_metrics(str(bad))


def test_history_csv():
    history = SampleHistory(3, 0.5)
    history.record_losses([0, 0, 2], [1.0, 3.0, 0.25])
    history.f[2] = True

    lines = history_csv(history).splitlines()
    assert lines[0] == ','.join(HISTORY_COLUMNS)
    assert lines[1:] == ['0,2.0,0,2', '1,0.0,0,0', '2,0.25,1,1']


def test_manifest(tmp_path):
    path = str(tmp_path / 'manifest.json')
    manifest = {'seed': 0, 'config': {'policy': 'otsu', 'aug': {'patchwise': False}}, 'build': {'numpy': '1.0'}}
    write_manifest(path, manifest)
    assert read_manifest(path) == manifest

    other = {'seed': 0, 'config': {'policy': 'none', 'aug': {'patchwise': True}}, 'extra': 1}
    assert manifest_diff(manifest, other) == ['build', 'config.aug.patchwise', 'config.policy', 'extra']
    assert manifest_diff(manifest, manifest) == []

    with pytest.raises(SaaError):
        read_manifest(str(tmp_path / 'none.json'))


def test_write_rows_to_stream():
    out = io.StringIO()
    write_rows(out, ['a', 'b'], [[1, 0.5], [True, 'x']])
    assert out.getvalue() == 'a,b\n1,0.5\n1,x\n'
