"""
Run directory files: metrics.csv, markers.csv, tracked.csv, history.csv and manifest.json.

Floats are written with repr(), which round-trips bit-exactly through float().
"""
import csv
import io
import os
from typing import Iterable, List, Sequence, TextIO, Union

import simplejson

from saakit.errors import SaaError
from saakit.model import MetricsRecord
from saakit.selection import SampleHistory

METRICS_COLUMNS = list(MetricsRecord._fields)
MARKER_COLUMNS = ['epoch', 'tau', 'degenerate', 'naive_count', 'flips', 'diverse_applied', 'strong_applied',
                  'observed_ids']
TRACKED_COLUMNS = ['epoch', 'iteration', 'sample_id', 'raw_loss', 'h', 'f', 'augmentation']
HISTORY_COLUMNS = ['sample_id', 'h', 'f', 'observed']

_INT_FIELDS = {'epoch', 'iteration', 'wall_ms'}


def format_value(v) -> str:
    if isinstance(v, bool):
        return '1' if v else '0'
    if isinstance(v, float):
        return repr(v)
    return str(v)


def append_row(path: str, columns: Sequence[str], row: Sequence):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, 'a', newline='') as h:
        writer = csv.writer(h, lineterminator='\n')
        if new:
            writer.writerow(columns)
        writer.writerow([format_value(v) for v in row])


def write_rows(target: Union[str, TextIO], columns: Sequence[str], rows: Iterable[Sequence]):
    if isinstance(target, str):
        with open(target, 'w', newline='') as h:
            write_rows(h, columns, rows)
        return

    writer = csv.writer(target, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])


def append_metrics(path: str, record: MetricsRecord):
    append_row(path, METRICS_COLUMNS, list(record))


def write_metrics(path: str, records: Iterable[MetricsRecord]):
    write_rows(path, METRICS_COLUMNS, (list(r) for r in records))


def read_metrics(path: str) -> List[MetricsRecord]:
    if not os.path.isfile(path):
        raise SaaError(f'{path}: metrics file not found')

    with open(path, newline='') as h:
        reader = csv.reader(h)
        header = next(reader, None)
        if header != METRICS_COLUMNS:
            raise SaaError(f'{path}: unexpected metrics header {header}')
        records = []
        for row in reader:
            values = {}
            for name, raw in zip(METRICS_COLUMNS, row):
                values[name] = int(raw) if name in _INT_FIELDS else float(raw)
            records.append(MetricsRecord(**values))

    return records


def history_rows(history: SampleHistory):
    for i in range(history.size):
        yield i, float(history.h[i]), bool(history.f[i]), int(history.observed[i])


def write_history(target: Union[str, TextIO], history: SampleHistory):
    write_rows(target, HISTORY_COLUMNS, history_rows(history))


def history_csv(history: SampleHistory) -> str:
    out = io.StringIO()
    write_history(out, history)
    return out.getvalue()


def write_manifest(path: str, manifest: dict):
    with open(path, 'w') as h:
        simplejson.dump(manifest, h, indent=2, sort_keys=True)
        h.write('\n')


def read_manifest(path: str) -> dict:
    if not os.path.isfile(path):
        raise SaaError(f'{path}: manifest not found')
    with open(path) as h:
        return simplejson.load(h)


def manifest_diff(a: dict, b: dict, prefix: str = '') -> List[str]:
    """
    Dotted keys whose values differ between two manifests.
    """
    keys = []
    for k in sorted(set(a) | set(b)):
        path = prefix + k
        va, vb = a.get(k), b.get(k)
        if isinstance(va, dict) and isinstance(vb, dict):
            keys.extend(manifest_diff(va, vb, path + '.'))
        elif va != vb:
            keys.append(path)

    return keys
