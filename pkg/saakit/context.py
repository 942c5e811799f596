import atexit
import logging
import os
import sys
import time
from threading import Lock
from typing import List, Optional

import psutil
from rx.subject import Subject

import saakit.globals
from saakit.home import ensure_dir
from saakit.metrics import append_metrics
from saakit.model import ContextOptions, MetricsRecord

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def hardware_info() -> dict:
    return {
        'cpu_count': psutil.cpu_count(),
        'cpu_count_physical': psutil.cpu_count(logical=False),
        'memory_total': psutil.virtual_memory().total,
    }


class ContextLogHandler(logging.Handler):
    """
    Forwards records of the `saakit` loggers into the log stream of a context.
    """

    def __init__(self, context: 'Context'):
        super().__init__()
        self.context = context
        self.setFormatter(logging.Formatter(LOG_FORMAT))

    def emit(self, record: logging.LogRecord):
        try:
            self.context.log(self.format(record) + '\n')
        except Exception:
            self.handleError(record)


class Context:
    """
    One training run. Log lines and metrics records flow through rx subjects; subscribers persist
    them into the run directory when one is configured.
    """

    def __init__(self, options: ContextOptions = None):
        if options is None:
            options = ContextOptions()

        self.options = options
        self.run_dir = ensure_dir(options.run_dir) if options.run_dir else None
        saakit.globals.last_context = self

        self.log_lock = Lock()
        self.log_subject = Subject()
        self.metric_subject = Subject()
        self.records: List[MetricsRecord] = []
        self.shutting_down = False

        self.job_epoch = 0
        self.job_epochs = 0
        self.last_epoch_time = 0
        self.seconds_per_epoch = 0
        self.seconds_per_epochs = []
        self.process = psutil.Process()

        def on_log(s: str):
            with self.log_lock:
                if self.options.echo:
                    sys.stderr.write(s)
                if self.run_dir:
                    with open(os.path.join(self.run_dir, 'run.log'), 'a') as h:
                        h.write(s)

        self.log_subject.subscribe(on_log)

        def on_metric(record: MetricsRecord):
            self.records.append(record)
            if self.run_dir:
                append_metrics(os.path.join(self.run_dir, 'metrics.csv'), record)

        self.metric_subject.subscribe(on_metric)

        if len(saakit.globals.last_logs.getvalue()) > 0:
            self.log_subject.on_next(saakit.globals.last_logs.getvalue())
            saakit.globals.last_logs = type(saakit.globals.last_logs)('')

        self.log_handler = ContextLogHandler(self)
        package_logger = logging.getLogger('saakit')
        package_logger.addHandler(self.log_handler)
        if package_logger.level == logging.NOTSET:
            package_logger.setLevel(logging.INFO)

        atexit.register(self.shutdown)

    def path(self, name: str) -> Optional[str]:
        return os.path.join(self.run_dir, name) if self.run_dir else None

    def shutdown(self):
        if self.shutting_down: return
        self.shutting_down = True
        logging.getLogger('saakit').removeHandler(self.log_handler)
        self.metric_subject.on_completed()
        self.log_subject.on_completed()
        if saakit.globals.last_context is self:
            saakit.globals.last_context = None

    def log(self, s: str):
        if self.shutting_down: return
        self.log_subject.on_next(s)

    def metric(self, record: MetricsRecord):
        self.metric_subject.on_next(record)

    def epoch(self, current: int, total: Optional[int] = None):
        """
        Epoch bookkeeping: keeps a running seconds-per-epoch over the last 30 epochs and logs
        progress with an ETA and the process CPU/memory usage.
        """
        self.job_epoch = current
        if total:
            self.job_epochs = total

        now = time.time()
        if self.last_epoch_time:
            self.seconds_per_epochs.append(now - self.last_epoch_time)
            self.seconds_per_epochs = self.seconds_per_epochs[-30:]
            self.seconds_per_epoch = sum(self.seconds_per_epochs) / len(self.seconds_per_epochs)

        self.last_epoch_time = now

        epochs_left = max(self.job_epochs - self.job_epoch, 0)
        eta = self.seconds_per_epoch * epochs_left
        memory = self.process.memory_info().rss / (1024 * 1024)
        cpu = self.process.cpu_percent(interval=None)
        self.log(f'epoch {self.job_epoch}/{self.job_epochs} {self.seconds_per_epoch:.2f}s/epoch '
                 f'eta {eta:.0f}s cpu {cpu:.0f}% rss {memory:.0f}MB\n')
