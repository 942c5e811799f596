import saakit.globals
from saakit.context import Context
from saakit.model import ContextOptions

__version__ = '0.1.0'


def log(s):
    if saakit.globals.last_context:
        saakit.globals.last_context.log(s)
    else:
        saakit.globals.last_logs.write(s)


def context(options: ContextOptions = None) -> Context:
    """
    :param options: ContextOptions
    :return: returns either a new context or the last created one. Never creates multiple context.
    """
    if saakit.globals.last_context:
        return saakit.globals.last_context

    return Context(options)


def epoch(epoch, total=None):
    context().epoch(epoch, total)
