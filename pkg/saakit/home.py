import os


def get_out_root() -> str:
    """
    Root directory for run directories: $SAA_OUT_DIR, or ./runs below the working directory.
    """
    path = os.environ.get('SAA_OUT_DIR')
    if path:
        return os.path.expanduser(path)

    return os.path.join(os.getcwd(), 'runs')


def ensure_dir(d: str) -> str:
    if not os.path.isdir(d):
        if os.path.isfile(d):
            raise NotADirectoryError(f'{d} exists and is a file, need a directory.')

        os.makedirs(d)

    return d
