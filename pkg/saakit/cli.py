import argparse
import logging
import os
import sys
from typing import List, Optional

import simplejson

from saakit.ablation import parse_rows, run_ablation, write_table
from saakit.config import config_from_dict, config_to_text, load_config
from saakit.data import load_dataset
from saakit.errors import ConfigError, SaaError
from saakit.home import ensure_dir, get_out_root
from saakit.metrics import read_manifest, write_history
from saakit.plots import export_curves, export_preview
from saakit.selection import summarize_history
from saakit.trainer import checkpoint_config, evaluate_checkpoint, load_state, run

logger = logging.getLogger(__name__)


def flag_overrides(args) -> List[str]:
    """
    `key=value` overrides of a command line: --set entries first, dedicated flags win.
    """
    res = list(getattr(args, 'set', None) or [])
    flags = [
        ('seed', getattr(args, 'seed', None)),
        ('epochs', getattr(args, 'epochs', None)),
        ('policy', getattr(args, 'policy', None)),
        ('warmup_epochs', getattr(args, 'warmup', None)),
        ('dataset.kind', getattr(args, 'dataset', None)),
        ('dataset.path', getattr(args, 'dataset_path', None)),
        ('threads', getattr(args, 'threads', None)),
    ]
    res.extend(f'{key}={value}' for key, value in flags if value is not None)
    if getattr(args, 'patchwise', False):
        res.append('aug.patchwise=true')
    if getattr(args, 'no_progress', False):
        res.append('progress=false')
    return res


def unique_dir(root: str, name: str) -> str:
    path = os.path.join(root, name)
    n = 2
    while os.path.exists(path):
        path = os.path.join(root, f'{name}_{n}')
        n += 1
    return path


def cmd_train(args) -> int:
    overrides = flag_overrides(args)
    if args.resume:
        # without --config the stored config is the base the flags apply to
        base = [] if args.config else config_to_text(checkpoint_config(args.resume)).splitlines()
        config = load_config(args.config, base + overrides)
        run_dir = (os.path.join(args.out_dir or get_out_root(), args.name) if args.name
                   else os.path.dirname(os.path.abspath(args.resume)))
    else:
        config = load_config(args.config, overrides)
        root = args.out_dir or get_out_root()
        name = args.name or f'{config.policy.replace(":", "-")}_seed{config.seed}'
        run_dir = unique_dir(root, name)

    result = run(config, ensure_dir(run_dir), echo=not args.quiet, resume=args.resume)
    print(f'run_dir={result.run_dir}')
    print(f'test_acc={result.final.test_acc!r} naive_fraction={result.final.naive_fraction!r}')
    return 0


def cmd_eval(args) -> int:
    config = None
    if args.config or args.set:
        base = [] if args.config else config_to_text(checkpoint_config(args.checkpoint)).splitlines()
        config = load_config(args.config, base + (args.set or []))
    result = evaluate_checkpoint(args.checkpoint, config)
    print(simplejson.dumps(result, sort_keys=True))
    return 0


def _run_checkpoint(run_dir: str) -> str:
    path = os.path.join(run_dir, 'checkpoint.bin')
    if not os.path.isfile(path):
        raise SaaError(f'{run_dir}: no checkpoint.bin, train with checkpoint_every > 0')
    return path


def cmd_inspect_history(args) -> int:
    config, state, _ = load_state(_run_checkpoint(args.run_dir))
    summary = summarize_history(state.history, config.otsu_bins)
    summary['epoch'] = state.epoch
    for key, value in summary.items():
        print(f'{key}={value}')
    if args.csv:
        write_history(args.csv, state.history)
        print(f'history written to {args.csv}')
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args.config, flag_overrides(args))
    rows = parse_rows(args.policies.split(','), [int(w) for w in args.warmups.split(',')] if args.warmups else [])
    seeds = [int(s) for s in args.seeds.split(',')] if args.seeds else [config.seed]
    out_dir = ensure_dir(unique_dir(args.out_dir or get_out_root(), args.name))

    results = run_ablation(config, rows, seeds, out_dir, echo=not args.quiet)
    table = os.path.join(out_dir, 'ablation.csv')
    write_table(table, results)
    write_table(sys.stdout, results)
    print(f'table written to {table}')
    return 0


def cmd_export_plots(args) -> int:
    written = export_curves(args.run_dir, args.out, raster=not args.no_raster)
    if args.preview:
        config = config_from_dict(read_manifest(os.path.join(args.run_dir, 'manifest.json'))['config'])
        train, _ = load_dataset(config.dataset, config.seed)
        out_dir = args.out or args.run_dir
        written['preview'] = export_preview(os.path.join(out_dir, 'preview.png'), train, args.preview, config.aug,
                                            config.seed)
    for name, path in written.items():
        print(f'{name}={path}')
    return 0


def add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--config', default=None, help='key=value config file')
    parser.add_argument('--seed', type=int, default=None, help='random seed')
    parser.add_argument('--epochs', type=int, default=None, help='total epochs')
    parser.add_argument('--policy', default=None, help='otsu, fixed:<tau>, prop:<p>, all, none or random:<p>')
    parser.add_argument('--warmup', type=int, default=None, help='warm-up epochs of plain FixMatch')
    parser.add_argument('--dataset', default=None, help='synthetic, cifar10 or mnist')
    parser.add_argument('--dataset-path', default=None, help='directory of the cifar10/mnist files')
    parser.add_argument('--patchwise', action='store_true', help='patchwise diverse augmentation')
    parser.add_argument('--threads', type=int, default=None, help='augmentation worker threads')
    parser.add_argument('--set', action='append', metavar='KEY=VALUE', help='any config key, repeatable')
    parser.add_argument('--out-dir', default=None, help='output root, default $SAA_OUT_DIR or ./runs')
    parser.add_argument('--no-progress', action='store_true', help='no progress bar')
    parser.add_argument('--quiet', '-q', action='store_true', help='no log output on stderr')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='saakit', description='FixMatch with sample adaptive augmentation')
    commands = parser.add_subparsers(dest='command')
    commands.required = True

    train = commands.add_parser('train', help='train one configuration')
    add_config_flags(train)
    train.add_argument('--name', default=None, help='run directory name below the output root')
    train.add_argument('--resume', default=None, help='checkpoint to continue from')
    train.set_defaults(func=cmd_train)

    evaluate = commands.add_parser('eval', help='test accuracy of a checkpoint')
    evaluate.add_argument('checkpoint')
    evaluate.add_argument('--config', default=None, help='config to evaluate with instead of the stored one')
    evaluate.add_argument('--set', action='append', metavar='KEY=VALUE', help='override a config key')
    evaluate.set_defaults(func=cmd_eval)

    inspect = commands.add_parser('inspect-history', help='summary of the loss history of a run')
    inspect.add_argument('run_dir')
    inspect.add_argument('--csv', default=None, help='also write the history as csv')
    inspect.set_defaults(func=cmd_inspect_history)

    ablate = commands.add_parser('ablate', help='compare selection policies')
    add_config_flags(ablate)
    ablate.add_argument('--policies', default='none,all,otsu', help='comma separated, a policy may end in +patchwise')
    ablate.add_argument('--seeds', default=None, help='comma separated seeds, default the config seed')
    ablate.add_argument('--warmups', default=None, help='comma separated warm-up lengths for extra otsu rows')
    ablate.add_argument('--name', default='ablation', help='directory name below the output root')
    ablate.set_defaults(func=cmd_ablate)

    plots = commands.add_parser('export-plots', help='accuracy and naive fraction curves of a run')
    plots.add_argument('run_dir')
    plots.add_argument('--out', default=None, help='output directory, default the run directory')
    plots.add_argument('--preview', type=int, default=0, metavar='N', help='augmentation preview of N images')
    plots.add_argument('--no-raster', action='store_true', help='csv only')
    plots.set_defaults(func=cmd_export_plots)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        sys.stderr.write(f'config error: {e}\n')
        return 2
    except SaaError as e:
        sys.stderr.write(f'error: {e}\n')
        return 1


if __name__ == '__main__':
    sys.exit(main())
