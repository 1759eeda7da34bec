"""Command-line front end: `generate`, `train`, `eval` and `flops`."""

import argparse
import logging
import sys

from src.app import App
from src.common import *
from src.errors import ConfigError, NumericError, ShapeError, SnrFloorError

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON file of dotted settings, e.g. {"ofdm.n_symbols": 128}')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='override one setting; may be repeated')
    common.add_argument('--seed', type=int, help='random seed (default: $%s, then run.seed)' % SEED_ENV)
    common.add_argument('--out', help='output directory (default: runs/<timestamp>)')
    common.add_argument('--threads', type=int, help='worker processes and torch threads (default: all cores)')
    common.add_argument('-v', '--verbose', action='store_true', help='log debug messages')
    common.add_argument('-q', '--quiet', action='store_true', help='log warnings and errors only')

    parser = argparse.ArgumentParser(prog=APP_NAME, description='Bit-loaded OFDM modulation classification.')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', parents=[common], help='simulate a dataset split')
    gen.add_argument('--split', required=True, choices=SPLITS)
    gen.add_argument('--count', type=int, help='number of captures (default: dataset.<split>)')
    gen.add_argument('--verify', action='store_true', help='regenerate and compare bytes')

    train = sub.add_parser('train', parents=[common], help='train a classifier')
    train.add_argument('--model', required=True, choices=(MODEL_LWNN, MODEL_RNNBC))
    train.add_argument('--data', required=True, help='dataset directory')
    train.add_argument('--epochs', type=int, help='epoch count (default: <model>.epochs)')

    ev = sub.add_parser('eval', parents=[common], help='evaluate trained classifiers')
    ev.add_argument('--lwnn', required=True, help='CNN checkpoint')
    ev.add_argument('--rnnbc', help='sequence classifier checkpoint (combined mode)')
    ev.add_argument('--data', required=True, help='dataset directory')
    ev.add_argument('--mode', choices=(MODE_LWNN_ONLY, MODE_COMBINED), default=MODE_LWNN_ONLY)

    flops = sub.add_parser('flops', parents=[common], help='report per-inference FLOPs')
    flops.add_argument('--model', choices=(MODEL_LWNN, MODEL_RNNBC))
    flops.add_argument('--table', action='store_true', help='add the complexity comparison table')
    return parser


def cmd_generate(app: App, args):
    app.generate(args.split, args.count, args.verify)


def cmd_train(app: App, args):
    app.train(args.model, args.data, args.epochs)


def cmd_eval(app: App, args):
    app.evaluate(args.data, args.lwnn, args.rnnbc, args.mode)


def cmd_flops(app: App, args):
    app.flops(args.model, args.table)


COMMANDS = {
    'generate': cmd_generate,
    'train': cmd_train,
    'eval': cmd_eval,
    'flops': cmd_flops,
}


def exit_code(e: Exception) -> int:
    """Maps an error to the process exit status."""

    if isinstance(e, (ConfigError, ShapeError)):
        return EXIT_CONFIG
    if isinstance(e, (NumericError, SnrFloorError)):
        return EXIT_NUMERIC
    if isinstance(e, OSError):
        return EXIT_IO
    raise e


def run(argv=None) -> int:
    """Parses `argv`, runs the command and returns its exit status."""

    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)

    try:
        app = App(args.config, args.overrides, args.seed, args.out, args.threads)
        COMMANDS[args.command](app, args)
    except Exception as e:
        code = exit_code(e)
        logger.error('%s', e)
        return code
    return EXIT_OK


__all__ = ['build_parser', 'run', 'exit_code', 'COMMANDS']
