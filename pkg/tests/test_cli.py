import pytest

from src.cli import build_parser, exit_code, run
from src.common import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK
from src.errors import CheckpointError, ConfigError, DatasetError, NumericError, ShapeError, SnrFloorError


def argv(tmp_path, *args):
    return list(args) + ['--out', str(tmp_path / 'run'), '--threads', '1', '-q', '--set', 'ofdm.n_symbols=64']


class TestParser:

    def test_common_options(self):
        args = build_parser().parse_args(['generate', '--split', 'lwnn-test', '--set', 'a=1', '--set', 'b=2',
                                          '--seed', '3'])
        assert args.overrides == ['a=1', 'b=2']
        assert args.seed == 3
        assert args.count is None

    def test_rejects_unknown_split(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(['generate', '--split', 'all'])


class TestExitCodes:

    @pytest.mark.parametrize('error, code', [
        (ConfigError('x'), EXIT_CONFIG),
        (ShapeError('x'), EXIT_CONFIG),
        (DatasetError('x'), EXIT_IO),
        (CheckpointError('x'), EXIT_IO),
        (FileNotFoundError('x'), EXIT_IO),
        (NumericError('x'), EXIT_NUMERIC),
        (SnrFloorError(0, 5, 5.0), EXIT_NUMERIC),
    ])
    def test_mapping(self, error, code):
        assert exit_code(error) == code

    def test_unexpected_errors_propagate(self):
        with pytest.raises(KeyError):
            exit_code(KeyError('x'))


class TestRun:

    def test_generate(self, tmp_path, capsys):
        assert run(argv(tmp_path, 'generate', '--split', 'rnnbc-test', '--count', '2', '--verify')) == EXIT_OK
        assert (tmp_path / 'run' / 'records.bin').is_file()
        assert 'byte-identical' in capsys.readouterr().out

    def test_zero_count(self, tmp_path):
        assert run(argv(tmp_path, 'generate', '--split', 'rnnbc-test', '--count', '0')) == EXIT_CONFIG

    def test_unknown_setting(self, tmp_path):
        args = argv(tmp_path, 'generate', '--split', 'rnnbc-test') + ['--set', 'ofdm.nope=1']
        assert run(args) == EXIT_CONFIG

    def test_missing_archive(self, tmp_path):
        assert run(argv(tmp_path, 'train', '--model', 'rnnbc', '--data', str(tmp_path / 'none'))) == EXIT_IO

    def test_unreachable_snr_floor(self, tmp_path):
        args = argv(tmp_path, 'generate', '--split', 'rnnbc-test', '--count', '1') + \
            ['--set', 'channel.snr_floor_db=90', '--set', 'channel.max_redraws=2']
        assert run(args) == EXIT_NUMERIC

    def test_corrupt_checkpoint(self, tmp_path):
        assert run(argv(tmp_path / 'data', 'generate', '--split', 'lwnn-test', '--count', '1')) == EXIT_OK
        (tmp_path / 'bad.ckpt').write_bytes(b'not a checkpoint')
        code = run(argv(tmp_path, 'eval', '--lwnn', str(tmp_path / 'bad.ckpt'), '--data',
                        str(tmp_path / 'data' / 'run')))
        assert code == EXIT_IO

    def test_flops(self, tmp_path, capsys):
        assert run(['flops', '--model', 'rnnbc', '--out', str(tmp_path), '-q']) == EXIT_OK
        assert 'bigru2' in capsys.readouterr().out
