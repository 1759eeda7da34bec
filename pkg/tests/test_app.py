import json

import pandas as pd
import pytest

from src.app import DEFAULT_CONFIG, App, coerce, flatten, parse_override, resolve_config
from src.common import CONFIG_FILE, MANIFEST_FILE, MODE_COMBINED, SEED_ENV, STATUS_READY
from src.data import DatasetConfig, generate_dataset
from src.errors import ConfigError, DatasetError, ShapeError
from src.models import build_lwnn, build_rnnbc, save_model
from src.ofdm import OfdmConfig

SMALL = [('ofdm.n_symbols', '64')]


@pytest.fixture(scope='module')
def archives(tmp_path_factory):
    cfg = DatasetConfig(ofdm=OfdmConfig(n_symbols=64))
    root = tmp_path_factory.mktemp('archives')
    for split in ('lwnn-test', 'rnnbc-train'):
        generate_dataset(cfg, 4, 3, split, root / split, jobs=1)
    return root


@pytest.fixture(scope='module')
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp('checkpoints')
    save_model(build_lwnn(64, seed=1), root / 'lwnn.ckpt')
    save_model(build_rnnbc(32, seed=1), root / 'rnnbc.ckpt')
    return root


def make_app(tmp_path, **kwargs):
    return App(overrides=kwargs.pop('overrides', SMALL), out_dir=tmp_path / 'run', threads=1, **kwargs)


class TestConfig:

    def test_defaults(self):
        config = resolve_config()
        assert config == flatten(DEFAULT_CONFIG)
        assert config['ofdm.n_subcarriers'] == 64
        assert config['run.seed'] == 0

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / 'c.json'
        path.write_text(json.dumps({'ofdm.n_symbols': 128, 'lwnn.lr': 0.01}))
        config = resolve_config(path, [('lwnn.lr', '0.5')])
        assert config['ofdm.n_symbols'] == 128
        assert config['lwnn.lr'] == 0.5

    @pytest.mark.parametrize('overrides', [[('ofdm.bogus', '1')], [('ofdm.n_symbols', 'many')],
                                           [('bitloading.power_loading', '1')]])
    def test_rejects_overrides(self, overrides):
        with pytest.raises(ConfigError):
            resolve_config(overrides=overrides)

    def test_rejects_bad_file(self, tmp_path):
        path = tmp_path / 'c.json'
        path.write_text('[1, 2]')
        with pytest.raises(ConfigError):
            resolve_config(path)
        path.write_text('{')
        with pytest.raises(ConfigError):
            resolve_config(path)

    def test_coerce(self):
        assert coerce('k', '3', 1.0) == 3.0
        assert coerce('k', 'true', False) is True
        assert coerce('k', 2.0, 1) == 2
        with pytest.raises(ConfigError):
            coerce('k', 1.5, 1)
        with pytest.raises(ConfigError):
            coerce('k', True, 1)

    def test_parse_override(self):
        assert parse_override(' run.seed = 4 ') == ('run.seed', '4')
        with pytest.raises(ConfigError):
            parse_override('run.seed')


class TestSeed:

    def test_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV, '17')
        assert make_app(tmp_path).seed == 17
        assert make_app(tmp_path, seed=5).seed == 5

    def test_config(self, tmp_path, monkeypatch):
        monkeypatch.delenv(SEED_ENV, raising=False)
        app = make_app(tmp_path, overrides=[('run.seed', '9')])
        assert app.seed == app.config['run.seed'] == 9

    def test_bad_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV, 'x')
        with pytest.raises(ConfigError):
            make_app(tmp_path)

    @pytest.mark.parametrize('threads', [0, -2])
    def test_threads_must_be_positive(self, tmp_path, threads):
        with pytest.raises(ConfigError):
            App(overrides=SMALL, out_dir=tmp_path / 'run', threads=threads)


class TestCommands:

    def test_generate_and_verify(self, tmp_path):
        app = make_app(tmp_path)
        manifest = app.generate('rnnbc-test', 3, verify=True)
        assert manifest.count == 3
        assert app.state == STATUS_READY
        assert json.loads((app.out_dir / CONFIG_FILE).read_text())['ofdm.n_symbols'] == 64
        assert (app.out_dir / MANIFEST_FILE).is_file()

    def test_generate_unknown_split(self, tmp_path):
        with pytest.raises(ConfigError):
            make_app(tmp_path).generate('val')

    def test_train_without_epochs(self, tmp_path, archives):
        ckpt, history = make_app(tmp_path).train('lwnn', archives / 'lwnn-test', epochs=0)
        assert ckpt.is_file()
        assert history.empty

    def test_train_sequence_model(self, tmp_path, archives):
        ckpt, history = make_app(tmp_path).train('rnnbc', archives / 'rnnbc-train', epochs=1)
        assert ckpt.name == 'rnnbc.ckpt'
        assert len(pd.read_csv(tmp_path / 'run' / 'history.csv')) == len(history) == 1

    def test_train_sequence_model_on_one_capture(self, tmp_path):
        generate_dataset(DatasetConfig(ofdm=OfdmConfig(n_symbols=64)), 2, 3, 'rnnbc-train', tmp_path / 'pair', jobs=1)
        _, history = make_app(tmp_path).train('rnnbc', tmp_path / 'pair', epochs=1)
        assert len(history) == 1

    def test_train_sequence_length_follows_config(self, tmp_path, archives):
        app = make_app(tmp_path, overrides=SMALL + [('ofdm.n_subcarriers', '32')])
        with pytest.raises(ShapeError):
            app.train('rnnbc', archives / 'rnnbc-train', epochs=0)

    def test_train_cnn_on_sequence_split(self, tmp_path, archives):
        with pytest.raises(ConfigError):
            make_app(tmp_path).train('lwnn', archives / 'rnnbc-train', epochs=0)

    def test_train_missing_archive(self, tmp_path):
        with pytest.raises(DatasetError):
            make_app(tmp_path).train('lwnn', tmp_path / 'nowhere')

    def test_evaluate_cnn_only(self, tmp_path, archives, checkpoints):
        app = make_app(tmp_path)
        summary = app.evaluate(archives / 'lwnn-test', checkpoints / 'lwnn.ckpt')
        assert summary['metric'].tolist() == ['captures', 'pcc_lwnn']
        for name in ('predictions.csv', 'summary.csv', 'pcc_by_snr.csv', 'confusion.csv'):
            assert (app.out_dir / name).is_file()
        assert len(pd.read_csv(app.out_dir / 'predictions.csv')) == 4 * 64

    def test_evaluate_combined(self, tmp_path, archives, checkpoints):
        summary = make_app(tmp_path).evaluate(archives / 'lwnn-test', checkpoints / 'lwnn.ckpt',
                                              checkpoints / 'rnnbc.ckpt', MODE_COMBINED)
        values = summary.set_index('metric')['value']
        assert values['lwnn_calls_per_capture'] == 32
        assert 0 <= values['pcc_combined'] <= 1

    def test_evaluate_length_mismatch(self, tmp_path, archives, checkpoints):
        save_model(build_lwnn(128), tmp_path / 'long.ckpt')
        with pytest.raises(ConfigError):
            make_app(tmp_path).evaluate(archives / 'lwnn-test', tmp_path / 'long.ckpt')

    def test_combined_needs_checkpoint(self, tmp_path, archives, checkpoints):
        with pytest.raises(ConfigError):
            make_app(tmp_path).evaluate(archives / 'lwnn-test', checkpoints / 'lwnn.ckpt', mode=MODE_COMBINED)

    def test_flops(self, tmp_path):
        app = make_app(tmp_path, overrides=[])
        reports = app.flops(table=True)
        assert set(reports) == {'lwnn', 'rnnbc', 'complexity', 'reduction'}
        reduction = pd.read_csv(app.out_dir / 'flops_reduction.csv', index_col='source')
        assert reduction.loc['published', 'alone'] == 64 * 48_900_000
        assert reduction.loc['counted', 'ratio'] <= 0.51
        assert (app.out_dir / 'flops_lwnn.csv').is_file()
        assert (app.out_dir / 'complexity.csv').is_file()

    def test_flops_single_model(self, tmp_path):
        reports = make_app(tmp_path).flops('rnnbc')
        assert list(reports) == ['rnnbc']
        with pytest.raises(ConfigError):
            make_app(tmp_path).flops('svm')


class TestReproducibility:

    def test_cnn_only_ignores_sequence_checkpoint(self, tmp_path, archives, checkpoints):
        summary = make_app(tmp_path).evaluate(archives / 'lwnn-test', checkpoints / 'lwnn.ckpt',
                                              tmp_path / 'missing.ckpt')
        assert len(summary) == 2

    def test_generate_train_evaluate_twice(self, tmp_path):
        outputs = []
        for attempt in ('a', 'b'):
            root = tmp_path / attempt
            data = App(overrides=SMALL, seed=11, out_dir=root / 'data', threads=1)
            data.generate('lwnn-test', 3)
            trained = App(overrides=SMALL, seed=11, out_dir=root / 'train', threads=1)
            ckpt, _ = trained.train('lwnn', root / 'data', epochs=2)
            App(overrides=SMALL, seed=11, out_dir=root / 'eval', threads=1).evaluate(root / 'data', ckpt)
            outputs.append([(root / sub / name).read_bytes() for sub, name in (
                ('data', 'records.bin'), ('train', 'lwnn.ckpt'), ('train', 'history.csv'),
                ('eval', 'predictions.csv'), ('eval', 'summary.csv'), ('eval', 'confusion.csv'))])
        assert outputs[0] == outputs[1]
