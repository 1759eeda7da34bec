import numpy as np
import pytest

from src.common import MODE_COMBINED, MODE_LWNN_ONLY, PUBLISHED_LWNN_FLOPS, PUBLISHED_RNNBC_FLOPS
from src.data import Capture
from src.errors import ConfigError, ShapeError
from src.metrics import (ALL_SCHEMES, NO_PREDICTION, OVERFLOW_BIN, PREDICTION_COLUMNS, combined_classify,
                         complexity_table, confusion_by_snr, confusion_table, flops_reduction_report, pcc, pcc_by_snr,
                         predict_store, reduction_from_costs, snr_bins)
from src.models import build_lwnn, build_rnnbc


class OracleCnn:
    """Reads the class off the real part of the first symbol."""

    def classify_many(self, iq):
        iq = np.asarray(iq)
        return np.rint(iq[:, 0].real).astype(np.int64), None


class ShiftRnn:

    def predict_many(self, even):
        return (np.asarray(even) + 1) % 5, None


def make_capture(index, n=8, snr=10.0):
    labels = np.arange(n) % 5
    iq = np.tile(labels[:, None].astype(complex), (1, 4))
    return Capture(index, iq, labels.astype(np.uint8), np.full(n, snr, dtype=np.float32))


class FakeStore:

    def __init__(self, captures):
        self.captures = captures
        self.n_subcarriers = captures[0].n_subcarriers

    def __len__(self):
        return len(self.captures)

    def capture(self, index):
        return self.captures[index]


class TestPcc:

    def test_examples(self):
        assert pcc([0, 1, 2], [0, 1, 1]) == pytest.approx(2 / 3)
        assert pcc(np.eye(3), np.eye(3)) == 1.0
        assert pcc([0, 1], [2, 3]) == 0.0
        assert pcc([0, 1, 2, 3], [0, 4, 2, 4]) == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            pcc([0, 1], [0])

    def test_empty(self):
        with pytest.raises(ShapeError):
            pcc([], [])


class TestSnrBins:

    def test_half_open_bins(self):
        names = snr_bins([5, 7.99, 8, 19.9, 20, 4]).tolist()
        assert names == ['5-8 dB', '5-8 dB', '8-12 dB', '16-20 dB', OVERFLOW_BIN, OVERFLOW_BIN]

    def test_confusion_per_bin(self, rng):
        truth = rng.integers(0, 5, 400)
        snrs = rng.uniform(5, 24, 400)
        matrices = confusion_by_snr(truth, truth, snrs)
        assert list(matrices) == ['5-8 dB', '8-12 dB', '12-16 dB', '16-20 dB', OVERFLOW_BIN]
        names = snr_bins(snrs)
        for name, conf in matrices.items():
            counts = conf.counts.to_numpy()
            assert counts.sum() == np.sum(names == name)
            assert np.array_equal(counts, np.diag(np.diag(counts)))
            rows = conf.rates.to_numpy().sum(axis=1)
            np.testing.assert_allclose(rows[counts.sum(axis=1) > 0], 1)

    def test_confusion_rows_are_truth(self):
        conf = confusion_by_snr([1, 1, 2], [0, 0, 2], [6, 6, 6])['5-8 dB']
        assert conf.counts.loc['QAM4', 'QAM8'] == 2
        assert conf.counts.loc['QAM16', 'QAM16'] == 1
        assert conf.rates.loc['QAM4', 'QAM8'] == 1.0
        assert not confusion_by_snr([1], [0], [30])['5-8 dB'].counts.to_numpy().any()

    def test_confusion_table(self):
        table = confusion_table(confusion_by_snr([1, 1, 2], [0, 0, 2], [6, 6, 6]))
        assert len(table) == 5 * 2 * 5
        assert set(table['value']) == {'count', 'rate'}

    def test_pcc_by_snr(self):
        df = pcc_by_snr([0, 1, 2, 2], [0, 1, 1, 2], [5.2, 5.7, 6.1, 6.9])
        overall = df[df['scheme'] == ALL_SCHEMES].set_index('snr_db')
        assert overall.loc[5.0, 'pcc'] == 1.0
        assert overall.loc[6.0, 'pcc'] == 0.5
        assert overall['n'].sum() == 4
        qam8 = df[(df['scheme'] == 'QAM8')].set_index('snr_db')
        assert qam8.loc[6.0, 'pcc'] == 0.0


class TestComplexity:

    @pytest.mark.parametrize('model, alone, combined', [
        ('VGG', 16.45e6, 8.31e6),
        ('ResNet', 15.1e6, 7.63e6),
        ('CNN-AMC', 36.8e6, 18.48e6),
    ])
    def test_literature_table(self, model, alone, combined):
        row = complexity_table().set_index('model').loc[model]
        assert row['alone'] == pytest.approx(alone, rel=5e-3)
        assert row['combined'] == pytest.approx(combined, rel=5e-3)
        assert row['ratio'] < 0.51

    def test_published_reduction(self):
        r = reduction_from_costs(PUBLISHED_LWNN_FLOPS, PUBLISHED_RNNBC_FLOPS)
        assert r.alone == pytest.approx(3.1296e9)
        assert r.combined == pytest.approx(1.5649e9, rel=1e-4)

    def test_reduction_identity(self):
        r = reduction_from_costs(1000, 10, 64)
        assert r.combined == 32 * 1000 + 10
        assert r.ratio == pytest.approx(r.combined / r.alone)

    def test_invalid_costs(self):
        with pytest.raises(ConfigError):
            reduction_from_costs(1000, 10, 63)
        with pytest.raises(ConfigError):
            complexity_table(rnnbc_cost=0)

    def test_counted_reduction(self):
        r = flops_reduction_report(build_lwnn(1024), build_rnnbc(32))
        assert 1e7 < r.lwnn_flops < 1e8
        assert 0 < r.rnnbc_flops < r.lwnn_flops
        assert 0.5 < r.ratio <= 0.51


class TestCombinedClassify:

    def test_interleaves_stages(self):
        calls = []
        cnn = OracleCnn()
        out = combined_classify(cnn, ShiftRnn(), make_capture(0), hook=lambda *a: calls.append(a))
        assert out.tolist() == [0, 1, 2, 3, 4, 0, 1, 2]
        assert calls == [('lwnn', 4), ('rnnbc', 1)]

    def test_odd_subcarrier_count(self):
        with pytest.raises(ShapeError):
            combined_classify(OracleCnn(), ShiftRnn(), make_capture(0, n=7))


class TestPredictStore:

    def test_combined_mode(self):
        store = FakeStore([make_capture(0), make_capture(1, snr=14.0)])
        df = predict_store(store, OracleCnn(), ShiftRnn(), MODE_COMBINED)
        assert list(df.columns) == PREDICTION_COLUMNS
        assert len(df) == 16
        assert (df['lwnn_calls'] == 4).all()
        assert (df['pred_lwnn'] == df['truth']).all()
        odd = df[df['subcarrier'] % 2 == 1]
        assert (odd['pred_baseline'].to_numpy() == df[df['subcarrier'] % 2 == 0]['truth'].to_numpy()).all()
        assert (df[df['subcarrier'] % 2 == 0]['pred_rnnbc_oracle'] == NO_PREDICTION).all()
        assert df['pred_combined'].tolist()[:8] == [0, 1, 2, 3, 4, 0, 1, 2]

    def test_lwnn_only_mode(self):
        df = predict_store(FakeStore([make_capture(0)]), OracleCnn())
        assert (df['pred_lwnn'] == df['truth']).all()
        assert (df['pred_combined'] == NO_PREDICTION).all()

    def test_combined_needs_sequence_model(self):
        with pytest.raises(ConfigError):
            predict_store(FakeStore([make_capture(0)]), OracleCnn(), mode=MODE_COMBINED)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            predict_store(FakeStore([make_capture(0)]), OracleCnn(), mode='both')

    def test_mode_constants(self):
        assert MODE_LWNN_ONLY != MODE_COMBINED
