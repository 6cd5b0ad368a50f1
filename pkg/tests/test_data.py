import warnings

import numpy as np
import pytest

from braggedge.data import (DroppedRowsWarning, IngestError, PixelStack, ingest_spectrum,
                            load_pixel_stack, macro_pixel_average, save_pixel_stack)
from braggedge.errors import InvalidArgumentError
from braggedge.noise import NoiseModel


def _write(tmp_path, text, name="s.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_csv_tr_three_rows(tmp_path):
    s = ingest_spectrum(_write(tmp_path, "4.0,0.5\n4.1,0.6\n4.2,0.7\n"))
    assert len(s) == 3 and s.noise_std is None
    np.testing.assert_allclose(s.values, [0.5, 0.6, 0.7])


def test_csv_tr_header_comments_and_std(tmp_path):
    text = "lambda,transmission,noise_std\n# comment\n4.0,0.5,0.01\n\n4.1,0.6,0.01\n4.2,0.7,0.02\n"
    s = ingest_spectrum(_write(tmp_path, text))
    np.testing.assert_allclose(s.noise_std, [0.01, 0.01, 0.02])


def test_csv_tr_missing_std_column_means_no_std(tmp_path):
    s = ingest_spectrum(_write(tmp_path, "4.0,0.5,\n4.1,0.6,\n4.2,0.7,\n"))
    assert s.noise_std is None


def test_counts_identity(tmp_path):
    s = ingest_spectrum(_write(tmp_path, "4.0,100,100\n4.1,50,50\n4.2,7,7\n"), "csv_counts")
    np.testing.assert_array_equal(s.values, 1.0)


def test_counts_drop_zero_open_beam(tmp_path):
    text = "4.0,100,200\n4.05,3,0\n4.1,50,100\n4.2,7,14\n"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = ingest_spectrum(_write(tmp_path, text), "csv_counts")
    dropped = [w.message for w in caught if isinstance(w.message, DroppedRowsWarning)]
    assert len(dropped) == 1 and dropped[0].count == 1
    assert len(s) == 3


def test_counts_noise_model(tmp_path):
    s = ingest_spectrum(_write(tmp_path, "4.0,50,100\n4.1,50,100\n4.2,50,100\n"), "csv_counts",
                        noise_model=NoiseModel(0.0, 1e-4))
    np.testing.assert_allclose(s.noise_std, np.sqrt(0.5e-4))


@pytest.mark.parametrize("text, line", [("4.0,0.5\n4.1,abc\n4.2,0.7\n", 2),
                                        ("4.0,0.5\n4.1,0.6,0.1,9\n4.2,0.7\n", 2),
                                        ("4.0,0.5\n4.2,0.6\n4.1,0.7\n", 3),
                                        ("4.0,0.5\n4.1,0.6\n4.1,0.7\n", 3)])
def test_parse_errors_carry_line_numbers(tmp_path, text, line):
    with pytest.raises(IngestError) as info:
        ingest_spectrum(_write(tmp_path, text))
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_empty_file_and_bad_format(tmp_path):
    with pytest.raises(IngestError):
        ingest_spectrum(_write(tmp_path, "# nothing\n"))
    with pytest.raises(InvalidArgumentError):
        ingest_spectrum(_write(tmp_path, "4.0,1\n"), "fits")


def _stack(h, w, n=5, seed=0):
    rng = np.random.default_rng(seed)
    return PixelStack(np.linspace(4.0, 4.1, n), rng.normal(size=(h, w, n)))


def test_macro_identity_and_constant():
    st = _stack(3, 4)
    np.testing.assert_array_equal(macro_pixel_average(st, 1).spectra, st.spectra)
    const = PixelStack(np.linspace(4, 4.1, 5), np.broadcast_to(np.arange(5.0), (2, 2, 5)))
    out = macro_pixel_average(const, 2)
    assert (out.height, out.width) == (1, 1)
    np.testing.assert_allclose(out.spectra[0, 0], np.arange(5.0))


def test_macro_partial_blocks():
    st = _stack(5, 7)
    out = macro_pixel_average(st, 3)
    assert (out.height, out.width) == (2, 3)
    np.testing.assert_allclose(out.spectra[1, 2], st.spectra[3:5, 6:7].mean(axis=(0, 1)))
    one = macro_pixel_average(st, 50)
    assert (one.height, one.width) == (1, 1)
    np.testing.assert_allclose(one.spectra[0, 0], st.spectra.mean(axis=(0, 1)))


def test_macro_grand_mean_preserved():
    st = _stack(6, 8)
    out = macro_pixel_average(st, 2)
    np.testing.assert_allclose(out.spectra.mean(axis=(0, 1)), st.spectra.mean(axis=(0, 1)),
                               atol=1e-14)


def test_macro_noise_reduction():
    # 24 x 24 averaging of i.i.d. noise cuts the std by 24
    rng = np.random.default_rng(1)
    st = PixelStack(np.linspace(4, 4.1, 100), rng.normal(0, 1.0, (240, 240, 100)))
    out = macro_pixel_average(st, 24)
    assert out.spectra.size == 10000
    assert out.spectra.std() == pytest.approx(1 / 24, rel=0.1)


def test_macro_validation_and_io(tmp_path):
    with pytest.raises(InvalidArgumentError):
        macro_pixel_average(_stack(2, 2), 0)
    with pytest.raises(InvalidArgumentError):
        PixelStack(np.linspace(4, 4.1, 5), np.zeros((2, 2, 4)))
    st = _stack(2, 3)
    save_pixel_stack(tmp_path / "s.npz", st)
    back = load_pixel_stack(tmp_path / "s.npz")
    np.testing.assert_array_equal(back.spectra, st.spectra)
    assert back.spectrum(1, 2).values.tolist() == st.spectra[1, 2].tolist()
