import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quphot import PhotonStream, Spectrum
from quphot import io as qio
from quphot._validation import MAX_TIMESTAMP_PS
from quphot.correlator import cross_correlate, normalize


def _stream(times, channel=0, duration=None):
    times = np.asarray(times, dtype=np.uint64)
    return PhotonStream(channel, times, duration or (int(times[-1]) + 10 if times.size else 10))


def test_stream_rejects_unsorted_with_index():
    with pytest.raises(ValueError, match="index 2"):
        _stream([1, 5, 4, 9])


def test_stream_rejects_duplicates_and_negative():
    with pytest.raises(ValueError):
        _stream([1, 1, 2])
    with pytest.raises(ValueError):
        PhotonStream(0, np.array([-1, 3]), 10)


def test_stream_rejects_late_event_and_huge_values():
    with pytest.raises(ValueError, match="duration"):
        PhotonStream(0, np.array([1, 10], dtype=np.uint64), 10)
    with pytest.raises(ValueError):
        _stream([1, MAX_TIMESTAMP_PS + 1])


def test_stream_is_read_only():
    s = _stream([1, 2, 3])
    with pytest.raises(ValueError):
        s.timestamps[0] = 7
    assert s.rate_per_s == pytest.approx(3 / 13e-12)


@given(st.lists(st.integers(0, 2**40), min_size=0, max_size=200, unique=True),
       st.integers(0, 2**16 - 1))
def test_binary_roundtrip(tmp_path_factory, values, channel):
    path = tmp_path_factory.mktemp("bin") / "s.phst"
    s = _stream(sorted(values), channel)
    qio.write_stream_binary(path, s)
    back = qio.read_stream_binary(path, s.duration_ps)
    assert back == s


def test_binary_default_duration(tmp_path):
    path = tmp_path / "s.phst"
    qio.write_stream_binary(path, _stream([3, 8], duration=100))
    assert qio.read_stream_binary(path).duration_ps == 9


@pytest.mark.parametrize("damage, match", [
    (lambda raw: b"XXXX" + raw[4:], "magic"),
    (lambda raw: raw[:4] + b"\x09\x00" + raw[6:], "version"),
    (lambda raw: raw[:-5], "truncated"),
    (lambda raw: raw[:10], "truncated header"),
    (lambda raw: raw + b"\x00", "trailing"),
])
def test_binary_corruption_names_offset(tmp_path, damage, match):
    path = tmp_path / "s.phst"
    qio.write_stream_binary(path, _stream([1, 2, 3]))
    path.write_bytes(damage(path.read_bytes()))
    with pytest.raises(qio.CorruptFileError, match=match) as err:
        qio.read_stream_binary(path)
    assert "offset" in str(err.value)


def test_csv_roundtrip_multiple_channels(tmp_path):
    a = PhotonStream(0, np.array([1, 7, 9], dtype=np.uint64), 50)
    b = PhotonStream(3, np.array([2, 40], dtype=np.uint64), 50)
    path = tmp_path / "s.csv"
    qio.write_stream_csv(path, a, b)
    back = qio.read_streams(path)
    assert back[0] == a and back[3] == b
    bins = qio.csv_to_binary(path, str(tmp_path / "conv"))
    assert [qio.read_streams(p, 50) for p in bins] == [{0: a}, {3: b}]


def test_csv_bad_header(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("time,channel\n1,0\n")
    with pytest.raises(qio.CorruptFileError):
        qio.read_stream_csv(path)


def test_histogram_and_curve_roundtrip(tmp_path, rng):
    t = np.unique(rng.integers(0, 10**10, 20_000))
    u = np.unique(rng.integers(0, 10**10, 20_000))
    hist = cross_correlate(t, u, 1280, 1280 * 50)
    qio.write_histogram_csv(tmp_path / "h.csv", hist)
    back = qio.read_histogram_csv(tmp_path / "h.csv")
    np.testing.assert_array_equal(back.counts, hist.counts)
    np.testing.assert_allclose(back.edges_ps, hist.edges_ps)
    curve = normalize(hist, 1280 * 30, 1280 * 20)
    qio.write_curve_csv(tmp_path / "c.csv", curve)
    c2 = qio.read_curve_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(c2.g2, curve.g2)
    assert c2.normalization == curve.normalization


def test_spectrum_roundtrip(tmp_path):
    s = Spectrum(np.linspace(600, 800, 11), np.arange(11.0))
    qio.write_spectrum_csv(tmp_path / "s.csv", s)
    back = qio.read_spectrum_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.intensity, s.intensity)


def test_kv_format(tmp_path):
    qio.write_kv(tmp_path / "r.txt", {"x": 0.25, "n": 3, "tiny": 1e-7})
    assert qio.read_kv(tmp_path / "r.txt") == {"x": "0.250000", "n": "3", "tiny": "1e-07"}
