"""Readers and writers for streams, histograms, curves, spectra and reports.

Binary stream layout (all little endian)::

    offset 0   4 bytes  magic b"PHST"
    offset 4   u16      format version (1)
    offset 6   u16      channel
    offset 8   u64      event count
    offset 16  count x u64 picosecond timestamps
"""

from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

from .correlator import CorrelationCurve, CorrelationHistogram
from .spectra import Spectrum, TransmissionTrace
from .streams import PhotonStream

MAGIC = b"PHST"
VERSION = 1
_HEADER = struct.Struct("<4sHHQ")


class CorruptFileError(ValueError):
    """A file does not match its declared format."""


def _comments(path):
    meta = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            for item in line[1:].split(","):
                if "=" in item:
                    key, value = item.split("=", 1)
                    meta[key.strip()] = value.strip()
    return meta


def _table(path, columns):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:len(columns)]] != list(columns):
            raise CorruptFileError(f"{path}: expected header {','.join(columns)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CorruptFileError(f"{path}: row {lineno} has {len(row)} fields")
            rows.append(row)
    return header, rows


# -- streams ------------------------------------------------------------------

def write_stream_csv(path, *streams):
    """Write one or more streams as ``channel,timestamp_ps`` rows."""
    duration = max(s.duration_ps for s in streams)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# duration_ps={duration}\n")
        fh.write("channel,timestamp_ps\n")
        for s in streams:
            data = np.column_stack([np.full(len(s), s.channel, dtype=np.uint64), s.timestamps])
            np.savetxt(fh, data, fmt="%d", delimiter=",")


def read_stream_csv(path, duration_ps=None):
    """Read a ``channel,timestamp_ps`` file into ``{channel: PhotonStream}``."""
    meta = _comments(path)
    with open(path, encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        header = next(lines, "").strip()
        if header != "channel,timestamp_ps":
            raise CorruptFileError(f"{path}: expected header channel,timestamp_ps, got {header!r}")
        try:
            data = np.loadtxt(lines, delimiter=",", dtype=np.uint64, ndmin=2)
        except ValueError as exc:
            raise CorruptFileError(f"{path}: {exc}") from exc
    if duration_ps is None:
        duration_ps = int(meta.get("duration_ps", int(data[:, 1].max()) + 1 if data.size else 1))
    streams = {}
    channels = data[:, 0] if data.size else np.empty(0, dtype=np.uint64)
    for ch in dict.fromkeys(channels.tolist()):
        streams[int(ch)] = PhotonStream(int(ch), data[channels == ch, 1], duration_ps)
    return streams


def write_stream_binary(path, stream):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, stream.channel, len(stream)))
        fh.write(stream.timestamps.astype("<u8").tobytes())


def read_stream_binary(path, duration_ps=None):
    """Read a PHST file. Without `duration_ps` the stream ends 1 ps after its last event."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptFileError(f"{path}: truncated header, file ends at byte offset {len(raw)}")
    magic, version, channel, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version} at byte offset 4")
    expected = _HEADER.size + 8 * count
    if len(raw) < expected:
        whole = (len(raw) - _HEADER.size) // 8
        raise CorruptFileError(
            f"{path}: truncated after {whole} of {count} timestamps; "
            f"data ends at byte offset {len(raw)}, expected {expected}"
        )
    if len(raw) > expected:
        raise CorruptFileError(f"{path}: {len(raw) - expected} trailing bytes at byte offset {expected}")
    stamps = np.frombuffer(raw, dtype="<u8", count=count, offset=_HEADER.size).astype(np.uint64)
    if duration_ps is None:
        duration_ps = int(stamps[-1]) + 1 if count else 1
    return PhotonStream(channel, stamps, duration_ps)


def read_streams(path, duration_ps=None):
    """Read either format, keyed by channel."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == MAGIC:
        s = read_stream_binary(path, duration_ps)
        return {s.channel: s}
    return read_stream_csv(path, duration_ps)


def csv_to_binary(src, dst_prefix):
    """Split a stream CSV into one PHST file per channel; returns the paths."""
    paths = []
    for ch, stream in read_stream_csv(src).items():
        out = f"{dst_prefix}_ch{ch}.phst"
        write_stream_binary(out, stream)
        paths.append(out)
    return paths


# -- histograms and curves ---------------------------------------------------------

def write_histogram_csv(path, hist, normalization=None):
    header = {
        "bin_width_ps": f"{hist.bin_width_ps:g}",
        "window_ps": f"{hist.window_ps:g}",
        "mode": hist.pair_mode,
        "binning": hist.binning,
        "corrected": int(hist.corrected),
        "normalization": "none" if normalization is None else repr(float(normalization)),
    }
    fmt = "%.17g" if hist.counts.dtype.kind == "f" else "%d"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + ", ".join(f"{k}={v}" for k, v in header.items()) + "\n")
        fh.write("# " + ", ".join(f"{k}={v}" for k, v in hist.source.items()) + "\n")
        fh.write("lag_bin_center_ns,counts\n")
        for center, count in zip(hist.centers_ps / 1e3, hist.counts):
            fh.write(f"{float(center)!r},{fmt % count}\n")


def read_histogram_csv(path):
    meta = _comments(path)
    _, rows = _table(path, ("lag_bin_center_ns", "counts"))
    centers = np.array([float(r[0]) for r in rows]) * 1e3
    is_float = meta.get("corrected") == "1"
    counts = np.array([float(r[1]) if is_float else int(r[1]) for r in rows])
    width = float(meta["bin_width_ps"])
    edges = np.r_[centers - width / 2, centers[-1] + width / 2]
    edges = np.round(edges * 2) / 2
    source = {k: float(v) for k, v in meta.items()
              if k in ("events_a", "events_b", "duration_a_ps", "duration_b_ps", "period_ps")}
    return CorrelationHistogram(edges, counts, meta.get("mode", "all_pairs"),
                                meta.get("binning", "fine"), source, is_float)


def write_curve_csv(path, curve):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# bin_width_ps={curve.bin_width_ps:g}, binning={curve.binning}, "
                 f"normalization={curve.normalization!r}\n")
        fh.write("lag_bin_center_ns,g2,sigma\n")
        for row in zip(curve.lag_ps / 1e3, curve.g2, curve.sigma):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_curve_csv(path):
    meta = _comments(path)
    _, rows = _table(path, ("lag_bin_center_ns", "g2", "sigma"))
    arr = np.array(rows, dtype=np.float64)
    return CorrelationCurve(arr[:, 0] * 1e3, arr[:, 1], arr[:, 2],
                            float(meta.get("normalization", "nan")),
                            float(meta.get("bin_width_ps", "nan")), meta.get("binning", "fine"))


def write_correction_csv(path, result):
    cols = [result.lag_ps / 1e3, result.g2_ab, result.g2_b, result.g2_a, result.dg2_a]
    cols = [np.broadcast_to(np.asarray(c, dtype=np.float64), result.lag_ps.shape) for c in cols]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("lag_bin_center_ns,g2_ab,g2_b,g2_a,dg2_a\n")
        for row in zip(*cols):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# -- spectra -------------------------------------------------------------------------

def write_spectrum_csv(path, spectrum):
    values = spectrum.intensity if isinstance(spectrum, Spectrum) else spectrum.transmission
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("wavelength_nm,intensity\n")
        for x, y in zip(spectrum.wavelength_nm, values):
            fh.write(f"{float(x)!r},{float(y)!r}\n")


def read_spectrum_csv(path, kind=Spectrum):
    _, rows = _table(path, ("wavelength_nm", "intensity"))
    arr = np.array(rows, dtype=np.float64).reshape(-1, 2)
    return kind(arr[:, 0], arr[:, 1])


def read_trace_csv(path):
    return read_spectrum_csv(path, TransmissionTrace)


def write_mode_map_csv(path, mode_map):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frequency_inv_nm"] + [f"{c:.6g}" for c in mode_map.segment_centers_nm])
        for f, row in zip(mode_map.frequencies_inv_nm, mode_map.amplitude):
            writer.writerow([f"{f:.8g}"] + [f"{v:.8g}" for v in row])


def write_tracks_csv(path, mode_map):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("segment_center_nm,track_order,frequency_inv_nm\n")
        for track in mode_map.tracks:
            for c, f in zip(track.segment_centers_nm, track.frequencies_inv_nm):
                fh.write(f"{c:.6f},{track.order},{f:.8g}\n")


# -- key=value reports -------------------------------------------------------------

def format_value(value):
    if isinstance(value, float):
        return f"{value:.6f}" if abs(value) >= 1e-3 or value == 0 else f"{value:.6g}"
    return str(value)


def write_kv(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items.items():
            fh.write(f"{key}={format_value(value)}\n")


def read_kv(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                out[key] = value
    return out


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
