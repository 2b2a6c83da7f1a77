"""Audio frontend: PCM16 WAV input and normalized 80-dim log-mel features.

Defaults follow the conventional ASR recipe: 16 kHz input, 25 ms Hann
window, 10 ms hop, 512-point FFT, 80 triangular mel filters over 0-8000 Hz
with Slaney-style band spacing, natural log with a 1e-10 power floor, and
per-utterance per-coefficient mean/variance normalization.

Out-of-rate audio is rejected loudly: silent resampling corrupts
experiments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


class WavFormatError(ValueError):
    """Malformed RIFF/WAVE container; the message carries the byte offset."""


class UnsupportedWavError(WavFormatError):
    """Well-formed container, but an encoding this reader does not take."""


class SampleRateMismatchError(ValueError):
    pass


class FeatureCacheError(ValueError):
    pass


CACHE_MAGIC = b"MLFB"
CACHE_VERSION = 1


@dataclass
class Waveform:
    samples: np.ndarray  # float32 in [-1, 1]
    sample_rate: int


@dataclass
class FrontendConfig:
    sample_rate: int = 16000
    frame_length_s: float = 0.025
    frame_shift_s: float = 0.010
    n_fft: int = 512
    n_mels: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    power_floor: float = 1e-10

    @property
    def win(self):
        return int(round(self.frame_length_s * self.sample_rate))

    @property
    def hop(self):
        return int(round(self.frame_shift_s * self.sample_rate))


@dataclass
class LogMelSpectrogram:
    frames: np.ndarray  # [T, n_mels] float32
    n_mels: int
    frame_shift_s: float
    frame_length_s: float


# -- WAV I/O -----------------------------------------------------------------


def load_wav(path):
    """Read a RIFF/WAVE file holding 16-bit PCM, mono or stereo.

    Samples are scaled by 1/32768; stereo is averaged down to mono. Parse
    failures name the byte offset; unsupported encodings fail explicitly.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise WavFormatError(f"{path}: truncated header, only {len(raw)} bytes (offset 0)")
    if raw[0:4] != b"RIFF":
        raise WavFormatError(f"{path}: bad magic {raw[0:4]!r} at offset 0, expected b'RIFF'")
    if raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: bad form type {raw[8:12]!r} at offset 8, expected b'WAVE'")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body_start = pos + 8
        if body_start + chunk_size > len(raw):
            raise WavFormatError(
                f"{path}: chunk {chunk_id!r} at offset {pos} claims {chunk_size} bytes beyond end of file"
            )
        body = raw[body_start:body_start + chunk_size]
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise WavFormatError(f"{path}: fmt chunk at offset {pos} too short ({chunk_size} bytes)")
            audio_format, channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
            fmt = (audio_format, channels, sample_rate, bits, pos)
        elif chunk_id == b"data":
            data = (body, pos)
        pos = body_start + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None:
        raise WavFormatError(f"{path}: no fmt chunk found (offset {pos})")
    audio_format, channels, sample_rate, bits, fmt_pos = fmt
    if audio_format != 1:
        raise UnsupportedWavError(f"{path}: audio format {audio_format} at offset {fmt_pos}; only PCM (1) is supported")
    if bits != 16:
        raise UnsupportedWavError(f"{path}: {bits}-bit samples at offset {fmt_pos}; only 16-bit PCM is supported")
    if channels not in (1, 2):
        raise UnsupportedWavError(f"{path}: {channels} channels at offset {fmt_pos}; only mono/stereo are supported")
    if data is None:
        raise WavFormatError(f"{path}: no data chunk found (offset {pos})")

    body, data_pos = data
    if len(body) % (2 * channels) != 0:
        raise WavFormatError(f"{path}: data chunk at offset {data_pos} is not a whole number of frames")
    pcm = np.frombuffer(body, dtype="<i2").astype(np.float32) / 32768.0
    if channels == 2:
        pcm = pcm.reshape(-1, 2).mean(axis=1)
    return Waveform(samples=pcm, sample_rate=int(sample_rate))


def write_wav(path, samples, sample_rate):
    """Minimal mono PCM16 writer (tests, demos, synthetic corpora)."""
    pcm = np.clip(np.asarray(samples, dtype=np.float64) * 32768.0, -32768, 32767)
    pcm = pcm.astype("<i2").tobytes()
    with open(path, "wb") as f:
        f.write(b"RIFF")
        f.write(struct.pack("<I", 36 + len(pcm)))
        f.write(b"WAVE")
        f.write(b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16))
        f.write(b"data" + struct.pack("<I", len(pcm)))
        f.write(pcm)


# -- mel filterbank ------------------------------------------------------------


def hz_to_mel(hz):
    """Slaney mel scale: linear below 1 kHz, logarithmic above.

    mel(f) = f / (200/3)                        for f < 1000
           = 15 + 27 * ln(f / 1000) / ln(6.4)   otherwise
    """
    hz = np.asarray(hz, dtype=np.float64)
    linear = hz / (200.0 / 3.0)
    logstep = np.log(6.4) / 27.0
    with np.errstate(divide="ignore"):
        logpart = 15.0 + np.log(np.maximum(hz, 1e-12) / 1000.0) / logstep
    return np.where(hz < 1000.0, linear, logpart)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    linear = mel * (200.0 / 3.0)
    logstep = np.log(6.4) / 27.0
    logpart = 1000.0 * np.exp(logstep * (mel - 15.0))
    return np.where(mel < 15.0, linear, logpart)


def mel_band_edges(cfg):
    """n_mels + 2 band edges, equally spaced on the mel scale."""
    lo, hi = hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz)
    return mel_to_hz(np.linspace(lo, hi, cfg.n_mels + 2))


def mel_center_frequencies(cfg):
    """Center (peak) frequency of each triangular filter, in Hz."""
    return mel_band_edges(cfg)[1:-1]


def mel_filterbank(cfg):
    """[n_mels, n_fft//2 + 1] triangular weights with Slaney area
    normalization (each row scaled by 2 / bandwidth)."""
    edges = mel_band_edges(cfg)
    bins = np.arange(cfg.n_fft // 2 + 1) * (cfg.sample_rate / cfg.n_fft)
    fb = np.zeros((cfg.n_mels, bins.size))
    for m in range(cfg.n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        up = (bins - left) / max(center - left, 1e-12)
        down = (right - bins) / max(right - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down)) * (2.0 / (right - left))
    return fb


# -- feature extraction ---------------------------------------------------------


def frame_count(num_samples, win, hop):
    """Frames of a sliding window: 0 if the signal is shorter than one window,
    otherwise (num_samples - win) // hop + 1."""
    if num_samples < win:
        return 0
    return (num_samples - win) // hop + 1


def compute_logmel(waveform, cfg=None):
    """Power spectrum -> triangular mel filterbank -> natural log with floor."""
    cfg = cfg or FrontendConfig()
    if waveform.sample_rate != cfg.sample_rate:
        raise SampleRateMismatchError(
            f"waveform is {waveform.sample_rate} Hz but the frontend expects {cfg.sample_rate} Hz; "
            "resample offline, this pipeline will not do it silently"
        )
    win, hop = cfg.win, cfg.hop
    x = np.asarray(waveform.samples, dtype=np.float64)
    T = frame_count(x.size, win, hop)
    if T == 0:
        frames = np.zeros((0, cfg.n_mels), dtype=np.float32)
        return LogMelSpectrogram(frames, cfg.n_mels, cfg.frame_shift_s, cfg.frame_length_s)
    idx = np.arange(win)[None, :] + hop * np.arange(T)[:, None]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)  # periodic Hann
    spectrum = np.fft.rfft(x[idx] * window, n=cfg.n_fft, axis=1)
    power = np.abs(spectrum) ** 2
    mel = power @ mel_filterbank(cfg).T
    logmel = np.log(np.maximum(mel, cfg.power_floor))
    return LogMelSpectrogram(logmel.astype(np.float32), cfg.n_mels, cfg.frame_shift_s, cfg.frame_length_s)


def normalize(mel):
    """Per-utterance, per-coefficient zero mean / unit variance.

    The variance floor (1e-8) sends constant coefficients to exactly zero
    instead of amplifying rounding noise.
    """
    x = mel.frames.astype(np.float64)
    if x.shape[0] < 1:
        raise ValueError("normalize: need at least one frame")
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    scaled = (x - mu) / np.sqrt(np.maximum(var, 1e-8))
    return LogMelSpectrogram(scaled.astype(np.float32), mel.n_mels, mel.frame_shift_s, mel.frame_length_s)


def extract_features(path, cfg=None):
    """WAV file -> normalized log-mel frames (the training/eval input)."""
    return normalize(compute_logmel(load_wav(path), cfg)).frames


# -- feature cache ---------------------------------------------------------------


def write_feature_cache(path, frames):
    """Binary container: magic MLFB, version u32, T u32, n_mels u32, then
    float32 little-endian rows."""
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise FeatureCacheError(f"feature cache expects [T, n_mels], got shape {frames.shape}")
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<III", CACHE_VERSION, frames.shape[0], frames.shape[1]))
        f.write(frames.tobytes())


def read_feature_cache(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != CACHE_MAGIC:
        raise FeatureCacheError(f"{path}: not a feature cache (bad magic or truncated header)")
    version, T, n_mels = struct.unpack_from("<III", raw, 4)
    if version != CACHE_VERSION:
        raise FeatureCacheError(f"{path}: cache version {version}, expected {CACHE_VERSION}")
    expected = 16 + 4 * T * n_mels
    if len(raw) != expected:
        raise FeatureCacheError(f"{path}: payload is {len(raw) - 16} bytes, header promises {4 * T * n_mels}")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(T, n_mels).copy()
