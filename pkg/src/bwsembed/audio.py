"""WAV reading, STFT magnitudes and log-mel spectrograms.

Analysis defaults: FFT 2048, hop 200, window 800, 80 mel bands spanning
0 Hz to Nyquist on the HTK mel scale, natural log with a 1e-10 floor.  The
window is a Kaiser taper (beta = 3) zero-padded to the FFT size; frames are
not centred, so a signal of ``L`` samples yields ``1 + (L - window) // hop``
frames.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

FFT_SIZE = 2048
HOP = 200
WINDOW = 800
N_MELS = 80
LOG_FLOOR = 1e-10
WINDOW_TYPE = ("kaiser", 3.0)


class AudioError(ValueError):
    pass


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono float samples in [-1, 1] and the sample rate.

    Accepts 16-bit PCM and 32-bit float, one or two channels; stereo is
    averaged.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            sr, data = wavfile.read(path)
    except (ValueError, EOFError, wavfile.WavFileWarning) as exc:
        raise AudioError(f"{path}: unreadable WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    if samples.ndim == 2:
        if samples.shape[1] > 2:
            raise AudioError(f"{path}: {samples.shape[1]} channels, expected 1 or 2")
        samples = samples.mean(axis=1)
    return samples, int(sr)


def frame_count(n_samples: int, window: int = WINDOW, hop: int = HOP) -> int:
    return 1 + (n_samples - window) // hop


def analysis_window(window: int = WINDOW, kind=WINDOW_TYPE) -> np.ndarray:
    return get_window(kind, window, fftbins=True)


def stft_magnitude(
    samples, fft_size: int = FFT_SIZE, hop: int = HOP, window: int = WINDOW, window_type=WINDOW_TYPE
) -> np.ndarray:
    """(frames, fft_size // 2 + 1) magnitude of the one-sided spectrum."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise AudioError("expected a mono 1-D signal")
    if window > fft_size:
        raise AudioError("window longer than the FFT size")
    if len(x) < window:
        raise AudioError(f"signal of {len(x)} samples is shorter than the {window}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
    return np.abs(np.fft.rfft(frames * analysis_window(window, window_type), n=fft_size, axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: float, fft_size: int = FFT_SIZE, n_mels: int = N_MELS) -> np.ndarray:
    """(n_mels, fft_size // 2 + 1) triangular filters with unit peak."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (frames, n_mels)
    sample_rate: int
    hop: int = HOP
    fft_size: int = FFT_SIZE
    window: int = WINDOW
    n_mels: int = N_MELS
    window_type: str = "kaiser(3.0)"

    def metadata(self) -> dict:
        return {
            "sr": self.sample_rate,
            "hop": self.hop,
            "fft": self.fft_size,
            "window": self.window,
            "window_type": self.window_type,
            "n_mels": self.n_mels,
            "log_floor": LOG_FLOOR,
        }


def log_mel(samples, sample_rate: int) -> MelSpectrogram:
    if sample_rate <= 0:
        raise AudioError("sample_rate must be positive")
    power = stft_magnitude(samples) ** 2
    energies = power @ mel_filterbank(sample_rate).T
    return MelSpectrogram(np.log(np.maximum(energies, LOG_FLOOR)), int(sample_rate))
