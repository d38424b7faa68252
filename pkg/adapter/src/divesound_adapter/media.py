"""Media handling: seeded video frame sampling and audio decoding.

Frame extraction draws k distinct frame indices uniformly from a seeded
generator, so the same (uri, k, seed) always yields the same frames; the
chosen indices travel with the result. Audio decoding targets PCM WAV and
returns float samples in [-1, 1] for downstream feature extraction.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np


class MediaError(RuntimeError):
    """Undecodable media or an unsatisfiable extraction request."""


@dataclass(frozen=True)
class FrameExtraction:
    uri: str
    seed: int
    indices: tuple[int, ...]
    frames: tuple[np.ndarray, ...]  # BGR uint8 arrays, decode order


def sample_frame_indices(frame_count: int, k: int, seed: int) -> tuple[int, ...]:
    """k distinct indices in [0, frame_count), uniform, seeded, ascending."""
    if k < 1:
        raise MediaError(f"k must be >= 1, got {k}")
    if k > frame_count:
        raise MediaError(f"requested {k} frames but the clip has {frame_count}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(frame_count, size=k, replace=False)
    return tuple(int(i) for i in np.sort(chosen))


def extract_frames(video_uri: str, k: int, seed: int) -> FrameExtraction:
    """Decode k seeded-random frames from a video file."""
    try:
        import cv2
    except ImportError as exc:  # pragma: no cover - environment-dependent
        raise MediaError("frame extraction needs opencv (install the 'media' extra)") from exc

    capture = cv2.VideoCapture(str(video_uri))
    if not capture.isOpened():
        raise MediaError(f"cannot open video {video_uri!r}")
    try:
        frame_count = int(capture.get(cv2.CAP_PROP_FRAME_COUNT))
        if frame_count < 1:
            raise MediaError(f"no decodable frames in {video_uri!r}")
        indices = sample_frame_indices(frame_count, k, seed)
        frames = []
        for index in indices:
            capture.set(cv2.CAP_PROP_POS_FRAMES, index)
            ok, frame = capture.read()
            if not ok:
                raise MediaError(f"failed to decode frame {index} of {video_uri!r}")
            frames.append(frame)
    finally:
        capture.release()
    return FrameExtraction(uri=str(video_uri), seed=seed, indices=indices, frames=tuple(frames))


def decode_audio(wav_uri: str) -> tuple[np.ndarray, int]:
    """Decode a PCM WAV file to (samples in [-1, 1], sample_rate).

    Multi-channel audio is averaged down to mono.
    """
    try:
        with wave.open(str(wav_uri), "rb") as wav:
            rate = wav.getframerate()
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            raw = wav.readframes(wav.getnframes())
    except (wave.Error, EOFError, OSError) as exc:
        raise MediaError(f"cannot decode audio {wav_uri!r}: {exc}") from exc
    if width == 2:
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    elif width == 1:
        samples = (np.frombuffer(raw, dtype=np.uint8).astype(np.float32) - 128.0) / 128.0
    elif width == 4:
        samples = np.frombuffer(raw, dtype="<i4").astype(np.float32) / 2147483648.0
    else:
        raise MediaError(f"unsupported sample width {width} in {wav_uri!r}")
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return samples, rate
