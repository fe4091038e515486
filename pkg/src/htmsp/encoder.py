"""Frame encoder: area-average downscale, then Gaussian adaptive threshold.

Frames are read from binary PGM (P5) files; a video is a directory of
``frame_NNNN.pgm`` files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from htmsp.errors import ConfigError, InputError


@dataclass(frozen=True)
class GrayFrame:
    width: int
    height: int
    pixels: np.ndarray = field(compare=False)  # (height, width) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.size != self.width * self.height:
            raise InputError(
                f"pixel count {px.size} does not match {self.width}x{self.height}")
        object.__setattr__(self, "pixels", px.reshape(self.height, self.width))

    @classmethod
    def from_array(cls, arr) -> "GrayFrame":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise InputError(f"expected a 2-D image, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)


def default_sigma(block_size: int) -> float:
    return 0.3 * ((block_size - 1) * 0.5 - 1) + 0.8


@dataclass(frozen=True)
class EncoderConfig:
    target_width: int = 240
    target_height: int = 134
    block_size: int = 11
    bias_c: float = 2.0
    gaussian_sigma: float | None = None

    def __post_init__(self):
        for name in ("target_width", "target_height"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not isinstance(self.block_size, int) or self.block_size < 3 or self.block_size % 2 == 0:
            raise ConfigError(f"block_size must be an odd integer >= 3, got {self.block_size!r}")
        if self.gaussian_sigma is None:
            object.__setattr__(self, "gaussian_sigma", default_sigma(self.block_size))
        elif not self.gaussian_sigma > 0:
            raise ConfigError(f"gaussian_sigma must be positive, got {self.gaussian_sigma!r}")

    @property
    def output_size(self) -> int:
        return self.target_width * self.target_height


def gaussian_kernel(block_size: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian window of odd length ``block_size``."""
    x = np.arange(block_size) - (block_size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix averaging the source interval each target pixel covers."""
    scale = src / dst
    edges = np.arange(dst + 1) * scale
    lo, hi = edges[:-1, None], edges[1:, None]
    left = np.arange(src)[None, :]
    cover = np.clip(np.minimum(hi, left + 1) - np.maximum(lo, left), 0.0, None)
    return cover / scale


def downscale(frame: GrayFrame, config: EncoderConfig) -> GrayFrame:
    tw, th = config.target_width, config.target_height
    if tw > frame.width or th > frame.height:
        raise InputError(
            f"cannot upscale {frame.width}x{frame.height} to {tw}x{th}")
    if (tw, th) == (frame.width, frame.height):
        return GrayFrame(tw, th, frame.pixels.copy())
    rows = _area_weights(frame.height, th)
    cols = _area_weights(frame.width, tw)
    out = rows @ frame.pixels.astype(np.float64) @ cols.T
    return GrayFrame(tw, th, np.clip(np.rint(out), 0, 255).astype(np.uint8))


def threshold_map(frame: GrayFrame, config: EncoderConfig) -> np.ndarray:
    """Gaussian-weighted local mean minus ``bias_c``, borders edge-replicated."""
    k = gaussian_kernel(config.block_size, config.gaussian_sigma)
    img = frame.pixels.astype(np.float64)
    mean = correlate1d(correlate1d(img, k, axis=0, mode="nearest"), k, axis=1, mode="nearest")
    return mean - config.bias_c


def adaptive_threshold(frame: GrayFrame, config: EncoderConfig) -> np.ndarray:
    """Row-major bit vector: pixel strictly above its local threshold."""
    if (frame.width, frame.height) != (config.target_width, config.target_height):
        raise InputError(
            f"frame is {frame.width}x{frame.height}, encoder expects "
            f"{config.target_width}x{config.target_height}")
    return (frame.pixels > threshold_map(frame, config)).ravel()


def encode(frame: GrayFrame, config: EncoderConfig) -> np.ndarray:
    return adaptive_threshold(downscale(frame, config), config)


# -- PGM I/O -----------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path) -> GrayFrame:
    path = Path(path)
    data = path.read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise InputError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise InputError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise InputError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit PGM (maxval 255) is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = data[pos:pos + width * height]
    if len(body) != width * height:
        raise InputError(f"{path}: expected {width * height} pixel bytes, found {len(body)}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()
    return GrayFrame(width, height, pixels)


def write_pgm(path, frame: GrayFrame) -> None:
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(frame.pixels, dtype=np.uint8).tobytes())


def frame_name(index: int) -> str:
    return f"frame_{index:04d}.pgm"


def list_frames(video_dir) -> list[Path]:
    video_dir = Path(video_dir)
    if not video_dir.is_dir():
        raise InputError(f"video directory {video_dir} does not exist")
    frames = sorted(video_dir.glob("frame_*.pgm"))
    if not frames:
        raise InputError(f"video directory {video_dir} contains no frames")
    return frames


def encode_video(video_dir, config: EncoderConfig) -> np.ndarray:
    """Encode every frame of a video; returns a (frames, bits) bool array."""
    return np.stack([encode(read_pgm(p), config) for p in list_frames(video_dir)])
