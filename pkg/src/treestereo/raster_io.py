"""Image and disparity-map I/O.

Images are 8-bit grayscale or RGB rasters.  The native on-disk formats are
binary PNM (P5 for grayscale, P6 for RGB); PNG is supported for reading when
Pillow is installed.  Ground-truth disparity maps follow the usual convention
for 8-bit encodings: stored byte = disparity * scale, and a stored 0 means
"no ground truth here" (invalid).  Because of that convention a valid
disparity of 0 cannot survive a save/load round trip; prediction maps, which
are dense, are therefore loaded with ``zero_invalid=False``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm", ".png")


@dataclass(frozen=True)
class RasterImage:
    """8-bit raster with shape (height, width, channels), channels in {1, 3}."""

    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 3 or self.data.shape[2] not in (1, 3):
            raise DataError(f"expected (H, W, 1|3) array, got shape {self.data.shape}")
        if self.data.dtype != np.uint8:
            raise DataError(f"expected uint8 samples, got {self.data.dtype}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class DisparityMap:
    """Integer disparity field with a per-pixel validity mask.

    ``scale`` records the multiplier used when the map is stored as an 8-bit
    image (stored byte = disparity * scale).
    """

    values: np.ndarray  # (H, W) int32
    valid: np.ndarray  # (H, W) bool
    scale: int = 1

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.int32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape or self.values.ndim != 2:
            raise DataError("disparity values and validity mask must share a 2-D shape")
        if self.scale < 1:
            raise ConfigError(f"disparity scale must be >= 1, got {self.scale}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class StereoPair:
    """A rectified pair: right-image content appears shifted left by the disparity."""

    left: RasterImage
    right: RasterImage
    d_max: int
    name: str = "pair"

    def __post_init__(self) -> None:
        if self.left.data.shape != self.right.data.shape:
            raise DataError(
                f"stereo views disagree in shape: {self.left.data.shape} "
                f"vs {self.right.data.shape}"
            )
        if self.d_max < 1:
            raise ConfigError(f"d_max must be >= 1, got {self.d_max}")


def _read_pnm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # Skip whitespace and '#' comments that run to end of line.
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise DataError("truncated PNM header")
    return buf[start:pos], pos


def read_pnm(path: str | Path) -> RasterImage:
    """Read a binary PGM (P5) or PPM (P6) file."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(buf) < 2 or buf[:1] != b"P":
        raise DataError(f"{path}: not a PNM file")
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: unsupported PNM magic {magic!r} (want P5 or P6)")
    channels = 1 if magic == b"P5" else 3
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_pnm_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise DataError(f"{path}: bad PNM header token {tok!r}") from exc
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DataError(f"{path}: bad dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise DataError(f"{path}: only 8-bit PNM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    count = width * height * channels
    raster = buf[pos : pos + count]
    if len(raster) != count:
        raise DataError(f"{path}: expected {count} raster bytes, got {len(raster)}")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return RasterImage(data.copy())


def write_pnm(path: str | Path, image: RasterImage) -> None:
    """Write a binary PGM/PPM file; the byte layout is deterministic."""
    magic = b"P5" if image.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, image.width, image.height)
    Path(path).write_bytes(header + image.data.tobytes())


def load_image(path: str | Path) -> RasterImage:
    """Load an image, dispatching on content: PNM natively, PNG via Pillow."""
    path = Path(path)
    try:
        head = path.open("rb").read(2)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if head in (b"P5", b"P6"):
        return read_pnm(path)
    try:
        from PIL import Image
    except ImportError as exc:
        raise DataError(
            f"{path}: not a binary PNM and Pillow is unavailable for other formats"
        ) from exc
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB" if img.mode not in ("1", "I;16", "I") else "L")
        arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return RasterImage(arr)


def load_stereo_pair(
    left_path: str | Path, right_path: str | Path, d_max: int, name: str | None = None
) -> StereoPair:
    left = load_image(left_path)
    right = load_image(right_path)
    if name is None:
        name = Path(left_path).parent.name or Path(left_path).stem
    return StereoPair(left=left, right=right, d_max=d_max, name=name)


def load_ground_truth(
    path: str | Path,
    scale: int,
    d_max: int | None = None,
    zero_invalid: bool = True,
) -> DisparityMap:
    """Decode an 8-bit disparity image: disparity = stored // scale.

    A stored value of 0 marks an invalid pixel when ``zero_invalid`` is set
    (the ground-truth convention).  When ``d_max`` is given, decoded values
    above it are demoted to invalid and counted in a warning rather than
    propagated.
    """
    if scale < 1:
        raise ConfigError(f"disparity scale must be >= 1, got {scale}")
    image = load_image(path)
    if image.channels != 1:
        raise DataError(f"{path}: disparity maps must be single-channel")
    stored = image.data[:, :, 0].astype(np.int32)
    values = stored // scale
    valid = np.ones_like(values, dtype=bool)
    if zero_invalid:
        valid &= stored != 0
    if d_max is not None:
        over = valid & (values > d_max)
        n_over = int(over.sum())
        if n_over:
            logger.warning(
                "%s: %d pixels decode above d_max=%d; marked invalid", path, n_over, d_max
            )
            valid &= ~over
    values[~valid] = 0
    return DisparityMap(values=values, valid=valid, scale=scale)


def save_disparity_pgm(path: str | Path, disparity: DisparityMap) -> None:
    """Store a disparity map as 8-bit PGM: byte = value * scale, invalid -> 0."""
    stored = disparity.values.astype(np.int64) * disparity.scale
    if stored.max(initial=0) > 255:
        raise DataError(
            f"disparity * scale exceeds 255 (max {stored.max()}); choose a smaller scale"
        )
    stored = np.where(disparity.valid, stored, 0).astype(np.uint8)
    write_pnm(path, RasterImage(stored[:, :, None]))


def save_error_overlay(
    path: str | Path,
    predicted: DisparityMap,
    ground_truth: DisparityMap,
    occlusion: np.ndarray | None = None,
    threshold: int = 1,
) -> None:
    """Write an RGB PPM flagging wrong pixels.

    Red = evaluated and |pred - gt| >= threshold, black = evaluated and
    correct, mid-gray = not evaluated (occluded or no ground truth).
    """
    if predicted.values.shape != ground_truth.values.shape:
        raise DataError("prediction and ground truth disagree in shape")
    evaluated = ground_truth.valid & predicted.valid
    if occlusion is not None:
        evaluated &= ~occlusion
    wrong = evaluated & (
        np.abs(predicted.values - ground_truth.values) >= threshold
    )
    out = np.full((*predicted.values.shape, 3), 128, dtype=np.uint8)
    out[evaluated] = 0
    out[wrong] = (220, 20, 20)
    write_pnm(path, RasterImage(out))


@dataclass(frozen=True)
class ScenePaths:
    """Resolved file locations for one dataset scene directory."""

    name: str
    view1: Path
    view5: Path
    disp1: Path | None = None
    disp5: Path | None = None


def _find_stem(directory: Path, stem: str) -> Path | None:
    for suffix in IMAGE_SUFFIXES:
        candidate = directory / (stem + suffix)
        if candidate.is_file():
            return candidate
    return None


def find_dataset_scenes(root: str | Path, require_gt: bool = False) -> list[ScenePaths]:
    """Discover ``<scene>/{view1,view5[,disp1,disp5]}`` under ``root``.

    view1 is the left eye and view5 the right; disp1/disp5 are the matching
    ground-truth maps.  Scenes are returned sorted by name.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    scenes = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        view1 = _find_stem(sub, "view1")
        view5 = _find_stem(sub, "view5")
        if view1 is None or view5 is None:
            continue
        disp1 = _find_stem(sub, "disp1")
        disp5 = _find_stem(sub, "disp5")
        if require_gt and (disp1 is None or disp5 is None):
            continue
        scenes.append(ScenePaths(sub.name, view1, view5, disp1, disp5))
    if not scenes:
        raise DataError(f"no scene directories with view1/view5 found under {root}")
    return scenes
