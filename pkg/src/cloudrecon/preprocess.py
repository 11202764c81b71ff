"""Preprocessor stage: square crop, 512 px resize, background masks, thresholding.

Background segmentation here is analytic rather than learned: the border
median is taken as the background colour and alpha grows with the colour
distance from it. That is adequate for flat-background captures; a neural
segmenter can replace :func:`estimate_mask` without touching the stage.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .codec import DatasetArchive, PoseBoundsTable
from .errors import InvalidInputError, InvalidParameterError, LowConfidenceMaskWarning
from .posecore import POSE_ROW_INDEX, CameraIntrinsics

log = logging.getLogger(__name__)

TARGET_SIZE = 512
DEFAULT_THRESHOLD = 0.5
DEFAULT_CONTRAST = 48.0
DEFAULT_BORDER_STD = 8.0


def center_crop_square(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    return img[top:top + side, left:left + side].copy()


def resize_square(img: np.ndarray, size: int = TARGET_SIZE, nearest: bool = False) -> np.ndarray:
    h, w = img.shape[:2]
    if h != w:
        raise InvalidInputError(f"resize needs a square image, got {w}x{h}")
    if h == size:
        return img.copy()
    resample = Image.Resampling.NEAREST if nearest else Image.Resampling.BILINEAR
    return np.asarray(Image.fromarray(img).resize((size, size), resample)).copy()


def resize_to_512(img: np.ndarray, nearest: bool = False) -> np.ndarray:
    """Bilinear resize to 512x512; pass ``nearest=True`` for binary masks."""
    return resize_square(img, TARGET_SIZE, nearest)


def rescale_intrinsics(k: CameraIntrinsics, width: int, height: int, size: int = TARGET_SIZE) -> CameraIntrinsics:
    """Intrinsics after a centre square crop of a ``width x height`` image and resize to ``size``."""
    return CameraIntrinsics(size, size, k.f * size / min(width, height))


@dataclass(frozen=True, eq=False)
class MaskEstimate:
    alpha: np.ndarray
    background: np.ndarray
    border_std: float
    low_confidence: bool


def _border_pixels(img: np.ndarray) -> np.ndarray:
    pixels = img.reshape(img.shape[0], img.shape[1], -1).astype(np.float64)
    return np.concatenate([pixels[0], pixels[-1], pixels[1:-1, 0], pixels[1:-1, -1]])


def estimate_mask(
    img: np.ndarray,
    contrast: float = DEFAULT_CONTRAST,
    max_border_std: float = DEFAULT_BORDER_STD,
) -> MaskEstimate:
    """Soft alpha from the colour distance to the border-median background."""
    border = _border_pixels(img)
    background = np.median(border, axis=0)
    border_std = float(border.std(axis=0).max())
    low_confidence = border_std > max_border_std
    if low_confidence:
        warnings.warn(
            f"image border is not uniform (std {border_std:.1f} > {max_border_std}); mask may be unreliable",
            LowConfidenceMaskWarning,
            stacklevel=2,
        )
    pixels = img.reshape(img.shape[0], img.shape[1], -1).astype(np.float64)
    distance = np.linalg.norm(pixels - background, axis=-1)
    alpha = np.clip(np.rint(255.0 * distance / contrast), 0, 255).astype(np.uint8)
    return MaskEstimate(alpha, background, border_std, low_confidence)


def sharpen_mask(mask: np.ndarray, tau: float = DEFAULT_THRESHOLD) -> np.ndarray:
    if not 0.0 < tau < 1.0:
        raise InvalidParameterError(f"threshold must lie in (0, 1), got {tau}")
    return np.where(np.asarray(mask) >= tau * 255.0, 255, 0).astype(np.uint8)


@dataclass
class PreprocessConfig:
    tau: float = DEFAULT_THRESHOLD
    contrast: float = DEFAULT_CONTRAST
    max_border_std: float = DEFAULT_BORDER_STD


def _rescale_table(table: PoseBoundsTable, k: CameraIntrinsics) -> PoseBoundsTable:
    rows = table.rows.copy()
    rows[:, POSE_ROW_INDEX["h"]] = k.h
    rows[:, POSE_ROW_INDEX["w"]] = k.w
    rows[:, POSE_ROW_INDEX["f"]] = k.f
    return PoseBoundsTable(rows)


def preprocess_archive(archive: DatasetArchive, config: PreprocessConfig | None = None) -> DatasetArchive:
    """Crop, resize and mask every frame; intrinsics in both tables follow the resize."""
    config = config or PreprocessConfig()
    sharpen_mask(np.zeros(1), config.tau)  # validate tau before doing any work
    h, w = archive.images[0].shape[:2]
    if any(img.shape[:2] != (h, w) for img in archive.images):
        raise InvalidInputError("all frames must share one resolution")
    k = rescale_intrinsics(archive.intrinsics, w, h)
    images, masks, flagged = [], [], []
    for i, img in enumerate(archive.images):
        img = resize_to_512(center_crop_square(img))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LowConfidenceMaskWarning)
            estimate = estimate_mask(img, config.contrast, config.max_border_std)
        if estimate.low_confidence:
            flagged.append(i)
        images.append(img)
        masks.append(sharpen_mask(estimate.alpha, config.tau))
    if flagged:
        log.warning("low-confidence masks for frames %s", flagged)
    metadata = dict(archive.metadata)
    metadata["mask_threshold"] = repr(config.tau)
    if flagged:
        metadata["low_confidence_masks"] = ",".join(map(str, flagged))
    out = archive.with_updates(
        images=images,
        masks=masks,
        intrinsics=k,
        poses_bounds=_rescale_table(archive.poses_bounds, k),
        compensation=_rescale_table(archive.compensation, k),
        preprocessed=True,
        metadata=metadata,
    )
    out.validate()
    return out
