"""Dirt detectors: ``bytes -> fraction in [0, 1]``.

Any callable with that signature can be handed to the cleanliness policy.
The bundled stub counts pixels whose luminance sits far from the image's
median luminance.
"""

from __future__ import annotations

import io
from typing import Callable

import numpy as np
from PIL import Image, UnidentifiedImageError

from music.errors import DetectorError

Detector = Callable[[bytes], float]

LUMINANCE_BAND = 48


def detector_stub(image: bytes, band: int = LUMINANCE_BAND) -> float:
    try:
        with Image.open(io.BytesIO(image)) as img:
            img.load()
            lum = np.asarray(img.convert("L"), dtype=np.int16).ravel()
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise DetectorError(f"cannot decode image: {exc}") from exc
    if lum.size == 0:
        raise DetectorError("empty image")
    # lower median keeps the reference an actual pixel value
    median = int(np.partition(lum, (lum.size - 1) // 2)[(lum.size - 1) // 2])
    return float(np.count_nonzero(np.abs(lum - median) > band)) / lum.size
