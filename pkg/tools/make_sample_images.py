"""Regenerate the bundled 64x64 grayscale sample images.

Sources are photographs shipped inside scikit-image; each is converted to
luma, centre-cropped around a chosen point, 2x box-downsampled and written
as P5 PGM.  Only needed to rebuild the package data.
"""

import os
import sys

import numpy as np
from skimage import color, data

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from ensemble_denoise.imaging import write_image  # noqa: E402

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "ensemble_denoise", "data", "images")

# name -> (loader, (row, col) of crop centre in the source)
TEST = {
    "cameraman": (data.camera, (200, 260)),
    "astronaut": (data.astronaut, (180, 230)),
    "coffee": (data.coffee, (200, 300)),
    "chelsea": (data.chelsea, (150, 200)),
    "coins": (data.coins, (150, 190)),
}
TRAIN = {
    "moon": (data.moon, (250, 250)),
    "rocket": (data.rocket, (200, 300)),
    "motorcycle": (data.stereo_motorcycle, (300, 400)),
}


def load_gray(loader):
    img = loader()
    if isinstance(img, tuple):
        img = img[0]
    img = np.asarray(img)
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3]) * 255.0
    return img.astype(np.float64)


def make(loader, centre, size=64, factor=2):
    img = load_gray(loader)
    half = size * factor // 2
    r, c = centre
    crop = img[r - half:r + half, c - half:c + half]
    assert crop.shape == (size * factor, size * factor), crop.shape
    return crop.reshape(size, factor, size, factor).mean(axis=(1, 3))


def main():
    for subset, table in (("test", TEST), ("train", TRAIN)):
        os.makedirs(os.path.join(OUT, subset), exist_ok=True)
        for name, (loader, centre) in table.items():
            write_image(make(loader, centre), os.path.join(OUT, subset, f"{name}.pgm"))
            print(subset, name)


if __name__ == "__main__":
    main()
