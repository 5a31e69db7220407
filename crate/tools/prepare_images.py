"""Export the bundled scikit-image sample pictures as 8-bit grayscale PNGs.

test/        eight 256x256 evaluation images
train/       training corpus (random crops are drawn by the trainer)
validation/  held-out images used for the lambda calibration grid search
"""
import os

import numpy as np
from skimage import color, data, io, transform
from skimage.util import img_as_ubyte

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")


def gray(im):
    if im.ndim == 3:
        im = color.rgb2gray(im[..., :3])
        return img_as_ubyte(im)
    return im


def center_square(im):
    h, w = im.shape
    s = min(h, w)
    y, x = (h - s) // 2, (w - s) // 2
    return im[y:y + s, x:x + s]


def to256(im):
    im = center_square(gray(im))
    out = transform.resize(im.astype(np.float64), (256, 256), anti_aliasing=True,
                           preserve_range=True)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def save(sub, name, im):
    io.imsave(os.path.join(ROOT, sub, name + ".png"), im, check_contrast=False)


TEST = {
    "cameraman": data.camera,
    "astronaut": data.astronaut,
    "coins": data.coins,
    "moon": data.moon,
    "cell": data.cell,
    "rocket": data.rocket,
    "coffee": data.coffee,
    "gravel": data.gravel,
}

TRAIN = {
    "chelsea": data.chelsea,
    "motorcycle": data.stereo_motorcycle,
    "grass": data.grass,
    "brick": data.brick,
    "retina": data.retina,
    "hubble": data.hubble_deep_field,
    "page": data.page,
}

VALIDATION = {
    "ihc": data.immunohistochemistry,
    "text": data.text,
    "clock": data.clock,
}


def main():
    for name, fn in TEST.items():
        save("test", name, to256(fn()))
    for name, fn in TRAIN.items():
        im = fn()
        if name == "motorcycle":
            im = im[0]
        im = gray(im)
        h, w = im.shape
        if max(h, w) > 512:
            f = 512.0 / max(h, w)
            im = np.clip(np.round(transform.resize(
                im.astype(np.float64), (int(h * f), int(w * f)), anti_aliasing=True,
                preserve_range=True)), 0, 255).astype(np.uint8)
        save("train", name, im)
    for name, fn in VALIDATION.items():
        save("validation", name, to256(fn()))


if __name__ == "__main__":
    main()
