"""Writes SSIM fixture pairs scored by scikit-image, used as an
independent reference for the Rust implementation."""

import numpy as np
from skimage import data
from skimage.metrics import structural_similarity

OUT = "crates/core/tests/fixtures/ssim_pairs.txt"


def pairs(rng):
    cam = data.camera().astype(np.float64)
    sizes = [(16, 16), (16, 16), (24, 20), (32, 32), (17, 29), (40, 40), (64, 48), (11, 11), (33, 21), (50, 50)]
    for i, (w, h) in enumerate(sizes):
        if i % 2 == 0:
            y0, x0 = rng.integers(0, 400, size=2)
            a = cam[y0:y0 + h, x0:x0 + w]
        else:
            a = rng.uniform(0, 255, size=(h, w))
        noise = rng.normal(0, 5 + 10 * i, size=(h, w))
        b = np.clip(a + noise, 0, 255) if i % 3 else a * 0.8 + 20 + noise
        yield a, b


def main():
    rng = np.random.default_rng(20240611)
    with open(OUT, "w") as f:
        f.write("# width height data_range ssim, then the two images row-major\n")
        for a, b in pairs(rng):
            h, w = a.shape
            s = structural_similarity(
                a, b, data_range=255.0, gaussian_weights=True, sigma=1.5,
                use_sample_covariance=False, K1=0.01, K2=0.03,
            )
            f.write(f"{w} {h} 255 {float(s)!r}\n")
            f.write(" ".join(repr(float(v)) for v in a.ravel()) + "\n")
            f.write(" ".join(repr(float(v)) for v in b.ravel()) + "\n")


if __name__ == "__main__":
    main()
