//! Peak scaling, Poisson sampling and 3x3 binning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::image::Image;

/// Side length of a bin.
pub const BIN_SIZE: usize = 3;
/// Pixels summed per bin.
pub const BIN_AREA: f64 = (BIN_SIZE * BIN_SIZE) as f64;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub peak: f64,
    pub seed: u64,
    /// Value substituted for zero counts (direct model only).
    pub zero_offset_c: f64,
    pub bin_factor: usize,
}

impl NoiseSpec {
    pub fn new(peak: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            peak,
            seed,
            zero_offset_c: 0.0,
            bin_factor: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak > 0.0 && self.peak.is_finite()) {
            return Err(Error::invalid(format!("peak must be positive, got {}", self.peak)));
        }
        if self.bin_factor != 1 && self.bin_factor != BIN_SIZE {
            return Err(Error::invalid(format!("bin factor must be 1 or 3, got {}", self.bin_factor)));
        }
        if !(self.zero_offset_c >= 0.0) {
            return Err(Error::invalid("zero offset must be non-negative"));
        }
        Ok(())
    }
}

/// Rescales `img` so that its maximum equals `peak`.
pub fn scale_to_peak(img: &Image, peak: f64) -> Result<Image> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(format!("peak must be positive, got {peak}")));
    }
    let max = img.max();
    if !(max > 0.0) {
        return Err(Error::invalid("cannot scale an image without positive pixels"));
    }
    let factor = peak / max;
    // the brightest pixels map to `peak` exactly, not up to rounding
    Ok(img.map(|v| if v == max { peak } else { v * factor }))
}

/// Independent Poisson draw per pixel. Pixel `i` uses ChaCha stream `i` of
/// `seed`, so the result does not depend on evaluation order.
pub fn sample_poisson(img: &Image, seed: u64) -> Result<Image> {
    if img.data().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("Poisson intensities must be non-negative"));
    }
    let base = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &mean)| {
            if mean == 0.0 {
                return 0.0;
            }
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            poisson(&mut rng, mean) as f64
        })
        .collect();
    Image::new(img.width(), img.height(), data)
}

/// Draws from Poisson(`mean`): sequential inversion below 10, PTRS
/// transformed rejection (Hörmann 1993) otherwise.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    debug_assert!(mean >= 0.0);
    if mean == 0.0 {
        return 0;
    }
    if mean < 10.0 {
        poisson_inversion(rng, mean)
    } else {
        poisson_ptrs(rng, mean)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    let u: f64 = rng.gen();
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        // tail mass is below f64 resolution
        if p < 1e-300 && k as f64 > mean {
            break;
        }
    }
    k
}

fn poisson_ptrs<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.gen::<f64>() - 0.5;
        let v: f64 = rng.gen();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -mean + k * loglam - ln_gamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

/// Sums 3x3 blocks. Dimensions that are not multiples of 3 are first
/// extended by replicating the last row/column.
pub fn bin3(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let (bw, bh) = (w.div_ceil(BIN_SIZE), h.div_ceil(BIN_SIZE));
    Image::from_fn(bw, bh, |bx, by| {
        let mut acc = 0.0;
        for dy in 0..BIN_SIZE {
            let y = (by * BIN_SIZE + dy).min(h - 1);
            for dx in 0..BIN_SIZE {
                let x = (bx * BIN_SIZE + dx).min(w - 1);
                acc += img.get(x, y);
            }
        }
        acc
    })
}

/// Divides binned intensities by 9 and bilinearly upsamples to the target
/// size (pixel-center aligned, integer factor per axis, then cropped).
pub fn unbin_bilinear(img: &Image, target_w: usize, target_h: usize) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    if target_w < w || target_h < h {
        return Err(Error::invalid(format!(
            "target {target_w}x{target_h} is smaller than source {w}x{h}"
        )));
    }
    let fx = target_w.div_ceil(w);
    let fy = target_h.div_ceil(h);
    let axis = |t: usize, factor: usize, n: usize| -> (usize, usize, f64) {
        let s = ((t as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..target_w).map(|x| axis(x, fx, w)).collect();
    let rows: Vec<_> = (0..target_h).map(|y| axis(y, fy, h)).collect();
    Ok(Image::from_fn(target_w, target_h, |x, y| {
        let (x0, x1, tx) = cols[x];
        let (y0, y1, ty) = rows[y];
        let top = img.get(x0, y0) * (1.0 - tx) + img.get(x1, y0) * tx;
        let bottom = img.get(x0, y1) * (1.0 - tx) + img.get(x1, y1) * tx;
        (top * (1.0 - ty) + bottom * ty) / BIN_AREA
    }))
}

/// Peak estimate for an observation whose peak is unknown: the maximum of
/// its 3x3 median-filtered version.
pub fn estimate_peak(noisy: &Image) -> f64 {
    let (w, h) = (noisy.width(), noisy.height());
    let mut best = 0.0f64;
    let mut window = [0.0; 9];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let sy = mirror(y as isize + dy, h);
                    let sx = mirror(x as isize + dx, w);
                    window[n] = noisy.get(sx, sy);
                    n += 1;
                }
            }
            window.sort_by(|a, b| a.total_cmp(b));
            best = best.max(window[4]);
        }
    }
    best
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}
