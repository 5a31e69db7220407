//! Grayscale images, square filter kernels and "same"-size 2D convolution.
//!
//! Convolution is evaluated in the spatial domain on a padded copy of the
//! input. The adjoint scatters into a padded buffer and then folds the
//! padding back onto the pixels it was copied from, so it is the exact
//! transpose of [`convolve_same`] for every boundary rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grid of real intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::dims(
                format!("{} pixels ({}x{})", width * height, width, height),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        debug_assert!(self.same_dims(other));
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Image) {
        debug_assert!(self.same_dims(x));
        for (s, &v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Image {
        self.map(|v| v * a)
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert!(self.same_dims(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {}x{}+{}+{} outside {}x{} image",
                width, height, x0, y0, self.width, self.height
            )));
        }
        Ok(Image::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }
}

/// Square filter with an odd side length.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
        }
        if taps.len() != size * size {
            return Err(Error::dims(format!("{} taps", size * size), format!("{}", taps.len())));
        }
        Ok(Self { size, taps })
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Self::new(size, vec![0.0; size * size])
    }

    /// Centered unit impulse.
    pub fn delta(size: usize) -> Result<Self> {
        let mut k = Self::zeros(size)?;
        let c = size / 2;
        k.taps[c * size + c] = 1.0;
        Ok(k)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    #[inline]
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    /// Tap at row `a`, column `b` (both in `0..size`).
    #[inline]
    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.taps[a * self.size + b]
    }

    /// 180 degree rotation.
    pub fn flipped(&self) -> Kernel {
        let mut taps = self.taps.clone();
        taps.reverse();
        Kernel {
            size: self.size,
            taps,
        }
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Kernel) -> f64 {
        self.taps.iter().zip(&other.taps).map(|(a, b)| a * b).sum()
    }

    /// Sum of absolute taps; bounds the operator norm of the convolution.
    pub fn l1_norm(&self) -> f64 {
        self.taps.iter().map(|t| t.abs()).sum()
    }
}

/// How pixels outside the image are synthesized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryRule {
    /// Mirror with the edge pixel repeated: `c b a | a b c | c b a`.
    #[default]
    Symmetric,
    /// Wrap around.
    Periodic,
}

impl BoundaryRule {
    #[inline]
    fn source_index(self, i: isize, n: usize) -> usize {
        let n = n as isize;
        match self {
            BoundaryRule::Periodic => i.rem_euclid(n) as usize,
            BoundaryRule::Symmetric => {
                let m = i.rem_euclid(2 * n);
                if m < n {
                    m as usize
                } else {
                    (2 * n - 1 - m) as usize
                }
            }
        }
    }
}

impl fmt::Display for BoundaryRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryRule::Symmetric => "symmetric",
            BoundaryRule::Periodic => "periodic",
        })
    }
}

impl FromStr for BoundaryRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(BoundaryRule::Symmetric),
            "periodic" => Ok(BoundaryRule::Periodic),
            other => Err(Error::invalid(format!("unknown boundary rule '{other}'"))),
        }
    }
}

fn check_kernel_fits(img: &Image, k: &Kernel) -> Result<()> {
    if img.width < k.size || img.height < k.size {
        return Err(Error::dims(
            format!("image at least {0}x{0}", k.size),
            format!("{}x{}", img.width, img.height),
        ));
    }
    Ok(())
}

/// Index maps from padded coordinates back to source pixels.
#[derive(Clone, Debug)]
struct PadLayout {
    width: usize,
    height: usize,
    radius: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl PadLayout {
    fn new(width: usize, height: usize, radius: usize, boundary: BoundaryRule) -> Self {
        let r = radius as isize;
        let rows = (0..height + 2 * radius)
            .map(|i| boundary.source_index(i as isize - r, height))
            .collect();
        let cols = (0..width + 2 * radius)
            .map(|j| boundary.source_index(j as isize - r, width))
            .collect();
        Self {
            width,
            height,
            radius,
            rows,
            cols,
        }
    }

    #[inline]
    fn padded_width(&self) -> usize {
        self.width + 2 * self.radius
    }

    #[inline]
    fn padded_height(&self) -> usize {
        self.height + 2 * self.radius
    }
}

/// An image copied into a padded buffer once, so that many kernels can be
/// applied to it without re-padding.
#[derive(Clone, Debug)]
pub struct PaddedImage {
    layout: PadLayout,
    buf: Vec<f64>,
}

impl PaddedImage {
    pub fn new(img: &Image, radius: usize, boundary: BoundaryRule) -> Self {
        let layout = PadLayout::new(img.width, img.height, radius, boundary);
        let pw = layout.padded_width();
        let mut buf = Vec::with_capacity(pw * layout.padded_height());
        for &sr in &layout.rows {
            let row = &img.data[sr * img.width..(sr + 1) * img.width];
            buf.extend(layout.cols.iter().map(|&sc| row[sc]));
        }
        Self { layout, buf }
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn height(&self) -> usize {
        self.layout.height
    }

    /// Writes `k * img` into `out` (same dims as the source image).
    pub fn convolve_into(&self, k: &Kernel, out: &mut Image) {
        let l = &self.layout;
        assert!(k.radius() <= l.radius, "kernel larger than padding");
        debug_assert!(out.width == l.width && out.height == l.height);
        let (w, m, rk) = (l.width, k.size, k.radius());
        let pw = l.padded_width();
        let base = l.radius + rk;
        for y in 0..l.height {
            let orow = &mut out.data[y * w..(y + 1) * w];
            orow.fill(0.0);
            for a in 0..m {
                let prow = &self.buf[(y + base - a) * pw..(y + base - a + 1) * pw];
                for b in 0..m {
                    let kv = k.taps[a * m + b];
                    if kv == 0.0 {
                        continue;
                    }
                    let src = &prow[base - b..base - b + w];
                    for (o, s) in orow.iter_mut().zip(src) {
                        *o += kv * s;
                    }
                }
            }
        }
    }

    pub fn convolve(&self, k: &Kernel) -> Image {
        let mut out = Image::zeros(self.layout.width, self.layout.height);
        self.convolve_into(k, &mut out);
        out
    }

    /// Gradient of `<weights, k * img>` with respect to the taps of a
    /// `size`x`size` kernel `k`.
    pub fn kernel_gradient(&self, weights: &Image, size: usize) -> Vec<f64> {
        let l = &self.layout;
        let rk = size / 2;
        assert!(rk <= l.radius, "kernel larger than padding");
        let (w, pw) = (l.width, l.padded_width());
        let base = l.radius + rk;
        let mut grad = vec![0.0; size * size];
        for y in 0..l.height {
            let zrow = &weights.data[y * w..(y + 1) * w];
            for a in 0..size {
                let prow = &self.buf[(y + base - a) * pw..(y + base - a + 1) * pw];
                for b in 0..size {
                    let src = &prow[base - b..base - b + w];
                    grad[a * size + b] += zrow.iter().zip(src).map(|(z, s)| z * s).sum::<f64>();
                }
            }
        }
        grad
    }
}

/// Accumulates `sum_i K_i^T z_i` in padded space and folds once at the end.
#[derive(Clone, Debug)]
pub struct AdjointAccumulator {
    layout: PadLayout,
    buf: Vec<f64>,
}

impl AdjointAccumulator {
    pub fn new(width: usize, height: usize, radius: usize, boundary: BoundaryRule) -> Self {
        let layout = PadLayout::new(width, height, radius, boundary);
        let n = layout.padded_width() * layout.padded_height();
        Self {
            layout,
            buf: vec![0.0; n],
        }
    }

    /// Adds `K^T z`.
    pub fn add(&mut self, z: &Image, k: &Kernel) {
        let l = &self.layout;
        assert!(k.radius() <= l.radius, "kernel larger than padding");
        debug_assert!(z.width == l.width && z.height == l.height);
        let (w, m, rk) = (l.width, k.size, k.radius());
        let pw = l.padded_width();
        let base = l.radius + rk;
        for y in 0..l.height {
            let zrow = &z.data[y * w..(y + 1) * w];
            for a in 0..m {
                let start = (y + base - a) * pw;
                let prow = &mut self.buf[start..start + pw];
                for b in 0..m {
                    let kv = k.taps[a * m + b];
                    if kv == 0.0 {
                        continue;
                    }
                    let dst = &mut prow[base - b..base - b + w];
                    for (d, zv) in dst.iter_mut().zip(zrow) {
                        *d += kv * zv;
                    }
                }
            }
        }
    }

    /// Folds the padded buffer back onto the image grid.
    pub fn finish(self) -> Image {
        let l = &self.layout;
        let pw = l.padded_width();
        let mut out = Image::zeros(l.width, l.height);
        for (i, &sr) in l.rows.iter().enumerate() {
            let prow = &self.buf[i * pw..(i + 1) * pw];
            let orow = &mut out.data[sr * l.width..(sr + 1) * l.width];
            for (&sc, &v) in l.cols.iter().zip(prow) {
                orow[sc] += v;
            }
        }
        out
    }
}

/// `k * img` with output the same size as the input.
pub fn convolve_same(img: &Image, k: &Kernel, boundary: BoundaryRule) -> Result<Image> {
    check_kernel_fits(img, k)?;
    Ok(PaddedImage::new(img, k.radius(), boundary).convolve(k))
}

/// Exact transpose of [`convolve_same`] under the same boundary rule.
pub fn convolve_adjoint(img: &Image, k: &Kernel, boundary: BoundaryRule) -> Result<Image> {
    check_kernel_fits(img, k)?;
    let mut acc = AdjointAccumulator::new(img.width, img.height, k.radius(), boundary);
    acc.add(img, k);
    Ok(acc.finish())
}
