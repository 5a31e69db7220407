//! PSNR and mean SSIM.

use crate::error::{Error, Result};
use crate::image::Image;

/// Intensity range used for scoring once images are mapped to `[0, 255]`.
pub const SCORE_RANGE: f64 = 255.0;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// `10 log10(range^2 / MSE)`. Identical images give `+inf`.
pub fn psnr(x_hat: &Image, g: &Image, data_range: f64) -> Result<f64> {
    x_hat.ensure_same_dims(g)?;
    if !(data_range > 0.0) {
        return Err(Error::invalid(format!("data range must be positive, got {data_range}")));
    }
    let mse = x_hat
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x_hat.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

fn gaussian_taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut taps = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable Gaussian filter keeping only positions where the whole window
/// fits inside the image.
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, population covariances, averaged over the positions where
/// the window lies fully inside the image.
pub fn mssim(x_hat: &Image, g: &Image, data_range: f64) -> Result<f64> {
    x_hat.ensure_same_dims(g)?;
    let win = 2 * SSIM_RADIUS + 1;
    if x_hat.width() < win || x_hat.height() < win {
        return Err(Error::dims(
            format!("image at least {win}x{win}"),
            format!("{}x{}", x_hat.width(), x_hat.height()),
        ));
    }
    if !(data_range > 0.0) {
        return Err(Error::invalid(format!("data range must be positive, got {data_range}")));
    }
    let (w, h) = (x_hat.width(), x_hat.height());
    let taps = gaussian_taps();
    let a = x_hat.data();
    let b = g.data();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, _, _) = filter_valid(a, w, h, &taps);
    let (mu_b, _, _) = filter_valid(b, w, h, &taps);
    let (m_aa, _, _) = filter_valid(&aa, w, h, &taps);
    let (m_bb, _, _) = filter_valid(&bb, w, h, &taps);
    let (m_ab, _, _) = filter_valid(&ab, w, h, &taps);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ua, ub) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ua * ua;
        let vb = m_bb[i] - ub * ub;
        let cov = m_ab[i] - ua * ub;
        let num = (2.0 * ua * ub + c1) * (2.0 * cov + c2);
        let den = (ua * ua + ub * ub + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// Quality of one denoised image.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreReport {
    pub image_id: String,
    pub method_id: String,
    pub peak: f64,
    pub psnr_db: f64,
    pub mssim: f64,
}

impl ScoreReport {
    /// The reconstruction equals the reference exactly.
    pub fn is_exact(&self) -> bool {
        self.psnr_db.is_infinite()
    }
}

/// Scores `x_hat` against the peak-scaled clean image `g`: both are mapped
/// to `[0, 255]` by `255 / peak` and compared with a data range of 255.
pub fn score(
    x_hat: &Image,
    g: &Image,
    peak: f64,
    image_id: impl Into<String>,
    method_id: impl Into<String>,
) -> Result<ScoreReport> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("peak must be positive, got {peak}")));
    }
    let s = SCORE_RANGE / peak;
    let a = x_hat.scaled(s);
    let b = g.scaled(s);
    Ok(ScoreReport {
        image_id: image_id.into(),
        method_id: method_id.into(),
        peak,
        psnr_db: psnr(&a, &b, SCORE_RANGE)?,
        mssim: mssim(&a, &b, SCORE_RANGE)?,
    })
}
