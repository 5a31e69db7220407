//! Anscombe variance-stabilizing transform and its inverses.
//!
//! The forward map `2 sqrt(y + 3/8)` turns Poisson counts into data with
//! roughly unit-variance Gaussian noise. Two inverses are provided: the plain
//! algebraic one, and a closed-form approximation of the exact unbiased
//! inverse, which maps `E[f(Y) | x]` back to `x` and so removes the bias the
//! algebraic inverse has at low counts.

use crate::error::{Error, Result};
use crate::image::Image;

const SQRT_3_2: f64 = 1.224_744_871_391_589;

/// Image of a zero count under the forward transform, `sqrt(3/2)`. Inputs to
/// the unbiased inverse are clamped to this value.
pub const Z_MIN: f64 = SQRT_3_2;

#[inline]
pub fn anscombe(y: f64) -> f64 {
    2.0 * (y + 0.375).sqrt()
}

#[inline]
pub fn inverse_algebraic(z: f64) -> f64 {
    0.25 * z * z - 0.375
}

/// Closed-form unbiased inverse evaluated without clamping. `z > 0`.
#[inline]
pub fn inverse_unbiased_raw(z: f64) -> f64 {
    let r = 1.0 / z;
    let r2 = r * r;
    0.25 * z * z + 0.25 * SQRT_3_2 * r - 1.375 * r2 + 0.625 * SQRT_3_2 * r2 * r - 0.125
}

/// Closed-form unbiased inverse with the input clamped to [`Z_MIN`] and the
/// output clamped to be non-negative.
#[inline]
pub fn inverse_unbiased(z: f64) -> f64 {
    inverse_unbiased_raw(z.max(Z_MIN)).max(0.0)
}

/// Derivative of [`inverse_unbiased_raw`]. `z > 0`.
#[inline]
pub fn inverse_unbiased_derivative_raw(z: f64) -> f64 {
    let r = 1.0 / z;
    let r2 = r * r;
    0.5 * z - 0.25 * SQRT_3_2 * r2 + 2.75 * r2 * r - 1.875 * SQRT_3_2 * r2 * r2
}

/// Derivative of the clamped [`inverse_unbiased`]: zero on the clamped
/// region `z < Z_MIN`.
#[inline]
pub fn inverse_unbiased_derivative(z: f64) -> f64 {
    if z < Z_MIN {
        0.0
    } else {
        inverse_unbiased_derivative_raw(z)
    }
}

pub fn anscombe_forward(y: &Image) -> Result<Image> {
    if y.data().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("Anscombe transform needs non-negative counts"));
    }
    Ok(y.map(anscombe))
}

pub fn anscombe_inverse_algebraic(z: &Image) -> Image {
    z.map(inverse_algebraic)
}

/// Result of the unbiased inverse, with the number of inputs that fell
/// below [`Z_MIN`] and were clamped.
#[derive(Clone, Debug)]
pub struct UnbiasedInverse {
    pub image: Image,
    pub clamped: usize,
}

pub fn anscombe_inverse_exact_unbiased(z: &Image) -> UnbiasedInverse {
    let clamped = z.data().iter().filter(|&&v| v < Z_MIN).count();
    if clamped > 0 {
        log::debug!("unbiased inverse: clamped {clamped} values below sqrt(3/2)");
    }
    UnbiasedInverse {
        image: z.map(inverse_unbiased),
        clamped,
    }
}

pub fn anscombe_inverse_derivative(z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::invalid(format!("inverse derivative needs z > 0, got {z}")));
    }
    Ok(inverse_unbiased_derivative_raw(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_poisson;

    #[test]
    fn forward_values() {
        assert!((anscombe(0.0) - 1.5f64.sqrt()).abs() < 1e-15);
        assert!((anscombe(0.0) - 1.224745).abs() < 1e-6);
        assert!((anscombe(1.0) - 2.345208).abs() < 1e-6);
        assert!((anscombe(10.0) - 2.0 * 10.375f64.sqrt()).abs() < 1e-15);
        assert!(anscombe_forward(&Image::filled(2, 2, -1.0)).is_err());
    }

    #[test]
    fn algebraic_inverse_round_trips() {
        for y in 0..=100 {
            let y = y as f64;
            assert!((inverse_algebraic(anscombe(y)) - y).abs() < 1e-12);
        }
        assert!(inverse_algebraic(1.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(inverse_algebraic(4.0), 3.625);
    }

    #[test]
    fn forward_is_strictly_increasing() {
        let mut prev = anscombe(0.0);
        for i in 1..1000 {
            let v = anscombe(i as f64 * 0.01);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn unbiased_inverse_values() {
        // leading correction over z^2/4 - 1/8 is sqrt(3/2)/(4z)
        let z = 100.0;
        let corr = inverse_unbiased_raw(z) - (z * z / 4.0 - 0.125);
        assert!((corr - 0.25 * SQRT_3_2 / z).abs() < 2e-4);
        // direct evaluation of the five terms at z = 2
        let expect = 1.0 + 0.25 * SQRT_3_2 / 2.0 - 1.375 / 4.0 + 0.625 * SQRT_3_2 / 8.0 - 0.125;
        assert!((inverse_unbiased_raw(2.0) - expect).abs() < 1e-15);
        assert!((inverse_unbiased_raw(2.0) - 0.780_026_302_001_416_5).abs() < 1e-12);
    }

    #[test]
    fn zero_count_maps_back_to_zero() {
        assert!(inverse_unbiased_raw(Z_MIN).abs() < 1e-15);
        assert_eq!(inverse_unbiased(0.3), inverse_unbiased(Z_MIN));
        let out = anscombe_inverse_exact_unbiased(&Image::new(3, 1, vec![0.5, Z_MIN, 3.0]).unwrap());
        assert_eq!(out.clamped, 1);
        assert!(out.image.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn unbiased_minus_algebraic_tends_to_a_quarter() {
        // I_C(z) - ((z/2)^2 - 3/8) = 1/4 + O(1/z); it is never below -0.5
        let mut z = Z_MIN;
        while z < 200.0 {
            let d = inverse_unbiased(z) - inverse_algebraic(z);
            assert!(d >= -0.5);
            if z >= 40.0 {
                assert!((d - 0.25).abs() < 0.01, "z={z} d={d}");
            }
            z += 0.01;
        }
    }

    #[test]
    fn unbiased_inverse_is_increasing_above_zmin() {
        let mut prev = inverse_unbiased(Z_MIN);
        let mut z = Z_MIN + 1e-3;
        while z < 50.0 {
            let v = inverse_unbiased(z);
            assert!(v > prev);
            prev = v;
            z += 1e-3;
        }
    }

    #[test]
    fn inverts_the_expected_transform() {
        // I_C(E[f(Y)]) recovers x; this is the unbiasedness the inverse is built for
        for (i, &x) in [0.5, 2.0, 5.0, 20.0].iter().enumerate() {
            let y = sample_poisson(&Image::filled(1_000_000, 1, x), 77 + i as u64).unwrap();
            let mean_f = anscombe_forward(&y).unwrap().mean();
            let xhat = inverse_unbiased(mean_f);
            assert!((xhat - x).abs() < 0.05, "x={x} got {xhat}");
            // the algebraic inverse is biased low
            assert!(inverse_algebraic(mean_f) < x - 0.1);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for &z in &[1.5, 2.0, 3.0, 7.5, 30.0] {
            let h = 1e-5;
            let fd = (inverse_unbiased_raw(z + h) - inverse_unbiased_raw(z - h)) / (2.0 * h);
            assert!((fd - anscombe_inverse_derivative(z).unwrap()).abs() < 1e-6, "z={z}");
        }
    }

    #[test]
    fn derivative_values() {
        assert!((anscombe_inverse_derivative(1000.0).unwrap() - 500.0).abs() < 1e-3);
        let expect = 1.0 - 0.25 * SQRT_3_2 / 4.0 + 2.75 / 8.0 - 1.875 * SQRT_3_2 / 16.0;
        assert!((anscombe_inverse_derivative(2.0).unwrap() - expect).abs() < 1e-15);
        assert!(anscombe_inverse_derivative(0.0).is_err());
        assert!(anscombe_inverse_derivative(-1.0).is_err());
        assert_eq!(inverse_unbiased_derivative(1.0), 0.0);
    }
}
