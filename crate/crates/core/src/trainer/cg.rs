//! Matrix-free conjugate gradient.

use crate::image::Image;

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: Image,
    pub iterations: usize,
    /// `|A x - b| / |b|` at exit.
    pub rel_residual: f64,
    /// Residual norm before each iteration and at exit.
    pub residuals: Vec<f64>,
    /// Stopped because a search direction had `p^T A p <= 0`.
    pub breakdown: bool,
}

impl CgOutcome {
    pub fn converged(&self, tol: f64) -> bool {
        !self.breakdown && self.rel_residual <= tol
    }
}

/// Solves `A x = b` from `x = 0` for symmetric `A` given as a closure.
/// Stops at `|r| <= tol |b|`, after `max_iters`, or on non-positive curvature
/// (returning the last iterate).
pub fn conjugate_gradient(mut apply: impl FnMut(&Image) -> Image, b: &Image, tol: f64, max_iters: usize) -> CgOutcome {
    let b_norm = b.norm();
    let mut x = Image::zeros(b.width(), b.height());
    if b_norm == 0.0 {
        return CgOutcome {
            solution: x,
            iterations: 0,
            rel_residual: 0.0,
            residuals: vec![0.0],
            breakdown: false,
        };
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_sq();
    let mut residuals = vec![rr.sqrt()];
    let mut breakdown = false;
    let mut iterations = 0;
    while iterations < max_iters && rr.sqrt() > tol * b_norm {
        let ap = apply(&p);
        let curvature = p.dot(&ap);
        if !(curvature > 0.0) {
            breakdown = true;
            break;
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rr_new = r.norm_sq();
        let beta = rr_new / rr;
        rr = rr_new;
        for (pv, rv) in p.data_mut().iter_mut().zip(r.data()) {
            *pv = rv + beta * *pv;
        }
        iterations += 1;
        residuals.push(rr.sqrt());
    }
    CgOutcome {
        solution: x,
        iterations,
        rel_residual: rr.sqrt() / b_norm,
        residuals,
        breakdown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense SPD matrix `M^T M + I`.
    fn spd(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn matvec(a: &[Vec<f64>], x: &Image) -> Image {
        let d: Vec<f64> = a.iter().map(|row| row.iter().zip(x.data()).map(|(p, q)| p * q).sum()).collect();
        Image::new(x.width(), x.height(), d).unwrap()
    }

    #[test]
    fn recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = spd(&mut rng, 16);
        let x_true = Image::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let b = matvec(&a, &x_true);
        let out = conjugate_gradient(|p| matvec(&a, p), &b, 1e-12, 200);
        assert!(out.converged(1e-12));
        for (u, v) in out.solution.data().iter().zip(x_true.data()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_needs_one_step() {
        let b = Image::from_fn(3, 3, |x, y| (x + 2 * y) as f64);
        let out = conjugate_gradient(|p| p.clone(), &b, 1e-14, 10);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.solution, b);
    }

    #[test]
    fn detects_negative_curvature() {
        let b = Image::filled(2, 2, 1.0);
        let out = conjugate_gradient(|p| p.scaled(-1.0), &b, 1e-10, 10);
        assert!(out.breakdown);
        assert!(!out.converged(1e-10));
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let out = conjugate_gradient(|p| p.clone(), &Image::zeros(2, 2), 1e-10, 10);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution, Image::zeros(2, 2));
    }
}
