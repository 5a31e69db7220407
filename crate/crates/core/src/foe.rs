//! Fields-of-Experts prior: `E(u) = sum_i w_i sum_p rho((k_i * u)_p)` with
//! the Lorentzian potential `rho(z) = log(1 + z^2)`.

use std::fmt;
use std::str::FromStr;

use crate::basis::{compose_filter, dct_basis_zero_mean, FilterBasis};
use crate::error::{Error, Result};
use crate::image::{AdjointAccumulator, BoundaryRule, Image, Kernel, PaddedImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivative {
    Value,
    First,
    Second,
}

#[inline]
pub fn rho(z: f64) -> f64 {
    z.mul_add(z, 1.0).ln()
}

#[inline]
pub fn rho_prime(z: f64) -> f64 {
    2.0 * z / z.mul_add(z, 1.0)
}

#[inline]
pub fn rho_second(z: f64) -> f64 {
    let d = z.mul_add(z, 1.0);
    2.0 * (1.0 - z * z) / (d * d)
}

pub fn potential(z: f64, order: Derivative) -> f64 {
    match order {
        Derivative::Value => rho(z),
        Derivative::First => rho_prime(z),
        Derivative::Second => rho_second(z),
    }
}

/// Which data the prior was trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DomainTag {
    /// Raw photon counts.
    Original,
    /// Anscombe-transformed counts.
    Anscombe,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainTag::Original => "original",
            DomainTag::Anscombe => "anscombe",
        })
    }
}

impl FromStr for DomainTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(DomainTag::Original),
            "anscombe" => Ok(DomainTag::Anscombe),
            other => Err(Error::invalid(format!("unknown domain tag '{other}'"))),
        }
    }
}

/// A filter bank expressed in a zero-mean basis, with positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FoEModel {
    basis: FilterBasis,
    betas: Vec<Vec<f64>>,
    weights: Vec<f64>,
    domain: DomainTag,
    boundary: BoundaryRule,
}

impl FoEModel {
    pub fn new(
        basis: FilterBasis,
        betas: Vec<Vec<f64>>,
        weights: Vec<f64>,
        domain: DomainTag,
        boundary: BoundaryRule,
    ) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("model needs at least one filter"));
        }
        if betas.len() != weights.len() {
            return Err(Error::dims(format!("{} weights", betas.len()), weights.len()));
        }
        for (i, beta) in betas.iter().enumerate() {
            if beta.len() != basis.len() {
                return Err(Error::dims(
                    format!("{} coefficients for filter {i}", basis.len()),
                    beta.len(),
                ));
            }
            if beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::invalid(format!("filter {i} has non-finite coefficients")));
            }
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("weights must be positive, got {w}")));
        }
        Ok(Self {
            basis,
            betas,
            weights,
            domain,
            boundary,
        })
    }

    /// `n_filters` filters, filter `i` being DCT atom `i` scaled to
    /// `norm`, all with weight `weight`.
    pub fn dct_init(
        size: usize,
        n_filters: usize,
        norm: f64,
        weight: f64,
        domain: DomainTag,
    ) -> Result<Self> {
        let basis = dct_basis_zero_mean(size)?;
        if n_filters == 0 || n_filters > basis.len() {
            return Err(Error::invalid(format!(
                "need 1..={} filters for a {size}x{size} basis, got {n_filters}",
                basis.len()
            )));
        }
        let betas = (0..n_filters)
            .map(|i| {
                let mut b = vec![0.0; basis.len()];
                b[i] = norm;
                b
            })
            .collect();
        Self::new(basis, betas, vec![weight; n_filters], domain, BoundaryRule::default())
    }

    pub fn basis(&self) -> &FilterBasis {
        &self.basis
    }

    pub fn betas(&self) -> &[Vec<f64>] {
        &self.betas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn boundary(&self) -> BoundaryRule {
        self.boundary
    }

    pub fn with_boundary(mut self, boundary: BoundaryRule) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn num_filters(&self) -> usize {
        self.betas.len()
    }

    pub fn filter_size(&self) -> usize {
        self.basis.atom_size()
    }

    pub fn kernels(&self) -> Vec<Kernel> {
        self.betas
            .iter()
            .map(|b| compose_filter(&self.basis, b).expect("validated at construction"))
            .collect()
    }

    /// The same filters with every weight multiplied by `factor`.
    pub fn scale_weights(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.basis.clone(),
            self.betas.clone(),
            self.weights.iter().map(|w| w * factor).collect(),
            self.domain,
            self.boundary,
        )
    }

    pub fn prior(&self) -> FoePrior {
        FoePrior::new(self.kernels(), self.weights.clone(), self.boundary)
    }
}

/// Composed kernels ready for repeated energy/gradient evaluation.
#[derive(Clone, Debug)]
pub struct FoePrior {
    kernels: Vec<Kernel>,
    weights: Vec<f64>,
    boundary: BoundaryRule,
    radius: usize,
}

impl FoePrior {
    pub fn new(kernels: Vec<Kernel>, weights: Vec<f64>, boundary: BoundaryRule) -> Self {
        assert_eq!(kernels.len(), weights.len());
        let radius = kernels.iter().map(Kernel::radius).max().unwrap_or(0);
        Self {
            kernels,
            weights,
            boundary,
            radius,
        }
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn boundary(&self) -> BoundaryRule {
        self.boundary
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn check_dims(&self, u: &Image) -> Result<()> {
        let m = 2 * self.radius + 1;
        if u.width() < m || u.height() < m {
            return Err(Error::dims(
                format!("image at least {m}x{m}"),
                format!("{}x{}", u.width(), u.height()),
            ));
        }
        Ok(())
    }

    pub fn pad(&self, u: &Image) -> PaddedImage {
        PaddedImage::new(u, self.radius, self.boundary)
    }

    pub fn adjoint_accumulator(&self, u: &Image) -> AdjointAccumulator {
        AdjointAccumulator::new(u.width(), u.height(), self.radius, self.boundary)
    }

    /// Filter responses `k_i * u`.
    pub fn responses(&self, u: &Image) -> Vec<Image> {
        let padded = self.pad(u);
        self.kernels.iter().map(|k| padded.convolve(k)).collect()
    }

    pub fn energy(&self, u: &Image) -> f64 {
        let padded = self.pad(u);
        let mut z = Image::zeros(u.width(), u.height());
        let mut total = 0.0;
        for (k, &w) in self.kernels.iter().zip(&self.weights) {
            padded.convolve_into(k, &mut z);
            total += w * z.data().iter().map(|&v| rho(v)).sum::<f64>();
        }
        total
    }

    pub fn energy_and_gradient(&self, u: &Image) -> (f64, Image) {
        let padded = self.pad(u);
        let mut acc = self.adjoint_accumulator(u);
        let mut z = Image::zeros(u.width(), u.height());
        let mut total = 0.0;
        for (k, &w) in self.kernels.iter().zip(&self.weights) {
            padded.convolve_into(k, &mut z);
            let mut e = 0.0;
            for v in z.data_mut() {
                e += rho(*v);
                *v = w * rho_prime(*v);
            }
            total += w * e;
            acc.add(&z, k);
        }
        (total, acc.finish())
    }

    pub fn gradient(&self, u: &Image) -> Image {
        self.energy_and_gradient(u).1
    }

    /// Global Lipschitz bound on the gradient: `2 sum_i w_i ||K_i||^2`, with
    /// `||K_i|| <= sum |k_i|`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.kernels
            .iter()
            .zip(&self.weights)
            .map(|(k, w)| 2.0 * w * k.l1_norm().powi(2))
            .sum()
    }
}

pub fn foe_energy(u: &Image, model: &FoEModel) -> Result<f64> {
    let prior = model.prior();
    prior.check_dims(u)?;
    Ok(prior.energy(u))
}

pub fn foe_gradient(u: &Image, model: &FoEModel) -> Result<Image> {
    let prior = model.prior();
    prior.check_dims(u)?;
    Ok(prior.gradient(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::FilterBasis;
    use crate::image::convolve_same;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut impl Rng, m: usize, n: usize) -> FoEModel {
        let basis = dct_basis_zero_mean(m).unwrap();
        let betas = (0..n)
            .map(|_| (0..basis.len()).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        let weights = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
        FoEModel::new(basis, betas, weights, DomainTag::Anscombe, BoundaryRule::Symmetric).unwrap()
    }

    fn random_image(rng: &mut impl Rng, w: usize, h: usize, scale: f64) -> Image {
        Image::from_fn(w, h, |_, _| scale * rng.gen_range(0.0..1.0))
    }

    #[test]
    fn potential_values() {
        assert_eq!(potential(0.0, Derivative::Value), 0.0);
        assert_eq!(potential(0.0, Derivative::First), 0.0);
        assert_eq!(potential(0.0, Derivative::Second), 2.0);
        assert!((rho(1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((rho_prime(1.0) - 1.0).abs() < 1e-15);
        assert!(rho_second(1.0).abs() < 1e-15);
    }

    #[test]
    fn potential_symmetry() {
        for &z in &[0.1, 0.7, 2.0, 13.0] {
            assert_eq!(rho(z), rho(-z));
            assert_eq!(rho_prime(z), -rho_prime(-z));
            assert!(rho_prime(z).abs() <= 1.0);
        }
    }

    #[test]
    fn potential_finite_differences() {
        let h = 1e-5;
        for i in -3..=3 {
            let z = i as f64;
            let d1 = (rho(z + h) - rho(z - h)) / (2.0 * h);
            let d2 = (rho_prime(z + h) - rho_prime(z - h)) / (2.0 * h);
            assert!((d1 - rho_prime(z)).abs() < 1e-7, "z={z}");
            assert!((d2 - rho_second(z)).abs() < 1e-7, "z={z}");
        }
    }

    #[test]
    fn constant_image_has_zero_energy_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_model(&mut rng, 5, 4);
        let u = Image::filled(16, 16, 7.25);
        assert!(foe_energy(&u, &model).unwrap().abs() < 1e-20);
        assert!(foe_gradient(&u, &model).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn delta_filter_energy_is_pointwise_potential() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_image(&mut rng, 6, 6, 3.0);
        let prior = FoePrior::new(vec![Kernel::delta(3).unwrap()], vec![1.0], BoundaryRule::Symmetric);
        let expect: f64 = u.data().iter().map(|&v| (1.0 + v * v).ln()).sum();
        assert!((prior.energy(&u) - expect).abs() < 1e-12);
    }

    #[test]
    fn energy_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(&mut rng, 3, 2);
        let u = random_image(&mut rng, 16, 16, 5.0);
        let mut expect = 0.0;
        for (k, &w) in model.kernels().iter().zip(model.weights()) {
            for y in 0..16isize {
                for x in 0..16isize {
                    let mut resp = 0.0;
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let sy = mirror(y - dy, 16);
                            let sx = mirror(x - dx, 16);
                            resp += k.at((dy + 1) as usize, (dx + 1) as usize) * u.get(sx, sy);
                        }
                    }
                    expect += w * (1.0 + resp * resp).ln();
                }
            }
        }
        let got = foe_energy(&u, &model).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect.abs());
    }

    fn mirror(i: isize, n: isize) -> usize {
        let m = i.rem_euclid(2 * n);
        (if m < n { m } else { 2 * n - 1 - m }) as usize
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = random_model(&mut rng, 3, 3);
        let u = random_image(&mut rng, 12, 12, 4.0);
        let g = foe_gradient(&u, &model).unwrap();
        let h = 1e-5;
        for _ in 0..20 {
            let idx = rng.gen_range(0..u.len());
            let mut up = u.clone();
            up.data_mut()[idx] += h;
            let mut dn = u.clone();
            dn.data_mut()[idx] -= h;
            let fd = (foe_energy(&up, &model).unwrap() - foe_energy(&dn, &model).unwrap()) / (2.0 * h);
            let rel = (fd - g.data()[idx]).abs() / g.data()[idx].abs().max(1e-8);
            assert!(rel < 1e-5, "pixel {idx}: fd {fd} vs {}", g.data()[idx]);
        }
    }

    #[test]
    fn gradient_is_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = random_model(&mut rng, 3, 3);
        let u = random_image(&mut rng, 10, 10, 2.0);
        let g1 = foe_gradient(&u, &model).unwrap();
        let g2 = foe_gradient(&u, &model.scale_weights(2.0).unwrap()).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_uses_exact_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = random_model(&mut rng, 5, 2).with_boundary(BoundaryRule::Periodic);
        let u = random_image(&mut rng, 11, 9, 3.0);
        let g = foe_gradient(&u, &model).unwrap();
        let mut expect = Image::zeros(11, 9);
        for (k, &w) in model.kernels().iter().zip(model.weights()) {
            let z = convolve_same(&u, k, BoundaryRule::Periodic).unwrap().map(rho_prime);
            expect.axpy(w, &crate::image::convolve_adjoint(&z, k, BoundaryRule::Periodic).unwrap());
        }
        for (a, b) in g.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_is_non_negative_and_dims_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = random_model(&mut rng, 5, 3);
        for _ in 0..10 {
            let u = random_image(&mut rng, 8, 8, 10.0);
            assert!(foe_energy(&u, &model).unwrap() >= 0.0);
        }
        assert!(foe_energy(&Image::zeros(4, 8), &model).is_err());
        assert!(foe_gradient(&Image::zeros(8, 3), &model).is_err());
    }

    #[test]
    fn dct_init_layout() {
        let model = FoEModel::dct_init(7, 48, 0.1, 1.0, DomainTag::Anscombe).unwrap();
        assert_eq!(model.num_filters(), 48);
        for k in model.kernels() {
            assert!((k.norm() - 0.1).abs() < 1e-12);
            assert!(k.sum().abs() < 1e-12);
        }
        assert!(model.weights().iter().all(|&w| w == 1.0));
        assert!(FoEModel::dct_init(5, 25, 0.1, 1.0, DomainTag::Anscombe).is_err());
    }

    #[test]
    fn model_validation() {
        let basis = FilterBasis::build(crate::basis::BasisKind::Dct, 3).unwrap();
        let ok = FoEModel::new(
            basis.clone(),
            vec![vec![0.0; 8]],
            vec![1.0],
            DomainTag::Original,
            BoundaryRule::Symmetric,
        );
        assert!(ok.is_ok());
        let bad_weight = FoEModel::new(
            basis.clone(),
            vec![vec![0.0; 8]],
            vec![0.0],
            DomainTag::Original,
            BoundaryRule::Symmetric,
        );
        assert!(bad_weight.is_err());
        let bad_len = FoEModel::new(
            basis,
            vec![vec![0.0; 7]],
            vec![1.0],
            DomainTag::Original,
            BoundaryRule::Symmetric,
        );
        assert!(bad_len.is_err());
    }
}
