//! Zero-mean filter bases and filter composition `k = sum_j beta_j b_j`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::Kernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    /// Separable 2D DCT-II without the constant atom.
    Dct,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisKind::Dct => f.write_str("dct"),
        }
    }
}

impl FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dct" => Ok(BasisKind::Dct),
            other => Err(Error::invalid(format!("unknown basis '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBasis {
    kind: BasisKind,
    atom_size: usize,
    atoms: Vec<Kernel>,
}

impl FilterBasis {
    pub fn build(kind: BasisKind, atom_size: usize) -> Result<Self> {
        match kind {
            BasisKind::Dct => dct_basis_zero_mean(atom_size),
        }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn atom_size(&self) -> usize {
        self.atom_size
    }

    pub fn atoms(&self) -> &[Kernel] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Coefficients of `k` in this basis (atoms are orthonormal).
    pub fn project(&self, k: &Kernel) -> Result<Vec<f64>> {
        if k.size() != self.atom_size {
            return Err(Error::dims(format!("{0}x{0} kernel", self.atom_size), k.size()));
        }
        Ok(self.atoms.iter().map(|b| b.dot(k)).collect())
    }
}

/// The m x m DCT-II basis minus its constant atom: `m^2 - 1` unit-norm,
/// mutually orthogonal, zero-sum atoms.
///
/// Atoms are ordered by (vertical frequency, horizontal frequency) in
/// row-major order, skipping (0, 0).
pub fn dct_basis_zero_mean(m: usize) -> Result<FilterBasis> {
    if m % 2 == 0 {
        return Err(Error::invalid(format!("basis size must be odd, got {m}")));
    }
    if m < 3 {
        return Err(Error::invalid(format!("basis size must be at least 3, got {m}")));
    }
    let mf = m as f64;
    let cosines: Vec<Vec<f64>> = (0..m)
        .map(|u| {
            let scale = if u == 0 { (1.0 / mf).sqrt() } else { (2.0 / mf).sqrt() };
            (0..m)
                .map(|x| scale * (PI * (2 * x + 1) as f64 * u as f64 / (2.0 * mf)).cos())
                .collect()
        })
        .collect();
    let mut atoms = Vec::with_capacity(m * m - 1);
    for u in 0..m {
        for v in 0..m {
            if u == 0 && v == 0 {
                continue;
            }
            let mut taps = Vec::with_capacity(m * m);
            for a in 0..m {
                for b in 0..m {
                    taps.push(cosines[u][a] * cosines[v][b]);
                }
            }
            atoms.push(Kernel::new(m, taps)?);
        }
    }
    Ok(FilterBasis {
        kind: BasisKind::Dct,
        atom_size: m,
        atoms,
    })
}

pub fn compose_filter(basis: &FilterBasis, beta: &[f64]) -> Result<Kernel> {
    if beta.len() != basis.len() {
        return Err(Error::dims(format!("{} coefficients", basis.len()), beta.len()));
    }
    let m = basis.atom_size;
    let mut taps = vec![0.0; m * m];
    for (atom, &c) in basis.atoms.iter().zip(beta) {
        if c == 0.0 {
            continue;
        }
        for (t, &a) in taps.iter_mut().zip(atom.taps()) {
            *t += c * a;
        }
    }
    Kernel::new(m, taps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dct7_has_48_atoms() {
        assert_eq!(dct_basis_zero_mean(7).unwrap().len(), 48);
        assert_eq!(dct_basis_zero_mean(5).unwrap().len(), 24);
        assert_eq!(dct_basis_zero_mean(3).unwrap().len(), 8);
    }

    #[test]
    fn atoms_are_zero_mean() {
        for m in [3, 5, 7] {
            for atom in dct_basis_zero_mean(m).unwrap().atoms() {
                assert!(atom.sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_matrix_is_identity() {
        for m in [3, 5, 7] {
            let basis = dct_basis_zero_mean(m).unwrap();
            for (i, a) in basis.atoms().iter().enumerate() {
                for (j, b) in basis.atoms().iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((a.dot(b) - expect).abs() < 1e-10, "m={m} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn rejects_even_or_tiny_sizes() {
        assert!(dct_basis_zero_mean(6).is_err());
        assert!(dct_basis_zero_mean(1).is_err());
    }

    #[test]
    fn compose_unit_and_zero_coefficients() {
        let basis = dct_basis_zero_mean(5).unwrap();
        let mut e1 = vec![0.0; basis.len()];
        e1[0] = 1.0;
        assert_eq!(compose_filter(&basis, &e1).unwrap(), basis.atoms()[0]);
        let zero = compose_filter(&basis, &vec![0.0; basis.len()]).unwrap();
        assert!(zero.taps().iter().all(|&t| t == 0.0));
        assert!(compose_filter(&basis, &[1.0]).is_err());
    }

    #[test]
    fn compose_matches_explicit_weighted_sum() {
        let basis = dct_basis_zero_mean(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let beta: Vec<f64> = (0..basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = compose_filter(&basis, &beta).unwrap();
        for t in 0..9 {
            let mut expect = 0.0;
            for (j, atom) in basis.atoms().iter().enumerate() {
                expect += beta[j] * atom.taps()[t];
            }
            assert!((k.taps()[t] - expect).abs() < 1e-14);
        }
        assert!(k.sum().abs() < 1e-12);
        let back = basis.project(&k).unwrap();
        for (a, b) in back.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
