//! Text model files.
//!
//! ```text
//! FOE 1
//! <domain> <n_filters> <filter_size> <basis> <boundary>
//! <weight> <coef_1> ... <coef_n>      (one line per filter)
//! ```
//!
//! Floats are written with 17 significant digits, so `load(save(m)) == m`
//! bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use poisson_foe::basis::{BasisKind, FilterBasis};
use poisson_foe::foe::{DomainTag, FoEModel};
use poisson_foe::BoundaryRule;

use crate::error::{CliError, CliResult};

const HEADER: &str = "FOE 1";

pub fn to_text(model: &FoEModel) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(
        out,
        "{} {} {} {} {}",
        model.domain(),
        model.num_filters(),
        model.filter_size(),
        model.basis().kind(),
        model.boundary()
    )
    .unwrap();
    for (w, beta) in model.weights().iter().zip(model.betas()) {
        write!(out, "{w:.16e}").unwrap();
        for b in beta {
            write!(out, " {b:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn from_text(text: &str) -> CliResult<FoEModel> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some(HEADER) {
        return Err(CliError::data(format!("model file must start with '{HEADER}'")));
    }
    let meta: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::data("model file is missing its description line"))?
        .split_whitespace()
        .collect();
    if meta.len() != 5 {
        return Err(CliError::data(format!(
            "description line needs 5 fields (domain, filters, size, basis, boundary), got {}",
            meta.len()
        )));
    }
    let domain: DomainTag = meta[0].parse()?;
    let n_filters: usize = meta[1]
        .parse()
        .map_err(|_| CliError::data(format!("bad filter count '{}'", meta[1])))?;
    let size: usize = meta[2]
        .parse()
        .map_err(|_| CliError::data(format!("bad filter size '{}'", meta[2])))?;
    let kind: BasisKind = meta[3].parse()?;
    let boundary: BoundaryRule = meta[4].parse()?;
    let basis = FilterBasis::build(kind, size)?;

    let mut weights = Vec::with_capacity(n_filters);
    let mut betas = Vec::with_capacity(n_filters);
    for (i, line) in lines.enumerate() {
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| CliError::data(format!("filter {i}: bad number '{t}'"))))
            .collect::<CliResult<Vec<f64>>>()?;
        if values.len() != basis.len() + 1 {
            return Err(CliError::data(format!(
                "filter {i}: expected a weight and {} coefficients, got {} values",
                basis.len(),
                values.len()
            )));
        }
        weights.push(values[0]);
        betas.push(values[1..].to_vec());
    }
    if betas.len() != n_filters {
        return Err(CliError::data(format!("expected {n_filters} filter lines, found {}", betas.len())));
    }
    Ok(FoEModel::new(basis, betas, weights, domain, boundary)?)
}

pub fn save(path: &Path, model: &FoEModel) -> CliResult<()> {
    fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load(path: &Path) -> CliResult<FoEModel> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read model {}: {e}", path.display())))?;
    from_text(&text).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}
