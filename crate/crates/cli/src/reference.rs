//! Published PSNR/MSSIM figures bundled as static data.

use serde::Deserialize;

use crate::error::{CliError, CliResult};

const BUNDLED: &str = include_str!("../data/published_reference.csv");

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct PublishedRow {
    pub method: String,
    pub peak: f64,
    pub image: String,
    pub psnr_db: f64,
    pub mssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PublishedTable {
    rows: Vec<PublishedRow>,
}

impl PublishedTable {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<PublishedRow>, _>>()
            .map_err(|e| CliError::data(format!("reference table: {e}")))?;
        Ok(Self { rows })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled reference table parses")
    }

    pub fn rows(&self) -> &[PublishedRow] {
        &self.rows
    }

    pub fn lookup(&self, method: &str, peak: f64, image: &str) -> Option<&PublishedRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.peak == peak && r.image == image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_is_complete() {
        let t = PublishedTable::bundled();
        assert_eq!(t.rows().len(), 6 * 7 * 9);
        let r = t.lookup("FoEPNR", 40.0, "cameraman").unwrap();
        assert_eq!((r.psnr_db, r.mssim > 0.0), (28.93, true));
        assert_eq!(t.lookup("FoEPNRbin", 0.2, "cameraman").unwrap().psnr_db, 18.52);
        assert!(t.lookup("FoEPNR", 3.0, "cameraman").is_none());
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(PublishedTable::parse("method,peak,image,psnr_db,mssim\nA,x,b,1,2\n").is_err());
    }
}
