//! Datasets: an `n × d` covariate matrix (row-major) plus a response vector.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    d: usize,
    covariates: Vec<f64>,
    responses: Vec<f64>,
    pub true_param: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset from row-major covariates.
    pub fn new(covariates: Vec<f64>, responses: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidData("covariate dimension must be positive".into()));
        }
        let n = responses.len();
        if covariates.len() != n * d {
            return Err(Error::DimensionMismatch {
                what: "covariates length vs n*d",
                expected: n * d,
                got: covariates.len(),
            });
        }
        Ok(Self {
            n,
            d,
            covariates,
            responses,
            true_param: None,
        })
    }

    /// A one-column dataset whose covariates are `obs` and whose responses
    /// are zero. This is the layout used by the toy models.
    pub fn observations(obs: Vec<f64>) -> Self {
        let n = obs.len();
        Self {
            n,
            d: 1,
            covariates: obs,
            responses: vec![0.0; n],
            true_param: None,
        }
    }

    pub fn with_true_param(mut self, beta0: Vec<f64>) -> Self {
        self.true_param = Some(beta0);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn response(&self, i: usize) -> f64 {
        self.responses[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Row-major covariates.
    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn covariates_mut(&mut self) -> &mut [f64] {
        &mut self.covariates
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.d;
        &mut self.covariates[i * d..(i + 1) * d]
    }

    pub fn set_response(&mut self, i: usize, y: f64) {
        self.responses[i] = y;
    }

    /// Covariates as an `n × d` matrix.
    pub fn covariate_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.covariates)
    }

    /// Covariates of rows `m..n`, flattened row-major (the "free" block of a
    /// dataset whose first `m` rows are held fixed).
    pub fn free_block(&self, m: usize) -> &[f64] {
        &self.covariates[m * self.d..]
    }

    pub fn set_free_block(&mut self, m: usize, free: &[f64]) -> Result<()> {
        let expected = (self.n - m) * self.d;
        if free.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "free covariate block",
                expected,
                got: free.len(),
            });
        }
        self.covariates[m * self.d..].copy_from_slice(free);
        Ok(())
    }

    /// Dataset with rows reordered so that new row `i` is old row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "permutation length",
                expected: self.n,
                got: perm.len(),
            });
        }
        let mut cov = Vec::with_capacity(self.covariates.len());
        let mut resp = Vec::with_capacity(self.n);
        for &p in perm {
            if p >= self.n {
                return Err(Error::IndexOutOfRange { index: p, n: self.n });
            }
            cov.extend_from_slice(self.row(p));
            resp.push(self.responses[p]);
        }
        Ok(Self {
            n: self.n,
            d: self.d,
            covariates: cov,
            responses: resp,
            true_param: self.true_param.clone(),
        })
    }

    /// Prefix of the first `m` rows.
    pub fn prefix(&self, m: usize) -> Self {
        let m = m.min(self.n);
        Self {
            n: m,
            d: self.d,
            covariates: self.covariates[..m * self.d].to_vec(),
            responses: self.responses[..m].to_vec(),
            true_param: self.true_param.clone(),
        }
    }

    /// Writes one row per datum: `x0,..,x{d-1},y` with a header line.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.d).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        wr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format_f64(*v)).collect();
            rec.push(format_f64(self.responses[i]));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the layout produced by [`Dataset::write_csv`]; lines starting
    /// with `#` are skipped.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let headers = rd.headers().map_err(csv_err)?.clone();
        if headers.len() < 2 {
            return Err(Error::InvalidData("dataset CSV needs at least one covariate and y".into()));
        }
        let d = headers.len() - 1;
        let mut cov = Vec::new();
        let mut resp = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != d + 1 {
                return Err(Error::InvalidData(format!("row has {} fields, expected {}", rec.len(), d + 1)));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidData(format!("not a number: {field:?}")))?;
                if j < d {
                    cov.push(v);
                } else {
                    resp.push(v);
                }
            }
        }
        Dataset::new(cov, resp, d)
    }

    pub fn save(&self, csv_path: &Path, sidecar: &DatasetSidecar) -> Result<()> {
        let f = std::fs::File::create(csv_path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let json_path = csv_path.with_extension("json");
        std::fs::write(json_path, serde_json::to_string_pretty(sidecar)?)?;
        Ok(())
    }
}

/// JSON sidecar describing how a dataset CSV was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub family: String,
    pub beta0: Option<Vec<f64>>,
    pub gamma_spec: serde_json::Value,
    pub seed: u64,
    pub stream_id: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub control_variates: Option<Vec<f64>>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidData(format!("csv: {e}"))
}

/// Shortest round-trip decimal representation.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shape_mismatch() {
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], vec![0.0, 1.0], 2).is_err());
        assert!(Dataset::new(vec![], vec![], 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::new(vec![0.1, -0.25, 1.0 / 3.0, 2.0], vec![1.0, 0.0], 2).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn permutation_moves_rows_and_responses() {
        let ds = Dataset::new(vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0], 1).unwrap();
        let p = ds.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.row(0), &[3.0]);
        assert_eq!(p.response(1), 10.0);
    }
}
