//! MCMC output: constrained-space draws, summaries, and CSV persistence.
//!
//! The file format is a CSV table `iteration,<names>,lp` preceded by
//! `# key: value` metadata lines. Reals are written with 17 significant
//! digits so a save/load round trip is exact.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, Read};
use std::path::Path;

use thiserror::Error;

use crate::addressing::VarName;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("no column matches `{0}`")]
    NotFound(String),
    #[error("invalid chain: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainMeta {
    pub sampler: String,
    pub seed: u64,
    pub model: String,
}

/// Row-major `n_iters × names.len()` draws plus per-row log densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    names: Vec<String>,
    draws: Vec<f64>,
    logp: Vec<f64>,
    pub meta: ChainMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
}

impl Chain {
    pub fn new(names: Vec<String>, meta: ChainMeta) -> Result<Chain, ChainError> {
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(ChainError::Invalid(format!("duplicate column `{dup}`")));
        }
        Ok(Chain {
            names,
            draws: Vec::new(),
            logp: Vec::new(),
            meta,
        })
    }

    pub fn push(&mut self, row: &[f64], logp: f64) -> Result<(), ChainError> {
        if row.len() != self.names.len() {
            return Err(ChainError::Invalid(format!(
                "row has {} values for {} columns",
                row.len(),
                self.names.len()
            )));
        }
        self.draws.extend_from_slice(row);
        self.logp.push(logp);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_iters(&self) -> usize {
        self.logp.len()
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn logp(&self) -> &[f64] {
        &self.logp
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.names.len();
        &self.draws[i * k..(i + 1) * k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_iters()).map(|i| self.row(i)[j]).collect()
    }

    /// Rows from `start` on, e.g. to drop warmup.
    pub fn tail(&self, start: usize) -> Chain {
        let k = self.names.len();
        let start = start.min(self.n_iters());
        Chain {
            names: self.names.clone(),
            draws: self.draws[start * k..].to_vec(),
            logp: self.logp[start..].to_vec(),
            meta: self.meta.clone(),
        }
    }

    /// Columns whose names are subsumed by `v`, in column order.
    pub fn get_column(&self, v: &str) -> Result<Vec<(String, Vec<f64>)>, ChainError> {
        let prefix = VarName::parse(v).map_err(|_| ChainError::NotFound(v.to_string()))?;
        let out: Vec<_> = self
            .names
            .iter()
            .enumerate()
            .filter(|(_, n)| VarName::parse(n).is_ok_and(|n| prefix.subsumes(&n)))
            .map(|(j, n)| (n.clone(), self.column(j)))
            .collect();
        if out.is_empty() {
            return Err(ChainError::NotFound(v.to_string()));
        }
        Ok(out)
    }

    pub fn summarize(&self) -> Vec<(String, Summary)> {
        (0..self.n_params())
            .map(|j| (self.names[j].clone(), summarize_column(&self.column(j))))
            .collect()
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), ChainError> {
        fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, ChainError> {
        let mut out = format!(
            "# sampler: {}\n# seed: {}\n# model: {}\n",
            self.meta.sampler, self.meta.seed, self.meta.model
        );
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let header = std::iter::once("iteration").chain(self.names.iter().map(String::as_str)).chain(["lp"]);
        w.write_record(header).map_err(csv_write)?;
        for i in 0..self.n_iters() {
            let mut rec = Vec::with_capacity(self.n_params() + 2);
            rec.push((i + 1).to_string());
            rec.extend(self.row(i).iter().map(|x| fmt_real(*x)));
            rec.push(fmt_real(self.logp[i]));
            w.write_record(&rec).map_err(csv_write)?;
        }
        let body = w.into_inner().map_err(|e| ChainError::Invalid(e.to_string()))?;
        out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn load_csv(path: &Path) -> Result<Chain, ChainError> {
        Chain::from_csv_reader(io::BufReader::new(fs::File::open(path)?))
    }

    pub fn from_csv_reader<R: BufRead>(mut reader: R) -> Result<Chain, ChainError> {
        let mut meta = ChainMeta::default();
        let mut meta_lines = 0u64;
        let mut header_line = String::new();
        loop {
            header_line.clear();
            if reader.read_line(&mut header_line)? == 0 {
                return Err(ChainError::Parse {
                    line: meta_lines + 1,
                    message: "missing header".into(),
                });
            }
            let Some(rest) = header_line.strip_prefix('#') else {
                break;
            };
            meta_lines += 1;
            if let Some((k, v)) = rest.split_once(':') {
                let v = v.trim();
                match k.trim() {
                    "sampler" => meta.sampler = v.to_string(),
                    "model" => meta.model = v.to_string(),
                    "seed" => {
                        meta.seed = v.parse().map_err(|_| ChainError::Parse {
                            line: meta_lines,
                            message: format!("bad seed `{v}`"),
                        })?
                    }
                    _ => {}
                }
            }
        }
        let first = header_line.clone();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(io::Cursor::new(first).chain(reader));
        let line_of = |pos: Option<&csv::Position>| pos.map_or(meta_lines + 1, |p| p.line() + meta_lines);
        let header = rdr.headers().map_err(|e| ChainError::Parse {
            line: line_of(e.position()),
            message: e.to_string(),
        })?;
        let cols: Vec<String> = header.iter().map(str::to_string).collect();
        if cols.len() < 2 || cols[0] != "iteration" || cols[cols.len() - 1] != "lp" {
            return Err(ChainError::Parse {
                line: meta_lines + 1,
                message: "header must be `iteration,<names>,lp`".into(),
            });
        }
        let mut chain = Chain::new(cols[1..cols.len() - 1].to_vec(), meta).map_err(|e| ChainError::Parse {
            line: meta_lines + 1,
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(chain.n_params());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ChainError::Parse {
                line: line_of(e.position()),
                message: match e.kind() {
                    csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                        format!("expected {expected_len} fields, found {len}")
                    }
                    _ => e.to_string(),
                },
            })?;
            let line = line_of(rec.position());
            row.clear();
            for field in rec.iter().skip(1) {
                row.push(field.trim().parse::<f64>().map_err(|_| ChainError::Parse {
                    line,
                    message: format!("bad number `{field}`"),
                })?);
            }
            let lp = row.pop().expect("lp column");
            chain.push(&row, lp)?;
        }
        Ok(chain)
    }
}

fn csv_write(e: csv::Error) -> ChainError {
    ChainError::Invalid(e.to_string())
}

fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Sample mean, sample standard deviation and effective sample size.
pub fn summarize_column(xs: &[f64]) -> Summary {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let sd = if xs.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    Summary {
        mean,
        sd,
        ess: ess(xs),
    }
}

/// Effective sample size with Geyer's initial monotone sequence estimator.
/// Undefined (NaN) for a constant column.
pub fn ess(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return f64::NAN;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let acov = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let c0 = acov(0);
    if c0 <= 0.0 {
        return f64::NAN;
    }
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (acov(2 * k) + acov(2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    n as f64 / tau.max(1.0 / (n as f64).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn linreg_chain(rows: &[[f64; 3]]) -> Chain {
        let meta = ChainMeta {
            sampler: "hmc".into(),
            seed: 1,
            model: "linreg".into(),
        };
        let mut c = Chain::new(vec!["w[1]".into(), "w[2]".into(), "s".into()], meta).unwrap();
        for (i, r) in rows.iter().enumerate() {
            c.push(r, -(i as f64) - 0.5).unwrap();
        }
        c
    }

    #[test]
    fn constant_and_alternating_columns() {
        let s = summarize_column(&[3.0; 50]);
        assert_eq!((s.mean, s.sd), (3.0, 0.0));
        assert!(s.ess.is_nan());
        let alt: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(summarize_column(&alt).mean, 0.0);
    }

    #[test]
    fn iid_normal_ess_is_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e = ess(&xs);
        assert!((5_000.0..=15_000.0).contains(&e), "ess = {e}");
    }

    #[test]
    fn header_and_columns() {
        let c = linreg_chain(&[[0.1, 0.2, 1.0], [0.3, 0.4, 2.0]]);
        let text = c.to_csv_string().unwrap();
        assert!(text.lines().any(|l| l == "iteration,w[1],w[2],s,lp"));
        assert_eq!(c.get_column("w").unwrap().len(), 2);
        let s = c.get_column("s").unwrap();
        assert_eq!(s, vec![("s".to_string(), vec![1.0, 2.0])]);
        assert!(matches!(c.get_column("q"), Err(ChainError::NotFound(_))));
    }

    #[test]
    fn ragged_row_reports_its_line() {
        let text = "# sampler: mh\n# seed: 0\n# model: m\niteration,a,lp\n1,0.5,-1\n2,0.5\n";
        match Chain::from_csv_reader(io::Cursor::new(text)) {
            Err(ChainError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        let text = "iteration,a,lp\n1,zz,-1\n";
        assert!(matches!(
            Chain::from_csv_reader(io::Cursor::new(text)),
            Err(ChainError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn non_finite_logp_round_trips() {
        let mut c = linreg_chain(&[[0.0, 0.0, 1.0]]);
        c.push(&[1.0, 1.0, 1.0], f64::NEG_INFINITY).unwrap();
        let back = Chain::from_csv_reader(io::Cursor::new(c.to_csv_string().unwrap())).unwrap();
        assert_eq!(back.logp()[1], f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(rows in prop::collection::vec(prop::array::uniform3(any::<f64>().prop_filter("finite", |x| x.is_finite())), 1..20)) {
            let c = linreg_chain(&rows);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.csv");
            c.save_csv(&path).unwrap();
            let back = Chain::load_csv(&path).unwrap();
            prop_assert_eq!(back, c);
        }

        #[test]
        fn mean_matches_arithmetic_mean(xs in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let want = xs.iter().sum::<f64>() / xs.len() as f64;
            prop_assert!((summarize_column(&xs).mean - want).abs() < 1e-12);
        }
    }
}
