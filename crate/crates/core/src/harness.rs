//! Datasets, builtin prior guesses and the simulation protocol.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::wavelet::Domain;
use crate::{Error, Result};

/// Observations `y_i = g(x_i) + ε_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{} abscissae but {} responses",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if let Some(v) = x.iter().chain(&y).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("data value {v}")));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn check_domain(&self, domain: Domain) -> Result<()> {
        match self.x.iter().find(|&&x| !domain.contains(x)) {
            Some(&x) => Err(Error::OutsideDomain {
                x,
                lo: domain.lo,
                hi: domain.hi,
            }),
            None => Ok(()),
        }
    }

    /// Parse `x,y` CSV (header required, one observation per row).
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let (x, y) = read_pairs(reader, ("x", "y"))?;
        Self::new(x, y)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["x", "y"]).map_err(io)?;
        for (x, y) in self.x.iter().zip(&self.y) {
            w.write_record([fmt_f64(*x), fmt_f64(*y)]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest decimal that round-trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn read_pairs<R: Read>(reader: R, names: (&str, &str)) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse(format!("missing `{name}` column in header {header:?}")))
    };
    let (cx, cy) = (col(names.0)?, col(names.1)?);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let field = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("row {}: `{s}` is not a number", line + 2)))
        };
        xs.push(field(cx)?);
        ys.push(field(cy)?);
    }
    Ok((xs, ys))
}

/// The builtin prior guesses (and simulation truths).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinGuess {
    /// `cos(2πx)`
    Cos,
    /// `4|x − 0.5| − 1`
    Vee,
    /// `0`
    Zero,
    /// `22.5 cos(2π(x + 0.1)/0.2) + 62.5`
    Seasonal,
}

impl BuiltinGuess {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Self::Cos => (2.0 * PI * x).cos(),
            Self::Vee => 4.0 * (x - 0.5).abs() - 1.0,
            Self::Zero => 0.0,
            Self::Seasonal => 22.5 * (2.0 * PI * (x + 0.1) / 0.2).cos() + 62.5,
        }
    }
}

impl FromStr for BuiltinGuess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cos" => Ok(Self::Cos),
            "vee" => Ok(Self::Vee),
            "zero" => Ok(Self::Zero),
            "seasonal" => Ok(Self::Seasonal),
            _ => Err(Error::UnknownGuess(s.to_string())),
        }
    }
}

impl fmt::Display for BuiltinGuess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cos => "cos",
            Self::Vee => "vee",
            Self::Zero => "zero",
            Self::Seasonal => "seasonal",
        })
    }
}

pub fn builtin_g0(name: &str) -> Result<BuiltinGuess> {
    name.parse()
}

/// A prior guess: builtin formula or a table interpolated linearly.
#[derive(Clone, Debug, PartialEq)]
pub enum PriorGuess {
    Builtin(BuiltinGuess),
    Table { x: Vec<f64>, g: Vec<f64> },
}

impl PriorGuess {
    /// Table from `(x, g0(x))` pairs; sorted by `x`.
    pub fn table(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("prior-guess table"));
        }
        if points.iter().any(|(x, g)| !x.is_finite() || !g.is_finite()) {
            return Err(Error::NonFinite("prior-guess table".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (x, g) = points.into_iter().unzip();
        Ok(Self::Table { x, g })
    }

    /// `x,g0` CSV.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (x, g) = read_pairs(std::fs::File::open(path)?, ("x", "g0"))?;
        Self::table(x.into_iter().zip(g).collect())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Builtin(b) => b.eval(x),
            Self::Table { x: xs, g } => {
                let i = xs.partition_point(|&v| v <= x);
                if i == 0 {
                    g[0]
                } else if i == xs.len() {
                    g[xs.len() - 1]
                } else {
                    let (x0, x1) = (xs[i - 1], xs[i]);
                    let w = (x - x0) / (x1 - x0);
                    g[i - 1] + w * (g[i] - g[i - 1])
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Builtin(b) => b.to_string(),
            Self::Table { x, .. } => format!("table({} points)", x.len()),
        }
    }
}

impl From<BuiltinGuess> for PriorGuess {
    fn from(b: BuiltinGuess) -> Self {
        Self::Builtin(b)
    }
}

/// Simulation settings: `x ~ U(T)`, `y = g(x) + N(0, noise_var)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub noise_var: f64,
    pub truth: BuiltinGuess,
    pub seed: u64,
    pub domain: Domain,
}

impl SimConfig {
    /// `n = 20`, `σ² = 0.1`, `g = cos(2πx)` on `[0, 1]`.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            n: 20,
            noise_var: 0.1,
            truth: BuiltinGuess::Cos,
            seed,
            domain: Domain::unit(),
        }
    }

    /// Stand-in for the weekly humidity series: seasonal signal, 185 points.
    pub fn seasonal(seed: u64) -> Self {
        Self {
            n: 185,
            noise_var: 25.0,
            truth: BuiltinGuess::Seasonal,
            seed,
            domain: Domain::unit(),
        }
    }
}

pub fn simulate(config: &SimConfig) -> Result<Dataset> {
    if config.n == 0 {
        return Err(Error::Empty("simulation with n = 0"));
    }
    if !(config.noise_var >= 0.0) || !config.noise_var.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise variance {}",
            config.noise_var
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sd = config.noise_var.sqrt();
    let d = config.domain;
    let x: Vec<f64> = (0..config.n)
        .map(|_| d.lo + d.length() * rng.random::<f64>())
        .collect();
    let y = x
        .iter()
        .map(|&xi| {
            let eps: f64 = rng.sample(StandardNormal);
            config.truth.eval(xi) + sd * eps
        })
        .collect();
    Dataset::new(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn builtin_values() {
        let vee = builtin_g0("vee").unwrap();
        assert_eq!(vee.eval(0.5), -1.0);
        assert_eq!(vee.eval(0.0), 1.0);
        assert_eq!(vee.eval(1.0), 1.0);
        let zero = builtin_g0("zero").unwrap();
        assert!((0..10).all(|i| zero.eval(i as f64 / 10.0) == 0.0));
        assert_eq!(builtin_g0("cos").unwrap().eval(0.0), 1.0);
        let seasonal = builtin_g0("seasonal").unwrap();
        assert!((seasonal.eval(0.1) - 85.0).abs() < 1e-9);
        assert!((seasonal.eval(0.0) - 40.0).abs() < 1e-9);
        assert!(matches!(builtin_g0("sine"), Err(Error::UnknownGuess(_))));
    }

    #[test]
    fn simulated_noise_has_plausible_variance() {
        let cfg = SimConfig::benchmark(1);
        let d = simulate(&cfg).unwrap();
        assert_eq!(d.n(), 20);
        let r: Vec<f64> = d
            .x()
            .iter()
            .zip(d.y())
            .map(|(x, y)| y - (2.0 * PI * x).cos())
            .collect();
        let mean = r.iter().sum::<f64>() / 20.0;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 19.0;
        // 99% χ²_19 band scaled by σ²/19
        let chi = ChiSquared::new(19.0).unwrap();
        let lo = 0.1 * chi.inverse_cdf(0.005) / 19.0;
        let hi = 0.1 * chi.inverse_cdf(0.995) / 19.0;
        assert!(lo > 0.02 && hi < 0.4);
        assert!(var > lo && var < hi, "{var}");
    }

    #[test]
    fn noiseless_and_deterministic() {
        let mut cfg = SimConfig::benchmark(4);
        cfg.noise_var = 0.0;
        let d = simulate(&cfg).unwrap();
        assert!(d.x().iter().zip(d.y()).all(|(x, y)| *y == (2.0 * PI * x).cos()));
        let cfg = SimConfig::benchmark(8);
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        assert_ne!(simulate(&cfg).unwrap(), simulate(&SimConfig::benchmark(9)).unwrap());
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let d = simulate(&SimConfig::benchmark(2)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(Dataset::from_csv_reader(buf.as_slice()).unwrap(), d);
        assert!(matches!(
            Dataset::from_csv_reader("x,y\n0.1,abc\n".as_bytes()),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            Dataset::from_csv_reader("a,b\n0.1,0.2\n".as_bytes()),
            Err(Error::Parse(_))
        ));
        assert!(Dataset::from_csv_reader("x,y\n".as_bytes()).is_err());
    }

    #[test]
    fn table_guess_interpolates() {
        let g = PriorGuess::table(vec![(1.0, 2.0), (0.0, 0.0)]).unwrap();
        assert_eq!(g.eval(0.25), 0.5);
        assert_eq!(g.eval(-1.0), 0.0);
        assert_eq!(g.eval(3.0), 2.0);
    }
}
