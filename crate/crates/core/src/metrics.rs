//! Accuracy, confusion matrices and RMSE with its aggregation views.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::kinematics::Finger;
use crate::synthgen::{Configuration, Speed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("label {0} is not one of the matrix classes")]
    UnknownClass(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(MetricsError::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Percentage of predictions equal to their label.
pub fn accuracy<T: PartialEq>(truth: &[T], predicted: &[T]) -> Result<f64> {
    check_lengths(truth.len(), predicted.len())?;
    let correct = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / truth.len() as f64 * 100.0)
}

pub fn rmse(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(truth.len(), predicted.len())?;
    let sum: f64 = truth.iter().zip(predicted).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok((sum / truth.len() as f64).sqrt())
}

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<Configuration>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<Configuration>) -> Self {
        let n = classes.len();
        Self {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    fn position(&self, c: Configuration) -> Result<usize> {
        self.classes
            .iter()
            .position(|&k| k == c)
            .ok_or_else(|| MetricsError::UnknownClass(c.to_string()))
    }

    pub fn record(&mut self, truth: Configuration, predicted: Configuration) -> Result<()> {
        let (r, c) = (self.position(truth)?, self.position(predicted)?);
        self.counts[r][c] += 1;
        Ok(())
    }

    pub fn from_predictions(
        classes: Vec<Configuration>,
        truth: &[Configuration],
        predicted: &[Configuration],
    ) -> Result<Self> {
        check_lengths(truth.len(), predicted.len())?;
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(MetricsError::Empty),
            n => Ok(self.correct() as f64 / n as f64 * 100.0),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for c in &self.classes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(c.name());
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:>6}", "");
        for c in &self.classes {
            let _ = write!(out, "{:>6}", c.name());
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            let _ = write!(out, "{:>6}", c.name());
            for v in row {
                let _ = write!(out, "{v:>6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Held-out RMSE of one finger in one (configuration, speed, seed) session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseCell {
    pub configuration: Configuration,
    pub speed: Speed,
    pub seed: u64,
    pub finger: Finger,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub cells: Vec<RmseCell>,
    /// Mean over speeds, seeds and fingers for each configuration.
    pub per_configuration: BTreeMap<Configuration, f64>,
    /// Mean over configurations, speeds and fingers for each seed.
    pub per_seed: BTreeMap<u64, f64>,
    pub grand_mean: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn group_means<K: Ord + Copy>(cells: &[RmseCell], key: impl Fn(&RmseCell) -> K) -> BTreeMap<K, f64> {
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for c in cells {
        groups.entry(key(c)).or_default().push(c.rmse);
    }
    groups.into_iter().map(|(k, v)| (k, mean(&v))).collect()
}

pub fn aggregate_rmse(cells: &[RmseCell]) -> Result<RmseReport> {
    if cells.is_empty() {
        return Err(MetricsError::Empty);
    }
    let values: Vec<f64> = cells.iter().map(|c| c.rmse).collect();
    Ok(RmseReport {
        cells: cells.to_vec(),
        per_configuration: group_means(cells, |c| c.configuration),
        per_seed: group_means(cells, |c| c.seed),
        grand_mean: mean(&values),
    })
}

impl RmseReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("RMSE by configuration (deg)\n");
        for (c, v) in &self.per_configuration {
            let _ = writeln!(out, "  {:<4} {:<15} {v:>8.3}", c.name(), c.description());
        }
        out.push_str("RMSE by seed (deg)\n");
        for (s, v) in &self.per_seed {
            let _ = writeln!(out, "  {s:<20} {v:>8.3}");
        }
        let _ = writeln!(out, "grand mean {:.3} deg over {} cells", self.grand_mean, self.cells.len());
        out
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rmse.grand_mean={}", self.grand_mean);
        let _ = writeln!(out, "rmse.cells={}", self.cells.len());
        for (c, v) in &self.per_configuration {
            let _ = writeln!(out, "rmse.configuration.{c}={v}");
        }
        for (s, v) in &self.per_seed {
            let _ = writeln!(out, "rmse.seed.{s}={v}");
        }
        out
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from("configuration,speed,seed,finger,rmse\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{},{}", c.configuration, c.speed, c.seed, c.finger, c.rmse);
        }
        out
    }
}
