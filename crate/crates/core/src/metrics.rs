//! Stage-by-domain accuracy matrices and the two continual-learning scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ordering::Strategy;

/// `rows[i][j]` is test accuracy on `domain_order[j]` after stage `i`.
/// Entries with `j > i` are pre-exposure evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub domain_order: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(domain_order: Vec<String>) -> Self {
        Self {
            domain_order,
            rows: Vec::new(),
        }
    }

    pub fn stages(&self) -> usize {
        self.domain_order.len()
    }

    /// Appends the evaluations taken after the next stage.
    pub fn record_stage(&mut self, accuracies: Vec<f64>) -> Result<()> {
        if self.rows.len() == self.stages() {
            return Err(Error::Matrix("all stages already recorded".into()));
        }
        if accuracies.len() != self.stages() {
            return Err(Error::Matrix(format!(
                "stage row has {} entries, expected {}",
                accuracies.len(),
                self.stages()
            )));
        }
        if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Matrix(format!("accuracy {a} outside [0, 1]")));
        }
        self.rows.push(accuracies);
        Ok(())
    }

    pub fn check_complete(&self) -> Result<()> {
        let t = self.stages();
        if t == 0 {
            return Err(Error::Matrix("no domains".into()));
        }
        if self.rows.len() != t || self.rows.iter().any(|r| r.len() != t) {
            return Err(Error::Matrix(format!(
                "expected {t}x{t} entries, found {} rows",
                self.rows.len()
            )));
        }
        if self.rows.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Matrix("accuracy outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Header of domain ids, then one row per stage.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage");
        for d in &self.domain_order {
            s.push(',');
            s.push_str(d);
        }
        s.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(s, "{i}");
            for a in row {
                let _ = write!(s, ",{a}");
            }
            s.push('\n');
        }
        s
    }
}

/// Mean of the final row.
pub fn average_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    m.check_complete()?;
    let last = &m.rows[m.stages() - 1];
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

fn forgetting(m: &AccuracyMatrix, include_pre_exposure: bool) -> Result<f64> {
    m.check_complete()?;
    let t = m.stages();
    if t < 2 {
        return Err(Error::Matrix(
            "forgetting is undefined for a single domain".into(),
        ));
    }
    let last = &m.rows[t - 1];
    let mut total = 0.0;
    for j in 0..t - 1 {
        let first = if include_pre_exposure { 0 } else { j };
        let best = m.rows[first..]
            .iter()
            .map(|r| r[j])
            .fold(f64::NEG_INFINITY, f64::max);
        total += best - last[j];
    }
    Ok(total / (t - 1) as f64)
}

/// Mean over all domains but the last of best accuracy (at or after the
/// domain's own stage) minus final accuracy.
pub fn average_cf(m: &AccuracyMatrix) -> Result<f64> {
    forgetting(m, false)
}

/// Variant of [`average_cf`] whose maximum also ranges over pre-exposure
/// evaluations.
pub fn average_cf_with_pre_exposure(m: &AccuracyMatrix) -> Result<f64> {
    forgetting(m, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub subset_id: usize,
    pub strategy: Strategy,
    pub avg_accuracy: f64,
    pub avg_cf: f64,
    pub avg_cf_pre_exposure: f64,
    pub matrix: AccuracyMatrix,
}

pub fn finalize_run(
    run_id: impl Into<String>,
    subset_id: usize,
    strategy: Strategy,
    matrix: AccuracyMatrix,
) -> Result<RunResult> {
    let avg_accuracy = average_accuracy(&matrix)?;
    let avg_cf = average_cf(&matrix)?;
    debug_assert!(avg_cf >= 0.0);
    Ok(RunResult {
        run_id: run_id.into(),
        subset_id,
        strategy,
        avg_accuracy,
        avg_cf,
        avg_cf_pre_exposure: average_cf_with_pre_exposure(&matrix)?,
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>) -> AccuracyMatrix {
        let order = (0..rows.len()).map(|i| format!("d{i}")).collect();
        AccuracyMatrix { domain_order: order, rows }
    }

    fn hand() -> AccuracyMatrix {
        matrix(vec![
            vec![0.9, 0.1, 0.2],
            vec![0.7, 0.8, 0.3],
            vec![0.5, 0.6, 0.9],
        ])
    }

    #[test]
    fn hand_matrix_scores() {
        let m = hand();
        assert!((average_accuracy(&m).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((average_cf(&m).unwrap() - 0.3).abs() < 1e-12);
        let r = finalize_run("r", 0, Strategy::MinSum, m).unwrap();
        assert!((r.avg_accuracy - 0.6667).abs() < 1e-4);
        assert!((r.avg_cf - 0.3).abs() < 1e-12);
    }

    #[test]
    fn simple_cases() {
        assert_eq!(average_accuracy(&matrix(vec![vec![0.8]])).unwrap(), 0.8);
        assert!(average_cf(&matrix(vec![vec![0.8]])).is_err());
        let m = matrix(vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(average_cf(&m).unwrap(), 0.0);
        assert_eq!(average_accuracy(&m).unwrap(), 1.0);
        let monotone = matrix(vec![vec![0.2, 0.0, 0.0], vec![0.4, 0.5, 0.0], vec![0.6, 0.5, 0.7]]);
        assert_eq!(average_cf(&monotone).unwrap(), 0.0);
    }

    #[test]
    fn pre_exposure_variant_can_only_grow() {
        let m = matrix(vec![vec![0.2, 0.9], vec![0.1, 0.5]]);
        assert!((average_cf(&m).unwrap() - 0.1).abs() < 1e-12);
        assert!((average_cf_with_pre_exposure(&m).unwrap() - 0.1).abs() < 1e-12);
        let m = matrix(vec![vec![0.2, 0.0, 0.0], vec![0.5, 0.3, 0.0], vec![0.1, 0.1, 0.9]]);
        assert!(average_cf_with_pre_exposure(&m).unwrap() >= average_cf(&m).unwrap());
    }

    #[test]
    fn incomplete_or_mismatched_matrix_is_rejected() {
        let mut m = AccuracyMatrix::new(vec!["a".into(), "b".into()]);
        m.record_stage(vec![0.5, 0.0]).unwrap();
        assert!(average_accuracy(&m).is_err());
        assert!(m.record_stage(vec![0.5]).is_err());
        assert!(m.record_stage(vec![0.5, 1.5]).is_err());
        m.record_stage(vec![0.4, 0.9]).unwrap();
        assert!(m.record_stage(vec![0.4, 0.9]).is_err());
        assert!(average_accuracy(&m).is_ok());

        let bad = AccuracyMatrix { domain_order: vec!["a".into()], rows: vec![vec![0.5, 0.5], vec![0.5, 0.5]] };
        assert!(finalize_run("r", 0, Strategy::Random, bad).is_err());
    }

    #[test]
    fn csv_layout() {
        let csv = hand().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "stage,d0,d1,d2");
        assert_eq!(lines[3], "2,0.5,0.6,0.9");
    }
}
