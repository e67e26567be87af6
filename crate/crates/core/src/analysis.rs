//! Measurements over training results: per-fold differential errors,
//! (alpha, beta)-generalization curves and plateau-entry convergence epochs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::TrainHistory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_error: f64,
    pub full_error: f64,
    pub diff: f64,
}

impl FoldResult {
    pub fn new(fold: usize, train_error: f64, full_error: f64) -> Self {
        FoldResult {
            fold,
            train_error,
            full_error,
            diff: (train_error - full_error).abs(),
        }
    }
}

pub fn diffs(results: &[FoldResult]) -> Vec<f64> {
    results.iter().map(|r| r.diff).collect()
}

fn check_diffs(diffs: &[f64]) -> Result<()> {
    if diffs.is_empty() {
        return Err(Error::domain("no differential errors given"));
    }
    if let Some(d) = diffs.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(Error::domain(format!(
            "differential error {d} outside [0, 1]"
        )));
    }
    Ok(())
}

fn exceedances(diffs: &[f64], alpha: f64) -> usize {
    diffs.iter().filter(|&&d| d > alpha).count()
}

/// Smallest beta with `P(diff > alpha) <= beta` under the empirical distribution.
pub fn beta_for_alpha(diffs: &[f64], alpha: f64) -> Result<f64> {
    check_diffs(diffs)?;
    Ok(exceedances(diffs, alpha) as f64 / diffs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub beta: f64,
    /// Number of folds whose diff exceeds `alpha`.
    pub exceeding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationCurve {
    folds: usize,
    points: Vec<CurvePoint>,
}

impl GeneralizationCurve {
    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.alpha).collect()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.beta).collect()
    }

    /// First grid alpha where beta reaches 0.
    pub fn alpha_max(&self) -> f64 {
        self.points
            .iter()
            .find(|p| p.exceeding == 0)
            .map(|p| p.alpha)
            .unwrap_or(1.0)
    }
}

/// Alpha grid `0, step, 2 step, ...` up to and including 1.
pub fn alpha_grid(grid_step: f64) -> Result<Vec<f64>> {
    if !(grid_step > 0.0 && grid_step <= 0.1) {
        return Err(Error::domain(format!(
            "grid step {grid_step} outside (0, 0.1]"
        )));
    }
    let mut grid = Vec::new();
    let mut i = 0u64;
    loop {
        let a = i as f64 * grid_step;
        if a >= 1.0 - grid_step * 1e-6 {
            break;
        }
        grid.push(a);
        i += 1;
    }
    grid.push(1.0);
    Ok(grid)
}

pub fn generalization_curve(diffs: &[f64], grid_step: f64) -> Result<GeneralizationCurve> {
    check_diffs(diffs)?;
    let k = diffs.len();
    let points = alpha_grid(grid_step)?
        .into_iter()
        .map(|alpha| {
            let exceeding = exceedances(diffs, alpha);
            CurvePoint {
                alpha,
                beta: exceeding as f64 / k as f64,
                exceeding,
            }
        })
        .collect();
    Ok(GeneralizationCurve { folds: k, points })
}

pub fn max_diff(diffs: &[f64]) -> f64 {
    diffs.iter().copied().fold(0.0, f64::max)
}

/// `1 - max(dpsgd) / max(sgd)`.
pub fn gap_reduction(sgd_diffs: &[f64], dpsgd_diffs: &[f64]) -> Result<f64> {
    check_diffs(sgd_diffs)?;
    check_diffs(dpsgd_diffs)?;
    let sgd = max_diff(sgd_diffs);
    if sgd == 0.0 {
        return Err(Error::domain(
            "largest SGD differential error is 0; ratio undefined",
        ));
    }
    Ok(1.0 - max_diff(dpsgd_diffs) / sgd)
}

pub const CURVE_HEADER: &str = "alpha,beta_sgd,beta_dpsgd";

pub fn write_curve_csv(
    sgd: &GeneralizationCurve,
    dpsgd: &GeneralizationCurve,
    path: &Path,
) -> Result<()> {
    if sgd.alphas() != dpsgd.alphas() {
        return Err(Error::domain("curves sampled on different alpha grids"));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{CURVE_HEADER}")?;
    for (a, b) in sgd.points.iter().zip(&dpsgd.points) {
        writeln!(out, "{:.6},{:.6},{:.6}", a.alpha, a.beta, b.beta)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    Train,
    Test,
}

/// Index of the first value after which the series stays within `tol` of
/// the minimum of the remaining values. A plateau made of the last value
/// alone does not count.
pub fn plateau_entry(values: &[f64], tol: f64) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    // suffix extremes, right to left
    let n = values.len();
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in (0..n).rev() {
        mn = mn.min(values[i]);
        mx = mx.max(values[i]);
        lo[i] = mn;
        hi[i] = mx;
    }
    let first = (0..n).find(|&i| hi[i] - lo[i] <= tol)?;
    if first + 1 == n && n > 1 {
        None
    } else {
        Some(first)
    }
}

/// Epoch at which the chosen error series enters its plateau, or `None`
/// when it does not settle within the recorded range.
pub fn convergence_epoch(
    history: &TrainHistory,
    series: Series,
    tol: f64,
) -> Result<Option<usize>> {
    if history.is_empty() {
        return Err(Error::domain("empty training history"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance {tol} must be positive")));
    }
    let values = match series {
        Series::Train => history.train_errors(),
        Series::Test => history.test_errors(),
    };
    let epochs = history.epochs();
    Ok(plateau_entry(&values, tol).map(|i| epochs[i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub epoch_train_converged: Option<usize>,
    pub epoch_test_converged: Option<usize>,
    pub final_train_error: f64,
    pub final_test_error: f64,
    /// `epoch_train / epoch_test` when both converged and the test epoch is positive.
    pub gap_ratio: Option<f64>,
}

pub fn convergence_report(history: &TrainHistory, tol: f64) -> Result<ConvergenceReport> {
    let train = convergence_epoch(history, Series::Train, tol)?;
    let test = convergence_epoch(history, Series::Test, tol)?;
    let last = history.snapshots().last().expect("non-empty history");
    let gap_ratio = match (train, test) {
        (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
        _ => None,
    };
    Ok(ConvergenceReport {
        epoch_train_converged: train,
        epoch_test_converged: test,
        final_train_error: last.train_error,
        final_test_error: last.test_error,
        gap_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::Snapshot;
    use proptest::prelude::*;

    // Differential errors of the ten folds of the sigma = 2 table.
    const DP_DIFFS: [f64; 10] = [
        0.1069, 0.0607, 0.1028, 0.091, 0.1262, 0.1253, 0.1251, 0.1114, 0.0811, 0.1472,
    ];
    // (train, test) of the SGD columns of the same table.
    const SGD_ROWS: [(f64, f64); 10] = [
        (0.0, 0.3631),
        (0.0, 0.3873),
        (0.0, 0.3751),
        (0.0, 0.3673),
        (0.0, 0.3698),
        (0.0, 0.3754),
        (0.0, 0.3737),
        (0.0, 0.3584),
        (0.0, 0.3769),
        (0.0, 0.3694),
    ];

    fn sgd_diffs() -> Vec<f64> {
        SGD_ROWS
            .iter()
            .map(|&(a, b)| FoldResult::new(0, a, b).diff)
            .collect()
    }

    fn history(values: &[(usize, f64, f64)]) -> TrainHistory {
        let mut h = TrainHistory::new();
        for &(epoch, train_error, test_error) in values {
            h.push(Snapshot {
                epoch,
                train_error,
                test_error,
                lots: epoch as u64,
            })
            .unwrap();
        }
        h
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta_for_alpha(&DP_DIFFS, 1.0).unwrap(), 0.0);
        assert_eq!(beta_for_alpha(&DP_DIFFS, 0.0).unwrap(), 1.0);
        assert_eq!(beta_for_alpha(&DP_DIFFS, 0.12).unwrap(), 0.4);
        assert_eq!(beta_for_alpha(&DP_DIFFS, 0.1472).unwrap(), 0.0);
        assert!(beta_for_alpha(&[], 0.1).is_err());
        assert!(beta_for_alpha(&[1.5], 0.1).is_err());
    }

    #[test]
    fn point_mass_is_a_step() {
        let c = generalization_curve(&[0.25; 4], 0.01).unwrap();
        for p in c.points() {
            let expect = if p.alpha < 0.25 { 1.0 } else { 0.0 };
            assert_eq!(p.beta, expect, "alpha {}", p.alpha);
        }
    }

    #[test]
    fn alpha_max_examples() {
        let c = generalization_curve(&DP_DIFFS, 0.001).unwrap();
        assert!((c.alpha_max() - 0.148).abs() < 1e-9);
        assert_eq!(max_diff(&DP_DIFFS), 0.1472);

        let sgd = sgd_diffs();
        assert_eq!(max_diff(&sgd), 0.3873);
        let c = generalization_curve(&sgd, 0.001).unwrap();
        assert!((c.alpha_max() - 0.388).abs() < 1e-9);
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(gap_reduction(&DP_DIFFS, &DP_DIFFS).unwrap(), 0.0);
        assert_eq!(gap_reduction(&DP_DIFFS, &[0.0; 3]).unwrap(), 1.0);
        let r: f64 = 1.0 - 0.1472 / 0.3873;
        assert!((r - 0.62).abs() < 0.005);
        assert_eq!(gap_reduction(&sgd_diffs(), &DP_DIFFS).unwrap(), r);
        assert!(gap_reduction(&[0.0, 0.0], &DP_DIFFS).is_err());
        assert!(gap_reduction(&[], &DP_DIFFS).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = alpha_grid(0.001).unwrap();
        assert_eq!(g.len(), 1001);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        let g = alpha_grid(0.03).unwrap();
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(alpha_grid(0.0).is_err());
        assert!(alpha_grid(0.2).is_err());
    }

    #[test]
    fn single_fold_curve() {
        let c = generalization_curve(&[0.3], 0.1).unwrap();
        let betas = c.betas();
        assert_eq!(betas[..3], [1.0, 1.0, 1.0]);
        assert!(betas[3..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn plateau_examples() {
        let h = history(&[(10, 0.3, 0.3), (20, 0.3, 0.3), (30, 0.3, 0.3)]);
        assert_eq!(
            convergence_epoch(&h, Series::Train, 0.01).unwrap(),
            Some(10)
        );

        let h = history(&[(1, 0.5, 0.5), (2, 0.4, 0.4), (3, 0.3, 0.3), (4, 0.2, 0.2)]);
        assert_eq!(convergence_epoch(&h, Series::Train, 0.01).unwrap(), None);

        let h = history(&[
            (5, 0.5, 0.4),
            (10, 0.2, 0.405),
            (15, 0.1, 0.41),
            (20, 0.105, 0.40),
        ]);
        assert_eq!(
            convergence_epoch(&h, Series::Train, 0.01).unwrap(),
            Some(15)
        );
        assert_eq!(convergence_epoch(&h, Series::Test, 0.01).unwrap(), Some(5));

        let r = convergence_report(&h, 0.01).unwrap();
        assert_eq!(r.gap_ratio, Some(3.0));
        assert_eq!(r.final_train_error, 0.105);

        assert!(convergence_epoch(&TrainHistory::new(), Series::Train, 0.01).is_err());
        assert!(convergence_epoch(&h, Series::Train, 0.0).is_err());
        assert_eq!(plateau_entry(&[0.4], 0.01), Some(0));
    }

    #[test]
    fn curve_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let a = generalization_curve(&[0.2, 0.4], 0.1).unwrap();
        let b = generalization_curve(&[0.1, 0.1], 0.1).unwrap();
        write_curve_csv(&a, &b, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CURVE_HEADER);
        assert_eq!(lines[1], "0.000000,1.000000,1.000000");
        assert_eq!(lines[3], "0.200000,0.500000,0.000000");
        assert_eq!(lines.len(), 12);
        let c = generalization_curve(&[0.1], 0.05).unwrap();
        assert!(write_curve_csv(&a, &c, &path).is_err());
    }

    fn diff_list() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=1.0, 1..40)
    }

    proptest! {
        #[test]
        fn beta_nonincreasing_and_minimal(d in diff_list(), step in 0.001f64..0.1) {
            let c = generalization_curve(&d, step).unwrap();
            let k = d.len();
            prop_assert_eq!(c.points().last().unwrap().beta, 0.0);
            for w in c.points().windows(2) {
                prop_assert!(w[1].beta <= w[0].beta);
            }
            for p in c.points() {
                let count = d.iter().filter(|&&x| x > p.alpha).count();
                // beta satisfies the bound and one fewer fold would not
                prop_assert!(count as f64 / k as f64 <= p.beta);
                prop_assert!((p.beta * k as f64 - count as f64).abs() < 1e-9);
                if p.beta > 0.0 {
                    prop_assert!(count as f64 / k as f64 > p.beta - 1.0 / k as f64);
                }
            }
        }

        #[test]
        fn reduction_is_scale_free(a in diff_list(), b in diff_list(), c in 0.01f64..1.0) {
            prop_assume!(max_diff(&a) > 1e-6);
            let r = gap_reduction(&a, &b).unwrap();
            let sa: Vec<f64> = a.iter().map(|x| x * c).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * c).collect();
            let s = gap_reduction(&sa, &sb).unwrap();
            prop_assert!((r - s).abs() < 1e-9);
        }

        #[test]
        fn plateau_survives_appending(
            v in prop::collection::vec(0.0f64..1.0, 2..40),
            extra in prop::collection::vec(0.0f64..1.0, 0..20),
            tol in 0.01f64..0.3,
        ) {
            if let Some(e) = plateau_entry(&v, tol) {
                let rest = &v[e..];
                let lo = rest.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut w = v.clone();
                w.extend(extra.iter().map(|x| lo + x * (hi - lo)));
                prop_assert_eq!(plateau_entry(&w, tol), Some(e));
            }
        }
    }
}
