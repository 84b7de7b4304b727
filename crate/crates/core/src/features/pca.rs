use serde::{Deserialize, Serialize};

use super::sensor::{SensorTable, UnitRecord, NUM_FEATURES, NUM_SETTINGS};
use crate::error::{HohsmmError, Result};
use crate::segmentation::Trajectory;

/// Standardize-then-project rule for the first principal component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaRule {
    /// Retained feature columns (0-based, settings first).
    pub columns: Vec<usize>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Unit-norm loading of the first component over `columns`.
    pub loading: Vec<f64>,
    pub explained_variance: f64,
}

/// Sensor columns only; operating settings are excluded.
pub fn default_columns() -> Vec<usize> {
    (NUM_SETTINGS..NUM_FEATURES).collect()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matching eigenvectors as columns of `v`
/// (`v[row][col]`).
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

fn slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = values.iter().sum::<f64>() / n;
    let (num, den) = values.iter().enumerate().fold((0.0, 0.0), |(a, b), (t, y)| {
        let dt = t as f64 - t_mean;
        (a + dt * (y - y_mean), b + dt * dt)
    });
    num / den
}

/// Fit on rows pooled over all units. Columns with zero variance are
/// dropped; the loading is oriented so the component rises over a unit's
/// life on average.
pub fn fit_pca(table: &SensorTable, candidate_columns: &[usize]) -> Result<PcaRule> {
    let rows: Vec<&Vec<f64>> = table.units.iter().flat_map(|u| u.rows.iter()).collect();
    if rows.len() < 2 {
        return Err(HohsmmError::DegeneratePca("need at least two rows".into()));
    }
    if let Some(&bad) = candidate_columns.iter().find(|&&c| c >= NUM_FEATURES) {
        return Err(HohsmmError::Schema(format!("feature column {bad} out of range")));
    }
    let n = rows.len() as f64;
    let mut columns = Vec::new();
    let mut means = Vec::new();
    let mut scales = Vec::new();
    for &col in candidate_columns {
        let mean = rows.iter().map(|r| r[col]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var.sqrt() > 1e-12 * mean.abs().max(1.0) {
            columns.push(col);
            means.push(mean);
            scales.push(var.sqrt());
        }
    }
    if columns.is_empty() {
        return Err(HohsmmError::DegeneratePca("every retained column is constant".into()));
    }
    let d = columns.len();
    let standardized: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| (0..d).map(|k| (r[columns[k]] - means[k]) / scales[k]).collect())
        .collect();
    let mut corr = vec![vec![0.0; d]; d];
    for z in &standardized {
        for i in 0..d {
            for j in i..d {
                corr[i][j] += z[i] * z[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            corr[i][j] /= n - 1.0;
            corr[j][i] = corr[i][j];
        }
    }
    let (values, vectors) = symmetric_eigen(&corr);
    let top = (0..d)
        .max_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty");
    let mut loading: Vec<f64> = (0..d).map(|i| vectors[i][top]).collect();
    let norm = loading.iter().map(|x| x * x).sum::<f64>().sqrt();
    loading.iter_mut().for_each(|x| *x /= norm);
    let trace: f64 = (0..d).map(|i| corr[i][i]).sum();
    let mut rule = PcaRule {
        columns,
        means,
        scales,
        loading,
        explained_variance: values[top] / trace,
    };
    let mean_slope = table
        .units
        .iter()
        .map(|u| slope(&rule.scores(u)))
        .sum::<f64>()
        / table.units.len() as f64;
    let flip = if mean_slope != 0.0 {
        mean_slope < 0.0
    } else {
        rule.loading.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        rule.loading.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(rule)
}

impl PcaRule {
    pub fn project(&self, row: &[f64]) -> f64 {
        self.columns
            .iter()
            .zip(&self.means)
            .zip(&self.scales)
            .zip(&self.loading)
            .map(|(((&c, m), s), w)| (row[c] - m) / s * w)
            .sum()
    }

    pub fn scores(&self, unit: &UnitRecord) -> Vec<f64> {
        unit.rows.iter().map(|r| self.project(r)).collect()
    }
}

/// One univariate health-indicator trajectory per unit.
pub fn fpc_transform(rule: &PcaRule, table: &SensorTable) -> Result<Vec<Trajectory>> {
    if let Some(bad) = table
        .units
        .iter()
        .flat_map(|u| u.rows.iter())
        .find(|r| r.len() != NUM_FEATURES)
    {
        return Err(HohsmmError::Schema(format!(
            "row has {} feature columns, expected {NUM_FEATURES}",
            bad.len()
        )));
    }
    table
        .units
        .iter()
        .map(|u| Trajectory::univariate(u.unit.to_string(), rule.scores(u)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_from_rows(rows: Vec<Vec<f64>>) -> SensorTable {
        SensorTable {
            units: vec![UnitRecord {
                unit: 1,
                cycles: (1..=rows.len() as u32).collect(),
                rows,
            }],
        }
    }

    fn features(pairs: &[(f64, f64)]) -> Vec<Vec<f64>> {
        pairs
            .iter()
            .map(|&(x, y)| {
                let mut r = vec![0.0; NUM_FEATURES];
                r[3] = x;
                r[4] = y;
                r
            })
            .collect()
    }

    #[test]
    fn perfectly_correlated_pair() {
        let t = table_from_rows(features(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]));
        let rule = fit_pca(&t, &default_columns()).unwrap();
        assert_eq!(rule.columns, vec![3, 4]);
        let h = 1.0 / 2f64.sqrt();
        assert!((rule.loading[0] - h).abs() < 1e-12 && (rule.loading[1] - h).abs() < 1e-12);
        assert!((rule.explained_variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orientation_follows_degradation() {
        let t = table_from_rows(features(&[(3.0, -3.0), (2.0, -2.1), (1.0, -0.9), (0.0, 0.0)]));
        let rule = fit_pca(&t, &default_columns()).unwrap();
        let s = rule.scores(&t.units[0]);
        assert!(s[3] > s[0]);
    }

    #[test]
    fn mean_row_maps_to_zero_and_constant_data_fails() {
        let t = table_from_rows(features(&[(0.0, 1.0), (1.0, 0.5), (2.0, 3.0)]));
        let rule = fit_pca(&t, &default_columns()).unwrap();
        let mut mean_row = vec![0.0; NUM_FEATURES];
        mean_row[3] = 1.0;
        mean_row[4] = 1.5;
        assert!(rule.project(&mean_row).abs() < 1e-12);
        let flat = table_from_rows(features(&[(1.0, 1.0), (1.0, 1.0)]));
        assert!(matches!(fit_pca(&flat, &default_columns()), Err(HohsmmError::DegeneratePca(_))));
    }

    #[test]
    fn jacobi_diagonalizes() {
        let m = vec![vec![4.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 1.0]];
        let (vals, vecs) = symmetric_eigen(&m);
        for k in 0..3 {
            for i in 0..3 {
                let mv: f64 = (0..3).map(|j| m[i][j] * vecs[j][k]).sum();
                assert!((mv - vals[k] * vecs[i][k]).abs() < 1e-12);
            }
        }
    }
}
