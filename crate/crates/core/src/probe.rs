//! Closed-form ridge probe from embeddings to anchor families, scored by held-out R².

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tsf::{Family, FamilyLayout};

/// A named group of target columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

/// Six probe groups over an anchor layout: shape columns join statistics.
pub fn probe_groups(layout: &FamilyLayout) -> Vec<TargetGroup> {
    groups_from_families(&layout.column_family_index())
}

/// Six probe groups over columns tagged with their family index, in family
/// order; shape columns join statistics.
pub fn groups_from_families(column_family: &[usize]) -> Vec<TargetGroup> {
    let target = |f: Family| match f {
        Family::Shape => Family::Statistics,
        f => f,
    };
    Family::ALL
        .into_iter()
        .filter(|&f| target(f) == f)
        .map(|f| TargetGroup {
            name: f.name().to_string(),
            columns: (0..column_family.len())
                .filter(|&c| target(Family::ALL[column_family[c]]) == f)
                .collect(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub family: String,
    /// Mean R² over the group's usable columns; NaN when none are usable.
    pub r2_train: f64,
    pub r2_test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// Target columns left out because they are constant on train or test.
    pub excluded: Vec<usize>,
    pub lambda: f64,
}

impl ProbeReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Fitted ridge map on standardised inputs and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    pub weights: DMatrix<f64>,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_scale: Vec<f64>,
    pub lambda: f64,
}

fn matrix(t: &Tensor, what: &str) -> Result<DMatrix<f64>> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(Error::Invalid(format!("{what} must be a matrix, got {s:?}")));
    }
    if !t.all_finite() {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(DMatrix::from_row_slice(s[0], s[1], t.data()))
}

/// Column means and standard deviations; zero deviations become 1.
fn moments(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    let mut mean = Vec::with_capacity(m.ncols());
    let mut scale = Vec::with_capacity(m.ncols());
    for c in m.column_iter() {
        let mu = c.sum() / n;
        let var = c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        mean.push(mu);
        scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
    }
    (mean, scale)
}

fn standardize(m: &DMatrix<f64>, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| (m[(r, c)] - mean[c]) / scale[c])
}

impl RidgeModel {
    /// `W = (XᵀX + λI)⁻¹XᵀY`, solved by Cholesky; training moments only.
    pub fn fit(x: &Tensor, y: &Tensor, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("ridge strength must be >= 0, got {lambda}")));
        }
        let (xm, ym) = (matrix(x, "probe inputs")?, matrix(y, "probe targets")?);
        if xm.nrows() != ym.nrows() || xm.nrows() == 0 {
            return Err(Error::Invalid(format!(
                "{} input rows for {} target rows",
                xm.nrows(),
                ym.nrows()
            )));
        }
        let (x_mean, x_scale) = moments(&xm);
        let (y_mean, y_scale) = moments(&ym);
        let xs = standardize(&xm, &x_mean, &x_scale);
        let ys = standardize(&ym, &y_mean, &y_scale);
        let mut gram = xs.transpose() * &xs;
        for i in 0..gram.nrows() {
            gram[(i, i)] += lambda;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Invalid("ridge system is singular; use a positive strength".into()))?;
        let weights = chol.solve(&(xs.transpose() * ys));
        Ok(Self {
            weights,
            x_mean,
            x_scale,
            y_mean,
            y_scale,
            lambda,
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<DMatrix<f64>> {
        let xm = matrix(x, "probe inputs")?;
        if xm.ncols() != self.x_mean.len() {
            return Err(Error::Shape {
                kind: "ridge",
                lhs: vec![self.x_mean.len()],
                rhs: vec![xm.ncols()],
            });
        }
        let ys = standardize(&xm, &self.x_mean, &self.x_scale) * &self.weights;
        Ok(DMatrix::from_fn(ys.nrows(), ys.ncols(), |r, c| {
            ys[(r, c)] * self.y_scale[c] + self.y_mean[c]
        }))
    }
}

/// `1 − SS_res / SS_tot` per column; `None` where `SS_tot = 0`.
pub fn r2_columns(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> Vec<Option<f64>> {
    let n = truth.nrows() as f64;
    (0..truth.ncols())
        .map(|c| {
            let col = truth.column(c);
            let mu = col.sum() / n;
            let ss_tot: f64 = col.iter().map(|v| (v - mu) * (v - mu)).sum();
            let ss_res: f64 = col
                .iter()
                .zip(pred.column(c).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
        })
        .collect()
}

/// Fits on train, reports mean train and held-out R² per target group.
pub fn ridge_probe(
    x_train: &Tensor,
    y_train: &Tensor,
    x_test: &Tensor,
    y_test: &Tensor,
    groups: &[TargetGroup],
    lambda: f64,
) -> Result<ProbeReport> {
    let (ytr, yte) = (matrix(y_train, "train targets")?, matrix(y_test, "test targets")?);
    if yte.nrows() < 2 {
        return Err(Error::Invalid("probe needs at least 2 test rows".into()));
    }
    if ytr.ncols() != yte.ncols() {
        return Err(Error::Shape {
            kind: "ridge_probe",
            lhs: vec![ytr.ncols()],
            rhs: vec![yte.ncols()],
        });
    }
    if let Some(&c) = groups.iter().flat_map(|g| &g.columns).find(|&&c| c >= ytr.ncols()) {
        return Err(Error::Invalid(format!("target column {c} out of range")));
    }
    let model = RidgeModel::fit(x_train, y_train, lambda)?;
    let r2_tr = r2_columns(&ytr, &model.predict(x_train)?);
    let r2_te = r2_columns(&yte, &model.predict(x_test)?);
    let usable: Vec<bool> = r2_tr
        .iter()
        .zip(&r2_te)
        .map(|(a, b)| a.is_some() && b.is_some())
        .collect();
    let excluded = (0..usable.len()).filter(|&c| !usable[c]).collect();
    let mean_over = |cols: &[usize], r2: &[Option<f64>]| {
        let vals: Vec<f64> = cols.iter().filter(|&&c| usable[c]).map(|&c| r2[c].unwrap()).collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let rows = groups
        .iter()
        .map(|g| ProbeRow {
            family: g.name.clone(),
            r2_train: mean_over(&g.columns, &r2_tr),
            r2_test: mean_over(&g.columns, &r2_te),
        })
        .collect();
    Ok(ProbeReport { rows, excluded, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsf::TsfConfig;

    #[test]
    fn six_groups_fold_shape_into_statistics() {
        let layout = TsfConfig::default().layout(32).unwrap();
        let groups = probe_groups(&layout);
        assert_eq!(groups.len(), 6);
        let stats = groups.iter().find(|g| g.name == Family::Statistics.name()).unwrap();
        assert_eq!(stats.columns.len(), 7);
        assert_eq!(groups.iter().map(|g| g.columns.len()).sum::<usize>(), layout.width());
    }

    #[test]
    fn mean_prediction_scores_zero() {
        let truth = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 6.0]);
        let pred = DMatrix::from_element(4, 1, 3.0);
        assert_eq!(r2_columns(&truth, &pred), vec![Some(0.0)]);
    }

    #[test]
    fn zero_strength_collinear_is_rejected() {
        let x = Tensor::new(vec![4, 2], vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]).unwrap();
        let y = Tensor::new(vec![4, 1], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(RidgeModel::fit(&x, &y, 0.0).is_err());
        assert!(RidgeModel::fit(&x, &y, 1.0).is_ok());
    }
}
