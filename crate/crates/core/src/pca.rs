//! Principal component analysis of the embedding matrix.
//!
//! Components are the right singular vectors of the column-centred data.
//! Variances use the `1 / (n - 1)` normalisation, and every component is
//! oriented so that its largest-magnitude loading is positive, which makes
//! the scores (and one-sided tests on them) reproducible run to run.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal rows, ordered by decreasing eigenvalue.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Flips `v` so its largest-magnitude coordinate (first on ties) is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn fit(x: &DMatrix<f64>) -> Result<PcaModel> {
    let (n, k) = x.shape();
    if n < 2 {
        return Err(Error::Usage(format!("PCA needs at least 2 rows, got {n}")));
    }
    if k == 0 {
        return Err(Error::Usage("PCA needs at least one column".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("PCA input contains NaN or infinite values".into()));
    }

    let mean: Vec<f64> = (0..k).map(|j| x.column(j).sum() / n as f64).collect();
    let mut centered = x.clone();
    for (j, m) in mean.iter().enumerate() {
        centered.column_mut(j).add_scalar_mut(-m);
    }

    let m = n.min(k);
    let mut warnings = Vec::new();
    let all_constant = centered.iter().all(|&v| v == 0.0);
    let (components, eigenvalues) = if all_constant {
        warnings.push("input has zero variance; components set to the coordinate axes".into());
        let comps = (0..m)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        (comps, vec![0.0; m])
    } else {
        let svd = centered.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::numeric("pca", "SVD did not return right singular vectors"))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .expect("finite singular values")
        });
        let mut comps = Vec::with_capacity(m);
        let mut eig = Vec::with_capacity(m);
        for &i in order.iter().take(m) {
            let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
            orient(&mut row);
            comps.push(row);
            let s = svd.singular_values[i];
            eig.push((s * s / (n - 1) as f64).max(0.0));
        }
        (comps, eig)
    };

    let total: f64 = eigenvalues.iter().sum();
    let explained_variance_ratio = if total > 0.0 {
        eigenvalues.iter().map(|e| e / total).collect()
    } else {
        vec![0.0; eigenvalues.len()]
    };

    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio,
        warnings,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Scores `(X - mean) * components^T`, one row per observation.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = self.mean.len();
        if x.ncols() != k {
            return Err(Error::shape(
                "pca.transform",
                format!("{} columns, model was fitted on {k}", x.ncols()),
            ));
        }
        let m = self.components.len();
        Ok(DMatrix::from_fn(x.nrows(), m, |i, c| {
            (0..k)
                .map(|j| (x[(i, j)] - self.mean[j]) * self.components[c][j])
                .sum()
        }))
    }

    /// Scores on the leading component only.
    pub fn first_component_scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.transform(x)?.column(0).iter().copied().collect())
    }

    /// Maps scores on the first `r` components back to the input space.
    pub fn inverse_transform(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.mean.len();
        let r = scores.ncols().min(self.components.len());
        DMatrix::from_fn(scores.nrows(), k, |i, j| {
            self.mean[j] + (0..r).map(|c| scores[(i, c)] * self.components[c][j]).sum::<f64>()
        })
    }
}
