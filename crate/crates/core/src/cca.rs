//! Canonical correlation analysis and projection-weighted CCA (PWCCA).
//!
//! Both views are centered, whitened with the symmetric inverse square root of
//! their (optionally ridged) covariance, and the singular values of the
//! whitened cross-covariance are the canonical correlations. PWCCA weights each
//! correlation by how much its canonical variate accounts for the
//! representation view `X`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};
use crate::featurestore::{AttributeTable, SegmentSample};

/// Eigenvalues below this fraction of the largest count as zero when
/// determining the rank of a covariance matrix.
const RANK_TOL: f64 = 1e-10;

/// Default ridge (relative to the mean variance of a view).
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Two views of the same `n` instances: row `i` of `x` and `y` belong together.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl ViewPair {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(ProbeError::Validation(format!(
                "views have {} and {} rows",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return Err(ProbeError::Validation(
                "views must have at least one column".into(),
            ));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(ProbeError::Data("views contain non-finite values".into()));
        }
        Ok(ViewPair { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Selects the given rows of both views.
    pub fn subset(&self, rows: &[usize]) -> ViewPair {
        ViewPair {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
        }
    }
}

/// Stacks row vectors into an `n x d` matrix.
pub fn matrix_from_rows<T: Copy + Into<f64>>(rows: &[&[T]]) -> Result<DMatrix<f64>> {
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d) {
        return Err(ProbeError::Validation("rows have unequal lengths".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j].into()))
}

fn center(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.nrows() as f64;
    let mean = DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n));
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    (c, mean)
}

/// Covariance of one view with its eigendecomposition, reused across ridges.
#[derive(Debug, Clone)]
struct ViewCovariance {
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
    rank: usize,
    mean_variance: f64,
}

impl ViewCovariance {
    fn new(cov: DMatrix<f64>) -> Self {
        let d = cov.nrows();
        let mean_variance = cov.trace() / d as f64;
        let eig = SymmetricEigen::new(cov);
        let eigvals = eig.eigenvalues.map(|v| v.max(0.0));
        let max = eigvals.max();
        let rank = eigvals.iter().filter(|&&v| v > max * RANK_TOL).count();
        ViewCovariance {
            eigvecs: eig.eigenvectors,
            eigvals,
            rank,
            mean_variance,
        }
    }

    fn dim(&self) -> usize {
        self.eigvals.len()
    }

    /// `(Σ + ridge * tr(Σ)/d * I)^(-1/2)`.
    fn inv_sqrt(&self, ridge: f64, view: &str) -> Result<DMatrix<f64>> {
        if ridge == 0.0 && self.rank < self.dim() {
            return Err(ProbeError::Conditioning(format!(
                "{view} covariance has rank {} < {}; use a ridge > 0",
                self.rank,
                self.dim()
            )));
        }
        let shift = ridge * self.mean_variance;
        let mut scaled = self.eigvecs.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            let v = self.eigvals[j] + shift;
            if v <= 0.0 {
                return Err(ProbeError::Conditioning(format!(
                    "{view} covariance is zero; views must vary"
                )));
            }
            col /= v.sqrt();
        }
        Ok(&scaled * self.eigvecs.transpose())
    }
}

/// Sufficient statistics of a view pair; fitting at several ridges reuses the
/// eigendecompositions.
#[derive(Debug, Clone)]
pub struct CcaModel {
    x_mean: DVector<f64>,
    y_mean: DVector<f64>,
    cov_x: ViewCovariance,
    cov_y: ViewCovariance,
    cross: DMatrix<f64>,
}

impl CcaModel {
    pub fn new(view: &ViewPair) -> Result<Self> {
        let (n, d1, d2) = (view.n(), view.x.ncols(), view.y.ncols());
        if n <= d1.max(d2) {
            return Err(ProbeError::InsufficientData(format!(
                "{n} instances for views of dimension {d1} and {d2}; need more than {}",
                d1.max(d2)
            )));
        }
        let (xc, x_mean) = center(&view.x);
        let (yc, y_mean) = center(&view.y);
        let scale = 1.0 / (n as f64 - 1.0);
        let (cxx, (cyy, cxy)) = rayon::join(
            || xc.tr_mul(&xc) * scale,
            || rayon::join(|| yc.tr_mul(&yc) * scale, || xc.tr_mul(&yc) * scale),
        );
        let (cov_x, cov_y) = rayon::join(|| ViewCovariance::new(cxx), || ViewCovariance::new(cyy));
        Ok(CcaModel {
            x_mean,
            y_mean,
            cov_x,
            cov_y,
            cross: cxy,
        })
    }

    pub fn fit(&self, ridge: f64) -> Result<CcaFit> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(ProbeError::Config(format!(
                "ridge {ridge} must be finite and >= 0"
            )));
        }
        let wx = self.cov_x.inv_sqrt(ridge, "X")?;
        let wy = self.cov_y.inv_sqrt(ridge, "Y")?;
        let whitened = &wx * &self.cross * &wy;
        let svd = whitened.svd(true, true);
        let u = svd.u.expect("left singular vectors requested");
        let v = svd
            .v_t
            .expect("right singular vectors requested")
            .transpose();

        let k = self.cov_x.rank.min(self.cov_y.rank);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        order.truncate(k);

        let rho: Vec<f64> = order
            .iter()
            .map(|&i| svd.singular_values[i].clamp(0.0, 1.0))
            .collect();
        let mut x_dirs = &wx * u.select_columns(&order);
        let mut y_dirs = &wy * v.select_columns(&order);
        for i in 0..k {
            if leading_sign(x_dirs.column(i).as_slice()) < 0.0 {
                x_dirs.column_mut(i).neg_mut();
                y_dirs.column_mut(i).neg_mut();
            }
        }
        Ok(CcaFit {
            rho,
            x_dirs,
            y_dirs,
            x_mean: self.x_mean.clone(),
            y_mean: self.y_mean.clone(),
            ridge,
        })
    }
}

/// Sign of the first clearly nonzero component.
fn leading_sign(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    v.iter()
        .find(|x| x.abs() > 1e-12 * scale)
        .map_or(1.0, |x| x.signum())
}

/// Canonical correlations and directions.
#[derive(Debug, Clone)]
pub struct CcaFit {
    /// Canonical correlations, descending, in `[0, 1]`.
    pub rho: Vec<f64>,
    /// `d1 x k` directions for `X`, one per column.
    pub x_dirs: DMatrix<f64>,
    /// `d2 x k` directions for `Y`.
    pub y_dirs: DMatrix<f64>,
    pub x_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
    pub ridge: f64,
}

impl CcaFit {
    pub fn k(&self) -> usize {
        self.rho.len()
    }

    /// Canonical variates `(X - mean) V` of data in the `X` view.
    pub fn x_variates(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (xc, _) = center(x);
        xc * &self.x_dirs
    }

    pub fn y_variates(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let (yc, _) = center(y);
        yc * &self.y_dirs
    }

    /// Re-estimates the correlations of the fitted directions on other data.
    ///
    /// Negative held-out correlations are clipped to zero.
    pub fn transfer(&self, view: &ViewPair) -> Result<CcaFit> {
        if view.x.ncols() != self.x_dirs.nrows() || view.y.ncols() != self.y_dirs.nrows() {
            return Err(ProbeError::Validation(
                "held-out views do not match the fit".into(),
            ));
        }
        if view.n() < 2 {
            return Err(ProbeError::InsufficientData(
                "held-out set needs two instances".into(),
            ));
        }
        let hx = self.x_variates(&view.x);
        let hy = self.y_variates(&view.y);
        let rho = (0..self.k())
            .map(|i| {
                let (a, b) = (hx.column(i), hy.column(i));
                let denom = (a.norm_squared() * b.norm_squared()).sqrt();
                if denom > 0.0 {
                    (a.dot(&b) / denom).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(CcaFit {
            rho,
            ..self.clone()
        })
    }

    pub fn with_pwcca(self, x: &DMatrix<f64>) -> Result<CcaResult> {
        let alpha = pwcca_weights(&self, x)?;
        let pwcca = weighted_score(&self.rho, &alpha);
        Ok(CcaResult {
            fit: self,
            alpha,
            pwcca,
        })
    }
}

/// A fit together with its projection weights and PWCCA score.
#[derive(Debug, Clone)]
pub struct CcaResult {
    pub fit: CcaFit,
    /// Projection weights, non-negative, summing to 1.
    pub alpha: Vec<f64>,
    pub pwcca: f64,
}

/// Closed-form CCA of a view pair. `ridge` is relative to each view's mean variance.
pub fn fit_cca(view: &ViewPair, ridge: f64) -> Result<CcaFit> {
    CcaModel::new(view)?.fit(ridge)
}

/// Projection weights of the canonical variates with respect to `x`.
///
/// The raw weight of variate `h_i = X v_i` is `Σ_j |<h_i, x_j>|` over the
/// (centered) columns `x_j` of `x`; weights are normalized to sum to 1.
pub fn pwcca_weights(fit: &CcaFit, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != fit.x_dirs.nrows() {
        return Err(ProbeError::Validation("X does not match the fit".into()));
    }
    let (xc, _) = center(x);
    let h = &xc * &fit.x_dirs;
    let g = h.tr_mul(&xc);
    let raw: Vec<f64> = g
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum())
        .collect();
    normalize_weights(&raw)
}

/// Normalizes raw projection weights to sum to one.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(ProbeError::Degenerate(
            "canonical variates carry no weight on X".into(),
        ));
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

/// `Σ α_i ρ_i`, clipped to `[0, 1]`.
pub fn weighted_score(rho: &[f64], alpha: &[f64]) -> f64 {
    rho.iter()
        .zip(alpha)
        .map(|(r, a)| r * a)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// PWCCA of a fit, weighting with respect to the representation view `x`.
pub fn pwcca_score(fit: &CcaFit, x: &DMatrix<f64>) -> Result<f64> {
    Ok(weighted_score(&fit.rho, &pwcca_weights(fit, x)?))
}

/// Keeps the leading principal directions of `x` that explain `energy` of its variance.
///
/// Returns a `d x r` basis to multiply centered data by.
pub fn svd_reduction_basis(x: &DMatrix<f64>, energy: f64) -> Result<DMatrix<f64>> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(ProbeError::Config(format!(
            "SVD energy {energy} outside (0, 1]"
        )));
    }
    let (xc, _) = center(x);
    let eig = SymmetricEigen::new(xc.tr_mul(&xc));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut acc = 0.0;
    let mut keep = Vec::new();
    for i in order {
        keep.push(i);
        acc += eig.eigenvalues[i].max(0.0);
        if acc >= energy * total {
            break;
        }
    }
    Ok(eig.eigenvectors.select_columns(&keep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaProtocolConfig {
    pub n_splits: usize,
    /// Candidate ridges; the validation split picks one per split.
    pub ridge_grid: Vec<f64>,
    pub seed: u64,
    /// Optional SVD pre-reduction of the representation view (fraction of variance kept).
    pub svd_energy: Option<f64>,
}

impl Default for CcaProtocolConfig {
    fn default() -> Self {
        CcaProtocolConfig {
            n_splits: 5,
            ridge_grid: vec![1e-8, 1e-6, 1e-4],
            seed: 0,
            svd_energy: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Summary { mean, min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub split: usize,
    pub ridge: f64,
    pub train_pwcca: f64,
    pub val_pwcca: f64,
    pub test_pwcca: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaProtocolReport {
    pub splits: Vec<SplitOutcome>,
    pub test: Summary,
    pub val: Summary,
    pub n_instances: usize,
    pub n_words: usize,
    /// Words without a row in the attribute table.
    pub dropped_words: Vec<String>,
    pub dropped_instances: usize,
}

/// Assigns each instance to one of `2 * n_splits` folds, stratified by `strata`.
///
/// Strata with fewer than `n_splits` members are pooled and assigned without
/// stratification.
pub fn assign_folds(strata: &[usize], n_splits: usize, seed: u64) -> Vec<usize> {
    let n_folds = 2 * n_splits;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut folds = vec![0; strata.len()];
    let mut pooled = Vec::new();
    for (_, mut members) in groups {
        if members.len() < n_splits {
            pooled.extend(members);
            continue;
        }
        members.shuffle(&mut rng);
        let offset = rng.random_range(0..n_folds);
        for (p, i) in members.into_iter().enumerate() {
            folds[i] = (offset + p) % n_folds;
        }
    }
    if !pooled.is_empty() {
        log::warn!(
            "{} instances belong to words with fewer than {n_splits} instances; split without stratification",
            pooled.len()
        );
        pooled.shuffle(&mut rng);
        for (p, i) in pooled.into_iter().enumerate() {
            folds[i] = p % n_folds;
        }
    }
    folds
}

fn evaluate_split(
    view: &ViewPair,
    folds: &[usize],
    split: usize,
    config: &CcaProtocolConfig,
) -> Result<SplitOutcome> {
    let (test_fold, val_fold) = (2 * split, 2 * split + 1);
    let pick = |pred: &dyn Fn(usize) -> bool| -> Vec<usize> {
        (0..folds.len()).filter(|&i| pred(folds[i])).collect()
    };
    let train_idx = pick(&|f| f != test_fold && f != val_fold);
    let val_idx = pick(&|f| f == val_fold);
    let test_idx = pick(&|f| f == test_fold);
    if val_idx.len() < 2 || test_idx.len() < 2 {
        return Err(ProbeError::InsufficientData(format!(
            "split {split} has {} validation and {} test instances",
            val_idx.len(),
            test_idx.len()
        )));
    }
    let mut train = view.subset(&train_idx);
    let mut val = view.subset(&val_idx);
    let mut test = view.subset(&test_idx);
    if let Some(energy) = config.svd_energy {
        let basis = svd_reduction_basis(&train.x, energy)?;
        for part in [&mut train, &mut val, &mut test] {
            part.x = &part.x * &basis;
        }
    }

    let model = CcaModel::new(&train)?;
    let mut best: Option<(CcaFit, f64)> = None;
    for &ridge in &config.ridge_grid {
        let fit = model.fit(ridge)?;
        let score = pwcca_score(&fit.transfer(&val)?, &val.x)?;
        if best.as_ref().is_none_or(|(_, s)| score > *s) {
            best = Some((fit, score));
        }
    }
    let (fit, val_pwcca) = best.ok_or_else(|| ProbeError::Config("empty ridge grid".into()))?;
    let train_pwcca = pwcca_score(&fit, &train.x)?;
    let test_pwcca = pwcca_score(&fit.transfer(&test)?, &test.x)?;
    Ok(SplitOutcome {
        split,
        ridge: fit.ridge,
        train_pwcca,
        val_pwcca,
        test_pwcca,
    })
}

/// Runs the split protocol on prepared views. `strata` labels each row (word id).
pub fn run_protocol(
    view: &ViewPair,
    strata: &[usize],
    config: &CcaProtocolConfig,
) -> Result<(Vec<SplitOutcome>, Summary, Summary)> {
    if config.n_splits == 0 {
        return Err(ProbeError::Config("n_splits must be at least 1".into()));
    }
    if strata.len() != view.n() {
        return Err(ProbeError::Validation(
            "one stratum label per row required".into(),
        ));
    }
    let folds = assign_folds(strata, config.n_splits, config.seed);
    let splits = (0..config.n_splits)
        .into_par_iter()
        .map(|s| evaluate_split(view, &folds, s, config))
        .collect::<Result<Vec<_>>>()?;
    let test: Vec<f64> = splits.iter().map(|s| s.test_pwcca).collect();
    let val: Vec<f64> = splits.iter().map(|s| s.val_pwcca).collect();
    Ok((splits, Summary::of(&test), Summary::of(&val)))
}

/// Joins pooled samples with an attribute table and builds the two views.
///
/// Returns the views, per-row word indices, and the words with no attribute row.
pub fn join_views(
    samples: &[SegmentSample],
    table: &AttributeTable,
) -> Result<(ViewPair, Vec<usize>, Vec<String>, usize)> {
    let mut xs: Vec<&[f32]> = Vec::new();
    let mut ys: Vec<&[f64]> = Vec::new();
    let mut words: BTreeMap<&str, usize> = BTreeMap::new();
    let mut strata = Vec::new();
    let mut dropped: BTreeMap<&str, ()> = BTreeMap::new();
    let mut dropped_instances = 0;
    for s in samples {
        if s.pooled.is_empty() {
            return Err(ProbeError::Precondition(format!(
                "sample '{}' in {} has not been pooled",
                s.span.word, s.span.utterance_id
            )));
        }
        match table.get(&s.span.word) {
            Some(row) => {
                xs.push(&s.pooled);
                ys.push(row);
                let next = words.len();
                strata.push(*words.entry(s.span.word.as_str()).or_insert(next));
            }
            None => {
                dropped.insert(&s.span.word, ());
                dropped_instances += 1;
            }
        }
    }
    if xs.is_empty() {
        return Err(ProbeError::InsufficientData(
            "no sample has an attribute row".into(),
        ));
    }
    let view = ViewPair::new(matrix_from_rows(&xs)?, matrix_from_rows(&ys)?)?;
    let dropped = dropped.into_keys().map(str::to_string).collect();
    Ok((view, strata, dropped, dropped_instances))
}

/// Fits CCA between pooled samples and an attribute table under the split
/// protocol and summarizes held-out PWCCA.
pub fn cca_protocol(
    samples: &[SegmentSample],
    table: &AttributeTable,
    config: &CcaProtocolConfig,
) -> Result<CcaProtocolReport> {
    let (view, strata, dropped_words, dropped_instances) = join_views(samples, table)?;
    if !dropped_words.is_empty() {
        log::info!(
            "{} words ({dropped_instances} instances) missing from the {} table",
            dropped_words.len(),
            table.kind
        );
    }
    let n_words = strata.iter().copied().max().map_or(0, |m| m + 1);
    let (splits, test, val) = run_protocol(&view, &strata, config)?;
    Ok(CcaProtocolReport {
        splits,
        test,
        val,
        n_instances: view.n(),
        n_words,
        dropped_words,
        dropped_instances,
    })
}
