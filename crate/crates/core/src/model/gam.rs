//! Additive models with penalized cubic regression splines, smoothing
//! parameters chosen by generalized cross-validation, and an optional
//! double-penalty variant that can shrink whole terms to zero.

use std::collections::BTreeSet;
use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bspline::{difference_penalty, BSplineBasis};
use super::{FeatureRow, ModelError};

pub const PENALTY_ORDER: usize = 2;
const MAX_SWEEPS: usize = 6;

fn default_k() -> usize {
    10
}

fn default_grid() -> Vec<f64> {
    log_grid(40, 1e-4, 1e6)
}

fn default_gamma() -> f64 {
    3.0
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub feature: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

impl SmoothTerm {
    pub fn new(feature: &str, k: usize) -> Self {
        SmoothTerm {
            feature: feature.to_string(),
            k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamSpec {
    pub smooths: Vec<SmoothTerm>,
    /// Parametric terms, standardized internally.
    #[serde(default)]
    pub linear: Vec<String>,
    /// Treatment-coded postal-code factor.
    #[serde(default)]
    pub plz_factor: bool,
    #[serde(default)]
    pub shrinkage: bool,
    #[serde(default = "default_grid")]
    pub lambda_grid: Vec<f64>,
    /// Inflation of the effective degrees of freedom in the GCV score.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl GamSpec {
    /// Four smooths: distance, size, year built and amenity count.
    pub fn simple() -> Self {
        GamSpec {
            smooths: ["dist_center_m", "size_sqm", "year_built", "nfeatures"]
                .iter()
                .map(|f| SmoothTerm::new(f, default_k()))
                .collect(),
            linear: Vec::new(),
            plz_factor: false,
            shrinkage: false,
            lambda_grid: default_grid(),
            gamma: default_gamma(),
        }
    }

    /// The four smooths plus per-amenity indicators and the postal-code
    /// factor, all penalized so irrelevant terms can vanish.
    pub fn shrinkage_extended(n_amenities: usize) -> Self {
        GamSpec {
            linear: (0..n_amenities).map(|i| format!("amenity:{i}")).collect(),
            plz_factor: true,
            shrinkage: true,
            ..GamSpec::simple()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.smooths.is_empty() && self.linear.is_empty() && !self.plz_factor {
            return Err(ModelError::Validation("model has no terms".into()));
        }
        for s in &self.smooths {
            if s.k < 4 {
                return Err(ModelError::Validation(format!("s({}): basis size {} < 4", s.feature, s.k)));
            }
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(ModelError::Validation("lambda grid must be non-empty and positive".into()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(ModelError::Validation(format!("gamma {} must be positive", self.gamma)));
        }
        let mut seen = BTreeSet::new();
        for f in self.smooths.iter().map(|s| &s.feature).chain(&self.linear) {
            if !seen.insert(f) {
                return Err(ModelError::Validation(format!("feature {f:?} used twice")));
            }
        }
        Ok(())
    }
}

/// A term with its fitted coefficients, in a form that predicts without the
/// training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedTerm {
    /// Coefficients in the unconstrained B-spline basis; inputs are clamped
    /// to the training range.
    Smooth {
        feature: String,
        basis: BSplineBasis,
        coef: Vec<f64>,
    },
    Linear {
        feature: String,
        mean: f64,
        sd: f64,
        coef: f64,
    },
    /// Unseen and missing levels fall back to the baseline.
    Factor {
        baseline: String,
        levels: Vec<String>,
        coef: Vec<f64>,
    },
}

impl FittedTerm {
    pub fn label(&self) -> String {
        match self {
            FittedTerm::Smooth { feature, .. } => format!("s({feature})"),
            FittedTerm::Linear { feature, .. } => feature.clone(),
            FittedTerm::Factor { .. } => "plz".to_string(),
        }
    }

    fn contribution(&self, row: &FeatureRow) -> Result<f64, ModelError> {
        Ok(match self {
            FittedTerm::Smooth { feature, basis, coef } => {
                let x = feature_value(row, feature)?;
                let (first, vals) = basis.eval_nonzero(x);
                vals.iter().zip(&coef[first..]).map(|(v, c)| v * c).sum()
            }
            FittedTerm::Linear { feature, mean, sd, coef } => coef * (feature_value(row, feature)? - mean) / sd,
            FittedTerm::Factor { levels, coef, .. } => row
                .plz
                .as_ref()
                .and_then(|p| levels.iter().position(|l| l == p))
                .map_or(0.0, |i| coef[i]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamModel {
    pub spec: GamSpec,
    pub intercept: f64,
    pub terms: Vec<FittedTerm>,
    /// Selected smoothing parameter per penalty, labelled.
    pub lambdas: Vec<(String, f64)>,
    /// Effective degrees of freedom per term, labelled.
    pub edf: Vec<(String, f64)>,
    /// Including the intercept.
    pub edf_total: f64,
    pub gcv: f64,
    pub r2_adj: f64,
    pub rmse: f64,
    pub n_train: usize,
}

impl GamModel {
    pub fn predict(&self, row: &FeatureRow) -> Result<f64, ModelError> {
        let mut y = self.intercept;
        for t in &self.terms {
            y += t.contribution(row)?;
        }
        Ok(y)
    }

    pub fn edf_of(&self, label: &str) -> Option<f64> {
        self.edf.iter().find(|(l, _)| l == label).map(|(_, e)| *e)
    }

    /// Fitted smooth coefficients in the unconstrained basis.
    pub fn smooth_coefficients(&self, feature: &str) -> Option<&[f64]> {
        self.terms.iter().find_map(|t| match t {
            FittedTerm::Smooth { feature: f, coef, .. } if f == feature => Some(coef.as_slice()),
            _ => None,
        })
    }
}

fn feature_value(row: &FeatureRow, name: &str) -> Result<f64, ModelError> {
    match row.feature(name) {
        Some(v) if v.is_finite() => Ok(v),
        Some(v) => Err(ModelError::Validation(format!("row {}: {name} = {v}", row.id))),
        None => Err(ModelError::Validation(format!("row {}: feature {name:?} missing", row.id))),
    }
}

#[derive(Debug, Clone)]
enum TermKind {
    Smooth { basis: BSplineBasis, z: DMatrix<f64> },
    Linear { mean: f64, sd: f64 },
    Factor { baseline: String, levels: Vec<String> },
}

#[derive(Debug, Clone)]
struct Term {
    label: String,
    feature: String,
    kind: TermKind,
    cols: Range<usize>,
}

/// One quadratic penalty on a block of columns, scaled so that a unit
/// smoothing parameter is commensurate with the data.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub label: String,
    pub cols: Range<usize>,
    pub matrix: DMatrix<f64>,
    pub scale: f64,
}

/// Penalized least-squares solution for fixed smoothing parameters.
#[derive(Debug, Clone)]
pub struct GamFit {
    pub beta: DVector<f64>,
    /// Diagonal of `(XᵀX + S)⁻¹ XᵀX`.
    pub edf_diag: Vec<f64>,
    pub rss: f64,
    pub gcv: f64,
}

impl GamFit {
    pub fn edf_total(&self) -> f64 {
        self.edf_diag.iter().sum()
    }
}

/// Model matrix and penalties for a spec on a training set. Column 0 is the
/// intercept.
#[derive(Debug, Clone)]
pub struct GamDesign {
    spec: GamSpec,
    terms: Vec<Term>,
    penalties: Vec<Penalty>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
}

/// Householder reflection whose last `k - 1` columns span the complement
/// of `c`.
fn constraint_null_space(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = DMatrix::<f64>::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, k - 1).into_owned()
}

fn frobenius_ratio(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let nb = b.norm();
    if nb > 0.0 {
        a.norm() / nb
    } else {
        1.0
    }
}

impl GamDesign {
    pub fn new(rows: &[FeatureRow], spec: &GamSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        if rows.is_empty() {
            return Err(ModelError::Validation("no training rows".into()));
        }
        let n = rows.len();
        let mut y = DVector::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            if !r.target.is_finite() {
                return Err(ModelError::Validation(format!("row {}: non-finite target {}", r.id, r.target)));
            }
            y[i] = r.target;
        }

        let mut blocks: Vec<DMatrix<f64>> = vec![DMatrix::from_element(n, 1, 1.0)];
        let mut terms = Vec::new();
        let mut penalties = Vec::new();
        let mut next = 1;

        for s in &spec.smooths {
            let label = format!("s({})", s.feature);
            let xs = rows.iter().map(|r| feature_value(r, &s.feature)).collect::<Result<Vec<_>, _>>()?;
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let basis = BSplineBasis::new(s.k, lo, hi).ok_or(ModelError::Singular { term: label.clone() })?;
            let b = basis.design(&xs);
            let c = b.row_sum().transpose();
            let z = constraint_null_space(&c);
            let xj = &b * &z;
            let xtxj = xj.transpose() * &xj;
            let sj = z.transpose() * difference_penalty(s.k, PENALTY_ORDER) * &z;
            let cols = next..next + s.k - 1;
            let scale = frobenius_ratio(&xtxj, &sj);
            if spec.shrinkage {
                let eig = SymmetricEigen::new(sj.clone());
                let top = eig.eigenvalues.amax();
                let null: Vec<usize> =
                    (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i].abs() <= 1e-8 * top).collect();
                let mut sn = DMatrix::zeros(s.k - 1, s.k - 1);
                for &i in &null {
                    let u = eig.eigenvectors.column(i);
                    sn += u * u.transpose();
                }
                let nscale = frobenius_ratio(&xtxj, &sn);
                penalties.push(Penalty {
                    label: format!("{label}:wiggly"),
                    cols: cols.clone(),
                    matrix: sj * scale,
                    scale,
                });
                penalties.push(Penalty {
                    label: format!("{label}:null"),
                    cols: cols.clone(),
                    matrix: sn * nscale,
                    scale: nscale,
                });
            } else {
                penalties.push(Penalty {
                    label: label.clone(),
                    cols: cols.clone(),
                    matrix: sj * scale,
                    scale,
                });
            }
            next = cols.end;
            blocks.push(xj);
            terms.push(Term {
                label,
                feature: s.feature.clone(),
                kind: TermKind::Smooth { basis, z },
                cols,
            });
        }

        for f in &spec.linear {
            let xs = rows.iter().map(|r| feature_value(r, f)).collect::<Result<Vec<_>, _>>()?;
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            if !(sd > 0.0) {
                return Err(ModelError::Singular { term: f.clone() });
            }
            let col = DMatrix::from_iterator(n, 1, xs.iter().map(|v| (v - mean) / sd));
            let cols = next..next + 1;
            if spec.shrinkage {
                let eye = DMatrix::identity(1, 1);
                let scale = frobenius_ratio(&(col.transpose() * &col), &eye);
                penalties.push(Penalty {
                    label: f.clone(),
                    cols: cols.clone(),
                    matrix: eye * scale,
                    scale,
                });
            }
            next = cols.end;
            blocks.push(col);
            terms.push(Term {
                label: f.clone(),
                feature: f.clone(),
                kind: TermKind::Linear { mean, sd },
                cols,
            });
        }

        if spec.plz_factor {
            let all: BTreeSet<&str> = rows.iter().filter_map(|r| r.plz.as_deref()).collect();
            if all.len() >= 2 {
                let mut it = all.into_iter().map(str::to_string);
                let baseline = it.next().unwrap_or_default();
                let levels: Vec<String> = it.collect();
                let mut d = DMatrix::zeros(n, levels.len());
                for (i, r) in rows.iter().enumerate() {
                    if let Some(j) = r.plz.as_ref().and_then(|p| levels.iter().position(|l| l == p)) {
                        d[(i, j)] = 1.0;
                    }
                }
                let cols = next..next + levels.len();
                if spec.shrinkage {
                    let eye = DMatrix::identity(levels.len(), levels.len());
                    let scale = frobenius_ratio(&(d.transpose() * &d), &eye);
                    penalties.push(Penalty {
                        label: "plz".into(),
                        cols: cols.clone(),
                        matrix: eye * scale,
                        scale,
                    });
                }
                next = cols.end;
                blocks.push(d);
                terms.push(Term {
                    label: "plz".into(),
                    feature: "plz".into(),
                    kind: TermKind::Factor { baseline, levels },
                    cols,
                });
            }
        }

        let mut x = DMatrix::zeros(n, next);
        let mut c0 = 0;
        for b in &blocks {
            x.view_mut((0, c0), (n, b.ncols())).copy_from(b);
            c0 += b.ncols();
        }
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let design = GamDesign {
            spec: spec.clone(),
            terms,
            penalties,
            x,
            y,
            xtx,
            xty,
        };
        design.check_identifiable()?;
        Ok(design)
    }

    /// Adds terms one at a time with unit smoothing parameters; the first
    /// term that makes the penalized Gram matrix rank deficient is named.
    fn check_identifiable(&self) -> Result<(), ModelError> {
        let m = &self.xtx + self.penalty_sum(&vec![1.0; self.penalties.len()]);
        let mut end = 1;
        let mut label = "(intercept)".to_string();
        let check = |end: usize, label: &str| {
            let block = m.view((0, 0), (end, end)).into_owned();
            let eig = SymmetricEigen::new(block).eigenvalues;
            let (lo, hi) = (eig.min(), eig.amax());
            if !(lo > 1e-11 * hi) {
                return Err(ModelError::Singular { term: label.to_string() });
            }
            Ok(())
        };
        check(end, &label)?;
        for t in &self.terms {
            end = t.cols.end;
            label.clone_from(&t.label);
            check(end, &label)?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn penalties(&self) -> &[Penalty] {
        &self.penalties
    }

    /// Column range of a term by label, e.g. `s(size_sqm)`.
    pub fn term_columns(&self, label: &str) -> Option<Range<usize>> {
        self.terms.iter().find(|t| t.label == label).map(|t| t.cols.clone())
    }

    /// `Σ λ_m S_m` embedded in the full coefficient space.
    pub fn penalty_sum(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let p = self.n_coef();
        let mut s = DMatrix::zeros(p, p);
        for (pen, &l) in self.penalties.iter().zip(lambdas) {
            let w = pen.cols.len();
            let mut v = s.view_mut((pen.cols.start, pen.cols.start), (w, w));
            v += &pen.matrix * l;
        }
        s
    }

    /// `‖y − Xβ‖² + βᵀ S_λ β`.
    pub fn objective(&self, beta: &DVector<f64>, lambdas: &[f64]) -> f64 {
        let r = &self.y - &self.x * beta;
        r.dot(&r) + beta.dot(&(self.penalty_sum(lambdas) * beta))
    }

    pub fn fit_with(&self, lambdas: &[f64]) -> Result<GamFit, ModelError> {
        if lambdas.len() != self.penalties.len() {
            return Err(ModelError::Validation(format!(
                "{} smoothing parameters for {} penalties",
                lambdas.len(),
                self.penalties.len()
            )));
        }
        let m = &self.xtx + self.penalty_sum(lambdas);
        let chol = Cholesky::new(m).ok_or_else(|| ModelError::Singular {
            term: "joint design".into(),
        })?;
        let beta = chol.solve(&self.xty);
        let f = chol.solve(&self.xtx);
        let edf_diag: Vec<f64> = (0..f.nrows()).map(|i| f[(i, i)]).collect();
        let r = &self.y - &self.x * &beta;
        let rss = r.dot(&r);
        let n = self.n() as f64;
        let denom = n - self.spec.gamma * edf_diag.iter().sum::<f64>();
        let gcv = if denom > 0.0 { n * rss / (denom * denom) } else { f64::INFINITY };
        Ok(GamFit {
            beta,
            edf_diag,
            rss,
            gcv,
        })
    }

    pub fn gcv(&self, lambdas: &[f64]) -> f64 {
        self.fit_with(lambdas).map_or(f64::INFINITY, |f| f.gcv)
    }

    /// Coordinate search over the grid, one smoothing parameter at a time,
    /// until a full sweep changes nothing.
    pub fn select_lambdas(&self) -> Vec<f64> {
        let grid = &self.spec.lambda_grid;
        let m = self.penalties.len();
        let start = (0..grid.len())
            .min_by(|&a, &b| grid[a].ln().abs().total_cmp(&grid[b].ln().abs()))
            .unwrap_or(0);
        let mut idx = vec![start; m];
        let at = |idx: &[usize]| idx.iter().map(|&i| grid[i]).collect::<Vec<_>>();
        let mut best = self.gcv(&at(&idx));
        for _ in 0..MAX_SWEEPS {
            let mut changed = false;
            for c in 0..m {
                let scores: Vec<f64> = (0..grid.len())
                    .into_par_iter()
                    .map(|g| {
                        let mut t = idx.clone();
                        t[c] = g;
                        self.gcv(&at(&t))
                    })
                    .collect();
                let (g, s) = scores
                    .iter()
                    .enumerate()
                    .fold((idx[c], best), |acc, (g, &s)| if s < acc.1 { (g, s) } else { acc });
                if g != idx[c] {
                    idx[c] = g;
                    best = s;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        at(&idx)
    }

    /// Packages a fit as a self-contained model.
    pub fn to_model(&self, lambdas: &[f64], fit: &GamFit) -> GamModel {
        let beta = &fit.beta;
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let theta = beta.rows(t.cols.start, t.cols.len()).into_owned();
                match &t.kind {
                    TermKind::Smooth { basis, z } => FittedTerm::Smooth {
                        feature: t.feature.clone(),
                        basis: basis.clone(),
                        coef: (z * theta).iter().copied().collect(),
                    },
                    TermKind::Linear { mean, sd } => FittedTerm::Linear {
                        feature: t.feature.clone(),
                        mean: *mean,
                        sd: *sd,
                        coef: theta[0],
                    },
                    TermKind::Factor { baseline, levels } => FittedTerm::Factor {
                        baseline: baseline.clone(),
                        levels: levels.clone(),
                        coef: theta.iter().copied().collect(),
                    },
                }
            })
            .collect();
        let edf = self
            .terms
            .iter()
            .map(|t| (t.label.clone(), fit.edf_diag[t.cols.clone()].iter().sum()))
            .collect();
        let n = self.n() as f64;
        let mean = self.y.mean();
        let tss: f64 = self.y.iter().map(|v| (v - mean).powi(2)).sum();
        let edf_total = fit.edf_total();
        let r2_adj = 1.0 - (fit.rss / (n - edf_total)) / (tss / (n - 1.0));
        GamModel {
            spec: self.spec.clone(),
            intercept: beta[0],
            terms,
            lambdas: self.penalties.iter().map(|p| p.label.clone()).zip(lambdas.iter().copied()).collect(),
            edf,
            edf_total,
            gcv: fit.gcv,
            r2_adj,
            rmse: (fit.rss / n).sqrt(),
            n_train: self.n(),
        }
    }
}

/// Fits the spec, choosing every smoothing parameter by GCV over the grid.
pub fn fit_gam(rows: &[FeatureRow], spec: &GamSpec) -> Result<GamModel, ModelError> {
    let design = GamDesign::new(rows, spec)?;
    let lambdas = design.select_lambdas();
    let fit = design.fit_with(&lambdas)?;
    Ok(design.to_model(&lambdas, &fit))
}
