//! Linear predictors expressed as weight rows over the training responses.
//!
//! Cross-validation rows for every fold are obtained from a single inverse
//! `Q = V⁻¹` of the full covariance: removing a fold `F` from the training
//! set is a Schur-complement downdate with `Q_FF`, so no per-fold
//! factorization of `V` is needed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::covmodel::{self, ClusterDesign, CovarianceSpec, Latent, LatentSet};
use crate::error::{Error, Result};
use crate::linalg;
use crate::scenario::PredictionScenario;

/// Responses, fixed-effects design and grouping metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    design: ClusterDesign,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, design: ClusterDesign) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidDataset(String::from(
                "at least two observations are required",
            )));
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "design matrix rows",
                expected: n,
                found: x.nrows(),
            });
        }
        if design.len() != n {
            return Err(Error::DimensionMismatch {
                context: "cluster design",
                expected: n,
                found: design.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidDataset(String::from("no fixed-effect columns")));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(String::from(
                "non-finite value in response or design",
            )));
        }
        Ok(Self { y, x, design })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn design(&self) -> &ClusterDesign {
        &self.design
    }

    /// Same observations restricted to the given fixed-effect columns.
    pub fn with_columns(&self, cols: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.x.ncols()) {
            return Err(Error::DimensionMismatch {
                context: "column index",
                expected: self.x.ncols(),
                found: bad,
            });
        }
        let x = DMatrix::from_fn(self.len(), cols.len(), |i, j| self.x[(i, cols[j])]);
        Dataset::new(self.y.clone(), x, self.design.clone())
    }

    /// Restrict to the given observation indices (in order).
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        Dataset::new(
            linalg::select_entries(&self.y, rows),
            linalg::select_rows(&self.x, rows),
            self.design.subset(rows),
        )
    }

    pub fn with_response(&self, y: DVector<f64>) -> Result<Dataset> {
        Dataset::new(y, self.x.clone(), self.design.clone())
    }
}

/// Linear predictor family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictorSpec {
    Ols,
    Gls,
    /// Ridge on the raw design; every column, the intercept included, is penalized.
    Ridge {
        lambda: f64,
    },
    /// GLS mean plus the best linear predictor of the correlated residual.
    Blup,
    /// Gaussian-process posterior mean with a linear mean function estimated by GLS.
    GprPosteriorMean,
}

impl PredictorSpec {
    pub fn needs_covariance(&self) -> bool {
        matches!(
            self,
            PredictorSpec::Gls | PredictorSpec::Blup | PredictorSpec::GprPosteriorMean
        )
    }

    /// Whether predictions use the cross covariance with the target.
    pub fn uses_cross_covariance(&self) -> bool {
        matches!(self, PredictorSpec::Blup | PredictorSpec::GprPosteriorMean)
    }

    fn ridge_lambda(&self) -> Result<f64> {
        match *self {
            PredictorSpec::Ridge { lambda } if !(lambda.is_finite() && lambda >= 0.0) => Err(Error::InvalidParameter {
                name: "lambda",
                value: lambda,
            }),
            PredictorSpec::Ridge { lambda } => Ok(lambda),
            _ => Ok(0.0),
        }
    }
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorSpec::Ols => f.write_str("ols"),
            PredictorSpec::Gls => f.write_str("gls"),
            PredictorSpec::Ridge { lambda } => write!(f, "ridge:{lambda}"),
            PredictorSpec::Blup => f.write_str("blup"),
            PredictorSpec::GprPosteriorMean => f.write_str("gpr"),
        }
    }
}

impl FromStr for PredictorSpec {
    type Err = Error;

    /// Accepts `ols`, `gls`, `ridge:<lambda>`, `blup` (or `lmm`) and `gpr`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "ols" => return Ok(PredictorSpec::Ols),
            "gls" => return Ok(PredictorSpec::Gls),
            "blup" | "lmm" => return Ok(PredictorSpec::Blup),
            "gpr" => return Ok(PredictorSpec::GprPosteriorMean),
            _ => {}
        }
        if let Some(v) = s.strip_prefix("ridge:") {
            let lambda: f64 = v.trim().parse().map_err(|_| Error::InvalidParameter {
                name: "lambda",
                value: f64::NAN,
            })?;
            let spec = PredictorSpec::Ridge { lambda };
            spec.ridge_lambda()?;
            return Ok(spec);
        }
        Err(Error::InvalidDataset(alloc::format!("unknown predictor `{s}`")))
    }
}

/// Partition of `0..n` into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of: Vec<usize>,
    seed: u64,
}

impl FoldAssignment {
    /// Build from explicit labels `0..k`; every fold must be nonempty.
    pub fn from_labels(fold_of: Vec<usize>, seed: u64) -> Result<Self> {
        let n = fold_of.len();
        let k = fold_of.iter().max().map_or(0, |m| m + 1);
        if k < 2 || k > n {
            return Err(Error::FoldCount { k, n });
        }
        let mut seen = vec![false; k];
        for &f in &fold_of {
            seen[f] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidDesign(String::from("empty fold")));
        }
        Ok(Self { k, fold_of, seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn is_loo(&self) -> bool {
        self.k == self.fold_of.len()
    }

    /// Members of each fold in increasing observation order.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &f) in self.fold_of.iter().enumerate() {
            out[f].push(i);
        }
        out
    }

    /// Apply an observation permutation: observation `perm[i]` of the
    /// result is observation `i` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> FoldAssignment {
        let mut fold_of = vec![0; self.fold_of.len()];
        for (i, &p) in perm.iter().enumerate() {
            fold_of[p] = self.fold_of[i];
        }
        FoldAssignment {
            k: self.k,
            fold_of,
            seed: self.seed,
        }
    }
}

/// Balanced random folds: a seeded shuffle of `0..n`, with position `j`
/// of the permutation assigned to fold `j mod k`.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::FoldCount { k, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (j, &obs) in perm.iter().enumerate() {
        fold_of[obs] = j % k;
    }
    Ok(FoldAssignment { k, fold_of, seed })
}

/// Leave-one-out folds in observation order.
pub fn loo_folds(n: usize) -> Result<FoldAssignment> {
    FoldAssignment::from_labels((0..n).collect(), 0)
}

/// Weight row `h` with `ŷ_target = h · y_train`, computed directly from the
/// training covariance.
///
/// `c_target` is `Cov(y_train, y_target)`; it only enters the BLUP and GPR
/// rows. OLS and ridge ignore `v_train`.
pub fn predictor_row(
    pred: &PredictorSpec,
    x_train: &DMatrix<f64>,
    v_train: &DMatrix<f64>,
    x_target: &DVector<f64>,
    c_target: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (m, p) = x_train.shape();
    if x_target.len() != p {
        return Err(Error::DimensionMismatch {
            context: "target covariates",
            expected: p,
            found: x_target.len(),
        });
    }
    if pred.needs_covariance() && v_train.shape() != (m, m) {
        return Err(Error::DimensionMismatch {
            context: "training covariance",
            expected: m,
            found: v_train.nrows(),
        });
    }
    if pred.uses_cross_covariance() && c_target.len() != m {
        return Err(Error::DimensionMismatch {
            context: "cross covariance",
            expected: m,
            found: c_target.len(),
        });
    }
    let lambda = pred.ridge_lambda()?;
    // W = V⁻¹X (or X), A = XᵀW (+ λI)
    let (w, v_chol) = if pred.needs_covariance() {
        let chol = linalg::spd_factor(v_train)?;
        (chol.solve(x_train), Some(chol))
    } else {
        (x_train.clone(), None)
    };
    let mut a = x_train.transpose() * &w;
    for j in 0..p {
        a[(j, j)] += lambda;
    }
    let a_chol = linalg::normal_factor(&a)?;
    match (pred.uses_cross_covariance(), v_chol) {
        (true, Some(chol)) => {
            let r = chol.solve(c_target);
            let resid = x_target - x_train.transpose() * &r;
            Ok(r + &w * a_chol.solve(&resid))
        }
        _ => Ok(&w * a_chol.solve(x_target)),
    }
}

/// `V` and its inverse, assembled block by block over uncorrelated groups.
#[derive(Debug, Clone)]
pub struct CovarianceSystem {
    v: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl CovarianceSystem {
    pub fn new(spec: &CovarianceSpec, design: &ClusterDesign) -> Result<Self> {
        let v = covmodel::build_covariance(spec, design)?;
        let blocks = covmodel::independent_blocks(spec, design)?;
        let mut q = DMatrix::zeros(v.nrows(), v.ncols());
        for block in &blocks {
            let inv = linalg::spd_inverse(&linalg::select_block(&v, block, block))?;
            for (a, &i) in block.iter().enumerate() {
                for (b, &j) in block.iter().enumerate() {
                    q[(i, j)] = inv[(a, b)];
                }
            }
        }
        Ok(Self { v, q })
    }

    pub fn from_matrix(v: DMatrix<f64>) -> Result<Self> {
        let q = linalg::spd_inverse(&v)?;
        Ok(Self { v, q })
    }

    /// Identity covariance, as used by OLS and ridge.
    pub fn identity(n: usize) -> Self {
        Self {
            v: DMatrix::identity(n, n),
            q: DMatrix::identity(n, n),
        }
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.v.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.v.nrows() == 0
    }
}

/// Per-fold downdated quantities for training set `R = complement(F)`.
struct FoldSolve {
    members: Vec<usize>,
    /// `Q[:, F] Q_FF⁻¹`, used for the residual-prediction part of BLUP rows.
    qf_s: DMatrix<f64>,
    /// `Q_FF⁻¹ Q[F, :]`.
    s_qf: DMatrix<f64>,
    /// `Q[:, F]`.
    q_f: DMatrix<f64>,
    a_chol: Cholesky<f64, Dyn>,
    /// `X_Rᵀ V_RR⁻¹` scattered to full width, exactly zero on `F`.
    wt: DMatrix<f64>,
}

struct FoldEngine<'a> {
    pred: PredictorSpec,
    x: &'a DMatrix<f64>,
    q: &'a DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl<'a> FoldEngine<'a> {
    fn new(pred: &PredictorSpec, x: &'a DMatrix<f64>, system: &'a CovarianceSystem) -> Result<Self> {
        let n = x.nrows();
        if system.len() != n {
            return Err(Error::DimensionMismatch {
                context: "covariance size",
                expected: n,
                found: system.len(),
            });
        }
        let lambda = pred.ridge_lambda()?;
        let b = x.transpose() * system.inverse();
        let mut a = &b * x;
        for j in 0..x.ncols() {
            a[(j, j)] += lambda;
        }
        Ok(Self {
            pred: *pred,
            x,
            q: system.inverse(),
            a,
            b,
        })
    }

    fn solve(&self, members: &[usize]) -> Result<FoldSolve> {
        let n = self.x.nrows();
        let m = members.len();
        let q_ff = linalg::select_block(self.q, members, members);
        let s = linalg::spd_inverse(&q_ff)?;
        let q_f_rows = DMatrix::from_fn(m, n, |a, j| self.q[(members[a], j)]);
        let s_qf = &s * &q_f_rows;
        let g = DMatrix::from_fn(self.b.nrows(), m, |r, a| self.b[(r, members[a])]);
        let a_f = &self.a - &g * &s * g.transpose();
        let a_chol = linalg::normal_factor(&a_f)?;
        let mut wt = &self.b - &g * &s_qf;
        for &i in members {
            wt.column_mut(i).fill(0.0);
        }
        Ok(FoldSolve {
            members: members.to_vec(),
            qf_s: s_qf.transpose(),
            s_qf,
            q_f: q_f_rows.transpose(),
            a_chol,
            wt,
        })
    }

    /// Mean part: `xᵀ A_F⁻¹ Wt`, or `r + (x − X_Rᵀ r)ᵀ A_F⁻¹ Wt` when a
    /// residual predictor `r` (zero on `F`) is supplied.
    fn combine(&self, fs: &FoldSolve, x_target: DVector<f64>, r: Option<DVector<f64>>) -> DVector<f64> {
        match r {
            None => fs.wt.tr_mul(&fs.a_chol.solve(&x_target)),
            Some(r) => {
                let resid = x_target - self.x.tr_mul(&r);
                fs.wt.tr_mul(&fs.a_chol.solve(&resid)) + r
            }
        }
    }

    /// Row for fold member `pos` predicted from its own training complement
    /// with same-realization cross covariance.
    fn in_sample_row(&self, fs: &FoldSolve, pos: usize) -> DVector<f64> {
        let i = fs.members[pos];
        let x_i = self.x.row(i).transpose();
        let r = self.pred.uses_cross_covariance().then(|| {
            // V_RR⁻¹ V_Ri = −(Q_RF Q_FF⁻¹)[:, pos]
            let mut r = -fs.qf_s.column(pos).into_owned();
            for &j in &fs.members {
                r[j] = 0.0;
            }
            r
        });
        let mut h = self.combine(fs, x_i, r);
        for &j in &fs.members {
            h[j] = 0.0;
        }
        h
    }

    /// Row for covariates `x_target` and cross covariance `c` (full width,
    /// ignored on `F`).
    fn target_row(&self, fs: &FoldSolve, x_target: DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        let r = self.pred.uses_cross_covariance().then(|| {
            let mut c = c.clone();
            for &j in &fs.members {
                c[j] = 0.0;
            }
            // V_RR⁻¹ c_R = (Q − Q_{·F} Q_FF⁻¹ Q_{F·}) c restricted to R
            let mut r = self.q * &c - &fs.q_f * (&fs.s_qf * &c);
            for &j in &fs.members {
                r[j] = 0.0;
            }
            r
        });
        let mut h = self.combine(fs, x_target, r);
        for &j in &fs.members {
            h[j] = 0.0;
        }
        h
    }
}

/// Cross-validation hat matrix with its fold assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct CvHatMatrix {
    h: DMatrix<f64>,
    folds: FoldAssignment,
}

impl CvHatMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }

    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }

    /// Wrap a matrix, checking that fold-diagonal blocks are exactly zero.
    pub fn from_parts(h: DMatrix<f64>, folds: FoldAssignment) -> Result<Self> {
        let n = folds.len();
        if h.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                context: "cv hat matrix",
                expected: n,
                found: h.nrows(),
            });
        }
        let f = folds.fold_of();
        for a in 0..n {
            for b in 0..n {
                if f[a] == f[b] && h[(a, b)] != 0.0 {
                    return Err(Error::InvalidDesign(String::from("nonzero entry inside a fold block")));
                }
            }
        }
        Ok(Self { h, folds })
    }
}

fn system_for(pred: &PredictorSpec, data: &Dataset, cov: &CovarianceSpec) -> Result<CovarianceSystem> {
    if pred.needs_covariance() {
        CovarianceSystem::new(cov, data.design())
    } else {
        Ok(CovarianceSystem::identity(data.len()))
    }
}

/// `H_cv` for `x` under a prepared covariance system. For OLS and ridge the
/// system is ignored in favour of the identity.
pub fn cv_hat_matrix_with(
    pred: &PredictorSpec,
    x: &DMatrix<f64>,
    folds: &FoldAssignment,
    system: &CovarianceSystem,
) -> Result<CvHatMatrix> {
    let n = x.nrows();
    if folds.len() != n {
        return Err(Error::DimensionMismatch {
            context: "fold assignment",
            expected: n,
            found: folds.len(),
        });
    }
    let identity;
    let system = if pred.needs_covariance() {
        system
    } else {
        identity = CovarianceSystem::identity(n);
        &identity
    };
    let engine = FoldEngine::new(pred, x, system)?;
    let mut h = DMatrix::zeros(n, n);
    for members in folds.folds() {
        let fs = engine.solve(&members)?;
        for (pos, &i) in members.iter().enumerate() {
            h.set_row(i, &engine.in_sample_row(&fs, pos).transpose());
        }
    }
    Ok(CvHatMatrix {
        h,
        folds: folds.clone(),
    })
}

/// `H_cv`: row `a` predicts `y_a` from the complement of its fold.
pub fn cv_hat_matrix(
    pred: &PredictorSpec,
    data: &Dataset,
    folds: &FoldAssignment,
    cov: &CovarianceSpec,
) -> Result<CvHatMatrix> {
    let system = system_for(pred, data, cov)?;
    cv_hat_matrix_with(pred, data.x(), folds, &system)
}

/// Covariance shared between an observation and a new point at the same
/// design position that differs only in its noise draw.
fn signal_covariance(cov: &CovarianceSpec, design: &ClusterDesign) -> Result<DMatrix<f64>> {
    let signal = cov.components().difference(LatentSet::of(&[Latent::Noise]));
    covmodel::component_covariance(cov, design, signal)
}

/// In-sample hat matrix `H` with `ŷ = H y`.
///
/// For BLUP and GPR the fitted value of observation `i` predicts its noise-free
/// signal, so the cross covariance excludes the noise term.
pub fn full_hat_matrix(pred: &PredictorSpec, data: &Dataset, cov: &CovarianceSpec) -> Result<DMatrix<f64>> {
    let system = system_for(pred, data, cov)?;
    let x = data.x();
    let lambda = pred.ridge_lambda()?;
    let b = x.transpose() * system.inverse();
    let mut a = &b * x;
    for j in 0..x.ncols() {
        a[(j, j)] += lambda;
    }
    let a_chol = linalg::normal_factor(&a)?;
    // X A⁻¹ B
    let mean = x * a_chol.solve(&b);
    if !pred.uses_cross_covariance() {
        return Ok(mean);
    }
    let c = signal_covariance(cov, data.design())?;
    let n = data.len();
    let resid = DMatrix::identity(n, n) - &mean;
    Ok(&mean + c * system.inverse() * resid)
}

/// Target weight row for one observation under a prediction scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct HteRow {
    pub fold: usize,
    pub target: usize,
    /// Weights over all `n` observations, zero on the target's fold.
    pub weights: DVector<f64>,
    /// `Cov(y_train, y_te)` over all `n` observations, zero on the target's fold.
    pub cross_cov: DVector<f64>,
}

/// Scenario-aware target rows sharing a prepared covariance system.
pub fn h_te_rows_with(
    pred: &PredictorSpec,
    x: &DMatrix<f64>,
    design: &ClusterDesign,
    folds: &FoldAssignment,
    cov: &CovarianceSpec,
    system: &CovarianceSystem,
    scenario: &PredictionScenario,
) -> Result<Vec<HteRow>> {
    let shared = scenario.shared_components(cov)?;
    cov.validate()?;
    cov.check_design(design)?;
    let n = x.nrows();
    if folds.len() != n || design.len() != n {
        return Err(Error::DimensionMismatch {
            context: "fold assignment",
            expected: n,
            found: folds.len(),
        });
    }
    let identity;
    let system = if pred.needs_covariance() {
        system
    } else {
        identity = CovarianceSystem::identity(n);
        &identity
    };
    let engine = FoldEngine::new(pred, x, system)?;
    let mut rows: Vec<Option<HteRow>> = vec![None; n];
    for (fold, members) in folds.folds().into_iter().enumerate() {
        let fs = engine.solve(&members)?;
        for &i in &members {
            let mut c = covmodel::cross_covariance_full(cov, design, shared, i);
            for &j in &members {
                c[j] = 0.0;
            }
            let weights = engine.target_row(&fs, x.row(i).transpose(), &c);
            rows[i] = Some(HteRow {
                fold,
                target: i,
                weights,
                cross_cov: c,
            });
        }
    }
    Ok(rows
        .into_iter()
        .map(|r| r.expect("every observation is in a fold"))
        .collect())
}

/// For each target observation, the weight row built from its fold's
/// complement and the scenario's cross covariance.
pub fn h_te_rows(
    pred: &PredictorSpec,
    data: &Dataset,
    folds: &FoldAssignment,
    cov: &CovarianceSpec,
    scenario: &PredictionScenario,
) -> Result<Vec<HteRow>> {
    let system = system_for(pred, data, cov)?;
    h_te_rows_with(pred, data.x(), data.design(), folds, cov, &system, scenario)
}

/// A predictor fitted on a full training set.
#[derive(Debug, Clone)]
pub struct FittedPredictor {
    beta: DVector<f64>,
    /// `V⁻¹ (y − X β̂)` for predictors that use the cross covariance.
    alpha: Option<DVector<f64>>,
}

impl FittedPredictor {
    /// Fit on `(x, y)`. The system supplies `V⁻¹` for GLS, BLUP and GPR.
    pub fn fit(pred: &PredictorSpec, x: &DMatrix<f64>, y: &DVector<f64>, system: &CovarianceSystem) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                context: "response length",
                expected: n,
                found: y.len(),
            });
        }
        let lambda = pred.ridge_lambda()?;
        let wy;
        let b = if pred.needs_covariance() {
            if system.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "covariance size",
                    expected: n,
                    found: system.len(),
                });
            }
            wy = system.inverse() * y;
            x.transpose() * system.inverse()
        } else {
            wy = y.clone();
            x.transpose()
        };
        let mut a = &b * x;
        for j in 0..x.ncols() {
            a[(j, j)] += lambda;
        }
        let beta = linalg::normal_factor(&a)?.solve(&x.tr_mul(&wy));
        let alpha = pred.uses_cross_covariance().then(|| system.inverse() * (y - x * &beta));
        Ok(Self { beta, alpha })
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    /// Prediction at covariates `x_target` with cross covariance `c_target`
    /// to the training responses (ignored by mean-only predictors).
    pub fn predict(&self, x_target: &[f64], c_target: &DVector<f64>) -> f64 {
        let mean: f64 = x_target.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum();
        match &self.alpha {
            Some(alpha) => mean + c_target.dot(alpha),
            None => mean,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cs_data(n: usize) -> (Dataset, CovarianceSpec) {
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { libm::sin(i as f64 * 1.7) });
        let y = DVector::from_fn(n, |i, _| libm::cos(i as f64));
        let data = Dataset::new(y, x, ClusterDesign::new(n)).unwrap();
        (
            data,
            CovarianceSpec::CompoundSymmetry {
                sigma2_eps: 1.0,
                rho: 0.7,
            },
        )
    }

    #[test]
    fn folds_balanced_and_deterministic() {
        let f = make_folds(6, 3, 11).unwrap();
        assert!(f.folds().iter().all(|m| m.len() == 2));
        assert_eq!(f, make_folds(6, 3, 11).unwrap());
        let loo = make_folds(4, 4, 5).unwrap();
        assert!(loo.folds().iter().all(|m| m.len() == 1));
        assert_eq!(make_folds(3, 4, 0).unwrap_err(), Error::FoldCount { k: 4, n: 3 });
        assert_eq!(make_folds(3, 1, 0).unwrap_err(), Error::FoldCount { k: 1, n: 3 });
    }

    #[test]
    fn intercept_only_ols_row_is_sample_mean() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let h = predictor_row(
            &PredictorSpec::Ols,
            &x,
            &DMatrix::zeros(0, 0),
            &DVector::from_element(1, 1.0),
            &DVector::zeros(5),
        )
        .unwrap();
        for v in h.iter() {
            assert_relative_eq!(*v, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_point_loo_swaps() {
        let data = Dataset::new(
            DVector::from_vec(vec![1.0, 3.0]),
            DMatrix::from_element(2, 1, 1.0),
            ClusterDesign::new(2),
        )
        .unwrap();
        let spec = CovarianceSpec::Diagonal { sigma2_eps: 1.0 };
        let h = cv_hat_matrix(&PredictorSpec::Ols, &data, &loo_folds(2).unwrap(), &spec).unwrap();
        assert_eq!(h.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn fold_rows_match_direct_rows() {
        let (data, spec) = cs_data(6);
        let folds = make_folds(6, 3, 2).unwrap();
        let v = covmodel::build_covariance(&spec, data.design()).unwrap();
        for pred in [
            PredictorSpec::Gls,
            PredictorSpec::Blup,
            PredictorSpec::Ols,
            PredictorSpec::Ridge { lambda: 0.3 },
        ] {
            let h = cv_hat_matrix(&pred, &data, &folds, &spec).unwrap();
            for members in folds.folds() {
                let rest: Vec<usize> = (0..6).filter(|j| !members.contains(j)).collect();
                let x_r = linalg::select_rows(data.x(), &rest);
                let v_r = linalg::select_block(&v, &rest, &rest);
                for &i in &members {
                    let c = DVector::from_fn(rest.len(), |a, _| v[(rest[a], i)]);
                    let row = predictor_row(&pred, &x_r, &v_r, &data.x().row(i).transpose(), &c).unwrap();
                    for (a, &j) in rest.iter().enumerate() {
                        assert_relative_eq!(h.matrix()[(i, j)], row[a], epsilon = 1e-12);
                    }
                    for &j in &members {
                        assert_eq!(h.matrix()[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn gls_full_hat_reproduces_design() {
        let (data, spec) = cs_data(7);
        let h = full_hat_matrix(&PredictorSpec::Gls, &data, &spec).unwrap();
        assert!((&h * data.x() - data.x()).abs().max() < 1e-10);
        let ols = full_hat_matrix(&PredictorSpec::Ols, &data, &spec).unwrap();
        let ridge = full_hat_matrix(&PredictorSpec::Ridge { lambda: 1e-10 }, &data, &spec).unwrap();
        assert!((ols - ridge).abs().max() < 1e-6);
    }

    #[test]
    fn fitted_predictor_matches_weight_row() {
        let (data, spec) = cs_data(8);
        let system = CovarianceSystem::new(&spec, data.design()).unwrap();
        let fit = FittedPredictor::fit(&PredictorSpec::Blup, data.x(), data.y(), &system).unwrap();
        let x_t = DVector::from_vec(vec![1.0, 0.25]);
        let c = DVector::from_element(8, 0.7);
        let h = predictor_row(&PredictorSpec::Blup, data.x(), system.v(), &x_t, &c).unwrap();
        assert_relative_eq!(fit.predict(x_t.as_slice(), &c), h.dot(data.y()), epsilon = 1e-12);
    }

    #[test]
    fn predictor_names_round_trip() {
        for s in ["ols", "gls", "ridge:0.5", "blup", "gpr"] {
            let p: PredictorSpec = s.parse().unwrap();
            assert_eq!(alloc::format!("{p}"), s);
        }
        assert!("ridge:-1".parse::<PredictorSpec>().is_err());
        assert!("forest".parse::<PredictorSpec>().is_err());
    }
}
