//! Sample-mean, control-variate and multiple-control-variate estimators.
//!
//! With `Y` the expensive per-frame statistic and `Z = (Z_1..Z_d)` cheap
//! controls of known (or separately estimated) mean `mu_z`, the estimator is
//! `ybar - beta' (zbar - mu_z)`. At `beta = S_ZZ^-1 S_YZ` its variance is
//! `S_YY (1 - R^2) / n`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative condition number above which `S_ZZ` is rejected.
pub const CONDITION_LIMIT: f64 = 1e10;

/// `n` paired draws of `Y` and a `d`-vector of controls.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    y: Vec<f64>,
    z: DMatrix<f64>,
    mu_z: Vec<f64>,
}

impl PairedSample {
    /// `z_rows[i]` holds the controls paired with `y[i]`.
    pub fn new(y: Vec<f64>, z_rows: &[Vec<f64>], mu_z: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InsufficientSample(format!("need n >= 2, got {n}")));
        }
        if z_rows.len() != n {
            return Err(Error::LengthMismatch(n, z_rows.len()));
        }
        let d = mu_z.len();
        if d == 0 {
            return Err(Error::InvalidParameter("need at least one control".into()));
        }
        if let Some(row) = z_rows.iter().find(|r| r.len() != d) {
            return Err(Error::LengthMismatch(d, row.len()));
        }
        let z = DMatrix::from_fn(n, d, |i, j| z_rows[i][j]);
        if !(y.iter().chain(z.iter()).chain(&mu_z)).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("sample contains non-finite values".into()));
        }
        Ok(Self { y, z, mu_z })
    }

    pub fn single(y: Vec<f64>, x: &[f64], mu_x: f64) -> Result<Self> {
        let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        Self::new(y, &rows, vec![mu_x])
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.mu_z.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn mu_z(&self) -> &[f64] {
        &self.mu_z
    }

    pub fn control(&self, j: usize) -> Vec<f64> {
        self.z.column(j).iter().copied().collect()
    }

    fn rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            y: self.y[range.clone()].to_vec(),
            z: self.z.rows(range.start, range.len()).into_owned(),
            mu_z: self.mu_z.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEstimate {
    pub estimate: f64,
    pub sample_variance_of_mean: f64,
    pub beta: Vec<f64>,
    pub r_squared: f64,
    /// Plain variance over control-variate variance; infinite when the
    /// controls explain `Y` exactly.
    pub variance_reduction_factor: f64,
    pub n: usize,
}

/// How the control coefficients are chosen.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// Plug-in `S_ZZ^-1 S_YZ` from the same sample.
    #[default]
    Optimal,
    Fixed(Vec<f64>),
    /// Cross-fitted: coefficients fitted on each half are applied to the
    /// other half and the two estimates averaged.
    SplitSample,
}

struct Moments {
    ybar: f64,
    zbar: DVector<f64>,
    s_yy: f64,
    s_yz: DVector<f64>,
    s_zz: DMatrix<f64>,
}

fn moments(s: &PairedSample) -> Moments {
    let n = s.n() as f64;
    let ybar = s.y.iter().sum::<f64>() / n;
    let zbar = DVector::from_iterator(s.d(), s.z.column_iter().map(|c| c.sum() / n));
    let dy = DVector::from_iterator(s.n(), s.y.iter().map(|v| v - ybar));
    let mut dz = s.z.clone();
    for (j, mut col) in dz.column_iter_mut().enumerate() {
        col.add_scalar_mut(-zbar[j]);
    }
    let s_yy = dy.dot(&dy) / (n - 1.0);
    let s_yz = dz.tr_mul(&dy) / (n - 1.0);
    let s_zz = dz.tr_mul(&dz) / (n - 1.0);
    Moments { ybar, zbar, s_yy, s_yz, s_zz }
}

/// `ybar` with variance of the mean `S_YY / n`.
pub fn plain_mean(y: &[f64]) -> Result<CvEstimate> {
    let n = y.len();
    if n < 2 {
        return Err(Error::InsufficientSample(format!("need n >= 2, got {n}")));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("sample contains non-finite values".into()));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let s_yy = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok(CvEstimate {
        estimate: mean,
        sample_variance_of_mean: s_yy / n as f64,
        beta: Vec::new(),
        r_squared: 0.0,
        variance_reduction_factor: 1.0,
        n,
    })
}

/// `S_XY / S_XX` for a single control.
pub fn beta_star_single(s: &PairedSample) -> Result<f64> {
    if s.d() != 1 {
        return Err(Error::InvalidParameter(format!("expected one control, got {}", s.d())));
    }
    let m = moments(s);
    let s_xx = m.s_zz[(0, 0)];
    if s_xx <= 0.0 {
        return Err(Error::DegenerateControl("control is constant over the sample".into()));
    }
    Ok(m.s_yz[0] / s_xx)
}

/// Single control variate with the plug-in coefficient.
pub fn cv_estimate(s: &PairedSample) -> Result<CvEstimate> {
    cv_estimate_with(s, &BetaMode::Optimal)
}

pub fn cv_estimate_with(s: &PairedSample, mode: &BetaMode) -> Result<CvEstimate> {
    if s.d() != 1 {
        return Err(Error::InvalidParameter(format!("expected one control, got {}", s.d())));
    }
    estimate(s, mode)
}

/// Multiple control variates with the plug-in coefficient vector.
pub fn mcv_estimate(s: &PairedSample) -> Result<CvEstimate> {
    mcv_estimate_with(s, &BetaMode::Optimal)
}

pub fn mcv_estimate_with(s: &PairedSample, mode: &BetaMode) -> Result<CvEstimate> {
    if s.d() + 2 > s.n() {
        return Err(Error::InsufficientSample(format!("{} controls need n >= {}, got {}", s.d(), s.d() + 2, s.n())));
    }
    estimate(s, mode)
}

fn estimate(s: &PairedSample, mode: &BetaMode) -> Result<CvEstimate> {
    match mode {
        BetaMode::Optimal => {
            let m = moments(s);
            let beta = solve_beta(&m)?;
            Ok(finish(s, &m, beta))
        }
        BetaMode::Fixed(b) => {
            if b.len() != s.d() {
                return Err(Error::LengthMismatch(s.d(), b.len()));
            }
            let m = moments(s);
            Ok(finish(s, &m, DVector::from_column_slice(b)))
        }
        BetaMode::SplitSample => {
            let half = s.n() / 2;
            if half < s.d() + 2 {
                return Err(Error::InsufficientSample(format!(
                    "split-sample mode needs n >= {}, got {}",
                    2 * (s.d() + 2),
                    s.n()
                )));
            }
            let (a, b) = (s.rows(0..half), s.rows(half..s.n()));
            let (ma, mb) = (moments(&a), moments(&b));
            let (beta_a, beta_b) = (solve_beta(&ma)?, solve_beta(&mb)?);
            let on_b = finish(&b, &mb, beta_a);
            let on_a = finish(&a, &ma, beta_b);
            let (wa, wb) = (a.n() as f64 / s.n() as f64, b.n() as f64 / s.n() as f64);
            let full = moments(s);
            let variance = wa * wa * on_a.sample_variance_of_mean + wb * wb * on_b.sample_variance_of_mean;
            let plain = full.s_yy / s.n() as f64;
            Ok(CvEstimate {
                estimate: wa * on_a.estimate + wb * on_b.estimate,
                sample_variance_of_mean: variance,
                beta: on_a.beta.iter().zip(&on_b.beta).map(|(x, y)| 0.5 * (x + y)).collect(),
                r_squared: r_squared(&full),
                variance_reduction_factor: reduction(plain, variance),
                n: s.n(),
            })
        }
    }
}

fn solve_beta(m: &Moments) -> Result<DVector<f64>> {
    let d = m.s_zz.nrows();
    if d == 1 {
        let s_xx = m.s_zz[(0, 0)];
        if s_xx <= 0.0 {
            return Err(Error::DegenerateControl("control is constant over the sample".into()));
        }
        return Ok(DVector::from_element(1, m.s_yz[0] / s_xx));
    }
    let eig = m.s_zz.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if max <= 0.0 {
        return Err(Error::DegenerateControl("all controls are constant over the sample".into()));
    }
    let condition = if min <= 0.0 { f64::INFINITY } else { max / min };
    if condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned { condition });
    }
    let chol = m.s_zz.clone().cholesky().ok_or(Error::IllConditioned { condition })?;
    Ok(chol.solve(&m.s_yz))
}

fn r_squared(m: &Moments) -> f64 {
    if m.s_yy <= 0.0 {
        return 0.0;
    }
    match solve_beta(m) {
        Ok(beta) => (m.s_yz.dot(&beta) / m.s_yy).clamp(0.0, 1.0),
        Err(_) => 0.0,
    }
}

fn reduction(plain: f64, cv: f64) -> f64 {
    if plain <= 0.0 {
        1.0
    } else if cv <= 0.0 {
        f64::INFINITY
    } else {
        plain / cv
    }
}

fn finish(s: &PairedSample, m: &Moments, beta: DVector<f64>) -> CvEstimate {
    let n = s.n() as f64;
    let mu = DVector::from_column_slice(&s.mu_z);
    let estimate = m.ybar - beta.dot(&(&m.zbar - mu));
    let quad = (m.s_yy - 2.0 * beta.dot(&m.s_yz) + (&m.s_zz * &beta).dot(&beta)).max(0.0);
    let (variance, vrf) = if m.s_yy <= 0.0 { (0.0, 1.0) } else { (quad / n, reduction(m.s_yy, quad)) };
    CvEstimate {
        estimate,
        sample_variance_of_mean: variance,
        beta: beta.iter().copied().collect(),
        r_squared: r_squared(m),
        variance_reduction_factor: vrf,
        n: s.n(),
    }
}

/// Placement of the wide control sample relative to the `Y` sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WideLayout {
    /// The wide sample contains the `Y` sample.
    #[default]
    Superset,
    /// The wide sample avoids the `Y` sample.
    Disjoint,
}

/// Estimates control means by applying the cheap statistic to a wider
/// sample of `window_len` frames.
///
/// `control(k)` returns the control vector of window position `k`. The wide
/// sample holds `round(wide_fraction * window_len)` positions.
pub fn two_stage_mu<R, F>(
    window_len: usize,
    y_sample: &[usize],
    wide_fraction: f64,
    layout: WideLayout,
    rng: &mut R,
    mut control: F,
) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if !(wide_fraction > 0.0 && wide_fraction <= 1.0) {
        return Err(Error::Config(format!("wide_fraction {wide_fraction} outside (0, 1]")));
    }
    let m = ((wide_fraction * window_len as f64).round() as usize).clamp(1, window_len.max(1));
    if m < y_sample.len() {
        return Err(Error::Config(format!("wide sample of {m} frames is smaller than the {} sampled", y_sample.len())));
    }
    if let Some(&k) = y_sample.iter().find(|&&k| k >= window_len) {
        return Err(Error::Sampling(format!("sample position {k} outside window of {window_len}")));
    }
    let mut in_y = vec![false; window_len];
    for &k in y_sample {
        in_y[k] = true;
    }
    let rest: Vec<usize> = (0..window_len).filter(|&k| !in_y[k]).collect();
    let mut wide: Vec<usize> = match layout {
        WideLayout::Superset => {
            let extra = m - y_sample.len();
            let mut w = y_sample.to_vec();
            w.extend(rand::seq::index::sample(rng, rest.len(), extra).into_iter().map(|i| rest[i]));
            w
        }
        WideLayout::Disjoint => {
            if m > rest.len() {
                return Err(Error::Config(format!(
                    "disjoint wide sample of {m} frames does not fit beside the {} sampled",
                    y_sample.len()
                )));
            }
            rand::seq::index::sample(rng, rest.len(), m).into_iter().map(|i| rest[i]).collect()
        }
    };
    wide.sort_unstable();
    let mut sum: Vec<f64> = Vec::new();
    for &k in &wide {
        let z = control(k)?;
        if sum.is_empty() {
            sum = vec![0.0; z.len()];
        } else if z.len() != sum.len() {
            return Err(Error::LengthMismatch(sum.len(), z.len()));
        }
        for (s, v) in sum.iter_mut().zip(z) {
            *s += v;
        }
    }
    Ok(sum.into_iter().map(|s| s / wide.len() as f64).collect())
}
