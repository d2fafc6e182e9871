//! Anomaly scores, the RX baseline, and ROC / AUC evaluation.

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor3;

/// Binary ground-truth map over the `n1 × n2` pixel grid, stored with the
/// first index fastest (pixel `p = i1 + n1·i2`), matching [`Tensor3`] bands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: (usize, usize),
    data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: (usize, usize), data: Vec<bool>) -> Result<Self> {
        if dims.0 * dims.1 != data.len() {
            return Err(shape_err(format!("{} mask entries", dims.0 * dims.1), data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: (usize, usize), mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.0 * dims.1);
        for j in 0..dims.1 {
            for i in 0..dims.0 {
                data.push(f(i, j));
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i + self.dims.0 * j]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Nonnegative per-pixel scores over an `n1 × n2` grid, same layout as
/// [`Mask`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    dims: (usize, usize),
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(dims: (usize, usize), values: Vec<f64>) -> Result<Self> {
        if dims.0 * dims.1 != values.len() {
            return Err(shape_err(format!("{} scores", dims.0 * dims.1), values.len()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter("scores must be finite and nonnegative".into()));
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i + self.dims.0 * j]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Per-pixel score `‖S_{ij:}‖₂`.
pub fn anomaly_scores(s: &Tensor3) -> ScoreMap {
    let (n1, n2, _) = s.dims();
    ScoreMap {
        dims: (n1, n2),
        values: s.fiber_norms(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RxScores {
    pub scores: ScoreMap,
    /// The background covariance needed a ridge to be factorized.
    pub regularized: bool,
}

/// Global RX detector: Mahalanobis distance of each pixel spectrum from the
/// scene mean under the scene covariance.
///
/// When the covariance is not numerically positive definite, a ridge of
/// `1e-6 · trace(C)/n3` is added and the result is flagged.
pub fn rx_scores(o: &Tensor3) -> Result<RxScores> {
    let (n1, n2, n3) = o.dims();
    let p = o.pixels();
    let x = o.mode3_view();
    let mean: Vec<f64> = (0..n3).map(|k| x.column(k).sum() / p as f64).collect();
    let centered = DMatrix::from_fn(n3, p, |k, q| x[(q, k)] - mean[k]);
    let cov = (&centered * centered.transpose()) / p as f64;
    let scale = cov.trace() / n3 as f64;

    let factor = |c: DMatrix<f64>| -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let ch = c.cholesky()?;
        let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d * d));
        (min_pivot > 1e-12 * scale).then_some(ch)
    };
    let (chol, regularized) = match factor(cov.clone()) {
        Some(ch) if scale > 0.0 => (ch, false),
        _ => {
            let ridge = 1e-6 * if scale > 0.0 { scale } else { 1.0 };
            let reg = cov + DMatrix::identity(n3, n3) * ridge;
            let ch = reg
                .cholesky()
                .ok_or_else(|| Error::NonInvertible("regularized covariance".into()))?;
            (ch, true)
        }
    };
    let y = chol
        .l()
        .solve_lower_triangular(&centered)
        .ok_or_else(|| Error::NonInvertible("covariance factor".into()))?;
    let values = y.column_iter().map(|c| c.norm_squared()).collect();
    Ok(RxScores {
        scores: ScoreMap { dims: (n1, n2), values },
        regularized,
    })
}

/// ROC curve at every distinct score threshold (a pixel is declared anomalous
/// when `score ≥ threshold`), preceded by the point `(∞, 0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    pub thresholds: Vec<f64>,
    pub far: Vec<f64>,
    pub pd: Vec<f64>,
}

impl Roc {
    /// Trapezoidal area under `(far, pd)`.
    pub fn auc(&self) -> f64 {
        self.far
            .windows(2)
            .zip(self.pd.windows(2))
            .map(|(f, d)| (f[1] - f[0]) * (d[1] + d[0]) * 0.5)
            .sum()
    }

    /// CSV with header `threshold,far,pd`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["threshold", "far", "pd"])?;
        for ((t, f), d) in self.thresholds.iter().zip(&self.far).zip(&self.pd) {
            w.write_record([fmt_threshold(*t), format!("{f:.16e}"), format!("{d:.16e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_threshold(t: f64) -> String {
    if t.is_infinite() {
        "inf".to_string()
    } else {
        format!("{t:.16e}")
    }
}

fn check_labels(scores: &[f64], truth: &Mask) -> Result<(usize, usize)> {
    if scores.len() != truth.data().len() {
        return Err(shape_err(format!("{} scores", truth.data().len()), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("scores contain NaN".into()));
    }
    let pos = truth.count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateTruth);
    }
    Ok((pos, neg))
}

pub fn roc_curve(scores: &[f64], truth: &Mask) -> Result<Roc> {
    let (pos, neg) = check_labels(scores, truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut roc = Roc {
        thresholds: vec![f64::INFINITY],
        far: vec![0.0],
        pd: vec![0.0],
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if truth.data()[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.thresholds.push(t);
        roc.far.push(fp as f64 / neg as f64);
        roc.pd.push(tp as f64 / pos as f64);
    }
    Ok(roc)
}

/// Area under the ROC curve (trapezoidal rule).
pub fn roc_auc(scores: &[f64], truth: &Mask) -> Result<f64> {
    Ok(roc_curve(scores, truth)?.auc())
}

/// Mann–Whitney estimate `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` from midranks.
pub fn mann_whitney_auc(scores: &[f64], truth: &Mask) -> Result<f64> {
    let (pos, neg) = check_labels(scores, truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum += midrank * order[i..j].iter().filter(|&&q| truth.data()[q]).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}
