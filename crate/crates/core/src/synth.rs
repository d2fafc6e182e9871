//! Seeded synthetic scenes `O = Z ×₃ E + S + N` with known anomaly pixels.
//!
//! The background has smooth eigenimages and an orthonormal spectral basis
//! whose first column is constant, then is shifted and scaled so that its
//! values span `[0, 1]`. That affine map stays inside the span of the basis,
//! so the background keeps rank `r` exactly.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::detector::Mask;
use crate::error::{Error, Result};
use crate::stiefel::project_stiefel;
use crate::tensor::{Matrix, Tensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dims: (usize, usize, usize),
    pub rank: usize,
    pub anomalies: usize,
    /// Per-band RMS of each planted anomaly spectrum.
    pub magnitude: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (n1, n2, n3) = self.dims;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if n1 == 0 || n2 == 0 || n3 == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.rank == 0 || self.rank > n3 {
            return bad(format!("rank must lie in 1..={n3}"));
        }
        if self.anomalies > n1 * n2 {
            return bad(format!("at most {} anomalies fit the grid", n1 * n2));
        }
        if self.anomalies > 0 && self.rank == n3 {
            return bad("anomalies need rank < bands".into());
        }
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return bad("magnitude must be nonnegative".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub observed: Tensor3,
    pub truth: Mask,
    pub background: Tensor3,
    pub anomalies: Tensor3,
    pub noise: Tensor3,
    /// Spectral basis of the background (`n3 × r`, orthonormal).
    pub basis: Matrix,
}

/// Orthonormal `n3 × r` basis with a constant first column.
fn spectral_basis(rng: &mut ChaCha8Rng, n3: usize, r: usize) -> Result<Matrix> {
    let mut m = Matrix::from_fn(n3, r, |_, _| StandardNormal.sample(rng));
    m.column_mut(0).fill(1.0);
    let q = m.qr().q();
    let mut e = q.columns(0, r).into_owned();
    if e[(0, 0)] < 0.0 {
        e.column_mut(0).neg_mut();
    }
    Ok(project_stiefel(&e)?.point.into_matrix())
}

/// Sum of a few Gaussian bumps: one smooth eigenimage.
fn smooth_field(rng: &mut ChaCha8Rng, n1: usize, n2: usize) -> Vec<f64> {
    let scale = n1.min(n2) as f64;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let ci = rng.random_range(0.0..n1 as f64);
            let cj = rng.random_range(0.0..n2 as f64);
            let width = scale * rng.random_range(0.12..0.3);
            let amp = rng.random_range(-1.0..1.0);
            (ci, cj, width, amp)
        })
        .collect();
    let mut out = Vec::with_capacity(n1 * n2);
    for j in 0..n2 {
        for i in 0..n1 {
            let v = bumps
                .iter()
                .map(|&(ci, cj, w, a)| {
                    let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                    a * (-d2 / (2.0 * w * w)).exp()
                })
                .sum();
            out.push(v);
        }
    }
    out
}

pub fn synth_scene(spec: &SyntheticSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let (n1, n2, n3) = spec.dims;
    let r = spec.rank;
    let pixels = n1 * n2;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let basis = spectral_basis(&mut rng, n3, r)?;
    let mut z = Tensor3::zeros((n1, n2, r));
    for k in 0..r {
        let mut field = smooth_field(&mut rng, n1, n2);
        if k > 0 {
            // zero-mean, RMS decaying with k, so every component keeps a clear
            // share of the energy
            let mean = field.iter().sum::<f64>() / pixels as f64;
            let rms = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pixels as f64).sqrt();
            let weight = 0.8f64.powi(k as i32 - 1) / rms.max(f64::MIN_POSITIVE);
            field.iter_mut().for_each(|v| *v = (*v - mean) * weight);
        }
        z.band_mut(k).copy_from_slice(&field);
    }
    // map the background range onto [0, 1] through the constant basis column
    let raw = z.mode3_product(&basis)?;
    let (lo, hi) = raw
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    // adding c to every entry of L adds c / E[0, 0] to the first eigenimage
    let offset = -lo / basis[(0, 0)];
    for v in z.data_mut() {
        *v /= span;
    }
    for v in z.band_mut(0) {
        *v += offset / span;
    }
    let background = z.mode3_product(&basis)?;

    let mut anomalies = Tensor3::zeros((n1, n2, n3));
    let mut truth = vec![false; pixels];
    let chosen = index::sample(&mut rng, pixels, spec.anomalies).into_vec();
    for &p in &chosen {
        truth[p] = true;
        let raw = nalgebra::DVector::from_fn(n3, |_, _| StandardNormal.sample(&mut rng));
        let off = &raw - &basis * (basis.transpose() * &raw);
        let norm = off.norm();
        let sig = if norm > 0.0 {
            off * (spec.magnitude * (n3 as f64).sqrt() / norm)
        } else {
            off
        };
        for k in 0..n3 {
            anomalies.data_mut()[p + pixels * k] = sig[k];
        }
    }

    let noise = if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Tensor3::from_fn((n1, n2, n3), |_, _, _| normal.sample(&mut rng))
    } else {
        Tensor3::zeros((n1, n2, n3))
    };
    let observed = background.lincomb(1.0, &anomalies, 1.0)?.lincomb(1.0, &noise, 1.0)?;
    Ok(SyntheticScene {
        observed,
        truth: Mask::new((n1, n2), truth)?,
        background,
        anomalies,
        noise,
        basis,
    })
}
