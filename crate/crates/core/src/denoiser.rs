//! Gradient-step proximal denoiser `D = Id − ∇g` with `g(x) = ½‖x − N(x)‖²`,
//! its relaxed form `D^γ = Id − γ∇g`, the shifted form
//! `D̃(z) = (1/a)[D^γ(a z + b) − b]`, and the potential `φ̃` for which
//! `D̃ = prox_φ̃`.
//!
//! The smoother `N` shipped here is a symmetric linear filter `B` (separable
//! periodic 3-tap kernel `[w, 1−2w, w]`, `0 ≤ w < 1/4`). Its spectrum lies in
//! `(0, 1]`, so `∇g = (I − B)²` is Lipschitz with constant below one and the
//! inverse `D̃⁻¹` is a well-conditioned linear solve. That keeps the implicit
//! prior, and hence the full objective, exactly evaluable.
//!
//! Images are `n1 × n2` slices stored with the first index fastest, the same
//! layout as one band of a [`Tensor3`].

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor3;

/// `(n1, n2)` of an image.
pub type ImageShape = (usize, usize);

/// Largest kernel side weight. Must stay below 1/4.
pub const MAX_WEIGHT: f64 = 0.24;
/// Noise level at which the kernel reaches ~63% of its maximum width.
pub const SIGMA_SCALE: f64 = 0.01;
/// Bounds of the per-band noise-level estimate.
pub const SIGMA_RANGE: (f64, f64) = (1e-4, 0.5);

const CG_TOL: f64 = 1e-14;
const PREIMAGE_TOL: f64 = 1e-8;

/// Separable periodic smoother with kernel `[w, 1−2w, w]` on both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSmoother {
    weight: f64,
}

impl LinearSmoother {
    pub fn new(weight: f64) -> Result<Self> {
        if !(0.0..0.25).contains(&weight) {
            return Err(Error::InvalidParameter(format!(
                "smoother weight must lie in [0, 0.25), got {weight}"
            )));
        }
        Ok(Self { weight })
    }

    /// Kernel for noise level `sigma`: `w = 0.24 (1 − exp(−σ / 0.01))`.
    pub fn for_sigma(sigma: f64) -> Self {
        let w = MAX_WEIGHT * (1.0 - (-sigma.max(0.0) / SIGMA_SCALE).exp());
        Self { weight: w }
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn apply(&self, shape: ImageShape, x: &[f64]) -> Vec<f64> {
        let (n1, n2) = shape;
        let w = self.weight;
        let c = 1.0 - 2.0 * w;
        let mut tmp = vec![0.0; x.len()];
        for j in 0..n2 {
            let col = &x[j * n1..(j + 1) * n1];
            let out = &mut tmp[j * n1..(j + 1) * n1];
            for i in 0..n1 {
                let up = col[(i + n1 - 1) % n1];
                let down = col[(i + 1) % n1];
                out[i] = w * up + c * col[i] + w * down;
            }
        }
        let mut out = vec![0.0; x.len()];
        for j in 0..n2 {
            let left = (j + n2 - 1) % n2;
            let right = (j + 1) % n2;
            for i in 0..n1 {
                out[i + j * n1] = w * tmp[i + left * n1] + c * tmp[i + j * n1] + w * tmp[i + right * n1];
            }
        }
        out
    }

    /// Smallest eigenvalue of the 1-D periodic kernel on `n` samples.
    fn min_axis_eigenvalue(&self, n: usize) -> f64 {
        (0..n)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                1.0 - 2.0 * self.weight * (1.0 - theta.cos())
            })
            .fold(1.0, f64::min)
    }
}

/// The smoother `N` behind `g(x) = ½‖x − N(x)‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothPrior {
    /// `N = Id`, hence `g ≡ 0` and the denoiser is the identity.
    Identity,
    Linear(LinearSmoother),
}

impl SmoothPrior {
    fn residual(&self, shape: ImageShape, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Identity => vec![0.0; x.len()],
            Self::Linear(b) => {
                let bx = b.apply(shape, x);
                x.iter().zip(bx).map(|(a, c)| a - c).collect()
            }
        }
    }

    /// `g(x) = ½‖x − N(x)‖²`.
    pub fn g(&self, shape: ImageShape, x: &[f64]) -> f64 {
        0.5 * self.residual(shape, x).iter().map(|v| v * v).sum::<f64>()
    }

    /// `∇g(x) = (I − B)ᵀ(I − B) x = (I − B)² x` for symmetric `B`.
    pub fn grad_g(&self, shape: ImageShape, x: &[f64]) -> Vec<f64> {
        let r = self.residual(shape, x);
        self.residual(shape, &r)
    }

    /// Exact Lipschitz constant of `∇g` on images of this shape,
    /// `(1 − μ_min)²` with `μ_min` the smallest eigenvalue of `B`.
    pub fn lipschitz(&self, shape: ImageShape) -> f64 {
        match self {
            Self::Identity => 0.0,
            Self::Linear(b) => {
                let mu = b.min_axis_eigenvalue(shape.0) * b.min_axis_eigenvalue(shape.1);
                (1.0 - mu).powi(2)
            }
        }
    }

    /// Shape-independent upper bound on [`Self::lipschitz`]:
    /// `(1 − (1 − 4w)²)²`.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            Self::Identity => 0.0,
            Self::Linear(b) => {
                let mu = (1.0 - 4.0 * b.weight).powi(2);
                (1.0 - mu).powi(2)
            }
        }
    }

    /// Power-iteration estimate of the largest eigenvalue of `(I − B)²`.
    pub fn lipschitz_power_iteration(&self, shape: ImageShape, iterations: usize) -> f64 {
        let n = shape.0 * shape.1;
        // Deterministic start with energy at every frequency.
        let mut v: Vec<f64> = (0..n)
            .map(|k| {
                let (i, j) = (k % shape.0, k / shape.0);
                let s = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                s + 0.37 * ((k as f64) * 0.618_033_988_7).fract()
            })
            .collect();
        let mut est = 0.0;
        for _ in 0..iterations {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let w = self.grad_g(shape, &v);
            est = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            v = w;
        }
        est
    }
}

/// Which smoother family the denoiser uses for every band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorFamily {
    Identity,
    #[default]
    LinearSmoother,
}

impl PriorFamily {
    pub fn prior_for(&self, sigma: f64) -> SmoothPrior {
        match self {
            Self::Identity => SmoothPrior::Identity,
            Self::LinearSmoother => SmoothPrior::Linear(LinearSmoother::for_sigma(sigma)),
        }
    }
}

/// Shifted, relaxed denoiser bank: one smoother per eigenimage band, and the
/// weight `λ` of the resulting prior `Φ_Σ(Z) = λ Σ_n φ̃_n(Z_{::n})`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserSpec {
    priors: Vec<SmoothPrior>,
    sigmas: Vec<f64>,
    gamma: f64,
    a: f64,
    b: f64,
    lambda: f64,
}

impl DenoiserSpec {
    pub fn new(
        family: PriorFamily,
        sigmas: Vec<f64>,
        gamma: f64,
        a: f64,
        b: f64,
        lambda: f64,
    ) -> Result<Self> {
        let priors = sigmas.iter().map(|&s| family.prior_for(s)).collect();
        Self::with_priors(priors, sigmas, gamma, a, b, lambda)
    }

    pub fn with_priors(
        priors: Vec<SmoothPrior>,
        sigmas: Vec<f64>,
        gamma: f64,
        a: f64,
        b: f64,
        lambda: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if priors.is_empty() || priors.len() != sigmas.len() {
            return bad("need one noise level per band".into());
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad(format!("noise levels must be finite and nonnegative: {sigmas:?}"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return bad(format!("relaxation γ must lie in [0, 1], got {gamma}"));
        }
        if !(a > 0.0 && a.is_finite()) || !b.is_finite() {
            return bad(format!("shift needs a > 0 and finite b, got a={a}, b={b}"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return bad(format!("prior weight λ must be positive, got {lambda}"));
        }
        for (n, p) in priors.iter().enumerate() {
            if gamma * p.lipschitz_bound() >= 1.0 {
                return bad(format!("band {n}: γ·L ≥ 1, denoiser is not a proximal map"));
            }
        }
        Ok(Self {
            priors,
            sigmas,
            gamma,
            a,
            b,
            lambda,
        })
    }

    pub fn bands(&self) -> usize {
        self.priors.len()
    }

    pub fn prior(&self, band: usize) -> Result<&SmoothPrior> {
        self.priors.get(band).ok_or_else(|| Error::IndexOutOfRange {
            index: vec![band],
            dims: vec![self.priors.len()],
        })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn shift(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Weak-convexity modulus of `Φ_Σ`: `λ max_n γL_n / (γL_n + 1)`, with
    /// the shape-independent Lipschitz bound for each band.
    pub fn weak_convexity(&self) -> f64 {
        let worst = self
            .priors
            .iter()
            .map(|p| {
                let gl = self.gamma * p.lipschitz_bound();
                gl / (gl + 1.0)
            })
            .fold(0.0, f64::max);
        self.lambda * worst
    }

    /// Unshifted relaxed denoiser `D^γ(y) = y − γ ∇g(y)`.
    pub fn relaxed_denoise(&self, band: usize, shape: ImageShape, y: &[f64]) -> Result<Vec<f64>> {
        let prior = self.prior(band)?;
        check_image(shape, y)?;
        if self.gamma == 0.0 || matches!(prior, SmoothPrior::Identity) {
            return Ok(y.to_vec());
        }
        let grad = prior.grad_g(shape, y);
        Ok(y.iter().zip(grad).map(|(v, g)| v - self.gamma * g).collect())
    }

    /// `D̃(x) = (1/a)[D^γ(a x + b) − b]`.
    pub fn denoise(&self, band: usize, shape: ImageShape, x: &[f64]) -> Result<Vec<f64>> {
        let shifted = self.shift_in(x);
        let out = self.relaxed_denoise(band, shape, &shifted)?;
        Ok(self.shift_out(&out))
    }

    /// Solves `D̃(p) = z` for `p`.
    pub fn inverse_denoise(&self, band: usize, shape: ImageShape, z: &[f64]) -> Result<Vec<f64>> {
        let prior = *self.prior(band)?;
        check_image(shape, z)?;
        if self.gamma == 0.0 || matches!(prior, SmoothPrior::Identity) {
            return Ok(z.to_vec());
        }
        if self.gamma * prior.lipschitz(shape) >= 1.0 {
            return Err(Error::NonInvertible(format!("band {band}: γ·L ≥ 1")));
        }
        // I − γ(I−B)² is symmetric positive definite: conjugate gradients.
        let rhs = self.shift_in(z);
        let gamma = self.gamma;
        let apply = |v: &[f64]| -> Vec<f64> {
            let g = prior.grad_g(shape, v);
            v.iter().zip(g).map(|(x, gx)| x - gamma * gx).collect()
        };
        let y = conjugate_gradient(apply, &rhs, CG_TOL, 10 * rhs.len() + 100)
            .ok_or_else(|| Error::NonInvertible(format!("band {band}: linear solve did not converge")))?;
        Ok(self.shift_out(&y))
    }

    /// `φ̃(z) = (1/a²) φ^γ(a z + b)` evaluated through a preimage `p` with
    /// `D̃(p) = z`: `φ^γ(x) = γ g(y) − ½‖y − x‖²` for `y = a p + b`.
    pub fn phi_eval(&self, band: usize, shape: ImageShape, z: &[f64], preimage: &[f64]) -> Result<f64> {
        let prior = *self.prior(band)?;
        check_image(shape, z)?;
        check_image(shape, preimage)?;
        let mapped = self.denoise(band, shape, preimage)?;
        let scale = 1.0 + z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dev = mapped.iter().zip(z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if dev > PREIMAGE_TOL * scale {
            return Err(Error::InconsistentPreimage(dev));
        }
        if self.gamma == 0.0 || matches!(prior, SmoothPrior::Identity) {
            return Ok(0.0);
        }
        let y = self.shift_in(preimage);
        let x = self.shift_in(z);
        let gap = 0.5 * y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let phi = self.gamma * prior.g(shape, &y) - gap;
        Ok((phi / (self.a * self.a)).max(0.0))
    }

    /// `Φ_Σ(Z) = λ Σ_n φ̃_n(Z_{::n})`, each band evaluated through its preimage.
    pub fn prior_value(&self, z: &Tensor3, preimages: &Tensor3) -> Result<f64> {
        if z.dims() != preimages.dims() {
            return Err(shape_err(format!("{:?}", z.dims()), format!("{:?}", preimages.dims())));
        }
        let (n1, n2, r) = z.dims();
        if r != self.bands() {
            return Err(shape_err(format!("{} bands", self.bands()), r));
        }
        let mut total = 0.0;
        for n in 0..r {
            total += self.phi_eval(n, (n1, n2), z.band(n), preimages.band(n))?;
        }
        Ok(self.lambda * total)
    }

    /// Applies `D̃` to every band of `zhat`.
    pub fn denoise_bands(&self, zhat: &Tensor3) -> Result<Tensor3> {
        use rayon::prelude::*;
        let (n1, n2, r) = zhat.dims();
        if r != self.bands() {
            return Err(shape_err(format!("{} bands", self.bands()), r));
        }
        let bands: Vec<Vec<f64>> = (0..r)
            .into_par_iter()
            .map(|n| self.denoise(n, (n1, n2), zhat.band(n)))
            .collect::<Result<_>>()?;
        Tensor3::new((n1, n2, r), bands.concat())
    }

    fn shift_in(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.a * v + self.b).collect()
    }

    fn shift_out(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.b) / self.a).collect()
    }
}

/// Gain `‖(I − B₀) e₀‖₂` of the high-pass residual on white noise.
fn highpass_gain() -> f64 {
    let w = MAX_WEIGHT;
    let taps = [w, 1.0 - 2.0 * w, w];
    let mut sum = 0.0;
    for (i, ti) in taps.iter().enumerate() {
        for (j, tj) in taps.iter().enumerate() {
            let k = ti * tj;
            let v = if i == 1 && j == 1 { 1.0 - k } else { -k };
            sum += v * v;
        }
    }
    sum.sqrt()
}

fn highpass(shape: ImageShape, band: &[f64], a: f64, b: f64) -> Vec<f64> {
    let x: Vec<f64> = band.iter().map(|v| a * v + b).collect();
    let smooth = LinearSmoother { weight: MAX_WEIGHT }.apply(shape, &x);
    x.iter().zip(smooth).map(|(u, s)| u - s).collect()
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    v.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Robust white-noise level of residuals `r = x − B₀x` (median absolute
/// deviation, scaled to a standard deviation and divided by the filter
/// gain), clamped to `[1e-4, 0.5]`.
fn mad_sigma(mut resid: Vec<f64>) -> f64 {
    if resid.len() < 2 {
        return SIGMA_RANGE.0;
    }
    let med = median(&mut resid);
    let mut dev: Vec<f64> = resid.iter().map(|r| (r - med).abs()).collect();
    let mad = median(&mut dev);
    (1.482_602_218_505_602 * mad / highpass_gain()).clamp(SIGMA_RANGE.0, SIGMA_RANGE.1)
}

/// Noise level of one band, measured on the shifted image `a x + b` from the
/// high-pass residual `x − B₀x` (`B₀` the widest shipped kernel). Smooth
/// structure and isolated outliers barely move the median-based estimate.
pub fn estimate_sigma(shape: ImageShape, band: &[f64], a: f64, b: f64) -> f64 {
    mad_sigma(highpass(shape, band, a, b))
}

/// One noise level shared by every band of `z`, estimated from the pooled
/// high-pass residuals.
///
/// Eigenimages of a cube with i.i.d. noise, taken along an orthonormal
/// spectral basis, all carry noise of the same level. A common estimate keeps
/// the prior invariant under rotations of the eigenimages, which matches the
/// rotation freedom of the factorization `Z ×₃ E`.
pub fn estimate_sigmas(z: &Tensor3, a: f64, b: f64) -> Vec<f64> {
    let (n1, n2, r) = z.dims();
    let pooled: Vec<f64> = (0..r).flat_map(|n| highpass((n1, n2), z.band(n), a, b)).collect();
    vec![mad_sigma(pooled); r]
}

fn check_image(shape: ImageShape, x: &[f64]) -> Result<()> {
    if shape.0 * shape.1 != x.len() || x.is_empty() {
        return Err(shape_err(format!("{}×{} image", shape.0, shape.1), x.len()));
    }
    Ok(())
}

fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Option<Vec<f64>> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(rhs, rhs).sqrt();
    let mut x = rhs.to_vec();
    let ax = apply(&x);
    let mut r: Vec<f64> = rhs.iter().zip(ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    if bnorm == 0.0 {
        return Some(vec![0.0; rhs.len()]);
    }
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            return Some(x);
        }
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
    }
    (rr.sqrt() <= 1e3 * tol * bnorm).then_some(x)
}
