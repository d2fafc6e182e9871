//! Proximal block coordinate descent over `(S, E, Z)` with a plug-and-play
//! denoiser step.
//!
//! The objective is
//!
//! ```text
//! F(Z, E, S) = δ/2 ‖Z ×₃ E + S − O‖²_F + τ ‖S‖_{2,ψ} + Φ_Σ(Z),   EᵀE = I_r
//! ```
//!
//! and one sweep performs, in order:
//!
//! * `S ← prox_{τ̃ ‖·‖_{2,ψ}}(S − α̃_S (S + Z ×₃ E − O))`, `τ̃ = τ/(δ+α_S)`,
//!   `α̃_S = δ/(δ+α_S)`, fiber by fiber;
//! * `E ← Proj_Stiefel(E + (δ/α_E) (O − S)_(3) Z_(3)ᵀ)`;
//! * `Z ← D̃(Ẑ)` band by band, `Ẑ = Z − α̃_Z (Z − (O − S) ×₃ Eᵀ)`,
//!   `α̃_Z = δ/(δ+α_Z)`.
//!
//! Each step exactly minimizes its block subproblem, so `F` never increases
//! and drops by at least `c₁/2 (‖ΔS‖² + ‖ΔE‖² + ‖ΔZ‖²)`. The denoiser is the
//! proximal map of `φ̃` with unit weight, which matches the `Z` subproblem
//! exactly when the prior weight is `λ = δ + α_Z`; [`SolverConfig`] enforces
//! that coupling, so `λ` is not a free parameter.

use crate::denoiser::{estimate_sigmas, DenoiserSpec, PriorFamily};
use crate::error::{shape_err, Error, Result};
use crate::prox::SparsityPenalty;
use crate::stiefel::{cross_term, project_stiefel, riemannian_grad_h, StiefelPoint};
use crate::tensor::{Matrix, Tensor3};

/// Relative slack on `F` increases before a run is aborted.
pub const MONOTONE_SLACK: f64 = 1e-9;

/// Denoiser settings; the per-band noise levels are estimated from the
/// initial eigenimages unless given explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub family: PriorFamily,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub sigmas: Option<Vec<f64>>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            family: PriorFamily::LinearSmoother,
            gamma: 0.99,
            a: 0.2,
            b: 0.4,
            sigmas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Data-fit weight `δ`.
    pub delta: f64,
    /// Sparsity weight `τ`.
    pub tau: f64,
    /// Subspace rank `r`.
    pub rank: usize,
    pub alpha_s: f64,
    pub alpha_e: f64,
    pub alpha_z: f64,
    pub penalty: SparsityPenalty,
    pub denoiser: DenoiserConfig,
    pub max_iter: usize,
    /// Stop once `‖S^{k+1} − S^k‖_F / ‖S^k‖_F ≤ tol`.
    pub tol: f64,
}

impl SolverConfig {
    /// Defaults: `δ = 0.25`, `τ = 1`, all step parameters 0.01, relaxed ℓp
    /// penalty with `p = 0.1`, `ε = 1e-5`, denoiser shift `(0.2, 0.4)`,
    /// `γ = 0.99`, `tol = 1e-3`.
    pub fn with_rank(rank: usize) -> Self {
        Self {
            delta: 0.25,
            tau: 1.0,
            rank,
            alpha_s: 0.01,
            alpha_e: 0.01,
            alpha_z: 0.01,
            penalty: SparsityPenalty::RelaxedLp { p: 0.1, eps: 1e-5 },
            denoiser: DenoiserConfig::default(),
            max_iter: 500,
            tol: 1e-3,
        }
    }

    pub fn tau_tilde(&self) -> f64 {
        self.tau / (self.delta + self.alpha_s)
    }

    pub fn alpha_s_tilde(&self) -> f64 {
        self.delta / (self.delta + self.alpha_s)
    }

    pub fn alpha_e_tilde(&self) -> f64 {
        self.delta / self.alpha_e
    }

    pub fn alpha_z_tilde(&self) -> f64 {
        self.delta / (self.delta + self.alpha_z)
    }

    /// Prior weight `λ` forced by the coupling with the `Z` step.
    pub fn prior_weight(&self) -> f64 {
        self.delta + self.alpha_z
    }

    /// `ρ₁ = τ · ρ(ψ)`.
    pub fn rho1(&self) -> f64 {
        self.tau * self.penalty.weak_convexity()
    }

    /// Sufficient-decrease constant
    /// `c₁ = min{α_S + (α_S + δ − ρ₁)₊, α_E, α_Z + (α_Z + δ − ρ₂)₊}`.
    pub fn decrease_constant(&self, rho2: f64) -> f64 {
        let cs = self.alpha_s + (self.alpha_s + self.delta - self.rho1()).max(0.0);
        let cz = self.alpha_z + (self.alpha_z + self.delta - rho2).max(0.0);
        cs.min(self.alpha_e).min(cz)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !pos(self.delta) || !pos(self.tau) {
            return bad("δ and τ must be positive");
        }
        if self.rank == 0 {
            return bad("rank must be at least 1");
        }
        if !nonneg(self.alpha_s) || !nonneg(self.alpha_z) || !pos(self.alpha_e) {
            return bad("need α_S, α_Z ≥ 0 and α_E > 0");
        }
        if !pos(self.tol) {
            return bad("tol must be positive");
        }
        self.penalty.validated()?;
        let cs = self.alpha_s + (self.alpha_s + self.delta - self.rho1()).max(0.0);
        if cs <= 0.0 {
            return bad("α_S + (α_S + δ − ρ₁)₊ must be positive");
        }
        Ok(())
    }

    fn check_rho2(&self, rho2: f64) -> Result<()> {
        if self.alpha_z + (self.alpha_z + self.delta - rho2).max(0.0) <= 0.0 {
            return Err(Error::InvalidParameter("α_Z + (α_Z + δ − ρ₂)₊ must be positive".into()));
        }
        Ok(())
    }

    /// Resolves the denoiser for eigenimages `z` (estimating noise levels if
    /// none were given).
    pub fn build_denoiser(&self, z: &Tensor3) -> Result<DenoiserSpec> {
        let d = &self.denoiser;
        let sigmas = match &d.sigmas {
            Some(s) => s.clone(),
            None => estimate_sigmas(z, d.a, d.b),
        };
        if sigmas.len() != self.rank {
            return Err(shape_err(format!("{} noise levels", self.rank), sigmas.len()));
        }
        let spec = DenoiserSpec::new(d.family, sigmas, d.gamma, d.a, d.b, self.prior_weight())?;
        self.check_rho2(spec.weak_convexity())?;
        Ok(spec)
    }
}

/// Iterate `(Z, E, S)` plus the denoiser preimage needed to evaluate `Φ_Σ(Z)`.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub z: Tensor3,
    pub e: StiefelPoint,
    pub s: Tensor3,
    /// `Ẑ` with `Z = D̃(Ẑ)` band-wise; `None` until `Z` has passed through the
    /// denoiser.
    pub z_preimage: Option<Tensor3>,
    pub denoiser: DenoiserSpec,
    pub iteration: usize,
    /// The last `E` projection had a rank-deficient argument.
    pub rank_deficient: bool,
}

impl SolverState {
    /// Low-rank background `Z ×₃ E`.
    pub fn background(&self) -> Tensor3 {
        self.z.mode3_product(self.e.matrix()).expect("state shapes are consistent")
    }
}

/// Norms of the stationarity residuals `A_S`, `A_E`, `A_Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub s: f64,
    pub e: f64,
    pub z: f64,
}

/// One row of the iteration history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    /// `F^{k−1} − F^k − c₁/2 (‖ΔS‖² + ‖ΔE‖² + ‖ΔZ‖²)`; NaN at iteration 0.
    pub decrease_margin: f64,
    pub residuals: Residuals,
    /// `‖ΔS‖_F / ‖S^{k−1}‖_F` (absolute `‖ΔS‖_F` when `S^{k−1} = 0`).
    pub rel_ds: f64,
    pub ds: f64,
    pub de: f64,
    pub dz: f64,
    /// `‖Z^k ×₃ E^k − Z^{k−1} ×₃ E^{k−1}‖_F`.
    pub dl: f64,
    pub z_norm: f64,
    pub s_norm: f64,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, Default)]
pub struct History {
    pub records: Vec<IterationRecord>,
}

impl History {
    pub const CSV_HEADER: [&'static str; 7] =
        ["iter", "F", "decrease_margin", "res_S", "res_E", "res_Z", "rel_dS"];

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// CSV with header `iter,F,decrease_margin,res_S,res_E,res_Z,rel_dS`.
    /// Values use 17 significant digits; quantities undefined at iteration 0
    /// are written as `NaN`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                fmt_f64(r.objective),
                fmt_f64(r.decrease_margin),
                fmt_f64(r.residuals.s),
                fmt_f64(r.residuals.e),
                fmt_f64(r.residuals.z),
                fmt_f64(r.rel_ds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: SolverState,
    pub history: History,
    /// Sufficient-decrease constant `c₁` for this configuration.
    pub decrease_constant: f64,
    pub converged: bool,
}

fn check_observation(o: &Tensor3, cfg: &SolverConfig) -> Result<()> {
    let n3 = o.dims().2;
    if cfg.rank > n3 {
        return Err(Error::InvalidParameter(format!(
            "rank {} exceeds the number of bands {n3}",
            cfg.rank
        )));
    }
    Ok(())
}

/// Seeds the iteration: `E⁰` = leading `r` left singular vectors of `O_(3)`,
/// `Z⁰ = O ×₃ (E⁰)ᵀ`, `S⁰ = 0`. No denoiser preimage exists yet; see
/// [`prime`].
pub fn initialize(o: &Tensor3, cfg: &SolverConfig) -> Result<SolverState> {
    cfg.validate()?;
    check_observation(o, cfg)?;
    let (n1, n2, n3) = o.dims();
    let r = cfg.rank;
    // Left singular vectors of O_(3) (n3 × n1n2) are the eigenvectors of the
    // n3 × n3 Gram matrix, which is cheap to form when n3 is small.
    let view = o.mode3_view();
    let gram = view.tr_mul(&view);
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Matrix::zeros(n3, r);
    for (c, &k) in order.iter().take(r).enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(k));
    }
    let e = project_stiefel(&basis)?.point;
    let z = o.mode3_contract(e.matrix())?;
    let denoiser = cfg.build_denoiser(&z)?;
    Ok(SolverState {
        z,
        e,
        s: Tensor3::zeros((n1, n2, n3)),
        z_preimage: None,
        denoiser,
        iteration: 0,
        rank_deficient: false,
    })
}

/// Passes the seed eigenimages once through the `Z` update so that `Φ_Σ` is
/// evaluable at iteration 0. The output becomes the reported `Z⁰`.
pub fn prime(state: &mut SolverState, o: &Tensor3, cfg: &SolverConfig) -> Result<()> {
    let s = state.s.clone();
    let e = state.e.clone();
    let (z, pre) = update_z(state, o, cfg, &s, &e)?;
    state.z = z;
    state.z_preimage = Some(pre);
    Ok(())
}

/// `S` block: group proximal step on `Ŝ = S − α̃_S (S + Z ×₃ E − O)`.
pub fn update_s(state: &SolverState, o: &Tensor3, cfg: &SolverConfig) -> Result<Tensor3> {
    let l = state.background();
    let a = cfg.alpha_s_tilde();
    // Ŝ = (1 − α̃) S + α̃ (O − L)
    let resid = o.lincomb(1.0, &l, -1.0)?;
    let shat = state.s.lincomb(1.0 - a, &resid, a)?;
    Ok(group_prox_fibers(&cfg.penalty, cfg.tau_tilde(), &shat))
}

/// Applies `group_prox` to every mode-3 fiber.
pub fn group_prox_fibers(penalty: &SparsityPenalty, tau: f64, shat: &Tensor3) -> Tensor3 {
    use rayon::prelude::*;
    let p = shat.pixels();
    let norms = shat.fiber_norms();
    let scales: Vec<f64> = norms.par_iter().map(|&n| penalty.group_scale(tau, n)).collect();
    let mut out = shat.clone();
    for band in out.data_mut().chunks_exact_mut(p) {
        for (v, s) in band.iter_mut().zip(&scales) {
            *v *= s;
        }
    }
    out
}

/// `E` block: projection of `E + (δ/α_E) (O − S)_(3) Z_(3)ᵀ` onto the
/// Stiefel manifold. The flag reports a rank-deficient argument.
pub fn update_e(
    state: &SolverState,
    o: &Tensor3,
    cfg: &SolverConfig,
    s_new: &Tensor3,
) -> Result<(StiefelPoint, bool)> {
    let cross = cross_term(&state.z, s_new, o)?;
    let ehat = state.e.matrix() + cross * cfg.alpha_e_tilde();
    let p = project_stiefel(&ehat)?;
    Ok((p.point, p.rank_deficient))
}

/// `Z` block: returns `(Z^{k+1}, Ẑ^k)` with `Z^{k+1} = D̃(Ẑ^k)` band-wise.
pub fn update_z(
    state: &SolverState,
    o: &Tensor3,
    cfg: &SolverConfig,
    s_new: &Tensor3,
    e_new: &StiefelPoint,
) -> Result<(Tensor3, Tensor3)> {
    let target = o.lincomb(1.0, s_new, -1.0)?.mode3_contract(e_new.matrix())?;
    let a = cfg.alpha_z_tilde();
    let zhat = state.z.lincomb(1.0 - a, &target, a)?;
    let z = state.denoiser.denoise_bands(&zhat)?;
    Ok((z, zhat))
}

/// `H = δ/2 ‖Z ×₃ E + S − O‖²_F`.
pub fn data_fit(z: &Tensor3, e: &StiefelPoint, s: &Tensor3, o: &Tensor3, delta: f64) -> Result<f64> {
    let l = z.mode3_product(e.matrix())?;
    let mut acc = 0.0;
    for ((lv, sv), ov) in l.data().iter().zip(s.data()).zip(o.data()) {
        let r = lv + sv - ov;
        acc += r * r;
    }
    Ok(0.5 * delta * acc)
}

/// `F(Z, E, S)`; fails when no denoiser preimage is available for `Z`.
pub fn objective(state: &SolverState, o: &Tensor3, cfg: &SolverConfig) -> Result<f64> {
    let pre = state.z_preimage.as_ref().ok_or(Error::MissingPreimage)?;
    let h = data_fit(&state.z, &state.e, &state.s, o, cfg.delta)?;
    let sparse = cfg.tau * cfg.penalty.group_measure(&state.s);
    let prior = state.denoiser.prior_value(&state.z, pre)?;
    Ok(h + sparse + prior)
}

/// Stationarity residuals at `curr` given its predecessor:
///
/// * `A_S = −α_S (S^k − S^{k−1}) + δ (Z^k ×₃ E^k − Z^{k−1} ×₃ E^{k−1})`
/// * `A_E = grad_E H(Z^k, E^k, S^k)`
/// * `A_Z = −α_Z (Z^k − Z^{k−1})`
pub fn residuals(prev: &SolverState, curr: &SolverState, o: &Tensor3, cfg: &SolverConfig) -> Result<Residuals> {
    let ds = curr.s.lincomb(1.0, &prev.s, -1.0)?;
    let dl = curr.background().lincomb(1.0, &prev.background(), -1.0)?;
    let a_s = ds.lincomb(-cfg.alpha_s, &dl, cfg.delta)?;
    let a_e = riemannian_grad_h(&curr.z, &curr.e, &curr.s, o, cfg.delta)?;
    let a_z = curr.z.distance(&prev.z)? * cfg.alpha_z;
    Ok(Residuals {
        s: a_s.frob_norm(),
        e: a_e.norm(),
        z: a_z,
    })
}

/// One full `S → E → Z` sweep.
pub fn step(state: &SolverState, o: &Tensor3, cfg: &SolverConfig) -> Result<SolverState> {
    let s = update_s(state, o, cfg)?;
    let (e, rank_deficient) = update_e(state, o, cfg, &s)?;
    let (z, pre) = update_z(state, o, cfg, &s, &e)?;
    Ok(SolverState {
        z,
        e,
        s,
        z_preimage: Some(pre),
        denoiser: state.denoiser.clone(),
        iteration: state.iteration + 1,
        rank_deficient,
    })
}

/// Absolute `‖ΔS‖_F` threshold used in place of the relative criterion while
/// `S^k = 0`: `tol · √(n1 n2 n3) · √ε_mach`.
fn zero_s_threshold(o: &Tensor3, tol: f64) -> f64 {
    tol * (o.len() as f64).sqrt() * f64::EPSILON.sqrt()
}

/// Runs the iteration to the stopping rule or `max_iter`.
///
/// The history holds the primed initialization at index 0 and one record per
/// sweep after it. An increase of `F` by more than [`MONOTONE_SLACK`]
/// (relative) aborts the run with [`Error::MonotonicityViolation`].
pub fn run(o: &Tensor3, cfg: &SolverConfig) -> Result<RunOutput> {
    let mut state = initialize(o, cfg)?;
    prime(&mut state, o, cfg)?;
    let c1 = cfg.decrease_constant(state.denoiser.weak_convexity());
    let mut f_prev = objective(&state, o, cfg)?;
    let nan = f64::NAN;
    let mut history = History {
        records: vec![IterationRecord {
            iter: 0,
            objective: f_prev,
            decrease_margin: nan,
            residuals: Residuals { s: nan, e: nan, z: nan },
            rel_ds: nan,
            ds: nan,
            de: nan,
            dz: nan,
            dl: nan,
            z_norm: state.z.frob_norm(),
            s_norm: 0.0,
            rank_deficient: false,
        }],
    };
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let next = step(&state, o, cfg)?;
        let f = objective(&next, o, cfg)?;
        if f - f_prev > MONOTONE_SLACK * f_prev.abs().max(1.0) {
            return Err(Error::MonotonicityViolation {
                iteration: next.iteration,
                previous: f_prev,
                current: f,
            });
        }
        let ds = next.s.distance(&state.s)?;
        let de = (next.e.matrix() - state.e.matrix()).norm();
        let dz = next.z.distance(&state.z)?;
        let dl = next.background().distance(&state.background())?;
        let s_prev_norm = state.s.frob_norm();
        let rel_ds = if s_prev_norm > 0.0 { ds / s_prev_norm } else { ds };
        let res = residuals(&state, &next, o, cfg)?;
        history.records.push(IterationRecord {
            iter: next.iteration,
            objective: f,
            decrease_margin: (f_prev - f) - 0.5 * c1 * (ds * ds + de * de + dz * dz),
            residuals: res,
            rel_ds,
            ds,
            de,
            dz,
            dl,
            z_norm: next.z.frob_norm(),
            s_norm: next.s.frob_norm(),
            rank_deficient: next.rank_deficient,
        });
        let stop = if s_prev_norm > 0.0 {
            rel_ds <= cfg.tol
        } else {
            ds <= zero_s_threshold(o, cfg.tol)
        };
        state = next;
        f_prev = f;
        if stop {
            converged = true;
            break;
        }
    }
    Ok(RunOutput {
        state,
        history,
        decrease_constant: c1,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize)) -> Tensor3 {
        Tensor3::from_fn(dims, |_, _, _| StandardNormal.sample(rng))
    }

    fn orthonormal(rng: &mut ChaCha8Rng, n: usize, r: usize) -> StiefelPoint {
        let m = Matrix::from_fn(n, r, |_, _| StandardNormal.sample(rng));
        project_stiefel(&m).unwrap().point
    }

    /// Rank-r background with smooth eigenimages plus optional noise.
    fn low_rank_scene(seed: u64, noise: f64) -> (Tensor3, StiefelPoint) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n1, n2, n3, r) = (12, 10, 8, 3);
        let e = orthonormal(&mut rng, n3, r);
        let z = Tensor3::from_fn((n1, n2, r), |i, j, k| {
            let (x, y) = (i as f64 / n1 as f64, j as f64 / n2 as f64);
            (1.0 + k as f64) * (2.0 * std::f64::consts::PI * (x + (k as f64 + 1.0) * y)).sin() + 3.0 / (1.0 + k as f64)
        });
        let mut o = z.mode3_product(e.matrix()).unwrap();
        if noise > 0.0 {
            let n = gaussian_tensor(&mut rng, o.dims());
            o = o.lincomb(1.0, &n, noise).unwrap();
        }
        (o, e)
    }

    fn identity_cfg(rank: usize) -> SolverConfig {
        let mut cfg = SolverConfig::with_rank(rank);
        cfg.denoiser.family = PriorFamily::Identity;
        cfg
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::with_rank(3);
        assert!(cfg.validate().is_ok());
        cfg.alpha_e = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::with_rank(3);
        cfg.delta = -1.0;
        assert!(cfg.validate().is_err());
        // α_S = 0 with ρ₁ ≥ δ violates the step-size hypothesis
        let mut cfg = SolverConfig::with_rank(3);
        cfg.alpha_s = 0.0;
        assert!(cfg.validate().is_err());
        cfg.penalty = SparsityPenalty::L1;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn prior_weight_coupling_and_constants() {
        let cfg = SolverConfig::with_rank(2);
        assert!((cfg.prior_weight() - 0.26).abs() < 1e-15);
        assert!((cfg.tau_tilde() - 1.0 / 0.26).abs() < 1e-12);
        assert!((cfg.alpha_s_tilde() - 0.25 / 0.26).abs() < 1e-15);
        assert!((cfg.alpha_e_tilde() - 25.0).abs() < 1e-12);
        // ρ₁ is huge for the default relaxed ℓp penalty: c₁ = α_S
        assert_eq!(cfg.decrease_constant(0.1), 0.01);
    }

    #[test]
    fn rank_above_bands_is_rejected() {
        let (o, _) = low_rank_scene(1, 0.0);
        assert!(initialize(&o, &identity_cfg(9)).is_err());
    }

    #[test]
    fn initialization_reconstructs_exact_low_rank() {
        let (o, _) = low_rank_scene(2, 0.0);
        let st = initialize(&o, &identity_cfg(3)).unwrap();
        assert!(st.background().distance(&o).unwrap() <= 1e-8 * o.frob_norm());
        assert_eq!(st.s.frob_norm(), 0.0);
        assert!(st.z_preimage.is_none());
        // full basis reconstructs anything
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let any = gaussian_tensor(&mut rng, (5, 4, 6));
        let st = initialize(&any, &identity_cfg(6)).unwrap();
        assert!(st.background().distance(&any).unwrap() <= 1e-10 * any.frob_norm());
        // zero observation
        let st = initialize(&Tensor3::zeros((4, 4, 5)), &identity_cfg(2)).unwrap();
        assert_eq!(st.z.frob_norm(), 0.0);
    }

    #[test]
    fn objective_requires_preimage() {
        let (o, _) = low_rank_scene(4, 0.0);
        let cfg = identity_cfg(3);
        let mut st = initialize(&o, &cfg).unwrap();
        assert!(matches!(objective(&st, &o, &cfg), Err(Error::MissingPreimage)));
        prime(&mut st, &o, &cfg).unwrap();
        assert!(objective(&st, &o, &cfg).is_ok());
    }

    #[test]
    fn objective_special_cases() {
        let (o, _) = low_rank_scene(5, 0.1);
        let cfg = identity_cfg(3);
        let mut st = initialize(&o, &cfg).unwrap();
        st.z = Tensor3::zeros(st.z.dims());
        st.z_preimage = Some(st.z.clone());
        st.s = o.clone();
        let f = objective(&st, &o, &cfg).unwrap();
        let expect = cfg.tau * cfg.penalty.group_measure(&o);
        assert!((f - expect).abs() <= 1e-12 * expect);
        st.s = Tensor3::zeros(o.dims());
        let f = objective(&st, &o, &cfg).unwrap();
        let expect = 0.5 * cfg.delta * o.frob_norm().powi(2);
        assert!((f - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn update_s_zero_residual_stays_zero() {
        let (o, _) = low_rank_scene(6, 0.0);
        let cfg = identity_cfg(3);
        let mut st = initialize(&o, &cfg).unwrap();
        prime(&mut st, &o, &cfg).unwrap();
        // O = Z ×₃ E exactly
        let o_exact = st.background();
        let s = update_s(&st, &o_exact, &cfg).unwrap();
        assert_eq!(s.frob_norm(), 0.0);
    }

    #[test]
    fn update_s_shrinks_single_anomalous_fiber() {
        let (o, _) = low_rank_scene(7, 0.0);
        let mut cfg = identity_cfg(3);
        cfg.penalty = SparsityPenalty::L1;
        let mut st = initialize(&o, &cfg).unwrap();
        prime(&mut st, &o, &cfg).unwrap();
        let mut o2 = st.background();
        let fiber = [3.0, -4.0, 0.0, 12.0, 0.0, 0.0, 0.0, 0.0];
        for (k, v) in fiber.iter().enumerate() {
            o2.set(4, 5, k, o2.get(4, 5, k) + v);
        }
        let s = update_s(&st, &o2, &cfg).unwrap();
        let norms = s.fiber_norms();
        let shat_norm = 13.0 * cfg.alpha_s_tilde();
        let expect = shat_norm - cfg.tau_tilde();
        let p = 4 + 12 * 5;
        for (q, n) in norms.iter().enumerate() {
            if q == p {
                assert!((n - expect).abs() < 1e-12);
            } else {
                assert_eq!(*n, 0.0);
            }
        }
        let got = s.fiber3(4, 5).unwrap();
        for (g, f) in got.iter().zip(fiber) {
            assert!((g - f * expect / 13.0).abs() < 1e-12);
        }
    }

    #[test]
    fn update_s_is_collinear_and_decreases_subproblem() {
        let (o, _) = low_rank_scene(8, 0.3);
        let cfg = identity_cfg(3);
        let mut st = initialize(&o, &cfg).unwrap();
        prime(&mut st, &o, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        st.s = gaussian_tensor(&mut rng, o.dims()).scaled(0.5);
        let s_new = update_s(&st, &o, &cfg).unwrap();
        let sub = |s: &Tensor3| {
            data_fit(&st.z, &st.e, s, &o, cfg.delta).unwrap()
                + cfg.tau * cfg.penalty.group_measure(s)
                + 0.5 * cfg.alpha_s * s.distance(&st.s).unwrap().powi(2)
        };
        assert!(sub(&s_new) <= sub(&st.s) + 1e-10);
        let a = cfg.alpha_s_tilde();
        let shat = st.s.lincomb(1.0 - a, &o.lincomb(1.0, &st.background(), -1.0).unwrap(), a).unwrap();
        for i in 0..12 {
            for j in 0..10 {
                let x = shat.fiber3(i, j).unwrap();
                let y = s_new.fiber3(i, j).unwrap();
                let c = y.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>();
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(ny == 0.0 || (c - ny * nx).abs() <= 1e-12 * nx * ny);
            }
        }
    }

    fn htilde(z: &Tensor3, e: &StiefelPoint, s: &Tensor3, o: &Tensor3, delta: f64) -> f64 {
        let c = cross_term(z, s, o).unwrap();
        -delta * e.matrix().dot(&c)
    }

    #[test]
    fn update_e_special_cases_and_descent() {
        let (o, _) = low_rank_scene(10, 0.2);
        let cfg = identity_cfg(3);
        let mut st = initialize(&o, &cfg).unwrap();
        prime(&mut st, &o, &cfg).unwrap();
        let (e, _) = update_e(&st, &o, &cfg, &o).unwrap();
        assert!((e.matrix() - st.e.matrix()).norm() < 1e-12);
        let mut zero_z = st.clone();
        zero_z.z = Tensor3::zeros(st.z.dims());
        let (e, _) = update_e(&zero_z, &o, &cfg, &st.s).unwrap();
        assert!((e.matrix() - st.e.matrix()).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            st.e = orthonormal(&mut rng, 8, 3);
            let s_new = gaussian_tensor(&mut rng, o.dims()).scaled(0.1);
            let (e_new, _) = update_e(&st, &o, &cfg, &s_new).unwrap();
            let lhs = htilde(&st.z, &e_new, &s_new, &o, cfg.delta)
                + 0.5 * cfg.alpha_e * (e_new.matrix() - st.e.matrix()).norm_squared();
            let rhs = htilde(&st.z, &st.e, &s_new, &o, cfg.delta);
            assert!(lhs <= rhs + 1e-10 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn update_z_identity_prior_gives_least_squares_coefficients() {
        let (o, _) = low_rank_scene(12, 0.2);
        let mut cfg = identity_cfg(3);
        cfg.alpha_z = 0.0;
        let mut st = initialize(&o, &cfg).unwrap();
        prime(&mut st, &o, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s_new = gaussian_tensor(&mut rng, o.dims()).scaled(0.1);
        let e_new = orthonormal(&mut rng, 8, 3);
        let (z, _) = update_z(&st, &o, &cfg, &s_new, &e_new).unwrap();
        let expect = o.lincomb(1.0, &s_new, -1.0).unwrap().mode3_contract(e_new.matrix()).unwrap();
        assert!(z.distance(&expect).unwrap() < 1e-12 * expect.frob_norm());

        let mut zero = st.clone();
        zero.z = Tensor3::zeros(st.z.dims());
        let (z, zhat) = update_z(&zero, &o, &cfg, &o, &e_new).unwrap();
        assert_eq!(z.frob_norm(), 0.0);
        assert_eq!(zhat.frob_norm(), 0.0);
    }

    #[test]
    fn update_z_decreases_subproblem_with_smoother() {
        let (o, _) = low_rank_scene(14, 0.2);
        let cfg = SolverConfig::with_rank(3);
        let mut st = initialize(&o, &cfg).unwrap();
        prime(&mut st, &o, &cfg).unwrap();
        let s_new = update_s(&st, &o, &cfg).unwrap();
        let (e_new, _) = update_e(&st, &o, &cfg, &s_new).unwrap();
        let (z_new, pre) = update_z(&st, &o, &cfg, &s_new, &e_new).unwrap();
        let sub = |z: &Tensor3, pre: &Tensor3| {
            data_fit(z, &e_new, &s_new, &o, cfg.delta).unwrap()
                + st.denoiser.prior_value(z, pre).unwrap()
                + 0.5 * cfg.alpha_z * z.distance(&st.z).unwrap().powi(2)
        };
        let before = sub(&st.z, st.z_preimage.as_ref().unwrap());
        let after = sub(&z_new, &pre);
        assert!(after <= before + 1e-10 * before);
    }

    #[test]
    fn residuals_specializations() {
        let (o, _) = low_rank_scene(15, 0.0);
        let cfg = identity_cfg(3);
        let mut st = initialize(&o, &cfg).unwrap();
        prime(&mut st, &o, &cfg).unwrap();
        let r = residuals(&st, &st, &o, &cfg).unwrap();
        assert_eq!(r.s, 0.0);
        assert_eq!(r.z, 0.0);
        assert!(r.e <= 1e-8);

        let mut cfg0 = identity_cfg(3);
        cfg0.alpha_s = 0.0;
        cfg0.alpha_z = 0.0;
        cfg0.penalty = SparsityPenalty::L1;
        let next = step(&st, &o, &cfg0).unwrap();
        let r = residuals(&st, &next, &o, &cfg0).unwrap();
        assert_eq!(r.z, 0.0);
        let dl = next.background().distance(&st.background()).unwrap();
        assert!((r.s - cfg0.delta * dl).abs() <= 1e-12);
    }

    #[test]
    fn exact_background_converges_with_empty_s() {
        let (o, _) = low_rank_scene(16, 0.0);
        let out = run(&o, &identity_cfg(3)).unwrap();
        let st = &out.state;
        assert!(out.converged);
        assert!(st.s.frob_norm() <= 1e-6 * o.frob_norm());
        assert!(st.background().distance(&o).unwrap() <= 1e-6 * o.frob_norm());
    }

    #[test]
    fn zero_iterations_return_primed_initialization() {
        let (o, _) = low_rank_scene(17, 0.1);
        let mut cfg = SolverConfig::with_rank(3);
        cfg.max_iter = 0;
        let out = run(&o, &cfg).unwrap();
        let mut expect = initialize(&o, &cfg).unwrap();
        prime(&mut expect, &o, &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.state.z, expect.z);
        assert_eq!(out.state.e, expect.e);
        assert_eq!(out.state.s, expect.s);
    }

    #[test]
    fn objective_is_monotone_on_random_instance() {
        let (o, _) = low_rank_scene(18, 0.3);
        let mut cfg = SolverConfig::with_rank(3);
        cfg.max_iter = 50;
        cfg.tol = 1e-300;
        let out = run(&o, &cfg).unwrap();
        for w in out.history.records.windows(2) {
            assert!(w[1].objective <= w[0].objective + MONOTONE_SLACK * w[0].objective);
            assert!(w[1].decrease_margin >= -1e-9, "{:?}", w[1]);
        }
        for r in &out.history.records {
            assert!(r.objective >= 0.0 && r.objective.is_finite());
        }
    }

    #[test]
    fn history_csv_layout() {
        let (o, _) = low_rank_scene(19, 0.1);
        let mut cfg = SolverConfig::with_rank(3);
        cfg.max_iter = 3;
        cfg.tol = 1e-300;
        let out = run(&o, &cfg).unwrap();
        let mut buf = Vec::new();
        out.history.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,F,decrease_margin,res_S,res_E,res_Z,rel_dS");
        assert_eq!(lines.len(), 1 + out.history.len());
        assert!(lines[1].starts_with("0,") && lines[1].contains("NaN"));
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }
}
