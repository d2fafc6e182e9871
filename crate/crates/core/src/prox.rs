//! Sparsity-promoting penalties `ψ`, the group measure
//! `‖S‖_{2,ψ} = Σ_ij ψ(‖s_{ij:}‖₂)` and their exact proximal maps.
//!
//! All scalar proximal maps solve `min_u τ ψ(u) + ½ (u − x)²` globally. At
//! points where the minimizer is not unique the smaller-magnitude one is
//! returned, so runs are reproducible.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SparsityPenalty {
    /// `ψ(t) = |t|`.
    L1,
    /// `ψ(t) = (|t| + ε)^p − ε^p` with `p ∈ (0, 1)`, `ε > 0`.
    RelaxedLp { p: f64, eps: f64 },
    /// Minimax concave penalty, `θ > λ > 0`.
    Mcp { lambda: f64, theta: f64 },
    /// Smoothly clipped absolute deviation, `λ > 0`, `θ > 2`.
    Scad { lambda: f64, theta: f64 },
}

impl SparsityPenalty {
    pub fn relaxed_lp(p: f64, eps: f64) -> Result<Self> {
        Self::RelaxedLp { p, eps }.validated()
    }

    pub fn mcp(lambda: f64, theta: f64) -> Result<Self> {
        Self::Mcp { lambda, theta }.validated()
    }

    pub fn scad(lambda: f64, theta: f64) -> Result<Self> {
        Self::Scad { lambda, theta }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            Self::L1 => true,
            Self::RelaxedLp { p, eps } => p > 0.0 && p < 1.0 && eps > 0.0 && eps.is_finite(),
            Self::Mcp { lambda, theta } => lambda > 0.0 && theta > lambda && theta.is_finite(),
            Self::Scad { lambda, theta } => lambda > 0.0 && theta > 2.0 && theta.is_finite(),
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::InvalidParameter(format!("penalty parameters out of domain: {self:?}")))
        }
    }

    /// `ψ(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        let a = t.abs();
        match *self {
            Self::L1 => a,
            Self::RelaxedLp { p, eps } => (a + eps).powf(p) - eps.powf(p),
            Self::Mcp { lambda, theta } => {
                if a <= theta * lambda {
                    lambda * a - a * a / (2.0 * theta)
                } else {
                    theta * lambda * lambda / 2.0
                }
            }
            Self::Scad { lambda, theta } => {
                if a <= lambda {
                    lambda * a
                } else if a <= theta * lambda {
                    (-a * a + 2.0 * theta * lambda * a - lambda * lambda) / (2.0 * (theta - 1.0))
                } else {
                    (theta + 1.0) * lambda * lambda / 2.0
                }
            }
        }
    }

    /// Weak-convexity modulus used for step-size validation: the smallest
    /// `ρ` we can certify such that `ψ + (ρ/2) t²` is convex.
    ///
    /// For the relaxed ℓp penalty two values circulate: the commonly stated
    /// `p ε^{p−1}` ([`Self::weak_convexity_nominal`]) and the curvature bound
    /// `p (1−p) ε^{p−2}` obtained from `inf ψ''`
    /// ([`Self::weak_convexity_curvature`]). The larger of the two is returned.
    pub fn weak_convexity(&self) -> f64 {
        self.weak_convexity_nominal().max(self.weak_convexity_curvature())
    }

    pub fn weak_convexity_nominal(&self) -> f64 {
        match *self {
            Self::L1 => 0.0,
            Self::RelaxedLp { p, eps } => p * eps.powf(p - 1.0),
            Self::Mcp { theta, .. } => 1.0 / theta,
            Self::Scad { theta, .. } => 1.0 / (theta - 1.0),
        }
    }

    pub fn weak_convexity_curvature(&self) -> f64 {
        match *self {
            Self::RelaxedLp { p, eps } => p * (1.0 - p) * eps.powf(p - 2.0),
            _ => self.weak_convexity_nominal(),
        }
    }

    /// A minimizer of `τ ψ(u) + ½ (u − x)²`.
    pub fn prox(&self, tau: f64, x: f64) -> f64 {
        debug_assert!(tau > 0.0);
        let a = x.abs();
        if a == 0.0 {
            return 0.0;
        }
        let u = match *self {
            Self::L1 => (a - tau).max(0.0),
            Self::RelaxedLp { p, eps } => relaxed_lp_prox(p, eps, tau, a),
            Self::Mcp { lambda, theta } => self.best_of(tau, a, &mcp_candidates(lambda, theta, tau, a)),
            Self::Scad { lambda, theta } => {
                self.best_of(tau, a, &scad_candidates(lambda, theta, tau, a))
            }
        };
        u.copysign(x)
    }

    /// Proximal map of `τ ψ(‖·‖₂)` on a vector: radial shrinkage of `s`.
    pub fn group_prox(&self, tau: f64, s: &[f64]) -> Vec<f64> {
        let n = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = self.group_scale(tau, n);
        s.iter().map(|v| v * scale).collect()
    }

    /// The factor `prox(‖s‖)/‖s‖` applied by [`Self::group_prox`] (0 for `s = 0`).
    pub fn group_scale(&self, tau: f64, norm: f64) -> f64 {
        if norm == 0.0 {
            0.0
        } else {
            self.prox(tau, norm) / norm
        }
    }

    /// `‖S‖_{2,ψ}`.
    pub fn group_measure(&self, s: &Tensor3) -> f64 {
        s.fiber_norms().into_iter().map(|n| self.eval(n)).sum()
    }

    fn objective(&self, tau: f64, x: f64, u: f64) -> f64 {
        tau * self.eval(u) + 0.5 * (u - x) * (u - x)
    }

    /// Lowest-objective candidate; ties go to the smaller magnitude.
    fn best_of(&self, tau: f64, x: f64, candidates: &[f64]) -> f64 {
        let mut best = 0.0;
        let mut best_val = self.objective(tau, x, 0.0);
        for &u in candidates {
            let v = self.objective(tau, x, u);
            if v < best_val || (v == best_val && u < best) {
                best = u;
                best_val = v;
            }
        }
        best
    }
}

/// Candidates for MCP on `u ≥ 0`, one stationary point (or endpoint) per piece.
fn mcp_candidates(lambda: f64, theta: f64, tau: f64, x: f64) -> [f64; 4] {
    let knot = theta * lambda;
    let curv = 1.0 - tau / theta;
    let inner = if curv > 0.0 {
        ((x - tau * lambda) / curv).clamp(0.0, knot)
    } else {
        knot
    };
    [inner, knot, x.max(knot), 0.0]
}

fn scad_candidates(lambda: f64, theta: f64, tau: f64, x: f64) -> [f64; 5] {
    let knot2 = theta * lambda;
    let first = (x - tau * lambda).clamp(0.0, lambda);
    let curv = 1.0 - tau / (theta - 1.0);
    let middle = if curv > 0.0 {
        ((x - tau * theta * lambda / (theta - 1.0)) / curv).clamp(lambda, knot2)
    } else {
        lambda
    };
    [first, middle, knot2, x.max(knot2), lambda]
}

/// Relaxed ℓp prox for `x > 0`.
///
/// `f(u) = τ((u+ε)^p − ε^p) + ½(u−x)²` has a convex derivative on `u ≥ 0`,
/// so on `[0, x]` it has at most one interior local minimizer: the larger root
/// of `f'`, to the right of the inflection point. That root is found by
/// safeguarded Newton and compared against `u = 0`.
fn relaxed_lp_prox(p: f64, eps: f64, tau: f64, x: f64) -> f64 {
    let df = |u: f64| tau * p * (u + eps).powf(p - 1.0) + u - x;
    let d2f = |u: f64| 1.0 + tau * p * (p - 1.0) * (u + eps).powf(p - 2.0);
    let f = |u: f64| tau * ((u + eps).powf(p) - eps.powf(p)) + 0.5 * (u - x) * (u - x);

    // inflection: f'' = 0
    let infl = (tau * p * (1.0 - p)).powf(1.0 / (2.0 - p)) - eps;
    let mut lo = infl.max(0.0);
    let mut hi = x;
    if lo >= hi || df(lo) >= 0.0 {
        return 0.0;
    }
    // f' is increasing and convex on [lo, hi]; Newton from the right stays right.
    let mut u = hi;
    for _ in 0..200 {
        let g = df(u);
        if g > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let h = d2f(u);
        let mut next = if h > 0.0 { u - g / h } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 4.0 * f64::EPSILON * u.max(f64::MIN_POSITIVE) || hi - lo <= f64::EPSILON * hi {
            u = next;
            break;
        }
        u = next;
    }
    let fu = f(u);
    let f0 = 0.5 * x * x;
    if fu < f0 {
        u
    } else {
        0.0
    }
}
