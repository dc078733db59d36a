//! The variance factor `V(λ)` of the convex-combination estimator.
//!
//! For a kernel `K` with second moment `κ₂` the side fits are centred at
//! `x ± l h` with `l(λ) = sqrt((1 + 1/(2λ)) κ₂)`, which removes the `h²`
//! bias term. The leading variance of the combination is then
//! `V(λ) σ²(x) / (n h f(x))`, with
//!
//! ```text
//! V(λ) = [(2λ²+1) R + (6λ+1) C₀(l) + ((4λ+1)²/2) C±(l) + (λ(2λ+1)/κ₂) T(l)] / (2λ+1)²
//! ```
//!
//! `V(0⁺) = R`. From its global minimum at `λ_min`, `V` climbs monotonically
//! towards the limit `V_sup` as `λ → ∞`; the construction checks this on a
//! grid and fails otherwise. Left of `λ_min` the curve usually falls
//! monotonically, but kernels that jump at the support edge can bump up there.

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, Support};
use crate::numeric::optimize::{brent_root, golden_section, log_grid};

/// Numerical settings for a [`VCurve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VOptions {
    /// Half-width of the `t` window for every integral entering `V`, applied
    /// to unbounded kernels only (including the `κ₂` used in `l(λ)`).
    /// `None` integrates over the full cut-off support.
    pub tail_window: Option<f64>,
    /// Largest `λ` returned by the root solver.
    pub lambda_cap: f64,
}

impl Default for VOptions {
    fn default() -> Self {
        VOptions {
            tail_window: Some(6.0),
            lambda_cap: 1e8,
        }
    }
}

/// Lower end of the `λ` range scanned for the minimum.
pub const LAMBDA_SCAN_LO: f64 = 1e-6;
/// Upper end of the `λ` range scanned for the minimum.
pub const LAMBDA_SCAN_HI: f64 = 50.0;
const SCAN_POINTS: usize = 241;
const BRANCH_POINTS: usize = 321;
const SHAPE_SLACK: f64 = 1e-11;

/// `l(λ) = sqrt((1 + 1/(2λ)) κ₂)`.
pub fn interval_l(kappa2: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be positive and finite, got {lambda}")));
    }
    Ok(((1.0 + 0.5 / lambda) * kappa2).sqrt())
}

/// `V(λ)` for a kernel together with its extrema and a root solver for the
/// right branch.
#[derive(Debug, Clone)]
pub struct VCurve {
    kernel: KernelSpec,
    options: VOptions,
    half_width: f64,
    kappa2: f64,
    roughness: f64,
    lambda_min: f64,
    v_min: f64,
    v_limit: f64,
    v_sup: f64,
    v_at_cap: f64,
    left_branch_monotone: bool,
    right_branch_monotone: bool,
    /// `(λ, V(λ))` on a log grid from `λ_min` to the cap, nondecreasing in V.
    right_branch: Vec<(f64, f64)>,
}

impl VCurve {
    /// Builds the curve with default options.
    pub fn new(kernel: &KernelSpec) -> Result<Self> {
        Self::with_options(kernel, VOptions::default())
    }

    pub fn with_options(kernel: &KernelSpec, options: VOptions) -> Result<Self> {
        Self::build(kernel, options, true)
    }

    fn build(kernel: &KernelSpec, options: VOptions, strict: bool) -> Result<Self> {
        if !(options.lambda_cap > LAMBDA_SCAN_HI) {
            return Err(Error::Config(format!(
                "lambda cap must exceed {LAMBDA_SCAN_HI}, got {}",
                options.lambda_cap
            )));
        }
        let (half_width, kappa2, roughness) = match (kernel.support(), options.tail_window) {
            (Support::Unbounded { cutoff }, Some(w)) if w < cutoff => {
                if !(w > 0.0) {
                    return Err(Error::Config(format!("tail window must be positive, got {w}")));
                }
                (w, kernel.moment_in(2, w)?, kernel.roughness_in(w)?)
            }
            (support, _) => {
                let ints = kernel.integrals();
                (support.extent(), ints.kappa2, ints.roughness)
            }
        };
        let mut curve = VCurve {
            kernel: kernel.clone(),
            options,
            half_width,
            kappa2,
            roughness,
            lambda_min: f64::NAN,
            v_min: f64::NAN,
            v_limit: f64::NAN,
            v_sup: f64::NAN,
            v_at_cap: f64::NAN,
            left_branch_monotone: true,
            right_branch_monotone: true,
            right_branch: Vec::new(),
        };
        curve.locate_extrema(strict)?;
        Ok(curve)
    }

    fn locate_extrema(&mut self, strict: bool) -> Result<()> {
        let grid = log_grid(LAMBDA_SCAN_LO, LAMBDA_SCAN_HI, SCAN_POINTS);
        let values = grid.iter().map(|&l| self.v(l)).collect::<Result<Vec<_>>>()?;
        let imin = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("grid is nonempty");
        if imin == 0 || imin + 1 == grid.len() {
            return Err(Error::Shape(format!(
                "minimum of V not bracketed inside [{LAMBDA_SCAN_LO}, {LAMBDA_SCAN_HI}] for kernel {}",
                self.kernel
            )));
        }
        self.left_branch_monotone = (1..=imin).all(|i| values[i] <= values[i - 1] + SHAPE_SLACK);
        let min = golden_section(|l| self.v(l), grid[imin - 1], grid[imin + 1], 1e-10)?;
        self.lambda_min = min.x;
        self.v_min = min.value;

        self.v_limit = self.v_limit_formula()?;
        self.v_at_cap = self.v(self.options.lambda_cap)?;

        let branch_grid = log_grid(self.lambda_min, self.options.lambda_cap, BRANCH_POINTS);
        let mut branch = Vec::with_capacity(BRANCH_POINTS);
        for &l in &branch_grid {
            let v = if l == self.lambda_min { self.v_min } else { self.v(l)? };
            if let Some(&(lp, vp)) = branch.last() {
                if v + SHAPE_SLACK < vp {
                    self.right_branch_monotone = false;
                }
                if strict && !self.right_branch_monotone {
                    return Err(Error::Shape(format!(
                        "V decreases between lambda = {lp} and {l} right of the minimum for kernel {}",
                        self.kernel
                    )));
                }
            }
            branch.push((l, v));
        }
        self.right_branch = branch;

        let grid_max = values
            .iter()
            .copied()
            .chain(self.right_branch.iter().map(|p| p.1))
            .fold(f64::NEG_INFINITY, f64::max);
        self.v_sup = self.v_limit.max(self.roughness).max(grid_max);
        if !(self.v_min < self.v_sup) {
            return Err(Error::Shape(format!("V_min {} is not below V_sup {}", self.v_min, self.v_sup)));
        }
        Ok(())
    }

    /// `½R + 2C±(√κ₂) + T(√κ₂)/(2κ₂)`, the `λ → ∞` limit of `V`.
    fn v_limit_formula(&self) -> Result<f64> {
        let l = self.kappa2.sqrt();
        let cp = self.kernel.cross_products_in(l, self.half_width)?;
        Ok(0.5 * self.roughness + 2.0 * cp.c_pm + cp.t_term / (2.0 * self.kappa2))
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn options(&self) -> VOptions {
        self.options
    }

    /// `κ₂` as used by the variance theory (windowed for unbounded kernels).
    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    /// `R(K)` as used by the variance theory.
    pub fn roughness(&self) -> f64 {
        self.roughness
    }

    /// Half-width of the integration window.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    /// Supremum of `V` over `λ > 0`.
    pub fn v_sup(&self) -> f64 {
        self.v_sup
    }

    /// The `λ → ∞` limit of `V` from its closed limit formula.
    pub fn v_limit(&self) -> f64 {
        self.v_limit
    }

    /// `V(0⁺) = R(K)`.
    pub fn v_at_zero_limit(&self) -> f64 {
        self.roughness
    }

    /// Whether `V` is nonincreasing on the scanned grid left of `λ_min`.
    /// Kernels with jumps at the support edge (such as `vs:0:<a1>`) bump up
    /// where the shifted windows start to overlap; only the right branch is
    /// used for root finding.
    pub fn left_branch_monotone(&self) -> bool {
        self.left_branch_monotone
    }

    /// `V_sup / V_min`.
    pub fn ratio(&self) -> f64 {
        self.v_sup / self.v_min
    }

    /// `l(λ)` for this kernel.
    pub fn interval_l(&self, lambda: f64) -> Result<f64> {
        interval_l(self.kappa2, lambda)
    }

    /// Evaluates `V(λ)`.
    pub fn v(&self, lambda: f64) -> Result<f64> {
        let l = self.interval_l(lambda)?;
        let cp = self.kernel.cross_products_in(l, self.half_width)?;
        let d = 2.0 * lambda + 1.0;
        let num = (2.0 * lambda * lambda + 1.0) * self.roughness
            + (6.0 * lambda + 1.0) * cp.c0
            + 0.5 * (4.0 * lambda + 1.0).powi(2) * cp.c_pm
            + lambda * d / self.kappa2 * cp.t_term;
        Ok(num / (d * d))
    }

    /// The largest `λ` with `V(λ) = target`.
    ///
    /// Targets at or above `V(Λ_cap)` (within `1e-9` of the limit) return the
    /// cap. Roots on the left branch are never returned.
    pub fn solve_lambda_for_v(&self, target: f64) -> Result<f64> {
        if !target.is_finite() {
            return Err(Error::Domain(format!("target V must be finite, got {target}")));
        }
        let tol = 1e-12 * self.v_min.abs().max(1.0);
        if target < self.v_min - tol {
            return Err(Error::OutOfRange {
                target,
                side: "below",
                bound: self.v_min,
            });
        }
        let upper = self.v_limit.max(self.v_at_cap);
        if target > upper + 1e-9 {
            return Err(Error::OutOfRange {
                target,
                side: "above",
                bound: upper,
            });
        }
        if target <= self.v_min {
            return Ok(self.lambda_min);
        }
        if target >= self.v_at_cap {
            return Ok(self.options.lambda_cap);
        }
        // first tabulated node whose value reaches the target
        let j = self.right_branch.partition_point(|&(_, v)| v < target);
        let (hi, vhi) = self.right_branch[j];
        if vhi == target {
            return Ok(hi);
        }
        let lo = self.right_branch[j - 1].0;
        brent_root(|l| Ok(self.v(l)? - target), lo, hi, 1e-15 * hi)
    }

    /// `(λ, V(λ))` at `λ = step, 2 step, ...` up to `lambda_max`.
    pub fn tabulate(&self, lambda_max: f64, step: f64) -> Result<Vec<(f64, f64)>> {
        if !(step > 0.0 && lambda_max >= step) {
            return Err(Error::Domain(format!(
                "need 0 < step <= lambda_max, got step {step}, lambda_max {lambda_max}"
            )));
        }
        let count = (lambda_max / step + 1e-9).floor() as usize;
        (1..=count)
            .map(|i| {
                let l = step * i as f64;
                Ok((l, self.v(l)?))
            })
            .collect()
    }

    /// Feasibility of stabilization by weighting for the given `γ*` extremes.
    pub fn feasibility(&self, gamma_max: f64, gamma_min: f64) -> Result<FeasibilityVerdict> {
        if !(gamma_min > 0.0 && gamma_max >= gamma_min) {
            return Err(Error::Domain(format!(
                "need gamma_max >= gamma_min > 0, got ({gamma_max}, {gamma_min})"
            )));
        }
        let gamma_ratio = gamma_max / gamma_min;
        let v_ratio = self.ratio();
        let feasible = gamma_ratio <= v_ratio;
        Ok(FeasibilityVerdict {
            gamma_ratio,
            v_ratio,
            feasible,
            zeta_range: feasible.then(|| (self.v_min * gamma_max, self.v_sup * gamma_min)),
        })
    }

    /// `ζ*_Var = V_min γ*(x_max)`, the smallest stabilized value.
    pub fn zeta_var(&self, gamma_max: f64, gamma_min: f64) -> Result<f64> {
        let verdict = self.feasibility(gamma_max, gamma_min)?;
        verdict.require()?;
        Ok(self.v_min * gamma_max)
    }
}

/// Extremes of `V` without the right-branch shape requirement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VExtremes {
    pub lambda_min: f64,
    pub v_min: f64,
    /// Largest `V` seen on the scan grids or in the `λ → ∞` limit.
    pub v_sup: f64,
    pub right_branch_monotone: bool,
}

impl VExtremes {
    pub fn ratio(&self) -> f64 {
        self.v_sup / self.v_min
    }
}

/// Locates `V_min` and `V_sup` for any kernel with an interior minimum,
/// including kernels whose `V` is not monotone right of the minimum and so
/// cannot back a [`VCurve`].
pub fn v_extremes(kernel: &KernelSpec, options: VOptions) -> Result<VExtremes> {
    let c = VCurve::build(kernel, options, false)?;
    Ok(VExtremes {
        lambda_min: c.lambda_min,
        v_min: c.v_min,
        v_sup: c.v_sup,
        right_branch_monotone: c.right_branch_monotone,
    })
}

/// Outcome of the weighting feasibility test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityVerdict {
    /// `γ*(x_max) / γ*(x_min)`
    pub gamma_ratio: f64,
    /// `V_sup / V_min`
    pub v_ratio: f64,
    pub feasible: bool,
    /// `[V_min γ*(x_max), V_sup γ*(x_min)]` when feasible.
    pub zeta_range: Option<(f64, f64)>,
}

impl FeasibilityVerdict {
    /// Turns an infeasible verdict into an error.
    pub fn require(&self) -> Result<()> {
        if self.feasible {
            Ok(())
        } else {
            Err(Error::Infeasible {
                gamma_ratio: self.gamma_ratio,
                v_ratio: self.v_ratio,
            })
        }
    }
}
