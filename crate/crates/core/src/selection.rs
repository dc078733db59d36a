//! The bias coefficient `B(x; λ)` and the eight bandwidth/weight rules.
//!
//! | rule | bandwidth | weight |
//! |------|-----------|--------|
//! | a | constant, stabilized by weighting | `λ(x)` from `ζ*_Var` |
//! | b | `h(x) ∝ γ*(x)` | `λ_min` |
//! | c | fixed, AMISE-optimal | `λ_min` |
//! | d | local, AMSE-optimal | `λ_min` |
//! | e | constant, stabilized by weighting | `λ(x)` from `ζ*_MISE` |
//! | f | `h(x) ∝ γ*(x)` | constant minimizing AMISE |
//! | g | fixed, AMISE-optimal | constant minimizing AMISE |
//! | h | local, AMSE-optimal | per-x `λ` minimizing AMSE |
//!
//! Every `∫_I` is a trapezoid sum on the scenario grid.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::optimize::{golden_section, log_grid};
use crate::numeric::quadrature::trapezoid;
use crate::scenario::{GammaProfile, Scenario};
use crate::vtheory::VCurve;

/// Search range for constant and per-point MISE-optimal weights.
pub const LAMBDA_SEARCH: (f64, f64) = (1e-4, 5.0);
/// Relative tolerance of the golden-section searches.
pub const SEARCH_TOL: f64 = 1e-5;
/// Percentile at which local bandwidths are clamped.
pub const CLAMP_PERCENTILE: f64 = 0.99;

/// `8^{1/9} + 8^{-8/9}`, the constant in every AMISE formula.
pub fn amise_constant() -> f64 {
    8f64.powf(1.0 / 9.0) + 8f64.powf(-8.0 / 9.0)
}

/// `B(x; λ)` for a scenario and kernel moments `κ₂`, `κ₄`.
pub fn bias_b(s: &Scenario, kappa2: f64, kappa4: f64, x: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let f = s.f(x);
    if !(f > 0.0) {
        return Err(Error::Domain(format!("design density vanishes at x = {x}")));
    }
    let (p, q) = bias_parts(s, kappa2, kappa4, x);
    Ok(p - q / lambda)
}

/// `B(x; λ) = p(x) - q(x)/λ`.
fn bias_parts(s: &Scenario, kappa2: f64, kappa4: f64, x: f64) -> (f64, f64) {
    let f = s.f(x);
    let m4 = s.m_deriv(4, x);
    let shape = 2.0 * s.f2(x) * s.m_deriv(2, x) + 4.0 * s.f1(x) * s.m_deriv(3, x) + f * m4;
    let p = (kappa2 * kappa2 - kappa4) * shape / (8.0 * f);
    let q = kappa2 * kappa2 * m4 / 16.0;
    (p, q)
}

/// The eight rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleId {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

/// What the weight choice minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Var,
    Mise,
}

/// How variance is (or is not) stabilized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    VsWeighting,
    VsBandwidth,
    Fixed,
    MseLocal,
}

impl RuleId {
    pub const ALL: [RuleId; 8] = [
        RuleId::A,
        RuleId::B,
        RuleId::C,
        RuleId::D,
        RuleId::E,
        RuleId::F,
        RuleId::G,
        RuleId::H,
    ];

    pub fn objective(self) -> Objective {
        match self {
            RuleId::A | RuleId::B | RuleId::C | RuleId::D => Objective::Var,
            _ => Objective::Mise,
        }
    }

    pub fn method(self) -> Method {
        match self {
            RuleId::A | RuleId::E => Method::VsWeighting,
            RuleId::B | RuleId::F => Method::VsBandwidth,
            RuleId::C | RuleId::G => Method::Fixed,
            RuleId::D | RuleId::H => Method::MseLocal,
        }
    }

    pub fn from_parts(method: Method, objective: Objective) -> RuleId {
        use Method::*;
        match (method, objective) {
            (VsWeighting, Objective::Var) => RuleId::A,
            (VsBandwidth, Objective::Var) => RuleId::B,
            (Fixed, Objective::Var) => RuleId::C,
            (MseLocal, Objective::Var) => RuleId::D,
            (VsWeighting, Objective::Mise) => RuleId::E,
            (VsBandwidth, Objective::Mise) => RuleId::F,
            (Fixed, Objective::Mise) => RuleId::G,
            (MseLocal, Objective::Mise) => RuleId::H,
        }
    }

    pub fn letter(self) -> char {
        match self {
            RuleId::A => 'a',
            RuleId::B => 'b',
            RuleId::C => 'c',
            RuleId::D => 'd',
            RuleId::E => 'e',
            RuleId::F => 'f',
            RuleId::G => 'g',
            RuleId::H => 'h',
        }
    }

    /// Parses a comma-separated list such as `a,b,e`.
    pub fn parse_list(s: &str) -> Result<Vec<RuleId>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for RuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        RuleId::ALL
            .iter()
            .copied()
            .find(|r| lower.len() == 1 && lower.starts_with(r.letter()))
            .ok_or_else(|| Error::Config(format!("unknown rule `{s}`; expected one of a..h")))
    }
}

/// A constant or a per-grid-point value.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant(f64),
    Grid(Vec<f64>),
}

impl Profile {
    /// Value at grid index `i`.
    pub fn at(&self, i: usize) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Grid(v) => v[i],
        }
    }

    pub fn constant(&self) -> Option<f64> {
        match self {
            Profile::Constant(v) => Some(*v),
            Profile::Grid(_) => None,
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        match self {
            Profile::Constant(v) => (*v, *v),
            Profile::Grid(v) => v
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x))),
        }
    }
}

/// A fully built rule on the scenario grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRule {
    pub id: RuleId,
    pub n: usize,
    pub xs: Vec<f64>,
    pub bandwidth: Profile,
    pub weight: Profile,
    /// `ζ` for the weighting rules.
    pub zeta: Option<f64>,
    /// The single bandwidth figure a results table reports: the constant
    /// bandwidth, or `h₀` in `h(x) = γ*(x) h₀` for the proportional rules.
    pub table_bandwidth: Option<f64>,
    pub amise: f64,
    /// Grid indices whose bandwidth was clamped.
    pub clamped: Vec<usize>,
    /// Grid indices whose per-point weight hit the search boundary.
    pub boundary_weights: Vec<usize>,
}

/// Scenario and kernel quantities tabulated on the grid, shared by all rules.
#[derive(Debug, Clone)]
pub struct Problem {
    scenario: Scenario,
    curve: VCurve,
    kappa2: f64,
    kappa4: f64,
    xs: Vec<f64>,
    step: f64,
    f: Vec<f64>,
    sigma2: Vec<f64>,
    gamma: GammaProfile,
    bias_p: Vec<f64>,
    bias_q: Vec<f64>,
}

impl Problem {
    pub fn new(scenario: &Scenario, curve: &VCurve) -> Result<Self> {
        let ints = curve.kernel().integrals();
        let (kappa2, kappa4) = (ints.kappa2, ints.kappa4);
        let gamma = scenario.gamma_profile();
        let xs = gamma.xs.clone();
        let f: Vec<f64> = xs.iter().map(|&x| scenario.f(x)).collect();
        if let Some(i) = f.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("design density vanishes at x = {}", xs[i])));
        }
        let sigma2 = xs.iter().map(|&x| scenario.sigma2(x)).collect();
        let (bias_p, bias_q) = xs.iter().map(|&x| bias_parts(scenario, kappa2, kappa4, x)).unzip();
        Ok(Problem {
            scenario: scenario.clone(),
            curve: curve.clone(),
            kappa2,
            kappa4,
            step: scenario.grid_step(),
            xs,
            f,
            sigma2,
            gamma,
            bias_p,
            bias_q,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn curve(&self) -> &VCurve {
        &self.curve
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn gamma(&self) -> &GammaProfile {
        &self.gamma
    }

    /// `(κ₂, κ₄)` used in `B`.
    pub fn moments(&self) -> (f64, f64) {
        (self.kappa2, self.kappa4)
    }

    /// `B(x_i; λ)`.
    #[inline]
    pub fn bias(&self, i: usize, lambda: f64) -> f64 {
        self.bias_p[i] - self.bias_q[i] / lambda
    }

    fn integrate(&self, g: impl Fn(usize) -> f64) -> f64 {
        let ys: Vec<f64> = (0..self.xs.len()).map(g).collect();
        trapezoid(&ys, self.step)
    }

    /// `∫ f B²(x; λ(x)) dx`.
    fn int_f_b2(&self, weight: &Profile) -> f64 {
        self.integrate(|i| self.f[i] * self.bias(i, weight.at(i)).powi(2))
    }

    /// `∫ σ¹⁶ B² / f⁷ dx` at constant `λ`.
    fn int_vs_bandwidth(&self, lambda: f64) -> f64 {
        self.integrate(|i| self.sigma2[i].powi(8) * self.bias(i, lambda).powi(2) / self.f[i].powi(7))
    }

    /// `λ(x)` with `V(λ(x)) γ*(x) = ζ` at every grid point.
    pub fn lambda_profile_for_zeta(&self, zeta: f64) -> Result<Vec<f64>> {
        self.gamma
            .values
            .par_iter()
            .map(|&g| self.curve.solve_lambda_for_v(zeta / g))
            .collect()
    }

    /// `[V_min γ*(x_max), V_sup γ*(x_min)]`, or the infeasibility error.
    pub fn zeta_range(&self) -> Result<(f64, f64)> {
        let verdict = self.curve.feasibility(self.gamma.gamma_max, self.gamma.gamma_min)?;
        verdict.require()?;
        Ok(verdict.zeta_range.expect("feasible verdicts carry a range"))
    }

    /// `ζ*_Var = V_min γ*(x_max)`.
    pub fn zeta_var(&self) -> Result<f64> {
        self.curve.zeta_var(self.gamma.gamma_max, self.gamma.gamma_min)
    }

    /// `ζ*_MISE`: the `ζ` in the feasible range minimizing
    /// `ζ^{8/9} (∫ f B²(x; λ_ζ(x)) dx)^{1/9}`. Independent of `n`.
    pub fn zeta_mise(&self) -> Result<f64> {
        let (lo, hi) = self.zeta_range()?;
        if hi - lo <= 1e-15 * hi {
            return Ok(lo);
        }
        let min = golden_section(
            |z| {
                let w = Profile::Grid(self.lambda_profile_for_zeta(z)?);
                Ok(z.powf(8.0 / 9.0) * self.int_f_b2(&w).powf(1.0 / 9.0))
            },
            lo,
            hi,
            SEARCH_TOL,
        )?;
        Ok(min.x)
    }

    /// Builds one rule for sample size `n`.
    pub fn build(&self, id: RuleId, n: usize) -> Result<EstimatorRule> {
        if n < 1 {
            return Err(Error::Domain("sample size must be positive".into()));
        }
        match id.method() {
            Method::VsWeighting => self.rule_vs_weighting(id, n),
            Method::VsBandwidth => self.rule_vs_bandwidth(id, n),
            Method::Fixed => self.rule_fixed(id, n),
            Method::MseLocal => self.rule_mse_local(id, n),
        }
    }

    /// Builds a rule with an already-known `ζ` (skips the `ζ*_MISE` search).
    pub fn build_weighting_with_zeta(&self, id: RuleId, n: usize, zeta: f64) -> Result<EstimatorRule> {
        let nf = n as f64;
        let weight = Profile::Grid(self.lambda_profile_for_zeta(zeta)?);
        let ifb = self.int_f_b2(&weight);
        let h = 8f64.powf(-1.0 / 9.0) * (zeta / ifb).powf(1.0 / 9.0) * nf.powf(-1.0 / 9.0);
        let amise = amise_constant() * zeta.powf(8.0 / 9.0) * ifb.powf(1.0 / 9.0) * nf.powf(-8.0 / 9.0);
        Ok(EstimatorRule {
            id,
            n,
            xs: self.xs.clone(),
            bandwidth: Profile::Constant(h),
            weight,
            zeta: Some(zeta),
            table_bandwidth: Some(h),
            amise,
            clamped: Vec::new(),
            boundary_weights: Vec::new(),
        })
    }

    fn rule_vs_weighting(&self, id: RuleId, n: usize) -> Result<EstimatorRule> {
        let zeta = match id.objective() {
            Objective::Var => self.zeta_var()?,
            Objective::Mise => self.zeta_mise()?,
        };
        self.build_weighting_with_zeta(id, n, zeta)
    }

    /// Constant `λ` minimizing `V(λ)^{8/9} J(λ)^{1/9}` on [`LAMBDA_SEARCH`].
    fn constant_lambda(&self, j: impl Fn(f64) -> f64) -> Result<f64> {
        let (lo, hi) = LAMBDA_SEARCH;
        let min = golden_section(
            |l| Ok(self.curve.v(l)?.powf(8.0 / 9.0) * j(l).powf(1.0 / 9.0)),
            lo,
            hi,
            SEARCH_TOL,
        )?;
        Ok(min.x)
    }

    fn rule_vs_bandwidth(&self, id: RuleId, n: usize) -> Result<EstimatorRule> {
        let nf = n as f64;
        let lambda = match id.objective() {
            Objective::Var => self.curve.lambda_min(),
            Objective::Mise => self.constant_lambda(|l| self.int_vs_bandwidth(l))?,
        };
        let v = self.curve.v(lambda)?;
        let j = self.int_vs_bandwidth(lambda);
        let h0 = v.powf(1.0 / 9.0) * (8.0 * j).powf(-1.0 / 9.0) * nf.powf(-1.0 / 9.0);
        let amise = amise_constant() * v.powf(8.0 / 9.0) * j.powf(1.0 / 9.0) * nf.powf(-8.0 / 9.0);
        Ok(EstimatorRule {
            id,
            n,
            xs: self.xs.clone(),
            bandwidth: Profile::Grid(self.gamma.values.iter().map(|g| g * h0).collect()),
            weight: Profile::Constant(lambda),
            zeta: None,
            table_bandwidth: Some(h0),
            amise,
            clamped: Vec::new(),
            boundary_weights: Vec::new(),
        })
    }

    fn rule_fixed(&self, id: RuleId, n: usize) -> Result<EstimatorRule> {
        let nf = n as f64;
        let int_sigma2 = self.integrate(|i| self.sigma2[i]);
        let lambda = match id.objective() {
            Objective::Var => self.curve.lambda_min(),
            Objective::Mise => self.constant_lambda(|l| self.int_f_b2(&Profile::Constant(l)))?,
        };
        let v = self.curve.v(lambda)?;
        let ifb = self.int_f_b2(&Profile::Constant(lambda));
        let h = (int_sigma2 * v / (8.0 * ifb)).powf(1.0 / 9.0) * nf.powf(-1.0 / 9.0);
        let amise = amise_constant() * (int_sigma2 * v).powf(8.0 / 9.0) * ifb.powf(1.0 / 9.0) * nf.powf(-8.0 / 9.0);
        Ok(EstimatorRule {
            id,
            n,
            xs: self.xs.clone(),
            bandwidth: Profile::Constant(h),
            weight: Profile::Constant(lambda),
            zeta: None,
            table_bandwidth: Some(h),
            amise,
            clamped: Vec::new(),
            boundary_weights: Vec::new(),
        })
    }

    /// Pointwise AMSE shape `V(λ)^{8/9} |B(x_i; λ)|^{2/9}`.
    pub fn amse_shape(&self, i: usize, lambda: f64) -> Result<f64> {
        Ok(self.curve.v(lambda)?.powf(8.0 / 9.0) * self.bias(i, lambda).abs().powf(2.0 / 9.0))
    }

    /// Per-point `λ` minimizing the AMSE on [`LAMBDA_SEARCH`]: a coarse log
    /// scan brackets the minimum, golden section refines it.
    pub fn mse_lambda(&self, i: usize) -> Result<(f64, bool)> {
        let (lo, hi) = LAMBDA_SEARCH;
        let grid = log_grid(lo, hi, 81);
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for (j, &l) in grid.iter().enumerate() {
            let v = self.amse_shape(i, l)?;
            if v < best_val {
                best_val = v;
                best = j;
            }
        }
        // an exact zero of B inside the bracket is the minimum
        let (p, q) = (self.bias_p[i], self.bias_q[i]);
        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(grid.len() - 1)];
        if p != 0.0 {
            let root = q / p;
            if root >= a && root <= b {
                return Ok((root, false));
            }
        }
        let m = golden_section(|l| self.amse_shape(i, l), a, b, SEARCH_TOL)?;
        let at_edge = m.x <= lo * (1.0 + 1e-3) || m.x >= hi * (1.0 - 1e-3);
        Ok((m.x, at_edge))
    }

    fn rule_mse_local(&self, id: RuleId, n: usize) -> Result<EstimatorRule> {
        let nf = n as f64;
        let count = self.xs.len();
        let (lambdas, edges): (Vec<f64>, Vec<bool>) = match id.objective() {
            Objective::Var => (vec![self.curve.lambda_min(); count], vec![false; count]),
            Objective::Mise => (0..count)
                .into_par_iter()
                .map(|i| self.mse_lambda(i))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip(),
        };
        let vs = match id.objective() {
            Objective::Var => vec![self.curve.v(self.curve.lambda_min())?; count],
            Objective::Mise => lambdas.par_iter().map(|&l| self.curve.v(l)).collect::<Result<Vec<_>>>()?,
        };
        let scale = 8f64.powf(-1.0 / 9.0) * nf.powf(-1.0 / 9.0);
        let raw: Vec<f64> = (0..count)
            .map(|i| {
                let b2 = self.bias(i, lambdas[i]).powi(2);
                scale * (self.sigma2[i] * vs[i] / (self.f[i] * b2)).powf(1.0 / 9.0)
            })
            .collect();
        let (bandwidth, clamped) = clamp_at_percentile(&raw, CLAMP_PERCENTILE);
        let integral = self.integrate(|i| {
            self.sigma2[i].powf(8.0 / 9.0)
                * self.f[i].powf(1.0 / 9.0)
                * vs[i].powf(8.0 / 9.0)
                * self.bias(i, lambdas[i]).abs().powf(2.0 / 9.0)
        });
        let amise = amise_constant() * integral * nf.powf(-8.0 / 9.0);
        let weight = match id.objective() {
            Objective::Var => Profile::Constant(self.curve.lambda_min()),
            Objective::Mise => Profile::Grid(lambdas),
        };
        Ok(EstimatorRule {
            id,
            n,
            xs: self.xs.clone(),
            bandwidth: Profile::Grid(bandwidth),
            weight,
            zeta: None,
            table_bandwidth: None,
            amise,
            clamped,
            boundary_weights: edges.iter().enumerate().filter(|(_, &e)| e).map(|(i, _)| i).collect(),
        })
    }

    /// Recomputes the closed-form AMISE of a built rule.
    pub fn amise_of_rule(&self, rule: &EstimatorRule) -> Result<f64> {
        let nf = rule.n as f64;
        let c = amise_constant();
        Ok(match rule.id.method() {
            Method::VsWeighting => {
                let zeta = rule.zeta.ok_or_else(|| Error::Config("weighting rule without zeta".into()))?;
                c * zeta.powf(8.0 / 9.0) * self.int_f_b2(&rule.weight).powf(1.0 / 9.0) * nf.powf(-8.0 / 9.0)
            }
            Method::VsBandwidth => {
                let l = rule.weight.at(0);
                c * self.curve.v(l)?.powf(8.0 / 9.0) * self.int_vs_bandwidth(l).powf(1.0 / 9.0) * nf.powf(-8.0 / 9.0)
            }
            Method::Fixed => {
                let l = rule.weight.at(0);
                let s2 = self.integrate(|i| self.sigma2[i]);
                c * (s2 * self.curve.v(l)?).powf(8.0 / 9.0)
                    * self.int_f_b2(&rule.weight).powf(1.0 / 9.0)
                    * nf.powf(-8.0 / 9.0)
            }
            Method::MseLocal => {
                let vs = (0..self.xs.len())
                    .map(|i| self.curve.v(rule.weight.at(i)))
                    .collect::<Result<Vec<_>>>()?;
                let integral = self.integrate(|i| {
                    self.sigma2[i].powf(8.0 / 9.0)
                        * self.f[i].powf(1.0 / 9.0)
                        * vs[i].powf(8.0 / 9.0)
                        * self.bias(i, rule.weight.at(i)).abs().powf(2.0 / 9.0)
                });
                c * integral * nf.powf(-8.0 / 9.0)
            }
        })
    }
}

/// Caps values above the given nearest-rank percentile of the finite values
/// and returns the capped indices (including non-finite entries).
fn clamp_at_percentile(values: &[f64], pct: f64) -> (Vec<f64>, Vec<usize>) {
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (values.to_vec(), Vec::new());
    }
    finite.sort_by(f64::total_cmp);
    let rank = ((pct * finite.len() as f64).ceil() as usize).clamp(1, finite.len());
    let cap = finite[rank - 1];
    let mut out = Vec::with_capacity(values.len());
    let mut flagged = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || v > cap {
            out.push(cap);
            flagged.push(i);
        } else {
            out.push(v);
        }
    }
    (out, flagged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_scenario;
    use std::f64::consts::PI;
    use std::sync::OnceLock;

    fn problem(k: u32) -> &'static Problem {
        static P: [OnceLock<Problem>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        P[(k - 1) as usize].get_or_init(|| {
            let s = builtin_scenario(k, 2.5).unwrap();
            let c = VCurve::new(&"gaussian".parse().unwrap()).unwrap();
            Problem::new(&s, &c).unwrap()
        })
    }

    /// Term-by-term evaluation with derivatives written out by hand.
    fn bias_oracle(k: u32, x: f64, lambda: f64) -> f64 {
        let c = 0.382_924_922_548_026_4;
        let phi = (-0.5 * (x - 0.5f64).powi(2)).exp() / (2.0 * PI).sqrt() / c;
        let f1 = -(x - 0.5) * phi;
        let f2 = ((x - 0.5).powi(2) - 1.0) * phi;
        let a = 2.0 * k as f64 * PI;
        let b = 3.0 * PI;
        let m2 = -0.4 * (3.0 * a * a * (a * x).sin() + 2.0 * b * b * (b * x).sin());
        let m3 = -0.4 * (3.0 * a.powi(3) * (a * x).cos() + 2.0 * b.powi(3) * (b * x).cos());
        let m4 = 0.4 * (3.0 * a.powi(4) * (a * x).sin() + 2.0 * b.powi(4) * (b * x).sin());
        let (k2, k4) = (1.0, 3.0);
        let t1 = 2.0 * lambda * (k2 * k2 - k4) * 2.0 * f2 * m2;
        let t2 = 2.0 * lambda * (k2 * k2 - k4) * 4.0 * f1 * m3;
        let t3 = 2.0 * lambda * (k2 * k2 - k4) * phi * m4;
        let t4 = -k2 * k2 * phi * m4;
        let denom = 16.0 * lambda * phi;
        (t1 + t2 + t3 + t4) / denom
    }

    #[test]
    fn bias_matches_oracle() {
        for k in 1..=3 {
            let s = builtin_scenario(k, 2.5).unwrap();
            for &(x, l) in &[(0.5, 0.0376), (0.13, 0.158), (0.77, 2.0), (0.31, 1e-3)] {
                let b = bias_b(&s, 1.0, 3.0, x, l).unwrap();
                let o = bias_oracle(k, x, l);
                assert!((b - o).abs() <= 1e-10 * o.abs().max(1.0), "k={k} x={x}: {b} vs {o}");
            }
        }
    }

    #[test]
    fn bias_limits() {
        let lin = Scenario::new(
            (0.0, 1.0),
            1e-3,
            crate::scenario::Design::Uniform,
            crate::scenario::NoiseModel { offset: 1.0, slope: 0.0, center: 0.5 },
            crate::scenario::Regression::Polynomial { coeffs: vec![1.0, 2.0, 0.0, 0.0] },
        )
        .unwrap();
        assert_eq!(bias_b(&lin, 1.0, 3.0, 0.4, 0.2).unwrap(), 0.0);
        let s = builtin_scenario(1, 2.5).unwrap();
        let big = bias_b(&s, 1.0, 3.0, 0.3, 1e12).unwrap();
        let limit = (1.0 - 3.0)
            * (2.0 * s.f2(0.3) * s.m_deriv(2, 0.3) + 4.0 * s.f1(0.3) * s.m_deriv(3, 0.3) + s.f(0.3) * s.m_deriv(4, 0.3))
            / (8.0 * s.f(0.3));
        assert!((big - limit).abs() < 1e-8 * limit.abs());
        assert!(bias_b(&s, 1.0, 3.0, 0.3, 0.0).is_err());
    }

    #[test]
    fn rule_ids() {
        assert_eq!("e".parse::<RuleId>().unwrap(), RuleId::E);
        assert!("x".parse::<RuleId>().is_err());
        assert!("ab".parse::<RuleId>().is_err());
        assert_eq!(RuleId::parse_list("a, b,h").unwrap(), vec![RuleId::A, RuleId::B, RuleId::H]);
        for r in RuleId::ALL {
            assert_eq!(RuleId::from_parts(r.method(), r.objective()), r);
        }
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    #[test]
    fn fixed_and_proportional_rules_k1() {
        let p = problem(1);
        let c = p.build(RuleId::C, 100).unwrap();
        assert!(close(c.table_bandwidth.unwrap(), 0.0606, 2e-3), "{:?}", c.table_bandwidth);
        let g = p.build(RuleId::G, 100).unwrap();
        assert!(close(g.table_bandwidth.unwrap(), 0.0777, 2e-3));
        assert!((g.weight.at(0) - 0.147).abs() < 5e-3);
        let f = p.build(RuleId::F, 100).unwrap();
        assert!(close(f.table_bandwidth.unwrap(), 0.0283, 2e-3));
        assert!((f.weight.at(0) - 0.158).abs() < 5e-3);
        let b = p.build(RuleId::B, 100).unwrap();
        assert!(close(b.table_bandwidth.unwrap(), 0.0218, 2e-3));
        // h(x) is exactly proportional to γ*(x)
        let h0 = b.table_bandwidth.unwrap();
        for (i, g) in p.gamma().values.iter().enumerate() {
            assert!((b.bandwidth.at(i) - g * h0).abs() <= 1e-15 * g * h0);
        }
    }

    #[test]
    fn weighting_rules_stabilize() {
        let p = problem(1);
        let a = p.build(RuleId::A, 100).unwrap();
        let zeta = a.zeta.unwrap();
        assert!((zeta - 0.8418).abs() < 1e-3);
        for (i, g) in p.gamma().values.iter().enumerate() {
            let v = p.curve().v(a.weight.at(i)).unwrap();
            assert!((v * g - zeta).abs() < 1e-8);
        }
    }

    #[test]
    fn bandwidths_scale_with_n() {
        let p = problem(2);
        let ratio = 2f64.powf(-1.0 / 9.0);
        for id in [RuleId::A, RuleId::B, RuleId::C, RuleId::D, RuleId::F, RuleId::G] {
            let r1 = p.build(id, 300).unwrap();
            let r2 = p.build(id, 600).unwrap();
            for i in [0, 250, 500, 777] {
                let q = r2.bandwidth.at(i) / r1.bandwidth.at(i);
                assert!((q - ratio).abs() < 1e-10, "{id} at {i}: {q}");
            }
            let a = r1.amise / p.build(id, 4800).unwrap().amise;
            assert!((a - 16f64.powf(8.0 / 9.0)).abs() < 1e-9 * a, "{id}");
        }
    }

    #[test]
    fn amise_recomputation_agrees() {
        let p = problem(1);
        for id in [RuleId::A, RuleId::B, RuleId::C, RuleId::D, RuleId::G] {
            let r = p.build(id, 1000).unwrap();
            let again = p.amise_of_rule(&r).unwrap();
            assert!((again - r.amise).abs() < 1e-12 * r.amise, "{id}");
        }
    }

    #[test]
    fn local_rule_clamps_top_percentile() {
        let p = problem(1);
        let d = p.build(RuleId::D, 100).unwrap();
        assert!(!d.clamped.is_empty());
        assert!(d.clamped.len() <= 12);
        let (_, hi) = d.bandwidth.min_max();
        for &i in &d.clamped {
            assert_eq!(d.bandwidth.at(i), hi);
        }
    }

    #[test]
    fn per_point_lambda_is_locally_optimal() {
        let p = problem(1);
        let mut state = 12345u64;
        for _ in 0..20 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let i = (state >> 33) as usize % p.xs().len();
            let (l, _) = p.mse_lambda(i).unwrap();
            let at = p.amse_shape(i, l).unwrap();
            for d in [-1e-3, 1e-3] {
                if l + d >= LAMBDA_SEARCH.0 && l + d <= LAMBDA_SEARCH.1 {
                    assert!(at <= p.amse_shape(i, l + d).unwrap() + 1e-12, "x index {i}");
                }
            }
        }
    }

    #[test]
    fn group_two_amise_ordering() {
        for k in 1..=3 {
            let p = problem(k);
            let amise = |id| p.build(id, 1000).unwrap().amise;
            let (e, f, g, h) = (amise(RuleId::E), amise(RuleId::F), amise(RuleId::G), amise(RuleId::H));
            assert!(h <= g && g <= f && f <= e, "k={k}: {h} {g} {f} {e}");
        }
    }

    #[test]
    fn percentile_clamp() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).chain([f64::INFINITY]).collect();
        let (out, flagged) = clamp_at_percentile(&v, 0.99);
        assert_eq!(flagged, vec![99, 100]);
        assert_eq!(out[100], 99.0);
        assert_eq!(out[98], 99.0);
    }
}
