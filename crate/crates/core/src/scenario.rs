//! Analytic test problems: design density, noise variance, regression
//! function, and the `γ*(x) = σ²(x) / f(x)` profile.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numeric::quadrature::integrate;

/// Default grid spacing for profiles and `∫_I` integrals.
pub const DEFAULT_GRID_STEP: f64 = 1e-3;

/// Design density of `X` on the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Design {
    /// `N(mean, sd²)` restricted to the domain and renormalized.
    TruncatedNormal { mean: f64, sd: f64 },
    Uniform,
}

/// `σ²(x) = offset + slope · |x - center|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub offset: f64,
    pub slope: f64,
    pub center: f64,
}

/// Regression function `m`.
#[derive(Debug, Clone, PartialEq)]
pub enum Regression {
    /// `0.4 [3 sin(2kπx) + 2 sin(3πx)]`.
    Sinusoid { k: u32 },
    /// `Σ c_j x^j`.
    Polynomial { coeffs: Vec<f64> },
}

impl Regression {
    /// The `order`-th derivative at `x` (order 0 is `m` itself).
    pub fn derivative(&self, order: u32, x: f64) -> f64 {
        match self {
            Regression::Sinusoid { k } => {
                let a = 2.0 * *k as f64 * PI;
                let b = 3.0 * PI;
                let shift = order as f64 * 0.5 * PI;
                0.4 * (3.0 * a.powi(order as i32) * (a * x + shift).sin()
                    + 2.0 * b.powi(order as i32) * (b * x + shift).sin())
            }
            Regression::Polynomial { coeffs } => {
                // Horner over the derivative's coefficients c_j j!/(j-order)!
                let order = order as usize;
                coeffs
                    .iter()
                    .enumerate()
                    .skip(order)
                    .rev()
                    .fold(0.0, |acc, (j, c)| {
                        let falling: f64 = ((j + 1 - order)..=j).map(|v| v as f64).product();
                        acc * x + c * falling
                    })
            }
        }
    }
}

/// A complete analytic regression problem on `I = [lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    lo: f64,
    hi: f64,
    grid_step: f64,
    design: Design,
    design_norm: f64,
    noise: NoiseModel,
    regression: Regression,
}

impl Scenario {
    pub fn new(
        domain: (f64, f64),
        grid_step: f64,
        design: Design,
        noise: NoiseModel,
        regression: Regression,
    ) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Scenario(format!("domain must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        if !(grid_step > 0.0 && grid_step <= hi - lo) {
            return Err(Error::Scenario(format!("grid step must lie in (0, {}], got {grid_step}", hi - lo)));
        }
        let design_norm = match design {
            Design::TruncatedNormal { mean, sd } => {
                if !(sd > 0.0 && mean.is_finite()) {
                    return Err(Error::Scenario(format!("design sd must be positive, got {sd}")));
                }
                integrate(|x| normal_pdf((x - mean) / sd) / sd, lo, hi, 1e-14)?
            }
            Design::Uniform => hi - lo,
        };
        let s = Scenario {
            lo,
            hi,
            grid_step,
            design,
            design_norm,
            noise,
            regression,
        };
        for x in [lo, hi, noise.center.clamp(lo, hi)] {
            if !(s.sigma2(x) > 0.0) {
                return Err(Error::Scenario(format!("noise variance must be positive on I, got {} at {x}", s.sigma2(x))));
            }
        }
        Ok(s)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn design(&self) -> Design {
        self.design
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn regression(&self) -> &Regression {
        &self.regression
    }

    /// Normalizing constant of the design density (`∫_I` of the raw density).
    pub fn design_norm(&self) -> f64 {
        self.design_norm
    }

    /// Copy with a different grid step.
    pub fn with_grid_step(&self, grid_step: f64) -> Result<Self> {
        Scenario::new(
            (self.lo, self.hi),
            grid_step,
            self.design,
            self.noise,
            self.regression.clone(),
        )
    }

    /// Grid `x_j = lo + ε j` up to `hi`.
    pub fn grid(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.grid_step + 1e-9).floor() as usize;
        (0..=count).map(|j| self.lo + self.grid_step * j as f64).collect()
    }

    /// Design density `f(x)`; zero outside `I`.
    pub fn f(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        match self.design {
            Design::TruncatedNormal { mean, sd } => normal_pdf((x - mean) / sd) / (sd * self.design_norm),
            Design::Uniform => 1.0 / self.design_norm,
        }
    }

    /// `f′(x)` inside `I`.
    pub fn f1(&self, x: f64) -> f64 {
        match self.design {
            Design::TruncatedNormal { mean, sd } => -(x - mean) / (sd * sd) * self.f(x),
            Design::Uniform => 0.0,
        }
    }

    /// `f″(x)` inside `I`.
    pub fn f2(&self, x: f64) -> f64 {
        match self.design {
            Design::TruncatedNormal { mean, sd } => {
                let z = (x - mean) / sd;
                (z * z - 1.0) / (sd * sd) * self.f(x)
            }
            Design::Uniform => 0.0,
        }
    }

    /// Noise variance `σ²(x)`.
    pub fn sigma2(&self, x: f64) -> f64 {
        self.noise.offset + self.noise.slope * (x - self.noise.center).abs()
    }

    /// `m(x)`.
    pub fn m(&self, x: f64) -> f64 {
        self.regression.derivative(0, x)
    }

    /// `m⁽ᵒʳᵈᵉʳ⁾(x)`.
    pub fn m_deriv(&self, order: u32, x: f64) -> f64 {
        self.regression.derivative(order, x)
    }

    /// `γ*(x) = σ²(x) / f(x)`.
    pub fn gamma(&self, x: f64) -> f64 {
        self.sigma2(x) / self.f(x)
    }

    /// `γ*` on the grid with its extremes.
    pub fn gamma_profile(&self) -> GammaProfile {
        let xs = self.grid();
        let values: Vec<f64> = xs.iter().map(|&x| self.gamma(x)).collect();
        let (mut imax, mut imin) = (0, 0);
        for (i, &v) in values.iter().enumerate() {
            if v > values[imax] {
                imax = i;
            }
            if v < values[imin] {
                imin = i;
            }
        }
        GammaProfile {
            gamma_max: values[imax],
            gamma_min: values[imin],
            x_max: xs[imax],
            x_min: xs[imin],
            xs,
            values,
        }
    }
}

/// `γ*(x)` sampled on a scenario grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaProfile {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub gamma_max: f64,
    pub gamma_min: f64,
    pub x_max: f64,
    pub x_min: f64,
}

impl GammaProfile {
    /// `γ*(x_max) / γ*(x_min)`.
    pub fn ratio(&self) -> f64 {
        self.gamma_max / self.gamma_min
    }
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// The sinusoidal test problem on `[0, 1]`: truncated `N(0.5, 1)` design,
/// `σ²(x) = sigma_offset + |x - 0.5|`, and `m_k`.
pub fn builtin_scenario(k: u32, sigma_offset: f64) -> Result<Scenario> {
    sinusoid_scenario(k, sigma_offset, 1.0)
}

/// As [`builtin_scenario`] with `σ²(x) = sigma_offset + sigma_slope · |x - 0.5|`.
pub fn sinusoid_scenario(k: u32, sigma_offset: f64, sigma_slope: f64) -> Result<Scenario> {
    if !(1..=3).contains(&k) {
        return Err(Error::Scenario(format!("k must be 1, 2 or 3, got {k}")));
    }
    if !(sigma_offset > 0.0 && sigma_offset.is_finite()) {
        return Err(Error::Scenario(format!("sigma offset must be positive, got {sigma_offset}")));
    }
    Scenario::new(
        (0.0, 1.0),
        DEFAULT_GRID_STEP,
        Design::TruncatedNormal { mean: 0.5, sd: 1.0 },
        NoiseModel {
            offset: sigma_offset,
            slope: sigma_slope,
            center: 0.5,
        },
        Regression::Sinusoid { k },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::quadrature::trapezoid;
    use proptest::prelude::*;

    #[test]
    fn normalizer_and_mass() {
        let s = builtin_scenario(1, 2.5).unwrap();
        assert!((s.design_norm() - 0.382_924_922_548_026).abs() < 1e-12);
        let mass = integrate(|x| s.f(x), 0.0, 1.0, 1e-13).unwrap();
        assert!((mass - 1.0).abs() < 1e-10);
        let ys: Vec<f64> = s.grid().iter().map(|&x| s.f(x)).collect();
        assert!((trapezoid(&ys, 1e-3) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn grid_layout() {
        let s = builtin_scenario(2, 2.5).unwrap();
        let g = s.grid();
        assert_eq!(g.len(), 1001);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1000], 1.0);
        assert!((g[500] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn example_gamma_extremes() {
        let p = builtin_scenario(1, 2.5).unwrap().gamma_profile();
        assert!((p.gamma_max - 3.2629).abs() < 5e-4, "{}", p.gamma_max);
        assert!((p.gamma_min - 2.3996).abs() < 5e-4, "{}", p.gamma_min);
        assert!((p.ratio() - 1.3597).abs() < 5e-4);
        // the low-noise figures 0.0815 / 0.0479 need σ² = 0.05 (1 + |x - 0.5|)
        let q = sinusoid_scenario(1, 0.05, 0.05).unwrap().gamma_profile();
        assert!((q.gamma_max - 0.0815).abs() < 5e-4, "{}", q.gamma_max);
        assert!((q.gamma_min - 0.0479).abs() < 5e-4);
        assert!((q.ratio() - 1.6997).abs() < 1e-4, "{}", q.ratio());
        let literal = builtin_scenario(1, 0.05).unwrap().gamma_profile();
        assert!((literal.gamma_max - 0.5982).abs() < 5e-4, "{}", literal.gamma_max);
        assert!(p.values.iter().all(|&v| v >= p.gamma_min && v <= p.gamma_max));
    }

    #[test]
    fn constant_profile() {
        let s = Scenario::new(
            (0.0, 1.0),
            1e-2,
            Design::Uniform,
            NoiseModel { offset: 1.0, slope: 0.0, center: 0.5 },
            Regression::Polynomial { coeffs: vec![2.0, 3.0] },
        )
        .unwrap();
        let p = s.gamma_profile();
        assert_eq!(p.ratio(), 1.0);
        assert_eq!(s.m(0.5), 3.5);
        assert_eq!(s.m_deriv(1, 0.2), 3.0);
        assert_eq!(s.m_deriv(2, 0.2), 0.0);
    }

    #[test]
    fn sinusoid_vanishes_at_origin() {
        for k in 1..=3 {
            assert_eq!(builtin_scenario(k, 2.5).unwrap().m(0.0), 0.0);
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(builtin_scenario(4, 2.5).is_err());
        assert!(builtin_scenario(1, 0.0).is_err());
        assert!(builtin_scenario(1, -1.0).is_err());
        assert!(Scenario::new(
            (1.0, 0.0),
            1e-3,
            Design::Uniform,
            NoiseModel { offset: 1.0, slope: 0.0, center: 0.0 },
            Regression::Sinusoid { k: 1 },
        )
        .is_err());
    }

    #[test]
    fn polynomial_derivatives() {
        let r = Regression::Polynomial { coeffs: vec![1.0, -2.0, 0.5, 3.0, 0.25] };
        let x = 0.7;
        assert!((r.derivative(0, x) - (1.0 - 2.0 * x + 0.5 * x * x + 3.0 * x.powi(3) + 0.25 * x.powi(4))).abs() < 1e-14);
        assert!((r.derivative(2, x) - (1.0 + 18.0 * x + 3.0 * x * x)).abs() < 1e-13);
        assert!((r.derivative(4, x) - 6.0).abs() < 1e-14);
        assert_eq!(r.derivative(5, x), 0.0);
    }

    fn central(g: impl Fn(f64) -> f64, x: f64, d: f64) -> f64 {
        (g(x + d) - g(x - d)) / (2.0 * d)
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(x in 0.05f64..0.95, k in 1u32..=3) {
            let s = builtin_scenario(k, 2.5).unwrap();
            // error of a central difference shrinks by ~4 when δ halves
            let checks: Vec<(Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>)> = vec![
                (Box::new(|x| s.f(x)), Box::new(|x| s.f1(x))),
                (Box::new(|x| s.f1(x)), Box::new(|x| s.f2(x))),
                (Box::new(|x| s.m_deriv(1, x)), Box::new(|x| s.m_deriv(2, x))),
                (Box::new(|x| s.m_deriv(2, x)), Box::new(|x| s.m_deriv(3, x))),
                (Box::new(|x| s.m_deriv(3, x)), Box::new(|x| s.m_deriv(4, x))),
                (Box::new(|x| s.m(x)), Box::new(|x| s.m_deriv(1, x))),
            ];
            for (g, dg) in &checks {
                let exact = dg(x);
                let scale = exact.abs().max(1.0);
                let e1 = (central(g, x, 1e-3) - exact).abs();
                let e2 = (central(g, x, 5e-4) - exact).abs();
                prop_assert!(e1 < 1e-2 * scale, "error {} at x {}", e1, x);
                if e1 > 1e-7 * scale {
                    let rate = e1 / e2;
                    prop_assert!(rate > 3.0 && rate < 5.0, "rate {} at x {}", rate, x);
                }
            }
        }
    }
}
