//! Symmetric probability kernels and the integrals the variance theory needs.
//!
//! Every kernel is a density on the real line, symmetric about zero. The
//! bounded families live on `[-1, 1]`; the unbounded ones (Gaussian,
//! logistic, sigmoid) are truncated for integration at the point where the
//! density drops below [`TAIL_DENSITY`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::quadrature::integrate_pieces;

/// Density level below which unbounded kernels are treated as zero.
pub const TAIL_DENSITY: f64 = 1e-16;

/// Absolute tolerance for every kernel integral.
pub const INTEGRAL_TOL: f64 = 1e-12;

/// The kernel families understood by the library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// `(1 - t^2)^theta` on `[-1, 1]`, normalized. `theta = 0..=3` are the
    /// uniform, Epanechnikov, biweight and triweight kernels.
    Beta { theta: u32 },
    /// `a0 + (1 - 2 a0)(a1 + 1)|t|^a1 / 2` on `[-1, 1]`.
    VarianceStabilizing { a0: f64, a1: f64 },
    Gaussian,
    /// `1 / (2 + e^t + e^-t)`.
    Logistic,
    /// `(2 / pi) / (e^t + e^-t)`.
    Sigmoid,
    /// `(pi / 4) cos(pi t / 2)` on `[-1, 1]`.
    Cosine,
    /// `1 - |t|` on `[-1, 1]`.
    Triangle,
    /// `(70 / 81)(1 - |t|^3)^3` on `[-1, 1]`.
    Tricube,
}

/// Where a kernel is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    /// `[-1, 1]`.
    Bounded,
    /// The whole line; integrals are cut at `±cutoff`.
    Unbounded { cutoff: f64 },
}

impl Support {
    /// Half-width of the region that carries all the mass.
    pub fn extent(&self) -> f64 {
        match *self {
            Support::Bounded => 1.0,
            Support::Unbounded { cutoff } => cutoff,
        }
    }
}

/// Symmetric integration window `[-w, w]` for the variance-factor integrals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Window {
    /// Integrate over the kernel's full (cut-off) support.
    #[default]
    Full,
    /// Integrate over `[-w, w]` only, clipped to the support.
    Truncated(f64),
}

/// Scalar kernel integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelIntegrals {
    /// `∫ t² K(t) dt`
    pub kappa2: f64,
    /// `∫ t⁴ K(t) dt`
    pub kappa4: f64,
    /// `∫ t⁵ K(t) dt`, zero for every symmetric kernel.
    pub kappa5: f64,
    /// `∫ K(t)² dt`
    pub roughness: f64,
}

/// The three offset integrals that enter the variance factor at shift `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossProducts {
    /// `∫ K(t - l) K(t) dt`
    pub c0: f64,
    /// `∫ K(t - l) K(t + l) dt`
    pub c_pm: f64,
    /// `∫ t² [K(t)² - K(t - l) K(t + l)] dt`
    pub t_term: f64,
}

/// A validated kernel with its normalizer, support and cached moments.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    norm: f64,
    support: Support,
    integrals: KernelIntegrals,
}

impl KernelSpec {
    pub fn new(family: KernelFamily) -> Result<Self> {
        let norm = match family {
            KernelFamily::Beta { theta } => {
                if theta > 1000 {
                    return Err(Error::InvalidKernel(format!("beta exponent {theta} too large")));
                }
                beta_normalizer(theta)
            }
            KernelFamily::VarianceStabilizing { a0, a1 } => {
                if !(a1.is_finite() && a1 > 0.0) {
                    return Err(Error::InvalidKernel(format!("vs kernel needs a1 > 0, got {a1}")));
                }
                let upper = (1.0 + a1) / (2.0 * a1);
                if !(a0.is_finite() && a0 >= 0.0 && a0 <= upper) {
                    return Err(Error::InvalidKernel(format!(
                        "vs kernel needs 0 <= a0 <= (1 + a1)/(2 a1) = {upper}, got a0 = {a0}"
                    )));
                }
                0.5 * (1.0 - 2.0 * a0) * (a1 + 1.0)
            }
            _ => 1.0,
        };
        let support = match family {
            KernelFamily::Gaussian | KernelFamily::Logistic | KernelFamily::Sigmoid => {
                Support::Unbounded { cutoff: 0.0 }
            }
            _ => Support::Bounded,
        };
        let mut spec = KernelSpec {
            family,
            norm,
            support,
            integrals: KernelIntegrals {
                kappa2: 0.0,
                kappa4: 0.0,
                kappa5: 0.0,
                roughness: 0.0,
            },
        };
        if let Support::Unbounded { .. } = support {
            spec.support = Support::Unbounded {
                cutoff: spec.tail_cutoff(),
            };
        }
        spec.integrals = spec.compute_moments()?;
        Ok(spec)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self.support, Support::Bounded)
    }

    /// Cached moments and roughness.
    pub fn integrals(&self) -> &KernelIntegrals {
        &self.integrals
    }

    /// Evaluates `K(t)`; zero outside a bounded support.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let a = t.abs();
        match self.family {
            KernelFamily::Beta { theta } => {
                if a > 1.0 {
                    0.0
                } else {
                    self.norm * (1.0 - t * t).powi(theta as i32)
                }
            }
            KernelFamily::VarianceStabilizing { a0, a1 } => {
                if a > 1.0 {
                    0.0
                } else {
                    a0 + self.norm * a.powf(a1)
                }
            }
            KernelFamily::Gaussian => (-0.5 * t * t).exp() / (2.0 * PI).sqrt(),
            KernelFamily::Logistic => {
                let e = (-a).exp();
                // 1/(2 + e^a + e^-a) = e^-a / (1 + e^-a)^2
                e / ((1.0 + e) * (1.0 + e))
            }
            KernelFamily::Sigmoid => {
                let e = (-a).exp();
                (2.0 / PI) * e / (1.0 + e * e)
            }
            KernelFamily::Cosine => {
                if a > 1.0 {
                    0.0
                } else {
                    0.25 * PI * (0.5 * PI * t).cos()
                }
            }
            KernelFamily::Triangle => {
                if a > 1.0 {
                    0.0
                } else {
                    1.0 - a
                }
            }
            KernelFamily::Tricube => {
                if a > 1.0 {
                    0.0
                } else {
                    let u = 1.0 - a * a * a;
                    70.0 / 81.0 * u * u * u
                }
            }
        }
    }

    /// Points where `K` has a kink or jump (besides the support edges).
    fn kinks(&self) -> &'static [f64] {
        match self.family {
            KernelFamily::Triangle
            | KernelFamily::Tricube
            | KernelFamily::VarianceStabilizing { .. }
            | KernelFamily::Logistic
            | KernelFamily::Sigmoid => &[0.0],
            _ => &[],
        }
    }

    fn tail_cutoff(&self) -> f64 {
        // every unbounded family is decreasing on [0, inf)
        let (mut lo, mut hi) = (0.0, 1.0);
        while self.eval(hi) > TAIL_DENSITY {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) > TAIL_DENSITY {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Half-width actually used for a given window.
    pub fn window_half_width(&self, window: Window) -> f64 {
        let extent = self.support.extent();
        match window {
            Window::Full => extent,
            Window::Truncated(w) => w.min(extent),
        }
    }

    fn compute_moments(&self) -> Result<KernelIntegrals> {
        let kappa5 = self.moment_in(5, self.support.extent())?;
        let closed = self.closed_form_moments();
        match closed {
            Some((kappa2, kappa4, roughness)) => Ok(KernelIntegrals {
                kappa2,
                kappa4,
                kappa5,
                roughness,
            }),
            None => self.quadrature_moments(),
        }
    }

    /// `(κ₂, κ₄, R)` from closed forms.
    fn closed_form_moments(&self) -> Option<(f64, f64, f64)> {
        let pi2 = PI * PI;
        Some(match self.family {
            KernelFamily::Beta { theta } => {
                let th = theta as f64;
                let k2 = 1.0 / (2.0 * th + 3.0);
                let k4 = 3.0 / ((2.0 * th + 3.0) * (2.0 * th + 5.0));
                let r = self.norm * self.norm / beta_normalizer(2 * theta);
                (k2, k4, r)
            }
            KernelFamily::VarianceStabilizing { a0, a1 } => {
                let b = self.norm;
                let mom = |j: f64| 2.0 * a0 / (j + 1.0) + 2.0 * b / (a1 + j + 1.0);
                let r = 2.0 * (a0 * a0 + 2.0 * a0 * b / (a1 + 1.0) + b * b / (2.0 * a1 + 1.0));
                (mom(2.0), mom(4.0), r)
            }
            KernelFamily::Gaussian => (1.0, 3.0, 0.5 / PI.sqrt()),
            KernelFamily::Logistic => (pi2 / 3.0, 7.0 * pi2 * pi2 / 15.0, 1.0 / 6.0),
            KernelFamily::Sigmoid => (pi2 / 4.0, 5.0 * pi2 * pi2 / 16.0, 2.0 / pi2),
            KernelFamily::Cosine => (
                1.0 - 8.0 / pi2,
                1.0 - 48.0 / pi2 + 384.0 / (pi2 * pi2),
                pi2 / 16.0,
            ),
            KernelFamily::Triangle => (1.0 / 6.0, 1.0 / 15.0, 2.0 / 3.0),
            KernelFamily::Tricube => (35.0 / 243.0, 1.0 / 22.0, 175.0 / 247.0),
        })
    }

    /// Moments by adaptive quadrature over the full support, ignoring any
    /// closed form. Used to cross-check the closed forms.
    pub fn quadrature_moments(&self) -> Result<KernelIntegrals> {
        let s = self.support.extent();
        Ok(KernelIntegrals {
            kappa2: self.moment_in(2, s)?,
            kappa4: self.moment_in(4, s)?,
            kappa5: self.moment_in(5, s)?,
            roughness: self.roughness_in(s)?,
        })
    }

    /// `∫_{-w}^{w} t^j K(t) dt`.
    pub fn moment_in(&self, j: i32, half_width: f64) -> Result<f64> {
        let w = half_width.min(self.support.extent());
        integrate_pieces(|t| t.powi(j) * self.eval(t), -w, w, self.kinks(), INTEGRAL_TOL)
    }

    /// `∫_{-w}^{w} K(t)² dt`.
    pub fn roughness_in(&self, half_width: f64) -> Result<f64> {
        let w = half_width.min(self.support.extent());
        integrate_pieces(
            |t| {
                let k = self.eval(t);
                k * k
            },
            -w,
            w,
            self.kinks(),
            INTEGRAL_TOL,
        )
    }

    /// Total mass over the support; 1 for a valid kernel.
    pub fn mass(&self) -> Result<f64> {
        self.moment_in(0, self.support.extent())
    }

    /// Offset integrals over the full support.
    pub fn cross_products(&self, l: f64) -> Result<CrossProducts> {
        self.cross_products_in(l, self.support.extent())
    }

    /// Offset integrals with the integration variable restricted to
    /// `[-half_width, half_width]`. A negative `l` is reflected by symmetry.
    pub fn cross_products_in(&self, l: f64, half_width: f64) -> Result<CrossProducts> {
        if !l.is_finite() {
            return Err(Error::Domain(format!("offset l must be finite, got {l}")));
        }
        let l = l.abs();
        let s = self.support.extent();
        let w = half_width.min(s);
        let bps = [0.0, l, -l];

        // K(t - l) K(t): both factors alive on [l - s, s]
        let c0 = integrate_pieces(
            |t| self.eval(t - l) * self.eval(t),
            (l - s).max(-w),
            w,
            &bps,
            INTEGRAL_TOL,
        )?;
        // K(t - l) K(t + l): alive on [l - s, s - l]
        let pm_lo = (l - s).max(-w);
        let pm_hi = (s - l).min(w);
        let c_pm = integrate_pieces(
            |t| self.eval(t - l) * self.eval(t + l),
            pm_lo,
            pm_hi,
            &bps,
            INTEGRAL_TOL,
        )?;
        let sq = integrate_pieces(
            |t| {
                let k = self.eval(t);
                t * t * k * k
            },
            -w,
            w,
            &bps,
            INTEGRAL_TOL,
        )?;
        let shifted = integrate_pieces(
            |t| t * t * self.eval(t - l) * self.eval(t + l),
            pm_lo,
            pm_hi,
            &bps,
            INTEGRAL_TOL,
        )?;
        Ok(CrossProducts {
            c0,
            c_pm,
            t_term: sq - shifted,
        })
    }

    /// Canonical string id, parseable by [`FromStr`].
    pub fn id(&self) -> String {
        match self.family {
            KernelFamily::Beta { theta: 0 } => "uniform".into(),
            KernelFamily::Beta { theta: 1 } => "epanechnikov".into(),
            KernelFamily::Beta { theta: 2 } => "biweight".into(),
            KernelFamily::Beta { theta: 3 } => "triweight".into(),
            KernelFamily::Beta { theta } => format!("beta:{theta}"),
            KernelFamily::VarianceStabilizing { a0, a1 } => format!("vs:{a0}:{a1}"),
            KernelFamily::Gaussian => "gaussian".into(),
            KernelFamily::Logistic => "logistic".into(),
            KernelFamily::Sigmoid => "sigmoid".into(),
            KernelFamily::Cosine => "cosine".into(),
            KernelFamily::Triangle => "triangle".into(),
            KernelFamily::Tricube => "tricube".into(),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Ids accepted by the parser, for error messages.
pub const VALID_IDS: &str = "uniform, epanechnikov, biweight, triweight, beta:<theta>, gaussian, \
                             logistic, sigmoid, cosine, triangle, tricube, vs:<a0>:<a1>";

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownKernel {
            id: s.to_string(),
            valid: VALID_IDS.to_string(),
        };
        let id = s.trim().to_ascii_lowercase();
        let family = match id.as_str() {
            "uniform" => KernelFamily::Beta { theta: 0 },
            "epanechnikov" => KernelFamily::Beta { theta: 1 },
            "biweight" => KernelFamily::Beta { theta: 2 },
            "triweight" => KernelFamily::Beta { theta: 3 },
            "gaussian" => KernelFamily::Gaussian,
            "logistic" => KernelFamily::Logistic,
            "sigmoid" => KernelFamily::Sigmoid,
            "cosine" => KernelFamily::Cosine,
            "triangle" => KernelFamily::Triangle,
            "tricube" => KernelFamily::Tricube,
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                match parts.as_slice() {
                    ["beta", theta] => KernelFamily::Beta {
                        theta: theta.parse().map_err(|_| unknown())?,
                    },
                    ["vs", a0, a1] => KernelFamily::VarianceStabilizing {
                        a0: a0.parse().map_err(|_| unknown())?,
                        a1: a1.parse().map_err(|_| unknown())?,
                    },
                    _ => return Err(unknown()),
                }
            }
        };
        KernelSpec::new(family)
    }
}

/// Normalizer of `(1 - t²)^theta` on `[-1, 1]`: `1 / (2^(2θ+1) B(θ+1, θ+1))`.
fn beta_normalizer(theta: u32) -> f64 {
    // B(θ+1, θ+1) = (θ!)² / (2θ+1)!
    let ln_fact = |n: u32| (2..=n).map(|k| (k as f64).ln()).sum::<f64>();
    let ln_beta = 2.0 * ln_fact(theta) - ln_fact(2 * theta + 1);
    (-(2.0 * theta as f64 + 1.0) * std::f64::consts::LN_2 - ln_beta).exp()
}

/// The seventeen kernels of the reference variance-factor table, in table order.
pub fn reference_table_kernels() -> Vec<KernelSpec> {
    let mut families = vec![
        KernelFamily::Tricube,
        KernelFamily::Cosine,
        KernelFamily::Triangle,
        KernelFamily::Gaussian,
        KernelFamily::Logistic,
        KernelFamily::Sigmoid,
    ];
    families.extend((0..=10).map(|theta| KernelFamily::Beta { theta }));
    families
        .into_iter()
        .map(|f| KernelSpec::new(f).expect("built-in kernels are valid"))
        .collect()
}
