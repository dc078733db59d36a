//! Seeded Monte Carlo harness: data generation, per-point variance profiles,
//! trimmed SD of variances, and the MISE estimate.

use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{cc_estimate_with_offset, RegressionSample};
use crate::kernels::KernelSpec;
use crate::numeric::quadrature::trapezoid_xy;
use crate::numeric::{mean_and_variance, CompensatedSum};
use crate::scenario::{Design, Scenario};
use crate::selection::{EstimatorRule, Problem, RuleId};
use crate::vtheory::{interval_l, VCurve};

/// Maximum consecutive rejections allowed when drawing one design point.
pub const MAX_REJECTIONS: usize = 1_000_000;

/// Default boundary trimming levels.
pub const DEFAULT_TRIM: [f64; 4] = [0.0, 0.05, 0.10, 0.15];

/// Standard normal variates by the polar Box–Muller method. Each accepted
/// pair yields two variates; the second is cached for the next call.
#[derive(Debug, Clone)]
pub struct BoxMuller<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> BoxMuller<R> {
    pub fn new(rng: R) -> Self {
        BoxMuller { rng, spare: None }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let v1 = 2.0 * self.rng.random::<f64>() - 1.0;
            let v2 = 2.0 * self.rng.random::<f64>() - 1.0;
            let rsq = v1 * v1 + v2 * v2;
            if rsq < 1.0 && rsq > 0.0 {
                let fac = (-2.0 * rsq.ln() / rsq).sqrt();
                self.spare = Some(v1 * fac);
                return v2 * fac;
            }
        }
    }

    /// A uniform draw on `[0, 1)` from the underlying generator.
    pub fn next_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// The generator for replication `stream` under a master seed.
pub fn replication_stream(seed: u64, stream: u64) -> BoxMuller<ChaCha8Rng> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    BoxMuller::new(rng)
}

/// Draws one design point.
pub fn draw_design<R: RngCore>(scenario: &Scenario, gen: &mut BoxMuller<R>) -> Result<f64> {
    let (lo, hi) = scenario.domain();
    match scenario.design() {
        Design::Uniform => Ok(lo + (hi - lo) * gen.next_uniform()),
        Design::TruncatedNormal { mean, sd } => {
            for _ in 0..=MAX_REJECTIONS {
                let x = mean + sd * gen.next_normal();
                if (lo..=hi).contains(&x) {
                    return Ok(x);
                }
            }
            Err(Error::Rejection(MAX_REJECTIONS))
        }
    }
}

/// Draws `n` pairs `(X_i, m(X_i) + U_i)` with `U_i ~ N(0, σ²(X_i))`.
pub fn generate_sample<R: RngCore>(scenario: &Scenario, n: usize, gen: &mut BoxMuller<R>) -> Result<RegressionSample> {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = draw_design(scenario, gen)?;
        let u = scenario.sigma2(x).sqrt() * gen.next_normal();
        xs.push(x);
        ys.push(scenario.m(x) + u);
    }
    RegressionSample::new(xs, ys)
}

/// Draws `n` noise-free pairs `(X_i, m(X_i))`.
pub fn generate_design_sample<R: RngCore>(
    scenario: &Scenario,
    n: usize,
    gen: &mut BoxMuller<R>,
) -> Result<RegressionSample> {
    let xs = (0..n).map(|_| draw_design(scenario, gen)).collect::<Result<Vec<_>>>()?;
    let ys = xs.iter().map(|&x| scenario.m(x)).collect();
    RegressionSample::new(xs, ys)
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub kernel: KernelSpec,
    pub rules: Vec<RuleId>,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub trim_levels: Vec<f64>,
    /// Every replication draws from stream 0 instead of its own substream.
    pub shared_stream: bool,
}

impl SimConfig {
    pub fn new(scenario: Scenario, kernel: KernelSpec, rules: Vec<RuleId>, n: usize, replications: usize, seed: u64) -> Self {
        SimConfig {
            scenario,
            kernel,
            rules,
            n,
            replications,
            seed,
            trim_levels: DEFAULT_TRIM.to_vec(),
            shared_stream: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Config(format!("n must be at least 10, got {}", self.n)));
        }
        if self.replications < 2 {
            return Err(Error::Config(format!("M must be at least 2, got {}", self.replications)));
        }
        if self.rules.is_empty() {
            return Err(Error::Config("no rules selected".into()));
        }
        if let Some(t) = self.trim_levels.iter().find(|t| !(0.0..0.5).contains(*t)) {
            return Err(Error::Config(format!("trim level {t} outside [0, 0.5)")));
        }
        Ok(())
    }
}

/// Results for one estimator rule.
#[derive(Debug, Clone)]
pub struct RuleReport {
    pub rule: EstimatorRule,
    pub xs: Vec<f64>,
    /// Sample variance over replications at each grid point; NaN where excluded.
    pub variances: Vec<f64>,
    /// `(ι, SD)` per trim level.
    pub sd: Vec<(f64, f64)>,
    pub mise_hat: f64,
    /// Grid points dropped because some replication failed there.
    pub excluded: usize,
}

impl RuleReport {
    pub fn sd_at(&self, trim: f64) -> Option<f64> {
        self.sd.iter().find(|(t, _)| (t - trim).abs() < 1e-12).map(|&(_, s)| s)
    }
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub seed: u64,
    pub n: usize,
    pub replications: usize,
    pub rules: Vec<RuleReport>,
    pub elapsed: Duration,
}

impl SimReport {
    pub fn rule(&self, id: RuleId) -> Option<&RuleReport> {
        self.rules.iter().find(|r| r.rule.id == id)
    }
}

/// Builds the requested rules, then runs the replications.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let curve = VCurve::new(&cfg.kernel)?;
    let problem = Problem::new(&cfg.scenario, &curve)?;
    let rules = cfg
        .rules
        .iter()
        .map(|&id| problem.build(id, cfg.n))
        .collect::<Result<Vec<_>>>()?;
    run_with_rules(cfg, &rules)
}

/// Runs the replications for prebuilt rules. `cfg.rules` is ignored.
pub fn run_with_rules(cfg: &SimConfig, rules: &[EstimatorRule]) -> Result<SimReport> {
    cfg.validate()?;
    let start = Instant::now();
    let kappa2 = cfg.kernel.integrals().kappa2;
    let plans = rules
        .iter()
        .map(|r| RulePlan::new(r, kappa2))
        .collect::<Result<Vec<_>>>()?;

    // estimates[rep][rule][point]
    let estimates: Vec<Vec<Vec<Option<f64>>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let stream = if cfg.shared_stream { 0 } else { rep as u64 };
            let mut gen = replication_stream(cfg.seed, stream);
            let data = generate_sample(&cfg.scenario, cfg.n, &mut gen)?;
            Ok(plans.iter().map(|p| p.evaluate(&data, &cfg.kernel)).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let reports = plans
        .iter()
        .enumerate()
        .map(|(r, plan)| summarize(cfg, plan, r, &estimates))
        .collect();
    Ok(SimReport {
        seed: cfg.seed,
        n: cfg.n,
        replications: cfg.replications,
        rules: reports,
        elapsed: start.elapsed(),
    })
}

struct RulePlan<'a> {
    rule: &'a EstimatorRule,
    /// `(x, h, λ, l)` per grid point.
    points: Vec<(f64, f64, f64, f64)>,
}

impl<'a> RulePlan<'a> {
    fn new(rule: &'a EstimatorRule, kappa2: f64) -> Result<Self> {
        let points = rule
            .xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let (h, lambda) = (rule.bandwidth.at(i), rule.weight.at(i));
                Ok((x, h, lambda, interval_l(kappa2, lambda)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RulePlan { rule, points })
    }

    fn evaluate(&self, data: &RegressionSample, kernel: &KernelSpec) -> Vec<Option<f64>> {
        self.points
            .iter()
            .map(|&(x, h, lambda, l)| cc_estimate_with_offset(data, x, h, lambda, l, kernel).ok())
            .collect()
    }
}

fn summarize(cfg: &SimConfig, plan: &RulePlan, r: usize, estimates: &[Vec<Vec<Option<f64>>>]) -> RuleReport {
    let xs: Vec<f64> = plan.points.iter().map(|p| p.0).collect();
    let valid: Vec<bool> = (0..xs.len())
        .map(|i| estimates.iter().all(|rep| rep[r][i].is_some()))
        .collect();
    let excluded = valid.iter().filter(|v| !**v).count();

    let variances: Vec<f64> = (0..xs.len())
        .map(|i| {
            if !valid[i] {
                return f64::NAN;
            }
            let column: Vec<f64> = estimates.iter().map(|rep| rep[r][i].unwrap()).collect();
            mean_and_variance(&column).1
        })
        .collect();

    let sd = cfg
        .trim_levels
        .iter()
        .map(|&t| {
            let (lo, hi) = cfg.scenario.domain();
            let (a, b) = (lo + t - 1e-9, hi - t + 1e-9);
            let kept: Vec<f64> = xs
                .iter()
                .zip(&variances)
                .filter(|(x, v)| (a..=b).contains(*x) && !v.is_nan())
                .map(|(_, &v)| v)
                .collect();
            (t, mean_and_variance(&kept).1.sqrt())
        })
        .collect();

    let kept_x: Vec<f64> = xs.iter().zip(&valid).filter(|(_, v)| **v).map(|(&x, _)| x).collect();
    let weights: Vec<(f64, f64)> = kept_x.iter().map(|&x| (cfg.scenario.f(x), cfg.scenario.m(x))).collect();
    let mut total = CompensatedSum::new();
    for rep in estimates {
        let est: Vec<f64> = rep[r].iter().flatten().copied().collect();
        let integrand: Vec<f64> = weights
            .iter()
            .zip(&est)
            .map(|(&(f, m), &e)| f * (m - e).powi(2))
            .collect();
        total.add(if kept_x.len() >= 2 { trapezoid_xy(&kept_x, &integrand) } else { 0.0 });
    }
    RuleReport {
        rule: plan.rule.clone(),
        xs,
        variances,
        sd,
        mise_hat: total.value() / estimates.len() as f64,
        excluded,
    }
}

/// Pearson correlation of two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_and_variance(a);
    let (mb, vb) = mean_and_variance(b);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
    cov / (va * vb).sqrt()
}
