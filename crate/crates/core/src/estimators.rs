//! Local linear (LL), skewed (SK) and convex-combination (CC) estimators.
//!
//! The LL fit at `x₀` is the weighted least-squares line with weights
//! `K((X_i - x₀)/h)`. The SK estimate evaluates that line at another point
//! `x`. The CC estimate averages the SK estimates centred at `x - lh` and
//! `x + lh` with the plain LL estimate at `x`, in proportions `λ : 1 : λ`.

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numeric::CompensatedSum;
use crate::vtheory::interval_l;

/// Relative determinant threshold below which a window counts as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Paired observations, stored sorted by `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl RegressionSample {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Domain(format!("x and y lengths differ: {} vs {}", xs.len(), ys.len())));
        }
        if xs.len() < 2 {
            return Err(Error::Domain(format!("need at least 2 observations, got {}", xs.len())));
        }
        if let Some(i) = xs.iter().zip(&ys).position(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Domain(format!("observation {i} is not finite")));
        }
        let mut pairs: Vec<(f64, f64)> = xs.into_iter().zip(ys).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (xs, ys) = pairs.into_iter().unzip();
        Ok(RegressionSample { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Sorted design points.
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    /// Responses, aligned with [`xs`](Self::xs).
    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Index range of design points within `[lo, hi]`.
    fn window(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = self.xs.partition_point(|&x| x < lo);
        let b = self.xs.partition_point(|&x| x <= hi);
        a..b.max(a)
    }
}

/// Kernel-weighted moment sums at a centre `x₀`, in the scaled offset
/// `u_i = (X_i - x₀)/h`: `s_j = Σ u_i^j w_i`, `r_j = Σ u_i^j w_i Y_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFitSums {
    pub x0: f64,
    pub h: f64,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub r0: f64,
    pub r1: f64,
}

impl LocalFitSums {
    /// `s₀ s₂ - s₁²`.
    pub fn determinant(&self) -> f64 {
        self.s0 * self.s2 - self.s1 * self.s1
    }
}

/// Accumulates the local sums over the kernel's support only.
pub fn local_fit_sums(data: &RegressionSample, x0: f64, h: f64, kernel: &KernelSpec) -> Result<LocalFitSums> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {h}")));
    }
    let reach = kernel.support().extent() * h;
    let (mut s0, mut s1, mut s2, mut r0, mut r1) = (
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
    );
    for i in data.window(x0 - reach, x0 + reach) {
        let u = (data.xs[i] - x0) / h;
        let w = kernel.eval(u);
        if w == 0.0 {
            continue;
        }
        let wu = w * u;
        let y = data.ys[i];
        s0.add(w);
        s1.add(wu);
        s2.add(wu * u);
        r0.add(w * y);
        r1.add(wu * y);
    }
    Ok(LocalFitSums {
        x0,
        h,
        s0: s0.value(),
        s1: s1.value(),
        s2: s2.value(),
        r0: r0.value(),
        r1: r1.value(),
    })
}

/// Intercept and slope of the local linear fit at `x₀`.
pub fn local_linear_fit(data: &RegressionSample, x0: f64, h: f64, kernel: &KernelSpec) -> Result<(f64, f64)> {
    let s = local_fit_sums(data, x0, h, kernel)?;
    solve_sums(&s)
}

fn solve_sums(s: &LocalFitSums) -> Result<(f64, f64)> {
    let det = s.determinant();
    if !(det > SINGULAR_TOL * (s.s0 * s.s2 + 1e-300)) {
        return Err(Error::SingularWindow { x0: s.x0, det });
    }
    let b0 = (s.r0 * s.s2 - s.r1 * s.s1) / det;
    let b1 = (s.r1 * s.s0 - s.r0 * s.s1) / det / s.h;
    Ok((b0, b1))
}

/// The line fitted at `x₀`, evaluated at `x`.
pub fn sk_estimate(data: &RegressionSample, x: f64, x0: f64, h: f64, kernel: &KernelSpec) -> Result<f64> {
    let (b0, b1) = local_linear_fit(data, x0, h, kernel)?;
    Ok(b0 + b1 * (x - x0))
}

/// The convex-combination estimate at `x` with `l = l(λ)` from the kernel's `κ₂`.
pub fn cc_estimate(data: &RegressionSample, x: f64, h: f64, lambda: f64, kernel: &KernelSpec) -> Result<f64> {
    let l = interval_l(kernel.integrals().kappa2, lambda)?;
    cc_estimate_with_offset(data, x, h, lambda, l, kernel)
}

/// The convex-combination estimate with an explicit offset multiplier `l`.
pub fn cc_estimate_with_offset(
    data: &RegressionSample,
    x: f64,
    h: f64,
    lambda: f64,
    l: f64,
    kernel: &KernelSpec,
) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive and finite, got {lambda}")));
    }
    let part = |side: &'static str, x0: f64| {
        sk_estimate(data, x, x0, h, kernel).map_err(|e| Error::Component {
            side,
            source: Box::new(e),
        })
    };
    let left = part("left", x - l * h)?;
    let centre = part("centre", x)?;
    let right = part("right", x + l * h)?;
    Ok((lambda * left + centre + lambda * right) / (1.0 + 2.0 * lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kernels() -> Vec<KernelSpec> {
        ["gaussian", "epanechnikov", "uniform", "tricube", "vs:0:6.0131", "logistic"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }

    /// Weighted least squares through the 2x2 normal equations in raw offsets.
    fn oracle(xs: &[f64], ys: &[f64], x0: f64, h: f64, k: &KernelSpec) -> (f64, f64) {
        let (mut a00, mut a01, mut a11, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            let w = k.eval((x - x0) / h);
            let d = x - x0;
            a00 += w;
            a01 += w * d;
            a11 += w * d * d;
            b0 += w * y;
            b1 += w * d * y;
        }
        let det = a00 * a11 - a01 * a01;
        ((a11 * b0 - a01 * b1) / det, (a00 * b1 - a01 * b0) / det)
    }

    fn random_sample(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x).sin() + rng.random::<f64>() - 0.5).collect();
        (xs, ys)
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in kernels() {
            for _ in 0..30 {
                let (xs, ys) = random_sample(&mut rng, 200);
                let data = RegressionSample::new(xs.clone(), ys.clone()).unwrap();
                let x0 = rng.random::<f64>();
                let h = 0.05 + 0.2 * rng.random::<f64>();
                let (b0, b1) = local_linear_fit(&data, x0, h, &k).unwrap();
                let (o0, o1) = oracle(&xs, &ys, x0, h, &k);
                assert!((b0 - o0).abs() < 1e-9, "{k}: {b0} vs {o0}");
                assert!((b1 - o1).abs() < 1e-9 * o1.abs().max(1.0), "{k}: {b1} vs {o1}");
                let x = x0 + 0.1;
                let sk = sk_estimate(&data, x, x0, h, &k).unwrap();
                assert!((sk - (o0 + o1 * 0.1)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sk_at_centre_is_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (xs, ys) = random_sample(&mut rng, 100);
        let data = RegressionSample::new(xs, ys).unwrap();
        let k: KernelSpec = "gaussian".parse().unwrap();
        let (b0, _) = local_linear_fit(&data, 0.4, 0.1, &k).unwrap();
        assert_eq!(sk_estimate(&data, 0.4, 0.4, 0.1, &k).unwrap(), b0);
    }

    #[test]
    fn single_point_window_is_singular() {
        let data = RegressionSample::new(vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 3.0]).unwrap();
        let k: KernelSpec = "epanechnikov".parse().unwrap();
        assert!(matches!(
            local_linear_fit(&data, 0.5, 0.1, &k),
            Err(Error::SingularWindow { .. })
        ));
        assert!(matches!(
            local_linear_fit(&data, 5.0, 0.1, &k),
            Err(Error::SingularWindow { .. })
        ));
    }

    #[test]
    fn cc_names_failing_side() {
        let xs: Vec<f64> = (0..50).map(|i| 0.5 + 0.01 * i as f64).collect();
        let ys = xs.clone();
        let data = RegressionSample::new(xs, ys).unwrap();
        let k: KernelSpec = "epanechnikov".parse().unwrap();
        match cc_estimate(&data, 0.5, 0.005, 0.5, &k) {
            Err(Error::Component { side, .. }) => assert_eq!(side, "left"),
            other => panic!("unexpected {other:?}"),
        }
        match cc_estimate(&data, 0.9905, 0.012, 0.5, &k) {
            Err(Error::Component { side, .. }) => assert_eq!(side, "right"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn small_lambda_tends_to_local_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (xs, ys) = random_sample(&mut rng, 2000);
        let data = RegressionSample::new(xs, ys).unwrap();
        let k: KernelSpec = "gaussian".parse().unwrap();
        let h = 0.002;
        let ll = sk_estimate(&data, 0.5, 0.5, h, &k).unwrap();
        let mut last = f64::INFINITY;
        for lambda in [1e-2, 1e-3, 1e-4] {
            let cc = cc_estimate(&data, 0.5, h, lambda, &k).unwrap();
            let l = interval_l(k.integrals().kappa2, lambda).unwrap();
            let left = sk_estimate(&data, 0.5, 0.5 - l * h, h, &k).unwrap();
            let right = sk_estimate(&data, 0.5, 0.5 + l * h, h, &k).unwrap();
            let gap = (cc - ll).abs();
            let bound = lambda / (1.0 + 2.0 * lambda) * ((left - ll).abs() + (right - ll).abs());
            assert!(gap <= bound + 1e-12, "{gap} > {bound}");
            assert!(gap < last);
            last = gap;
        }
        assert!(last < 1e-2, "{last}");
    }

    #[test]
    fn input_validation() {
        assert!(RegressionSample::new(vec![1.0], vec![1.0]).is_err());
        assert!(RegressionSample::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(RegressionSample::new(vec![1.0, f64::NAN], vec![1.0, 2.0]).is_err());
        let data = RegressionSample::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let k: KernelSpec = "gaussian".parse().unwrap();
        assert!(local_linear_fit(&data, 0.5, 0.0, &k).is_err());
        assert!(cc_estimate(&data, 0.5, 1.0, 0.0, &k).is_err());
    }

    proptest! {
        #[test]
        fn affine_functions_are_reproduced(
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
            seed in 0u64..1000,
            x in 0.3f64..0.7,
            h in 0.05f64..0.2,
            lambda in 0.01f64..3.0,
            kid in 0usize..6,
        ) {
            let k = &kernels()[kid];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..400).map(|_| -1.0 + 3.0 * rng.random::<f64>()).collect();
            let ys: Vec<f64> = xs.iter().map(|t| a + b * t).collect();
            let data = RegressionSample::new(xs, ys).unwrap();
            let truth = a + b * x;
            let tol = 1e-9 * (1.0 + a.abs() + b.abs());
            let (b0, b1) = local_linear_fit(&data, x, h, k).unwrap();
            prop_assert!((b0 - truth).abs() < tol);
            prop_assert!((b1 - b).abs() < tol / h);
            prop_assert!((sk_estimate(&data, x + 0.05, x - 0.02, h, k).unwrap() - (a + b * (x + 0.05))).abs() < tol);
            prop_assert!((cc_estimate(&data, x, h, lambda, k).unwrap() - truth).abs() < tol);
        }

        #[test]
        fn constants_are_reproduced(c in -10.0f64..10.0, seed in 0u64..100, lambda in 0.01f64..5.0) {
            let k: KernelSpec = "biweight".parse().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
            let data = RegressionSample::new(xs, vec![c; 300]).unwrap();
            let est = cc_estimate(&data, 0.5, 0.08, lambda, &k).unwrap();
            prop_assert!((est - c).abs() < 1e-12 * c.abs().max(1.0));
        }
    }
}
