//! Adaptive Gauss–Legendre quadrature with interval bisection.
//!
//! Each panel is integrated with a fixed 10-point Gauss–Legendre rule and
//! compared against the sum over its two halves. Panels whose difference
//! exceeds their share of the tolerance are split again. Integrands with
//! known kinks or jumps should be passed through [`integrate_pieces`] so
//! that every breakpoint becomes a panel edge.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const ORDER: usize = 10;
const MAX_DEPTH: u32 = 48;

struct Rule {
    nodes: [f64; ORDER],
    weights: [f64; ORDER],
}

fn rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(ORDER))
}

/// Nodes and weights on [-1, 1] by Newton iteration on P_n.
fn legendre_rule(n: usize) -> Rule {
    let mut nodes = [0.0; ORDER];
    let mut weights = [0.0; ORDER];
    let nf = n as f64;
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            deriv = dp;
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        if dp != 0.0 {
            deriv = dp;
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * deriv * deriv);
    }
    Rule { nodes, weights }
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let r = rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in r.nodes.iter().zip(r.weights.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Integrates `f` over `[a, b]` to absolute tolerance `abs_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, abs_tol).map(|v| -v);
    }
    let mut total = 0.0;
    let mut unresolved = 0.0;
    // (lo, hi, whole-panel estimate, tolerance share, depth)
    let mut stack = vec![(a, b, panel(&f, a, b), abs_tol, 0u32)];
    while let Some((lo, hi, whole, tol, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = panel(&f, lo, mid);
        let right = panel(&f, mid, hi);
        let err = (left + right - whole).abs();
        if err <= tol || mid <= lo || mid >= hi {
            total += left + right;
        } else if depth >= MAX_DEPTH {
            total += left + right;
            unresolved += err;
        } else {
            stack.push((lo, mid, left, 0.5 * tol, depth + 1));
            stack.push((mid, hi, right, 0.5 * tol, depth + 1));
        }
    }
    if !total.is_finite() || unresolved > abs_tol {
        return Err(Error::Quadrature {
            lo: a,
            hi: b,
            achieved: unresolved,
        });
    }
    Ok(total)
}

/// Integrates over `[lo, hi]`, splitting at every breakpoint strictly inside.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    abs_tol: f64,
) -> Result<f64> {
    if hi <= lo {
        return Ok(0.0);
    }
    let mut edges: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&p| p > lo && p < hi)
        .collect();
    edges.push(lo);
    edges.push(hi);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let share = abs_tol / (edges.len() - 1) as f64;
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += integrate(&f, w[0], w[1], share)?;
    }
    Ok(total)
}

/// Composite trapezoid rule for samples on a uniform grid of spacing `step`.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            step * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Trapezoid rule on arbitrary (sorted) abscissae.
pub fn trapezoid_xy(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}
