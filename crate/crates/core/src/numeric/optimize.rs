//! One-dimensional minimization and root finding.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// A located minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
///
/// Stops once the bracket is narrower than `rel_tol * (|a| + |b|) / 2`
/// (with a tiny absolute floor). The best point seen is returned, so the
/// endpoints are reachable when the minimum sits on the boundary.
pub fn golden_section<F>(mut f: F, a: f64, b: f64, rel_tol: f64) -> Result<Minimum>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(a <= b) {
        return Err(Error::Domain(format!("golden section needs a <= b, got [{a}, {b}]")));
    }
    let (mut lo, mut hi) = (a, b);
    if lo == hi {
        return Ok(Minimum { x: lo, value: f(lo)? });
    }
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut best = if fc <= fd { Minimum { x: c, value: fc } } else { Minimum { x: d, value: fd } };
    for _ in 0..500 {
        if (hi - lo) <= rel_tol * 0.5 * (lo.abs() + hi.abs()) + 1e-300 {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c)?;
            if fc < best.value {
                best = Minimum { x: c, value: fc };
            }
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d)?;
            if fd < best.value {
                best = Minimum { x: d, value: fd };
            }
        }
    }
    for edge in [a, b] {
        if (best.x - edge).abs() <= 4.0 * rel_tol * edge.abs().max(1e-300) {
            let fe = f(edge)?;
            if fe < best.value {
                best = Minimum { x: edge, value: fe };
            }
        }
    }
    Ok(best)
}

/// Plain bisection for a sign change of `f` on `[a, b]`.
pub fn bisect<F>(mut f: F, a: f64, b: f64, x_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = (a, b);
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Domain(format!("no sign change on [{a}, {b}]")));
    }
    while hi - lo > x_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Brent's method: bisection safeguarded with secant and inverse quadratic
/// interpolation steps. Requires a sign change on `[a, b]`.
pub fn brent_root<F>(mut f: F, a: f64, b: f64, x_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Domain(format!("no sign change on [{a}, {b}]")));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..300 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * x_tol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Ok(b)
}

/// `count` points spaced evenly in log between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == count {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_vertex() {
        let m = golden_section(|x| Ok((x - 0.3).powi(2) + 1.0), 0.0, 2.0, 1e-10).unwrap();
        assert!((m.x - 0.3).abs() < 1e-8);
        assert!((m.value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn golden_reaches_boundary() {
        let m = golden_section(|x| Ok(x), 1.0, 3.0, 1e-9).unwrap();
        assert_eq!(m.x, 1.0);
    }

    #[test]
    fn bisection_and_brent_agree() {
        let f = |x: f64| Ok(x.powi(3) - 2.0);
        let r1 = bisect(f, 0.0, 2.0, 1e-14).unwrap();
        let r2 = brent_root(f, 0.0, 2.0, 1e-14).unwrap();
        let exact = 2f64.cbrt();
        assert!((r1 - exact).abs() < 1e-13);
        assert!((r2 - exact).abs() < 1e-13);
    }

    #[test]
    fn roots_need_sign_change() {
        assert!(bisect(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-9).is_err());
        assert!(brent_root(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-9).is_err());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 10.0, 5);
        assert_eq!(g[0], 1e-3);
        assert_eq!(g[4], 10.0);
        assert!((g[2] - 0.1).abs() < 1e-14);
    }
}
