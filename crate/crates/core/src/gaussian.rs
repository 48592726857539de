//! Normal densities and the overlapping coefficient.

use serde::{Deserialize, Serialize};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub fn new(mean: f64, std: f64) -> Self {
        Gaussian { mean, std }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let u = (x - self.mean) / self.std;
        -0.5 * u * u - self.std.ln() - LN_SQRT_2PI
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// `d/dx log pdf(x)`.
    pub fn d_log_pdf(&self, x: f64) -> f64 {
        -(x - self.mean) / (self.std * self.std)
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Points where the two densities are equal.
fn crossings(p: &Gaussian, q: &Gaussian) -> Vec<f64> {
    let (s1, s2) = (p.std * p.std, q.std * q.std);
    let a = 0.5 / s2 - 0.5 / s1;
    let b = p.mean / s1 - q.mean / s2;
    let c = 0.5 * q.mean * q.mean / s2 - 0.5 * p.mean * p.mean / s1 + (q.std / p.std).ln();
    if a.abs() < 1e-14 * (0.5 / s1 + 0.5 / s2) {
        return if b != 0.0 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    vec![(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
}

/// `∫ min(p(x), q(x)) dx` by adaptive quadrature over `±8` standard deviations
/// around both means, split at the density crossings and at sigma multiples.
///
/// Returns `None` for non-finite or non-positive parameters.
pub fn overlap_coefficient(p: Gaussian, q: Gaussian) -> Option<f64> {
    let params = [p.mean, p.std, q.mean, q.std];
    if params.iter().any(|v| !v.is_finite()) || p.std <= 0.0 || q.std <= 0.0 {
        return None;
    }
    let lo = (p.mean - 8.0 * p.std).min(q.mean - 8.0 * q.std);
    let hi = (p.mean + 8.0 * p.std).max(q.mean + 8.0 * q.std);
    let mut points = vec![lo, hi];
    for g in [p, q] {
        for k in [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0] {
            points.push(g.mean - k * g.std);
            points.push(g.mean + k * g.std);
        }
    }
    points.extend(crossings(&p, &q));
    points.retain(|x| x.is_finite() && *x >= lo && *x <= hi);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let f = |x: f64| p.pdf(x).min(q.pdf(x));
    let total: f64 = points
        .windows(2)
        .map(|w| integrate(f, w[0], w[1], 1e-14))
        .sum();
    Some(total.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_pdf_at_mean() {
        let g = Gaussian::new(1.5, 0.3);
        let expected = -(0.3f64 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((g.log_pdf(1.5) - expected).abs() < 1e-14);
        assert_eq!(g.d_log_pdf(1.5), 0.0);
    }

    #[test]
    fn quadrature_integrates_density_to_one() {
        let g = Gaussian::new(-2.0, 0.7);
        let total = integrate(|x| g.pdf(x), -2.0 - 10.0 * 0.7, -2.0 + 10.0 * 0.7, 1e-13);
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ovl_identical_is_one() {
        let g = Gaussian::new(0.3, 2.0);
        assert!((overlap_coefficient(g, g).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ovl_unit_gap_matches_tabulated_value() {
        // 2 * Phi(-1) = 0.31731050786291...
        let v = overlap_coefficient(Gaussian::new(0.0, 1.0), Gaussian::new(2.0, 1.0)).unwrap();
        assert!((v - 0.317_310_507_862_914).abs() < 1e-9, "{v}");
    }

    #[test]
    fn ovl_far_apart_is_negligible() {
        let v = overlap_coefficient(Gaussian::new(0.0, 1.0), Gaussian::new(100.0, 1.0)).unwrap();
        assert!(v < 1e-12);
    }

    #[test]
    fn ovl_unequal_variance_is_symmetric_and_bounded() {
        let p = Gaussian::new(0.0, 1e-3);
        let q = Gaussian::new(0.5, 3.0);
        let a = overlap_coefficient(p, q).unwrap();
        let b = overlap_coefficient(q, p).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert!((0.0..=1.0).contains(&a));
        // Narrow p sits inside q: overlap is roughly the mass of p where q > p.
        assert!(a < 0.01);
    }

    #[test]
    fn ovl_rejects_bad_parameters() {
        assert!(overlap_coefficient(Gaussian::new(0.0, 0.0), Gaussian::new(0.0, 1.0)).is_none());
        assert!(
            overlap_coefficient(Gaussian::new(f64::NAN, 1.0), Gaussian::new(0.0, 1.0)).is_none()
        );
    }
}
