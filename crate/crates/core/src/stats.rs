//! Correlation and simple linear regression with t-test p-values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::SampleLengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: xs.len(),
        });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Centered sums (Sxx, Syy, Sxy).
fn moments(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64, f64) {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (mx, my, sxx, syy, sxy)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check(xs, ys)?;
    let (_, _, sxx, syy, sxy) = moments(xs, ys);
    if !(sxx > 0.0) {
        return Err(Error::DegenerateVariance("x"));
    }
    if !(syy > 0.0) {
        return Err(Error::DegenerateVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties get their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation. Works for n >= 2 here since it is used to
/// compare rankings of a handful of predictors.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::SampleLengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (_, _, sxx, syy, sxy) = moments(&rx, &ry);
    if !(sxx > 0.0) {
        return Err(Error::DegenerateVariance("x"));
    }
    if !(syy > 0.0) {
        return Err(Error::DegenerateVariance("y"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Two-sided tail probability P(|T| >= |t|) of Student's t with `df`
/// degrees of freedom.
///
/// With t = √df·tan θ the density becomes proportional to cos^(df−1) θ on
/// (−π/2, π/2), so the tail is a ratio of two integrals of a smooth
/// function over finite intervals and the normalizing constant cancels.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let theta0 = (t.abs() / df.sqrt()).atan();
    if theta0 >= std::f64::consts::FRAC_PI_2 {
        return 0.0;
    }
    let f = |th: f64| th.cos().powf(df - 1.0);
    let half = std::f64::consts::FRAC_PI_2;
    let total = simpson(&f, 0.0, half, 1e-14);
    let tail = simpson(&f, theta0, half, 1e-14);
    (tail / total).clamp(0.0, 1.0)
}

/// The t value whose two-sided tail probability is `p`, by bisection.
pub fn t_critical(p: f64, df: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while t_two_sided_p(hi, df) > p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_two_sided_p(mid, df) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Least-squares fit of y on x with correlation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub n: usize,
    pub pearson_r: f64,
    pub r_squared: f64,
    /// Two-sided p-value of the slope.
    pub p_value: f64,
    pub slope: f64,
    pub intercept: f64,
    /// Residual standard error.
    pub residual_std: f64,
    pub x_mean: f64,
    /// Σ (x − x̄)².
    pub sxx: f64,
    /// 97.5% t quantile with n − 2 degrees of freedom.
    pub t_crit: f64,
}

impl CorrelationReport {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// 95% confidence band for the mean response at `x`.
    pub fn band(&self, x: f64) -> (f64, f64) {
        let y = self.predict(x);
        let dx = x - self.x_mean;
        let half = self.t_crit * self.residual_std * (1.0 / self.n as f64 + dx * dx / self.sxx).sqrt();
        (y - half, y + half)
    }
}

pub fn linear_fit_stats(metric: &str, xs: &[f64], ys: &[f64]) -> Result<CorrelationReport> {
    let r = pearson(xs, ys)?;
    let n = xs.len();
    let (mx, my, sxx, syy, sxy) = moments(xs, ys);
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r_squared = (1.0 - ss_res / syy).clamp(0.0, 1.0);
    let df = (n - 2) as f64;
    let t = if r.abs() >= 1.0 {
        f64::INFINITY
    } else {
        r * (df / (1.0 - r * r)).sqrt()
    };
    Ok(CorrelationReport {
        metric: metric.to_string(),
        n,
        pearson_r: r,
        r_squared,
        p_value: t_two_sided_p(t, df),
        slope,
        intercept,
        residual_std: if n > 2 { (ss_res / df).sqrt() } else { 0.0 },
        x_mean: mx,
        sxx,
        t_crit: t_critical(0.05, df),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&xs, &xs.map(|x| 2.0 * x + 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &xs.map(|x| -x)).unwrap() + 1.0).abs() < 1e-12);
        // Direct: x̄ = 2.5, ȳ = 2.75, Sxy = 5.5, Sxx = 5, Syy = 8.75.
        let r = pearson(&xs, &[1.0, 3.0, 2.0, 5.0]).unwrap();
        assert!((r - 5.5 / (5.0f64 * 8.75).sqrt()).abs() < 1e-12);
        assert!(matches!(pearson(&xs, &[1.0; 4]), Err(Error::DegenerateVariance("y"))));
        assert!(pearson(&xs[..2], &xs[..2]).is_err());
    }

    #[test]
    fn t_tails_match_closed_forms() {
        // df = 1 is Cauchy: P(|T| > t) = 1 − 2 atan(t)/π.
        for t in [0.1, 1.0, 3.0, 40.0] {
            let want = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert!((t_two_sided_p(t, 1.0) - want).abs() < 1e-9, "{t}");
        }
        // df = 2: P(|T| > t) = 1 − t/√(2 + t²).
        for t in [0.5f64, 2.0, 10.0] {
            let want = 1.0 - t / (2.0 + t * t).sqrt();
            assert!((t_two_sided_p(t, 2.0) - want).abs() < 1e-9, "{t}");
        }
        assert_eq!(t_two_sided_p(0.0, 7.0), 1.0);
        // Tabulated 97.5% quantiles.
        assert!((t_critical(0.05, 10.0) - 2.228138852).abs() < 1e-6);
        assert!((t_critical(0.05, 18.0) - 2.100922037).abs() < 1e-6);
    }

    #[test]
    fn perfect_and_null_fits() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let rep = linear_fit_stats("m", &xs, &ys).unwrap();
        assert!((rep.r_squared - 1.0).abs() < 1e-12);
        assert!(rep.p_value < 1e-12);
        // Symmetric parabola over symmetric xs: exactly zero correlation.
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let ys = xs.map(|x| x * x);
        let rep = linear_fit_stats("m", &xs, &ys).unwrap();
        assert!(rep.pearson_r.abs() < 1e-15);
        assert!((rep.p_value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn spearman_handles_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[40.0, 30.0, 20.0, 10.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 8.0, 27.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pearson_symmetry_and_affine_invariance(
            pts in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..30),
            a in 0.1..10.0f64, b in -50.0..50.0f64,
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                prop_assert!((r - pearson(&ys, &xs).unwrap()).abs() < 1e-12);
                let xs2: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                prop_assert!((r - pearson(&xs2, &ys).unwrap()).abs() < 1e-9);
                let rep = linear_fit_stats("m", &xs, &ys).unwrap();
                prop_assert!((rep.r_squared - r * r).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&rep.p_value));
            }
        }
    }
}
