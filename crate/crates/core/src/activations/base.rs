//! Base generating distributions and the activation functions they induce.
//!
//! Each [`BaseKind`] is a one-parameter exponential family on a fixed support
//! with natural parameter `u`:
//!
//! | kind                | support  | density / mass        | mean `f0(u)`            |
//! |---------------------|----------|-----------------------|-------------------------|
//! | `SigmoidBernoulli`  | {0, 1}   | `e^{u h} / (1+e^u)`   | `1 / (1 + e^{-u})`      |
//! | `Ted`               | [0, 1]   | `u e^{u h}/(e^u - 1)` | `1/(1-e^{-u}) - 1/u`    |
//! | `LinearGaussian`    | reals    | `N(h; u, 1)`          | `u`                     |
//!
//! The log-partition `L0` satisfies `L0' = f0` and `L0'' = f0'` (the variance).
//! The TED expressions have a removable singularity at `u = 0`; inside
//! `|u| < TAYLOR_CUTOFF` they are evaluated by truncated series.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_finite, Error, Result};

/// Below this `|u|` the TED mean, CDF and log-partition switch to series form.
pub const TAYLOR_CUTOFF: f64 = 1e-3;

/// The TED variance and its derivative cancel worse than the mean, so they use
/// a longer series over a wider window.
const TED_VAR_CUTOFF: f64 = 1e-2;

/// Family of a stochastic unit (and of the activation function equal to its mean).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseKind {
    SigmoidBernoulli,
    Ted,
    LinearGaussian,
}

impl BaseKind {
    pub const ALL: [BaseKind; 3] = [
        BaseKind::SigmoidBernoulli,
        BaseKind::Ted,
        BaseKind::LinearGaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseKind::SigmoidBernoulli => "sigmoid",
            BaseKind::Ted => "ted",
            BaseKind::LinearGaussian => "linear",
        }
    }

    /// Closed support of the generating distribution.
    pub fn support(self) -> (f64, f64) {
        match self {
            BaseKind::SigmoidBernoulli | BaseKind::Ted => (0.0, 1.0),
            BaseKind::LinearGaussian => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn in_support(self, h: f64) -> bool {
        match self {
            BaseKind::SigmoidBernoulli => h == 0.0 || h == 1.0,
            BaseKind::Ted => (0.0..=1.0).contains(&h),
            BaseKind::LinearGaussian => h.is_finite(),
        }
    }

    /// Mean of the generating distribution, i.e. the activation function `f0(u)`.
    #[inline]
    pub fn mean(self, u: f64) -> f64 {
        match self {
            BaseKind::SigmoidBernoulli => sigmoid(u),
            BaseKind::Ted => ted_mean(u),
            BaseKind::LinearGaussian => u,
        }
    }

    /// `f0'(u)`, which is also the variance of the generating distribution.
    #[inline]
    pub fn deriv(self, u: f64) -> f64 {
        match self {
            BaseKind::SigmoidBernoulli => sigmoid(u) * sigmoid(-u),
            BaseKind::Ted => ted_variance(u),
            BaseKind::LinearGaussian => 1.0,
        }
    }

    /// `f0''(u)`.
    #[inline]
    pub fn deriv2(self, u: f64) -> f64 {
        match self {
            BaseKind::SigmoidBernoulli => {
                let s = sigmoid(u);
                s * sigmoid(-u) * (1.0 - 2.0 * s)
            }
            BaseKind::Ted => ted_third_cumulant(u),
            BaseKind::LinearGaussian => 0.0,
        }
    }

    /// `ln f0'(u)`, computed without underflow for large `|u|`.
    #[inline]
    pub fn log_deriv(self, u: f64) -> f64 {
        match self {
            BaseKind::SigmoidBernoulli => -softplus(u) - softplus(-u),
            BaseKind::Ted => ted_variance(u).ln(),
            BaseKind::LinearGaussian => 0.0,
        }
    }

    /// `f0''(u) / f0'(u)`.
    #[inline]
    pub fn deriv_ratio(self, u: f64) -> f64 {
        match self {
            BaseKind::SigmoidBernoulli => 1.0 - 2.0 * sigmoid(u),
            BaseKind::Ted => ted_third_cumulant(u) / ted_variance(u),
            BaseKind::LinearGaussian => 0.0,
        }
    }

    /// Log-partition `L0(u)` with `L0' = f0`.
    ///
    /// Constants: softplus for Bernoulli, `log((e^u - 1)/u)` for TED (zero at
    /// `u = 0`), `u^2/2` for the Gaussian.
    #[inline]
    pub fn log_partition(self, u: f64) -> f64 {
        match self {
            BaseKind::SigmoidBernoulli => softplus(u),
            BaseKind::Ted => ted_log_partition(u),
            BaseKind::LinearGaussian => 0.5 * u * u,
        }
    }

    /// Log of the base measure, so that `u h - L0(u) + log_base_measure(h)` is
    /// the log density (or mass) of `h`.
    #[inline]
    pub fn log_base_measure(self, h: f64) -> f64 {
        match self {
            BaseKind::SigmoidBernoulli | BaseKind::Ted => 0.0,
            BaseKind::LinearGaussian => -0.5 * h * h - 0.5 * (2.0 * PI).ln(),
        }
    }

    /// `P(H <= h)` under `p0(.; u)`. Values of `h` outside the support clamp to 0 or 1.
    pub fn cdf(self, h: f64, u: f64) -> f64 {
        match self {
            BaseKind::SigmoidBernoulli => {
                if h < 0.0 {
                    0.0
                } else if h < 1.0 {
                    sigmoid(-u)
                } else {
                    1.0
                }
            }
            BaseKind::Ted => ted_cdf(h, u),
            BaseKind::LinearGaussian => 0.5 * libm::erfc(-(h - u) / SQRT_2),
        }
    }

    /// One draw from `p0(.; u)`.
    pub fn sample<R: Rng + ?Sized>(self, u: f64, rng: &mut R) -> f64 {
        match self {
            BaseKind::SigmoidBernoulli => {
                if rng.random::<f64>() < sigmoid(u) {
                    1.0
                } else {
                    0.0
                }
            }
            BaseKind::Ted => ted_inverse_cdf(rng.random::<f64>(), u),
            BaseKind::LinearGaussian => u + rng.sample::<f64, _>(StandardNormal),
        }
    }

    /// Natural parameter whose mean is `y`. `y` is clamped into the open range of
    /// the mean function first.
    pub fn inverse_mean(self, y: f64) -> f64 {
        match self {
            BaseKind::LinearGaussian => y,
            BaseKind::SigmoidBernoulli => {
                let y = y.clamp(1e-12, 1.0 - 1e-12);
                (y / (1.0 - y)).ln()
            }
            BaseKind::Ted => {
                let y = y.clamp(1e-9, 1.0 - 1e-9);
                let (mut lo, mut hi) = (-1e9, 1e9);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if ted_mean(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sigmoid" | "sigmoid_bernoulli" | "bernoulli" => Ok(BaseKind::SigmoidBernoulli),
            "ted" => Ok(BaseKind::Ted),
            "linear" | "linear_gaussian" | "gaussian" => Ok(BaseKind::LinearGaussian),
            other => Err(Error::invalid(format!("unknown base kind `{other}`"))),
        }
    }
}

/// Checked `f0(u)`.
pub fn base_eval(kind: BaseKind, u: f64) -> Result<f64> {
    check_finite("pre-activation", u)?;
    Ok(kind.mean(u))
}

/// Checked `f0'(u)`.
pub fn base_deriv(kind: BaseKind, u: f64) -> Result<f64> {
    check_finite("pre-activation", u)?;
    Ok(kind.deriv(u))
}

/// Checked `L0(u)`.
pub fn base_logpartition(kind: BaseKind, u: f64) -> Result<f64> {
    check_finite("pre-activation", u)?;
    Ok(kind.log_partition(u))
}

/// Checked `Phi0(h; u)`; `h` outside the support clamps, it is not an error.
pub fn base_cdf(kind: BaseKind, h: f64, u: f64) -> Result<f64> {
    check_finite("natural parameter", u)?;
    if h.is_nan() {
        return Err(Error::invalid("cdf argument is NaN"));
    }
    Ok(kind.cdf(h, u))
}

/// Checked draw from `p0(.; u)`.
pub fn base_sample<R: Rng + ?Sized>(kind: BaseKind, u: f64, rng: &mut R) -> Result<f64> {
    check_finite("natural parameter", u)?;
    Ok(kind.sample(u, rng))
}

#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn ted_mean(u: f64) -> f64 {
    if u.abs() < TAYLOR_CUTOFF {
        let u2 = u * u;
        0.5 + u / 12.0 - u * u2 / 720.0 + u * u2 * u2 / 30240.0
    } else {
        1.0 / -(-u).exp_m1() - 1.0 / u
    }
}

fn ted_variance(u: f64) -> f64 {
    if u.abs() < TED_VAR_CUTOFF {
        let u2 = u * u;
        1.0 / 12.0 - u2 / 240.0 + u2 * u2 / 6048.0 - u2 * u2 * u2 / 172_800.0
    } else {
        let s = (0.5 * u).sinh();
        1.0 / (u * u) - 1.0 / (4.0 * s * s)
    }
}

fn ted_third_cumulant(u: f64) -> f64 {
    if u.abs() < TED_VAR_CUTOFF {
        let u2 = u * u;
        -u / 120.0 + u * u2 / 1512.0 - u * u2 * u2 / 28_800.0
    } else {
        let half = 0.5 * u;
        let s = half.sinh();
        -2.0 / (u * u * u) + 1.0 / (half.tanh() * 4.0 * s * s)
    }
}

fn ted_log_partition(u: f64) -> f64 {
    if u.abs() < TAYLOR_CUTOFF {
        let u2 = u * u;
        0.5 * u + u2 / 24.0 - u2 * u2 / 2880.0
    } else if u > 0.0 {
        u + (-(-u).exp_m1()).ln() - u.ln()
    } else {
        (-u.exp_m1()).ln() - (-u).ln()
    }
}

fn ted_cdf(h: f64, u: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    if h >= 1.0 {
        return 1.0;
    }
    let p = if u.abs() < TAYLOR_CUTOFF {
        let (uh, u2) = (u * h, u * u);
        let num = 1.0 + uh / 2.0 + uh * uh / 6.0 + uh * uh * uh / 24.0;
        let den = 1.0 + u / 2.0 + u2 / 6.0 + u2 * u / 24.0;
        h * num / den
    } else if u > 0.0 {
        (u * (h - 1.0)).exp() * (-u * h).exp_m1() / (-u).exp_m1()
    } else {
        (u * h).exp_m1() / u.exp_m1()
    };
    p.clamp(0.0, 1.0)
}

/// Inverse of [`ted_cdf`] in `h` for a uniform variate `p` in [0, 1).
fn ted_inverse_cdf(p: f64, u: f64) -> f64 {
    let h = if u == 0.0 {
        p
    } else if u > 0.0 {
        1.0 + ((1.0 - p) * (-u).exp_m1()).ln_1p() / u
    } else {
        (p * u.exp_m1()).ln_1p() / u
    };
    h.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{integrate, ks_against};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    /// Unnormalized TED density `e^{u h}` on [0, 1].
    fn ted_mean_quadrature(u: f64) -> f64 {
        let z = integrate(|h| (u * h).exp(), 0.0, 1.0);
        integrate(|h| h * (u * h).exp(), 0.0, 1.0) / z
    }

    #[test]
    fn sigmoid_and_ted_at_zero() {
        assert_eq!(base_eval(BaseKind::SigmoidBernoulli, 0.0).unwrap(), 0.5);
        assert_eq!(base_eval(BaseKind::Ted, 0.0).unwrap(), 0.5);
        assert_eq!(base_eval(BaseKind::LinearGaussian, -3.25).unwrap(), -3.25);
    }

    #[test]
    fn ted_mean_matches_quadrature() {
        let v = base_eval(BaseKind::Ted, 1.0).unwrap();
        assert!((v - 0.581977).abs() < 1e-6, "{v}");
        for &u in &[-40.0, -7.5, -1.0, -1e-2, -5e-4, 2e-4, 3e-3, 0.7, 4.0, 25.0] {
            let q = ted_mean_quadrature(u);
            assert!((BaseKind::Ted.mean(u) - q).abs() < 1e-10, "u={u}");
        }
    }

    #[test]
    fn non_finite_inputs_rejected() {
        for kind in BaseKind::ALL {
            assert!(base_eval(kind, f64::NAN).is_err());
            assert!(base_logpartition(kind, f64::INFINITY).is_err());
            assert!(base_cdf(kind, 0.5, f64::NAN).is_err());
        }
    }

    #[test]
    fn log_partition_values() {
        let lp = base_logpartition(BaseKind::SigmoidBernoulli, 0.0).unwrap();
        assert!((lp - LN_2).abs() < 1e-15);
        assert_eq!(base_logpartition(BaseKind::Ted, 0.0).unwrap(), 0.0);
        // softplus(50) = 50 + log1p(e^-50); e^-50 ~ 1.9e-22.
        let sp = base_logpartition(BaseKind::SigmoidBernoulli, 50.0).unwrap();
        assert!((sp - 50.0).abs() < 1e-9);
        assert_eq!(BaseKind::SigmoidBernoulli.log_partition(-800.0), 0.0);
    }

    #[test]
    fn ted_log_partition_matches_quadrature() {
        for &u in &[-30.0, -2.0, -1e-2, -9e-4, 5e-4, 0.02, 1.5, 12.0] {
            let q = integrate(|h| (u * h).exp(), 0.0, 1.0).ln();
            assert!((BaseKind::Ted.log_partition(u) - q).abs() < 1e-10, "u={u}");
        }
    }

    #[test]
    fn ted_cdf_values() {
        assert_eq!(base_cdf(BaseKind::Ted, 1.0, 3.7).unwrap(), 1.0);
        assert_eq!(base_cdf(BaseKind::Ted, 0.5, 0.0).unwrap(), 0.5);
        let e = std::f64::consts::E;
        let expected = (e - 1.0) / (e * e - 1.0);
        let got = base_cdf(BaseKind::Ted, 0.5, 2.0).unwrap();
        assert!((got - 0.268941).abs() < 1e-6);
        assert!((got - expected).abs() < 1e-14);
        // quadrature of the normalized density
        let z = integrate(|h| (2.0 * h).exp(), 0.0, 1.0);
        let q = integrate(|h| (2.0 * h).exp(), 0.0, 0.5) / z;
        assert!((got - q).abs() < 1e-10);
        // clamping outside the support
        assert_eq!(base_cdf(BaseKind::Ted, -0.3, 1.0).unwrap(), 0.0);
        assert_eq!(base_cdf(BaseKind::Ted, 1.3, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn ted_continuous_through_singularity() {
        // Both sides of the series cutoff agree with quadrature.
        for &u in &[
            -TAYLOR_CUTOFF * 1.0001,
            -TAYLOR_CUTOFF * 0.9999,
            0.0,
            TAYLOR_CUTOFF * 0.9999,
            TAYLOR_CUTOFF * 1.0001,
        ] {
            let z = integrate(|h| (u * h).exp(), 0.0, 1.0);
            assert!((BaseKind::Ted.mean(u) - ted_mean_quadrature(u)).abs() < 1e-9);
            assert!((BaseKind::Ted.log_partition(u) - z.ln()).abs() < 1e-9);
            for &h in &[0.1, 0.5, 0.93] {
                let q = integrate(|t| (u * t).exp(), 0.0, h) / z;
                assert!((BaseKind::Ted.cdf(h, u) - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let step = 1e-5;
        for kind in BaseKind::ALL {
            for &u in &[-6.0, -1.3, -0.02, -5e-3, 0.0, 4e-3, 0.4, 2.2, 9.0] {
                let fd = (kind.mean(u + step) - kind.mean(u - step)) / (2.0 * step);
                let d = kind.deriv(u);
                assert!(
                    (fd - d).abs() <= 1e-8 + 1e-6 * d.abs(),
                    "{kind} u={u}: {fd} vs {d}"
                );
                // wider step: the closed-form variance cancels near zero
                let step2 = 1e-3;
                let fd2 = (kind.deriv(u + step2) - kind.deriv(u - step2)) / (2.0 * step2);
                let d2 = kind.deriv2(u);
                assert!(
                    (fd2 - d2).abs() <= 1e-8 + 1e-5 * d2.abs(),
                    "{kind} u={u}: {fd2} vs {d2}"
                );
                let fdl =
                    (kind.log_partition(u + step) - kind.log_partition(u - step)) / (2.0 * step);
                assert!((fdl - kind.mean(u)).abs() <= 1e-8 + 1e-6 * kind.mean(u).abs());
            }
        }
    }

    #[test]
    fn log_deriv_and_ratio_consistent() {
        for kind in BaseKind::ALL {
            for &u in &[-30.0, -2.0, -4e-3, 0.0, 0.5, 7.0] {
                assert!((kind.log_deriv(u) - kind.deriv(u).ln()).abs() < 1e-12);
                assert!((kind.deriv_ratio(u) - kind.deriv2(u) / kind.deriv(u)).abs() < 1e-9);
            }
        }
        assert!(BaseKind::SigmoidBernoulli.log_deriv(900.0).is_finite());
    }

    #[test]
    fn safe_for_large_pre_activations() {
        for kind in BaseKind::ALL {
            for &u in &[-500.0, -120.0, 120.0, 500.0, -1e4, 1e4] {
                assert!(kind.mean(u).is_finite());
                assert!(kind.deriv(u).is_finite());
                assert!(kind.deriv2(u).is_finite(), "{kind} {u}");
                assert!(kind.log_partition(u).is_finite());
                assert!(kind.cdf(0.5, u).is_finite());
            }
        }
        assert!((BaseKind::Ted.mean(-500.0) - 1.0 / 500.0).abs() < 1e-15);
        assert!((BaseKind::Ted.mean(500.0) - (1.0 - 1.0 / 500.0)).abs() < 1e-15);
    }

    #[test]
    fn saturated_bernoulli_sample_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(
                base_sample(BaseKind::SigmoidBernoulli, 1e6, &mut rng).unwrap(),
                1.0
            );
        }
    }

    #[test]
    fn ted_sample_mean_matches_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| BaseKind::Ted.sample(1.0, &mut rng))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = BaseKind::Ted.deriv(1.0).sqrt();
        assert!(
            (mean - 0.581977).abs() < 3.0 * sd / (n as f64).sqrt(),
            "{mean}"
        );
        assert!(draws.iter().all(|h| (0.0..=1.0).contains(h)));
    }

    #[test]
    fn ted_sample_ks_against_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &u in &[2.0, -3.0, 0.0, 5e-4] {
            let draws: Vec<f64> = (0..10_000)
                .map(|_| BaseKind::Ted.sample(u, &mut rng))
                .collect();
            let d = ks_against(&draws, |h| BaseKind::Ted.cdf(h, u));
            assert!(d < 0.02, "u={u} ks={d}");
        }
    }

    #[test]
    fn gaussian_sample_ks_against_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| BaseKind::LinearGaussian.sample(0.75, &mut rng))
            .collect();
        let d = ks_against(&draws, |h| BaseKind::LinearGaussian.cdf(h, 0.75));
        assert!(d < 0.02, "{d}");
    }

    #[test]
    fn bernoulli_sample_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| BaseKind::SigmoidBernoulli.sample(-0.8, &mut rng) == 1.0)
            .count() as f64;
        let p = sigmoid(-0.8);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((ones / n as f64 - p).abs() < 3.0 * se);
        assert_eq!(BaseKind::SigmoidBernoulli.cdf(0.5, -0.8), 1.0 - p);
    }

    #[test]
    fn inverse_mean_round_trips() {
        for kind in BaseKind::ALL {
            for &u in &[-3.0, -0.2, 0.0, 0.9, 3.5] {
                let back = kind.inverse_mean(kind.mean(u));
                assert!((back - u).abs() < 1e-6, "{kind} {u} {back}");
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("ted".parse::<BaseKind>().unwrap(), BaseKind::Ted);
        assert_eq!(
            "Sigmoid".parse::<BaseKind>().unwrap(),
            BaseKind::SigmoidBernoulli
        );
        assert_eq!(
            "linear_gaussian".parse::<BaseKind>().unwrap(),
            BaseKind::LinearGaussian
        );
        assert!("relu".parse::<BaseKind>().is_err());
    }
}
