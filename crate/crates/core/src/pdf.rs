//! Univariate density estimation with a monotone TCA.
//!
//! A monotone map `y = f(x)` together with an assumed law for `y` defines a
//! density for `x` by change of variables, `p(x) = f'(x) p_y(f(x))`. Fitting the
//! TCA parameters by maximum likelihood drives the transformed samples towards
//! the target law, which flattens modes in the input histogram.

use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activations::{BaseKind, TcaParams};
use crate::error::{check_len, Error, Result};
use crate::stats;

/// Assumed distribution of the TCA output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetLaw {
    Uniform01,
    StandardGaussian,
}

impl TargetLaw {
    pub fn log_density(self, y: f64) -> f64 {
        match self {
            TargetLaw::Uniform01 => {
                if (0.0..=1.0).contains(&y) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            TargetLaw::StandardGaussian => stats::normal_pdf(y).ln(),
        }
    }

    pub fn density(self, y: f64) -> f64 {
        match self {
            TargetLaw::Uniform01 => f64::from((0.0..=1.0).contains(&y)),
            TargetLaw::StandardGaussian => stats::normal_pdf(y),
        }
    }

    pub fn cdf(self, y: f64) -> f64 {
        match self {
            TargetLaw::Uniform01 => y.clamp(0.0, 1.0),
            TargetLaw::StandardGaussian => stats::normal_cdf(y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetLaw::Uniform01 => "uniform",
            TargetLaw::StandardGaussian => "gaussian",
        }
    }
}

impl FromStr for TargetLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" | "uniform01" => Ok(TargetLaw::Uniform01),
            "gaussian" | "normal" | "standard_gaussian" => Ok(TargetLaw::StandardGaussian),
            other => Err(Error::invalid(format!("unknown target law `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PdfFitConfig {
    pub epochs: usize,
    pub initial_step: f64,
    pub seed: u64,
}

impl Default for PdfFitConfig {
    fn default() -> Self {
        Self {
            epochs: 3000,
            initial_step: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PdfFit {
    pub params: TcaParams,
    /// Mean log-likelihood before the first step and after every epoch.
    pub trace: Vec<f64>,
}

impl PdfFit {
    pub fn final_loglik(&self) -> f64 {
        *self
            .trace
            .last()
            .expect("trace always holds the initial value")
    }
}

fn check_model(p: &TcaParams, target: TargetLaw) -> Result<()> {
    check_len("univariate TCA units", 1, p.units())?;
    if target == TargetLaw::Uniform01 && p.base() == BaseKind::LinearGaussian {
        return Err(Error::invalid(
            "a uniform target needs a bounded base (sigmoid or ted)",
        ));
    }
    Ok(())
}

/// Flat parameter vector `(a_1..a_M, b_1..b_M)` for a single-unit TCA.
#[derive(Clone)]
struct Theta {
    base: BaseKind,
    log_scale: Vec<f64>,
    bias: Vec<f64>,
}

impl Theta {
    fn from_params(p: &TcaParams) -> Self {
        Self {
            base: p.base(),
            log_scale: p.log_scale().row(0).to_vec(),
            bias: p.bias().row(0).to_vec(),
        }
    }

    fn to_params(&self) -> Result<TcaParams> {
        let m = self.log_scale.len();
        TcaParams::new(
            self.base,
            Array2::from_shape_vec((1, m), self.log_scale.clone()).expect("1xM"),
            Array2::from_shape_vec((1, m), self.bias.clone()).expect("1xM"),
        )
    }

    fn eval(&self, x: f64) -> f64 {
        let m = self.log_scale.len() as f64;
        self.log_scale
            .iter()
            .zip(&self.bias)
            .map(|(&a, &b)| self.base.mean(a.exp() * x + b))
            .sum::<f64>()
            / m
    }

    /// `ln f'(x)` by log-sum-exp over the components.
    fn log_slope(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .log_scale
            .iter()
            .zip(&self.bias)
            .map(|(&a, &b)| a + self.base.log_deriv(a.exp() * x + b))
            .collect();
        log_sum_exp(&terms) - (terms.len() as f64).ln()
    }

    fn sample_loglik(&self, target: TargetLaw, x: f64) -> f64 {
        let ls = self.log_slope(x);
        match target {
            TargetLaw::Uniform01 => ls,
            TargetLaw::StandardGaussian => ls + target.log_density(self.eval(x)),
        }
    }

    fn loglik(&self, target: TargetLaw, xs: &[f64]) -> f64 {
        xs.iter()
            .map(|&x| self.sample_loglik(target, x))
            .sum::<f64>()
            / xs.len() as f64
    }

    /// Mean log-likelihood gradient, laid out as `(d a_1..d a_M, d b_1..d b_M)`.
    fn gradient(&self, target: TargetLaw, xs: &[f64]) -> Vec<f64> {
        let m = self.log_scale.len();
        let mut g = vec![0.0; 2 * m];
        let mut logs = vec![0.0; m];
        for &x in xs {
            for (j, l) in logs.iter_mut().enumerate() {
                let (a, b) = (self.log_scale[j], self.bias[j]);
                *l = a + self.base.log_deriv(a.exp() * x + b);
            }
            let lse = log_sum_exp(&logs);
            let y = if target == TargetLaw::StandardGaussian {
                self.eval(x)
            } else {
                0.0
            };
            for j in 0..m {
                let (a, b) = (self.log_scale[j], self.bias[j]);
                let s = a.exp();
                let u = s * x + b;
                // responsibility of component j in f'(x)
                let w = (logs[j] - lse).exp();
                let ratio = self.base.deriv_ratio(u);
                let mut ga = w * (1.0 + s * x * ratio);
                let mut gb = w * ratio;
                if target == TargetLaw::StandardGaussian {
                    let slope = self.base.deriv(u) / m as f64;
                    ga -= y * slope * s * x;
                    gb -= y * slope;
                }
                g[j] += ga;
                g[m + j] += gb;
            }
        }
        let n = xs.len() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    fn stepped(&self, g: &[f64], step: f64) -> Self {
        let m = self.log_scale.len();
        let mut t = self.clone();
        for j in 0..m {
            t.log_scale[j] += step * g[j];
            t.bias[j] += step * g[m + j];
        }
        t
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn check_samples(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid("sample set is empty"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    Ok(())
}

/// Mean over samples of `ln f'(x_k) + ln p_target(f(x_k))`.
pub fn loglik(p: &TcaParams, target: TargetLaw, x: &[f64]) -> Result<f64> {
    check_model(p, target)?;
    check_samples(x)?;
    Ok(Theta::from_params(p).loglik(target, x))
}

/// Model density `|f'(x)| p_target(f(x))`.
pub fn density(p: &TcaParams, target: TargetLaw, x: f64) -> Result<f64> {
    check_model(p, target)?;
    let theta = Theta::from_params(p);
    Ok(theta.log_slope(x).exp() * target.density(theta.eval(x)))
}

/// Pass samples through the fitted map.
pub fn demodalize(p: &TcaParams, x: &[f64]) -> Result<Vec<f64>> {
    check_len("univariate TCA units", 1, p.units())?;
    Ok(x.iter().map(|&v| p.unit_eval(0, v)).collect())
}

/// Data-driven start: component `j` is centred on the `(j + 1/2)/M` sample
/// quantile, with a common scale matched to the spread of the data.
pub fn init_from_quantiles<R: Rng + ?Sized>(
    x: &[f64],
    base: BaseKind,
    components: usize,
    rng: &mut R,
) -> Result<TcaParams> {
    check_samples(x)?;
    if components == 0 {
        return Err(Error::invalid("need at least one mixture component"));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = stats::mean(&sorted);
    let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    // transition width of the base mean function, in units of its argument
    let width = match base {
        BaseKind::SigmoidBernoulli => 1.8,
        BaseKind::Ted => 3.5,
        BaseKind::LinearGaussian => 1.0,
    };
    let spread = if base == BaseKind::LinearGaussian {
        sd
    } else {
        sd / components as f64
    };
    let log_scale = (width / spread.max(1e-6)).ln().clamp(-20.0, 20.0);
    let scale = log_scale.exp();
    let mut a = Array2::from_elem((1, components), log_scale);
    let mut b = Array2::zeros((1, components));
    for j in 0..components {
        let q = (j as f64 + 0.5) / components as f64;
        let centre = if base == BaseKind::LinearGaussian {
            mean
        } else {
            sorted[((q * n as f64) as usize).min(n - 1)]
        };
        b[[0, j]] = -scale * centre + rng.random_range(-0.01..=0.01);
        a[[0, j]] += rng.random_range(-0.01..=0.01);
    }
    TcaParams::new(base, a, b)
}

/// Maximum-likelihood fit of a single-unit TCA by full-batch gradient ascent.
///
/// A step that lowers the log-likelihood (or makes it non-finite) is retried
/// with half the step size; accepted steps grow the step by 25%. The trace is
/// therefore non-decreasing. If no acceptable step exists the fit stops early.
pub fn fit_univariate(
    x: &[f64],
    base: BaseKind,
    components: usize,
    target: TargetLaw,
    cfg: &PdfFitConfig,
) -> Result<PdfFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = init_from_quantiles(x, base, components, &mut rng)?;
    fit_from(x, init, target, cfg)
}

/// Same as [`fit_univariate`] from a caller-chosen starting point.
pub fn fit_from(
    x: &[f64],
    init: TcaParams,
    target: TargetLaw,
    cfg: &PdfFitConfig,
) -> Result<PdfFit> {
    check_model(&init, target)?;
    check_samples(x)?;
    let mut theta = Theta::from_params(&init);
    let mut current = theta.loglik(target, x);
    if !current.is_finite() {
        return Err(Error::TrainingFailure {
            epoch: 0,
            reason: format!("initial log-likelihood is {current}"),
        });
    }
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    trace.push(current);
    let mut step = cfg.initial_step;
    for epoch in 1..=cfg.epochs {
        let g = theta.gradient(target, x);
        if g.iter().any(|v| v.is_nan()) {
            return Err(Error::TrainingFailure {
                epoch,
                reason: "log-likelihood gradient is NaN".into(),
            });
        }
        let mut accepted = None;
        for _ in 0..60 {
            let cand = theta.stepped(&g, step);
            let ll = cand.loglik(target, x);
            if ll.is_finite() && ll >= current && cand.log_scale.iter().all(|a| a.abs() < 700.0) {
                accepted = Some((cand, ll));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, ll)) => {
                theta = cand;
                current = ll;
                step *= 1.25;
                trace.push(current);
            }
            None => break,
        }
    }
    Ok(PdfFit {
        params: theta.to_params()?,
        trace,
    })
}

/// Two Gaussians at -2 and +2 (sd 0.3), equal weight.
pub fn bimodal_benchmark(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left = Normal::new(-2.0, 0.3).expect("valid sd");
    let right = Normal::new(2.0, 0.3).expect("valid sd");
    (0..n)
        .map(|_| {
            if rng.random::<bool>() {
                right.sample(&mut rng)
            } else {
                left.sample(&mut rng)
            }
        })
        .collect()
}

/// Rows of `(x, f(x), f'(x), density)` on an even grid, for plotting.
pub fn curve_table(
    p: &TcaParams,
    target: TargetLaw,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<Vec<[f64; 4]>> {
    check_model(p, target)?;
    let points = points.max(2);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|k| {
            let x = lo + step * k as f64;
            let xs = Array1::from_elem(1, x);
            let fx = p.eval(xs.view())?[0];
            let dfx = p.deriv(xs.view())?[0];
            Ok([x, fx, dfx, density(p, target, x)?])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::integrate;
    use ndarray::array;

    fn uniform_samples(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn loglik_reduced_sigmoid_at_zero() {
        let p = TcaParams::identity(BaseKind::SigmoidBernoulli, 1, 1).unwrap();
        let ll = loglik(&p, TargetLaw::Uniform01, &[0.0]).unwrap();
        assert!((ll - 0.25f64.ln()).abs() < 1e-15);
        assert!(loglik(&p, TargetLaw::Uniform01, &[]).is_err());
    }

    #[test]
    fn uniform_target_needs_bounded_base() {
        let p = TcaParams::identity(BaseKind::LinearGaussian, 1, 2).unwrap();
        assert!(loglik(&p, TargetLaw::Uniform01, &[0.0]).is_err());
        assert!(loglik(&p, TargetLaw::StandardGaussian, &[0.0]).is_ok());
    }

    #[test]
    fn density_values() {
        let p = TcaParams::identity(BaseKind::SigmoidBernoulli, 1, 1).unwrap();
        assert!((density(&p, TargetLaw::Uniform01, 0.0).unwrap() - 0.25).abs() < 1e-15);
        let p = TcaParams::identity(BaseKind::LinearGaussian, 1, 3).unwrap();
        for x in [-1.5, 0.0, 0.7] {
            let d = density(&p, TargetLaw::StandardGaussian, x).unwrap();
            assert!((d - stats::normal_pdf(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let xs = bimodal_benchmark(200, 4);
        for (base, target) in [
            (BaseKind::SigmoidBernoulli, TargetLaw::Uniform01),
            (BaseKind::Ted, TargetLaw::Uniform01),
            (BaseKind::SigmoidBernoulli, TargetLaw::StandardGaussian),
            (BaseKind::LinearGaussian, TargetLaw::StandardGaussian),
        ] {
            let p =
                TcaParams::new(base, array![[0.3, -0.2, 0.1]], array![[1.0, -0.5, 0.2]]).unwrap();
            let theta = Theta::from_params(&p);
            let g = theta.gradient(target, &xs);
            let h = 1e-6;
            for k in 0..6 {
                let mut e = vec![0.0; 6];
                e[k] = 1.0;
                let fd = (theta.stepped(&e, h).loglik(target, &xs)
                    - theta.stepped(&e, -h).loglik(target, &xs))
                    / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "{base} {k}: {fd} vs {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn trace_is_non_decreasing() {
        let xs = bimodal_benchmark(500, 1);
        let fit = fit_univariate(
            &xs,
            BaseKind::SigmoidBernoulli,
            3,
            TargetLaw::Uniform01,
            &PdfFitConfig {
                epochs: 100,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(fit.final_loglik() > fit.trace[0]);
    }

    #[test]
    fn uniform_data_ted_single_component_reaches_grid_optimum() {
        let xs = uniform_samples(2000, 7);
        let fit = fit_univariate(
            &xs,
            BaseKind::Ted,
            1,
            TargetLaw::Uniform01,
            &PdfFitConfig::default(),
        )
        .unwrap();
        // brute-force oracle over (a, centre)
        let grid_best = |xs: &[f64]| {
            let mut best = f64::NEG_INFINITY;
            for ia in 0..=140 {
                let a = -1.0 + 0.05 * ia as f64;
                for ic in 0..=80 {
                    let c = -0.5 + 0.025 * ic as f64;
                    let s: f64 = f64::exp(a);
                    let ll = xs
                        .iter()
                        .map(|&x| (s * BaseKind::Ted.deriv(s * (x - c))).ln())
                        .sum::<f64>()
                        / xs.len() as f64;
                    best = best.max(ll);
                }
            }
            best
        };
        let best = grid_best(&xs);
        assert!(
            fit.final_loglik() >= best - 1e-3,
            "{} vs grid {best}",
            fit.final_loglik()
        );
        // population optimum, from evenly spaced quantiles of the uniform law
        let quantiles: Vec<f64> = (0..2000).map(|i| (i as f64 + 0.5) / 2000.0).collect();
        let population = grid_best(&quantiles);
        assert!(population > -0.45 && population < -0.40, "{population}");
    }

    #[test]
    fn more_components_fit_at_least_as_well() {
        let xs = bimodal_benchmark(2000, 2);
        let cfg = PdfFitConfig::default();
        let one = fit_univariate(
            &xs,
            BaseKind::SigmoidBernoulli,
            1,
            TargetLaw::Uniform01,
            &cfg,
        )
        .unwrap();
        let four = fit_univariate(
            &xs,
            BaseKind::SigmoidBernoulli,
            4,
            TargetLaw::Uniform01,
            &cfg,
        )
        .unwrap();
        assert!(four.final_loglik() >= one.final_loglik());
    }

    #[test]
    fn bimodal_demodalization() {
        let xs = bimodal_benchmark(2000, 3);
        let fit = fit_univariate(
            &xs,
            BaseKind::SigmoidBernoulli,
            4,
            TargetLaw::Uniform01,
            &PdfFitConfig::default(),
        )
        .unwrap();
        let ys = demodalize(&fit.params, &xs).unwrap();
        let ks = stats::ks_statistic(&ys, |y| TargetLaw::Uniform01.cdf(y));
        assert!(ks < 0.05, "ks={ks}");

        let init = TcaParams::identity(BaseKind::SigmoidBernoulli, 1, 4).unwrap();
        let ks0 = stats::ks_statistic(&demodalize(&init, &xs).unwrap(), |y| y.clamp(0.0, 1.0));
        assert!(ks0 > ks);

        let (lo, hi) = xs
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let input_ratio = stats::max_min_bin_ratio(&stats::histogram(&xs, 20, lo, hi));
        let output_ratio = stats::max_min_bin_ratio(&stats::histogram(&ys, 20, 0.0, 1.0));
        assert!(input_ratio > 10.0);
        assert!(output_ratio < 3.0, "{output_ratio}");

        // ordering preserved
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        assert!(idx.windows(2).all(|w| ys[w[0]] <= ys[w[1]]));

        // fitted density integrates to one
        let mass = integrate(
            |x| density(&fit.params, TargetLaw::Uniform01, x).unwrap(),
            -10.0,
            10.0,
        );
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }

    #[test]
    fn reduced_demodalize_is_base_map() {
        let p = TcaParams::identity(BaseKind::Ted, 1, 2).unwrap();
        let xs = [-2.0, 0.0, 0.4, 3.0];
        let ys = demodalize(&p, &xs).unwrap();
        for (x, y) in xs.iter().zip(ys) {
            assert_eq!(y, BaseKind::Ted.mean(*x));
        }
    }

    #[test]
    fn repeated_point_stops_without_error() {
        let xs = vec![0.7; 50];
        let fit = fit_univariate(
            &xs,
            BaseKind::SigmoidBernoulli,
            2,
            TargetLaw::Uniform01,
            &PdfFitConfig {
                epochs: 300,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fit.trace.len() > 1);
        assert!(fit.final_loglik() > fit.trace[0]);
    }

    #[test]
    fn gaussian_target_with_linear_base_recovers_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let normal = Normal::new(3.0, 2.0).unwrap();
        let xs: Vec<f64> = (0..4000).map(|_| normal.sample(&mut rng)).collect();
        let fit = fit_univariate(
            &xs,
            BaseKind::LinearGaussian,
            1,
            TargetLaw::StandardGaussian,
            &PdfFitConfig::default(),
        )
        .unwrap();
        let ys = demodalize(&fit.params, &xs).unwrap();
        let ks = stats::ks_statistic(&ys, stats::normal_cdf);
        assert!(ks < 0.03, "{ks}");
    }
}
