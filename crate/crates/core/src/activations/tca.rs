//! Trainable compound activation (TCA).
//!
//! For unit `i` with `M` components the activation is
//!
//! ```text
//! y_i = (1/M) sum_j f0(e^{a_ij} x_i + b_ij)
//! ```
//!
//! and, as a stochastic unit, the TCA is the uniform mixture over `j` of the base
//! generating distribution with natural parameter `u_ij = e^{a_ij} x_i + b_ij`.
//! The mixture mean is exactly `y_i`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;

use super::base::BaseKind;
use crate::error::{check_finite, check_len, Error, Result};

/// Scale and bias parameters of one TCA layer (`N` units, `M` components each).
#[derive(Debug, Clone, PartialEq)]
pub struct TcaParams {
    base: BaseKind,
    log_scale: Array2<f64>,
    bias: Array2<f64>,
}

/// Gradients of `sum_i upstream_i * y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TcaGrads {
    pub dx: Array1<f64>,
    pub d_log_scale: Array2<f64>,
    pub d_bias: Array2<f64>,
}

impl TcaParams {
    /// `A = 0`, `B = 0`: reproduces the base activation exactly.
    pub fn identity(base: BaseKind, units: usize, components: usize) -> Result<Self> {
        if units == 0 || components == 0 {
            return Err(Error::invalid(format!(
                "TCA needs at least one unit and one component, got {units}x{components}"
            )));
        }
        Ok(Self {
            base,
            log_scale: Array2::zeros((units, components)),
            bias: Array2::zeros((units, components)),
        })
    }

    /// Start point for the "equivalent to the base AF" phases: `A = 0` and `B`
    /// i.i.d. uniform on `[-0.1, 0.1]` so that the components can separate once
    /// training is enabled.
    pub fn near_base<R: Rng + ?Sized>(
        base: BaseKind,
        units: usize,
        components: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::identity(base, units, components)?;
        if components > 1 {
            p.bias.mapv_inplace(|_| rng.random_range(-0.1..=0.1));
        }
        Ok(p)
    }

    pub fn new(base: BaseKind, log_scale: Array2<f64>, bias: Array2<f64>) -> Result<Self> {
        let (n, m) = log_scale.dim();
        if n == 0 || m == 0 {
            return Err(Error::invalid("TCA parameter matrices must be non-empty"));
        }
        check_len("TCA bias rows", n, bias.nrows())?;
        check_len("TCA bias columns", m, bias.ncols())?;
        if log_scale.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("TCA parameters must be finite"));
        }
        Ok(Self {
            base,
            log_scale,
            bias,
        })
    }

    pub fn base(&self) -> BaseKind {
        self.base
    }

    pub fn units(&self) -> usize {
        self.log_scale.nrows()
    }

    pub fn components(&self) -> usize {
        self.log_scale.ncols()
    }

    /// The `A` matrix (log-scales).
    pub fn log_scale(&self) -> ArrayView2<'_, f64> {
        self.log_scale.view()
    }

    /// The `B` matrix (biases).
    pub fn bias(&self) -> ArrayView2<'_, f64> {
        self.bias.view()
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.log_scale.len()
    }

    /// True when every scale and bias is zero.
    pub fn is_reduced(&self) -> bool {
        self.log_scale
            .iter()
            .chain(self.bias.iter())
            .all(|&v| v == 0.0)
    }

    /// Replace the parameters in place, keeping the shape.
    pub fn set(&mut self, log_scale: ArrayView2<'_, f64>, bias: ArrayView2<'_, f64>) -> Result<()> {
        let fresh = Self::new(self.base, log_scale.to_owned(), bias.to_owned())?;
        check_len("TCA units", self.units(), fresh.units())?;
        check_len("TCA components", self.components(), fresh.components())?;
        *self = fresh;
        Ok(())
    }

    /// `A -= rate * dA`, `B -= rate * dB`.
    pub(crate) fn descend(&mut self, rate: f64, d_log_scale: &Array2<f64>, d_bias: &Array2<f64>) {
        self.log_scale.scaled_add(-rate, d_log_scale);
        self.bias.scaled_add(-rate, d_bias);
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.log_scale
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }

    #[cfg(test)]
    pub(crate) fn components_mut(&mut self) -> (ArrayViewMut2<'_, f64>, ArrayViewMut2<'_, f64>) {
        (self.log_scale.view_mut(), self.bias.view_mut())
    }

    fn scales(&self) -> Array2<f64> {
        self.log_scale.mapv(f64::exp)
    }

    #[inline]
    fn unit_eval_with(
        &self,
        scales: ArrayView1<'_, f64>,
        bias: ArrayView1<'_, f64>,
        x: f64,
    ) -> f64 {
        let m = scales.len() as f64;
        scales
            .iter()
            .zip(bias.iter())
            .map(|(&s, &b)| self.base.mean(s * x + b))
            .sum::<f64>()
            / m
    }

    /// `y_i` for a single unit.
    pub fn unit_eval(&self, unit: usize, x: f64) -> f64 {
        let scales = self.log_scale.row(unit).mapv(f64::exp);
        self.unit_eval_with(scales.view(), self.bias.row(unit), x)
    }

    /// Element-wise TCA output.
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len("TCA input", self.units(), x.len())?;
        let scales = self.scales();
        Ok(Array1::from_shape_fn(x.len(), |i| {
            self.unit_eval_with(scales.row(i), self.bias.row(i), x[i])
        }))
    }

    /// Row-wise [`TcaParams::eval`] over a batch (`samples x units`).
    pub fn eval_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_len("TCA input columns", self.units(), x.ncols())?;
        let scales = self.scales();
        let mut out = Array2::zeros(x.raw_dim());
        Zip::from(out.rows_mut())
            .and(x.rows())
            .for_each(|mut o, xr| {
                for i in 0..xr.len() {
                    o[i] = self.unit_eval_with(scales.row(i), self.bias.row(i), xr[i]);
                }
            });
        Ok(out)
    }

    /// `dy_i/dx_i = (1/M) sum_j e^{a_ij} f0'(u_ij)`, strictly positive.
    pub fn deriv(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len("TCA input", self.units(), x.len())?;
        let scales = self.scales();
        let m = self.components() as f64;
        Ok(Array1::from_shape_fn(x.len(), |i| {
            scales
                .row(i)
                .iter()
                .zip(self.bias.row(i))
                .map(|(&s, &b)| s * self.base.deriv(s * x[i] + b))
                .sum::<f64>()
                / m
        }))
    }

    /// Gradients of `sum_i upstream_i * y_i` with respect to `x`, `A` and `B`.
    pub fn grads(&self, x: ArrayView1<'_, f64>, upstream: ArrayView1<'_, f64>) -> Result<TcaGrads> {
        check_len("TCA input", self.units(), x.len())?;
        check_len("TCA upstream gradient", self.units(), upstream.len())?;
        let mut d_log_scale = Array2::zeros(self.log_scale.raw_dim());
        let mut d_bias = Array2::zeros(self.bias.raw_dim());
        let dx = self.accumulate_grads(
            x.insert_axis(Axis(0)),
            upstream.insert_axis(Axis(0)),
            d_log_scale.view_mut(),
            d_bias.view_mut(),
        )?;
        Ok(TcaGrads {
            dx: dx.index_axis_move(Axis(0), 0),
            d_log_scale,
            d_bias,
        })
    }

    /// Batched backward pass: returns `dL/dx` per sample and adds the parameter
    /// gradients (summed over samples) into `d_log_scale` / `d_bias`.
    pub fn accumulate_grads(
        &self,
        x: ArrayView2<'_, f64>,
        upstream: ArrayView2<'_, f64>,
        mut d_log_scale: ArrayViewMut2<'_, f64>,
        mut d_bias: ArrayViewMut2<'_, f64>,
    ) -> Result<Array2<f64>> {
        check_len("TCA input columns", self.units(), x.ncols())?;
        check_len("TCA upstream rows", x.nrows(), upstream.nrows())?;
        check_len("TCA upstream columns", self.units(), upstream.ncols())?;
        let scales = self.scales();
        let inv_m = 1.0 / self.components() as f64;
        let mut dx = Array2::zeros(x.raw_dim());
        for ((xr, gr), mut dxr) in x.rows().into_iter().zip(upstream.rows()).zip(dx.rows_mut()) {
            for i in 0..self.units() {
                let (xi, g) = (xr[i], gr[i]);
                if g == 0.0 {
                    continue;
                }
                let mut acc = 0.0;
                for j in 0..self.components() {
                    let s = scales[[i, j]];
                    let dphi = self.base.deriv(s * xi + self.bias[[i, j]]);
                    let common = g * inv_m * dphi;
                    d_bias[[i, j]] += common;
                    d_log_scale[[i, j]] += common * s * xi;
                    acc += s * dphi;
                }
                dxr[i] = g * inv_m * acc;
            }
        }
        Ok(dx)
    }

    /// `LZ_i(alpha) = (1/M) sum_j e^{-a_ij} L0(e^{a_ij} alpha_i + b_ij)`; its
    /// derivative in `alpha_i` is the TCA output.
    pub fn log_partition(&self, alpha: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len("TCA field", self.units(), alpha.len())?;
        if let Some(v) = alpha.iter().find(|v| !v.is_finite()) {
            check_finite("TCA field", *v)?;
        }
        Ok(self
            .log_partition_batch(alpha.insert_axis(Axis(0)))
            .index_axis_move(Axis(0), 0))
    }

    /// Per-sample, per-unit log-partition over a batch of fields.
    pub(crate) fn log_partition_batch(&self, alpha: ArrayView2<'_, f64>) -> Array2<f64> {
        let scales = self.scales();
        let inv_m = 1.0 / self.components() as f64;
        let mut out = Array2::zeros(alpha.raw_dim());
        Zip::from(out.rows_mut())
            .and(alpha.rows())
            .for_each(|mut o, ar| {
                for i in 0..ar.len() {
                    o[i] = scales
                        .row(i)
                        .iter()
                        .zip(self.bias.row(i))
                        .map(|(&s, &b)| self.base.log_partition(s * ar[i] + b) / s)
                        .sum::<f64>()
                        * inv_m;
                }
            });
        out
    }

    /// Adds `sum_s weights[s] * d(sum_i LZ_i(alpha_s))/d(A, B)` into the
    /// accumulators.
    pub(crate) fn accumulate_log_partition_grads(
        &self,
        alpha: ArrayView2<'_, f64>,
        weights: ArrayView1<'_, f64>,
        mut d_log_scale: ArrayViewMut2<'_, f64>,
        mut d_bias: ArrayViewMut2<'_, f64>,
    ) {
        let scales = self.scales();
        let inv_m = 1.0 / self.components() as f64;
        for (ar, &w) in alpha.rows().into_iter().zip(weights.iter()) {
            if w == 0.0 {
                continue;
            }
            for i in 0..self.units() {
                let a = ar[i];
                for j in 0..self.components() {
                    let s = scales[[i, j]];
                    let u = s * a + self.bias[[i, j]];
                    let mean = self.base.mean(u);
                    // d/db: e^{-a} f0(u); d/da: alpha f0(u) - e^{-a} L0(u)
                    d_bias[[i, j]] += w * inv_m * mean / s;
                    d_log_scale[[i, j]] += w * inv_m * (a * mean - self.base.log_partition(u) / s);
                }
            }
        }
    }

    /// Mixture CDF of unit `unit` at `h` given field `alpha`:
    /// `(1/M) sum_j Phi0(h; e^{a_ij} alpha + b_ij)`.
    pub fn mixture_cdf(&self, unit: usize, h: f64, alpha: f64) -> Result<f64> {
        if unit >= self.units() {
            return Err(Error::invalid(format!(
                "unit {unit} out of range for a {}-unit TCA",
                self.units()
            )));
        }
        check_finite("TCA field", alpha)?;
        if h.is_nan() {
            return Err(Error::invalid("cdf argument is NaN"));
        }
        let m = self.components() as f64;
        Ok(self
            .log_scale
            .row(unit)
            .iter()
            .zip(self.bias.row(unit))
            .map(|(&a, &b)| self.base.cdf(h, a.exp() * alpha + b))
            .sum::<f64>()
            / m)
    }

    /// One draw per unit from the mixture distribution: pick a component
    /// uniformly, then sample the base distribution with that component's
    /// transformed field.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        alpha: ArrayView1<'_, f64>,
        rng: &mut R,
    ) -> Result<Array1<f64>> {
        check_len("TCA field", self.units(), alpha.len())?;
        Ok(self
            .sample_batch(alpha.insert_axis(Axis(0)), rng)
            .index_axis_move(Axis(0), 0))
    }

    pub(crate) fn sample_batch<R: Rng + ?Sized>(
        &self,
        alpha: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> Array2<f64> {
        let m = self.components();
        let mut out = Array2::zeros(alpha.raw_dim());
        for (ar, mut o) in alpha.rows().into_iter().zip(out.rows_mut()) {
            for i in 0..ar.len() {
                let j = if m == 1 { 0 } else { rng.random_range(0..m) };
                let u = self.log_scale[[i, j]].exp() * ar[i] + self.bias[[i, j]];
                o[i] = self.base.sample(u, rng);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::base::sigmoid;
    use crate::testutil::{integrate, ks_against, rel_close};
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(base: BaseKind, n: usize, m: usize, seed: u64) -> TcaParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
        let b = Array::from_shape_fn((n, m), |_| rng.random_range(-2.0..2.0));
        TcaParams::new(base, a, b).unwrap()
    }

    #[test]
    fn identity_reduces_to_base() {
        let x = array![-3.0, -0.4, 0.0, 0.25, 5.0];
        for base in BaseKind::ALL {
            let p = TcaParams::identity(base, 5, 3).unwrap();
            let y = p.eval(x.view()).unwrap();
            let d = p.deriv(x.view()).unwrap();
            for i in 0..5 {
                // averaging M identical copies may round in the last place
                let ulps = |a: f64, b: f64| (a - b).abs() <= 4.0 * f64::EPSILON * b.abs();
                assert!(ulps(y[i], base.mean(x[i])));
                assert!(ulps(d[i], base.deriv(x[i])));
                if base != BaseKind::LinearGaussian {
                    assert!(ulps(
                        p.mixture_cdf(i, 0.3, x[i]).unwrap(),
                        base.cdf(0.3, x[i])
                    ));
                }
            }
        }
    }

    #[test]
    fn two_component_sigmoid_values() {
        let p = TcaParams::new(
            BaseKind::SigmoidBernoulli,
            array![[0.0, 0.0]],
            array![[2.0, -2.0]],
        )
        .unwrap();
        let y = p.eval(array![0.0].view()).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15);

        let p = TcaParams::new(
            BaseKind::SigmoidBernoulli,
            array![[2f64.ln(), 0.0]],
            array![[0.0, 1.0]],
        )
        .unwrap();
        let y = p.eval(array![1.0].view()).unwrap();
        assert!((y[0] - 0.880797).abs() < 1e-6);
        assert!((y[0] - sigmoid(2.0)).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_slope_at_origin() {
        let p = TcaParams::identity(BaseKind::SigmoidBernoulli, 1, 1).unwrap();
        assert_eq!(p.deriv(array![0.0].view()).unwrap()[0], 0.25);
    }

    #[test]
    fn shape_errors() {
        let p = TcaParams::identity(BaseKind::Ted, 3, 2).unwrap();
        assert!(matches!(
            p.eval(array![1.0, 2.0].view()),
            Err(Error::Shape { .. })
        ));
        assert!(p.deriv(array![1.0].view()).is_err());
        assert!(p
            .grads(array![1.0, 2.0, 3.0].view(), array![1.0].view())
            .is_err());
        assert!(TcaParams::identity(BaseKind::Ted, 0, 2).is_err());
        assert!(TcaParams::new(BaseKind::Ted, array![[0.0]], array![[f64::NAN]]).is_err());
        assert!(p
            .log_partition(array![0.0, f64::INFINITY, 1.0].view())
            .is_err());
    }

    #[test]
    fn deriv_matches_finite_difference_at_point_three() {
        for base in BaseKind::ALL {
            let p = random_params(base, 4, 3, 1);
            let x = Array1::from_elem(4, 0.3);
            let d = p.deriv(x.view()).unwrap();
            let h = 1e-5;
            let up = p.eval((&x + h).view()).unwrap();
            let dn = p.eval((&x - h).view()).unwrap();
            for i in 0..4 {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                assert!(rel_close(d[i], fd, 1e-5, 1e-8), "{base}: {} vs {fd}", d[i]);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = random_params(BaseKind::Ted, 3, 2, 2);
        let g = p
            .grads(array![0.1, -0.5, 2.0].view(), Array1::zeros(3).view())
            .unwrap();
        assert!(g
            .dx
            .iter()
            .chain(g.d_log_scale.iter())
            .chain(g.d_bias.iter())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn reduced_dx_is_upstream_times_base_slope() {
        let p = TcaParams::identity(BaseKind::Ted, 3, 2).unwrap();
        let x = array![0.1, -0.5, 2.0];
        let up = array![1.5, -2.0, 0.25];
        let g = p.grads(x.view(), up.view()).unwrap();
        for i in 0..3 {
            assert!((g.dx[i] - up[i] * BaseKind::Ted.deriv(x[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn grads_match_finite_differences() {
        let h = 1e-6;
        for (seed, base) in [
            (5, BaseKind::Ted),
            (6, BaseKind::SigmoidBernoulli),
            (7, BaseKind::LinearGaussian),
        ] {
            let p = random_params(base, 3, 2, seed);
            let x = array![0.4, -1.1, 0.9];
            let up = array![0.7, -1.3, 2.1];
            let g = p.grads(x.view(), up.view()).unwrap();
            let obj = |q: &TcaParams, x: &Array1<f64>| q.eval(x.view()).unwrap().dot(&up);
            for i in 0..3 {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (obj(&p, &xp) - obj(&p, &xm)) / (2.0 * h);
                assert!(rel_close(g.dx[i], fd, 1e-5, 1e-9));
                for j in 0..2 {
                    for which in 0..2 {
                        let bump = |delta: f64| {
                            let mut q = p.clone();
                            let (mut a, mut b) = q.components_mut();
                            if which == 0 {
                                a[[i, j]] += delta;
                            } else {
                                b[[i, j]] += delta;
                            }
                            obj(&q, &x)
                        };
                        let fd = (bump(h) - bump(-h)) / (2.0 * h);
                        let an = if which == 0 {
                            g.d_log_scale[[i, j]]
                        } else {
                            g.d_bias[[i, j]]
                        };
                        assert!(
                            rel_close(an, fd, 1e-5, 1e-9),
                            "{base} {i} {j} {which}: {an} vs {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn log_partition_values_and_derivative() {
        let p = TcaParams::identity(BaseKind::SigmoidBernoulli, 1, 1).unwrap();
        let lz = p.log_partition(array![0.0].view()).unwrap();
        assert!((lz[0] - std::f64::consts::LN_2).abs() < 1e-15);

        for base in BaseKind::ALL {
            let p = random_params(base, 3, 3, 9);
            let alpha = array![-0.8, 0.05, 1.7];
            let y = p.eval(alpha.view()).unwrap();
            let h = 1e-5;
            let up = p.log_partition((&alpha + h).view()).unwrap();
            let dn = p.log_partition((&alpha - h).view()).unwrap();
            for i in 0..3 {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                assert!(rel_close(y[i], fd, 1e-6, 1e-9), "{base}: {} vs {fd}", y[i]);
            }
        }
    }

    #[test]
    fn log_partition_symmetric_in_bias_sign() {
        for c in [0.3, 1.0, 4.0] {
            let p = TcaParams::new(
                BaseKind::SigmoidBernoulli,
                array![[0.0, 0.0]],
                array![[c, -c]],
            )
            .unwrap();
            let q = TcaParams::new(
                BaseKind::SigmoidBernoulli,
                array![[0.0, 0.0]],
                array![[-c, c]],
            )
            .unwrap();
            let a = array![0.37];
            assert_eq!(
                p.log_partition(a.view()).unwrap(),
                q.log_partition(a.view()).unwrap()
            );
        }
    }

    #[test]
    fn log_partition_param_grads_match_finite_differences() {
        let p = random_params(BaseKind::Ted, 2, 3, 21);
        let alpha = array![[0.6, -1.4], [2.0, 0.01]];
        let w = array![1.0, -0.5];
        let mut da = Array2::zeros((2, 3));
        let mut db = Array2::zeros((2, 3));
        p.accumulate_log_partition_grads(alpha.view(), w.view(), da.view_mut(), db.view_mut());
        let obj =
            |q: &TcaParams| (q.log_partition_batch(alpha.view()).sum_axis(Axis(1)) * &w).sum();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                for which in 0..2 {
                    let bump = |delta: f64| {
                        let mut q = p.clone();
                        let (mut a, mut b) = q.components_mut();
                        if which == 0 {
                            a[[i, j]] += delta;
                        } else {
                            b[[i, j]] += delta;
                        }
                        obj(&q)
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    let an = if which == 0 { da[[i, j]] } else { db[[i, j]] };
                    assert!(rel_close(an, fd, 1e-5, 1e-9), "{an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn mixture_cdf_endpoints_and_symmetry() {
        let p = random_params(BaseKind::Ted, 2, 4, 3);
        for alpha in [-3.0, 0.0, 2.5] {
            assert_eq!(p.mixture_cdf(1, 1.0, alpha).unwrap(), 1.0);
            assert_eq!(p.mixture_cdf(1, 0.0, alpha).unwrap(), 0.0);
        }
        let p = TcaParams::new(BaseKind::Ted, array![[0.0, 0.0]], array![[1.0, -1.0]]).unwrap();
        let v = p.mixture_cdf(0, 0.5, 0.0).unwrap();
        // quadrature oracle for each component
        let comp = |u: f64| {
            integrate(|t| (u * t).exp(), 0.0, 0.5) / integrate(|t| (u * t).exp(), 0.0, 1.0)
        };
        assert!((v - 0.5 * (comp(1.0) + comp(-1.0))).abs() < 1e-10);
        assert!((v - 0.5).abs() < 1e-12);
        assert!(p.mixture_cdf(3, 0.5, 0.0).is_err());
    }

    #[test]
    fn single_component_sampler_matches_base() {
        let p = TcaParams::identity(BaseKind::Ted, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| p.sample(array![2.0].view(), &mut rng).unwrap()[0])
            .collect();
        assert!(ks_against(&draws, |h| BaseKind::Ted.cdf(h, 2.0)) < 0.02);
    }

    #[test]
    fn mixture_sampler_mean_and_cdf() {
        let p = random_params(BaseKind::Ted, 1, 3, 23);
        let alpha = array![0.8];
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| p.sample(alpha.view(), &mut rng).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expect = p.eval(alpha.view()).unwrap()[0];
        assert!(
            (mean - expect).abs() < 3.0 * (var / n as f64).sqrt(),
            "{mean} vs {expect}"
        );
        let d = ks_against(&draws[..10_000], |h| p.mixture_cdf(0, h, 0.8).unwrap());
        assert!(d < 0.02, "{d}");
    }

    proptest! {
        #[test]
        fn monotone_in_input(
            a in prop::collection::vec(-2.0f64..2.0, 3),
            b in prop::collection::vec(-3.0f64..3.0, 3),
            x1 in -20.0f64..20.0,
            dx in 1e-3f64..5.0,
        ) {
            for base in BaseKind::ALL {
                let p = TcaParams::new(
                    base,
                    Array2::from_shape_vec((1, 3), a.clone()).unwrap(),
                    Array2::from_shape_vec((1, 3), b.clone()).unwrap(),
                ).unwrap();
                let y1 = p.unit_eval(0, x1);
                let y2 = p.unit_eval(0, x1 + dx);
                prop_assert!(y1 < y2 || (y1 == y2 && y1.abs() > 0.999_999), "{} {} {}", base, y1, y2);
                prop_assert!(p.deriv(array![x1].view()).unwrap()[0] >= 0.0);
            }
        }

        #[test]
        fn mixture_cdf_non_decreasing(
            a in prop::collection::vec(-1.5f64..1.5, 2),
            b in prop::collection::vec(-3.0f64..3.0, 2),
            alpha in -6.0f64..6.0,
            h1 in 0.0f64..1.0,
            dh in 0.0f64..1.0,
        ) {
            let p = TcaParams::new(
                BaseKind::Ted,
                Array2::from_shape_vec((1, 2), a).unwrap(),
                Array2::from_shape_vec((1, 2), b).unwrap(),
            ).unwrap();
            let c1 = p.mixture_cdf(0, h1, alpha).unwrap();
            let c2 = p.mixture_cdf(0, (h1 + dh).min(1.0), alpha).unwrap();
            prop_assert!(c2 >= c1 - 1e-15);
            prop_assert!((0.0..=1.0).contains(&c1));
        }
    }
}
