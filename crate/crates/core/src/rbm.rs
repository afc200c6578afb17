//! Restricted Boltzmann machine with TCA-mixture hidden units.
//!
//! Energy convention: `E(x, h) = -x'Wh - a'x - b'h` with the base measures of
//! the visible and hidden generating distributions. Fields are
//! `alpha = W'x + b` (hidden) and `beta = Wh + a` (visible). The hidden units
//! are TCA mixtures of the hidden base distribution; the visible units use a
//! plain base distribution.
//!
//! Training uses contrastive divergence written as a free-energy difference,
//! `theta -= lr * (dF(x_data)/dtheta - dF(x_model)/dtheta)`, which covers the
//! TCA parameters without extra machinery.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::activations::{BaseKind, TcaParams};
use crate::error::{check_len, Error, Result};
use crate::parallel;

/// Whether units are sampled or replaced by their means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Stochastic,
    Deterministic,
}

/// Generator handed to deterministic-mode calls, which draw nothing.
pub(crate) fn unused_rng() -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(0)
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stochastic" => Ok(SamplingMode::Stochastic),
            "deterministic" | "mean-field" => Ok(SamplingMode::Deterministic),
            other => Err(Error::invalid(format!("unknown sampling mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmModel {
    weights: Array2<f64>,
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
    visible: BaseKind,
    hidden: TcaParams,
}

/// Gradient (or update) with one block per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGrads {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub log_scale: Array2<f64>,
    pub bias: Array2<f64>,
}

impl RbmGrads {
    pub fn zeros_like(m: &RbmModel) -> Self {
        Self {
            weights: Array2::zeros(m.weights.raw_dim()),
            visible_bias: Array1::zeros(m.visible_dim()),
            hidden_bias: Array1::zeros(m.hidden_dim()),
            log_scale: Array2::zeros((m.hidden_dim(), m.hidden.components())),
            bias: Array2::zeros((m.hidden_dim(), m.hidden.components())),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.visible_bias)
            .chain(&self.hidden_bias)
            .chain(&self.log_scale)
            .chain(&self.bias)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn is_finite(&self) -> bool {
        self.max_abs().is_finite()
    }
}

/// Result of a Gibbs chain started at a visible vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsResult {
    pub x: Array1<f64>,
    pub alpha0: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Batched Gibbs chain; rows are samples.
#[derive(Debug, Clone)]
pub struct GibbsBatch {
    pub x: Array2<f64>,
    pub alpha0: Array2<f64>,
    pub beta: Array2<f64>,
}

/// Hyper-parameters of one contrastive-divergence update.
#[derive(Debug, Clone, Copy)]
pub struct CdParams {
    pub k: usize,
    pub lr: f64,
    pub tca_lr: f64,
    pub freeze_tca: bool,
    pub mode: SamplingMode,
}

impl Default for CdParams {
    fn default() -> Self {
        Self {
            k: 1,
            lr: 0.05,
            tca_lr: 0.01,
            freeze_tca: false,
            mode: SamplingMode::Deterministic,
        }
    }
}

/// Batch metrics reported by a CD update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdMetrics {
    /// Mean over samples and pixels of the squared reconstruction error.
    pub mse: f64,
    /// Mean over samples of `log p(x | beta)` summed over pixels.
    pub cond_ll: f64,
}

impl RbmModel {
    pub fn new(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
        visible: BaseKind,
        hidden: TcaParams,
    ) -> Result<Self> {
        let (n, h) = weights.dim();
        if n == 0 || h == 0 {
            return Err(Error::invalid("RBM dimensions must be positive"));
        }
        check_len("visible bias", n, visible_bias.len())?;
        check_len("hidden bias", h, hidden_bias.len())?;
        check_len("hidden TCA units", h, hidden.units())?;
        if weights
            .iter()
            .chain(&visible_bias)
            .chain(&hidden_bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("RBM parameters must be finite"));
        }
        Ok(Self {
            weights,
            visible_bias,
            hidden_bias,
            visible,
            hidden,
        })
    }

    /// Standard initialization: `W ~ N(0, 0.01^2)`, visible bias from the data
    /// marginals (inverse base mean of each column mean, clipped to `[-4, 4]`),
    /// zero hidden bias and a near-base TCA.
    pub fn init<R: Rng + ?Sized>(
        visible_dim: usize,
        hidden_dim: usize,
        visible: BaseKind,
        hidden_base: BaseKind,
        components: usize,
        data: Option<ArrayView2<'_, f64>>,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, 0.01).expect("valid sd");
        let weights = Array2::from_shape_fn((visible_dim, hidden_dim), |_| normal.sample(rng));
        let visible_bias = match data {
            Some(x) => {
                check_len("data columns", visible_dim, x.ncols())?;
                if x.nrows() == 0 {
                    Array1::zeros(visible_dim)
                } else {
                    x.mean_axis(Axis(0))
                        .expect("non-empty")
                        .mapv(|m| visible.inverse_mean(m).clamp(-4.0, 4.0))
                }
            }
            None => Array1::zeros(visible_dim),
        };
        let hidden = TcaParams::near_base(hidden_base, hidden_dim, components, rng)?;
        Self::new(
            weights,
            visible_bias,
            Array1::zeros(hidden_dim),
            visible,
            hidden,
        )
    }

    pub fn visible_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn visible_bias(&self) -> ArrayView1<'_, f64> {
        self.visible_bias.view()
    }

    pub fn hidden_bias(&self) -> ArrayView1<'_, f64> {
        self.hidden_bias.view()
    }

    pub fn visible_kind(&self) -> BaseKind {
        self.visible
    }

    pub fn hidden(&self) -> &TcaParams {
        &self.hidden
    }

    /// Swap in a different hidden TCA (e.g. move from a single base unit to
    /// `M` near-base components between training phases).
    pub fn set_hidden(&mut self, hidden: TcaParams) -> Result<()> {
        check_len("hidden TCA units", self.hidden_dim(), hidden.units())?;
        self.hidden = hidden;
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn visible_bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.visible_bias
    }

    #[cfg(test)]
    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    #[cfg(test)]
    pub(crate) fn hidden_bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.hidden_bias
    }

    #[cfg(test)]
    pub(crate) fn hidden_mut(&mut self) -> &mut TcaParams {
        &mut self.hidden
    }

    /// `alpha = W'x + b`. Single vectors go through the batch path so both
    /// round identically.
    pub fn forward_field(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len("visible vector", self.visible_dim(), x.len())?;
        Ok(self
            .forward_field_batch(x.insert_axis(Axis(0)))?
            .index_axis_move(Axis(0), 0))
    }

    /// `beta = W h + a`.
    pub fn backward_field(&self, h: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len("hidden vector", self.hidden_dim(), h.len())?;
        Ok(self
            .backward_field_batch(h.insert_axis(Axis(0)))?
            .index_axis_move(Axis(0), 0))
    }

    pub fn forward_field_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_len("visible columns", self.visible_dim(), x.ncols())?;
        Ok(x.dot(&self.weights) + &self.hidden_bias)
    }

    pub fn backward_field_batch(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_len("hidden columns", self.hidden_dim(), h.ncols())?;
        Ok(h.dot(&self.weights.t()) + &self.visible_bias)
    }

    fn hidden_from_field<R: Rng + ?Sized>(
        &self,
        alpha: ArrayView2<'_, f64>,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Array2<f64> {
        match mode {
            SamplingMode::Deterministic => self.hidden.eval_batch(alpha).expect("shape checked"),
            SamplingMode::Stochastic => self.hidden.sample_batch(alpha, rng),
        }
    }

    fn visible_from_field<R: Rng + ?Sized>(
        &self,
        beta: ArrayView2<'_, f64>,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Array2<f64> {
        match mode {
            SamplingMode::Deterministic => beta.mapv(|u| self.visible.mean(u)),
            SamplingMode::Stochastic => beta.mapv(|u| self.visible.sample(u, rng)),
        }
    }

    /// Hidden vector given a visible vector: TCA mixture draw or TCA mean.
    pub fn hidden_step<R: Rng + ?Sized>(
        &self,
        x: ArrayView1<'_, f64>,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<Array1<f64>> {
        let alpha = self.forward_field(x)?;
        Ok(self
            .hidden_from_field(alpha.view().insert_axis(Axis(0)), mode, rng)
            .index_axis_move(Axis(0), 0))
    }

    /// Visible vector given a hidden vector: base draw or base mean.
    pub fn visible_step<R: Rng + ?Sized>(
        &self,
        h: ArrayView1<'_, f64>,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<Array1<f64>> {
        let beta = self.backward_field(h)?;
        Ok(self
            .visible_from_field(beta.view().insert_axis(Axis(0)), mode, rng)
            .index_axis_move(Axis(0), 0))
    }

    pub fn hidden_batch<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, f64>,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let alpha = self.forward_field_batch(x)?;
        Ok(self.hidden_from_field(alpha.view(), mode, rng))
    }

    pub fn visible_batch<R: Rng + ?Sized>(
        &self,
        h: ArrayView2<'_, f64>,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let beta = self.backward_field_batch(h)?;
        Ok(self.visible_from_field(beta.view(), mode, rng))
    }

    /// `k` alternations `h <- x`, `x <- h` starting at `x0`.
    pub fn gibbs_chain<R: Rng + ?Sized>(
        &self,
        x0: ArrayView1<'_, f64>,
        k: usize,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<GibbsResult> {
        let out = self.gibbs_chain_batch(x0.insert_axis(Axis(0)), k, mode, rng)?;
        Ok(GibbsResult {
            x: out.x.index_axis_move(Axis(0), 0),
            alpha0: out.alpha0.index_axis_move(Axis(0), 0),
            beta: out.beta.index_axis_move(Axis(0), 0),
        })
    }

    pub fn gibbs_chain_batch<R: Rng + ?Sized>(
        &self,
        x0: ArrayView2<'_, f64>,
        k: usize,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<GibbsBatch> {
        if k < 1 {
            return Err(Error::invalid("Gibbs chain length must be at least 1"));
        }
        let alpha0 = self.forward_field_batch(x0)?;
        let mut alpha = alpha0.clone();
        let mut x = Array2::zeros((0, 0));
        let mut beta = Array2::zeros((0, 0));
        for step in 0..k {
            if step > 0 {
                alpha = self.forward_field_batch(x.view())?;
            }
            let h = self.hidden_from_field(alpha.view(), mode, rng);
            beta = self.backward_field_batch(h.view())?;
            x = self.visible_from_field(beta.view(), mode, rng);
        }
        Ok(GibbsBatch { x, alpha0, beta })
    }

    /// `F(x) = -a'x - sum_i LZ_i(alpha_i)` with `alpha = W'x + b`.
    pub fn free_energy(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        Ok(self.free_energy_batch(x.insert_axis(Axis(0)))?[0])
    }

    pub fn free_energy_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let alpha = self.forward_field_batch(x)?;
        let lz = self.hidden.log_partition_batch(alpha.view());
        Ok(-x.dot(&self.visible_bias) - lz.sum_axis(Axis(1)))
    }

    /// Gradient of `F(x)` with respect to every parameter block.
    pub fn free_energy_grads(&self, x: ArrayView1<'_, f64>) -> Result<RbmGrads> {
        let mut g = RbmGrads::zeros_like(self);
        self.accumulate_free_energy_grads(
            x.insert_axis(Axis(0)),
            Array1::ones(1).view(),
            true,
            &mut g,
        )?;
        Ok(g)
    }

    /// Adds `sum_s weights[s] * dF(x_s)/dtheta` into `grads`.
    pub(crate) fn accumulate_free_energy_grads(
        &self,
        x: ArrayView2<'_, f64>,
        weights: ArrayView1<'_, f64>,
        with_tca: bool,
        grads: &mut RbmGrads,
    ) -> Result<()> {
        check_len("sample weights", x.nrows(), weights.len())?;
        let alpha = self.forward_field_batch(x)?;
        let y = self.hidden.eval_batch(alpha.view())?;
        let wy = &y * &weights.insert_axis(Axis(1));
        grads.weights.scaled_add(-1.0, &x.t().dot(&wy));
        grads.visible_bias.scaled_add(-1.0, &weights.dot(&x));
        grads.hidden_bias.scaled_add(-1.0, &wy.sum_axis(Axis(0)));
        if with_tca {
            let neg = weights.mapv(|w| -w);
            self.hidden.accumulate_log_partition_grads(
                alpha.view(),
                neg.view(),
                grads.log_scale.view_mut(),
                grads.bias.view_mut(),
            );
        }
        Ok(())
    }

    /// `log p(x | beta) = sum_j [beta_j x_j - L0(beta_j) + log mu(x_j)]`.
    ///
    /// For Bernoulli visibles, grey values in `[0, 1]` are accepted and the
    /// result is the negative cross-entropy.
    pub fn conditional_loglik(
        &self,
        x: ArrayView1<'_, f64>,
        beta: ArrayView1<'_, f64>,
    ) -> Result<f64> {
        check_len("visible vector", self.visible_dim(), x.len())?;
        check_len("visible field", self.visible_dim(), beta.len())?;
        let (lo, hi) = self.visible.support();
        if let Some(v) = x.iter().find(|v| !(lo..=hi).contains(*v) || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "visible value {v} outside the {} support",
                self.visible
            )));
        }
        Ok(self.cond_ll_unchecked(x, beta))
    }

    fn cond_ll_unchecked(&self, x: ArrayView1<'_, f64>, beta: ArrayView1<'_, f64>) -> f64 {
        x.iter()
            .zip(beta.iter())
            .map(|(&xj, &bj)| {
                bj * xj - self.visible.log_partition(bj) + self.visible.log_base_measure(xj)
            })
            .sum()
    }

    /// One CD update on `batch`, returning the updated model.
    pub fn cd_step<R: Rng + ?Sized>(
        &self,
        batch: ArrayView2<'_, f64>,
        params: &CdParams,
        rng: &mut R,
    ) -> Result<(RbmModel, CdMetrics)> {
        let mut next = self.clone();
        let metrics = next.cd_update(batch, params, rng)?;
        Ok((next, metrics))
    }

    /// The CD gradient (data term minus model term, averaged over the batch)
    /// together with batch metrics. Nothing is modified.
    pub fn cd_gradient<R: Rng + ?Sized>(
        &self,
        batch: ArrayView2<'_, f64>,
        params: &CdParams,
        rng: &mut R,
    ) -> Result<(RbmGrads, CdMetrics, Array2<f64>)> {
        if batch.nrows() == 0 {
            return Err(Error::invalid("CD batch is empty"));
        }
        let chain = self.gibbs_chain_batch(batch, params.k, params.mode, rng)?;
        let n = batch.nrows() as f64;
        let mut g = RbmGrads::zeros_like(self);
        let with_tca = !params.freeze_tca;
        self.accumulate_free_energy_grads(
            batch,
            Array1::from_elem(batch.nrows(), 1.0 / n).view(),
            with_tca,
            &mut g,
        )?;
        self.accumulate_free_energy_grads(
            chain.x.view(),
            Array1::from_elem(batch.nrows(), -1.0 / n).view(),
            with_tca,
            &mut g,
        )?;
        let metrics = self.batch_metrics(batch, &chain);
        Ok((g, metrics, chain.x))
    }

    fn batch_metrics(&self, batch: ArrayView2<'_, f64>, chain: &GibbsBatch) -> CdMetrics {
        let n = batch.nrows() as f64;
        let diff = &batch - &chain.x;
        let mse = diff.mapv(|d| d * d).sum() / (n * self.visible_dim() as f64);
        let cond_ll = batch
            .rows()
            .into_iter()
            .zip(chain.beta.rows())
            .map(|(x, b)| self.cond_ll_unchecked(x, b))
            .sum::<f64>()
            / n;
        CdMetrics { mse, cond_ll }
    }

    /// Apply `theta -= lr * grad` (TCA blocks at `tca_lr`, skipped when frozen).
    pub fn apply_grads(
        &mut self,
        g: &RbmGrads,
        lr: f64,
        tca_lr: f64,
        freeze_tca: bool,
    ) -> Result<()> {
        if !g.is_finite() {
            return Err(Error::TrainingFailure {
                epoch: 0,
                reason: "non-finite contrastive-divergence gradient".into(),
            });
        }
        self.weights.scaled_add(-lr, &g.weights);
        self.visible_bias.scaled_add(-lr, &g.visible_bias);
        self.hidden_bias.scaled_add(-lr, &g.hidden_bias);
        if !freeze_tca {
            self.hidden.descend(tca_lr, &g.log_scale, &g.bias);
            if !self.hidden.is_finite() {
                return Err(Error::TrainingFailure {
                    epoch: 0,
                    reason: "TCA parameters became non-finite".into(),
                });
            }
        }
        Ok(())
    }

    /// In-place form of [`RbmModel::cd_step`].
    pub fn cd_update<R: Rng + ?Sized>(
        &mut self,
        batch: ArrayView2<'_, f64>,
        params: &CdParams,
        rng: &mut R,
    ) -> Result<CdMetrics> {
        let (g, metrics, _) = self.cd_gradient(batch, params, rng)?;
        self.apply_grads(&g, params.lr, params.tca_lr, params.freeze_tca)?;
        Ok(metrics)
    }

    /// Reconstruction error and conditional log-likelihood after `k` Gibbs
    /// alternations, averaged over the rows of `data`.
    ///
    /// Deterministic mode is evaluated in parallel over row blocks; the result
    /// does not depend on the number of workers.
    pub fn reconstruction_metrics<R: Rng + ?Sized>(
        &self,
        data: ArrayView2<'_, f64>,
        k: usize,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<CdMetrics> {
        check_len("visible columns", self.visible_dim(), data.ncols())?;
        if data.nrows() == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        if k < 1 {
            return Err(Error::invalid("Gibbs chain length must be at least 1"));
        }
        let per_row: Vec<(f64, f64)> = match mode {
            SamplingMode::Deterministic => parallel::map_row_blocks(data, |block| {
                let mut dummy = unused_rng();
                self.row_metrics(block, k, mode, &mut dummy)
            })?,
            SamplingMode::Stochastic => self.row_metrics(data, k, mode, rng)?,
        };
        let n = per_row.len() as f64;
        let sq: f64 = per_row.iter().map(|p| p.0).sum();
        let ll: f64 = per_row.iter().map(|p| p.1).sum();
        Ok(CdMetrics {
            mse: sq / (n * self.visible_dim() as f64),
            cond_ll: ll / n,
        })
    }

    fn row_metrics<R: Rng + ?Sized>(
        &self,
        block: ArrayView2<'_, f64>,
        k: usize,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<Vec<(f64, f64)>> {
        let chain = self.gibbs_chain_batch(block, k, mode, rng)?;
        Ok(block
            .rows()
            .into_iter()
            .enumerate()
            .map(|(s, x)| {
                let sq = x
                    .iter()
                    .zip(chain.x.row(s))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (sq, self.cond_ll_unchecked(x, chain.beta.row(s)))
            })
            .collect())
    }
}
