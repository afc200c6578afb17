//! Dense feed-forward auto-encoder with TCA encoder layers, trained by
//! backpropagation and plain mini-batch SGD.
//!
//! The default architecture is `784 -> 32 -> 8 -> 32 -> 784`; the two encoder
//! layers use TCAs, the decoder layers use the base activation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::activations::{BaseKind, TcaParams};
use crate::data::batches_with;
use crate::data::persist::{schema, Persist, TcamReader, TcamWriter};
use crate::error::{check_len, Error, Result};
use crate::parallel;
use crate::schedule::Plateau;

#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Tca(TcaParams),
    Base(BaseKind),
}

impl Activation {
    fn eval(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            Activation::Tca(p) => p.eval_batch(z),
            Activation::Base(k) => Ok(z.mapv(|u| k.mean(u))),
        }
    }

    pub fn base(&self) -> BaseKind {
        match self {
            Activation::Tca(p) => p.base(),
            Activation::Base(k) => *k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        check_len("layer bias", weights.ncols(), bias.len())?;
        if let Activation::Tca(p) = &activation {
            check_len("layer TCA units", weights.ncols(), p.units())?;
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn bias(&self) -> ArrayView1<'_, f64> {
        self.bias.view()
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    layers: Vec<DenseLayer>,
}

/// Per-layer inputs and pre-activations kept by the forward pass.
#[derive(Debug, Clone)]
pub struct AeCache {
    pub inputs: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
}

/// Gradient for one layer; the TCA blocks are present only for TCA layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub tca: Option<(Array2<f64>, Array2<f64>)>,
}

/// Mean per-pixel squared error `mean((x_hat - x)^2)`.
pub fn ae_loss(x_hat: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Result<f64> {
    check_len("reconstruction rows", x.nrows(), x_hat.nrows())?;
    check_len("reconstruction columns", x.ncols(), x_hat.ncols())?;
    if x.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let sq: f64 = x_hat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / x.len() as f64)
}

impl AeModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an auto-encoder needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_len("layer input", pair[0].outputs(), pair[1].inputs())?;
        }
        Ok(Self { layers })
    }

    /// Random initialisation for the layer sizes `dims` (e.g.
    /// `[784, 32, 8, 32, 784]`). The first `tca_layers` layers get
    /// near-base TCAs with `components` components; the rest use `base`.
    /// Weights are Gaussian with standard deviation
    /// `1 / (f0'(0) * sqrt(fan_in))`, which keeps pre-activations on the
    /// scale where the base activation bends. If `output_mean` is given, the
    /// output bias is the inverse base mean of it (clipped to `[-4, 4]`).
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        tca_layers: usize,
        base: BaseKind,
        components: usize,
        output_mean: Option<ArrayView1<'_, f64>>,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("need at least two positive layer sizes"));
        }
        if components == 0 {
            return Err(Error::invalid("need at least one mixture component"));
        }
        let layers = dims.len() - 1;
        if tca_layers > layers {
            return Err(Error::invalid("more TCA layers than layers"));
        }
        let slope = base.deriv(0.0);
        let mut out = Vec::with_capacity(layers);
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let sd = 1.0 / (slope * (fan_in as f64).sqrt());
            let normal = Normal::new(0.0, sd).expect("valid sd");
            let weights = Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng));
            let bias = match output_mean {
                Some(m) if l + 1 == layers => {
                    check_len("output mean", fan_out, m.len())?;
                    m.mapv(|v| base.inverse_mean(v).clamp(-4.0, 4.0))
                }
                _ => Array1::zeros(fan_out),
            };
            let activation = if l < tca_layers {
                Activation::Tca(TcaParams::near_base(base, fan_out, components, rng)?)
            } else {
                Activation::Base(base)
            };
            out.push(DenseLayer::new(weights, bias, activation)?);
        }
        Self::new(out)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    /// Forward pass on a batch (rows are samples).
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, AeCache)> {
        check_len("input columns", self.input_dim(), x.ncols())?;
        let mut cache = AeCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_owned();
        for layer in &self.layers {
            let z = h.dot(&layer.weights) + &layer.bias;
            let y = layer.activation.eval(z.view())?;
            cache.inputs.push(h);
            cache.pre.push(z);
            h = y;
        }
        Ok((h, cache))
    }

    pub fn reconstruct(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Training objective on a batch: the squared error summed over pixels
    /// and averaged over samples, with its gradient.
    pub fn gradients(
        &self,
        x: ArrayView2<'_, f64>,
        with_tca: bool,
    ) -> Result<(f64, Vec<LayerGrads>)> {
        check_len("output columns", self.output_dim(), x.ncols())?;
        if x.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let n = x.nrows() as f64;
        let (x_hat, cache) = self.forward(x)?;
        let diff = &x_hat - &x;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let mut upstream = diff * (2.0 / n);
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[l];
            let (dz, tca) = match &layer.activation {
                Activation::Base(k) => {
                    let mut dz = upstream;
                    dz.zip_mut_with(z, |g, &u| *g *= k.deriv(u));
                    (dz, None)
                }
                Activation::Tca(p) => {
                    let mut da = Array2::zeros((p.units(), p.components()));
                    let mut db = Array2::zeros((p.units(), p.components()));
                    let dz = p.accumulate_grads(
                        z.view(),
                        upstream.view(),
                        da.view_mut(),
                        db.view_mut(),
                    )?;
                    (dz, with_tca.then_some((da, db)))
                }
            };
            let input = &cache.inputs[l];
            grads.push(LayerGrads {
                weights: input.t().dot(&dz),
                bias: dz.sum_axis(Axis(0)),
                tca,
            });
            upstream = dz.dot(&layer.weights.t());
        }
        grads.reverse();
        Ok((loss, grads))
    }

    /// One SGD step in place; returns the batch objective before the step.
    pub fn train_step(
        &mut self,
        batch: ArrayView2<'_, f64>,
        lr: f64,
        freeze_tca: bool,
    ) -> Result<f64> {
        let (loss, grads) = self.gradients(batch, !freeze_tca)?;
        let finite = loss.is_finite()
            && grads.iter().all(|g| {
                g.weights.iter().chain(&g.bias).all(|v| v.is_finite())
                    && g.tca
                        .as_ref()
                        .map_or(true, |(a, b)| a.iter().chain(b).all(|v| v.is_finite()))
            });
        if !finite {
            return Err(Error::TrainingFailure {
                epoch: 0,
                reason: "non-finite auto-encoder gradient".into(),
            });
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads) {
            layer.weights.scaled_add(-lr, &g.weights);
            layer.bias.scaled_add(-lr, &g.bias);
            if let (Activation::Tca(p), Some((da, db))) = (&mut layer.activation, &g.tca) {
                p.descend(lr, da, db);
            }
        }
        Ok(loss)
    }

    /// Functional form of [`AeModel::train_step`].
    pub fn ae_train_step(
        &self,
        batch: ArrayView2<'_, f64>,
        lr: f64,
        freeze_tca: bool,
    ) -> Result<AeModel> {
        let mut next = self.clone();
        next.train_step(batch, lr, freeze_tca)?;
        Ok(next)
    }

    /// Mean per-pixel squared reconstruction error over the rows of `x`,
    /// evaluated in parallel over row blocks.
    pub fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        check_len("input columns", self.input_dim(), x.ncols())?;
        if x.nrows() == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        let per_row = parallel::map_row_blocks(x, |block| {
            let r = self.reconstruct(block)?;
            Ok((&r - &block)
                .rows()
                .into_iter()
                .map(|d| d.dot(&d))
                .collect::<Vec<_>>())
        })?;
        Ok(per_row.iter().sum::<f64>() / x.len() as f64)
    }
}

/// Two-phase protocol settings: TCAs frozen until convergence, then enabled
/// until convergence. Each phase stops at its epoch cap if no plateau is hit.
#[derive(Debug, Clone, Copy)]
pub struct AeTraining {
    pub lr: f64,
    pub batch_size: usize,
    pub plateau: Plateau,
    pub max_epochs_frozen: usize,
    pub max_epochs_enabled: usize,
}

impl Default for AeTraining {
    fn default() -> Self {
        Self {
            lr: 0.02,
            batch_size: 100,
            plateau: Plateau::default(),
            max_epochs_frozen: 2000,
            max_epochs_enabled: 2000,
        }
    }
}

/// One logged epoch of auto-encoder training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeEpoch {
    pub epoch: usize,
    pub tca_enabled: bool,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
}

/// Final numbers of the two phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeReport {
    pub frozen_train: f64,
    pub frozen_test: Option<f64>,
    pub enabled_train: f64,
    pub enabled_test: Option<f64>,
    pub epochs_frozen: usize,
    pub epochs_enabled: usize,
}

/// One shuffled pass of SGD over `x`.
pub fn ae_epoch<R: Rng + ?Sized>(
    model: &mut AeModel,
    x: ArrayView2<'_, f64>,
    lr: f64,
    batch_size: usize,
    freeze_tca: bool,
    rng: &mut R,
) -> Result<()> {
    for idx in batches_with(x.nrows(), batch_size, rng)? {
        let batch = x.select(Axis(0), &idx);
        model.train_step(batch.view(), lr, freeze_tca)?;
    }
    Ok(())
}

/// Train with TCAs frozen to convergence, then with TCAs enabled to
/// convergence, evaluating on `train` (and `test`, if given) after every
/// epoch.
pub fn train_two_phase<R: Rng + ?Sized>(
    model: &mut AeModel,
    train: ArrayView2<'_, f64>,
    test: Option<ArrayView2<'_, f64>>,
    cfg: &AeTraining,
    rng: &mut R,
    on_epoch: &mut dyn FnMut(&AeEpoch, &AeModel) -> Result<()>,
) -> Result<AeReport> {
    let mut epoch = 0;
    let mut finals = [(0.0, None, 0); 2];
    for (slot, (enabled, cap)) in [
        (false, cfg.max_epochs_frozen),
        (true, cfg.max_epochs_enabled),
    ]
    .into_iter()
    .enumerate()
    {
        let mut history = Vec::new();
        let mut last = (
            model.evaluate(train)?,
            test.map(|t| model.evaluate(t)).transpose()?,
        );
        let mut used = 0;
        while used < cap && !cfg.plateau.reached(&history) {
            epoch += 1;
            used += 1;
            ae_epoch(model, train, cfg.lr, cfg.batch_size, !enabled, rng).map_err(|e| match e {
                Error::TrainingFailure { reason, .. } => Error::TrainingFailure { epoch, reason },
                other => other,
            })?;
            last = (
                model.evaluate(train)?,
                test.map(|t| model.evaluate(t)).transpose()?,
            );
            history.push(last.0);
            on_epoch(
                &AeEpoch {
                    epoch,
                    tca_enabled: enabled,
                    train_mse: last.0,
                    test_mse: last.1,
                },
                model,
            )?;
        }
        finals[slot] = (last.0, last.1, used);
    }
    Ok(AeReport {
        frozen_train: finals[0].0,
        frozen_test: finals[0].1,
        enabled_train: finals[1].0,
        enabled_test: finals[1].1,
        epochs_frozen: finals[0].2,
        epochs_enabled: finals[1].2,
    })
}

impl Persist for AeModel {
    const KIND: &'static str = "aec";

    fn write_fields(&self, w: &mut TcamWriter, prefix: &str) {
        w.text(&format!("{prefix}layers"), self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("{prefix}layer{l}.");
            w.matrix(&format!("{p}weights"), layer.weights.view());
            w.vector(&format!("{p}bias"), layer.bias.view());
            match &layer.activation {
                Activation::Tca(t) => {
                    w.text(&format!("{p}activation"), "tca");
                    t.write_fields(w, &format!("{p}tca."));
                }
                Activation::Base(k) => {
                    w.text(&format!("{p}activation"), k);
                }
            }
        }
    }

    fn read_fields(r: &TcamReader, prefix: &str) -> Result<Self> {
        let count: usize = r.parse_text(&format!("{prefix}layers"))?;
        let mut layers = Vec::with_capacity(count);
        for l in 0..count {
            let p = format!("{prefix}layer{l}.");
            let activation = match r.text(&format!("{p}activation"))? {
                "tca" => Activation::Tca(TcaParams::read_fields(r, &format!("{p}tca."))?),
                other => Activation::Base(other.parse().map_err(|_| {
                    Error::Schema(format!("layer {l}: unknown activation `{other}`"))
                })?),
            };
            layers.push(schema(
                "auto-encoder layer",
                DenseLayer::new(
                    r.matrix(&format!("{p}weights"))?,
                    r.vector(&format!("{p}bias"))?,
                    activation,
                ),
            )?);
        }
        schema("auto-encoder", AeModel::new(layers))
    }
}
