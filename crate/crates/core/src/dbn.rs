//! Deep belief network: a stack of TCA-hidden RBMs followed by a top RBM
//! whose visible layer is `[features | one-hot label]`.
//!
//! Classification compares the free energy of the top layer across label
//! hypotheses; the lowest free energy wins. The top layer is trained by CD
//! plus a supervised cross-entropy term on those scores, and the whole stack
//! can be fine-tuned with a simplified tied-weight up-down pass.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::activations::BaseKind;
use crate::data::batches_with;
use crate::data::persist::{schema, Persist, TcamReader, TcamWriter};
use crate::error::{check_len, Error, Result};
use crate::parallel;
use crate::rbm::{unused_rng, CdMetrics, CdParams, RbmGrads, RbmModel, SamplingMode};
use crate::schedule::{train_rbm_phases, EpochRecord, PhaseSchedule, RbmTraining};

#[derive(Debug, Clone, PartialEq)]
pub struct DbnModel {
    stack: Vec<RbmModel>,
    top: RbmModel,
    classes: Vec<u8>,
}

/// Settings for supervised updates of the top layer.
#[derive(Debug, Clone, Copy)]
pub struct TopParams {
    pub cd: CdParams,
    /// Weight of the free-energy cross-entropy term.
    pub lambda: f64,
    pub batch_size: usize,
}

impl Default for TopParams {
    fn default() -> Self {
        Self {
            cd: CdParams {
                k: 3,
                mode: SamplingMode::Stochastic,
                ..CdParams::default()
            },
            lambda: 1.0,
            batch_size: 100,
        }
    }
}

/// Settings for one up-down fine-tuning epoch.
#[derive(Debug, Clone, Copy)]
pub struct UpDownParams {
    pub top: TopParams,
    /// Rates for the stack layers (sampling mode and `k` are unused there).
    pub stack_lr: f64,
    pub stack_tca_lr: f64,
    pub freeze_tca: bool,
}

fn one_hot_rows(class_idx: &[usize], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((class_idx.len(), classes));
    for (r, &c) in class_idx.iter().enumerate() {
        out[[r, c]] = 1.0;
    }
    out
}

impl DbnModel {
    pub fn new(stack: Vec<RbmModel>, top: RbmModel, classes: Vec<u8>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("a DBN needs at least one class"));
        }
        for pair in stack.windows(2) {
            check_len(
                "stacked layer input",
                pair[0].hidden_dim(),
                pair[1].visible_dim(),
            )?;
        }
        let features = stack.last().map(RbmModel::hidden_dim);
        if let Some(f) = features {
            check_len("top visible units", f + classes.len(), top.visible_dim())?;
        } else if top.visible_dim() <= classes.len() {
            return Err(Error::invalid("top layer has no feature block"));
        }
        Ok(Self {
            stack,
            top,
            classes,
        })
    }

    /// Random initialisation: each layer as [`RbmModel::init`] with visible
    /// biases from the data propagated through the (untrained) stack.
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        top_hidden: usize,
        classes: &[u8],
        base: BaseKind,
        components: usize,
        data: Option<(ArrayView2<'_, f64>, &[usize])>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut stack = Vec::with_capacity(hidden.len());
        let mut below = input_dim;
        let mut x = data.map(|(x, _)| x.to_owned());
        for &h in hidden {
            let layer = RbmModel::init(
                below,
                h,
                base,
                base,
                components,
                x.as_ref().map(|v| v.view()),
                rng,
            )?;
            x = match x {
                Some(v) => Some(layer.hidden_batch(v.view(), SamplingMode::Deterministic, rng)?),
                None => None,
            };
            stack.push(layer);
            below = h;
        }
        let top_data = match (x, data) {
            (Some(f), Some((_, idx))) => {
                Some(concatenate![Axis(1), f, one_hot_rows(idx, classes.len())])
            }
            _ => None,
        };
        let top = RbmModel::init(
            below + classes.len(),
            top_hidden,
            base,
            base,
            components,
            top_data.as_ref().map(|v| v.view()),
            rng,
        )?;
        Self::new(stack, top, classes.to_vec())
    }

    pub fn stack(&self) -> &[RbmModel] {
        &self.stack
    }

    pub fn top(&self) -> &RbmModel {
        &self.top
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.stack
            .first()
            .map_or(self.feature_dim(), RbmModel::visible_dim)
    }

    pub fn feature_dim(&self) -> usize {
        self.top.visible_dim() - self.classes.len()
    }

    #[cfg(test)]
    pub(crate) fn top_mut(&mut self) -> &mut RbmModel {
        &mut self.top
    }

    /// Position of each label within the class list.
    pub fn class_indices(&self, labels: &[u8]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.classes
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| Error::invalid(format!("label {l} is not one of the classes")))
            })
            .collect()
    }

    /// Sequential hidden steps through the stack.
    pub fn stack_forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView1<'_, f64>,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<Array1<f64>> {
        Ok(self
            .stack_forward_batch(x.insert_axis(Axis(0)), mode, rng)?
            .index_axis_move(Axis(0), 0))
    }

    pub fn stack_forward_batch<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, f64>,
        mode: SamplingMode,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        check_len("input columns", self.input_dim(), x.ncols())?;
        let mut h = x.to_owned();
        for layer in &self.stack {
            h = layer.hidden_batch(h.view(), mode, rng)?;
        }
        Ok(h)
    }

    fn deterministic_features(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut unused = unused_rng();
        self.stack_forward_batch(x, SamplingMode::Deterministic, &mut unused)
    }

    /// `[features | e_class]` rows.
    pub fn top_input(
        &self,
        features: ArrayView2<'_, f64>,
        class_idx: &[usize],
    ) -> Result<Array2<f64>> {
        check_len("feature columns", self.feature_dim(), features.ncols())?;
        check_len("labels", features.nrows(), class_idx.len())?;
        if let Some(c) = class_idx.iter().find(|&&c| c >= self.classes.len()) {
            return Err(Error::invalid(format!("class index {c} out of range")));
        }
        Ok(concatenate![
            Axis(1),
            features,
            one_hot_rows(class_idx, self.classes.len())
        ])
    }

    /// Every `[h_s | e_c]` row, sample-major.
    fn all_hypotheses(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        let c = self.classes.len();
        let s = features.nrows();
        let mut out = Array2::zeros((s * c, self.top.visible_dim()));
        for (i, h) in features.rows().into_iter().enumerate() {
            for k in 0..c {
                let mut row = out.row_mut(i * c + k);
                row.slice_mut(s![..self.feature_dim()]).assign(&h);
                row[self.feature_dim() + k] = 1.0;
            }
        }
        out
    }

    /// Scores `-F([h | e_c])` per sample (rows) and class (columns).
    pub fn scores_from_features(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_len("feature columns", self.feature_dim(), features.ncols())?;
        let fe = self
            .top
            .free_energy_batch(self.all_hypotheses(features).view())?;
        Ok((-fe)
            .into_shape_with_order((features.nrows(), self.classes.len()))
            .expect("sample-major layout"))
    }

    /// Predicted class index and the per-class scores for one input.
    pub fn classify_free_energy(&self, x: ArrayView1<'_, f64>) -> Result<(usize, Array1<f64>)> {
        let f = self.deterministic_features(x.insert_axis(Axis(0)))?;
        let scores = self
            .scores_from_features(f.view())?
            .index_axis_move(Axis(0), 0);
        Ok((argmax(scores.view()), scores))
    }

    /// Predicted class indices for every row, evaluated in parallel.
    pub fn classify_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        check_len("input columns", self.input_dim(), x.ncols())?;
        parallel::map_row_blocks(x, |block| {
            let f = self.deterministic_features(block)?;
            let scores = self.scores_from_features(f.view())?;
            Ok(scores.rows().into_iter().map(argmax).collect())
        })
    }

    /// Fraction of rows whose predicted class differs from `class_idx`.
    pub fn error_rate(&self, x: ArrayView2<'_, f64>, class_idx: &[usize]) -> Result<f64> {
        check_len("labels", x.nrows(), class_idx.len())?;
        if class_idx.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        let predicted = self.classify_batch(x)?;
        let wrong = predicted
            .iter()
            .zip(class_idx)
            .filter(|(p, y)| p != y)
            .count();
        Ok(wrong as f64 / class_idx.len() as f64)
    }

    /// Mean cross-entropy of `softmax(-F)` against the true classes.
    pub fn free_energy_cross_entropy(
        &self,
        features: ArrayView2<'_, f64>,
        class_idx: &[usize],
    ) -> Result<f64> {
        check_len("labels", features.nrows(), class_idx.len())?;
        let scores = self.scores_from_features(features)?;
        let total: f64 = scores
            .rows()
            .into_iter()
            .zip(class_idx)
            .map(|(row, &y)| log_sum_exp(row) - row[y])
            .sum();
        Ok(total / class_idx.len() as f64)
    }

    /// Adds `lambda * d(cross-entropy)/dtheta` for the top layer into `grads`.
    fn accumulate_fe_term(
        &self,
        features: ArrayView2<'_, f64>,
        class_idx: &[usize],
        lambda: f64,
        with_tca: bool,
        grads: &mut RbmGrads,
    ) -> Result<()> {
        let c = self.classes.len();
        let n = features.nrows() as f64;
        let scores = self.scores_from_features(features)?;
        // dCE/dF_c = delta_cy - p_c
        let mut weights = Array1::zeros(features.nrows() * c);
        for (i, row) in scores.rows().into_iter().enumerate() {
            let lse = log_sum_exp(row);
            for k in 0..c {
                let p = (row[k] - lse).exp();
                let delta = if k == class_idx[i] { 1.0 } else { 0.0 };
                weights[i * c + k] = lambda * (delta - p) / n;
            }
        }
        self.top.accumulate_free_energy_grads(
            self.all_hypotheses(features).view(),
            weights.view(),
            with_tca,
            grads,
        )
    }

    /// Gradient of the top-layer objective on one batch: CD on
    /// `[features | one-hot]` plus `lambda` times the free-energy
    /// cross-entropy. Returns the gradient, CD metrics and the reconstruction.
    pub fn top_gradient<R: Rng + ?Sized>(
        &self,
        features: ArrayView2<'_, f64>,
        class_idx: &[usize],
        params: &TopParams,
        rng: &mut R,
    ) -> Result<(RbmGrads, CdMetrics, Array2<f64>)> {
        let v = self.top_input(features, class_idx)?;
        let (mut g, metrics, recon) = self.top.cd_gradient(v.view(), &params.cd, rng)?;
        if params.lambda != 0.0 {
            self.accumulate_fe_term(
                features,
                class_idx,
                params.lambda,
                !params.cd.freeze_tca,
                &mut g,
            )?;
        }
        Ok((g, metrics, recon))
    }

    /// Train the top layer on precomputed features for `epochs` passes.
    pub fn top_train<R: Rng + ?Sized>(
        &mut self,
        features: ArrayView2<'_, f64>,
        class_idx: &[usize],
        epochs: usize,
        params: &TopParams,
        rng: &mut R,
        on_epoch: &mut dyn FnMut(usize, &DbnModel) -> Result<()>,
    ) -> Result<()> {
        self.top_input(features, class_idx)?;
        for epoch in 1..=epochs {
            for idx in batches_with(features.nrows(), params.batch_size, rng)? {
                let f = features.select(Axis(0), &idx);
                let y: Vec<usize> = idx.iter().map(|&i| class_idx[i]).collect();
                let (g, _, _) = self.top_gradient(f.view(), &y, params, rng)?;
                self.top
                    .apply_grads(&g, params.cd.lr, params.cd.tca_lr, params.cd.freeze_tca)
                    .map_err(|e| at_epoch(e, epoch))?;
            }
            on_epoch(epoch, self)?;
        }
        Ok(())
    }

    /// Three-phase training of every stack layer on the output of the layer
    /// below. Returns one log per layer.
    pub fn train_layerwise<R: Rng + ?Sized>(
        &mut self,
        x: ArrayView2<'_, f64>,
        schedule: &PhaseSchedule,
        training: &RbmTraining,
        rng: &mut R,
        on_epoch: &mut dyn FnMut(usize, &EpochRecord, &RbmModel) -> Result<()>,
    ) -> Result<Vec<Vec<EpochRecord>>> {
        check_len("input columns", self.input_dim(), x.ncols())?;
        let mut input = x.to_owned();
        let mut logs = Vec::with_capacity(self.stack.len());
        for (l, layer) in self.stack.iter_mut().enumerate() {
            let log =
                train_rbm_phases(layer, input.view(), schedule, training, rng, &mut |r, m| {
                    on_epoch(l, r, m)
                })?;
            input = layer.hidden_batch(input.view(), SamplingMode::Deterministic, rng)?;
            logs.push(log);
        }
        Ok(logs)
    }

    /// Up through the stack and back down, deterministically.
    pub fn reconstruct(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut unused = unused_rng();
        let mut h = self.stack_forward_batch(x, SamplingMode::Deterministic, &mut unused)?;
        for layer in self.stack.iter().rev() {
            h = layer.visible_batch(h.view(), SamplingMode::Deterministic, &mut unused)?;
        }
        Ok(h)
    }

    /// Per-pixel mean squared error of [`DbnModel::reconstruct`].
    pub fn reconstruction_mse(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        if x.nrows() == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        let per_row = parallel::map_row_blocks(x, |block| {
            let r = self.reconstruct(block)?;
            Ok((&block - &r)
                .rows()
                .into_iter()
                .map(|d| d.dot(&d))
                .collect::<Vec<f64>>())
        })?;
        Ok(per_row.iter().sum::<f64>() / (x.len() as f64))
    }

    /// One simplified tied-weight up-down pass over `x` in mini-batches.
    ///
    /// Per batch: a deterministic up-pass through the stack; a top-layer
    /// update (CD with labels injected, plus the free-energy term); a
    /// deterministic down-pass from the feature block of the top
    /// reconstruction; and for each stack layer a free-energy CD update with
    /// the up-pass input as data and the down-pass reconstruction as model
    /// sample.
    pub fn updown_epoch<R: Rng + ?Sized>(
        &mut self,
        x: ArrayView2<'_, f64>,
        class_idx: &[usize],
        params: &UpDownParams,
        rng: &mut R,
    ) -> Result<()> {
        check_len("labels", x.nrows(), class_idx.len())?;
        check_len("input columns", self.input_dim(), x.ncols())?;
        let mut top = params.top;
        top.cd.freeze_tca |= params.freeze_tca;
        for idx in batches_with(x.nrows(), top.batch_size, rng)? {
            let batch = x.select(Axis(0), &idx);
            let y: Vec<usize> = idx.iter().map(|&i| class_idx[i]).collect();
            let mut ups = vec![batch];
            for layer in &self.stack {
                let next = layer.hidden_batch(
                    ups.last().expect("non-empty").view(),
                    SamplingMode::Deterministic,
                    rng,
                )?;
                ups.push(next);
            }
            let features = ups.last().expect("non-empty").view();
            let (g, _, recon) = self.top_gradient(features, &y, &top, rng)?;
            let mut down = recon.slice(s![.., ..self.feature_dim()]).to_owned();
            self.top
                .apply_grads(&g, top.cd.lr, top.cd.tca_lr, top.cd.freeze_tca)?;

            for (l, layer) in self.stack.iter_mut().enumerate().rev() {
                let below = layer.visible_batch(down.view(), SamplingMode::Deterministic, rng)?;
                let n = below.nrows() as f64;
                let mut g = RbmGrads::zeros_like(layer);
                let w_data = Array1::from_elem(below.nrows(), 1.0 / n);
                let w_model = Array1::from_elem(below.nrows(), -1.0 / n);
                layer.accumulate_free_energy_grads(
                    ups[l].view(),
                    w_data.view(),
                    !params.freeze_tca,
                    &mut g,
                )?;
                layer.accumulate_free_energy_grads(
                    below.view(),
                    w_model.view(),
                    !params.freeze_tca,
                    &mut g,
                )?;
                layer.apply_grads(&g, params.stack_lr, params.stack_tca_lr, params.freeze_tca)?;
                down = below;
            }
        }
        Ok(())
    }
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::TrainingFailure { reason, .. } => Error::TrainingFailure { epoch, reason },
        other => other,
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(v: ArrayView1<'_, f64>) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Persist for DbnModel {
    const KIND: &'static str = "dbn";

    fn write_fields(&self, w: &mut TcamWriter, prefix: &str) {
        let classes: Vec<String> = self.classes.iter().map(u8::to_string).collect();
        w.text(&format!("{prefix}classes"), classes.join(","));
        w.text(&format!("{prefix}layers"), self.stack.len());
        for (l, layer) in self.stack.iter().enumerate() {
            layer.write_fields(w, &format!("{prefix}layer{l}."));
        }
        self.top.write_fields(w, &format!("{prefix}top."));
    }

    fn read_fields(r: &TcamReader, prefix: &str) -> Result<Self> {
        let classes = r
            .text(&format!("{prefix}classes"))?
            .split(',')
            .map(|c| c.trim().parse::<u8>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Schema(format!("classes: {e}")))?;
        let layers: usize = r.parse_text(&format!("{prefix}layers"))?;
        let stack = (0..layers)
            .map(|l| RbmModel::read_fields(r, &format!("{prefix}layer{l}.")))
            .collect::<Result<Vec<_>>>()?;
        let top = RbmModel::read_fields(r, &format!("{prefix}top."))?;
        schema("DBN", DbnModel::new(stack, top, classes))
    }
}
