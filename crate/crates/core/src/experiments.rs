//! Experiment drivers shared by the command-line tool and the acceptance
//! suite: data splits, the layer-1 phase summary, the DBN fine-tuning
//! comparison, the auto-encoder comparison and the density demo.

use std::path::PathBuf;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activations::{BaseKind, TcaParams};
use crate::autoenc::{train_two_phase, AeEpoch, AeModel, AeReport, AeTraining};
use crate::data::{dither, load_idx, subset, Dataset};
use crate::dbn::{DbnModel, UpDownParams};
use crate::error::{Error, Result};
use crate::pdf::{bimodal_benchmark, demodalize, fit_univariate, PdfFitConfig, TargetLaw};
use crate::rbm::{RbmModel, SamplingMode};
use crate::schedule::{EpochRecord, Phase};
use crate::stats::ks_statistic;

/// Where the MNIST subset comes from and how it is split and dithered.
#[derive(Debug, Clone)]
pub struct DataConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub classes: Vec<u8>,
    pub per_class: usize,
    /// Mean dither offset; 0 disables dithering.
    pub dither_mean: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            images: PathBuf::from("data/mnist389/images-idx3-ubyte"),
            labels: PathBuf::from("data/mnist389/labels-idx1-ubyte"),
            classes: vec![3, 8, 9],
            per_class: 500,
            dither_mean: 0.05,
            seed: 0,
        }
    }
}

/// Training split (first `per_class` of each class) and held-out split (the
/// next `per_class` of each class), both dithered from independent streams.
pub fn load_splits(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    let all = load_idx(&cfg.images, &cfg.labels)?;
    let train = subset(&all, &cfg.classes, cfg.per_class, 0)?;
    let held_out = subset(&all, &cfg.classes, cfg.per_class, cfg.per_class)?;
    if cfg.dither_mean <= 0.0 {
        return Ok((train, held_out));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = dither(&train, cfg.dither_mean, &mut rng)?;
    let held_out = dither(&held_out, cfg.dither_mean, &mut rng)?;
    Ok((train, held_out))
}

/// Key numbers of a three-phase RBM log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSummary {
    pub mse_a: f64,
    pub mse_b: f64,
    pub mse_c: f64,
    pub ll_b: f64,
    pub ll_c: f64,
    /// MSE after the first phase-(b) epoch.
    pub mse_b_start: f64,
    /// Lowest MSE within `window` epochs of enabling the TCAs.
    pub mse_c_window: f64,
    pub epochs: [usize; 3],
}

impl PhaseSummary {
    pub fn from_log(log: &[EpochRecord], window: usize) -> Result<Self> {
        let last = |p: Phase| log.iter().rev().find(|r| r.phase == p && r.epoch > 0);
        let missing = |p: Phase| Error::invalid(format!("log has no trained phase ({p}) epoch"));
        let (a, b, c) = (
            last(Phase::Base).ok_or_else(|| missing(Phase::Base))?,
            last(Phase::Frozen).ok_or_else(|| missing(Phase::Frozen))?,
            last(Phase::Enabled).ok_or_else(|| missing(Phase::Enabled))?,
        );
        let b_start = log
            .iter()
            .find(|r| r.phase == Phase::Frozen)
            .expect("phase b exists");
        let mse_c_window = log
            .iter()
            .filter(|r| r.phase == Phase::Enabled && r.epoch <= b.epoch + window)
            .map(|r| r.mse)
            .fold(f64::INFINITY, f64::min);
        let count = |p: Phase| log.iter().filter(|r| r.phase == p && r.epoch > 0).count();
        Ok(Self {
            mse_a: a.mse,
            mse_b: b.mse,
            mse_c: c.mse,
            ll_b: b.cond_ll,
            ll_c: c.cond_ll,
            mse_b_start: b_start.mse,
            mse_c_window,
            epochs: [
                count(Phase::Base),
                count(Phase::Frozen),
                count(Phase::Enabled),
            ],
        })
    }

    /// Relative improvement of the conditional log-likelihood from (b) to (c).
    pub fn ll_improvement(&self) -> f64 {
        (self.ll_c - self.ll_b) / self.ll_b.abs()
    }

    /// Relative MSE drop within the window after enabling the TCAs.
    pub fn enable_drop(&self) -> f64 {
        1.0 - self.mse_c_window / self.mse_b
    }
}

/// Wrap trained stack layers in a DBN with a freshly initialised top layer
/// whose visible biases come from the stack features of `x`.
#[allow(clippy::too_many_arguments)]
pub fn dbn_on_stack<R: Rng + ?Sized>(
    stack: Vec<RbmModel>,
    top_hidden: usize,
    classes: &[u8],
    base: BaseKind,
    components: usize,
    x: ArrayView2<'_, f64>,
    class_idx: &[usize],
    rng: &mut R,
) -> Result<DbnModel> {
    let mut features = x.to_owned();
    for layer in &stack {
        features = layer.hidden_batch(features.view(), SamplingMode::Deterministic, rng)?;
    }
    let mut onehot = Array2::zeros((class_idx.len(), classes.len()));
    for (r, &c) in class_idx.iter().enumerate() {
        onehot[[r, c]] = 1.0;
    }
    let top_data = concatenate![Axis(1), features, onehot];
    let top = RbmModel::init(
        top_data.ncols(),
        top_hidden,
        base,
        base,
        components,
        Some(top_data.view()),
        rng,
    )?;
    DbnModel::new(stack, top, classes.to_vec())
}

/// Validation error and reconstruction MSE of a DBN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbnScore {
    pub val_err: f64,
    pub recon_mse: f64,
}

pub fn dbn_score(
    model: &DbnModel,
    train_x: ArrayView2<'_, f64>,
    val_x: ArrayView2<'_, f64>,
    val_idx: &[usize],
) -> Result<DbnScore> {
    Ok(DbnScore {
        val_err: model.error_rate(val_x, val_idx)?,
        recon_mse: model.reconstruction_mse(train_x)?,
    })
}

/// Outcome of the up-down comparison: the model before fine-tuning, at the
/// branch point, and after continuing with TCAs frozen or enabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbnComparison {
    pub pre: DbnScore,
    pub branch: DbnScore,
    pub frozen: DbnScore,
    pub enabled: DbnScore,
    /// Scores one epoch after the branch point.
    pub frozen_first: DbnScore,
    pub enabled_first: DbnScore,
}

/// Split of the up-down epochs around the enable point.
#[derive(Debug, Clone, Copy)]
pub struct UpDownSchedule {
    pub epochs_frozen: usize,
    pub epochs_after: usize,
}

/// Up-down fine-tuning with TCAs frozen for `epochs_frozen` epochs, then two
/// branches from the same state and RNG stream: one keeps the TCAs frozen,
/// the other enables them. `on_epoch(branch, epoch, score)` sees every
/// evaluated epoch, with branch `"frozen"` for the shared prefix.
#[allow(clippy::too_many_arguments)]
pub fn dbn_updown_comparison(
    model: &DbnModel,
    train: (ArrayView2<'_, f64>, &[usize]),
    val: (ArrayView2<'_, f64>, &[usize]),
    params: &UpDownParams,
    schedule: &UpDownSchedule,
    seed: u64,
    on_epoch: &mut dyn FnMut(&str, usize, &DbnScore, &DbnModel) -> Result<()>,
) -> Result<(DbnComparison, DbnModel, DbnModel)> {
    let score = |m: &DbnModel| dbn_score(m, train.0, val.0, val.1);
    let pre = score(model)?;
    on_epoch("frozen", 0, &pre, model)?;
    let frozen_params = UpDownParams {
        freeze_tca: true,
        ..*params
    };
    let enabled_params = UpDownParams {
        freeze_tca: false,
        ..*params
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shared = model.clone();
    let mut branch = pre;
    for epoch in 1..=schedule.epochs_frozen {
        shared.updown_epoch(train.0, train.1, &frozen_params, &mut rng)?;
        branch = score(&shared)?;
        on_epoch("frozen", epoch, &branch, &shared)?;
    }
    let run = |name: &str,
               p: &UpDownParams,
               on_epoch: &mut dyn FnMut(&str, usize, &DbnScore, &DbnModel) -> Result<()>|
     -> Result<(DbnScore, DbnScore, DbnModel)> {
        let mut m = shared.clone();
        let mut r = rng.clone();
        let (mut first, mut last) = (branch, branch);
        for k in 1..=schedule.epochs_after {
            m.updown_epoch(train.0, train.1, p, &mut r)?;
            last = score(&m)?;
            if k == 1 {
                first = last;
            }
            on_epoch(name, schedule.epochs_frozen + k, &last, &m)?;
        }
        Ok((first, last, m))
    };
    let (frozen_first, frozen, frozen_model) = run("frozen_branch", &frozen_params, on_epoch)?;
    let (enabled_first, enabled, enabled_model) = run("enabled", &enabled_params, on_epoch)?;
    Ok((
        DbnComparison {
            pre,
            branch,
            frozen,
            enabled,
            frozen_first,
            enabled_first,
        },
        frozen_model,
        enabled_model,
    ))
}

/// Auto-encoder comparison: the architecture `dims` with TCAs on the first
/// `tca_layers` layers, trained frozen then enabled.
#[derive(Debug, Clone)]
pub struct AeExperiment {
    pub dims: Vec<usize>,
    pub tca_layers: usize,
    pub base: BaseKind,
    pub components: usize,
    pub training: AeTraining,
    pub seed: u64,
}

impl Default for AeExperiment {
    fn default() -> Self {
        Self {
            dims: vec![784, 32, 8, 32, 784],
            tca_layers: 2,
            base: BaseKind::Ted,
            components: 3,
            training: AeTraining::default(),
            seed: 0,
        }
    }
}

pub fn run_ae_experiment(
    exp: &AeExperiment,
    train: ArrayView2<'_, f64>,
    test: Option<ArrayView2<'_, f64>>,
    on_epoch: &mut dyn FnMut(&AeEpoch, &AeModel) -> Result<()>,
) -> Result<(AeModel, AeReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed);
    let pixel_mean = train
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::invalid("empty dataset"))?;
    let mut model = AeModel::init(
        &exp.dims,
        exp.tca_layers,
        exp.base,
        exp.components,
        Some(pixel_mean.view()),
        &mut rng,
    )?;
    let report = train_two_phase(&mut model, train, test, &exp.training, &mut rng, on_epoch)?;
    Ok((model, report))
}

/// Density demo numbers: KS distance to the uniform target before and after
/// fitting a sigmoid-base TCA to the bimodal benchmark.
#[derive(Debug, Clone)]
pub struct PdfDemo {
    pub ks_fitted: f64,
    pub ks_untrained: f64,
    pub final_loglik: f64,
    pub params: TcaParams,
    pub samples: Vec<f64>,
    pub transformed: Vec<f64>,
}

pub fn pdf_demo(n: usize, components: usize, seed: u64) -> Result<PdfDemo> {
    let xs = bimodal_benchmark(n, seed);
    let base = BaseKind::SigmoidBernoulli;
    let fit = fit_univariate(
        &xs,
        base,
        components,
        TargetLaw::Uniform01,
        &PdfFitConfig {
            seed,
            ..PdfFitConfig::default()
        },
    )?;
    let transformed = demodalize(&fit.params, &xs)?;
    let untrained = demodalize(&TcaParams::identity(base, 1, components)?, &xs)?;
    let cdf = |y: f64| TargetLaw::Uniform01.cdf(y);
    Ok(PdfDemo {
        ks_fitted: ks_statistic(&transformed, cdf),
        ks_untrained: ks_statistic(&untrained, cdf),
        final_loglik: fit.final_loglik(),
        params: fit.params,
        samples: xs,
        transformed,
    })
}
