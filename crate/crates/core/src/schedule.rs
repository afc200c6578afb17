//! The three-phase training protocol shared by RBM layers:
//! (a) base activation only, (b) `M`-component TCA initialised near the base
//! and frozen, (c) TCA updates enabled.

use ndarray::{ArrayView2, Axis};
use rand::Rng;

use crate::activations::TcaParams;
use crate::data::batches_with;
use crate::error::{Error, Result};
use crate::rbm::{unused_rng, CdMetrics, CdParams, RbmModel, SamplingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Single base unit per hidden neuron.
    Base,
    /// Near-base TCA, frozen.
    Frozen,
    /// TCA trained.
    Enabled,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Base => "a",
            Phase::Frozen => "b",
            Phase::Enabled => "c",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Ends a phase once the monitored loss has not improved by at least
/// `rel_tol` (relative) over the last `window` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub window: usize,
    pub rel_tol: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Self {
            window: 25,
            rel_tol: 1e-3,
        }
    }
}

impl Plateau {
    /// True when the best value in the last `window` entries is not at least
    /// `rel_tol` below the best value before them.
    pub fn reached(&self, history: &[f64]) -> bool {
        if self.window == 0 || history.len() <= self.window {
            return false;
        }
        let split = history.len() - self.window;
        let before = history[..split]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let recent = history[split..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        recent > before * (1.0 - self.rel_tol)
    }
}

/// Epoch counts per phase. With a plateau trigger, the counts for phases (a)
/// and (b) become caps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSchedule {
    pub epochs_base: usize,
    pub epochs_frozen: usize,
    pub epochs_enabled: usize,
    pub components: usize,
    pub plateau: Option<Plateau>,
}

/// One row of a training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based running epoch count; 0 is the state before training.
    pub epoch: usize,
    pub phase: Phase,
    pub mse: f64,
    pub cond_ll: f64,
    pub val_err: Option<f64>,
}

/// Mini-batch settings for RBM training.
#[derive(Debug, Clone, Copy)]
pub struct RbmTraining {
    pub cd: CdParams,
    pub batch_size: usize,
}

/// One pass over `data` in shuffled mini-batches.
pub fn rbm_epoch<R: Rng + ?Sized>(
    model: &mut RbmModel,
    data: ArrayView2<'_, f64>,
    training: &RbmTraining,
    rng: &mut R,
) -> Result<()> {
    for idx in batches_with(data.nrows(), training.batch_size, rng)? {
        let batch = data.select(Axis(0), &idx);
        model.cd_update(batch.view(), &training.cd, rng)?;
    }
    Ok(())
}

/// Deterministic one-step reconstruction metrics used for logging.
pub fn rbm_eval(model: &RbmModel, data: ArrayView2<'_, f64>) -> Result<CdMetrics> {
    let mut unused = unused_rng();
    model.reconstruction_metrics(data, 1, SamplingMode::Deterministic, &mut unused)
}

fn failure_at(epoch: usize) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::TrainingFailure { reason, .. } => Error::TrainingFailure { epoch, reason },
        other => other,
    }
}

/// Run the three phases on `model`, calling `on_epoch` after every epoch
/// (and once for the untrained state). The hidden TCA is replaced by a
/// single identity component for phase (a) and by a near-base `M`-component
/// TCA at the start of phase (b).
pub fn train_rbm_phases<R: Rng + ?Sized>(
    model: &mut RbmModel,
    data: ArrayView2<'_, f64>,
    schedule: &PhaseSchedule,
    training: &RbmTraining,
    rng: &mut R,
    on_epoch: &mut dyn FnMut(&EpochRecord, &RbmModel) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    if schedule.components == 0 {
        return Err(Error::invalid("need at least one mixture component"));
    }
    let base = model.hidden().base();
    let units = model.hidden_dim();
    let mut log = Vec::new();
    let mut epoch = 0;
    let mut record =
        |epoch: usize, phase: Phase, model: &RbmModel, log: &mut Vec<EpochRecord>| -> Result<()> {
            let m = rbm_eval(model, data)?;
            let r = EpochRecord {
                epoch,
                phase,
                mse: m.mse,
                cond_ll: m.cond_ll,
                val_err: None,
            };
            on_epoch(&r, model)?;
            log.push(r);
            Ok(())
        };

    let phases = [
        (Phase::Base, schedule.epochs_base),
        (Phase::Frozen, schedule.epochs_frozen),
        (Phase::Enabled, schedule.epochs_enabled),
    ];
    for (phase, epochs) in phases {
        match phase {
            Phase::Base => model.set_hidden(TcaParams::identity(base, units, 1)?)?,
            Phase::Frozen => {
                model.set_hidden(TcaParams::near_base(base, units, schedule.components, rng)?)?
            }
            Phase::Enabled => {}
        }
        if phase == Phase::Base {
            record(0, phase, model, &mut log)?;
        }
        let mut cd = training.cd;
        cd.freeze_tca = phase != Phase::Enabled || training.cd.freeze_tca;
        let phase_training = RbmTraining { cd, ..*training };
        let mut history = Vec::new();
        for _ in 0..epochs {
            epoch += 1;
            rbm_epoch(model, data, &phase_training, rng).map_err(failure_at(epoch))?;
            record(epoch, phase, model, &mut log)?;
            history.push(log.last().expect("just pushed").mse);
            if phase != Phase::Enabled && schedule.plateau.is_some_and(|p| p.reached(&history)) {
                break;
            }
        }
    }
    Ok(log)
}
