use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{s, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tca::autoenc::{AeModel, AeTraining};
use tca::config::TrainConfig;
use tca::data::persist::{load_model, peek_kind, save_model};
use tca::data::pgm::write_pgm_grid;
use tca::data::Dataset;
use tca::dbn::{DbnModel, TopParams, UpDownParams};
use tca::experiments::{load_splits, pdf_demo, run_ae_experiment, AeExperiment, DataConfig};
use tca::pdf::{curve_table, demodalize, fit_univariate, PdfFitConfig, TargetLaw};
use tca::rbm::{CdParams, RbmModel, SamplingMode};
use tca::schedule::{rbm_eval, train_rbm_phases, Phase, PhaseSchedule, Plateau, RbmTraining};
use tca::stats::{ks_statistic, normal_cdf};
use tca::{Error, Result, TcaParams};

#[derive(Parser, Debug)]
#[command(
    name = "tca",
    version,
    about = "Trainable compound activations: RBM, DBN, auto-encoder and density experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a univariate TCA density to a sample file or the bimodal benchmark.
    PdfFit(PdfArgs),
    /// Three-phase training of a single RBM layer.
    TrainRbm(Common),
    /// Layer-wise training, top-layer training and up-down fine-tuning.
    TrainDbn(Common),
    /// Two-phase auto-encoder training (TCAs frozen, then enabled).
    TrainAec(Common),
    /// Evaluate a saved model on a data split.
    Eval(EvalArgs),
}

/// Flags shared by the training commands. Each overrides the config file,
/// which overrides the defaults.
#[derive(Args, Debug, Default)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    images: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    /// Comma-separated digit classes.
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    per_class: Option<String>,
    /// Comma-separated stack layer sizes.
    #[arg(long)]
    hidden: Option<String>,
    /// Top-layer hidden units.
    #[arg(long)]
    top: Option<String>,
    /// TCA mixture components.
    #[arg(long)]
    mixtures: Option<String>,
    /// ted | sigmoid | linear
    #[arg(long)]
    base: Option<String>,
    #[arg(long)]
    cd_k: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    tca_lr: Option<String>,
    #[arg(long)]
    lambda_fe: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs_a: Option<String>,
    #[arg(long)]
    epochs_b: Option<String>,
    #[arg(long)]
    epochs_c: Option<String>,
    /// End phases (a) and (b) early when the MSE plateaus.
    #[arg(long)]
    plateau: bool,
    /// Keep every TCA frozen throughout.
    #[arg(long)]
    freeze_tca: bool,
    #[arg(long)]
    top_epochs: Option<String>,
    #[arg(long)]
    top_lr: Option<String>,
    #[arg(long)]
    updown_frozen: Option<String>,
    #[arg(long)]
    updown_enabled: Option<String>,
    #[arg(long)]
    updown_lr: Option<String>,
    #[arg(long)]
    ae_lr: Option<String>,
    #[arg(long)]
    ae_max_epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    dither_mean: Option<String>,
    /// Write reconstruction images every this many epochs (0 = never).
    #[arg(long)]
    dump_every: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<TrainConfig> {
        let pairs = [
            ("images", &self.images),
            ("labels", &self.labels),
            ("classes", &self.classes),
            ("per_class", &self.per_class),
            ("hidden", &self.hidden),
            ("top", &self.top),
            ("mixtures", &self.mixtures),
            ("base", &self.base),
            ("cd_k", &self.cd_k),
            ("lr", &self.lr),
            ("tca_lr", &self.tca_lr),
            ("lambda_fe", &self.lambda_fe),
            ("batch_size", &self.batch_size),
            ("epochs_a", &self.epochs_a),
            ("epochs_b", &self.epochs_b),
            ("epochs_c", &self.epochs_c),
            ("top_epochs", &self.top_epochs),
            ("top_lr", &self.top_lr),
            ("updown_frozen", &self.updown_frozen),
            ("updown_enabled", &self.updown_enabled),
            ("updown_lr", &self.updown_lr),
            ("ae_lr", &self.ae_lr),
            ("ae_max_epochs", &self.ae_max_epochs),
            ("seed", &self.seed),
            ("out_dir", &self.out_dir),
            ("dither_mean", &self.dither_mean),
            ("dump_every", &self.dump_every),
        ];
        let mut overrides: Vec<(&str, String)> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        if self.plateau {
            overrides.push(("plateau", "true".into()));
        }
        if self.freeze_tca {
            overrides.push(("freeze_tca", "true".into()));
        }
        TrainConfig::resolve(self.config.as_deref(), overrides)
    }
}

#[derive(Args, Debug)]
struct PdfArgs {
    /// Text file with one sample per line.
    #[arg(long, conflicts_with = "bimodal")]
    input: Option<PathBuf>,
    /// Use `N` draws from the two-Gaussian benchmark instead of a file.
    #[arg(long, value_name = "N")]
    bimodal: Option<usize>,
    #[arg(long, default_value_t = 4)]
    mixtures: usize,
    /// ted | sigmoid | linear
    #[arg(long, default_value = "sigmoid")]
    base: String,
    /// uniform | gaussian
    #[arg(long, default_value = "uniform")]
    target: String,
    #[arg(long, default_value_t = 3000)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// train | held-out
    #[arg(long, default_value = "train")]
    split: String,
    #[command(flatten)]
    common: Common,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PdfFit(a) => cmd_pdf_fit(&a),
        Command::TrainRbm(c) => cmd_train_rbm(&c.resolve()?),
        Command::TrainDbn(c) => cmd_train_dbn(&c.resolve()?),
        Command::TrainAec(c) => cmd_train_aec(&c.resolve()?),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn data_config(cfg: &TrainConfig) -> DataConfig {
    DataConfig {
        images: cfg.images.clone(),
        labels: cfg.labels.clone(),
        classes: cfg.classes.clone(),
        per_class: cfg.per_class,
        dither_mean: cfg.dither_mean,
        seed: cfg.seed,
    }
}

fn rbm_training(cfg: &TrainConfig) -> RbmTraining {
    RbmTraining {
        cd: CdParams {
            k: cfg.cd_k,
            lr: cfg.lr,
            tca_lr: cfg.tca_lr,
            freeze_tca: cfg.freeze_tca,
            mode: SamplingMode::Deterministic,
        },
        batch_size: cfg.batch_size,
    }
}

fn phase_schedule(cfg: &TrainConfig) -> PhaseSchedule {
    PhaseSchedule {
        epochs_base: cfg.epochs_a,
        epochs_frozen: cfg.epochs_b,
        epochs_enabled: cfg.epochs_c,
        components: cfg.mixtures,
        plateau: cfg.plateau.then(Plateau::default),
    }
}

/// Metrics CSV: the resolved config as comment lines, then a fixed header.
struct Metrics {
    out: BufWriter<File>,
    path: PathBuf,
}

impl Metrics {
    fn create(cfg: &TrainConfig, name: &str) -> Result<Self> {
        let path = cfg.out_dir.join(name);
        let mut out = create(&path)?;
        write!(out, "{}", cfg.echo()).map_err(io_err(&path))?;
        writeln!(out, "epoch,phase,mse,cond_ll,val_err").map_err(io_err(&path))?;
        Ok(Self { out, path })
    }

    fn row(
        &mut self,
        epoch: usize,
        phase: &str,
        mse: f64,
        cond_ll: Option<f64>,
        val_err: Option<f64>,
    ) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            self.out,
            "{epoch},{phase},{mse},{},{}",
            opt(cond_ll),
            opt(val_err)
        )
        .map_err(io_err(&self.path))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

const DUMP_TILES: usize = 16;

fn dump_rbm_reconstructions(model: &RbmModel, ds: &Dataset, path: &Path) -> Result<()> {
    let n = DUMP_TILES.min(ds.len());
    let x = ds.images().slice(s![..n, ..]);
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let h = model.hidden_batch(x, SamplingMode::Deterministic, &mut unused)?;
    let r = model.visible_batch(h.view(), SamplingMode::Deterministic, &mut unused)?;
    write_pair_grid(x, r.view(), ds, path)
}

fn write_pair_grid(
    x: ArrayView2<'_, f64>,
    r: ArrayView2<'_, f64>,
    ds: &Dataset,
    path: &Path,
) -> Result<()> {
    let (rows, cols) = ds.image_shape();
    let tiles = x.rows().into_iter().chain(r.rows());
    write_pgm_grid(path, tiles, rows, cols, x.nrows())
}

fn cmd_pdf_fit(a: &PdfArgs) -> Result<()> {
    let base = a.base.parse()?;
    let target: TargetLaw = a.target.parse()?;
    if a.mixtures == 0 {
        return Err(Error::InvalidArgument(
            "--mixtures must be at least 1".into(),
        ));
    }
    let xs = match (&a.input, a.bimodal) {
        (Some(path), _) => read_samples(path)?,
        (None, Some(n)) => pdf_demo_samples(n, a.seed),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "give --input FILE or --bimodal N".into(),
            ))
        }
    };
    let fit = fit_univariate(
        &xs,
        base,
        a.mixtures,
        target,
        &PdfFitConfig {
            epochs: a.epochs,
            seed: a.seed,
            ..PdfFitConfig::default()
        },
    )?;
    let ys = demodalize(&fit.params, &xs)?;
    let ks = match target {
        TargetLaw::Uniform01 => ks_statistic(&ys, |y| y.clamp(0.0, 1.0)),
        TargetLaw::StandardGaussian => ks_statistic(&ys, normal_cdf),
    };
    prepare_dir(&a.out_dir)?;
    let (lo, hi) = xs
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let pad = 0.1 * (hi - lo).max(1e-6);
    let curve_path = a.out_dir.join("pdf_curve.csv");
    let mut out = create(&curve_path)?;
    writeln!(out, "x,map,slope,density").map_err(io_err(&curve_path))?;
    for [x, f, df, d] in curve_table(&fit.params, target, lo - pad, hi + pad, 400)? {
        writeln!(out, "{x},{f},{df},{d}").map_err(io_err(&curve_path))?;
    }
    out.flush().map_err(io_err(&curve_path))?;
    let tr_path = a.out_dir.join("pdf_transformed.csv");
    let mut out = create(&tr_path)?;
    writeln!(out, "x,y").map_err(io_err(&tr_path))?;
    for (x, y) in xs.iter().zip(&ys) {
        writeln!(out, "{x},{y}").map_err(io_err(&tr_path))?;
    }
    out.flush().map_err(io_err(&tr_path))?;
    save_model(a.out_dir.join("pdf.tcam"), &fit.params)?;
    println!("samples {}", xs.len());
    println!("mean_loglik {}", fit.final_loglik());
    println!("ks_{} {ks}", target.name());
    if a.bimodal.is_some()
        && target == TargetLaw::Uniform01
        && base == tca::BaseKind::SigmoidBernoulli
    {
        let demo = pdf_demo(xs.len(), a.mixtures, a.seed)?;
        println!("ks_untrained {}", demo.ks_untrained);
    }
    Ok(())
}

fn pdf_demo_samples(n: usize, seed: u64) -> Vec<f64> {
    tca::pdf::bimodal_benchmark(n, seed)
}

fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>().map_err(|_| {
                Error::InvalidArgument(format!("{}: bad sample `{l}`", path.display()))
            })
        })
        .collect()
}

fn cmd_train_rbm(cfg: &TrainConfig) -> Result<()> {
    let (train, _) = load_splits(&data_config(cfg))?;
    prepare_dir(&cfg.out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hidden = cfg.hidden[0];
    let mut model = RbmModel::init(
        train.dim(),
        hidden,
        cfg.base,
        cfg.base,
        cfg.mixtures,
        Some(train.images().view()),
        &mut rng,
    )?;
    let mut metrics = Metrics::create(cfg, "metrics.csv")?;
    let log = train_rbm_phases(
        &mut model,
        train.images().view(),
        &phase_schedule(cfg),
        &rbm_training(cfg),
        &mut rng,
        &mut |r, m| {
            metrics.row(r.epoch, r.phase.tag(), r.mse, Some(r.cond_ll), None)?;
            if cfg.dump_every > 0 && r.epoch % cfg.dump_every == 0 {
                let path = cfg.out_dir.join(format!("recon_{:05}.pgm", r.epoch));
                dump_rbm_reconstructions(m, &train, &path)?;
            }
            Ok(())
        },
    )?;
    metrics.finish()?;
    save_model(cfg.out_dir.join("rbm.tcam"), &model)?;
    for phase in [Phase::Base, Phase::Frozen, Phase::Enabled] {
        if let Some(r) = log.iter().rev().find(|r| r.phase == phase) {
            println!(
                "phase {} epoch {} mse {} cond_ll {}",
                phase, r.epoch, r.mse, r.cond_ll
            );
        }
    }
    Ok(())
}

fn cmd_train_dbn(cfg: &TrainConfig) -> Result<()> {
    let (train, val) = load_splits(&data_config(cfg))?;
    prepare_dir(&cfg.out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = train.images().view();
    let idx = train.class_indices();
    let mut model = DbnModel::init(
        train.dim(),
        &cfg.hidden,
        cfg.top,
        &cfg.classes,
        cfg.base,
        cfg.mixtures,
        Some((x, &idx)),
        &mut rng,
    )?;
    let val_idx = model.class_indices(val.labels())?;
    let mut metrics = Metrics::create(cfg, "metrics.csv")?;
    let mut epoch = 0;
    model.train_layerwise(
        x,
        &phase_schedule(cfg),
        &rbm_training(cfg),
        &mut rng,
        &mut |l, r, _| {
            epoch += usize::from(r.epoch > 0);
            metrics.row(
                epoch,
                &format!("l{l}-{}", r.phase),
                r.mse,
                Some(r.cond_ll),
                None,
            )
        },
    )?;
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let features = model.stack_forward_batch(x, SamplingMode::Deterministic, &mut unused)?;
    let top = TopParams {
        cd: CdParams {
            k: cfg.top_cd_k,
            lr: cfg.top_lr,
            tca_lr: cfg.tca_lr,
            freeze_tca: true,
            mode: SamplingMode::Stochastic,
        },
        lambda: cfg.lambda_fe,
        batch_size: cfg.batch_size,
    };
    let val_x = val.images().view();
    let base_epoch = epoch;
    model.top_train(
        features.view(),
        &idx,
        cfg.top_epochs,
        &top,
        &mut rng,
        &mut |e, m| {
            metrics.row(
                base_epoch + e,
                "top",
                m.reconstruction_mse(x)?,
                None,
                Some(m.error_rate(val_x, &val_idx)?),
            )
        },
    )?;
    epoch += cfg.top_epochs;
    let mut params = UpDownParams {
        top: TopParams {
            cd: CdParams {
                lr: cfg.updown_lr,
                ..top.cd
            },
            ..top
        },
        stack_lr: cfg.updown_lr,
        stack_tca_lr: cfg.tca_lr,
        freeze_tca: true,
    };
    for k in 0..cfg.updown_frozen + cfg.updown_enabled {
        params.freeze_tca = cfg.freeze_tca || k < cfg.updown_frozen;
        model.updown_epoch(x, &idx, &params, &mut rng)?;
        epoch += 1;
        let phase = if params.freeze_tca {
            "ud-frozen"
        } else {
            "ud-enabled"
        };
        metrics.row(
            epoch,
            phase,
            model.reconstruction_mse(x)?,
            None,
            Some(model.error_rate(val_x, &val_idx)?),
        )?;
    }
    metrics.finish()?;
    save_model(cfg.out_dir.join("dbn.tcam"), &model)?;
    println!("val_err {}", model.error_rate(val_x, &val_idx)?);
    println!("recon_mse {}", model.reconstruction_mse(x)?);
    Ok(())
}

fn cmd_train_aec(cfg: &TrainConfig) -> Result<()> {
    let (train, test) = load_splits(&data_config(cfg))?;
    prepare_dir(&cfg.out_dir)?;
    let dims: Vec<usize> = std::iter::once(train.dim())
        .chain(cfg.hidden.iter().copied())
        .chain(cfg.hidden.iter().rev().skip(1).copied())
        .chain(std::iter::once(train.dim()))
        .collect();
    let exp = AeExperiment {
        dims,
        tca_layers: cfg.hidden.len(),
        base: cfg.base,
        components: cfg.mixtures,
        training: AeTraining {
            lr: cfg.ae_lr,
            batch_size: cfg.batch_size,
            max_epochs_frozen: cfg.ae_max_epochs,
            max_epochs_enabled: if cfg.freeze_tca { 0 } else { cfg.ae_max_epochs },
            ..AeTraining::default()
        },
        seed: cfg.seed,
    };
    let mut metrics = Metrics::create(cfg, "metrics.csv")?;
    let (model, report) = run_ae_experiment(
        &exp,
        train.images().view(),
        Some(test.images().view()),
        &mut |e, m| {
            let phase = if e.tca_enabled { "enabled" } else { "frozen" };
            metrics.row(e.epoch, phase, e.train_mse, None, None)?;
            if cfg.dump_every > 0 && e.epoch % cfg.dump_every == 0 {
                let x = test.images().slice(s![..DUMP_TILES.min(test.len()), ..]);
                let r = m.reconstruct(x)?;
                write_pair_grid(
                    x,
                    r.view(),
                    &test,
                    &cfg.out_dir.join(format!("recon_{:05}.pgm", e.epoch)),
                )?;
            }
            Ok(())
        },
    )?;
    metrics.finish()?;
    save_model(cfg.out_dir.join("aec.tcam"), &model)?;
    let table = cfg.out_dir.join("aec_summary.csv");
    let mut out = create(&table)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    writeln!(out, "tca,epochs,train_mse,test_mse").map_err(io_err(&table))?;
    writeln!(
        out,
        "no,{},{},{}",
        report.epochs_frozen,
        report.frozen_train,
        opt(report.frozen_test)
    )
    .map_err(io_err(&table))?;
    writeln!(
        out,
        "yes,{},{},{}",
        report.epochs_enabled,
        report.enabled_train,
        opt(report.enabled_test)
    )
    .map_err(io_err(&table))?;
    out.flush().map_err(io_err(&table))?;
    println!("tca  train_mse  test_mse");
    println!(
        "no   {:.5}  {}",
        report.frozen_train,
        opt(report.frozen_test)
    );
    println!(
        "yes  {:.5}  {}",
        report.enabled_train,
        opt(report.enabled_test)
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let kind = peek_kind(&a.model)?;
    let split = |cfg: &TrainConfig| -> Result<Dataset> {
        let (train, held_out) = load_splits(&data_config(cfg))?;
        match a.split.as_str() {
            "train" => Ok(train),
            "held-out" | "held_out" | "val" | "test" => Ok(held_out),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    };
    match kind.as_str() {
        "rbm" => {
            let model: RbmModel = load_model(&a.model)?;
            let ds = split(&cfg)?;
            let m = rbm_eval(&model, ds.images().view())?;
            println!("mse {}", m.mse);
            println!("cond_ll {}", m.cond_ll);
        }
        "dbn" => {
            let model: DbnModel = load_model(&a.model)?;
            let ds = split(&cfg)?;
            let idx = model.class_indices(ds.labels())?;
            println!("mse {}", model.reconstruction_mse(ds.images().view())?);
            println!("val_err {}", model.error_rate(ds.images().view(), &idx)?);
        }
        "aec" => {
            let model: AeModel = load_model(&a.model)?;
            let ds = split(&cfg)?;
            println!("mse {}", model.evaluate(ds.images().view())?);
        }
        "tca" => {
            let p: TcaParams = load_model(&a.model)?;
            println!("units {}", p.units());
            println!("components {}", p.components());
            println!("base {}", p.base());
        }
        other => return Err(Error::Schema(format!("unknown model kind `{other}`"))),
    }
    Ok(())
}
