//! Self-supervised training of the UGrid network.

mod data;
mod optim;
mod unroll;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::{
    boundary_components, gen_donut_sample, generate_dataset, load_dataset, sample_rng, save_dataset, Manifest,
    Sample, SampleFiles, MANIFEST_NAME,
};
pub use optim::{adam_step, legacy_loss, residual_loss, AdamConfig, AdamState, LegacyLoss, LEGACY_EPS};
pub use unroll::{unrolled_loss, unrolled_loss_grad, Objective, UnrollOutput};

use crate::error::{Error, Result};
use crate::grid::{is_valid_side, GridField};
use crate::multigrid::MgHierarchy;
use crate::net::{init_params, save_checkpoint, CheckpointMeta, UGridParams, DEFAULT_CHANNELS, DEFAULT_DEPTH};
use crate::solver::{mg_solve_with, solve, SolveConfig, Termination};
use crate::stencil::{PdeKind, PdeProblem};

/// Tolerance for the multigrid reference solutions of the legacy loss.
pub const REFERENCE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Residual,
    Legacy,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(LossKind::Residual),
            "legacy" => Ok(LossKind::Legacy),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Residual => "residual",
            LossKind::Legacy => "legacy",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub family: PdeKind,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub grid_n: usize,
    /// Unrolled outer iterations per training step.
    pub unroll: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub depth: usize,
    pub channels: usize,
    pub pre_smooth: usize,
    pub post_smooth: usize,
    /// Share of the dataset held out for validation.
    pub val_fraction: f64,
    pub val_max_iters: usize,
    pub val_tol: f64,
    /// Validate every this many epochs; the last epoch is always validated.
    pub val_every: usize,
    /// Train on random constant forcing instead of `f = 0`.
    pub nonzero_f: bool,
    /// Load samples from a generated dataset instead of drawing them.
    pub data_dir: Option<PathBuf>,
    /// Where checkpoints and the metrics CSV go.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            family: PdeKind::Poisson,
            epochs: 300,
            lr0: 1e-3,
            lr_decay: 0.1,
            decay_every: 50,
            batch_size: 8,
            dataset_size: 2000,
            grid_n: 257,
            unroll: 3,
            loss: LossKind::Residual,
            seed: 0,
            depth: DEFAULT_DEPTH,
            channels: DEFAULT_CHANNELS,
            pre_smooth: 2,
            post_smooth: 2,
            val_fraction: 0.1,
            val_max_iters: 64,
            val_tol: 1e-4,
            val_every: 1,
            nonzero_f: false,
            data_dir: None,
            out_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "family",
        "epochs",
        "lr0",
        "lr_decay",
        "decay_every",
        "batch_size",
        "dataset_size",
        "grid_n",
        "unroll",
        "loss",
        "seed",
        "depth",
        "channels",
        "pre_smooth",
        "post_smooth",
        "val_fraction",
        "val_max_iters",
        "val_tol",
        "val_every",
        "nonzero_f",
        "data_dir",
        "out_dir",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "family" => self.family = v.parse()?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr0" => self.lr0 = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "decay_every" => self.decay_every = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "dataset_size" => self.dataset_size = parse(key, v)?,
            "grid_n" => self.grid_n = parse(key, v)?,
            "unroll" => self.unroll = parse(key, v)?,
            "loss" => self.loss = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "pre_smooth" => self.pre_smooth = parse(key, v)?,
            "post_smooth" => self.post_smooth = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "val_max_iters" => self.val_max_iters = parse(key, v)?,
            "val_tol" => self.val_tol = parse(key, v)?,
            "val_every" => self.val_every = parse(key, v)?,
            "nonzero_f" => self.nonzero_f = parse(key, v)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown training key '{other}'"))),
        }
        Ok(())
    }

    /// Applies flat `key = value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let _ = writeln!(s, "family = {}", self.family);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "lr0 = {:e}", self.lr0);
        let _ = writeln!(s, "lr_decay = {}", self.lr_decay);
        let _ = writeln!(s, "decay_every = {}", self.decay_every);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "dataset_size = {}", self.dataset_size);
        let _ = writeln!(s, "grid_n = {}", self.grid_n);
        let _ = writeln!(s, "unroll = {}", self.unroll);
        let _ = writeln!(s, "loss = {}", self.loss);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "pre_smooth = {}", self.pre_smooth);
        let _ = writeln!(s, "post_smooth = {}", self.post_smooth);
        let _ = writeln!(s, "val_fraction = {}", self.val_fraction);
        let _ = writeln!(s, "val_max_iters = {}", self.val_max_iters);
        let _ = writeln!(s, "val_tol = {:e}", self.val_tol);
        let _ = writeln!(s, "val_every = {}", self.val_every);
        let _ = writeln!(s, "nonzero_f = {}", self.nonzero_f);
        if self.data_dir.is_some() {
            let _ = writeln!(s, "data_dir = {}", opt(&self.data_dir));
        }
        if self.out_dir.is_some() {
            let _ = writeln!(s, "out_dir = {}", opt(&self.out_dir));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("decay_every", self.decay_every),
            ("batch_size", self.batch_size),
            ("dataset_size", self.dataset_size),
            ("unroll", self.unroll),
            ("depth", self.depth),
            ("channels", self.channels),
            ("val_max_iters", self.val_max_iters),
            ("val_every", self.val_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        if !(self.val_tol.is_finite() && self.val_tol > 0.0) {
            return Err(Error::Config("val_tol must be positive".into()));
        }
        if self.data_dir.is_none() && !is_valid_side(self.grid_n) {
            return Err(Error::InvalidSize(self.grid_n));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            pre_smooth: self.pre_smooth,
            post_smooth: self.post_smooth,
            tol: self.val_tol,
            max_iters: self.val_max_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean training objective over the epoch's batches.
    pub train_loss: f64,
    pub val_rel_residual: Option<f64>,
    pub lr: f64,
    pub train_residual_loss: f64,
    /// Logged when training against reference solutions.
    pub train_legacy_loss: Option<f64>,
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: UGridParams,
    /// Mean training objective of the initial weights.
    pub initial_loss: f64,
    pub metrics: Vec<EpochMetrics>,
    pub train_count: usize,
    pub val_count: usize,
}

#[derive(Serialize)]
struct NanDump<'a> {
    seed: u64,
    epoch: usize,
    batch: usize,
    sample_indices: &'a [usize],
    lr: f64,
}

/// Validation metric: mean final relative residual of full solves.
pub fn validation_error(problems: &[PdeProblem], params: &UGridParams, cfg: &SolveConfig) -> Result<f64> {
    if problems.is_empty() {
        return Ok(f64::NAN);
    }
    let errs = problems
        .par_iter()
        .map(|p| {
            let (_, rep) = solve(p, params, cfg, None)?;
            Ok(if rep.terminated == Termination::Diverged {
                f64::INFINITY
            } else {
                rep.final_error
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn load_samples(cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let mut samples = match &cfg.data_dir {
        Some(dir) => {
            let (manifest, samples) = load_dataset(dir)?;
            if manifest.family != cfg.family {
                return Err(Error::Config(format!(
                    "dataset holds {} problems but family = {}",
                    manifest.family, cfg.family
                )));
            }
            samples
        }
        None => generate_dataset(cfg.family, cfg.grid_n, cfg.dataset_size, cfg.seed)?,
    };
    if cfg.nonzero_f {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f00d);
        for s in &mut samples {
            let c = rand::Rng::random_range(&mut rng, -1.0..=1.0);
            s.f = GridField::filled(s.mask.n(), c)?;
        }
    }
    Ok(samples)
}

/// Trains a network from scratch according to `cfg`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = load_samples(cfg)?;
    let problems = samples.iter().map(Sample::to_problem).collect::<Result<Vec<_>>>()?;
    let val_count = ((problems.len() as f64) * cfg.val_fraction).round() as usize;
    let train_count = problems.len() - val_count;
    if train_count == 0 {
        return Err(Error::Config("no training samples left after the validation split".into()));
    }
    let (train_set, val_set) = problems.split_at(train_count);
    let solve_cfg = cfg.solve_config();

    let references = match cfg.loss {
        LossKind::Residual => None,
        LossKind::Legacy => Some(
            train_set
                .par_iter()
                .map(|p| {
                    let h = MgHierarchy::build(p, None);
                    let (u, rep) = mg_solve_with(
                        p,
                        &h,
                        &SolveConfig {
                            tol: REFERENCE_TOL,
                            max_iters: 500,
                            ..solve_cfg
                        },
                    )?;
                    if rep.terminated != Termination::Converged {
                        return Err(Error::Config(format!(
                            "reference solve stopped at {:.3e} ({})",
                            rep.final_error, rep.terminated
                        )));
                    }
                    Ok(u)
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let objective = |i: usize| match &references {
        None => Objective::Residual,
        Some(refs) => Objective::Legacy(&refs[i]),
    };

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("train.cfg"), cfg.to_kv())?;
    }

    let mut params = init_params(cfg.depth, cfg.channels, cfg.seed);
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());

    let initial_loss = train_set
        .par_iter()
        .enumerate()
        .map(|(i, p)| unrolled_loss(p, &params, &solve_cfg, cfg.unroll, objective(i)))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum::<f64>()
        / train_count as f64;

    let mut order: Vec<usize> = (0..train_count).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let (mut loss_sum, mut res_sum) = (0.0, 0.0);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let outs = idx
                .par_iter()
                .map(|&i| unrolled_loss_grad(&train_set[i], &params, &solve_cfg, cfg.unroll, objective(i)))
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / idx.len() as f64;
            let mut grad = vec![0.0; flat.len()];
            let mut batch_loss = 0.0;
            for o in &outs {
                batch_loss += o.loss;
                res_sum += o.residual_loss;
                for (a, g) in grad.iter_mut().zip(&o.grad) {
                    *a += g * scale;
                }
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                if let Some(dir) = &cfg.out_dir {
                    let dump = NanDump {
                        seed: cfg.seed,
                        epoch: epoch + 1,
                        batch,
                        sample_indices: idx,
                        lr,
                    };
                    fs::write(dir.join("nan_dump.json"), serde_json::to_vec_pretty(&dump)?)?;
                    let meta = CheckpointMeta {
                        family: Some(cfg.family.to_string()),
                        epoch: Some(epoch),
                        note: Some("state before non-finite loss".into()),
                    };
                    save_checkpoint(dir.join("nan_state.ugck"), &params, &meta)?;
                }
                return Err(Error::NanLoss {
                    epoch: epoch + 1,
                    batch,
                    seed: cfg.seed,
                });
            }
            loss_sum += batch_loss;
            adam_step(&mut flat, &grad, &mut adam, lr);
            params.assign_flat(&flat)?;
        }

        let last = epoch + 1 == cfg.epochs;
        let val_rel_residual = if !val_set.is_empty() && ((epoch + 1) % cfg.val_every == 0 || last) {
            Some(validation_error(val_set, &params, &solve_cfg)?)
        } else {
            None
        };
        let train_loss = loss_sum / train_count as f64;
        let row = EpochMetrics {
            epoch: epoch + 1,
            train_loss,
            val_rel_residual,
            lr,
            train_residual_loss: res_sum / train_count as f64,
            train_legacy_loss: references.as_ref().map(|_| train_loss),
        };
        metrics.push(row);

        if let Some(dir) = &cfg.out_dir {
            let meta = CheckpointMeta {
                family: Some(cfg.family.to_string()),
                epoch: Some(epoch + 1),
                note: None,
            };
            save_checkpoint(dir.join(format!("epoch_{:04}.ugck", epoch + 1)), &params, &meta)?;
            if last {
                save_checkpoint(dir.join("final.ugck"), &params, &meta)?;
            }
            write_metrics_csv(dir.join("metrics.csv"), &metrics)?;
        }
    }

    Ok(TrainOutcome {
        params,
        initial_loss,
        metrics,
        train_count,
        val_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            dataset_size: 64,
            grid_n: 33,
            depth: 2,
            channels: 2,
            batch_size: 8,
            val_fraction: 0.0,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(49), 1e-3);
        assert!((cfg.lr_at(50) - 1e-4).abs() < 1e-18);
        assert!((cfg.lr_at(120) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn kv_round_trip_and_errors() {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv("# comment\nepochs = 7\nfamily = helmholtz # trailing\nloss=legacy\nout_dir = /tmp/x\n")
            .unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.family, PdeKind::Helmholtz);
        assert_eq!(cfg.loss, LossKind::Legacy);
        let mut back = TrainConfig::default();
        back.apply_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::default().apply_kv("bogus = 1").is_err());
        assert!(TrainConfig::default().apply_kv("epochs").is_err());
        assert!(TrainConfig::default().apply_kv("epochs = -1").is_err());
        for (k, v) in [("epochs", "0"), ("lr0", "0"), ("batch_size", "0"), ("grid_n", "10")] {
            let mut c = TrainConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}");
        }
    }

    #[test]
    fn smoke_training_reduces_loss() {
        let out = train(&smoke_config()).unwrap();
        let mut losses = vec![out.initial_loss];
        losses.extend(out.metrics.iter().map(|m| m.train_loss));
        let drops = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(drops >= 4, "losses {losses:?}");
        assert!(out.params.is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 2,
            dataset_size: 12,
            grid_n: 17,
            batch_size: 4,
            val_fraction: 0.25,
            ..smoke_config()
        };
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!((a.train_count, a.val_count), (9, 3));
        assert!(a.metrics.iter().all(|m| m.val_rel_residual.is_some()));
    }

    #[test]
    fn legacy_ablation_logs_both_losses() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            dataset_size: 8,
            grid_n: 17,
            batch_size: 4,
            loss: LossKind::Legacy,
            val_fraction: 0.0,
            out_dir: Some(dir.path().to_path_buf()),
            ..smoke_config()
        };
        let out = train(&cfg).unwrap();
        for m in &out.metrics {
            assert!(m.train_legacy_loss.is_some());
            assert!(m.train_residual_loss > 0.0);
        }
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(csv.starts_with("epoch,train_loss,val_rel_residual,lr,train_residual_loss,train_legacy_loss"));
        assert!(dir.path().join("epoch_0002.ugck").exists());
        assert!(dir.path().join("final.ugck").exists());
    }

    #[test]
    fn divergent_training_aborts_with_dump() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            dataset_size: 8,
            grid_n: 17,
            batch_size: 4,
            lr0: 1e300,
            val_fraction: 0.0,
            out_dir: Some(dir.path().to_path_buf()),
            ..smoke_config()
        };
        match train(&cfg) {
            Err(Error::NanLoss { seed, .. }) => assert_eq!(seed, cfg.seed),
            other => panic!("expected NanLoss, got {other:?}"),
        }
        assert!(dir.path().join("nan_dump.json").exists());
    }
}
