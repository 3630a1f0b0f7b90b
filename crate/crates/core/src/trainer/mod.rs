//! Adam training loop with a prompt-length curriculum.
//!
//! Every step draws `batch_size` functions and prompts of `k + 1` inputs,
//! where `k` is the current curriculum length, and minimizes the mean
//! squared error of the predictions at every input position.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelConfig, Transformer, TransformerWeights};
use crate::numkit::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::tasks::{curriculum_degrees, curriculum_length, stream, CurriculumSchedule, PromptBatch, TaskSpec};

/// Complete description of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub task: TaskSpec,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Cap on the global gradient norm; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub curriculum: CurriculumSchedule,
    /// Unlock the degree set gradually along with the length ramp.
    pub degree_curriculum: bool,
    /// Steps between validation passes; 0 disables validation.
    pub eval_every: usize,
    /// Size of the fixed validation set.
    pub eval_prompts: usize,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Where metrics and checkpoints go; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            task: TaskSpec::default(),
            steps: 20_000,
            batch_size: 64,
            optimizer: AdamConfig::default(),
            clip_norm: Some(1.0),
            curriculum: CurriculumSchedule::default(),
            degree_curriculum: false,
            eval_every: 1_000,
            eval_prompts: 64,
            checkpoint_every: 5_000,
            seed: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.model.validate()?;
        self.task.validate()?;
        self.curriculum.validate()?;
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad(format!("invalid optimizer settings {o:?}"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        let tokens = 2 * (self.curriculum.max_len + 1) - 1;
        if tokens > self.model.max_seq_len {
            return bad(format!(
                "curriculum reaches {tokens} tokens but the model covers only {}",
                self.model.max_seq_len
            ));
        }
        if self.eval_every > 0 && self.eval_prompts == 0 {
            return bad("eval_prompts must be positive when validation is enabled".into());
        }
        Ok(())
    }
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// 0-based index of the step that produced `loss`.
    pub step: usize,
    pub loss: f64,
    pub curriculum_len: usize,
    pub wallclock_s: f64,
}

/// One line of `validation.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    /// Number of completed steps when the pass ran.
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy)]
pub enum TrainEvent<'a> {
    Step(&'a MetricRow),
    Validation(&'a ValidationRow),
    Checkpoint(&'a Path),
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub model: Transformer<T>,
    pub metrics: Vec<MetricRow>,
    pub validation: Vec<ValidationRow>,
    pub final_checkpoint: Option<PathBuf>,
}

struct Sinks {
    dir: PathBuf,
    metrics: csv::Writer<File>,
    validation: csv::Writer<File>,
}

/// Stepwise driver; [`train`] runs it to completion.
pub struct Trainer<T: Scalar> {
    cfg: RunConfig,
    model: Transformer<T>,
    adam: AdamState<T>,
    step: usize,
    started: Instant,
    metrics: Vec<MetricRow>,
    validation: Vec<ValidationRow>,
    validation_set: Vec<PromptBatch>,
    sinks: Option<Sinks>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Transformer::init(cfg.model.clone(), &mut stream(cfg.seed, "init", 0))?;
        let tensors: Vec<_> = model.weights.tensors().into_iter().cloned().collect();
        let adam = AdamState::new(cfg.optimizer, &tensors);
        let validation_set = if cfg.eval_every > 0 {
            let mut rng = stream(cfg.seed, "validation", 0);
            let len = cfg.curriculum.max_len + 1;
            (0..cfg.eval_prompts)
                .map(|_| cfg.task.sample_prompt(&cfg.task.degrees, len, &mut rng))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let sinks = cfg.out_dir.as_deref().map(open_sinks).transpose()?;
        Ok(Self {
            cfg,
            model,
            adam,
            step: 0,
            started: Instant::now(),
            metrics: Vec::new(),
            validation: Vec::new(),
            validation_set,
            sinks,
        })
    }

    pub fn model(&self) -> &Transformer<T> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Transformer<T> {
        &mut self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Prompts used at `step`; a pure function of the seed and step index.
    pub fn batch(&self, step: usize) -> Result<Vec<PromptBatch>> {
        batch_for(&self.cfg, step)
    }

    /// Runs one optimizer step.
    ///
    /// A non-finite loss or gradient aborts with the pre-step weights saved
    /// as a diagnostic checkpoint when an output directory is configured.
    pub fn step(&mut self) -> Result<MetricRow> {
        let step = self.step;
        let prompts = self.batch(step)?;
        let (loss, grads) = self.model.loss_and_gradients(&prompts)?;
        let mut grads = grads.into_tensors();
        let norm = match self.cfg.clip_norm {
            Some(c) => clip_global_norm(&mut grads, T::of(c)),
            None => grads.iter().map(|g| g.frobenius_sq()).sum::<T>().sqrt(),
        };
        if !loss.is_finite() || !norm.is_finite() {
            let what = format!("training step {step} (loss {loss}, gradient norm {norm})");
            return Err(match self.save_diagnostic(step) {
                Ok(Some(path)) => Error::NonFinite(format!("{what}; diagnostic checkpoint at {}", path.display())),
                Ok(None) => Error::NonFinite(what),
                Err(e) => Error::NonFinite(format!("{what}; diagnostic checkpoint failed: {e}")),
            });
        }
        let config = self.model.config.clone();
        let weights = std::mem::replace(&mut self.model.weights, TransformerWeights::zeros(&config)?);
        let mut params = weights.into_tensors();
        adam_step(&mut params, &grads, &mut self.adam)?;
        self.model.weights = TransformerWeights::from_tensors(&config, params)?;
        self.step += 1;

        let row = MetricRow {
            step,
            loss: loss.as_f64(),
            curriculum_len: curriculum_length(step, self.cfg.steps, &self.cfg.curriculum),
            wallclock_s: self.started.elapsed().as_secs_f64(),
        };
        if let Some(s) = &mut self.sinks {
            s.metrics.serialize(row)?;
        }
        self.metrics.push(row);
        Ok(row)
    }

    /// Mean squared error of the current model on the fixed validation set.
    pub fn validation_loss(&self) -> Result<f64> {
        if self.validation_set.is_empty() {
            return Err(Error::InvalidConfig("validation is disabled".into()));
        }
        let preds = self.model.predict_batch(&self.validation_set)?;
        let mut total = 0.0;
        let mut count = 0usize;
        for (p, pr) in self.validation_set.iter().zip(&preds) {
            for (y, yh) in p.targets.iter().zip(pr) {
                total += (yh.as_f64() - y).powi(2);
                count += 1;
            }
        }
        Ok(total / count as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            seed: self.cfg.seed,
            step: self.step as u64,
        }
    }

    /// Runs the remaining steps, reporting progress to `observer`.
    pub fn run(mut self, mut observer: impl FnMut(TrainEvent<'_>)) -> Result<TrainOutcome<T>> {
        while self.step < self.cfg.steps {
            let row = self.step()?;
            observer(TrainEvent::Step(&row));
            let done = self.step;
            if self.cfg.eval_every > 0 && (done.is_multiple_of(self.cfg.eval_every) || done == self.cfg.steps) {
                let v = ValidationRow {
                    step: done,
                    loss: self.validation_loss()?,
                };
                if let Some(s) = &mut self.sinks {
                    s.validation.serialize(v)?;
                    s.validation.flush()?;
                    s.metrics.flush()?;
                }
                self.validation.push(v);
                observer(TrainEvent::Validation(&v));
            }
            if self.cfg.checkpoint_every > 0 && done.is_multiple_of(self.cfg.checkpoint_every) && done < self.cfg.steps {
                if let Some(path) = self.save_named(&format!("step-{done:06}.ckpt"))? {
                    observer(TrainEvent::Checkpoint(&path));
                }
            }
        }
        let final_checkpoint = self.save_named("final.ckpt")?;
        if let Some(path) = &final_checkpoint {
            observer(TrainEvent::Checkpoint(path));
        }
        if let Some(s) = &mut self.sinks {
            s.metrics.flush()?;
            s.validation.flush()?;
        }
        Ok(TrainOutcome {
            model: self.model,
            metrics: self.metrics,
            validation: self.validation,
            final_checkpoint,
        })
    }

    fn save_named(&self, name: &str) -> Result<Option<PathBuf>> {
        let Some(s) = &self.sinks else {
            return Ok(None);
        };
        let path = s.dir.join("checkpoints").join(name);
        self.checkpoint().save(&path)?;
        Ok(Some(path))
    }

    fn save_diagnostic(&self, step: usize) -> Result<Option<PathBuf>> {
        self.save_named(&format!("diverged-step-{step:06}.ckpt"))
    }
}

fn open_sinks(dir: &Path) -> Result<Sinks> {
    fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))?;
    // headers are written up front so an aborted run still leaves valid files
    let open = |name: &str, header: &[&str]| -> Result<csv::Writer<File>> {
        let path = dir.join(name);
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| Error::from(e).context(format!("creating {}", path.display())))?;
        w.write_record(header)?;
        Ok(w)
    };
    Ok(Sinks {
        dir: dir.to_path_buf(),
        metrics: open("metrics.csv", &["step", "loss", "curriculum_len", "wallclock_s"])?,
        validation: open("validation.csv", &["step", "loss"])?,
    })
}

/// Training prompts for `step` of the run described by `cfg`.
pub fn batch_for(cfg: &RunConfig, step: usize) -> Result<Vec<PromptBatch>> {
    let k = curriculum_length(step, cfg.steps, &cfg.curriculum);
    let degrees = if cfg.degree_curriculum {
        curriculum_degrees(step, cfg.steps, &cfg.curriculum, &cfg.task.degrees)
    } else {
        cfg.task.degrees.clone()
    };
    let mut rng = stream(cfg.seed, "train-batch", step as u64);
    (0..cfg.batch_size).map(|_| cfg.task.sample_prompt(&degrees, k + 1, &mut rng)).collect()
}

/// Trains a model to completion with no progress reporting.
pub fn train<T: Scalar>(cfg: RunConfig) -> Result<TrainOutcome<T>> {
    Trainer::new(cfg)?.run(|_| {})
}

/// Contents of `run.json`, written once a run has finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scalar: String,
    pub config: RunConfig,
}

/// Loads the finished run in `cfg.out_dir` if its `run.json` records the
/// same configuration and scalar type; otherwise trains from scratch and
/// writes `run.json` on success. The flag is true when the run was reused.
pub fn train_or_reuse<T: Scalar>(cfg: RunConfig, observer: impl FnMut(TrainEvent<'_>)) -> Result<(Checkpoint<T>, bool)> {
    let Some(dir) = cfg.out_dir.clone() else {
        return Err(Error::InvalidConfig("train_or_reuse needs an output directory".into()));
    };
    let record = RunRecord {
        scalar: T::NAME.to_string(),
        config: cfg.clone(),
    };
    let record_path = dir.join("run.json");
    let final_path = dir.join("checkpoints").join("final.ckpt");
    if let Ok(text) = fs::read_to_string(&record_path) {
        if serde_json::from_str::<RunRecord>(&text).ok().as_ref() == Some(&record) {
            if let Ok(ck) = Checkpoint::load(&final_path) {
                return Ok((ck, true));
            }
        }
    }
    let _ = fs::remove_file(&record_path);
    let out = Trainer::<T>::new(cfg)?.run(observer)?;
    fs::write(&record_path, serde_json::to_string_pretty(&record)?)?;
    Ok((
        Checkpoint {
            model: out.model,
            seed: record.config.seed,
            step: record.config.steps as u64,
        },
        false,
    ))
}

/// Trailing mean of the training loss over `window` steps, one value per step.
pub fn smoothed_loss(metrics: &[MetricRow], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(metrics.len());
    let mut sum = 0.0;
    for (i, m) in metrics.iter().enumerate() {
        sum += m.loss;
        if i >= window {
            sum -= metrics[i - window].loss;
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
