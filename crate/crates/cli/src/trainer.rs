//! Desk-scale training loop: AdamW with warm-up + cosine decay, plain-text
//! and CSV logs, checkpoints at the end and on best accuracy, and a NaN
//! abort that names the first offending tensor.
//!
//! Two accuracy measures are tracked:
//! - train accuracy: rolling accuracy of the training-mode logits over the
//!   most recent full pass of batches (the usual running measure);
//! - eval accuracy: full-set accuracy in eval mode, where batch norm uses
//!   running statistics. Early in training this lags the rolling measure by
//!   however long those statistics take to settle.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use dhvt_core::adamw::{AdamW, AdamWConfig};
use dhvt_core::init::seeded_rng;
use dhvt_core::model::{build_model, model_forward, ForwardOpts};
use dhvt_core::params::ParamStore;
use dhvt_core::tape::{Mode, Tape};
use dhvt_core::tensor::{Dtype, Element, Tensor};

use crate::checkpoint::save_checkpoint;
use crate::data::Dataset;
use crate::error::{CliError, Result};
use crate::run_config::RunConfig;
use crate::schedule::Schedule;

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps_done: usize,
    pub mean_loss: f64,
    /// Rolling training-mode accuracy over the last full pass.
    pub train_accuracy: f64,
    /// Full-set accuracy in eval mode.
    pub eval_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// First step at which the rolling train accuracy reached the target.
    pub steps_to_target: Option<usize>,
    /// First step at which the eval-mode accuracy reached the target.
    pub steps_to_target_eval: Option<usize>,
    pub final_train_accuracy: f64,
    pub final_eval_accuracy: f64,
    pub best_eval_accuracy: f64,
    pub checkpoint_final: PathBuf,
    pub log_txt: PathBuf,
    pub log_csv: PathBuf,
}

/// Run one training job, dispatching on the configured dtype.
pub fn train(rc: &RunConfig) -> Result<TrainOutcome> {
    match rc.dtype {
        Dtype::F32 => train_typed::<f32>(rc),
        Dtype::F64 => train_typed::<f64>(rc),
    }
}

/// Rolling (correct, total) counts over a bounded window of batches.
struct RollingAccuracy {
    window: usize,
    entries: VecDeque<(usize, usize)>,
    correct: usize,
    total: usize,
}

impl RollingAccuracy {
    fn new(window: usize) -> Self {
        RollingAccuracy {
            window: window.max(1),
            entries: VecDeque::new(),
            correct: 0,
            total: 0,
        }
    }

    fn push(&mut self, correct: usize, total: usize) {
        self.entries.push_back((correct, total));
        self.correct += correct;
        self.total += total;
        if self.entries.len() > self.window {
            let (c, t) = self.entries.pop_front().expect("non-empty");
            self.correct -= c;
            self.total -= t;
        }
    }

    fn full(&self) -> bool {
        self.entries.len() == self.window
    }

    fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

fn train_typed<E: Element>(rc: &RunConfig) -> Result<TrainOutcome> {
    rc.validate()?;
    rc.model.validate().map_err(CliError::Core)?;
    let data = rc.data.load(crate::data::Split::Train)?;
    if data.is_empty() {
        return Err(CliError::Data("training dataset is empty".into()));
    }
    if data.num_classes > rc.model.num_classes {
        return Err(CliError::Config(format!(
            "dataset has {} classes but the model head has {}",
            data.num_classes, rc.model.num_classes
        )));
    }
    std::fs::create_dir_all(&rc.out_dir).map_err(|e| CliError::io(&rc.out_dir, e))?;

    let mut store: ParamStore<E> = build_model(&rc.model, rc.seed).map_err(CliError::Core)?;
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: rc.weight_decay,
        ..Default::default()
    });
    let steps_per_epoch = data.len().div_ceil(rc.batch_size);
    let planned = rc.epochs * steps_per_epoch;
    let total_steps = match rc.max_steps {
        Some(m) if planned == 0 => m,
        Some(m) => planned.min(m),
        None => planned,
    };
    let schedule = Schedule {
        base_lr: rc.base_lr,
        warmup_steps: rc.warmup_epochs * steps_per_epoch,
        total_steps,
    };
    let mut rng = seeded_rng(rc.seed ^ 0x5eed);
    let mut rolling = RollingAccuracy::new(steps_per_epoch);

    let mut log = Vec::new();
    let mut txt = String::new();
    let mut csv = String::from("epoch,steps,mean_loss,train_accuracy,eval_accuracy,lr\n");
    let mut step = 0usize;
    let mut steps_to_target = None;
    let mut steps_to_target_eval = None;
    let mut best_eval = 0.0f64;
    let mut last_eval = 0.0f64;
    let target = rc.stop_at_train_accuracy;
    let ckpt_final = rc.out_dir.join("checkpoint_final.dhvt");
    let ckpt_best = rc.out_dir.join("checkpoint_best.dhvt");

    let done = |rolling_hit: &Option<usize>, eval_hit: &Option<usize>| -> bool {
        target.is_some() && rolling_hit.is_some() && eval_hit.is_some()
    };

    let mut indices: Vec<usize> = (0..data.len()).collect();
    'outer: for epoch in 0.. {
        if step >= total_steps {
            break;
        }
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in indices.chunks(rc.batch_size) {
            if step >= total_steps {
                break;
            }
            let lr = schedule.lr_at(step);
            let (images, labels) = batch_with_augment::<E>(&data, chunk, rc, &mut rng);
            let mut tape = Tape::new();
            tape.set_finite_checks(false);
            let out = model_forward(
                &mut store,
                &rc.model,
                &images,
                Mode::Train,
                &mut tape,
                &ForwardOpts {
                    capture_attention: false,
                    dropout_seed: rc.seed ^ step as u64,
                },
            )
            .map_err(CliError::Core)?;
            let correct = count_correct(tape.data(out.logits), &labels, rc.model.num_classes);
            let loss = tape
                .cross_entropy(out.logits, &labels)
                .map_err(CliError::Core)?;
            let loss_val = tape.data(loss)[0].as_f64();
            if !loss_val.is_finite() {
                let culprit = tape
                    .first_non_finite()
                    .map(|(name, i)| format!("{name} (flat index {i})"))
                    .unwrap_or_else(|| "loss".into());
                return Err(CliError::Diverged(format!(
                    "non-finite loss at step {step}; first non-finite tensor: {culprit}"
                )));
            }
            tape.backward(loss).map_err(CliError::Core)?;
            store.absorb_grads(&tape, &out.bound);
            opt.step(&mut store, lr);
            rolling.push(correct, labels.len());
            epoch_loss += loss_val;
            epoch_batches += 1;
            step += 1;

            if let Some(t) = target {
                if rolling.full() && rolling.value() >= t && steps_to_target.is_none() {
                    steps_to_target = Some(step);
                }
                if let Some(every) = rc.eval_every_steps {
                    if step.is_multiple_of(every) && steps_to_target_eval.is_none() {
                        let acc = evaluate_accuracy::<E>(&mut store, rc, &data)?;
                        last_eval = acc;
                        if acc > best_eval {
                            best_eval = acc;
                            save_checkpoint(&store, &rc.model, &ckpt_best)?;
                        }
                        if acc >= t {
                            steps_to_target_eval = Some(step);
                        }
                    }
                }
                if done(&steps_to_target, &steps_to_target_eval) {
                    break 'outer;
                }
            }
        }
        let eval_acc = evaluate_accuracy::<E>(&mut store, rc, &data)?;
        last_eval = eval_acc;
        if eval_acc > best_eval {
            best_eval = eval_acc;
            save_checkpoint(&store, &rc.model, &ckpt_best)?;
        }
        if let Some(t) = target {
            if eval_acc >= t && steps_to_target_eval.is_none() {
                steps_to_target_eval = Some(step);
            }
        }
        let mean_loss = epoch_loss / epoch_batches.max(1) as f64;
        let entry = EpochLog {
            epoch,
            steps_done: step,
            mean_loss,
            train_accuracy: rolling.value(),
            eval_accuracy: eval_acc,
            lr: schedule.lr_at(step.saturating_sub(1)),
        };
        let _ = writeln!(
            txt,
            "epoch {:>4}  steps {:>6}  loss {:.6}  train_acc {:.4}  eval_acc {:.4}  lr {:.3e}",
            entry.epoch,
            entry.steps_done,
            entry.mean_loss,
            entry.train_accuracy,
            entry.eval_accuracy,
            entry.lr
        );
        let _ = writeln!(
            csv,
            "{},{},{:.9},{:.6},{:.6},{:.9e}",
            entry.epoch,
            entry.steps_done,
            entry.mean_loss,
            entry.train_accuracy,
            entry.eval_accuracy,
            entry.lr
        );
        log.push(entry);
        if done(&steps_to_target, &steps_to_target_eval) {
            break;
        }
    }

    save_checkpoint(&store, &rc.model, &ckpt_final)?;
    let log_txt = rc.out_dir.join("train_log.txt");
    let log_csv = rc.out_dir.join("train_log.csv");
    std::fs::write(&log_txt, txt).map_err(|e| CliError::io(&log_txt, e))?;
    std::fs::write(&log_csv, csv).map_err(|e| CliError::io(&log_csv, e))?;
    Ok(TrainOutcome {
        log,
        steps_to_target,
        steps_to_target_eval,
        final_train_accuracy: rolling.value(),
        final_eval_accuracy: last_eval,
        best_eval_accuracy: best_eval,
        checkpoint_final: ckpt_final,
        log_txt,
        log_csv,
    })
}

fn count_correct<E: Element>(logits: &[E], labels: &[usize], k: usize) -> usize {
    let mut correct = 0;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * k..(b + 1) * k];
        let mut arg = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[arg] {
                arg = j;
            }
        }
        if arg == label {
            correct += 1;
        }
    }
    correct
}

fn batch_with_augment<E: Element>(
    data: &Dataset,
    indices: &[usize],
    rc: &RunConfig,
    rng: &mut ChaCha12Rng,
) -> (Tensor<E>, Vec<usize>) {
    let (mut images, labels) = data.batch::<E>(indices);
    if !rc.augment.hflip && !rc.augment.crop_pad4 {
        return (images, labels);
    }
    let s = data.image_size;
    let plane = s * s;
    let per_image = 3 * plane;
    let buf = images.data_mut();
    for i in 0..indices.len() {
        let img = &mut buf[i * per_image..(i + 1) * per_image];
        if rc.augment.hflip && rng.random_range(0.0..1.0) < 0.5 {
            for c in 0..3 {
                for y in 0..s {
                    let row = &mut img[c * plane + y * s..c * plane + (y + 1) * s];
                    row.reverse();
                }
            }
        }
        if rc.augment.crop_pad4 {
            let dy = rng.random_range(0..9) as isize - 4;
            let dx = rng.random_range(0..9) as isize - 4;
            if dy != 0 || dx != 0 {
                let orig = img.to_vec();
                for c in 0..3 {
                    for y in 0..s {
                        for x in 0..s {
                            let sy = y as isize + dy;
                            let sx = x as isize + dx;
                            img[c * plane + y * s + x] =
                                if sy >= 0 && sx >= 0 && (sy as usize) < s && (sx as usize) < s {
                                    orig[c * plane + sy as usize * s + sx as usize]
                                } else {
                                    E::zero()
                                };
                        }
                    }
                }
            }
        }
    }
    (images, labels)
}

/// Full-set train accuracy in eval mode.
pub fn evaluate_accuracy<E: Element>(
    store: &mut ParamStore<E>,
    rc: &RunConfig,
    data: &Dataset,
) -> Result<f64> {
    evaluate_on(store, &rc.model, data, rc.batch_size.max(16))
}

/// Accuracy of a model over a dataset, batched, eval mode.
pub fn evaluate_on<E: Element>(
    store: &mut ParamStore<E>,
    cfg: &dhvt_core::ModelConfig,
    data: &Dataset,
    batch_size: usize,
) -> Result<f64> {
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (images, labels) = data.batch::<E>(chunk);
        let mut tape = Tape::new();
        tape.set_finite_checks(false);
        let out = model_forward(
            store,
            cfg,
            &images,
            Mode::Eval,
            &mut tape,
            &ForwardOpts::default(),
        )
        .map_err(CliError::Core)?;
        correct += count_correct(tape.data(out.logits), &labels, cfg.num_classes);
    }
    Ok(correct as f64 / data.len() as f64)
}
