//! Finite-difference verification of the full forward/backward path.
//!
//! Runs in f64 regardless of the training dtype: central differences with
//! step 1e-6 over a uniform sample of the flattened parameter vector, against
//! the cross-entropy training loss in train mode.

use dhvt_core::init::seeded_rng;
use dhvt_core::model::{build_model, model_forward, ForwardOpts, ModelConfig};
use dhvt_core::params::ParamStore;
use dhvt_core::tape::{Mode, Tape};
use dhvt_core::tensor::Tensor;
use rand::Rng;

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub batch: usize,
    /// Test fixture: negate the analytic gradient of this tensor after the
    /// backward pass, to prove the check catches a corrupted backward.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            samples: 200,
            tolerance: 1e-4,
            seed: 0,
            batch: 2,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Offender {
    pub name: String,
    pub index: usize,
    pub rel_err: f64,
}

#[derive(Debug)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
    pub offenders: Vec<Offender>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.offenders.is_empty()
    }
}

const FD_STEP: f64 = 1e-6;
/// Relative error floor: gradients below this magnitude are compared with an
/// effectively absolute tolerance of tolerance * floor.
const REL_FLOOR: f64 = 1e-3;

pub fn run_gradcheck(cfg: &ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    cfg.validate().map_err(CliError::Core)?;
    let store: ParamStore<f64> = build_model(cfg, opts.seed).map_err(CliError::Core)?;
    let mut rng = seeded_rng(opts.seed ^ 0xfd);
    let b = opts.batch.max(1);
    let (h, w) = cfg.image_size;
    let images = Tensor::new(
        vec![b, 3, h, w],
        (0..b * 3 * h * w)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .map_err(CliError::Core)?;
    let targets: Vec<usize> = (0..b)
        .map(|_| rng.random_range(0..cfg.num_classes))
        .collect();

    let loss_of = |store: &mut ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        tape.set_finite_checks(false);
        let out = model_forward(
            store,
            cfg,
            &images,
            Mode::Train,
            &mut tape,
            &ForwardOpts::default(),
        )
        .map_err(CliError::Core)?;
        let loss = tape
            .cross_entropy(out.logits, &targets)
            .map_err(CliError::Core)?;
        Ok(tape.data(loss)[0])
    };

    // Analytic pass.
    let mut work = store.clone();
    let mut tape = Tape::new();
    tape.set_finite_checks(false);
    let out = model_forward(
        &mut work,
        cfg,
        &images,
        Mode::Train,
        &mut tape,
        &ForwardOpts::default(),
    )
    .map_err(CliError::Core)?;
    let loss = tape
        .cross_entropy(out.logits, &targets)
        .map_err(CliError::Core)?;
    tape.backward(loss).map_err(CliError::Core)?;
    work.absorb_grads(&tape, &out.bound);
    if let Some(name) = &opts.corrupt {
        let t = work.get_mut(name).map_err(CliError::Core)?;
        if let Some(g) = &mut t.grad {
            for v in g.iter_mut() {
                *v = -*v;
            }
        }
    }

    let names: Vec<(String, usize)> = work
        .iter()
        .filter(|(_, e)| e.trainable)
        .map(|(n, e)| (n.to_string(), e.tensor.numel()))
        .collect();
    let total: usize = names.iter().map(|(_, n)| n).sum();

    let mut offenders = Vec::new();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let samples = opts.samples.min(total);
    for _ in 0..samples {
        let flat = rng.random_range(0..total);
        let mut idx = flat;
        let mut chosen = None;
        for (name, n) in &names {
            if idx < *n {
                chosen = Some((name.as_str(), idx));
                break;
            }
            idx -= n;
        }
        let (name, i) = chosen.expect("flat index within total");
        let analytic = work
            .get(name)
            .map_err(CliError::Core)?
            .grad
            .as_ref()
            .map_or(0.0, |g| g[i]);
        let mut probe = store.clone();
        let orig = probe.get(name).map_err(CliError::Core)?.data()[i];
        probe.get_mut(name).map_err(CliError::Core)?.data_mut()[i] = orig + FD_STEP;
        let fp = loss_of(&mut probe)?;
        probe.get_mut(name).map_err(CliError::Core)?.data_mut()[i] = orig - FD_STEP;
        let fm = loss_of(&mut probe)?;
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > max_rel {
            max_rel = rel;
            worst = format!("{name}[{i}]");
        }
        if rel > opts.tolerance {
            offenders.push(Offender {
                name: name.to_string(),
                index: i,
                rel_err: rel,
            });
        }
    }
    offenders.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    Ok(GradcheckReport {
        checked: samples,
        max_rel_err: max_rel,
        worst,
        offenders,
        tolerance: opts.tolerance,
    })
}
