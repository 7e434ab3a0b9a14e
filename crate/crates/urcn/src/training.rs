//! Losses, ADAM optimization, the training loop, and checkpoint files.
//!
//! The training loss is the batch mean of per-sample squared L2 errors;
//! ista-family networks add the transform-symmetry penalty with weight
//! gamma. One trainer owns the network's parameter store exclusively;
//! gradients from a batch accumulate sequentially and are averaged before
//! the ADAM step.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParameterStore, Tape};
use crate::container::DatasetContainer;
use crate::error::{Error, Result};
use crate::nets::{build_network, Family, LearningState, NetworkConfig, UnrolledNetwork};
use crate::operators::LinearOperator;
use crate::simulation::sample_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    /// Eq.-style combined loss: mse + gamma * symmetry (ista networks).
    MsePlusSymmetry,
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub kind: LossKind,
    pub gamma: f64,
    /// Stage count entering the symmetry sum.
    pub np: usize,
}

impl LossConfig {
    pub fn mse() -> Self {
        LossConfig {
            kind: LossKind::Mse,
            gamma: 0.0,
            np: 0,
        }
    }

    /// Defaults for ista networks: gamma = 0.01, Np = 10.
    pub fn mse_plus_symmetry() -> Self {
        LossConfig {
            kind: LossKind::MsePlusSymmetry,
            gamma: 0.01,
            np: 10,
        }
    }

    /// The loss family matching a network: combined for ista, plain
    /// mse otherwise.
    pub fn for_network(net: &UnrolledNetwork) -> Self {
        if net.family() == Family::Ista {
            let mut cfg = Self::mse_plus_symmetry();
            cfg.np = cfg.np.min(net.n_stages());
            cfg
        } else {
            Self::mse()
        }
    }
}

/// Squared L2 distance between one output and its reference (the batch
/// mean over samples is taken by the caller).
pub fn mse_loss(output: &Tensor, reference: &Tensor) -> Result<f64> {
    if output.shape != reference.shape {
        return Err(Error::Shape(format!(
            "mse shapes differ: {:?} vs {:?}",
            output.shape, reference.shape
        )));
    }
    Ok(output
        .data
        .iter()
        .zip(reference.data.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Tape node for the per-sample squared L2 loss.
pub fn mse_loss_node(tape: &mut Tape, output: NodeId, reference: &Tensor) -> Result<NodeId> {
    let r = tape.leaf(reference.clone_value());
    let diff = tape.sub(output, r)?;
    Ok(tape.sum_squares(diff))
}

/// Tape node for sum_k ||G_tilde^k(G^k(m_hat)) - m_hat||^2 over the first
/// `np` stages of an ista network.
pub fn symmetry_loss_node(
    net: &UnrolledNetwork,
    tape: &mut Tape,
    m_hat: NodeId,
    np: usize,
) -> Result<NodeId> {
    if net.family() != Family::Ista {
        return Err(Error::Argument(format!(
            "symmetry loss applies to ista networks, not {}",
            net.family()
        )));
    }
    let stages = np.min(net.n_stages());
    let mut acc = tape.leaf(Tensor::scalar(0.0));
    for k in 0..stages {
        let g = net.apply_block(tape, k, crate::nets::BlockKind::G, m_hat)?;
        let gg = net.apply_block(tape, k, crate::nets::BlockKind::GTilde, g)?;
        let diff = tape.sub(gg, m_hat)?;
        let s = tape.sum_squares(diff);
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

/// Evaluation-only symmetry loss for a fixed reconstruction.
pub fn symmetry_loss(net: &UnrolledNetwork, m_hat: &Tensor, np: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let node = tape.leaf(m_hat.clone_value());
    let loss = symmetry_loss_node(net, &mut tape, node, np)?;
    tape.value(loss).scalar_value()
}

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected ADAM moments, shaped to match the parameter store.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, store: &ParameterStore) -> Self {
        let m = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        let v = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        AdamState {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    /// One ADAM update over every parameter; gradients are cleared after.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        for (_, p) in store.iter() {
            if !p.grad_seen {
                return Err(Error::Consistency(format!(
                    "parameter {} has no gradient; run backward before adam_step",
                    p.name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (id, p) in store.iter_mut() {
            let grad = p.value.grad.as_ref().expect("grad allocated");
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.value.data[i] -= self.cfg.lr * mh / (vh.sqrt() + self.cfg.epsilon);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// One training example: its encoding operator, measurement, reference.
pub struct TrainSample {
    pub op: Arc<dyn LinearOperator>,
    pub f: Tensor,
    pub m_ref: Tensor,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub seed: u64,
    /// Global gradient-norm clip applied before every ADAM step.
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn new(epochs: usize, loss: LossConfig, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 4,
            adam: AdamConfig::default(),
            loss,
            seed,
            clip_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curve: Vec<EpochRecord>,
    /// Epoch whose parameters are loaded in the network (0 = initialization).
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_seconds: f64,
    /// Set when training aborted on a non-finite loss; the network then
    /// carries the last finite (best-validation) parameters.
    pub failure: Option<String>,
}

fn snapshot(store: &ParameterStore) -> Vec<Vec<f64>> {
    store.iter().map(|(_, p)| p.value.data.clone()).collect()
}

fn restore(store: &mut ParameterStore, snap: &[Vec<f64>]) {
    for (id, p) in store.iter_mut() {
        p.value.data.copy_from_slice(&snap[id.0]);
    }
}

/// Per-sample loss value on the current parameters (no gradients).
fn eval_loss(net: &UnrolledNetwork, sample: &TrainSample, loss: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let pass = net.forward_tape(&mut tape, &sample.op, &sample.f, None)?;
    let mut total = {
        let node = mse_loss_node(&mut tape, pass.output, &sample.m_ref)?;
        tape.value(node).scalar_value()?
    };
    if loss.kind == LossKind::MsePlusSymmetry {
        let sym = symmetry_loss_node(net, &mut tape, pass.output, loss.np)?;
        total += loss.gamma * tape.value(sym).scalar_value()?;
    }
    Ok(total)
}

pub fn mean_val_loss(
    net: &UnrolledNetwork,
    samples: &[TrainSample],
    loss: &LossConfig,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for s in samples {
        acc += eval_loss(net, s, loss)?;
    }
    Ok(acc / samples.len() as f64)
}

/// Caller decision after each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainControl {
    Continue,
    Stop,
}

/// Deterministic mini-batch training with best-validation selection.
///
/// Divergence (a non-finite loss) stops the run; the network is restored
/// to the best finite parameters and the report's `failure` field records
/// the event. The caller decides whether that is a hard error.
pub fn train(
    net: &mut UnrolledNetwork,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_callback(net, train_set, val_set, cfg, |_, _| TrainControl::Continue)
}

/// [`train`] with a per-epoch hook that can stop the run early (used for
/// target-reached stopping in overfit and trend experiments).
pub fn train_with_callback(
    net: &mut UnrolledNetwork,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &UnrolledNetwork) -> TrainControl,
) -> Result<TrainReport> {
    if train_set.is_empty() && cfg.epochs > 0 {
        return Err(Error::Argument("training set is empty".into()));
    }
    let start = Instant::now();
    let mut adam = AdamState::new(cfg.adam.clone(), &net.params);
    let mut best = snapshot(&net.params);
    let mut best_val = mean_val_loss(net, val_set, &cfg.loss)?;
    let mut best_epoch = 0usize;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut failure = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, 0xE90C, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            net.params.zero_grads();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let sample = &train_set[idx];
                let mut tape = Tape::new();
                let pass = net.forward_tape(&mut tape, &sample.op, &sample.f, None)?;
                let mse_node = mse_loss_node(&mut tape, pass.output, &sample.m_ref)?;
                let root = if cfg.loss.kind == LossKind::MsePlusSymmetry {
                    let sym = symmetry_loss_node(net, &mut tape, pass.output, cfg.loss.np)?;
                    let gamma = tape.leaf(Tensor::scalar(cfg.loss.gamma));
                    let scaled = tape.scalar_mul(gamma, sym)?;
                    tape.add(mse_node, scaled)?
                } else {
                    mse_node
                };
                let value = tape.value(root).scalar_value()?;
                if !value.is_finite() {
                    failure = Some(format!(
                        "non-finite training loss at epoch {epoch}: {value}"
                    ));
                    break 'epochs;
                }
                batch_loss += value;
                tape.backward(root, &mut net.params)?;
            }
            epoch_loss += batch_loss;
            net.params.scale_grads(1.0 / batch.len() as f64);
            net.params.clip_grad_norm(cfg.clip_norm);
            adam.step(&mut net.params)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = mean_val_loss(net, val_set, &cfg.loss)?;
        if !val_loss.is_finite() {
            failure = Some(format!("non-finite validation loss at epoch {epoch}"));
            break;
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        curve.push(record.clone());
        if val_set.is_empty() || val_loss <= best_val {
            best_val = val_loss;
            best = snapshot(&net.params);
            best_epoch = epoch;
        }
        if on_epoch(&record, net) == TrainControl::Stop {
            break;
        }
    }

    restore(&mut net.params, &best);
    Ok(TrainReport {
        curve,
        best_epoch,
        best_val_loss: best_val,
        wall_seconds: start.elapsed().as_secs_f64(),
        failure,
    })
}

// Checkpoint files: every parameter tensor by name plus a manifest of the
// network configuration.

pub fn checkpoint_container(net: &UnrolledNetwork, extra: &[(&str, String)]) -> Result<DatasetContainer> {
    let mut c = DatasetContainer::new();
    c.set_meta("kind", "checkpoint");
    c.set_meta("family", net.family());
    c.set_meta("state", net.state());
    c.set_meta("n_stages", net.n_stages());
    c.set_meta("channels", net.config.channels);
    c.set_meta("l_transforms", net.config.l_transforms);
    c.set_meta("init_seed", net.config.init_seed);
    for (k, v) in extra {
        c.set_meta(k, v.clone());
    }
    for (_, p) in net.params.iter() {
        c.push_tensor(&p.name, &p.value)?;
    }
    Ok(c)
}

pub fn save_checkpoint(
    net: &UnrolledNetwork,
    extra: &[(&str, String)],
    path: impl AsRef<Path>,
) -> Result<()> {
    checkpoint_container(net, extra)?.write_to(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<UnrolledNetwork> {
    let path = path.as_ref();
    let c = DatasetContainer::read_from(path)?;
    let wrong = |what: &str| {
        Error::ManifestMismatch(format!(
            "checkpoint {} is missing or has malformed {what}",
            path.display()
        ))
    };
    if c.meta_str("kind") != Some("checkpoint") {
        return Err(wrong("kind"));
    }
    let family = Family::parse(c.meta_str("family").ok_or_else(|| wrong("family"))?)?;
    let state = LearningState::parse(c.meta_str("state").ok_or_else(|| wrong("state"))?)?;
    let cfg = NetworkConfig {
        family,
        state,
        n_stages: c.meta_parsed("n_stages").ok_or_else(|| wrong("n_stages"))?,
        channels: c.meta_parsed("channels").ok_or_else(|| wrong("channels"))?,
        l_transforms: c
            .meta_parsed("l_transforms")
            .ok_or_else(|| wrong("l_transforms"))?,
        init_seed: c.meta_parsed("init_seed").ok_or_else(|| wrong("init_seed"))?,
    };
    let mut net = build_network(cfg)?;
    for (_, p) in net.params.iter_mut() {
        let t = c.tensor(&p.name).map_err(|_| {
            Error::ManifestMismatch(format!(
                "checkpoint {} lacks parameter {}",
                path.display(),
                p.name
            ))
        })?;
        if t.shape != p.value.shape {
            return Err(Error::ManifestMismatch(format!(
                "checkpoint parameter {} has shape {:?}, expected {:?}",
                p.name, t.shape, p.value.shape
            )));
        }
        p.value.data = t.data;
    }
    Ok(net)
}

/// Render the loss curve as CSV with the fixed header
/// `epoch,train_loss,val_loss`.
pub fn loss_curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in curve {
        out.push_str(&format!("{},{:.17e},{:.17e}\n", r.epoch, r.train_loss, r.val_loss));
    }
    out
}
