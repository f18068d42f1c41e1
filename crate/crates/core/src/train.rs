//! Training loops for the four strategies.
//!
//! `Global` trains one vanilla model on batches drawn from all QPs,
//! `Separate` one vanilla model per QP, `Proposed` one QP-adaptive model and
//! `QpMap` one model with a QP input plane. The last two cycle through the QP
//! list, one QP per batch.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{Adam, AdamConfig};
use crate::codec::{SampleStore, Split};
use crate::error::{Error, Result};
use crate::model::{Arch, Mode, Network};
use crate::modulation::QpContext;
use crate::ops::mse_loss;
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Global,
    Separate,
    Proposed,
    QpMap,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Global, Strategy::Separate, Strategy::Proposed, Strategy::QpMap];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Global => "global",
            Strategy::Separate => "separate",
            Strategy::Proposed => "proposed",
            Strategy::QpMap => "qpmap",
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Strategy::Global | Strategy::Separate => Mode::Vanilla,
            Strategy::Proposed => Mode::QpAdaptive,
            Strategy::QpMap => Mode::QpMap,
        }
    }

    fn round_robin(&self) -> bool {
        matches!(self, Strategy::Proposed | Strategy::QpMap)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::invalid("strategy", format!("unknown strategy `{s}` (global, separate, proposed, qpmap)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "single" => Ok(Precision::F32),
            "f64" | "double" => Ok(Precision::F64),
            _ => Err(Error::invalid("precision", format!("unknown precision `{s}` (f32, f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: Arch,
    pub strategy: Strategy,
    pub qps: Vec<i32>,
    pub batch_size: usize,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Train on random square crops of this side instead of whole patches.
    pub crop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Dcad,
            strategy: Strategy::Proposed,
            qps: vec![22, 27, 32, 37],
            batch_size: 128,
            lr: 1e-3,
            iterations: 500,
            seed: 0,
            precision: Precision::F32,
            crop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, patch: usize) -> Result<()> {
        if self.qps.is_empty() {
            return Err(Error::invalid("train", "empty QP list"));
        }
        for &qp in &self.qps {
            QpContext::new(qp)?;
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train", "batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("train", format!("learning rate {} must be positive", self.lr)));
        }
        if let Some(c) = self.crop {
            if c == 0 || c > patch {
                return Err(Error::invalid("train", format!("crop {c} must be in 1..={patch}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub qp: i32,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub label: String,
    pub strategy: Strategy,
    /// QPs whose samples the model saw.
    pub qps: Vec<i32>,
    pub seed: u64,
    pub iterations: usize,
    pub net: Network<f32>,
    pub losses: Vec<LossRecord>,
}

/// Input (`recon/255`) and target (`original/255`) tensors for a batch of
/// patch pairs. With `crop = Some((side, offsets))` each pair `i` is cut to a
/// `side × side` window at `offsets[i]`.
pub fn pairs_to_tensors<T: Scalar>(pairs: &[(&[u8], &[u8])], patch: usize, crop: Option<(usize, &[(usize, usize)])>) -> (Tensor<T>, Tensor<T>) {
    let side = crop.map_or(patch, |(s, _)| s);
    let plane = side * side;
    let shape = Shape::new(pairs.len(), 1, side, side);
    let mut input = Vec::with_capacity(pairs.len() * plane);
    let mut target = Vec::with_capacity(pairs.len() * plane);
    let scale = T::from_f64(1.0 / 255.0);
    for (i, (orig, recon)) in pairs.iter().enumerate() {
        let (x0, y0) = crop.map_or((0, 0), |(_, off)| off[i]);
        for y in y0..y0 + side {
            let row = y * patch + x0;
            input.extend(recon[row..row + side].iter().map(|&v| T::from_f64(v as f64) * scale));
            target.extend(orig[row..row + side].iter().map(|&v| T::from_f64(v as f64) * scale));
        }
    }
    (
        Tensor::from_vec(shape, input).expect("batch length"),
        Tensor::from_vec(shape, target).expect("batch length"),
    )
}

fn diverged(iteration: usize, loss: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { iteration, loss },
        other => other,
    }
}

/// Trains `net` in place for `cfg.iterations` Adam steps on the training
/// split. With `round_robin`, batch `i` is drawn from `qps[i % len]` only;
/// otherwise every sample is drawn from the pool of all listed QPs.
pub fn train_network<T: Scalar>(
    net: &mut Network<T>,
    store: &SampleStore,
    cfg: &TrainConfig,
    qps: &[i32],
    round_robin: bool,
    stream: u64,
) -> Result<Vec<LossRecord>> {
    cfg.validate(store.patch)?;
    let pools: Vec<(i32, Vec<(&[u8], &[u8])>)> = qps.iter().map(|&qp| (qp, store.pairs(Split::Train, qp))).collect();
    if let Some((qp, _)) = pools.iter().find(|(_, p)| p.is_empty()) {
        return Err(Error::invalid("train", format!("no training samples at QP {qp}")));
    }
    let pooled: Vec<(i32, (&[u8], &[u8]))> = pools.iter().flat_map(|(qp, p)| p.iter().map(move |s| (*qp, *s))).collect();
    let contexts: Vec<QpContext> = qps.iter().map(|&qp| QpContext::new(qp)).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), net.param_groups().iter().map(|g| g.len()));
    let side = cfg.crop.unwrap_or(store.patch);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut batch: Vec<(&[u8], &[u8])> = Vec::with_capacity(cfg.batch_size);
    let mut offsets = Vec::with_capacity(cfg.batch_size);

    for iteration in 0..cfg.iterations {
        batch.clear();
        offsets.clear();
        let slot = if round_robin {
            let slot = iteration % pools.len();
            let pool = &pools[slot].1;
            for _ in 0..cfg.batch_size {
                batch.push(pool[rng.random_range(0..pool.len())]);
            }
            Some(slot)
        } else {
            for _ in 0..cfg.batch_size {
                batch.push(pooled[rng.random_range(0..pooled.len())].1);
            }
            (pools.len() == 1).then_some(0)
        };
        for _ in 0..cfg.batch_size {
            let span = store.patch - side + 1;
            offsets.push((rng.random_range(0..span), rng.random_range(0..span)));
        }
        let crop = (side < store.patch).then_some((side, offsets.as_slice()));
        let (input, target) = pairs_to_tensors::<T>(&batch, store.patch, crop);

        let ctx = slot.map(|s| &contexts[s]);
        let ctx = if net.mode().needs_qp() { ctx } else { None };
        let (output, tape) = net.forward_with_tape(&input, ctx).map_err(diverged(iteration, f64::NAN))?;
        let (loss, grad) = mse_loss(&output, &target).map_err(diverged(iteration, f64::NAN))?;
        let grads = net.backward(&tape, &grad).map_err(diverged(iteration, loss))?;
        adam.step(net.param_groups_mut(), grads.groups())?;
        net.clamp_theta();

        let qp = slot.map_or(-1, |s| pools[s].0);
        if iteration % 100 == 0 {
            log::info!("iteration {iteration}: loss {loss:.6e}");
        }
        losses.push(LossRecord { iteration, qp, loss });
    }
    Ok(losses)
}

fn train_one<T: Scalar>(store: &SampleStore, cfg: &TrainConfig, qps: &[i32], stream: u64) -> Result<(Network<f32>, Vec<LossRecord>)> {
    let spec = cfg.arch.build(cfg.strategy.mode())?;
    let mut net = Network::<T>::init(spec, cfg.seed)?;
    let losses = train_network(&mut net, store, cfg, qps, cfg.strategy.round_robin(), stream)?;
    Ok((net.cast(), losses))
}

/// Trains every model of `cfg.strategy`: one per QP for `Separate`, one
/// otherwise. All models start from the same seeded initialization.
pub fn train_strategy(store: &SampleStore, cfg: &TrainConfig) -> Result<Vec<TrainedModel>> {
    let groups: Vec<(String, Vec<i32>, u64)> = match cfg.strategy {
        Strategy::Separate => cfg
            .qps
            .iter()
            .map(|&qp| (format!("{}-separate-qp{qp}", cfg.arch.name()), vec![qp], qp as u64 + 1))
            .collect(),
        s => vec![(format!("{}-{}", cfg.arch.name(), s), cfg.qps.clone(), 0)],
    };
    groups
        .into_iter()
        .map(|(label, qps, stream)| {
            log::info!("training {label} on QPs {qps:?}");
            let (net, losses) = match cfg.precision {
                Precision::F32 => train_one::<f32>(store, cfg, &qps, stream)?,
                Precision::F64 => train_one::<f64>(store, cfg, &qps, stream)?,
            };
            Ok(TrainedModel {
                label,
                strategy: cfg.strategy,
                qps,
                seed: cfg.seed,
                iterations: cfg.iterations,
                net,
                losses,
            })
        })
        .collect()
}

pub const LOSS_LOG_HEADER: &str = "iteration,qp,loss";

/// `iteration,qp,loss` rows; `qp` is -1 for batches mixing several QPs.
pub fn write_loss_log(records: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.iteration, r.qp, r.loss);
    }
    out
}

pub fn parse_loss_log(text: &str) -> Result<Vec<LossRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_LOG_HEADER) {
        return Err(Error::format("loss log", "missing header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::format("loss log", format!("bad row `{l}`"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(LossRecord {
                iteration: f[0].parse().map_err(|_| bad())?,
                qp: f[1].parse().map_err(|_| bad())?,
                loss: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
