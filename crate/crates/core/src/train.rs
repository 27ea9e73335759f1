//! Pre-training: configuration, SGD with momentum and weight decay, step
//! learning-rate decay, the epoch loop and checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{make_views, AugmentConfig};
use crate::binio::{Reader, Writer};
use crate::contrast::{ContrastQueue, HicoModel, LossTerms, LossToggles, MoCoState, Queues, PROJECTION_WIDTH};
use crate::data::{DatasetManifest, SkeletonSequence, Split};
use crate::encoder::EncoderConfig;
use crate::error::{arg, Error, Result};
use crate::nn::{Matrix, ParamGrads, ParamStore, S2sKind};
use crate::parallel;
use crate::rng::mix;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub queue_capacity: usize,
    pub tau: f64,
    pub key_momentum: f64,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
    pub loss: LossToggles,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            epochs: 450,
            batch_size: 64,
            lr: 0.01,
            lr_decay_epochs: vec![350],
            lr_decay_factor: 0.1,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            queue_capacity: 2048,
            tau: 0.2,
            key_momentum: 0.999,
            seed: 0,
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
            loss: LossToggles::default(),
        }
    }

    /// Small enough to pre-train on a desktop CPU in minutes.
    pub fn desk() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr_decay_epochs: vec![40],
            queue_capacity: 512,
            encoder: EncoderConfig { channels: 64, levels: 3, hidden: 64, ..EncoderConfig::default() },
            ..Self::paper()
        }
    }

    /// The smallest configuration exercising every code path.
    pub fn tiny() -> Self {
        Self {
            epochs: 1,
            batch_size: 2,
            lr_decay_epochs: vec![],
            queue_capacity: 16,
            encoder: EncoderConfig {
                channels: 8,
                levels: 2,
                hidden: 8,
                out_frames: 8,
                joints: 6,
                s2s: S2sKind::Gru,
                ..EncoderConfig::default()
            },
            augment: AugmentConfig { out_frames: 8, ..AugmentConfig::default() },
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail(format!("epochs and batch_size must be positive (got {}, {})", self.epochs, self.batch_size));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay_factor > 0.0) {
            return fail(format!("lr and lr_decay_factor must be positive (got {}, {})", self.lr, self.lr_decay_factor));
        }
        if !self.lr_decay_epochs.windows(2).all(|w| w[0] <= w[1]) || self.lr_decay_epochs.iter().any(|&e| e >= self.epochs) {
            return fail(format!("lr_decay_epochs {:?} must be sorted and below epochs {}", self.lr_decay_epochs, self.epochs));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) || !(self.weight_decay >= 0.0) {
            return fail(format!("need 0 <= sgd_momentum < 1 and weight_decay >= 0 (got {}, {})", self.sgd_momentum, self.weight_decay));
        }
        if !(self.tau > 0.0) || !(0.0..=1.0).contains(&self.key_momentum) {
            return fail(format!("need tau > 0 and key_momentum in [0, 1] (got {}, {})", self.tau, self.key_momentum));
        }
        let per_step = self.batch_size * self.encoder.levels;
        if self.queue_capacity < per_step {
            return fail(format!("queue_capacity {} is below batch_size * L = {per_step}", self.queue_capacity));
        }
        self.encoder.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.augment.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.augment.out_frames != self.encoder.out_frames {
            return fail(format!(
                "augment.out_frames {} differs from encoder.out_frames {}",
                self.augment.out_frames, self.encoder.out_frames
            ));
        }
        self.loss.validate(&self.encoder)
    }
}

/// `base * factor^(number of decay epochs <= epoch)`.
pub fn step_decay(base: f64, factor: f64, decay_epochs: &[usize], epoch: usize) -> f64 {
    let n = decay_epochs.iter().filter(|&&d| epoch >= d).count();
    base * factor.powi(n as i32)
}

pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    step_decay(cfg.lr, cfg.lr_decay_factor, &cfg.lr_decay_epochs, epoch)
}

/// `g = grad + wd * theta; buf = momentum * buf + g; theta -= lr * buf`.
pub fn sgd_update(
    params: &mut ParamStore,
    grads: &ParamGrads,
    buffers: &mut ParamGrads,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.values.len() != params.len() || buffers.values.len() != params.len() {
        return arg("gradient, buffer and parameter layouts differ");
    }
    if let Some(i) = grads.values.iter().position(|g| !g.is_finite()) {
        return arg(format!("non-finite gradient for {}", params.name(params.ids().nth(i).unwrap())));
    }
    for ((theta, g), buf) in params.values_mut().iter_mut().zip(&grads.values).zip(&mut buffers.values) {
        if theta.shape() != g.shape() || theta.shape() != buf.shape() {
            return arg("gradient shape does not match its parameter");
        }
        for ((t, &gv), b) in theta.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
            let g = gv + weight_decay * *t;
            *b = momentum * *b + g;
            *t -= lr * *b;
        }
    }
    Ok(())
}

/// One line of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub terms: LossTerms,
}

pub const TRACE_HEADER: &str = "step,epoch,lr,total,instance,domain,clip,part";

impl TraceRow {
    pub fn to_csv(&self) -> String {
        let t = &self.terms;
        format!("{},{},{},{},{},{},{},{}", self.step, self.epoch, self.lr, t.total(), t.instance, t.domain, t.clip, t.part)
    }
}

pub fn write_trace<W: Write>(mut w: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    Ok(())
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or to evaluate the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimisation steps.
    pub step: usize,
    pub query: ParamStore,
    pub key: ParamStore,
    pub buffers: ParamGrads,
    pub queues: Queues,
}

fn write_store(w: &mut Writer, values: &[Matrix], names: Option<&ParamStore>) -> Result<()> {
    w.len_u32(values.len())?;
    for (i, m) in values.iter().enumerate() {
        if let Some(s) = names {
            w.str(s.name(s.ids().nth(i).unwrap()))?;
        }
        w.len_u32(m.rows())?;
        w.len_u32(m.cols())?;
        for &v in m.data() {
            w.f64(v);
        }
    }
    Ok(())
}

fn read_matrix(r: &mut Reader<'_>, what: &str) -> Result<Matrix> {
    let rows = r.u32(what)? as usize;
    let cols = r.u32(what)? as usize;
    let n = rows.checked_mul(cols).ok_or_else(|| Error::Format(format!("{what}: shape overflow")))?;
    let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Format(format!("{what}: size overflow")))?, what)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

fn read_store(r: &mut Reader<'_>, what: &str) -> Result<ParamStore> {
    let n = r.u32(what)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name = r.str(what)?;
        if store.id(&name).is_some() {
            return Err(Error::Format(format!("{what}: duplicate parameter {name}")));
        }
        let m = read_matrix(r, what)?;
        store.add(name, m);
    }
    Ok(store)
}

impl Checkpoint {
    /// Rebuilds the model structure described by the stored config.
    pub fn model(&self) -> Result<HicoModel> {
        Ok(HicoModel::init(&self.config.encoder, 0)?.0)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(self.epoch as u64);
        w.u64(self.step as u64);
        w.str(&crate::config::train_to_text(&self.config))?;
        write_store(&mut w, self.query.values(), Some(&self.query))?;
        write_store(&mut w, self.key.values(), Some(&self.key))?;
        write_store(&mut w, &self.buffers.values, None)?;
        for q in self.queues.all() {
            w.len_u32(q.capacity())?;
            w.len_u32(q.cursor())?;
            write_store(&mut w, std::slice::from_ref(q.rows()), None)?;
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "checkpoint header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected HCK1")));
        }
        let version = r.u32("checkpoint header")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let epoch = r.u64("checkpoint header")? as usize;
        let step = r.u64("checkpoint header")? as usize;
        let config = crate::config::train_from_text(&r.str("checkpoint config")?)?;
        let query = read_store(&mut r, "query parameters")?;
        let key = read_store(&mut r, "key parameters")?;
        let nbuf = r.u32("momentum buffers")? as usize;
        let buffers = ParamGrads { values: (0..nbuf).map(|_| read_matrix(&mut r, "momentum buffers")).collect::<Result<_>>()? };
        let mut queues = Vec::with_capacity(5);
        for name in Queues::NAMES {
            let capacity = r.u32(name)? as usize;
            let cursor = r.u32(name)? as usize;
            if r.u32(name)? != 1 {
                return Err(Error::Format(format!("{name} queue: expected one matrix")));
            }
            queues.push(ContrastQueue::from_parts(capacity, read_matrix(&mut r, name)?, cursor).map_err(|e| Error::Format(e.to_string()))?);
        }
        r.finish()?;

        let (_, fresh) = HicoModel::init(&config.encoder, 0).map_err(|e| Error::Format(e.to_string()))?;
        let shapes_ok =
            buffers.values.len() == fresh.len() && buffers.values.iter().zip(fresh.values()).all(|(a, b)| a.shape() == b.shape());
        if !fresh.same_layout(&query) || !fresh.same_layout(&key) || !shapes_ok {
            return Err(Error::Format("stored parameters do not match the stored encoder config".into()));
        }
        if queues.iter().any(|q| q.dim() != PROJECTION_WIDTH) {
            return Err(Error::Format("queue width mismatch".into()));
        }
        let queues = Queues::from_array(queues.try_into().expect("five queues"));
        Ok(Self { config, epoch, step, query, key, buffers, queues })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Mutable training state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: MoCoState,
    pub buffers: ParamGrads,
    pub epoch: usize,
    pub step: usize,
}

const AUGMENT_STREAM: u64 = 0xA06;
const MODEL_STREAM: u64 = 0x30DE1;
const QUEUE_STREAM: u64 = 0x0E0E;

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (model, store) = HicoModel::init(&cfg.encoder, mix(cfg.seed, MODEL_STREAM))?;
        let queues = Queues::random(cfg.queue_capacity, mix(cfg.seed, QUEUE_STREAM))?;
        let buffers = ParamGrads::zeros_like(&store);
        let state = MoCoState::new(model, store, queues, cfg.tau, cfg.key_momentum)?;
        Ok(Self { cfg: cfg.clone(), state, buffers, epoch: 0, step: 0 })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let model = ckpt.model()?;
        let mut state = MoCoState::new(model, ckpt.query, ckpt.queues, ckpt.config.tau, ckpt.config.key_momentum)?;
        state.key = ckpt.key;
        Ok(Self { cfg: ckpt.config, state, buffers: ckpt.buffers, epoch: ckpt.epoch, step: ckpt.step })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            epoch: self.epoch,
            step: self.step,
            query: self.state.query.clone(),
            key: self.state.key.clone(),
            buffers: self.buffers.clone(),
            queues: self.state.queues.clone(),
        }
    }

    fn check_data(&self, data: &[SkeletonSequence]) -> Result<()> {
        if data.is_empty() {
            return arg("training split is empty");
        }
        if let Some(s) = data.iter().find(|s| s.joints() != self.cfg.encoder.joints) {
            return arg(format!("sequence has {} joints, encoder expects {}", s.joints(), self.cfg.encoder.joints));
        }
        Ok(())
    }

    /// One optimisation step on `batch`: views, loss, SGD, momentum update,
    /// enqueue.
    pub fn train_step(&mut self, batch: &[&SkeletonSequence], lr: f64) -> Result<LossTerms> {
        let step = self.step;
        let seed = mix(mix(self.cfg.seed, AUGMENT_STREAM), step as u64);
        let views = parallel::map_indexed(batch, |i, seq| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64));
            make_views(seq, &self.cfg.augment, &mut rng)
        });
        let pairs = views.into_iter().collect::<Result<Vec<_>>>()?;
        let out = self.state.batch_loss(&pairs, self.cfg.loss)?;
        if !out.terms.is_finite() {
            return Err(Error::NonFinite { step, what: format!("loss {:?}", out.terms) });
        }
        if !out.grads.is_finite() {
            return Err(Error::NonFinite { step, what: "gradient".into() });
        }
        sgd_update(&mut self.state.query, &out.grads, &mut self.buffers, lr, self.cfg.sgd_momentum, self.cfg.weight_decay)?;
        self.state.momentum_update()?;
        self.state.queues.enqueue(&out.keys)?;
        self.step += 1;
        Ok(out.terms)
    }

    /// Runs one epoch over `data` in the order fixed by `seed + epoch`.
    pub fn train_epoch(&mut self, data: &[SkeletonSequence], on_row: &mut dyn FnMut(&TraceRow)) -> Result<Vec<TraceRow>> {
        self.check_data(data)?;
        let epoch = self.epoch;
        let lr = lr_at_epoch(&self.cfg, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(epoch as u64)));
        let mut rows = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&SkeletonSequence> = chunk.iter().map(|&i| &data[i]).collect();
            let step = self.step;
            let terms = self.train_step(&batch, lr)?;
            let row = TraceRow { step, epoch, lr, terms };
            on_row(&row);
            rows.push(row);
        }
        self.epoch += 1;
        log::info!(
            "epoch {}/{} lr {} mean loss {:.4}",
            epoch + 1,
            self.cfg.epochs,
            lr,
            rows.iter().map(|r| r.terms.total()).sum::<f64>() / rows.len() as f64
        );
        Ok(rows)
    }

    /// Trains until `cfg.epochs` epochs are complete.
    pub fn run(&mut self, data: &[SkeletonSequence], on_row: &mut dyn FnMut(&TraceRow)) -> Result<Vec<TraceRow>> {
        let mut trace = Vec::new();
        while self.epoch < self.cfg.epochs {
            trace.extend(self.train_epoch(data, on_row)?);
        }
        Ok(trace)
    }
}

pub fn pretrain_sequences(data: &[SkeletonSequence], cfg: &TrainConfig) -> Result<(Checkpoint, Vec<TraceRow>)> {
    let mut trainer = Trainer::new(cfg)?;
    let trace = trainer.run(data, &mut |_| {})?;
    Ok((trainer.checkpoint(), trace))
}

/// Pre-trains on the manifest's train split.
pub fn pretrain(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<(Checkpoint, Vec<TraceRow>)> {
    let data = manifest.load_split(Split::Train)?;
    pretrain_sequences(&data, cfg)
}
