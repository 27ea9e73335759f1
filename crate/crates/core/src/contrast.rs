//! Momentum contrast at four levels: projection heads, FIFO key queues, the
//! momentum-averaged key network and the hierarchical InfoNCE objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::SkeletonSequence;
use crate::encoder::{EncoderConfig, HicoEncoder};
use crate::error::{arg, Error, Result};
use crate::nn::{Bind, Builder, Matrix, Mlp, ParamGrads, ParamStore, Tape, Var};
use crate::parallel;
use crate::rng::mix;

pub const PROJECTION_WIDTH: usize = 128;
pub const HEAD_HIDDEN_CAP: usize = 512;

/// Two-layer MLP followed by L2 normalisation of each row.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub mlp: Mlp,
}

impl ProjectionHead {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, input: usize, hidden: usize) -> Self {
        Self { mlp: Mlp::new(b, name, input, hidden, PROJECTION_WIDTH) }
    }

    pub fn input(&self) -> usize {
        self.mlp.first.input
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, p: Bind<'p>, x: Var) -> Result<Var> {
        let h = self.mlp.forward(tape, p, x);
        tape.l2_normalize_rows(h)
    }
}

/// Projects one feature vector to the unit sphere.
pub fn project(v: &[f64], head: &ProjectionHead, store: &ParamStore) -> Result<Vec<f64>> {
    if v.len() != head.input() {
        return arg(format!("projection head expects width {}, got {}", head.input(), v.len()));
    }
    let mut tape = Tape::new();
    let x = tape.input(Matrix::row_vector(v.to_vec()));
    let z = head.forward(&mut tape, Bind::new(store, 0), x)?;
    Ok(tape.value(z).data().to_vec())
}

/// Projection heads; domain heads exist only when both branches are built,
/// clip/part heads only with their branch.
#[derive(Debug, Clone)]
pub struct Heads {
    pub instance: ProjectionHead,
    pub temporal: Option<ProjectionHead>,
    pub spatial: Option<ProjectionHead>,
    pub clip: Option<ProjectionHead>,
    pub part: Option<ProjectionHead>,
}

impl Heads {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, cfg: &EncoderConfig) -> Self {
        let capped = |w: usize| w.min(HEAD_HIDDEN_CAP);
        b.scoped("heads", |b| {
            let instance = ProjectionHead::new(b, "instance", cfg.instance_width(), capped(cfg.instance_width()));
            let both = cfg.has_temporal() && cfg.has_spatial();
            let dw = cfg.domain_width();
            let temporal = both.then(|| ProjectionHead::new(b, "temporal", dw, capped(dw)));
            let spatial = both.then(|| ProjectionHead::new(b, "spatial", dw, capped(dw)));
            let clip = cfg.has_temporal().then(|| ProjectionHead::new(b, "clip", cfg.hidden, HEAD_HIDDEN_CAP));
            let part = cfg.has_spatial().then(|| ProjectionHead::new(b, "part", cfg.hidden, HEAD_HIDDEN_CAP));
            Self { instance, temporal, spatial, clip, part }
        })
    }
}

/// Encoder plus projection heads. Parameters live in a separate store so
/// the same model serves both the query and the key network.
#[derive(Debug, Clone)]
pub struct HicoModel {
    pub encoder: HicoEncoder,
    pub heads: Heads,
}

impl HicoModel {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, cfg: &EncoderConfig) -> Result<Self> {
        let encoder = b.scoped("encoder", |b| HicoEncoder::new(b, cfg))?;
        let heads = Heads::new(b, cfg);
        Ok(Self { encoder, heads })
    }

    /// Builds the model and a freshly initialised parameter store.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let model = Self::new(&mut Builder::new(&mut store, &mut rng), cfg)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.cfg
    }
}

/// Fixed-capacity FIFO of unit vectors. Rows are kept in storage order;
/// once full, the write cursor overwrites the oldest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastQueue {
    capacity: usize,
    dim: usize,
    rows: Matrix,
    cursor: usize,
}

impl ContrastQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return arg(format!("queue capacity and width must be positive, got {capacity}x{dim}"));
        }
        Ok(Self { capacity, dim, rows: Matrix::zeros(0, dim), cursor: 0 })
    }

    /// A full queue of seeded random unit vectors.
    pub fn random(capacity: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut q = Self::new(capacity, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(capacity * dim);
        for _ in 0..capacity {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            data.extend(v.iter().map(|x| x / n));
        }
        q.rows = Matrix::from_vec(capacity, dim, data);
        Ok(q)
    }

    /// Rebuilds a queue from stored state.
    pub fn from_parts(capacity: usize, rows: Matrix, cursor: usize) -> Result<Self> {
        if rows.rows() > capacity || (cursor != 0 && cursor >= capacity) || rows.cols() == 0 {
            return arg(format!("inconsistent queue state: {} rows, capacity {capacity}, cursor {cursor}", rows.rows()));
        }
        Ok(Self { capacity, dim: rows.cols(), rows, cursor })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Stored rows in storage order (the order is irrelevant to the loss).
    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    /// Entries oldest first.
    pub fn entries(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let start = if n < self.capacity { 0 } else { self.cursor };
        (0..n).map(|i| self.rows.row((start + i) % n).to_vec()).collect()
    }

    pub fn enqueue(&mut self, batch: &[Vec<f64>]) -> Result<()> {
        if batch.len() > self.capacity {
            return arg(format!("cannot enqueue {} entries into a queue of capacity {}", batch.len(), self.capacity));
        }
        if let Some(v) = batch.iter().find(|v| v.len() != self.dim) {
            return arg(format!("queue entries have width {}, got {}", self.dim, v.len()));
        }
        for v in batch {
            if self.len() < self.capacity {
                let mut data = std::mem::replace(&mut self.rows, Matrix::zeros(0, self.dim)).into_vec();
                data.extend_from_slice(v);
                self.rows = Matrix::from_vec(data.len() / self.dim, self.dim, data);
                self.cursor = self.len() % self.capacity;
            } else {
                self.rows.row_mut(self.cursor).copy_from_slice(v);
                self.cursor = (self.cursor + 1) % self.capacity;
            }
        }
        Ok(())
    }
}

fn dots(anchor: &[f64], rows: impl Iterator<Item = impl AsRef<[f64]>>) -> Vec<f64> {
    rows.map(|r| r.as_ref().iter().zip(anchor).map(|(a, b)| a * b).sum()).collect()
}

/// InfoNCE with any number of positives against the queue contents.
pub fn info_nce_multi(anchor: &[f64], positives: &[Vec<f64>], queue: &ContrastQueue, tau: f64) -> Result<f64> {
    if positives.is_empty() || queue.is_empty() {
        return arg("info_nce needs at least one positive and a nonempty queue");
    }
    if !(tau > 0.0) {
        return arg(format!("temperature must be > 0, got {tau}"));
    }
    if anchor.len() != queue.dim() || positives.iter().any(|p| p.len() != anchor.len()) {
        return arg("info_nce width mismatch");
    }
    let pos = dots(anchor, positives.iter());
    let neg = dots(anchor, (0..queue.len()).map(|i| queue.rows().row(i)));
    Ok(crate::nn::info_nce_value(&pos, &neg, tau).0)
}

/// Symmetric cross-domain term: each domain feature is pulled toward the
/// other domain's key feature and pushed from that domain's queue.
#[allow(clippy::too_many_arguments)]
pub fn domain_loss(
    v_t: &[f64],
    v_s: &[f64],
    key_t: &[f64],
    key_s: &[f64],
    queue_t: &ContrastQueue,
    queue_s: &ContrastQueue,
    tau: f64,
) -> Result<f64> {
    Ok(info_nce_multi(v_t, &[key_s.to_vec()], queue_s, tau)? + info_nce_multi(v_s, &[key_t.to_vec()], queue_t, tau)?)
}

/// `key = m * key + (1 - m) * query`, elementwise.
pub fn momentum_update(key: &mut ParamStore, query: &ParamStore, m: f64) -> Result<()> {
    if !key.same_layout(query) {
        return arg("key and query parameters have different layouts");
    }
    if !(0.0..=1.0).contains(&m) {
        return arg(format!("momentum must be in [0, 1], got {m}"));
    }
    for (k, q) in key.values_mut().iter_mut().zip(query.values()) {
        for (a, b) in k.data_mut().iter_mut().zip(q.data()) {
            *a = m * *a + (1.0 - m) * b;
        }
    }
    Ok(())
}

/// Which loss levels contribute. Levels whose branch is missing are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossToggles {
    pub instance: bool,
    pub domain: bool,
    pub clip_part: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self { instance: true, domain: true, clip_part: true }
    }
}

impl LossToggles {
    pub fn instance_only() -> Self {
        Self { instance: true, domain: false, clip_part: false }
    }

    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        let domain = self.domain && cfg.has_temporal() && cfg.has_spatial();
        if !(self.instance || domain || self.clip_part) {
            return Err(Error::Config("no loss term is active for this encoder configuration".into()));
        }
        Ok(())
    }
}

/// Per-term losses, averaged over a batch when produced by [`MoCoState::batch_loss`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub instance: f64,
    pub domain: f64,
    pub clip: f64,
    pub part: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.instance + self.domain + self.clip + self.part
    }

    pub fn is_finite(&self) -> bool {
        [self.instance, self.domain, self.clip, self.part].iter().all(|v| v.is_finite())
    }
}

/// Projected key features of one sample, destined for the queues.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyFeatures {
    pub instance: Vec<f64>,
    pub temporal: Option<Vec<f64>>,
    pub spatial: Option<Vec<f64>>,
    pub clip: Vec<Vec<f64>>,
    pub part: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Queues {
    pub instance: ContrastQueue,
    pub temporal: ContrastQueue,
    pub spatial: ContrastQueue,
    pub clip: ContrastQueue,
    pub part: ContrastQueue,
}

impl Queues {
    pub const NAMES: [&'static str; 5] = ["instance", "temporal", "spatial", "clip", "part"];

    pub fn random(capacity: usize, seed: u64) -> Result<Self> {
        let q = |i: u64| ContrastQueue::random(capacity, PROJECTION_WIDTH, crate::rng::mix(seed, 0x5155_4555 + i));
        Ok(Self { instance: q(0)?, temporal: q(1)?, spatial: q(2)?, clip: q(3)?, part: q(4)? })
    }

    pub fn all(&self) -> [&ContrastQueue; 5] {
        [&self.instance, &self.temporal, &self.spatial, &self.clip, &self.part]
    }

    pub fn from_array([instance, temporal, spatial, clip, part]: [ContrastQueue; 5]) -> Self {
        Self { instance, temporal, spatial, clip, part }
    }

    /// Appends key features sample by sample; clip and part queues receive
    /// every granularity.
    pub fn enqueue(&mut self, keys: &[KeyFeatures]) -> Result<()> {
        let instance: Vec<Vec<f64>> = keys.iter().map(|k| k.instance.clone()).collect();
        let temporal: Vec<Vec<f64>> = keys.iter().filter_map(|k| k.temporal.clone()).collect();
        let spatial: Vec<Vec<f64>> = keys.iter().filter_map(|k| k.spatial.clone()).collect();
        let clip: Vec<Vec<f64>> = keys.iter().flat_map(|k| k.clip.iter().cloned()).collect();
        let part: Vec<Vec<f64>> = keys.iter().flat_map(|k| k.part.iter().cloned()).collect();
        self.instance.enqueue(&instance)?;
        self.temporal.enqueue(&temporal)?;
        self.spatial.enqueue(&spatial)?;
        self.clip.enqueue(&clip)?;
        self.part.enqueue(&part)
    }
}

/// Output of one sample's forward and backward pass.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub terms: LossTerms,
    pub grads: ParamGrads,
    pub keys: KeyFeatures,
    /// Branch signature of the loss graph, for finite-difference checks.
    pub signature: u64,
}

/// Batch-mean losses and gradients plus all key features in batch order.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub terms: LossTerms,
    pub grads: ParamGrads,
    pub keys: Vec<KeyFeatures>,
    pub signature: u64,
}

/// Query network, key network and queues.
#[derive(Debug, Clone)]
pub struct MoCoState {
    pub model: HicoModel,
    pub query: ParamStore,
    pub key: ParamStore,
    pub queues: Queues,
    pub tau: f64,
    pub momentum: f64,
}

/// Tape bind set of the query parameters.
pub const QUERY_SET: u8 = 0;
/// Tape bind set of the key parameters; their gradients are always zero.
pub const KEY_SET: u8 = 1;

impl MoCoState {
    /// The key network starts as a copy of the query network.
    pub fn new(model: HicoModel, query: ParamStore, queues: Queues, tau: f64, momentum: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return arg(format!("temperature must be > 0, got {tau}"));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return arg(format!("momentum must be in [0, 1], got {momentum}"));
        }
        let key = query.clone();
        Ok(Self { model, query, key, queues, tau, momentum })
    }

    pub fn momentum_update(&mut self) -> Result<()> {
        momentum_update(&mut self.key, &self.query, self.momentum)
    }

    /// Builds the loss graph of one (query view, key view) pair on `tape`.
    /// Key features are detached, so no gradient reaches key parameters.
    pub fn sample_graph<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        q_view: &SkeletonSequence,
        k_view: &SkeletonSequence,
        toggles: LossToggles,
    ) -> Result<(Option<Var>, LossTerms, KeyFeatures)> {
        let qp = Bind::new(&self.query, QUERY_SET);
        let kp = Bind::new(&self.key, KEY_SET);
        let heads = &self.model.heads;
        let q = self.model.encoder.forward(tape, qp, q_view)?;
        let k = self.model.encoder.forward(tape, kp, k_view)?;

        let key_proj = |tape: &mut Tape<'p>, head: &ProjectionHead, x: Var| -> Result<Var> {
            let z = head.forward(tape, kp, x)?;
            Ok(tape.detach(z))
        };
        let ki = key_proj(tape, &heads.instance, k.instance)?;
        let kt = match (&heads.temporal, k.temporal) {
            (Some(h), Some(v)) => Some(key_proj(tape, h, v)?),
            _ => None,
        };
        let ks = match (&heads.spatial, k.spatial) {
            (Some(h), Some(v)) => Some(key_proj(tape, h, v)?),
            _ => None,
        };
        let kc = match &heads.clip {
            Some(h) => {
                let stacked = tape.concat_rows(&k.clip);
                Some(key_proj(tape, h, stacked)?)
            }
            None => None,
        };
        let kpart = match &heads.part {
            Some(h) => {
                let stacked = tape.concat_rows(&k.part);
                Some(key_proj(tape, h, stacked)?)
            }
            None => None,
        };

        let rows = |tape: &Tape<'_>, v: Var| -> Vec<Vec<f64>> {
            let m = tape.value(v);
            (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
        };
        let keys = KeyFeatures {
            instance: tape.value(ki).data().to_vec(),
            temporal: kt.map(|v| tape.value(v).data().to_vec()),
            spatial: ks.map(|v| tape.value(v).data().to_vec()),
            clip: kc.map(|v| rows(tape, v)).unwrap_or_default(),
            part: kpart.map(|v| rows(tape, v)).unwrap_or_default(),
        };

        let mut terms = LossTerms::default();
        let mut parts: Vec<Var> = Vec::new();
        let tau = self.tau;
        if toggles.instance {
            let z = heads.instance.forward(tape, qp, q.instance)?;
            let l = tape.info_nce(z, ki, self.queues.instance.rows(), tau)?;
            terms.instance = tape.value(l).get(0, 0);
            parts.push(l);
        }
        if toggles.domain {
            if let (Some(ht), Some(hs), Some(vt), Some(vs), Some(kt), Some(ks)) =
                (&heads.temporal, &heads.spatial, q.temporal, q.spatial, kt, ks)
            {
                let zt = ht.forward(tape, qp, vt)?;
                let zs = hs.forward(tape, qp, vs)?;
                let a = tape.info_nce(zt, ks, self.queues.spatial.rows(), tau)?;
                let b = tape.info_nce(zs, kt, self.queues.temporal.rows(), tau)?;
                terms.domain = tape.value(a).get(0, 0) + tape.value(b).get(0, 0);
                parts.push(a);
                parts.push(b);
            }
        }
        if toggles.clip_part {
            if let (Some(h), Some(kc)) = (&heads.clip, kc) {
                let z = h.forward(tape, qp, q.clip[0])?;
                let l = tape.info_nce(z, kc, self.queues.clip.rows(), tau)?;
                terms.clip = tape.value(l).get(0, 0);
                parts.push(l);
            }
            if let (Some(h), Some(kpart)) = (&heads.part, kpart) {
                let z = h.forward(tape, qp, q.part[0])?;
                let l = tape.info_nce(z, kpart, self.queues.part.rows(), tau)?;
                terms.part = tape.value(l).get(0, 0);
                parts.push(l);
            }
        }
        let total = match parts.len() {
            0 => None,
            1 => Some(parts[0]),
            _ => {
                let all = tape.concat_cols(&parts);
                Some(tape.sum(all))
            }
        };
        Ok((total, terms, keys))
    }

    /// Loss terms, query-parameter gradients and key features of one pair.
    pub fn sample_loss(&self, q_view: &SkeletonSequence, k_view: &SkeletonSequence, toggles: LossToggles) -> Result<SampleOutput> {
        let mut tape = Tape::new();
        let (total, terms, keys) = self.sample_graph(&mut tape, q_view, k_view, toggles)?;
        let total = total.ok_or_else(|| Error::Config("no loss term is active for this encoder configuration".into()))?;
        let grads = tape.backward(total).param_grads(QUERY_SET, &self.query);
        Ok(SampleOutput { terms, grads, keys, signature: tape.branch_signature() })
    }

    /// Batch-mean hierarchical loss and its gradient with respect to the
    /// query parameters. Samples run in parallel; reduction is sequential in
    /// batch order so the result does not depend on the execution mode.
    /// The queues are not modified; call [`Queues::enqueue`] with the
    /// returned keys once the step is applied.
    pub fn batch_loss(&self, pairs: &[(SkeletonSequence, SkeletonSequence)], toggles: LossToggles) -> Result<BatchOutput> {
        if pairs.is_empty() {
            return arg("empty batch");
        }
        let outs = parallel::map_indexed(pairs, |_, (q, k)| self.sample_loss(q, k, toggles));
        let mut terms = LossTerms::default();
        let mut grads: Option<ParamGrads> = None;
        let mut keys = Vec::with_capacity(pairs.len());
        let mut signature = 0;
        for out in outs {
            let out = out?;
            signature = mix(signature, out.signature);
            terms.instance += out.terms.instance;
            terms.domain += out.terms.domain;
            terms.clip += out.terms.clip;
            terms.part += out.terms.part;
            match &mut grads {
                Some(g) => g.add_assign(&out.grads),
                None => grads = Some(out.grads),
            }
            keys.push(out.keys);
        }
        let n = pairs.len() as f64;
        let terms = LossTerms { instance: terms.instance / n, domain: terms.domain / n, clip: terms.clip / n, part: terms.part / n };
        let mut grads = grads.expect("nonempty batch");
        grads.scale(1.0 / n);
        Ok(BatchOutput { terms, grads, keys, signature })
    }
}
