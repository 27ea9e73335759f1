//! Downstream protocols on frozen or fine-tuned encoders.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{Reader, Writer};
use crate::data::{resample_time, DatasetManifest, SkeletonSequence, SkeletonTopology, Split, View};
use crate::encoder::HicoEncoder;
use crate::error::{arg, Error, Result};
use crate::nn::{Bind, Builder, Linear, Matrix, ParamGrads, ParamStore, Tape};
use crate::parallel;
use crate::train::{sgd_update, step_decay, Checkpoint};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// Instance features, one row per item, stored in single precision so the
/// binary export is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    pub labels: Vec<u32>,
}

impl EmbeddingTable {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        if data.len() != rows * dim || labels.len() != rows {
            return arg(format!("table of {rows}x{dim} needs {} values and {rows} labels", rows * dim));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return arg("embedding table contains non-finite values");
        }
        Ok(Self { rows, dim, data, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u32>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return arg("embedding rows differ in width");
        }
        Self::new(rows.len(), dim, rows.iter().flatten().map(|&v| v as f32).collect(), labels)
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.dim, self.data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    /// `"EMB1" | u32 N | u32 D | i32 labels[N] | f32 data[N*D]`, little endian.
    pub fn to_emb1(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(EMBEDDING_MAGIC);
        w.len_u32(self.rows)?;
        w.len_u32(self.dim)?;
        for &l in &self.labels {
            let l = i32::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit in i32")))?;
            w.i32(l);
        }
        for &v in &self.data {
            w.f32(v);
        }
        Ok(w.buf)
    }

    pub fn from_emb1(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "embedding header")? != EMBEDDING_MAGIC {
            return Err(Error::Format("bad magic, expected EMB1".into()));
        }
        let rows = r.u32("embedding header")? as usize;
        let dim = r.u32("embedding header")? as usize;
        let labels = (0..rows)
            .map(|_| {
                let l = r.i32("labels")?;
                u32::try_from(l).map_err(|_| Error::Format(format!("negative label {l}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = rows.checked_mul(dim).ok_or_else(|| Error::Format("table size overflow".into()))?;
        let data = (0..n).map(|_| r.f32("embedding data")).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(rows, dim, data, labels).map_err(|e| Error::Format(e.to_string()))
    }

    /// `label,d0,d1,...` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for d in 0..self.dim {
            write!(s, ",d{d}").unwrap();
        }
        s.push('\n');
        for i in 0..self.rows {
            write!(s, "{}", self.labels[i]).unwrap();
            for v in self.row(i) {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty embedding CSV".into()))?;
        let dim = header.split(',').count().saturating_sub(1);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut fields = line.split(',');
            let bad = |what: &str| Error::Format(format!("embedding CSV line {}: bad {what}", n + 2));
            labels.push(fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad("label"))?);
            let before = data.len();
            for f in fields {
                data.push(f.parse::<f32>().map_err(|_| bad("value"))?);
            }
            if data.len() - before != dim {
                return Err(bad("column count"));
            }
        }
        Self::new(labels.len(), dim, data, labels).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_emb1()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_emb1(&fs::read(path)?)
    }
}

/// View transform followed by the deterministic full-length resample.
pub fn prepare(seq: &SkeletonSequence, view: View, topo: &SkeletonTopology, out_frames: usize) -> Result<SkeletonSequence> {
    resample_time(&view.apply(seq, topo)?, out_frames)
}

fn labels_of(seqs: &[SkeletonSequence]) -> Result<Vec<u32>> {
    seqs.iter().enumerate().map(|(i, s)| s.label.ok_or_else(|| Error::Argument(format!("item {i} has no label")))).collect()
}

fn embed_prepared(encoder: &HicoEncoder, store: &ParamStore, prepared: &[SkeletonSequence], labels: Vec<u32>) -> Result<EmbeddingTable> {
    if prepared.is_empty() {
        return EmbeddingTable::new(0, encoder.cfg.instance_width(), vec![], vec![]);
    }
    let rows = parallel::map_indexed(prepared, |_, s| encoder.embed(store, s).map(|e| e.instance));
    EmbeddingTable::from_rows(&rows.into_iter().collect::<Result<Vec<_>>>()?, labels)
}

fn prepare_all(encoder: &HicoEncoder, seqs: &[SkeletonSequence], view: View) -> Result<Vec<SkeletonSequence>> {
    let cfg = &encoder.cfg;
    if let Some(s) = seqs.iter().find(|s| s.joints() != cfg.joints) {
        return arg(format!("sequence has {} joints, encoder expects {}", s.joints(), cfg.joints));
    }
    let topo = SkeletonTopology::default_for(cfg.joints);
    parallel::map_indexed(seqs, |_, s| prepare(s, view, &topo, cfg.out_frames)).into_iter().collect()
}

/// Instance features (before projection) of `seqs` under `store`.
pub fn embed_sequences(encoder: &HicoEncoder, store: &ParamStore, seqs: &[SkeletonSequence], view: View) -> Result<EmbeddingTable> {
    let labels = labels_of(seqs)?;
    embed_prepared(encoder, store, &prepare_all(encoder, seqs, view)?, labels)
}

/// Frozen query-encoder features of labelled sequences.
pub fn extract_embeddings(ckpt: &Checkpoint, seqs: &[SkeletonSequence], view: View) -> Result<EmbeddingTable> {
    let model = ckpt.model()?;
    embed_sequences(&model.encoder, &ckpt.query, seqs, view)
}

pub fn extract_split(ckpt: &Checkpoint, manifest: &DatasetManifest, split: Split, view: View) -> Result<EmbeddingTable> {
    extract_embeddings(ckpt, &manifest.load_split(split)?, view)
}

/// SGD settings shared by the linear probe and fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            lr: 2.0,
            lr_decay_epochs: vec![50, 70],
            lr_decay_factor: 0.1,
            momentum: 0.9,
            batch_size: 64,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || !(self.lr > 0.0)
            || !(self.lr_decay_factor > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || !(self.weight_decay >= 0.0)
        {
            return Err(Error::Config(format!("invalid optimiser settings {self:?}")));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_decay(self.lr, self.lr_decay_factor, &self.lr_decay_epochs, epoch)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn accuracy(pred: &[usize], labels: &[u32]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| **p == **l as usize).count() as f64 / labels.len() as f64
}

/// A trained affine classifier `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl LinearClassifier {
    pub fn logits(&self, x: &Matrix) -> Matrix {
        let mut z = x.matmul(&self.w);
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        z
    }

    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        let z = self.logits(x);
        (0..z.rows()).map(|r| argmax(z.row(r))).collect()
    }
}

/// Trains a zero-initialised softmax classifier on frozen features.
pub fn train_linear(x: &Matrix, labels: &[u32], classes: usize, cfg: &ProbeConfig) -> Result<LinearClassifier> {
    cfg.validate()?;
    let (n, d) = x.shape();
    if labels.len() != n || classes == 0 {
        return arg("features, labels and class count disagree");
    }
    if labels.iter().any(|&l| l as usize >= classes) {
        return arg("label out of range");
    }
    let distinct = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        log::warn!("linear probe trained on {distinct} distinct class(es)");
    }
    let mut clf = LinearClassifier { w: Matrix::zeros(d, classes), b: vec![0.0; classes] };
    let mut vw = Matrix::zeros(d, classes);
    let mut vb = vec![0.0; classes];
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        for chunk in order.chunks(cfg.batch_size) {
            let xb = Matrix::from_fn(chunk.len(), d, |r, c| x.get(chunk[r], c));
            let mut g = clf.logits(&xb);
            let scale = 1.0 / chunk.len() as f64;
            for (r, &i) in chunk.iter().enumerate() {
                let row = g.row_mut(r);
                softmax_in_place(row);
                row[labels[i] as usize] -= 1.0;
                row.iter_mut().for_each(|v| *v *= scale);
            }
            let gw = xb.matmul_t(true, &g, false);
            for ((w, v), gv) in clf.w.data_mut().iter_mut().zip(vw.data_mut()).zip(gw.data()) {
                *v = cfg.momentum * *v + gv + cfg.weight_decay * *w;
                *w -= lr * *v;
            }
            for k in 0..classes {
                let gb: f64 = (0..chunk.len()).map(|r| g.get(r, k)).sum();
                vb[k] = cfg.momentum * vb[k] + gb + cfg.weight_decay * clf.b[k];
                clf.b[k] -= lr * vb[k];
            }
        }
    }
    Ok(clf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Test-set logits, for multi-view fusion.
    pub logits: Matrix,
}

pub fn linear_probe(train: &EmbeddingTable, test: &EmbeddingTable, cfg: &ProbeConfig) -> Result<ProbeResult> {
    if train.dim() != test.dim() {
        return arg(format!("train width {} differs from test width {}", train.dim(), test.dim()));
    }
    if train.is_empty() {
        return arg("empty training table");
    }
    let classes = train.num_classes().max(test.num_classes());
    let clf = train_linear(&train.to_matrix(), &train.labels, classes, cfg)?;
    let logits = clf.logits(&test.to_matrix());
    let predictions: Vec<usize> = (0..logits.rows()).map(|r| argmax(logits.row(r))).collect();
    Ok(ProbeResult { accuracy: accuracy(&predictions, &test.labels), predictions, logits })
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// `cos(q_i, g_j)`; pairs involving a zero-norm row score `-inf`.
pub fn cosine_scores(query: &EmbeddingTable, gallery: &EmbeddingTable) -> Result<Matrix> {
    if query.dim() != gallery.dim() {
        return arg(format!("query width {} differs from gallery width {}", query.dim(), gallery.dim()));
    }
    let gnorm: Vec<f64> = (0..gallery.len()).map(|j| norm(gallery.row(j))).collect();
    let zero_rows = gnorm.iter().filter(|&&n| n == 0.0).count();
    if zero_rows > 0 {
        log::warn!("{zero_rows} gallery rows have zero norm");
    }
    let rows = parallel::map_range(query.len(), |i| {
        let q = query.row(i);
        let qn = norm(q);
        (0..gallery.len())
            .map(|j| {
                if qn == 0.0 || gnorm[j] == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let dot: f64 = q.iter().zip(gallery.row(j)).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                dot / (qn * gnorm[j])
            })
            .collect::<Vec<f64>>()
    });
    Ok(Matrix::from_vec(query.len(), gallery.len(), rows.concat()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub accuracy: f64,
    pub nearest: Vec<usize>,
}

/// Nearest gallery row per query from a score matrix.
pub fn retrieve_from_scores(scores: &Matrix, query_labels: &[u32], gallery_labels: &[u32]) -> Result<RetrievalResult> {
    if scores.rows() != query_labels.len() || scores.cols() != gallery_labels.len() {
        return arg("score matrix does not match label counts");
    }
    if gallery_labels.is_empty() {
        return arg("empty gallery");
    }
    let nearest: Vec<usize> = (0..scores.rows()).map(|i| argmax(scores.row(i))).collect();
    let pred: Vec<usize> = nearest.iter().map(|&j| gallery_labels[j] as usize).collect();
    Ok(RetrievalResult { accuracy: accuracy(&pred, query_labels), nearest })
}

pub fn retrieve_1nn(query: &EmbeddingTable, gallery: &EmbeddingTable) -> Result<RetrievalResult> {
    if gallery.is_empty() {
        return arg("empty gallery");
    }
    let scores = cosine_scores(query, gallery)?;
    retrieve_from_scores(&scores, &query.labels, &gallery.labels)
}

/// Elementwise mean of aligned score matrices.
pub fn fuse_view_scores(tables: &[Matrix]) -> Result<Matrix> {
    let first = tables.first().ok_or_else(|| Error::Argument("no score tables to fuse".into()))?;
    if tables.iter().any(|t| t.shape() != first.shape()) {
        return arg("score tables have different shapes");
    }
    let mut out = first.clone();
    for t in &tables[1..] {
        out.add_assign(t);
    }
    out.scale_assign(1.0 / tables.len() as f64);
    Ok(out)
}

/// Mean over classes of the worst `(s_i + s_j) / |c_i - c_j|`.
/// Coincident centroids give `+inf`.
pub fn davies_bouldin(table: &EmbeddingTable) -> Result<f64> {
    davies_bouldin_rows(&table.to_matrix(), &table.labels)
}

/// [`davies_bouldin`] on double-precision rows.
pub fn davies_bouldin_rows(x: &Matrix, labels: &[u32]) -> Result<f64> {
    let (n, d) = x.shape();
    if labels.len() != n {
        return arg("one label per row required");
    }
    let k = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut centroids = vec![vec![0.0f64; d]; k];
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let c = labels[i] as usize;
        counts[c] += 1;
        for (a, &v) in centroids[c].iter_mut().zip(x.row(i)) {
            *a += v;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return arg("Davies-Bouldin index needs at least two non-empty classes");
    }
    for &c in &present {
        centroids[c].iter_mut().for_each(|v| *v /= counts[c] as f64);
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut scatter = vec![0.0f64; k];
    for i in 0..n {
        let c = labels[i] as usize;
        scatter[c] += dist(x.row(i), &centroids[c]);
    }
    for &c in &present {
        scatter[c] /= counts[c] as f64;
    }
    let mut total = 0.0;
    for &i in &present {
        let mut worst = 0.0f64;
        for &j in present.iter().filter(|&&j| j != i) {
            let sep = dist(&centroids[i], &centroids[j]);
            if sep == 0.0 {
                log::warn!("classes {i} and {j} have coincident centroids");
                return Ok(f64::INFINITY);
            }
            worst = worst.max((scatter[i] + scatter[j]) / sep);
        }
        total += worst;
    }
    Ok(total / present.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub schedule: ProbeConfig,
    pub label_fraction: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { schedule: ProbeConfig { lr: 0.1, ..ProbeConfig::default() }, label_fraction: 1.0 }
    }
}

/// Seeded class-stratified subset of `labels`, returned sorted. Falls back
/// to a plain random draw when some class would receive no items.
pub fn labelled_subset(labels: &[u32], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return arg(format!("label fraction must be in (0, 1], got {fraction}"));
    }
    let n = labels.len();
    let total = (fraction * n as f64).round() as usize;
    if total == 0 {
        return arg(format!("label fraction {fraction} of {n} items selects nothing"));
    }
    if fraction == 1.0 {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let take: Vec<usize> = by_class.iter().map(|items| (fraction * items.len() as f64).round() as usize).collect();
    let mut out = if by_class.iter().zip(&take).any(|(items, &t)| !items.is_empty() && t == 0) {
        log::warn!("label fraction {fraction} too small to stratify; drawing without stratification");
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all.truncate(total);
        all
    } else {
        let mut out = Vec::new();
        for (mut items, t) in by_class.into_iter().zip(take) {
            items.shuffle(&mut rng);
            out.extend_from_slice(&items[..t]);
        }
        out
    };
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneResult {
    pub accuracy: f64,
    pub subset: Vec<usize>,
}

const CLASSIFIER_SET: u8 = 2;

/// Trains encoder and a zero-initialised linear classifier together on a
/// labelled subset of `train`, then scores `test`.
pub fn finetune(
    ckpt: &Checkpoint,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    view: View,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    let sched = &cfg.schedule;
    sched.validate()?;
    let model = ckpt.model()?;
    let enc = &model.encoder;
    let ecfg = &enc.cfg;
    let train_labels = labels_of(train)?;
    let test_labels = labels_of(test)?;
    let subset = labelled_subset(&train_labels, cfg.label_fraction, sched.seed)?;
    let classes = train_labels.iter().chain(&test_labels).map(|&l| l as usize + 1).max().unwrap_or(0);

    let train_x = prepare_all(enc, train, view)?;
    let test_x = prepare_all(enc, test, view)?;

    let mut params = ckpt.query.clone();
    let mut head_store = ParamStore::new();
    let head =
        Linear::new(&mut Builder::new(&mut head_store, &mut ChaCha8Rng::seed_from_u64(0)), "classifier", ecfg.instance_width(), classes);
    head_store.values_mut().iter_mut().for_each(|m| m.data_mut().fill(0.0));
    let mut enc_buf = ParamGrads::zeros_like(&params);
    let mut head_buf = ParamGrads::zeros_like(&head_store);

    let mut order = subset.clone();
    for epoch in 0..sched.epochs {
        let lr = sched.lr_at(epoch);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sched.seed.wrapping_add(epoch as u64)));
        for chunk in order.chunks(sched.batch_size) {
            let outs = parallel::map_indexed(chunk, |_, &i| -> Result<(ParamGrads, ParamGrads)> {
                let mut tape = Tape::new();
                let v = enc.forward(&mut tape, Bind::new(&params, 0), &train_x[i])?;
                let z = head.forward(&mut tape, Bind::new(&head_store, CLASSIFIER_SET), v.instance);
                // d(cross-entropy)/dz = softmax(z) - onehot, injected as a constant weight
                let mut g = tape.value(z).data().to_vec();
                softmax_in_place(&mut g);
                g[train_labels[i] as usize] -= 1.0;
                let gv = tape.input(Matrix::row_vector(g));
                let prod = tape.mul(z, gv);
                let root = tape.sum(prod);
                let grads = tape.backward(root);
                Ok((grads.param_grads(0, &params), grads.param_grads(CLASSIFIER_SET, &head_store)))
            });
            let mut ge = ParamGrads::zeros_like(&params);
            let mut gh = ParamGrads::zeros_like(&head_store);
            for out in outs {
                let (a, b) = out?;
                ge.add_assign(&a);
                gh.add_assign(&b);
            }
            let scale = 1.0 / chunk.len() as f64;
            ge.scale(scale);
            gh.scale(scale);
            sgd_update(&mut params, &ge, &mut enc_buf, lr, sched.momentum, sched.weight_decay)?;
            sgd_update(&mut head_store, &gh, &mut head_buf, lr, sched.momentum, sched.weight_decay)?;
        }
        log::debug!("finetune epoch {}/{} lr {lr}", epoch + 1, sched.epochs);
    }

    let feats = embed_prepared(enc, &params, &test_x, test_labels.clone())?;
    let clf = LinearClassifier { w: head_store.get(head.w).clone(), b: head_store.get(head.b).data().to_vec() };
    let pred = clf.predict(&feats.to_matrix());
    Ok(FinetuneResult { accuracy: accuracy(&pred, &test_labels), subset })
}

/// `key = value` lines.
pub fn format_metrics(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
