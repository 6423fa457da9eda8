//! Desk-scale unlearning testbed: a tiny softmax language model over token
//! ids, synthetic forget/retain corpora with planted secrets, and
//! memorization metrics.
//!
//! The model conditions on the single previous token: embedding row, one
//! tanh hidden layer, softmax output. Because the context space is just the
//! vocabulary, full-batch losses and gradients reduce to per-context tables
//! weighted by transition counts, which keeps finite-difference validation
//! and multi-seed experiments cheap.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vecmath::ParamVector;

/// Model shape. Parameters pack as
/// `[embedding (v*h) | hidden (h*h) | output (h*v) | hidden bias (h) | output bias (v)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ToyLmConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            hidden_dim: 16,
        }
    }
}

impl ToyLmConfig {
    pub fn params_dim(&self) -> usize {
        let (v, h) = (self.vocab_size, self.hidden_dim);
        v * h + h * h + h * v + h + v
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let (v, h) = (self.vocab_size, self.hidden_dim);
        let emb_end = v * h;
        let wh_end = emb_end + h * h;
        let wo_end = wh_end + h * v;
        let bh_end = wo_end + h;
        (emb_end, wh_end, wo_end, bh_end)
    }
}

/// Layers exposed by the activation accessor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    EmbeddingOut,
    HiddenOut,
}

/// The tiny language model: a shape and a flat parameter vector.
#[derive(Debug, Clone)]
pub struct ToyLm {
    cfg: ToyLmConfig,
    params: ParamVector,
}

impl ToyLm {
    pub fn from_params(cfg: ToyLmConfig, params: ParamVector) -> Result<Self> {
        if params.dim() != cfg.params_dim() {
            return Err(Error::DimensionMismatch {
                expected: cfg.params_dim(),
                got: params.dim(),
            });
        }
        Ok(Self { cfg, params })
    }

    /// Seeded Gaussian init (scale 0.2) for the weights, zero biases.
    pub fn new_seeded(cfg: ToyLmConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70_11_4d_01);
        let (_, _, wo_end, _) = cfg.offsets();
        let dim = cfg.params_dim();
        let mut values = vec![0.0; dim];
        for v in values.iter_mut().take(wo_end) {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            *v = 0.2 * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
        Self {
            cfg,
            params: ParamVector::new(values).expect("finite init"),
        }
    }

    /// All-zero parameters: the output distribution is exactly uniform for
    /// every context.
    pub fn new_zeros(cfg: ToyLmConfig) -> Self {
        Self {
            cfg,
            params: ParamVector::zeros(cfg.params_dim()),
        }
    }

    pub fn cfg(&self) -> ToyLmConfig {
        self.cfg
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn tables(&self) -> Tables {
        Tables::compute(self.cfg, self.params.as_slice())
    }

    /// Hidden representation of a single context token at the given layer.
    pub fn activation(&self, token: u32, layer: Layer) -> Vec<f64> {
        let t = self.tables();
        t.activation(self.cfg, self.params.as_slice(), token, layer)
            .to_vec()
    }
}

/// Per-context forward pass for every context token at once:
/// `h[v] = tanh(E[v] Wh + bh)`, `logp[v] = log_softmax(h[v] Wo + bo)`.
pub struct Tables {
    /// vocab x hidden, tanh activations.
    pub h: Vec<f64>,
    /// vocab x vocab, log probabilities.
    pub logp: Vec<f64>,
}

impl Tables {
    pub fn compute(cfg: ToyLmConfig, params: &[f64]) -> Self {
        let (v, hd) = (cfg.vocab_size, cfg.hidden_dim);
        let (emb_end, wh_end, wo_end, bh_end) = cfg.offsets();
        let emb = &params[..emb_end];
        let wh = &params[emb_end..wh_end];
        let wo = &params[wh_end..wo_end];
        let bh = &params[wo_end..bh_end];
        let bo = &params[bh_end..];

        let mut h = vec![0.0; v * hd];
        for ctx in 0..v {
            let e = &emb[ctx * hd..(ctx + 1) * hd];
            let hrow = &mut h[ctx * hd..(ctx + 1) * hd];
            for (j, hj) in hrow.iter_mut().enumerate() {
                let mut acc = bh[j];
                for (k, ek) in e.iter().enumerate() {
                    acc += ek * wh[k * hd + j];
                }
                *hj = acc.tanh();
            }
        }

        let mut logp = vec![0.0; v * v];
        for ctx in 0..v {
            let hrow = &h[ctx * hd..(ctx + 1) * hd];
            let row = &mut logp[ctx * v..(ctx + 1) * v];
            for (y, ry) in row.iter_mut().enumerate() {
                let mut acc = bo[y];
                for (j, hj) in hrow.iter().enumerate() {
                    acc += hj * wo[j * v + y];
                }
                *ry = acc;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for ry in row.iter_mut() {
                *ry -= lse;
            }
        }
        Self { h, logp }
    }

    pub fn log_prob(&self, vocab: usize, ctx: u32, next: u32) -> f64 {
        self.logp[ctx as usize * vocab + next as usize]
    }

    /// Log probability of a full sequence: the sum over its transitions.
    pub fn seq_log_prob(&self, vocab: usize, seq: &[u32]) -> f64 {
        seq.windows(2)
            .map(|w| self.log_prob(vocab, w[0], w[1]))
            .sum()
    }

    pub fn greedy_next(&self, vocab: usize, ctx: u32) -> u32 {
        let row = &self.logp[ctx as usize * vocab..(ctx as usize + 1) * vocab];
        let mut best = 0usize;
        for (i, x) in row.iter().enumerate() {
            if *x > row[best] {
                best = i;
            }
        }
        best as u32
    }

    fn activation<'a>(
        &'a self,
        cfg: ToyLmConfig,
        params: &'a [f64],
        token: u32,
        layer: Layer,
    ) -> &'a [f64] {
        let hd = cfg.hidden_dim;
        let t = token as usize;
        match layer {
            Layer::EmbeddingOut => &params[t * hd..(t + 1) * hd],
            Layer::HiddenOut => &self.h[t * hd..(t + 1) * hd],
        }
    }
}

/// Backpropagates per-context logit gradients (`dlogits`, vocab x vocab,
/// already including softmax) into a flat parameter gradient.
pub fn backprop_logits(cfg: ToyLmConfig, params: &[f64], tables: &Tables, dlogits: &[f64]) -> Vec<f64> {
    let (v, hd) = (cfg.vocab_size, cfg.hidden_dim);
    let (emb_end, wh_end, wo_end, bh_end) = cfg.offsets();
    let emb = &params[..emb_end];
    let wh = &params[emb_end..wh_end];
    let wo = &params[wh_end..wo_end];

    let mut grad = vec![0.0; cfg.params_dim()];
    let (g_emb, rest) = grad.split_at_mut(emb_end);
    let (g_wh, rest) = rest.split_at_mut(wh_end - emb_end);
    let (g_wo, rest) = rest.split_at_mut(wo_end - wh_end);
    let (g_bh, g_bo) = rest.split_at_mut(bh_end - wo_end);

    let mut dpre = vec![0.0; hd];
    for ctx in 0..v {
        let dl = &dlogits[ctx * v..(ctx + 1) * v];
        if dl.iter().all(|&x| x == 0.0) {
            continue;
        }
        let hrow = &tables.h[ctx * hd..(ctx + 1) * hd];
        let e = &emb[ctx * hd..(ctx + 1) * hd];
        for (y, dly) in dl.iter().enumerate() {
            if *dly == 0.0 {
                continue;
            }
            g_bo[y] += dly;
            for (j, hj) in hrow.iter().enumerate() {
                g_wo[j * v + y] += hj * dly;
            }
        }
        for (j, d) in dpre.iter_mut().enumerate() {
            let mut dh = 0.0;
            for (y, dly) in dl.iter().enumerate() {
                dh += wo[j * v + y] * dly;
            }
            *d = dh * (1.0 - hrow[j] * hrow[j]);
        }
        accumulate_hidden(cfg, e, wh, &dpre, ctx, g_emb, g_wh, g_bh);
    }
    grad
}

/// Backpropagates per-context activation gradients (`dact`, vocab x hidden)
/// at the given layer into a flat parameter gradient.
pub fn backprop_activation(
    cfg: ToyLmConfig,
    params: &[f64],
    tables: &Tables,
    layer: Layer,
    dact: &[f64],
) -> Vec<f64> {
    let (v, hd) = (cfg.vocab_size, cfg.hidden_dim);
    let (emb_end, wh_end, _, bh_end) = cfg.offsets();
    let emb = &params[..emb_end];
    let wh = &params[emb_end..wh_end];

    let mut grad = vec![0.0; cfg.params_dim()];
    let (g_emb, rest) = grad.split_at_mut(emb_end);
    let (g_wh, rest) = rest.split_at_mut(wh_end - emb_end);
    let wo_len = cfg.hidden_dim * cfg.vocab_size;
    let (_g_wo, rest) = rest.split_at_mut(wo_len);
    let (g_bh, _g_bo) = rest.split_at_mut(bh_end - (wh_end + wo_len));

    let mut dpre = vec![0.0; hd];
    for ctx in 0..v {
        let da = &dact[ctx * hd..(ctx + 1) * hd];
        if da.iter().all(|&x| x == 0.0) {
            continue;
        }
        match layer {
            Layer::EmbeddingOut => {
                for (k, d) in da.iter().enumerate() {
                    g_emb[ctx * hd + k] += d;
                }
            }
            Layer::HiddenOut => {
                let hrow = &tables.h[ctx * hd..(ctx + 1) * hd];
                let e = &emb[ctx * hd..(ctx + 1) * hd];
                for (j, d) in dpre.iter_mut().enumerate() {
                    *d = da[j] * (1.0 - hrow[j] * hrow[j]);
                }
                accumulate_hidden(cfg, e, wh, &dpre, ctx, g_emb, g_wh, g_bh);
            }
        }
    }
    grad
}

fn accumulate_hidden(
    cfg: ToyLmConfig,
    e: &[f64],
    wh: &[f64],
    dpre: &[f64],
    ctx: usize,
    g_emb: &mut [f64],
    g_wh: &mut [f64],
    g_bh: &mut [f64],
) {
    let hd = cfg.hidden_dim;
    for (j, d) in dpre.iter().enumerate() {
        g_bh[j] += d;
        for (k, ek) in e.iter().enumerate() {
            g_wh[k * hd + j] += ek * d;
        }
    }
    for (k, ge) in g_emb[ctx * hd..(ctx + 1) * hd].iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, d) in dpre.iter().enumerate() {
            acc += wh[k * hd + j] * d;
        }
        *ge += acc;
    }
}

// ---------------------------------------------------------------------------
// Corpora
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Forget,
    Retain,
}

/// A planted prompt -> continuation pair, present only in the forget corpus.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Secret {
    pub prompt: Vec<u32>,
    pub continuation: Vec<u32>,
}

/// Token-id sequences plus, for the forget corpus, the planted secrets.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDataset {
    pub sequences: Vec<Vec<u32>>,
    pub role: DatasetRole,
    pub secrets: Vec<Secret>,
}

impl TokenDataset {
    pub fn new(sequences: Vec<Vec<u32>>, role: DatasetRole, secrets: Vec<Secret>) -> Self {
        Self {
            sequences,
            role,
            secrets,
        }
    }
}

/// Corpus generator settings. Secrets occupy a reserved tail of the
/// vocabulary (four tokens each, forming a closed deterministic cycle) so the
/// bigram contexts of a secret never collide with the retain chain.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub n_retain: usize,
    pub n_forget: usize,
    pub n_secrets: usize,
    pub seq_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: 32,
            n_retain: 200,
            n_forget: 50,
            n_secrets: 5,
            seq_len: 12,
        }
    }
}

const SECRET_TOKENS: usize = 4;
const SPLICE_LEN: usize = 5; // prompt (2) + continuation (3)

/// Builds the reserved-token secrets for a config; deterministic, no RNG.
pub fn planted_secrets(cfg: &CorpusConfig) -> Vec<Secret> {
    let chain = cfg.vocab_size - SECRET_TOKENS * cfg.n_secrets;
    (0..cfg.n_secrets)
        .map(|i| {
            let base = (chain + SECRET_TOKENS * i) as u32;
            Secret {
                prompt: vec![base, base + 1],
                continuation: vec![base + 2, base + 3, base],
            }
        })
        .collect()
}

/// Samples the retain and forget corpora from a seeded first-order Markov
/// chain; forget sequences carry one spliced secret each (round-robin over
/// the planted secrets). Byte-identical output for identical configs.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<(TokenDataset, TokenDataset)> {
    if cfg.n_secrets > cfg.n_forget {
        return Err(Error::invalid(
            "n_secrets",
            format!("{} exceeds n_forget {}", cfg.n_secrets, cfg.n_forget),
        ));
    }
    if cfg.seq_len < 2 {
        return Err(Error::invalid("seq_len", "must be at least 2"));
    }
    if cfg.n_secrets > 0 && cfg.seq_len < SPLICE_LEN + 1 {
        return Err(Error::invalid(
            "seq_len",
            format!("must be at least {} to hold a secret splice", SPLICE_LEN + 1),
        ));
    }
    let reserved = SECRET_TOKENS * cfg.n_secrets;
    if cfg.vocab_size < reserved + 4 {
        return Err(Error::invalid(
            "vocab_size",
            format!(
                "{} too small: {} reserved tokens plus >= 4 chain states needed",
                cfg.vocab_size, reserved
            ),
        ));
    }
    let chain = cfg.vocab_size - reserved;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0_2b_05_01);

    // concentrated transitions: four successors per state with fixed mass
    let base_probs = [0.6, 0.2, 0.15, 0.05];
    let mut successors = vec![[0usize; 4]; chain];
    let mut probs = vec![[0.0f64; 4]; chain];
    for s in 0..chain {
        let mut pool: Vec<usize> = (0..chain).collect();
        pool.shuffle(&mut rng);
        successors[s].copy_from_slice(&pool[..4]);
        let mut p = base_probs;
        p.shuffle(&mut rng);
        probs[s] = p;
    }

    let sample_seq = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let mut seq = Vec::with_capacity(cfg.seq_len);
        seq.push(rng.gen_range(0..chain) as u32);
        for _ in 1..cfg.seq_len {
            let s = *seq.last().unwrap() as usize;
            let draw: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            let mut next = successors[s][3];
            for (succ, p) in successors[s].iter().zip(&probs[s]) {
                acc += p;
                if draw < acc {
                    next = *succ;
                    break;
                }
            }
            seq.push(next as u32);
        }
        seq
    };

    let retain_seqs: Vec<Vec<u32>> = (0..cfg.n_retain).map(|_| sample_seq(&mut rng)).collect();

    let secrets = planted_secrets(cfg);
    let forget_seqs: Vec<Vec<u32>> = (0..cfg.n_forget)
        .map(|i| {
            let mut seq = sample_seq(&mut rng);
            if cfg.n_secrets > 0 {
                let secret = &secrets[i % cfg.n_secrets];
                let pos = rng.gen_range(1..=cfg.seq_len - SPLICE_LEN);
                let splice: Vec<u32> = secret
                    .prompt
                    .iter()
                    .chain(&secret.continuation)
                    .copied()
                    .collect();
                seq[pos..pos + SPLICE_LEN].copy_from_slice(&splice);
            }
            seq
        })
        .collect();

    Ok((
        TokenDataset::new(retain_seqs, DatasetRole::Retain, Vec::new()),
        TokenDataset::new(forget_seqs, DatasetRole::Forget, secrets),
    ))
}

/// Fraction of retain sequences held out from training (the tail).
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// Index splitting retain sequences into train / held-out parts.
pub fn holdout_split(n_retain: usize) -> usize {
    n_retain - (n_retain as f64 * HOLDOUT_FRACTION).round() as usize
}

/// Transition counts of a sequence list, the sufficient statistics for every
/// per-token loss here.
#[derive(Debug, Clone)]
pub struct TransitionCounts {
    pub counts: Vec<f64>,
    pub total: f64,
    pub vocab: usize,
}

impl TransitionCounts {
    pub fn from_sequences(seqs: &[Vec<u32>], vocab: usize) -> Self {
        let mut counts = vec![0.0; vocab * vocab];
        let mut total = 0.0;
        for s in seqs {
            for w in s.windows(2) {
                counts[w[0] as usize * vocab + w[1] as usize] += 1.0;
                total += 1.0;
            }
        }
        Self {
            counts,
            total,
            vocab,
        }
    }
}

/// Per-token mean cross-entropy over transition counts, with gradient.
pub fn cross_entropy_counts(
    cfg: ToyLmConfig,
    params: &[f64],
    counts: &TransitionCounts,
) -> Result<(f64, Vec<f64>)> {
    if counts.total == 0.0 {
        return Err(Error::EmptyInput {
            what: "cross entropy over an empty batch",
        });
    }
    assert_eq!(counts.vocab, cfg.vocab_size, "vocabulary mismatch");
    let v = cfg.vocab_size;
    let tables = Tables::compute(cfg, params);
    let mut value = 0.0;
    let mut dlogits = vec![0.0; v * v];
    for ctx in 0..v {
        let row = &counts.counts[ctx * v..(ctx + 1) * v];
        let rowtot: f64 = row.iter().sum();
        if rowtot == 0.0 {
            continue;
        }
        let lp = &tables.logp[ctx * v..(ctx + 1) * v];
        let dl = &mut dlogits[ctx * v..(ctx + 1) * v];
        for (y, (n, l)) in row.iter().zip(lp).enumerate() {
            value -= n * l;
            dl[y] = (rowtot * l.exp() - n) / counts.total;
        }
    }
    let grad = backprop_logits(cfg, params, &tables, &dlogits);
    Ok((value / counts.total, grad))
}

/// Per-epoch training record from [`finetune`].
#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: ToyLm,
    /// Cross-entropy at the start of each epoch.
    pub loss_history: Vec<f64>,
}

/// Plain full-batch gradient descent on cross-entropy over the union of the
/// retain training split and the whole forget corpus.
///
/// Zero epochs returns the model unchanged. Aborts with
/// [`Error::TrainingDiverged`] if the loss leaves the finite range.
pub fn finetune(
    model: &ToyLm,
    retain: &TokenDataset,
    forget: &TokenDataset,
    epochs: usize,
    eta: f64,
) -> Result<FinetuneOutcome> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::invalid("eta", format!("must be finite, got {eta}")));
    }
    let cfg = model.cfg;
    let split = holdout_split(retain.sequences.len());
    let mut union: Vec<Vec<u32>> = retain.sequences[..split].to_vec();
    union.extend_from_slice(&forget.sequences);
    let counts = TransitionCounts::from_sequences(&union, cfg.vocab_size);

    let mut params = model.params.as_slice().to_vec();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (value, grad) = cross_entropy_counts(cfg, &params, &counts)?;
        if !value.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: value });
        }
        history.push(value);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= eta * g;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch,
                loss: f64::NAN,
            });
        }
    }
    Ok(FinetuneOutcome {
        model: ToyLm::from_params(cfg, ParamVector::new(params)?)?,
        loss_history: history,
    })
}

// ---------------------------------------------------------------------------
// Memorization metrics
// ---------------------------------------------------------------------------

/// Desk-scale memorization metrics, all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MemorizationReport {
    /// Fraction of secret prompts whose greedy decode reproduces the full
    /// continuation.
    pub verb_mem: f64,
    /// Mean model probability of the true secret continuations.
    pub know_mem_forget: f64,
    /// Mean top-1 next-token accuracy on the held-out retain split.
    pub know_mem_retain: f64,
}

/// Probability a uniform model assigns to a length-`len` continuation; the
/// chance floor for `know_mem_forget`.
pub fn uniform_chance(vocab: usize, len: usize) -> f64 {
    (1.0 / vocab as f64).powi(len as i32)
}

/// Scores the model on the held-out retain split and the forget secrets.
pub fn evaluate(model: &ToyLm, retain: &TokenDataset, forget: &TokenDataset) -> MemorizationReport {
    let cfg = model.cfg;
    let v = cfg.vocab_size;
    let tables = model.tables();

    let (verb_mem, know_mem_forget) = if forget.secrets.is_empty() {
        (0.0, 0.0)
    } else {
        let mut hits = 0usize;
        let mut prob_sum = 0.0;
        for secret in &forget.secrets {
            let mut ctx = *secret.prompt.last().expect("nonempty prompt");
            let mut ok = true;
            let mut logp = 0.0;
            for &target in &secret.continuation {
                if tables.greedy_next(v, ctx) != target {
                    ok = false;
                }
                logp += tables.log_prob(v, ctx, target);
                ctx = target;
            }
            hits += ok as usize;
            prob_sum += logp.exp();
        }
        (
            hits as f64 / forget.secrets.len() as f64,
            prob_sum / forget.secrets.len() as f64,
        )
    };

    let split = holdout_split(retain.sequences.len());
    let holdout = &retain.sequences[split..];
    let mut total = 0usize;
    let mut correct = 0usize;
    for seq in holdout {
        for w in seq.windows(2) {
            correct += (tables.greedy_next(v, w[0]) == w[1]) as usize;
            total += 1;
        }
    }
    let know_mem_retain = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };

    MemorizationReport {
        verb_mem,
        know_mem_forget,
        know_mem_retain,
    }
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

/// One sequence per line, space-separated decimal token ids.
pub fn write_sequences(dataset: &TokenDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for seq in &dataset.sequences {
        let line: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sequences(path: &Path, role: DatasetRole, vocab_size: usize) -> Result<TokenDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut sequences = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let seq = parse_ids(&line, idx + 1, vocab_size)?;
        sequences.push(seq);
    }
    Ok(TokenDataset::new(sequences, role, Vec::new()))
}

/// `prompt_ids<TAB>continuation_ids` per line, ids space-separated.
pub fn write_secrets(secrets: &[Secret], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in secrets {
        let p: Vec<String> = s.prompt.iter().map(|t| t.to_string()).collect();
        let c: Vec<String> = s.continuation.iter().map(|t| t.to_string()).collect();
        writeln!(w, "{}\t{}", p.join(" "), c.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_secrets(path: &Path, vocab_size: usize) -> Result<Vec<Secret>> {
    let reader = BufReader::new(File::open(path)?);
    let mut secrets = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (p, c) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno,
            message: "expected prompt<TAB>continuation".to_string(),
        })?;
        secrets.push(Secret {
            prompt: parse_ids(p, lineno, vocab_size)?,
            continuation: parse_ids(c, lineno, vocab_size)?,
        });
    }
    Ok(secrets)
}

fn parse_ids(text: &str, line: usize, vocab_size: usize) -> Result<Vec<u32>> {
    text.split_whitespace()
        .map(|tok| {
            let id: u32 = tok.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad token id {tok:?}"),
            })?;
            if id as usize >= vocab_size {
                return Err(Error::Parse {
                    line,
                    message: format!("token id {id} out of vocabulary ({vocab_size})"),
                });
            }
            Ok(id)
        })
        .collect()
}
