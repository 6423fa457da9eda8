//! Unlearning losses over the toy language model, each with an analytic
//! gradient and an [`Objective`] adapter for the update rules.
//!
//! Per-token losses (cross-entropy and its negation) average over
//! transitions; the preference losses treat each sequence as one sample with
//! `log pi(y|x)` the sum of its per-token conditionals. Everything is
//! full-batch by default; minibatching is available by constructing losses
//! over a subset of sequences.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::toylm::{
    backprop_activation, backprop_logits, cross_entropy_counts, Layer, Tables, ToyLm, ToyLmConfig,
    TransitionCounts,
};
use crate::vecmath::ParamVector;

/// Loss selector, constructible from harness configs by kind name.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    CrossEntropyRetain,
    GaForget,
    NpoForget {
        beta: f64,
    },
    SimNpoForget {
        beta: f64,
        #[serde(default)]
        alpha: f64,
    },
    RmuRetain {
        layer: Layer,
    },
    RmuForget {
        layer: Layer,
        c: f64,
        seed: u64,
    },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::NpoForget { beta } => {
                if !(*beta > 0.0) {
                    return Err(Error::invalid("beta", format!("must be positive, got {beta}")));
                }
            }
            LossKind::SimNpoForget { beta, alpha } => {
                if !(*beta > 0.0) {
                    return Err(Error::invalid("beta", format!("must be positive, got {beta}")));
                }
                if !(*alpha >= 0.0) {
                    return Err(Error::invalid(
                        "alpha",
                        format!("must be nonnegative, got {alpha}"),
                    ));
                }
            }
            LossKind::RmuForget { c, .. } => {
                if !(*c > 0.0) {
                    return Err(Error::invalid("c", format!("must be positive, got {c}")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether this loss needs a frozen reference model.
    pub fn needs_reference(&self) -> bool {
        matches!(self, LossKind::NpoForget { .. } | LossKind::RmuRetain { .. })
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_batch(seqs: &[Vec<u32>], vocab: usize) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::EmptyInput {
            what: "loss over an empty batch",
        });
    }
    for s in seqs {
        if let Some(&id) = s.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::invalid(
                "batch",
                format!("token id {id} out of vocabulary ({vocab})"),
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Reference model
// ---------------------------------------------------------------------------

/// Frozen copy of the pre-unlearning parameters plus the per-sequence caches
/// the reference-dependent losses consume. Never mutated after construction.
pub struct ReferenceModel {
    cfg: ToyLmConfig,
    params: ParamVector,
    sequences: Arc<Vec<Vec<u32>>>,
    seq_log_probs: Vec<f64>,
    pooled_embedding: Vec<Vec<f64>>,
    pooled_hidden: Vec<Vec<f64>>,
}

impl ReferenceModel {
    pub fn new(model: &ToyLm, sequences: Arc<Vec<Vec<u32>>>) -> Result<Self> {
        let cfg = model.cfg();
        check_batch(&sequences, cfg.vocab_size)?;
        let tables = model.tables();
        let mut seq_log_probs = Vec::with_capacity(sequences.len());
        let mut pooled_embedding = Vec::with_capacity(sequences.len());
        let mut pooled_hidden = Vec::with_capacity(sequences.len());
        for seq in sequences.iter() {
            seq_log_probs.push(tables.seq_log_prob(cfg.vocab_size, seq));
            pooled_embedding.push(pooled_activation(
                cfg,
                model.params().as_slice(),
                &tables,
                seq,
                Layer::EmbeddingOut,
            )?);
            pooled_hidden.push(pooled_activation(
                cfg,
                model.params().as_slice(),
                &tables,
                seq,
                Layer::HiddenOut,
            )?);
        }
        Ok(Self {
            cfg,
            params: model.params().clone(),
            sequences,
            seq_log_probs,
            pooled_embedding,
            pooled_hidden,
        })
    }

    pub fn cfg(&self) -> ToyLmConfig {
        self.cfg
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn sequences(&self) -> &Arc<Vec<Vec<u32>>> {
        &self.sequences
    }

    pub fn seq_log_probs(&self) -> &[f64] {
        &self.seq_log_probs
    }

    pub fn pooled(&self, layer: Layer) -> &[Vec<f64>] {
        match layer {
            Layer::EmbeddingOut => &self.pooled_embedding,
            Layer::HiddenOut => &self.pooled_hidden,
        }
    }
}

/// Mean activation over a sequence's context positions (all but the last
/// token). Errors on sequences too short to have a context.
fn pooled_activation(
    cfg: ToyLmConfig,
    params: &[f64],
    tables: &Tables,
    seq: &[u32],
    layer: Layer,
) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::invalid(
            "batch",
            format!("sequence of length {} has no transitions", seq.len()),
        ));
    }
    let hd = cfg.hidden_dim;
    let mut pooled = vec![0.0; hd];
    let n = (seq.len() - 1) as f64;
    for &ctx in &seq[..seq.len() - 1] {
        let act = match layer {
            Layer::EmbeddingOut => &params[ctx as usize * hd..(ctx as usize + 1) * hd],
            Layer::HiddenOut => &tables.h[ctx as usize * hd..(ctx as usize + 1) * hd],
        };
        for (p, a) in pooled.iter_mut().zip(act) {
            *p += a / n;
        }
    }
    Ok(pooled)
}

/// The frozen random unit target direction for the representation-misdirection
/// forget loss: components uniform on [0, 1), then normalized.
pub fn rmu_unit_vector(hidden_dim: usize, seed: u64) -> Vec<f64> {
    const RMU_SEED_TAG: u64 = 0x2e_30_55_77;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RMU_SEED_TAG);
    let mut u: Vec<f64> = (0..hidden_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    let norm: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in u.iter_mut() {
        *x /= norm;
    }
    u
}

// ---------------------------------------------------------------------------
// Loss functions
// ---------------------------------------------------------------------------

/// Mean per-token `-log pi(next | ctx)` over the batch, with gradient.
pub fn cross_entropy_retain(model: &ToyLm, seqs: &[Vec<u32>]) -> Result<(f64, ParamVector)> {
    check_batch(seqs, model.cfg().vocab_size)?;
    let counts = TransitionCounts::from_sequences(seqs, model.cfg().vocab_size);
    let (value, grad) = cross_entropy_counts(model.cfg(), model.params().as_slice(), &counts)?;
    Ok((value, ParamVector::new(grad)?))
}

/// Mean per-token `log pi`: exactly the negated cross-entropy on the same
/// batch.
pub fn ga_forget(model: &ToyLm, seqs: &[Vec<u32>]) -> Result<(f64, ParamVector)> {
    let (value, grad) = cross_entropy_retain(model, seqs)?;
    let neg = ParamVector::new(grad.iter().map(|g| -g).collect())?;
    Ok((-value, neg))
}

/// Sequence-level forget loss against a frozen reference:
/// `(2/beta) * softplus(beta * (log pi - log pi_0))`, averaged over the
/// reference's sequences. Computed in log space throughout.
pub fn npo_forget(model: &ToyLm, reference: &ReferenceModel, beta: f64) -> Result<(f64, ParamVector)> {
    LossKind::NpoForget { beta }.validate()?;
    let cfg = model.cfg();
    if reference.cfg() != cfg {
        return Err(Error::invalid("reference", "model shape mismatch"));
    }
    let seqs = reference.sequences();
    let tables = model.tables();
    let v = cfg.vocab_size;
    let n = seqs.len() as f64;
    let mut value = 0.0;
    let mut weighted = vec![0.0; v * v];
    for (seq, &lp0) in seqs.iter().zip(reference.seq_log_probs()) {
        let lp = tables.seq_log_prob(v, seq);
        let s = beta * (lp - lp0);
        value += (2.0 / beta) * softplus(s);
        let w = 2.0 * sigmoid(s);
        for win in seq.windows(2) {
            weighted[win[0] as usize * v + win[1] as usize] += w;
        }
    }
    let grad = seq_weighted_grad(cfg, model.params().as_slice(), &tables, &weighted, n);
    Ok((value / n, ParamVector::new(grad)?))
}

/// Reference-free, length-normalized forget loss:
/// `-(2/beta) * log sigmoid(-(beta/|y|) log pi - alpha)` averaged over
/// sequences, `|y|` the transition count.
pub fn simnpo_forget(
    model: &ToyLm,
    seqs: &[Vec<u32>],
    beta: f64,
    alpha: f64,
) -> Result<(f64, ParamVector)> {
    LossKind::SimNpoForget { beta, alpha }.validate()?;
    let cfg = model.cfg();
    check_batch(seqs, cfg.vocab_size)?;
    let tables = model.tables();
    let v = cfg.vocab_size;
    let n = seqs.len() as f64;
    let mut value = 0.0;
    let mut weighted = vec![0.0; v * v];
    for seq in seqs {
        let y_len = seq.len().saturating_sub(1);
        if y_len == 0 {
            return Err(Error::invalid(
                "batch",
                "zero-length response in length-normalized loss",
            ));
        }
        let lp = tables.seq_log_prob(v, seq);
        // -log sigmoid(z) = softplus(-z) with z = -(beta/|y|) lp - alpha
        let neg_z = (beta / y_len as f64) * lp + alpha;
        value += (2.0 / beta) * softplus(neg_z);
        let w = (2.0 / y_len as f64) * sigmoid(neg_z);
        for win in seq.windows(2) {
            weighted[win[0] as usize * v + win[1] as usize] += w;
        }
    }
    let grad = seq_weighted_grad(cfg, model.params().as_slice(), &tables, &weighted, n);
    Ok((value / n, ParamVector::new(grad)?))
}

/// Gradient of `(1/n) * sum_seq w_seq * log pi(seq)` given accumulated
/// per-transition weights.
fn seq_weighted_grad(
    cfg: ToyLmConfig,
    params: &[f64],
    tables: &Tables,
    weighted_counts: &[f64],
    n: f64,
) -> Vec<f64> {
    let v = cfg.vocab_size;
    let mut dlogits = vec![0.0; v * v];
    for ctx in 0..v {
        let row = &weighted_counts[ctx * v..(ctx + 1) * v];
        let rowtot: f64 = row.iter().sum();
        if rowtot == 0.0 {
            continue;
        }
        let lp = &tables.logp[ctx * v..(ctx + 1) * v];
        let dl = &mut dlogits[ctx * v..(ctx + 1) * v];
        for (y, (w, l)) in row.iter().zip(lp).enumerate() {
            dl[y] = (w - rowtot * l.exp()) / n;
        }
    }
    backprop_logits(cfg, params, tables, &dlogits)
}

/// Mean squared distance between the model's pooled layer activations and the
/// reference's, over the reference's sequences.
pub fn rmu_retain(
    model: &ToyLm,
    reference: &ReferenceModel,
    layer: Layer,
) -> Result<(f64, ParamVector)> {
    let cfg = model.cfg();
    if reference.cfg() != cfg {
        return Err(Error::invalid("reference", "model shape mismatch"));
    }
    rmu_against_targets(model, reference.sequences(), layer, reference.pooled(layer))
}

/// Mean squared distance between pooled layer activations and the fixed
/// scaled random unit vector `c * u(seed)`.
pub fn rmu_forget(
    model: &ToyLm,
    seqs: &[Vec<u32>],
    layer: Layer,
    c: f64,
    seed: u64,
) -> Result<(f64, ParamVector)> {
    LossKind::RmuForget { layer, c, seed }.validate()?;
    let target: Vec<f64> = rmu_unit_vector(model.cfg().hidden_dim, seed)
        .into_iter()
        .map(|x| c * x)
        .collect();
    let targets: Vec<Vec<f64>> = vec![target; seqs.len()];
    rmu_against_targets(model, seqs, layer, &targets)
}

fn rmu_against_targets(
    model: &ToyLm,
    seqs: &[Vec<u32>],
    layer: Layer,
    targets: &[Vec<f64>],
) -> Result<(f64, ParamVector)> {
    let cfg = model.cfg();
    check_batch(seqs, cfg.vocab_size)?;
    assert_eq!(seqs.len(), targets.len(), "one target per sequence");
    let tables = model.tables();
    let (v, hd) = (cfg.vocab_size, cfg.hidden_dim);
    let n = seqs.len() as f64;
    let mut value = 0.0;
    let mut dact = vec![0.0; v * hd];
    for (seq, target) in seqs.iter().zip(targets) {
        let pooled = pooled_activation(cfg, model.params().as_slice(), &tables, seq, layer)?;
        let diff: Vec<f64> = pooled.iter().zip(target).map(|(p, t)| p - t).collect();
        value += diff.iter().map(|d| d * d).sum::<f64>();
        // d pooled / d act[ctx] = count(ctx) / (len - 1)
        let m = (seq.len() - 1) as f64;
        for &ctx in &seq[..seq.len() - 1] {
            let row = &mut dact[ctx as usize * hd..(ctx as usize + 1) * hd];
            for (r, d) in row.iter_mut().zip(&diff) {
                *r += 2.0 * d / (m * n);
            }
        }
    }
    let grad = backprop_activation(cfg, model.params().as_slice(), &tables, layer, &dact);
    Ok((value / n, ParamVector::new(grad)?))
}

// ---------------------------------------------------------------------------
// Objective adapter
// ---------------------------------------------------------------------------

/// Realizes a [`LossKind`] over a fixed batch as an [`Objective`] in model
/// parameter space, for use with the update rules.
pub struct LmLossObjective {
    cfg: ToyLmConfig,
    kind: LossKind,
    sequences: Arc<Vec<Vec<u32>>>,
    reference: Option<Arc<ReferenceModel>>,
}

impl LmLossObjective {
    pub fn new(
        cfg: ToyLmConfig,
        kind: LossKind,
        sequences: Arc<Vec<Vec<u32>>>,
        reference: Option<Arc<ReferenceModel>>,
    ) -> Result<Self> {
        kind.validate()?;
        check_batch(&sequences, cfg.vocab_size)?;
        if kind.needs_reference() {
            let reference = reference.as_ref().ok_or_else(|| {
                Error::invalid("reference", format!("{kind:?} requires a frozen reference model"))
            })?;
            if !Arc::ptr_eq(reference.sequences(), &sequences) {
                return Err(Error::invalid(
                    "reference",
                    "reference cache was built on a different batch",
                ));
            }
        }
        Ok(Self {
            cfg,
            kind,
            sequences,
            reference,
        })
    }

    fn eval(&self, theta: &ParamVector) -> (f64, ParamVector) {
        let model = ToyLm::from_params(self.cfg, theta.clone()).expect("dimension checked");
        let result = match &self.kind {
            LossKind::CrossEntropyRetain => cross_entropy_retain(&model, &self.sequences),
            LossKind::GaForget => ga_forget(&model, &self.sequences),
            LossKind::NpoForget { beta } => {
                npo_forget(&model, self.reference.as_ref().expect("validated"), *beta)
            }
            LossKind::SimNpoForget { beta, alpha } => {
                simnpo_forget(&model, &self.sequences, *beta, *alpha)
            }
            LossKind::RmuRetain { layer } => {
                rmu_retain(&model, self.reference.as_ref().expect("validated"), *layer)
            }
            LossKind::RmuForget { layer, c, seed } => {
                rmu_forget(&model, &self.sequences, *layer, *c, *seed)
            }
        };
        result.expect("batch validated at construction")
    }
}

impl Objective for LmLossObjective {
    fn dim(&self) -> usize {
        self.cfg.params_dim()
    }

    fn value(&self, theta: &ParamVector) -> f64 {
        self.eval(theta).0
    }

    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        self.eval(theta).1
    }
}
