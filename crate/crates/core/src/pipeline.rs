//! End-to-end unlearning pipeline over the toy testbed: generate corpora,
//! finetune the original model so it memorizes the planted secrets, run an
//! unlearning rule, and score memorization before/after.

use std::sync::Arc;

use crate::diagnostics::RunTrace;
use crate::error::{Error, Result};
use crate::losses::{LmLossObjective, LossKind, ReferenceModel};
use crate::objectives::BilevelProblem;
use crate::toylm::{
    evaluate, finetune, generate_corpus, holdout_split, CorpusConfig, MemorizationReport,
    TokenDataset, ToyLm, ToyLmConfig,
};
use crate::updaters::{run, RunOutcome, StepSchedule, StepSink, UpdateRule};
use crate::vecmath::ParamVector;

/// Finetuning settings calibrated so the original model memorizes the
/// secrets (continuation probability above 0.9 at the corpus defaults).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub eta: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            eta: 1.0,
        }
    }
}

/// Full pipeline settings. Every field has a calibrated default, so partial
/// configs are valid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearnConfig {
    pub corpus: CorpusConfig,
    pub model: ToyLmConfig,
    pub finetune: FinetuneConfig,
    pub forget_loss: LossKind,
    pub retain_loss: LossKind,
    pub rule: UpdateRule,
    pub eta: f64,
    pub steps: usize,
    /// Memorization metrics are recorded every this many steps.
    pub eval_every: usize,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            model: ToyLmConfig::default(),
            finetune: FinetuneConfig::default(),
            forget_loss: LossKind::NpoForget { beta: 0.1 },
            retain_loss: LossKind::CrossEntropyRetain,
            rule: UpdateRule::blur(1.0),
            eta: 0.5,
            steps: 300,
            eval_every: 5,
        }
    }
}

impl UnlearnConfig {
    /// Checks the forget/retain pairing. Representation-misdirection losses
    /// must be paired with each other on the same layer; the preference and
    /// likelihood losses pair with cross-entropy retain.
    pub fn validate(&self) -> Result<()> {
        self.forget_loss.validate()?;
        self.retain_loss.validate()?;
        self.rule.validate()?;
        match (&self.forget_loss, &self.retain_loss) {
            (LossKind::RmuForget { layer: lf, .. }, LossKind::RmuRetain { layer: lr }) => {
                if lf != lr {
                    return Err(Error::invalid(
                        "retain_loss",
                        "representation losses must target the same layer",
                    ));
                }
            }
            (LossKind::RmuForget { .. }, _) | (_, LossKind::RmuRetain { .. }) => {
                return Err(Error::invalid(
                    "retain_loss",
                    "representation losses must be paired together",
                ));
            }
            (
                LossKind::GaForget | LossKind::NpoForget { .. } | LossKind::SimNpoForget { .. },
                LossKind::CrossEntropyRetain,
            ) => {}
            (f, r) => {
                return Err(Error::invalid(
                    "forget_loss",
                    format!("unsupported pairing: {f:?} with {r:?}"),
                ));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every", "must be positive"));
        }
        Ok(())
    }
}

/// Memorization metrics at a recorded step of the unlearning run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricSnapshot {
    pub step: usize,
    pub report: MemorizationReport,
}

/// Everything a pipeline run produces.
pub struct UnlearnOutcome {
    pub before: MemorizationReport,
    pub after: MemorizationReport,
    pub trace: RunTrace,
    pub snapshots: Vec<MetricSnapshot>,
    pub original: ToyLm,
    pub unlearned: ToyLm,
    pub retain: TokenDataset,
    pub forget: TokenDataset,
}

/// Builds the forget/retain objective pair for an unlearning run on the
/// given original model and corpora.
pub fn build_unlearn_problem(
    original: &ToyLm,
    retain: &TokenDataset,
    forget: &TokenDataset,
    forget_loss: &LossKind,
    retain_loss: &LossKind,
) -> Result<BilevelProblem> {
    let cfg = original.cfg();
    let split = holdout_split(retain.sequences.len());
    let retain_train = Arc::new(retain.sequences[..split].to_vec());
    let forget_seqs = Arc::new(forget.sequences.clone());

    let forget_ref = if forget_loss.needs_reference() {
        Some(Arc::new(ReferenceModel::new(original, forget_seqs.clone())?))
    } else {
        None
    };
    let retain_ref = if retain_loss.needs_reference() {
        Some(Arc::new(ReferenceModel::new(original, retain_train.clone())?))
    } else {
        None
    };

    let forget_obj = LmLossObjective::new(cfg, forget_loss.clone(), forget_seqs, forget_ref)?;
    let retain_obj = LmLossObjective::new(cfg, retain_loss.clone(), retain_train, retain_ref)?;
    BilevelProblem::new(Box::new(forget_obj), Box::new(retain_obj), None)
}

/// Sink wrapper that periodically scores memorization during a run.
struct SnapshotSink<'a, 'b> {
    cfg: ToyLmConfig,
    retain: &'a TokenDataset,
    forget: &'a TokenDataset,
    every: usize,
    total: usize,
    snapshots: Vec<MetricSnapshot>,
    inner: Option<&'b mut dyn StepSink>,
}

impl StepSink for SnapshotSink<'_, '_> {
    fn on_step(&mut self, record: &crate::diagnostics::StepRecord, theta: &ParamVector) -> Result<()> {
        let step = record.step + 1;
        if step % self.every == 0 || step == self.total {
            let model = ToyLm::from_params(self.cfg, theta.clone())?;
            self.snapshots.push(MetricSnapshot {
                step,
                report: evaluate(&model, self.retain, self.forget),
            });
        }
        if let Some(inner) = self.inner.as_mut() {
            inner.on_step(record, theta)?;
        }
        Ok(())
    }
}

/// Runs the whole protocol: corpora, finetuned original, unlearning run,
/// before/after evaluation. `extra_sink` (when given) receives every step,
/// e.g. for streaming the trace to disk.
pub fn unlearn_pipeline(
    config: &UnlearnConfig,
    extra_sink: Option<&mut dyn StepSink>,
) -> Result<UnlearnOutcome> {
    config.validate()?;
    let (retain, forget) = generate_corpus(&config.corpus)?;
    if config.corpus.vocab_size != config.model.vocab_size {
        return Err(Error::invalid(
            "model",
            "model vocabulary must match the corpus",
        ));
    }

    let init = ToyLm::new_seeded(config.model, config.corpus.seed ^ 0xf17e_7011);
    let original = finetune(
        &init,
        &retain,
        &forget,
        config.finetune.epochs,
        config.finetune.eta,
    )?
    .model;
    let before = evaluate(&original, &retain, &forget);

    let problem = build_unlearn_problem(
        &original,
        &retain,
        &forget,
        &config.forget_loss,
        &config.retain_loss,
    )?;

    let mut sink = SnapshotSink {
        cfg: config.model,
        retain: &retain,
        forget: &forget,
        every: config.eval_every,
        total: config.steps,
        snapshots: Vec::new(),
        inner: extra_sink,
    };
    let RunOutcome { theta, mut trace } = run(
        &problem,
        original.params(),
        &config.rule,
        &StepSchedule::constant(config.eta),
        config.steps,
        &mut sink,
    )?;
    trace.meta.problem_id = Some("toy_unlearn".to_string());
    trace.meta.seed = Some(config.corpus.seed);
    let snapshots = sink.snapshots;

    let unlearned = ToyLm::from_params(config.model, theta)?;
    let after = evaluate(&unlearned, &retain, &forget);
    Ok(UnlearnOutcome {
        before,
        after,
        trace,
        snapshots,
        original,
        unlearned,
        retain,
        forget,
    })
}

/// First snapshot whose forget memorization is at or below `target`, if the
/// run ever got there; used to compare methods at a matched forget level.
pub fn matched_forget_snapshot(
    snapshots: &[MetricSnapshot],
    target: f64,
) -> Option<&MetricSnapshot> {
    snapshots.iter().find(|s| s.report.know_mem_forget <= target)
}

/// Selection rule for reporting a single "best" checkpoint: the snapshot with
/// the highest retain metric among those meeting the forget threshold. This
/// is a harness convention; every snapshot is also reported.
pub fn select_best(snapshots: &[MetricSnapshot], forget_threshold: f64) -> Option<&MetricSnapshot> {
    snapshots
        .iter()
        .filter(|s| s.report.know_mem_forget <= forget_threshold)
        .max_by(|a, b| {
            a.report
                .know_mem_retain
                .partial_cmp(&b.report.know_mem_retain)
                .expect("metrics are finite")
        })
}
