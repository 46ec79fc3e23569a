//! Source-only pretraining and the resample/reweight adaptation loop.
//!
//! The adaptation path only ever sees target *inputs*; target labels enter
//! the crate exclusively through [`evaluate`].

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::neuralcore::{Batch, DomainTag, DropoutMask, Model};
use crate::pseudolabel::{build_state, PseudoLabelState};
use crate::reweighting::{
    batch_weights, decision_error, sample_likelihood, ReweighMode, WeightStats,
};
use crate::sampler::{choose_source_domain, sample_batch, sample_classes, BinIndex};
use crate::seed::{component_rng, derive_seed};
use crate::smoothing::{Domain, Phase, SmoothingPolicy};
use crate::uncertainty::{extract_uncertainty, UncertaintyTable};

/// Training hyperparameters for both phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub pretrain_iterations: usize,
    pub pretrain_lr: f64,
    pub adapt_lr: f64,
    pub cycles: usize,
    pub steps: usize,
    pub resample_period: usize,
    pub mcd_iterations: usize,
    pub mcd_rate: f64,
    /// Dropout on the classifier hidden layer during SGD steps, at the
    /// model's dropout rate.
    pub train_dropout: bool,
    pub batch_size: usize,
    /// Classes per mixed batch; `None` means `min(N, 4)`.
    pub beta: Option<usize>,
    pub reweigh: ReweighMode,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::desk()
    }
}

impl Schedule {
    /// Minutes-scale schedule for the synthetic fixtures.
    pub fn desk() -> Self {
        Schedule {
            pretrain_iterations: 300,
            pretrain_lr: 0.1,
            adapt_lr: 0.05,
            cycles: 30,
            steps: 20,
            resample_period: 10,
            mcd_iterations: 25,
            mcd_rate: 0.75,
            train_dropout: true,
            batch_size: 64,
            beta: None,
            reweigh: ReweighMode::DeSl,
            seed: 0,
        }
    }

    /// Hyperparameters used for the full-size image benchmarks.
    pub fn full_scale() -> Self {
        Schedule {
            pretrain_iterations: 1000,
            pretrain_lr: 5e-4,
            adapt_lr: 2.5e-4,
            cycles: 100,
            steps: 50,
            resample_period: 10,
            mcd_iterations: 50,
            mcd_rate: 0.75,
            train_dropout: true,
            batch_size: 240,
            beta: Some(12),
            reweigh: ReweighMode::DeSl,
            seed: 0,
        }
    }

    pub fn beta_for(&self, classes: usize) -> usize {
        self.beta.unwrap_or_else(|| classes.min(4))
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("train.pretrain_iterations", self.pretrain_iterations),
            ("train.cycles", self.cycles),
            ("train.steps", self.steps),
            ("train.resample_period", self.resample_period),
            ("batch.size", self.batch_size),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be >= 1")));
            }
        }
        if self.beta == Some(0) {
            return Err(Error::Config("batch.beta must be >= 1".into()));
        }
        if self.mcd_iterations < 2 {
            return Err(Error::Config("mcd.iterations must be >= 2".into()));
        }
        if !(self.mcd_rate > 0.0 && self.mcd_rate < 1.0) {
            return Err(Error::Config("mcd.rate must lie in (0, 1)".into()));
        }
        for (key, lr) in [("train.pretrain_lr", self.pretrain_lr), ("train.adapt_lr", self.adapt_lr)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("{key} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// A labeled source domain.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

impl LabeledSet<'_> {
    fn check(&self, model: &Model) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Empty("source set"));
        }
        if self.inputs.nrows() != self.labels.len() {
            return Err(shape_err("source labels", self.inputs.nrows(), self.labels.len()));
        }
        if self.inputs.ncols() != model.input_dim() {
            return Err(shape_err("source input width", model.input_dim(), self.inputs.ncols()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= model.classes()) {
            return Err(Error::Config(format!("source label {bad} out of range")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub mean_class_accuracy: f64,
}

/// Accuracy and the unweighted mean of per-class recalls over the classes
/// present in `labels`.
pub fn score_predictions(predictions: &[usize], labels: &[usize]) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if predictions.len() != labels.len() {
        return Err(shape_err("predictions", labels.len(), predictions.len()));
    }
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    let present: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    Ok(Metrics {
        accuracy: correct as f64 / labels.len() as f64,
        mean_class_accuracy: present.iter().sum::<f64>() / present.len() as f64,
    })
}

pub fn evaluate(model: &Model, inputs: ArrayView2<f64>, labels: &[usize]) -> Result<Metrics> {
    if inputs.nrows() != labels.len() {
        return Err(shape_err("evaluation labels", inputs.nrows(), labels.len()));
    }
    score_predictions(&model.predict(inputs)?, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub iterations: usize,
    pub first_loss: f64,
    pub final_loss: f64,
}

fn training_mask(model: &Model, rows: usize, schedule: &Schedule, seed: u64) -> Result<Option<DropoutMask>> {
    if !schedule.train_dropout || model.dropout_rate() == 0.0 {
        return Ok(None);
    }
    let mut rng = component_rng(seed, "train-mask", 0);
    DropoutMask::sample_rows(rows, model.hidden_dim(), model.dropout_rate(), &mut rng).map(Some)
}

/// Supervised training on the pooled source domains with ω ≡ 1.
pub fn pretrain(
    model: &mut Model,
    sources: &[LabeledSet<'_>],
    schedule: &Schedule,
    policy: &SmoothingPolicy,
) -> Result<PretrainReport> {
    schedule.validate()?;
    policy.validate()?;
    if sources.is_empty() {
        return Err(Error::Empty("source set"));
    }
    for s in sources {
        s.check(model)?;
    }
    let classes = model.classes();
    let pooled: Vec<(usize, usize)> = sources
        .iter()
        .enumerate()
        .flat_map(|(d, s)| (0..s.labels.len()).map(move |i| (d, i)))
        .collect();
    let encodings = (0..classes)
        .map(|c| policy.apply(Phase::Pretrain, Domain::Source, c, classes))
        .collect::<Result<Vec<_>>>()?;
    let rows = schedule.batch_size.min(pooled.len());
    let mut first_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for it in 0..schedule.pretrain_iterations {
        let step_seed = derive_seed(schedule.seed, "pretrain-step", it as u64);
        let mut rng = component_rng(step_seed, "batch", 0);
        let picks = index::sample(&mut rng, pooled.len(), rows);
        let mut batch = Batch {
            inputs: Array2::zeros((rows, model.input_dim())),
            targets: Array2::zeros((rows, classes)),
            weights: Array1::ones(rows),
            domains: Vec::with_capacity(rows),
        };
        for (r, p) in picks.iter().enumerate() {
            let (d, i) = pooled[p];
            batch.inputs.row_mut(r).assign(&sources[d].inputs.row(i));
            let enc = &encodings[sources[d].labels[i]];
            batch.targets.row_mut(r).assign(&ndarray::ArrayView1::from(enc.as_slice()));
            batch.domains.push(DomainTag::Source(d));
        }
        let mask = training_mask(model, rows, schedule, step_seed)?;
        let (loss, grads) = model.loss_and_gradients(&batch, mask.as_ref())?;
        model.sgd_step(&grads, schedule.pretrain_lr)?;
        if it == 0 {
            first_loss = loss;
        }
        final_loss = loss;
    }
    Ok(PretrainReport {
        iterations: schedule.pretrain_iterations,
        first_loss,
        final_loss,
    })
}

/// Diagnostics of one adaptation cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleDiagnostics {
    pub cycle: usize,
    pub source_domain: usize,
    /// Snapshot the uncertainty table was extracted from.
    pub snapshot_id: String,
    pub extractions: usize,
    pub resample_events: usize,
    pub steps_run: usize,
    pub mean_loss: f64,
    pub min_eligible_classes: usize,
    pub shortfall_steps: usize,
    pub replacement_fraction: f64,
    /// Batches whose target weight products were all zero.
    pub starved_batches: usize,
    pub fallbacks: usize,
    pub disagreement: f64,
    pub bin_histogram: Vec<usize>,
    pub weights: WeightStats,
    pub starvation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub cycles: Vec<CycleDiagnostics>,
}

/// Per-row weight factors for the target rows of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetWeights {
    pub likelihood: Vec<f64>,
    pub decision: Vec<f64>,
    pub omega: Vec<f64>,
    pub starved: bool,
}

/// λ_SL, λ_DE and the batch-normalized ω for `indices` under the current
/// pseudo-label state.
pub fn target_weights(
    table: &UncertaintyTable,
    state: &PseudoLabelState,
    indices: &[usize],
    mode: ReweighMode,
) -> Result<TargetWeights> {
    let mut likelihood = Vec::with_capacity(indices.len());
    let mut decision = Vec::with_capacity(indices.len());
    let mut products = Vec::with_capacity(indices.len());
    for &i in indices {
        let label = state.labels[i];
        let score = state.chosen_scores[i];
        let mean = table.mean.row(i);
        let std = table.std.row(i);
        let sl = sample_likelihood(score, mean[label], std[label]);
        let de = decision_error(
            score,
            mean.as_slice().expect("contiguous row"),
            std.as_slice().expect("contiguous row"),
            label,
        )?;
        likelihood.push(sl);
        decision.push(de);
        products.push(mode.product(sl, de));
    }
    let w = batch_weights(&products)?;
    Ok(TargetWeights {
        likelihood,
        decision,
        omega: w.omega,
        starved: w.starved,
    })
}

/// Uncertainty-driven adaptation on unlabeled target inputs.
pub fn adapt(
    model: &mut Model,
    sources: &[LabeledSet<'_>],
    target_inputs: ArrayView2<'_, f64>,
    schedule: &Schedule,
    policy: &SmoothingPolicy,
) -> Result<AdaptReport> {
    schedule.validate()?;
    policy.validate()?;
    if sources.is_empty() {
        return Err(Error::Empty("source set"));
    }
    for s in sources {
        s.check(model)?;
    }
    if target_inputs.nrows() == 0 {
        return Err(Error::Empty("target set"));
    }
    if target_inputs.ncols() != model.input_dim() {
        return Err(shape_err("target input width", model.input_dim(), target_inputs.ncols()));
    }
    let classes = model.classes();
    if classes < 2 {
        return Err(Error::Config("adaptation needs at least two classes".into()));
    }
    let beta = schedule.beta_for(classes);
    let source_labels: Vec<&[usize]> = sources.iter().map(|s| s.labels).collect();
    let mut bins = BinIndex::new(&source_labels, classes)?;
    let encode = |domain: Domain| {
        (0..classes)
            .map(|c| policy.apply(Phase::Adapt, domain, c, classes))
            .collect::<Result<Vec<_>>>()
    };
    let source_enc = encode(Domain::Source)?;
    let target_enc = encode(Domain::Target)?;

    let mut report = AdaptReport { cycles: Vec::new() };
    let mut epoch = 0;
    for cycle in 0..schedule.cycles {
        let domain = choose_source_domain(
            sources.len(),
            &mut component_rng(schedule.seed, "source-domain", cycle as u64),
        )?;
        let table = extract_uncertainty(
            model,
            target_inputs,
            schedule.mcd_iterations,
            schedule.mcd_rate,
            derive_seed(schedule.seed, "mcd", cycle as u64),
        )?;
        let mut diag = CycleDiagnostics {
            cycle,
            source_domain: domain,
            snapshot_id: table.snapshot_id.clone(),
            extractions: 1,
            resample_events: 0,
            steps_run: 0,
            mean_loss: 0.0,
            min_eligible_classes: classes,
            shortfall_steps: 0,
            replacement_fraction: 0.0,
            starved_batches: 0,
            fallbacks: 0,
            disagreement: 0.0,
            bin_histogram: vec![0; classes],
            weights: WeightStats::default(),
            starvation: None,
        };
        let mut state: Option<PseudoLabelState> = None;
        let mut drawn = 0usize;
        let mut replaced = 0usize;
        for step in 0..schedule.steps {
            let global = (cycle * schedule.steps + step) as u64;
            if step % schedule.resample_period == 0 {
                let s = build_state(&table, derive_seed(schedule.seed, "resample", global), epoch)?;
                epoch += 1;
                bins.rebuild_target_bins(&s)?;
                let d = s.diagnostics(classes);
                diag.resample_events += 1;
                diag.fallbacks += d.fallbacks;
                diag.disagreement = d.disagreement;
                diag.bin_histogram = d.bin_histogram;
                state = Some(s);
            }
            let state = state.as_ref().expect("resampled at step 0");
            let step_seed = derive_seed(schedule.seed, "adapt-step", global);
            let mut rng = component_rng(step_seed, "batch", 0);
            let selection = match sample_classes(&bins, domain, beta, &mut rng) {
                Ok(s) => s,
                Err(Error::Starvation(msg)) => {
                    diag.starvation = Some(msg);
                    break;
                }
                Err(e) => return Err(e),
            };
            diag.min_eligible_classes = diag.min_eligible_classes.min(selection.eligible);
            diag.shortfall_steps += usize::from(selection.shortfall);
            let plan = sample_batch(&bins, &selection.classes, schedule.batch_size, domain, &mut rng)?;
            drawn += plan.len();
            replaced += plan.replacement_draws;

            let target_idx: Vec<usize> = plan.target.iter().map(|&(_, i)| i).collect();
            let tw = target_weights(&table, state, &target_idx, schedule.reweigh)?;
            diag.starved_batches += usize::from(tw.starved);
            for k in 0..target_idx.len() {
                diag.weights.likelihood.push(tw.likelihood[k]);
                diag.weights.decision.push(tw.decision[k]);
                diag.weights.omega.push(tw.omega[k]);
            }

            let rows = plan.len();
            let mut batch = Batch {
                inputs: Array2::zeros((rows, model.input_dim())),
                targets: Array2::zeros((rows, classes)),
                weights: Array1::ones(rows),
                domains: Vec::with_capacity(rows),
            };
            let src = &sources[domain];
            for (r, &(_, i)) in plan.source.iter().enumerate() {
                batch.inputs.row_mut(r).assign(&src.inputs.row(i));
                let enc = &source_enc[src.labels[i]];
                batch.targets.row_mut(r).assign(&ndarray::ArrayView1::from(enc.as_slice()));
                batch.domains.push(DomainTag::Source(domain));
            }
            let offset = plan.source.len();
            for (k, &i) in target_idx.iter().enumerate() {
                let r = offset + k;
                batch.inputs.row_mut(r).assign(&target_inputs.row(i));
                let enc = &target_enc[state.labels[i]];
                batch.targets.row_mut(r).assign(&ndarray::ArrayView1::from(enc.as_slice()));
                batch.weights[r] = tw.omega[k];
                batch.domains.push(DomainTag::Target);
            }
            let mask = training_mask(model, rows, schedule, step_seed)?;
            let (loss, grads) = model.loss_and_gradients(&batch, mask.as_ref())?;
            model.sgd_step(&grads, schedule.adapt_lr)?;
            diag.steps_run += 1;
            diag.mean_loss += (loss - diag.mean_loss) / diag.steps_run as f64;
        }
        if drawn > 0 {
            diag.replacement_fraction = replaced as f64 / drawn as f64;
        }
        report.cycles.push(diag);
    }
    Ok(report)
}
