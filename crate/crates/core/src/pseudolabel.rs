//! Pseudo-label resampling from the MC dropout score distributions.
//!
//! Each target row gets fresh class scores `p̃_{i,c} ~ N(μ_{i,c}, σ_{i,c})`,
//! the clamped and renormalized row becomes a categorical distribution, and
//! the pseudo-label `ỹ_i` is drawn from it. The bin id `ν_i` stays the
//! argmax of `μ` and never depends on the draws.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::seed::component_rng;
use crate::uncertainty::{argmax_bin_ids, UncertaintyTable};

/// Gaussian draws for every (sample, class) cell, before clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledScores {
    pub draws: Array2<f64>,
}

impl ResampledScores {
    /// Draws with negative values clamped to zero.
    pub fn clamped(&self) -> Array2<f64> {
        self.draws.mapv(|v| v.max(0.0))
    }
}

/// Row `i` draws from stream `("resample-row", i)` of `seed`.
pub fn resample_scores(table: &UncertaintyTable, seed: u64) -> ResampledScores {
    let mut draws = table.mean.clone();
    for (i, mut row) in draws.rows_mut().into_iter().enumerate() {
        let mut rng = component_rng(seed, "resample-row", i as u64);
        for (c, cell) in row.iter_mut().enumerate() {
            let sigma = table.std[[i, c]];
            if sigma > 0.0 {
                let normal = Normal::new(*cell, sigma).expect("positive finite sigma");
                *cell = normal.sample(&mut rng);
            }
        }
    }
    ResampledScores { draws }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDraw {
    pub p_tilde: Array2<f64>,
    pub labels: Vec<usize>,
    pub fallbacks: usize,
}

/// Renormalizes each clamped row and draws a label from it. Rows without a
/// positive entry fall back to the matching row of `mean`.
pub fn normalize_and_draw(
    clamped: &Array2<f64>,
    mean: &Array2<f64>,
    seed: u64,
) -> Result<CategoricalDraw> {
    if clamped.dim() != mean.dim() {
        return Err(shape_err(
            "fallback mean",
            format!("{:?}", clamped.dim()),
            format!("{:?}", mean.dim()),
        ));
    }
    let mut p_tilde = clamped.clone();
    let mut labels = Vec::with_capacity(clamped.nrows());
    let mut fallbacks = 0;
    for (i, mut row) in p_tilde.rows_mut().into_iter().enumerate() {
        let mut total: f64 = row.sum();
        if !(total > 0.0) {
            fallbacks += 1;
            row.assign(&mean.row(i));
            total = row.sum();
        }
        row.mapv_inplace(|v| v / total);
        let dist = WeightedIndex::new(row.iter().copied()).expect("row has positive mass");
        let mut rng = component_rng(seed, "draw-row", i as u64);
        labels.push(dist.sample(&mut rng));
    }
    Ok(CategoricalDraw {
        p_tilde,
        labels,
        fallbacks,
    })
}

/// Resampled pseudo-label state for the whole target set.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelState {
    pub p_tilde: Array2<f64>,
    /// Pseudo-label `ỹ_i`.
    pub labels: Vec<usize>,
    /// Bin id `ν_i`.
    pub bins: Vec<usize>,
    /// Unnormalized, unclamped draw `p̃_{i,ỹ_i}` fed to reweighting.
    pub chosen_scores: Vec<f64>,
    pub epoch: usize,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelDiagnostics {
    pub epoch: usize,
    /// Fraction of samples whose pseudo-label differs from the argmax bin.
    pub disagreement: f64,
    pub fallbacks: usize,
    pub bin_histogram: Vec<usize>,
}

impl PseudoLabelState {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn diagnostics(&self, classes: usize) -> PseudoLabelDiagnostics {
        let mut bin_histogram = vec![0; classes];
        for &b in &self.bins {
            bin_histogram[b] += 1;
        }
        let disagree = self
            .labels
            .iter()
            .zip(&self.bins)
            .filter(|(l, b)| l != b)
            .count();
        PseudoLabelDiagnostics {
            epoch: self.epoch,
            disagreement: if self.is_empty() {
                0.0
            } else {
                disagree as f64 / self.len() as f64
            },
            fallbacks: self.fallbacks,
            bin_histogram,
        }
    }
}

pub fn build_state(table: &UncertaintyTable, seed: u64, epoch: usize) -> Result<PseudoLabelState> {
    let scores = resample_scores(table, seed);
    let draw = normalize_and_draw(&scores.clamped(), &table.mean, seed)?;
    let chosen_scores = draw
        .labels
        .iter()
        .enumerate()
        .map(|(i, &c)| scores.draws[[i, c]])
        .collect();
    Ok(PseudoLabelState {
        p_tilde: draw.p_tilde,
        labels: draw.labels,
        bins: argmax_bin_ids(table),
        chosen_scores,
        epoch,
        fallbacks: draw.fallbacks,
    })
}
