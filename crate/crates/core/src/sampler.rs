//! Class bins and mixed source/target batch planning.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::pseudolabel::PseudoLabelState;

/// Source bins per (domain, class) and target bins per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinIndex {
    classes: usize,
    /// `source[d][c]`: indices into source dataset `d` with label `c`.
    source: Vec<Vec<Vec<usize>>>,
    /// `target[c]`: target indices whose current bin id is `c`.
    target: Vec<Vec<usize>>,
}

impl BinIndex {
    /// Source bins from the ground-truth labels of each source dataset.
    pub fn new(source_labels: &[&[usize]], classes: usize) -> Result<Self> {
        if source_labels.is_empty() {
            return Err(Error::Empty("source domains"));
        }
        let source = source_labels
            .iter()
            .map(|labels| partition(labels.iter().copied(), classes))
            .collect::<Result<Vec<_>>>()?;
        Ok(BinIndex {
            classes,
            source,
            target: vec![Vec::new(); classes],
        })
    }

    /// Resets the target bins from the state's bin ids.
    pub fn rebuild_target_bins(&mut self, state: &PseudoLabelState) -> Result<()> {
        self.target = partition(state.bins.iter().copied(), self.classes)?;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn source_domains(&self) -> usize {
        self.source.len()
    }

    pub fn source_bin(&self, domain: usize, class: usize) -> &[usize] {
        &self.source[domain][class]
    }

    pub fn target_bin(&self, class: usize) -> &[usize] {
        &self.target[class]
    }

    /// Classes whose target bin and domain-`d` source bin are both non-empty.
    pub fn eligible_classes(&self, domain: usize) -> Vec<usize> {
        (0..self.classes)
            .filter(|&c| !self.target[c].is_empty() && !self.source[domain][c].is_empty())
            .collect()
    }
}

fn partition(ids: impl Iterator<Item = usize>, classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut bins = vec![Vec::new(); classes];
    for (idx, c) in ids.enumerate() {
        if c >= classes {
            return Err(shape_err("bin class id", format!("< {classes}"), c));
        }
        bins[c].push(idx);
    }
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSelection {
    pub classes: Vec<usize>,
    pub eligible: usize,
    /// Fewer than β classes were eligible.
    pub shortfall: bool,
}

/// Draws up to β distinct eligible classes uniformly.
pub fn sample_classes<R: Rng + ?Sized>(
    bins: &BinIndex,
    source_domain: usize,
    beta: usize,
    rng: &mut R,
) -> Result<ClassSelection> {
    if beta == 0 {
        return Err(Error::Config("batch.beta must be >= 1".into()));
    }
    if source_domain >= bins.source_domains() {
        return Err(shape_err("source domain", format!("< {}", bins.source_domains()), source_domain));
    }
    let mut eligible = bins.eligible_classes(source_domain);
    if eligible.is_empty() {
        return Err(Error::Starvation(format!(
            "no class has both source (domain {source_domain}) and target samples"
        )));
    }
    let count = eligible.len();
    eligible.shuffle(rng);
    eligible.truncate(beta);
    Ok(ClassSelection {
        classes: eligible,
        eligible: count,
        shortfall: count < beta,
    })
}

/// Index draws for one mixed mini-batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub classes: Vec<usize>,
    pub source_domain: usize,
    pub per_class: usize,
    /// `(class, index into source dataset)` pairs.
    pub source: Vec<(usize, usize)>,
    /// `(class bin, index into target set)` pairs.
    pub target: Vec<(usize, usize)>,
    /// Draws taken with replacement because the bin was too small.
    pub replacement_draws: usize,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.source.len() + self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// For every class, `max(1, ⌊|b| / 2·len(classes)⌋)` source and target draws.
pub fn sample_batch<R: Rng + ?Sized>(
    bins: &BinIndex,
    classes: &[usize],
    batch_size: usize,
    source_domain: usize,
    rng: &mut R,
) -> Result<BatchPlan> {
    if classes.is_empty() {
        return Err(Error::Starvation("no classes selected for batch".into()));
    }
    let per_class = (batch_size / (2 * classes.len())).max(1);
    let mut plan = BatchPlan {
        classes: classes.to_vec(),
        source_domain,
        per_class,
        source: Vec::with_capacity(per_class * classes.len()),
        target: Vec::with_capacity(per_class * classes.len()),
        replacement_draws: 0,
    };
    for &c in classes {
        let (src, replaced) = draw(bins.source_bin(source_domain, c), per_class, rng)?;
        plan.replacement_draws += replaced;
        plan.source.extend(src.into_iter().map(|i| (c, i)));
        let (tgt, replaced) = draw(bins.target_bin(c), per_class, rng)?;
        plan.replacement_draws += replaced;
        plan.target.extend(tgt.into_iter().map(|i| (c, i)));
    }
    Ok(plan)
}

fn draw<R: Rng + ?Sized>(bin: &[usize], n: usize, rng: &mut R) -> Result<(Vec<usize>, usize)> {
    if bin.is_empty() {
        return Err(Error::Starvation("selected class has an empty bin".into()));
    }
    if bin.len() >= n {
        Ok((bin.choose_multiple(rng, n).copied().collect(), 0))
    } else {
        Ok(((0..n).map(|_| *bin.choose(rng).expect("non-empty")).collect(), n))
    }
}

/// Uniform choice among `domains` source domains.
pub fn choose_source_domain<R: Rng + ?Sized>(domains: usize, rng: &mut R) -> Result<usize> {
    match domains {
        0 => Err(Error::Empty("source domains")),
        1 => Ok(0),
        d => Ok(rng.random_range(0..d)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::seeded_rng;
    use ndarray::Array2;

    fn state_with_bins(bins: Vec<usize>) -> PseudoLabelState {
        let n = bins.len();
        PseudoLabelState {
            p_tilde: Array2::zeros((n, 1)),
            labels: bins.clone(),
            bins,
            chosen_scores: vec![0.0; n],
            epoch: 0,
            fallbacks: 0,
        }
    }

    fn full_bins(classes: usize, per: usize) -> BinIndex {
        let labels: Vec<usize> = (0..classes * per).map(|i| i % classes).collect();
        let mut bins = BinIndex::new(&[&labels], classes).unwrap();
        bins.rebuild_target_bins(&state_with_bins(labels.clone())).unwrap();
        bins
    }

    #[test]
    fn single_class_target_bin() {
        let mut bins = BinIndex::new(&[&[0, 1, 2]], 3).unwrap();
        bins.rebuild_target_bins(&state_with_bins(vec![0; 5])).unwrap();
        assert_eq!(bins.target_bin(0), &[0, 1, 2, 3, 4]);
        assert!(bins.target_bin(1).is_empty() && bins.target_bin(2).is_empty());
    }

    #[test]
    fn rebuild_matches_histogram_and_is_idempotent() {
        let ids = vec![2, 0, 1, 1, 3, 2, 2, 0];
        let mut bins = BinIndex::new(&[&[0, 1, 2, 3]], 4).unwrap();
        let state = state_with_bins(ids.clone());
        bins.rebuild_target_bins(&state).unwrap();
        let first = bins.clone();
        for c in 0..4 {
            assert_eq!(bins.target_bin(c).len(), ids.iter().filter(|&&v| v == c).count());
        }
        bins.rebuild_target_bins(&state).unwrap();
        assert_eq!(bins, first);
    }

    #[test]
    fn all_classes_when_beta_equals_n() {
        let bins = full_bins(5, 4);
        let mut sel = sample_classes(&bins, 0, 5, &mut seeded_rng(1)).unwrap();
        assert!(!sel.shortfall);
        sel.classes.sort();
        assert_eq!(sel.classes, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn shortfall_returns_eligible_classes() {
        let labels: Vec<usize> = (0..40).map(|i| i % 12).collect();
        let mut bins = BinIndex::new(&[&labels], 12).unwrap();
        bins.rebuild_target_bins(&state_with_bins(vec![3, 7, 9, 3])).unwrap();
        let mut sel = sample_classes(&bins, 0, 12, &mut seeded_rng(2)).unwrap();
        sel.classes.sort();
        assert_eq!(sel.classes, vec![3, 7, 9]);
        assert!(sel.shortfall);
        assert_eq!(sel.eligible, 3);
    }

    #[test]
    fn starvation_when_nothing_eligible() {
        let bins = BinIndex::new(&[&[0, 0]], 2).unwrap();
        assert!(matches!(
            sample_classes(&bins, 0, 2, &mut seeded_rng(0)),
            Err(Error::Starvation(_))
        ));
    }

    #[test]
    fn full_scale_batch_split() {
        let bins = full_bins(12, 30);
        let classes: Vec<usize> = (0..12).collect();
        let plan = sample_batch(&bins, &classes, 240, 0, &mut seeded_rng(4)).unwrap();
        assert_eq!(plan.per_class, 10);
        assert_eq!(plan.source.len(), 120);
        assert_eq!(plan.target.len(), 120);
        for &c in &classes {
            assert_eq!(plan.source.iter().filter(|p| p.0 == c).count(), 10);
            assert_eq!(plan.target.iter().filter(|p| p.0 == c).count(), 10);
        }
        assert_eq!(plan.replacement_draws, 0);
        for &(c, i) in &plan.source {
            assert!(bins.source_bin(0, c).contains(&i));
        }
    }

    #[test]
    fn small_bin_draws_with_replacement() {
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let mut bins = BinIndex::new(&[&labels], 2).unwrap();
        bins.rebuild_target_bins(&state_with_bins(vec![0, 1, 0, 1, 1, 0, 1]))
            .unwrap();
        let plan = sample_batch(&bins, &[0], 20, 0, &mut seeded_rng(6)).unwrap();
        assert_eq!(plan.target.len(), 10);
        assert!(plan.target.iter().all(|&(_, i)| [0, 2, 5].contains(&i)));
        assert_eq!(plan.replacement_draws, 10);
        let again = sample_batch(&bins, &[0], 20, 0, &mut seeded_rng(6)).unwrap();
        assert_eq!(plan, again);
    }

    #[test]
    fn domain_choice() {
        assert_eq!(choose_source_domain(1, &mut seeded_rng(0)).unwrap(), 0);
        assert!(choose_source_domain(0, &mut seeded_rng(0)).is_err());
        let mut rng = seeded_rng(12);
        let mut counts = [0usize; 3];
        let n = 30_000;
        for _ in 0..n {
            counts[choose_source_domain(3, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }
}
