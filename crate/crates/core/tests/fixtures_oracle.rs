//! Baseline oracles for the synthetic domain-shift fixtures.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use ubr2s::config::RunConfig;
use ubr2s::datasets::{make_blobs, make_moons, DomainDataset};
use ubr2s::experiment::build_fixture;
use ubr2s::neuralcore::{argmax, softmax_rows, Model};
use ubr2s::seed::seeded_rng;
use ubr2s::trainer::{evaluate, pretrain, LabeledSet};

/// Multinomial logistic regression fitted by full-batch gradient descent.
struct Linear {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl Linear {
    fn fit(ds: &DomainDataset, classes: usize) -> Self {
        let x = &ds.inputs;
        let n = x.nrows() as f64;
        let mut onehot = Array2::zeros((x.nrows(), classes));
        for (i, &l) in ds.labels.iter().enumerate() {
            onehot[[i, l]] = 1.0;
        }
        let mut model = Linear {
            w: Array2::zeros((x.ncols(), classes)),
            b: Array1::zeros(classes),
        };
        for _ in 0..2000 {
            let err = softmax_rows(&model.logits(x.view())) - &onehot;
            model.w.scaled_add(-0.5 / n, &x.t().dot(&err));
            model.b.scaled_add(-0.5 / n, &err.sum_axis(Axis(0)));
        }
        model
    }

    fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    fn accuracy(&self, ds: &DomainDataset) -> f64 {
        let logits = self.logits(ds.inputs.view());
        let hits = logits
            .rows()
            .into_iter()
            .zip(&ds.labels)
            .filter(|(row, &l)| argmax(row.iter().copied()) == l)
            .count();
        hits as f64 / ds.len() as f64
    }
}

#[test]
fn linear_baseline_on_rotated_blobs() {
    let source = make_blobs(4, 250, 0.0, 1.0, 0.3, 1).unwrap();
    let test = make_blobs(4, 250, 0.0, 1.0, 0.3, 2).unwrap();
    let target = make_blobs(4, 250, 50.0, 1.0, 0.3, 3).unwrap();
    let clf = Linear::fit(&source, 4);
    let (src, tgt) = (clf.accuracy(&test), clf.accuracy(&target));
    assert!(src > 0.95, "source test {src}");
    assert!(tgt < 0.80, "target {tgt}");
}

fn source_only(cfg: &RunConfig, seed: u64) -> (f64, f64, f64) {
    let f = build_fixture(cfg, seed).unwrap();
    let sets = [LabeledSet {
        inputs: f.sources[0].inputs.view(),
        labels: &f.sources[0].labels,
    }];
    let mut model = Model::new(&cfg.model_spec(), &mut seeded_rng(seed)).unwrap();
    pretrain(&mut model, &sets, &cfg.schedule, &cfg.smoothing).unwrap();
    let train = evaluate(&model, f.sources[0].inputs.view(), &f.sources[0].labels).unwrap();
    let test = evaluate(&model, f.source_test.inputs.view(), &f.source_test.labels).unwrap();
    let target = evaluate(&model, f.target.inputs.view(), &f.target.labels).unwrap();
    (train.accuracy, test.accuracy, target.accuracy)
}

#[test]
fn default_pretraining_fits_blobs_source() {
    let (train, _, _) = source_only(&RunConfig::default(), 0);
    assert!(train > 0.95, "source train accuracy {train}");
}

#[test]
fn rotated_moons_degrade_source_only_model() {
    let (_, test, target) = source_only(&RunConfig::moons(), 0);
    assert!(test - target >= 0.10, "source test {test}, target {target}");
}

#[test]
fn source_only_accuracy_falls_with_rotation() {
    let acc = |rotation: &str| {
        let mut cfg = RunConfig::moons();
        cfg.set("data.rotation", rotation).unwrap();
        source_only(&cfg, 0).2
    };
    let (a0, a45, a90) = (acc("0"), acc("45"), acc("90"));
    assert!(a0 + 0.02 >= a45 && a45 + 0.02 >= a90, "{a0} {a45} {a90}");
}

#[test]
fn identity_shifts_reproduce_source() {
    let a = make_moons(50, 0.0, 0.1, 9).unwrap();
    let b = make_moons(50, 360.0, 0.1, 9).unwrap();
    assert_eq!(a.inputs, b.inputs);
    let c = make_blobs(3, 20, 0.0, 1.0, 0.2, 4).unwrap();
    let d = make_blobs(3, 20, 0.0, 1.0, 0.2, 4).unwrap();
    assert_eq!(c.inputs, d.inputs);
}

#[test]
fn half_turn_swaps_antipodal_blobs() {
    let src = make_blobs(2, 200, 0.0, 1.0, 0.0, 5).unwrap();
    let rot = make_blobs(2, 200, 180.0, 1.0, 0.0, 5).unwrap();
    for (a, b) in src.inputs.rows().into_iter().zip(rot.inputs.rows()) {
        assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
    }
}
