//! End-to-end runs: fixture generation, pretraining, adaptation, reporting,
//! multi-seed summaries, and ablation grids.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datasets::{Descriptor, DomainDataset, DomainRole, GeneratorKind};
use crate::error::{Error, Result};
use crate::neuralcore::Model;
use crate::reweighting::ReweighMode;
use crate::seed::{derive_seed, seeded_rng};
use crate::smoothing::Scope;
use crate::trainer::{adapt, evaluate, pretrain, CycleDiagnostics, LabeledSet, Metrics, PretrainReport};

/// Generated domains for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub sources: Vec<DomainDataset>,
    /// Held-out samples from the first source distribution.
    pub source_test: DomainDataset,
    pub target: DomainDataset,
}

fn descriptor(cfg: &RunConfig, role: DomainRole, per_class: usize, rotation: f64, scale: f64, seed: u64) -> Descriptor {
    Descriptor {
        kind: cfg.data.kind,
        role,
        classes: cfg.data.class_count(),
        per_class,
        rotation,
        scale,
        noise: cfg.data.noise,
        seed,
    }
}

/// Descriptors of every dataset a run with `seed` uses.
pub fn fixture_descriptors(cfg: &RunConfig, seed: u64) -> (Vec<Descriptor>, Descriptor, Descriptor) {
    let d = &cfg.data;
    let sources = d
        .source_rotations
        .iter()
        .enumerate()
        .map(|(i, &rot)| {
            descriptor(
                cfg,
                DomainRole::Source(i as u8),
                d.per_class,
                rot,
                1.0,
                derive_seed(seed, "source-data", i as u64),
            )
        })
        .collect();
    let test = descriptor(
        cfg,
        DomainRole::Source(0),
        d.test_per_class.max(1),
        d.source_rotations[0],
        1.0,
        derive_seed(seed, "source-test", 0),
    );
    let target = descriptor(
        cfg,
        DomainRole::Target,
        d.target_per_class,
        d.rotation,
        d.scale,
        derive_seed(seed, "target-data", 0),
    );
    (sources, test, target)
}

pub fn build_fixture(cfg: &RunConfig, seed: u64) -> Result<Fixture> {
    let (sources, test, target) = fixture_descriptors(cfg, seed);
    Ok(Fixture {
        sources: sources.iter().map(Descriptor::generate).collect::<Result<_>>()?,
        source_test: test.generate()?,
        target: target.generate()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub target: Metrics,
    pub source_test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub pretrain: PretrainReport,
    /// Metrics right after source-only pretraining.
    pub source_only: PhaseMetrics,
    pub adapted: PhaseMetrics,
    pub cycles: Vec<CycleDiagnostics>,
    pub pretrain_snapshot: String,
    pub final_snapshot: String,
}

#[derive(Serialize)]
struct Record<'a, T: Serialize> {
    record: &'a str,
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

impl RunReport {
    /// One JSON object per line: `manifest`, `pretrain`, one `cycle` per
    /// adaptation cycle, then `result`.
    pub fn to_jsonl(&self, cfg: &RunConfig) -> String {
        #[derive(Serialize)]
        struct Manifest {
            config: std::collections::BTreeMap<String, String>,
        }
        #[derive(Serialize)]
        struct Pre<'a> {
            report: &'a PretrainReport,
            snapshot: &'a str,
        }
        #[derive(Serialize)]
        struct Res<'a> {
            source_only: &'a PhaseMetrics,
            adapted: &'a PhaseMetrics,
            final_snapshot: &'a str,
        }
        let manifest = Manifest {
            config: crate::config::KEYS
                .iter()
                .filter(|k| **k != "out")
                .map(|k| (k.to_string(), cfg.get(k).expect("known key")))
                .collect(),
        };
        let (hash, seed) = (self.config_hash.as_str(), self.seed);
        let mut lines = vec![
            record_line("manifest", hash, seed, &manifest),
            record_line(
                "pretrain",
                hash,
                seed,
                &Pre {
                    report: &self.pretrain,
                    snapshot: &self.pretrain_snapshot,
                },
            ),
        ];
        lines.extend(self.cycles.iter().map(|c| record_line("cycle", hash, seed, c)));
        lines.push(record_line(
            "result",
            hash,
            seed,
            &Res {
                source_only: &self.source_only,
                adapted: &self.adapted,
                final_snapshot: &self.final_snapshot,
            },
        ));
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// Rebuilds the headline metrics from report lines.
    pub fn parse_result_line(text: &str) -> Result<(PhaseMetrics, PhaseMetrics)> {
        #[derive(Deserialize)]
        struct Res {
            record: String,
            source_only: PhaseMetrics,
            adapted: PhaseMetrics,
        }
        for line in text.lines().rev() {
            if let Ok(r) = serde_json::from_str::<Res>(line) {
                if r.record == "result" {
                    return Ok((r.source_only, r.adapted));
                }
            }
        }
        Err(Error::Format("report has no result record".into()))
    }
}

fn record_line<T: Serialize>(record: &str, config_hash: &str, seed: u64, body: &T) -> String {
    serde_json::to_string(&Record {
        record,
        config_hash,
        seed,
        body,
    })
    .expect("report records serialize")
}

/// Models and report of one seeded run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub pretrained: Model,
    pub adapted: Model,
}

/// Pretrains and adapts on the fixture generated for `seed`.
pub fn run_experiment(cfg: &RunConfig, seed: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    let fixture = build_fixture(cfg, seed)?;
    run_on_fixture(cfg, seed, fixture)
}

pub fn run_on_fixture(cfg: &RunConfig, seed: u64, fixture: Fixture) -> Result<RunOutcome> {
    let Fixture {
        sources,
        source_test,
        target,
    } = fixture;
    let (target_inputs, target_labels) = target.into_unlabeled();
    let source_sets: Vec<LabeledSet<'_>> = sources
        .iter()
        .map(|s| LabeledSet {
            inputs: s.inputs.view(),
            labels: &s.labels,
        })
        .collect();

    let mut schedule = cfg.schedule.clone();
    schedule.seed = derive_seed(seed, "train", 0);
    let mut model = Model::new(&cfg.model_spec(), &mut seeded_rng(derive_seed(seed, "init", 0)))?;

    let pre = pretrain(&mut model, &source_sets, &schedule, &cfg.smoothing)?;
    let source_only = PhaseMetrics {
        target: evaluate(&model, target_inputs.view(), &target_labels)?,
        source_test: evaluate(&model, source_test.inputs.view(), &source_test.labels)?,
    };
    let pretrained = model.clone();

    let adapt_report = adapt(&mut model, &source_sets, target_inputs.view(), &schedule, &cfg.smoothing)?;
    let adapted = PhaseMetrics {
        target: evaluate(&model, target_inputs.view(), &target_labels)?,
        source_test: evaluate(&model, source_test.inputs.view(), &source_test.labels)?,
    };
    let report = RunReport {
        config_hash: cfg.hash(),
        seed,
        pretrain: pre,
        source_only,
        adapted,
        cycles: adapt_report.cycles,
        pretrain_snapshot: pretrained.snapshot_id(),
        final_snapshot: model.snapshot_id(),
    };
    Ok(RunOutcome {
        report,
        pretrained,
        adapted: model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and (n−1)-denominator standard deviation; zero spread for one value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub source_only_accuracy: MeanStd,
    pub source_only_mca: MeanStd,
    pub adapted_accuracy: MeanStd,
    pub adapted_mca: MeanStd,
}

impl SeedSummary {
    pub fn from_reports(reports: &[RunReport]) -> Result<Self> {
        let first = reports.first().ok_or(Error::Empty("seed reports"))?;
        let pick = |f: fn(&RunReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        Ok(SeedSummary {
            config_hash: first.config_hash.clone(),
            seeds: reports.iter().map(|r| r.seed).collect(),
            source_only_accuracy: pick(|r| r.source_only.target.accuracy),
            source_only_mca: pick(|r| r.source_only.target.mean_class_accuracy),
            adapted_accuracy: pick(|r| r.adapted.target.accuracy),
            adapted_mca: pick(|r| r.adapted.target.mean_class_accuracy),
        })
    }

    pub fn gain(&self) -> f64 {
        self.adapted_accuracy.mean - self.source_only_accuracy.mean
    }
}

/// Runs `cfg.seeds` consecutive seeds starting at `cfg.seed`.
pub fn run_seeds(cfg: &RunConfig) -> Result<(Vec<RunReport>, SeedSummary)> {
    let reports = (0..cfg.seeds as u64)
        .map(|k| run_experiment(cfg, cfg.seed + k).map(|o| o.report))
        .collect::<Result<Vec<_>>>()?;
    let summary = SeedSummary::from_reports(&reports)?;
    Ok((reports, summary))
}

/// One ablation cell: a named override of the base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub label: String,
    pub config: RunConfig,
}

/// The eight smoothing/reweighting rows (pretrain scope, adapt scope, reweigh).
pub fn dss_grid(base: &RunConfig) -> Vec<AblationCell> {
    use ReweighMode as R;
    use Scope as S;
    let rows = [
        (S::None, S::None, R::None),
        (S::Source, S::None, R::None),
        (S::Source, S::Source, R::None),
        (S::Source, S::Target, R::None),
        (S::Source, S::Both, R::None),
        (S::Source, S::Source, R::Sl),
        (S::Source, S::Source, R::De),
        (S::Source, S::Source, R::DeSl),
    ];
    rows.iter()
        .map(|&(pre, ada, rw)| {
            let mut config = base.clone();
            config.smoothing.pretrain = pre;
            config.smoothing.adapt = ada;
            config.schedule.reweigh = rw;
            AblationCell {
                label: format!("pre={pre} ada={ada} reweigh={rw}"),
                config,
            }
        })
        .collect()
}

/// ε ∈ {0, 0.05, …, 0.4} with source smoothing in both phases.
pub fn epsilon_grid(base: &RunConfig) -> Vec<AblationCell> {
    (0..=8)
        .map(|k| {
            let eps = k as f64 * 0.05;
            let mut config = base.clone();
            config.smoothing.epsilon = (eps * 100.0).round() / 100.0;
            config.smoothing.pretrain = Scope::Source;
            config.smoothing.adapt = Scope::Source;
            AblationCell {
                label: format!("epsilon={}", config.smoothing.epsilon),
                config,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub summary: SeedSummary,
    /// Loaded from a previous run of the same cell.
    #[serde(skip)]
    pub resumed: bool,
}

/// Runs every cell, reusing `cells/<config-hash>-<seed>-<seeds>.json` when
/// present in `dir`.
pub fn run_ablation(cells: &[AblationCell], dir: &Path) -> Result<Vec<AblationRow>> {
    let cell_dir = dir.join("cells");
    fs::create_dir_all(&cell_dir)?;
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let path = cell_path(&cell_dir, &cell.config);
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(mut row) = serde_json::from_str::<AblationRow>(&text) {
                row.resumed = true;
                rows.push(row);
                continue;
            }
        }
        let (_, summary) = run_seeds(&cell.config)?;
        let row = AblationRow {
            label: cell.label.clone(),
            summary,
            resumed: false,
        };
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_string(&row).expect("row serializes"))?;
        fs::rename(&tmp, &path)?;
        rows.push(row);
    }
    Ok(rows)
}

fn cell_path(dir: &Path, cfg: &RunConfig) -> PathBuf {
    dir.join(format!("{}-{}-{}.json", cfg.hash(), cfg.seed, cfg.seeds))
}

/// Tab-separated ablation table.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "cell\tconfig_hash\tsource_only_acc\tsource_only_acc_std\tadapted_acc\tadapted_acc_std\tsource_only_mca\tadapted_mca\n",
    );
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.label,
            s.config_hash,
            s.source_only_accuracy.mean,
            s.source_only_accuracy.std,
            s.adapted_accuracy.mean,
            s.adapted_accuracy.std,
            s.source_only_mca.mean,
            s.adapted_mca.mean
        );
    }
    out
}

/// Writes every dataset of a seed into `dir`; returns `(path, sha256)` pairs.
/// Target files carry their labels for offline evaluation only.
pub fn write_fixture(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<Vec<(PathBuf, String)>> {
    let fixture = build_fixture(cfg, seed)?;
    fs::create_dir_all(dir)?;
    let kind = match cfg.data.kind {
        GeneratorKind::Blobs => "blobs",
        GeneratorKind::Moons => "moons",
    };
    let mut files = Vec::new();
    let mut emit = |name: String, ds: &DomainDataset| -> Result<()> {
        let bytes = ds.to_bytes(true);
        let path = dir.join(name);
        fs::write(&path, &bytes)?;
        files.push((path, crate::seed::hex_digest(&bytes)));
        Ok(())
    };
    for (i, s) in fixture.sources.iter().enumerate() {
        emit(format!("{kind}-seed{seed}-source{i}.ds"), s)?;
    }
    emit(format!("{kind}-seed{seed}-source-test.ds"), &fixture.source_test)?;
    emit(format!("{kind}-seed{seed}-target.ds"), &fixture.target)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn quick_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("data.per_class", "40"),
            ("data.target_per_class", "40"),
            ("data.test_per_class", "20"),
            ("train.pretrain_iterations", "30"),
            ("train.cycles", "2"),
            ("train.steps", "12"),
            ("mcd.iterations", "4"),
            ("batch.size", "32"),
            ("model.feature_dims", "16,8"),
            ("model.classifier_hidden", "8"),
        ] {
            cfg.set(k, v).unwrap();
        }
        cfg
    }

    #[test]
    fn reports_are_reproducible() {
        let cfg = quick_config();
        let a = run_experiment(&cfg, 3).unwrap().report;
        let b = run_experiment(&cfg, 3).unwrap().report;
        assert_eq!(a.to_jsonl(&cfg), b.to_jsonl(&cfg));
        let text = a.to_jsonl(&cfg);
        assert_eq!(text.lines().count(), 2 + cfg.schedule.cycles + 1);
        let (so, ad) = RunReport::parse_result_line(&text).unwrap();
        assert_eq!(so, a.source_only);
        assert_eq!(ad, a.adapted);
    }

    #[test]
    fn grids_have_expected_shape() {
        let base = RunConfig::default();
        let g = dss_grid(&base);
        assert_eq!(g.len(), 8);
        assert_eq!(g[7].config.schedule.reweigh, ReweighMode::DeSl);
        assert_eq!(g[3].config.smoothing.adapt, Scope::Target);
        let e = epsilon_grid(&base);
        assert_eq!(e.len(), 9);
        assert_eq!(e[0].config.smoothing.epsilon, 0.0);
        assert_eq!(e[8].config.smoothing.epsilon, 0.4);
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 1.0).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn multi_source_fixture() {
        let mut cfg = quick_config();
        cfg.set("data.source_rotations", "0,20").unwrap();
        let f = build_fixture(&cfg, 1).unwrap();
        assert_eq!(f.sources.len(), 2);
        assert_eq!(f.sources[1].descriptor.role, DomainRole::Source(1));
        run_on_fixture(&cfg, 1, f).unwrap();
    }
}
