use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ubr2s::checkpoint::Checkpoint;
use ubr2s::config::RunConfig;
use ubr2s::datasets::DomainDataset;
use ubr2s::experiment::{
    ablation_table, dss_grid, epsilon_grid, run_ablation, run_experiment, write_fixture, SeedSummary,
};
use ubr2s::neuralcore::Model;
use ubr2s::trainer::evaluate;

#[derive(Parser)]
#[command(name = "ubr2s", version, about = "Uncertainty-based resampling and reweighting for domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the seeded source, source-test and target datasets.
    Generate(ConfigArgs),
    /// Pretrain and adapt for each seed; write reports and checkpoints.
    Run(ConfigArgs),
    /// Run an ablation grid, reusing finished cells.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value_t = Grid::Dss)]
        grid: Grid,
    },
    /// Score a checkpoint on a labeled dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Print the resolved configuration and its hash.
    ShowConfig(ConfigArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    /// Smoothing scopes and reweighting modes.
    Dss,
    /// Smoothing strength 0 to 0.4.
    Epsilon,
}

/// Configuration sources, applied in order: defaults, file, `--set`, flags.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<usize>,
    /// Pretraining smoothing scope: none | source.
    #[arg(long)]
    dss_pre: Option<String>,
    /// Adaptation smoothing scope: none | source | target | both.
    #[arg(long)]
    dss_ada: Option<String>,
    /// Reweighting mode: none | sl | de | de+sl.
    #[arg(long)]
    reweigh: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {kv:?}");
            };
            cfg.set(k.trim(), v)?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("seeds", self.seeds.map(|v| v.to_string())),
            ("dss.pretrain", self.dss_pre.clone()),
            ("dss.adapt", self.dss_ada.clone()),
            ("reweigh", self.reweigh.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_checkpoint(path: &Path, model: &Model, seed: u64, lineage: &str) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Checkpoint {
        model: model.clone(),
        seed,
        lineage: lineage.into(),
    }
    .write_to(BufWriter::new(file))?;
    Ok(())
}

fn generate(cfg: &RunConfig) -> Result<()> {
    let mut manifest = String::from("seed\tpath\tsha256\n");
    for seed in cfg.seed..cfg.seed + cfg.seeds as u64 {
        for (path, digest) in write_fixture(cfg, seed, &cfg.out)? {
            println!("{}  {digest}", path.display());
            manifest.push_str(&format!("{seed}\t{}\t{digest}\n", path.display()));
        }
    }
    fs::write(cfg.out.join("manifest.tsv"), manifest)?;
    Ok(())
}

fn run(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out.join(cfg.hash());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.txt"), cfg.to_kv_text())?;
    let mut reports = Vec::with_capacity(cfg.seeds);
    for seed in cfg.seed..cfg.seed + cfg.seeds as u64 {
        let outcome = run_experiment(cfg, seed)?;
        fs::write(dir.join(format!("seed-{seed}.jsonl")), outcome.report.to_jsonl(cfg))?;
        write_checkpoint(&dir.join(format!("seed-{seed}-pretrain.ckpt")), &outcome.pretrained, seed, "pretrain")?;
        let lineage = format!("adapt/cycle-{}", outcome.report.cycles.len());
        write_checkpoint(&dir.join(format!("seed-{seed}-adapted.ckpt")), &outcome.adapted, seed, &lineage)?;
        let r = &outcome.report;
        println!(
            "seed {seed}: target accuracy {:.4} -> {:.4}, mean class accuracy {:.4} -> {:.4}",
            r.source_only.target.accuracy,
            r.adapted.target.accuracy,
            r.source_only.target.mean_class_accuracy,
            r.adapted.target.mean_class_accuracy
        );
        reports.push(outcome.report);
    }
    let summary = SeedSummary::from_reports(&reports)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "config {} over {} seed(s): source-only {:.4} ± {:.4}, adapted {:.4} ± {:.4}",
        summary.config_hash,
        summary.seeds.len(),
        summary.source_only_accuracy.mean,
        summary.source_only_accuracy.std,
        summary.adapted_accuracy.mean,
        summary.adapted_accuracy.std
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn ablate(cfg: &RunConfig, grid: Grid) -> Result<()> {
    let cells = match grid {
        Grid::Dss => dss_grid(cfg),
        Grid::Epsilon => epsilon_grid(cfg),
    };
    fs::create_dir_all(&cfg.out)?;
    let rows = run_ablation(&cells, &cfg.out)?;
    let table = ablation_table(&rows);
    let name = match grid {
        Grid::Dss => "ablation-dss.tsv",
        Grid::Epsilon => "ablation-epsilon.tsv",
    };
    fs::write(cfg.out.join(name), &table)?;
    let resumed = rows.iter().filter(|r| r.resumed).count();
    print!("{table}");
    println!("{} cells ({resumed} resumed), wrote {}", rows.len(), cfg.out.join(name).display());
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path) -> Result<()> {
    let file = fs::File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    let ckpt = Checkpoint::read_from(BufReader::new(file)).with_context(|| format!("reading {}", checkpoint.display()))?;
    let file = fs::File::open(data).with_context(|| format!("opening {}", data.display()))?;
    let ds = DomainDataset::read_from(BufReader::new(file)).with_context(|| format!("reading {}", data.display()))?;
    if ds.labels.is_empty() {
        bail!("{} carries no labels", data.display());
    }
    let m = evaluate(&ckpt.model, ds.inputs.view(), &ds.labels)?;
    println!(
        "{} ({}) on {}: accuracy {:.4}, mean class accuracy {:.4}",
        checkpoint.display(),
        ckpt.lineage,
        data.display(),
        m.accuracy,
        m.mean_class_accuracy
    );
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => generate(&args.resolve()?),
        Command::Run(args) => run(&args.resolve()?),
        Command::Ablate { config, grid } => ablate(&config.resolve()?, grid),
        Command::Eval { checkpoint, data } => eval(&checkpoint, &data),
        Command::ShowConfig(args) => {
            let cfg = args.resolve()?;
            print!("{}", cfg.to_kv_text());
            println!("# hash {}", cfg.hash());
            Ok(())
        }
    }
}
