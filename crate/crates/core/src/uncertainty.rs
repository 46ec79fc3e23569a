//! Monte Carlo dropout statistics over the target set.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use crate::error::{shape_err, Error, Result};
use crate::neuralcore::{argmax, DropoutMask, Model};
use crate::seed::component_rng;

/// Per-sample, per-class mean and standard deviation of the masked
/// classifier outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyTable {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
    pub iterations: usize,
    pub rate: f64,
    pub seed: u64,
    pub snapshot_id: String,
}

impl UncertaintyTable {
    pub fn samples(&self) -> usize {
        self.mean.nrows()
    }

    pub fn classes(&self) -> usize {
        self.mean.ncols()
    }

    /// Builds a table from the outputs of each masked pass (one matrix per
    /// pass, all of identical shape).
    pub fn from_pass_outputs(outputs: &[Array2<f64>]) -> Result<(Array2<f64>, Array2<f64>)> {
        if outputs.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 MCD passes, got {}",
                outputs.len()
            )));
        }
        let dim = outputs[0].dim();
        if dim.0 == 0 {
            return Err(Error::Empty("target set"));
        }
        if let Some(bad) = outputs.iter().find(|o| o.dim() != dim) {
            return Err(shape_err("MCD pass output", format!("{dim:?}"), format!("{:?}", bad.dim())));
        }
        let mut mean = Array2::zeros(dim);
        let mut std = Array2::zeros(dim);
        let mut column = vec![0.0; outputs.len()];
        for i in 0..dim.0 {
            for c in 0..dim.1 {
                for (slot, o) in column.iter_mut().zip(outputs) {
                    *slot = o[[i, c]];
                }
                let (m, s) = sample_mean_std(&column);
                mean[[i, c]] = m;
                std[[i, c]] = s;
            }
        }
        Ok((mean, std))
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# ubr2s-uncertainty v1 snapshot={} seed={} iterations={} rate={}",
            self.snapshot_id, self.seed, self.iterations, self.rate
        )?;
        writeln!(w, "sample\tclass\tmean\tstd")?;
        for i in 0..self.samples() {
            for c in 0..self.classes() {
                writeln!(w, "{i}\t{c}\t{}\t{}", self.mean[[i, c]], self.std[[i, c]])?;
            }
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty uncertainty file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[1] != "ubr2s-uncertainty" || fields[2] != "v1" {
            return Err(Error::Format(format!("bad uncertainty header: {header}")));
        }
        let field = |idx: usize, key: &str| -> Result<String> {
            fields[idx]
                .strip_prefix(key)
                .map(str::to_string)
                .ok_or_else(|| Error::Format(format!("missing {key}")))
        };
        let snapshot_id = field(3, "snapshot=")?;
        let seed = parse(&field(4, "seed=")?)?;
        let iterations = parse(&field(5, "iterations=")?)?;
        let rate = parse(&field(6, "rate=")?)?;
        lines.next();
        let mut cells: Vec<(usize, usize, f64, f64)> = Vec::new();
        for line in lines {
            let line = line?;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::Format(format!("bad uncertainty row: {line}")));
            }
            cells.push((parse(cols[0])?, parse(cols[1])?, parse(cols[2])?, parse(cols[3])?));
        }
        let rows = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        let cols = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
        if rows * cols != cells.len() {
            return Err(Error::Format("uncertainty table is not rectangular".into()));
        }
        let mut mean = Array2::zeros((rows, cols));
        let mut std = Array2::zeros((rows, cols));
        for (i, c, m, s) in cells {
            mean[[i, c]] = m;
            std[[i, c]] = s;
        }
        Ok(UncertaintyTable {
            mean,
            std,
            iterations,
            rate,
            seed,
            snapshot_id,
        })
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {s:?}")))
}

/// Mean and (n−1)-denominator standard deviation. Identical values yield
/// exactly that value and zero spread.
pub fn sample_mean_std(values: &[f64]) -> (f64, f64) {
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return (first, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Runs the model once per supplied mask and aggregates the outputs.
pub fn extract_with_masks(
    model: &Model,
    target_inputs: ArrayView2<f64>,
    masks: &[DropoutMask],
) -> Result<(Array2<f64>, Array2<f64>)> {
    if target_inputs.nrows() == 0 {
        return Err(Error::Empty("target set"));
    }
    let outputs = masks
        .iter()
        .map(|m| model.forward(target_inputs, Some(m)))
        .collect::<Result<Vec<_>>>()?;
    UncertaintyTable::from_pass_outputs(&outputs)
}

/// Monte Carlo dropout extraction: `mcd_iterations` passes, each with one
/// fresh mask (shared across samples) drawn from the stream
/// `("mcd-pass", pass_index)` of `seed`.
pub fn extract_uncertainty(
    model: &Model,
    target_inputs: ArrayView2<f64>,
    mcd_iterations: usize,
    mcd_rate: f64,
    seed: u64,
) -> Result<UncertaintyTable> {
    if mcd_iterations < 2 {
        return Err(Error::Config(format!(
            "mcd iterations must be >= 2, got {mcd_iterations}"
        )));
    }
    if !(mcd_rate > 0.0 && mcd_rate < 1.0) {
        return Err(Error::Config(format!("mcd rate {mcd_rate} outside (0, 1)")));
    }
    if target_inputs.nrows() == 0 {
        return Err(Error::Empty("target set"));
    }
    let masks = (0..mcd_iterations)
        .map(|m| {
            let mut rng = component_rng(seed, "mcd-pass", m as u64);
            DropoutMask::sample(model.hidden_dim(), mcd_rate, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = extract_with_masks(model, target_inputs, &masks)?;
    Ok(UncertaintyTable {
        mean,
        std,
        iterations: mcd_iterations,
        rate: mcd_rate,
        seed,
        snapshot_id: model.snapshot_id(),
    })
}

/// `ν_i = argmax_c μ_{i,c}`, lowest class index on ties.
pub fn argmax_bin_ids(table: &UncertaintyTable) -> Vec<usize> {
    table
        .mean
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()))
        .collect()
}

/// Directory of cached tables keyed by (snapshot id, seed, iterations, rate).
#[derive(Debug, Clone)]
pub struct UncertaintyCache {
    dir: PathBuf,
}

impl UncertaintyCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        UncertaintyCache { dir: dir.into() }
    }

    pub fn path_for(&self, snapshot_id: &str, seed: u64, iterations: usize, rate: f64) -> PathBuf {
        self.dir.join(format!(
            "mcd-{snapshot_id}-{seed}-{iterations}-{:016x}.tsv",
            rate.to_bits()
        ))
    }

    pub fn load_or_extract(
        &self,
        model: &Model,
        target_inputs: ArrayView2<f64>,
        mcd_iterations: usize,
        mcd_rate: f64,
        seed: u64,
    ) -> Result<UncertaintyTable> {
        let path = self.path_for(&model.snapshot_id(), seed, mcd_iterations, mcd_rate);
        if path.exists() {
            let table = UncertaintyTable::read_tsv(BufReader::new(fs::File::open(&path)?))?;
            if table.samples() == target_inputs.nrows() {
                return Ok(table);
            }
        }
        let table = extract_uncertainty(model, target_inputs, mcd_iterations, mcd_rate, seed)?;
        fs::create_dir_all(&self.dir)?;
        write_atomically(&path, |f| table.write_tsv(f))?;
        Ok(table)
    }
}

fn write_atomically(path: &Path, body: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    body(&mut f)?;
    f.sync_all()?;
    fs::rename(tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::ModelSpec;
    use crate::seed::seeded_rng;
    use ndarray::array;

    fn fixture_model() -> Model {
        let spec = ModelSpec {
            classes: 3,
            ..ModelSpec::default()
        };
        Model::new(&spec, &mut seeded_rng(11)).unwrap()
    }

    fn fixture_inputs() -> Array2<f64> {
        array![[0.2, 0.1], [-1.0, 0.5], [0.7, -0.8], [1.5, 1.5]]
    }

    #[test]
    fn hand_computed_sample_std() {
        let (m, s) = sample_mean_std(&[0.2, 0.4, 0.6, 0.8]);
        assert!((m - 0.5).abs() < 1e-15);
        // sqrt((0.09 + 0.01 + 0.01 + 0.09) / 3)
        assert!((s - (0.2f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((s - 0.258199).abs() < 1e-6);
    }

    #[test]
    fn ones_masks_collapse_to_deterministic_forward() {
        let model = fixture_model();
        let x = fixture_inputs();
        let masks = vec![DropoutMask::ones(model.hidden_dim()); 5];
        let (mean, std) = extract_with_masks(&model, x.view(), &masks).unwrap();
        assert_eq!(mean, model.forward(x.view(), None).unwrap());
        assert!(std.iter().all(|&s| s == 0.0));
        let table = UncertaintyTable {
            mean,
            std,
            iterations: 5,
            rate: 0.0,
            seed: 0,
            snapshot_id: model.snapshot_id(),
        };
        assert_eq!(argmax_bin_ids(&table), model.predict(x.view()).unwrap());
    }

    #[test]
    fn extraction_properties() {
        let model = fixture_model();
        let before = model.snapshot_id();
        let x = fixture_inputs();
        let t = extract_uncertainty(&model, x.view(), 50, 0.75, 42).unwrap();
        assert_eq!(model.snapshot_id(), before);
        assert_eq!(t.snapshot_id, before);
        for r in t.mean.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-6);
            assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(t.std.iter().all(|&s| s >= 0.0));
        assert!(t.std.iter().any(|&s| s > 0.0));
        let again = extract_uncertainty(&model, x.view(), 50, 0.75, 42).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn configuration_errors() {
        let model = fixture_model();
        let x = fixture_inputs();
        assert!(matches!(
            extract_uncertainty(&model, x.view(), 1, 0.75, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            extract_uncertainty(&model, x.view(), 10, 0.0, 0),
            Err(Error::Config(_))
        ));
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            extract_uncertainty(&model, empty.view(), 10, 0.5, 0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        let table = UncertaintyTable {
            mean: array![[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]],
            std: Array2::zeros((2, 3)),
            iterations: 2,
            rate: 0.5,
            seed: 0,
            snapshot_id: String::new(),
        };
        assert_eq!(argmax_bin_ids(&table), vec![1, 0]);
    }

    #[test]
    fn tsv_cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = UncertaintyCache::new(dir.path());
        let model = fixture_model();
        let x = fixture_inputs();
        let first = cache.load_or_extract(&model, x.view(), 10, 0.5, 3).unwrap();
        let path = cache.path_for(&model.snapshot_id(), 3, 10, 0.5);
        assert!(path.exists());
        let second = cache.load_or_extract(&model, x.view(), 10, 0.5, 3).unwrap();
        assert_eq!(first, second);
    }
}
