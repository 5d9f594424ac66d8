//! Coverage and length metrics, the repeated-split experiment protocol and
//! result emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::read_dataset;
use crate::dispatch::{build_case, sample_feasible_loads, sample_rng, CaseSpec, GridCase};
use crate::error::{Error, Result};
use crate::interval::{BoundedSample, Interval};
use crate::methods::{fit_method, CpulVariant, MethodConfig, MethodKind};
use crate::proxies::{make_bounded_samples, solve_instances, DualProxy, PrimalProxy, SolvedInstance};

/// Percentage of labels inside their intervals.
pub fn picp(intervals: &[Interval], ys: &[f64]) -> Result<f64> {
    if intervals.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} intervals, {} labels",
            intervals.len(),
            ys.len()
        )));
    }
    if ys.is_empty() {
        return Err(Error::EmptySample);
    }
    let covered = intervals.iter().zip(ys).filter(|(iv, y)| iv.contains(**y)).count();
    Ok(100.0 * covered as f64 / ys.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthMetric {
    /// Mean of `|C(x)| / |y|`, in percent.
    pub percent: f64,
    /// Samples dropped because `|y|` was negligible.
    pub excluded: usize,
}

/// Mean interval width relative to `|y|`, in percent. Labels with
/// `|y| < 1e-12 · max|y|` are skipped and counted.
pub fn normalized_length(intervals: &[Interval], ys: &[f64]) -> Result<LengthMetric> {
    if intervals.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} intervals, {} labels",
            intervals.len(),
            ys.len()
        )));
    }
    let max_abs = ys.iter().fold(0.0f64, |a, y| a.max(y.abs()));
    let cutoff = 1e-12 * max_abs;
    let mut total = 0.0;
    let mut used = 0usize;
    for (iv, y) in intervals.iter().zip(ys) {
        if y.abs() < cutoff || *y == 0.0 {
            continue;
        }
        total += iv.width() / y.abs();
        used += 1;
    }
    let excluded = ys.len() - used;
    if used == 0 {
        return Err(Error::InvalidSample(
            "every label is too close to zero for a relative length".into(),
        ));
    }
    if excluded > 0 {
        log::warn!("normalized length: excluded {excluded} samples with |y| near zero");
    }
    Ok(LengthMetric {
        percent: 100.0 * total / used as f64,
        excluded,
    })
}

fn default_repeats() -> usize {
    10
}
fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.10, 0.15]
}
fn default_methods() -> Vec<MethodEntry> {
    MethodKind::ALL.into_iter().map(MethodEntry::Name).collect()
}
fn default_global_range() -> (f64, f64) {
    (0.6, 1.0)
}
fn default_local_range() -> (f64, f64) {
    (0.85, 1.15)
}
fn default_regularization() -> f64 {
    1e-3
}

/// A method given either by name or as a full table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodEntry {
    Name(MethodKind),
    Config(MethodConfig),
}

impl MethodEntry {
    pub fn config(&self) -> MethodConfig {
        match self {
            MethodEntry::Name(kind) => MethodConfig::new(*kind),
            MethodEntry::Config(c) => c.clone(),
        }
    }
}

/// Where samples come from: a precomputed dataset, or a case (file or
/// recipe) from which loads are sampled and bounds produced per repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Label used in the result tables.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub case: Option<PathBuf>,
    #[serde(default)]
    pub case_spec: Option<CaseSpec>,
    /// Pool size; defaults to `n_train + n_cal + n_test`.
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default = "default_global_range")]
    pub global_range: (f64, f64),
    #[serde(default = "default_local_range")]
    pub local_range: (f64, f64),
    #[serde(default = "default_regularization")]
    pub primal_regularization: f64,
    #[serde(default = "default_regularization")]
    pub dual_regularization: f64,
    /// Load-sampling seed; defaults to the experiment's base seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl DataConfig {
    pub fn from_case_spec(spec: CaseSpec) -> Self {
        DataConfig {
            name: None,
            dataset: None,
            case: None,
            case_spec: Some(spec),
            n_samples: None,
            global_range: default_global_range(),
            local_range: default_local_range(),
            primal_regularization: default_regularization(),
            dual_regularization: default_regularization(),
            seed: None,
        }
    }

    pub fn from_dataset(path: PathBuf) -> Self {
        DataConfig {
            dataset: Some(path),
            case_spec: None,
            ..DataConfig::from_case_spec(CaseSpec::new(2, crate::dispatch::Topology::Ring, 0))
        }
    }

    fn source_count(&self) -> usize {
        [self.dataset.is_some(), self.case.is_some(), self.case_spec.is_some()]
            .iter()
            .filter(|b| **b)
            .count()
    }

    fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        if let Some(p) = self.dataset.as_ref().or(self.case.as_ref()) {
            return p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        match &self.case_spec {
            Some(s) => format!("synthetic-{}bus", s.n_bus),
            None => "dataset".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub base_seed: u64,
}

impl ExperimentConfig {
    pub fn method_configs(&self) -> Vec<MethodConfig> {
        self.methods.iter().map(MethodEntry::config).collect()
    }

    pub fn needed_samples(&self) -> usize {
        self.n_train + self.n_cal + self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_repeats == 0 {
            return Err(Error::Config("n_repeats must be at least 1".into()));
        }
        if self.n_train == 0 || self.n_cal == 0 || self.n_test == 0 {
            return Err(Error::Config(
                "train, calibration and test splits must be non-empty".into(),
            ));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::Config(format!(
                "alphas {:?} must be non-empty and inside (0, 1)",
                self.alphas
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        for m in self.method_configs() {
            m.validate(self.n_cal)?;
        }
        if self.data.source_count() != 1 {
            return Err(Error::Config(
                "data needs exactly one of `dataset`, `case` or `case_spec`".into(),
            ));
        }
        if let Some(n) = self.data.n_samples {
            if n < self.needed_samples() {
                return Err(Error::InsufficientSamples {
                    needed: self.needed_samples(),
                    have: n,
                });
            }
        }
        Ok(())
    }
}

/// Samples available to every repeat.
#[derive(Debug, Clone)]
pub enum DataPool {
    /// Bounds fixed in advance.
    Fixed(Vec<BoundedSample>),
    /// LP-labelled loads; proxies are refit on each repeat's training split.
    Solved {
        case: GridCase,
        instances: Vec<SolvedInstance>,
        primal_regularization: f64,
        dual_regularization: f64,
    },
}

impl DataPool {
    pub fn len(&self) -> usize {
        match self {
            DataPool::Fixed(s) => s.len(),
            DataPool::Solved { instances, .. } => instances.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Share of pooled instances with a binding line limit, when known.
    pub fn congested_fraction(&self) -> Option<f64> {
        match self {
            DataPool::Fixed(_) => None,
            DataPool::Solved { instances, .. } if !instances.is_empty() => {
                Some(instances.iter().filter(|s| s.congested).count() as f64 / instances.len() as f64)
            }
            DataPool::Solved { .. } => None,
        }
    }
}

/// Samples `n` load vectors from independent streams and solves each.
pub fn generate_instances(
    case: &GridCase,
    n: usize,
    global_range: (f64, f64),
    local_range: (f64, f64),
    seed: u64,
) -> Result<Vec<SolvedInstance>> {
    let loads: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_feasible_loads(case, global_range, local_range, &mut sample_rng(seed, i)).map(|s| s.d))
        .collect::<Result<_>>()?;
    solve_instances(case, loads)
}

/// Loads or generates the sample pool described by the config.
pub fn prepare_pool(config: &ExperimentConfig) -> Result<DataPool> {
    config.validate()?;
    let data = &config.data;
    if let Some(path) = &data.dataset {
        let samples = read_dataset(path)?;
        if samples.len() < config.needed_samples() {
            return Err(Error::InsufficientSamples {
                needed: config.needed_samples(),
                have: samples.len(),
            });
        }
        return Ok(DataPool::Fixed(samples));
    }
    let case = match (&data.case, &data.case_spec) {
        (Some(path), _) => load_case(path)?,
        (None, Some(spec)) => build_case(spec)?,
        (None, None) => unreachable!("validated above"),
    };
    let n = data.n_samples.unwrap_or(config.needed_samples());
    let instances = generate_instances(
        &case,
        n,
        data.global_range,
        data.local_range,
        data.seed.unwrap_or(config.base_seed),
    )?;
    Ok(DataPool::Solved {
        case,
        instances,
        primal_regularization: data.primal_regularization,
        dual_regularization: data.dual_regularization,
    })
}

/// Case files hold a [`GridCase`], optionally next to provenance fields.
pub fn load_case(path: &Path) -> Result<GridCase> {
    let text = fs::read_to_string(path)?;
    let case: GridCase = serde_json::from_str(&text)?;
    case.validate()?;
    Ok(case)
}

/// One repeat's samples.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<BoundedSample>,
    pub cal: Vec<BoundedSample>,
    pub test: Vec<BoundedSample>,
}

/// Seed of repeat `r`.
pub fn repeat_seed(config: &ExperimentConfig, r: usize) -> u64 {
    config.base_seed.wrapping_add(r as u64)
}

/// Shuffles the pool with the repeat's seed and cuts the three splits.
pub fn repeat_splits(config: &ExperimentConfig, pool: &DataPool, r: usize) -> Result<Splits> {
    let needed = config.needed_samples();
    if pool.len() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            have: pool.len(),
        });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(repeat_seed(config, r)));
    let (train_idx, rest) = order.split_at(config.n_train);
    let (cal_idx, rest) = rest.split_at(config.n_cal);
    let test_idx = &rest[..config.n_test];
    match pool {
        DataPool::Fixed(samples) => {
            let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
            Ok(Splits {
                train: pick(train_idx),
                cal: pick(cal_idx),
                test: pick(test_idx),
            })
        }
        DataPool::Solved {
            case,
            instances,
            primal_regularization,
            dual_regularization,
        } => {
            let pick = |idx: &[usize]| -> Vec<SolvedInstance> { idx.iter().map(|&i| instances[i].clone()).collect() };
            let train = pick(train_idx);
            let primal = PrimalProxy::fit(case, &train, *primal_regularization)?;
            let dual = DualProxy::fit(case, &train, *dual_regularization)?;
            Ok(Splits {
                train: make_bounded_samples(case, &train, &primal, &dual)?,
                cal: make_bounded_samples(case, &pick(cal_idx), &primal, &dual)?,
                test: make_bounded_samples(case, &pick(test_idx), &primal, &dual)?,
            })
        }
    }
}

/// Variant chosen by CPUL-style methods on one repeat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub selected: CpulVariant,
    /// Calibration-set mean widths of the four variants.
    pub mean_widths: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub dataset: String,
    pub method: MethodKind,
    pub alpha: f64,
    pub picp_mean: f64,
    pub picp_std: f64,
    pub length_mean: f64,
    pub length_std: f64,
    pub n_repeats: usize,
    pub picp_raw: Vec<f64>,
    pub length_raw: Vec<f64>,
    pub excluded_raw: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selection_raw: Vec<SelectionRecord>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct RepeatRecord {
    picp: f64,
    length: LengthMetric,
    selection: Option<SelectionRecord>,
}

fn run_repeat(config: &ExperimentConfig, pool: &DataPool, r: usize) -> Result<Vec<RepeatRecord>> {
    let splits = repeat_splits(config, pool, r)?;
    let ys: Vec<f64> = splits.test.iter().map(|s| s.y).collect();
    let methods = config.method_configs();
    let mut out = Vec::with_capacity(config.alphas.len() * methods.len());
    for &alpha in &config.alphas {
        for m in &methods {
            let model = fit_method(m, &splits.train, &splits.cal, alpha, repeat_seed(config, r))?;
            let intervals: Vec<Interval> = splits.test.iter().map(|s| model.predict(s)).collect();
            out.push(RepeatRecord {
                picp: picp(&intervals, &ys)?,
                length: normalized_length(&intervals, &ys)?,
                selection: model
                    .cpul_selection()
                    .map(|(selected, mean_widths)| SelectionRecord { selected, mean_widths }),
            });
        }
    }
    Ok(out)
}

/// Runs every repeat on a prepared pool and aggregates per `(α, method)`,
/// in config order.
pub fn run_on_pool(config: &ExperimentConfig, pool: &DataPool) -> Result<Vec<MethodResult>> {
    config.validate()?;
    if pool.len() < config.needed_samples() {
        return Err(Error::InsufficientSamples {
            needed: config.needed_samples(),
            have: pool.len(),
        });
    }
    let repeats: Vec<Vec<RepeatRecord>> = (0..config.n_repeats)
        .into_par_iter()
        .map(|r| run_repeat(config, pool, r))
        .collect::<Result<_>>()?;
    let methods = config.method_configs();
    let dataset = config.data.label();
    let mut results = Vec::new();
    for (ai, &alpha) in config.alphas.iter().enumerate() {
        for (mi, m) in methods.iter().enumerate() {
            let slot = ai * methods.len() + mi;
            let picp_raw: Vec<f64> = repeats.iter().map(|rep| rep[slot].picp).collect();
            let length_raw: Vec<f64> = repeats.iter().map(|rep| rep[slot].length.percent).collect();
            let (picp_mean, picp_std) = mean_std(&picp_raw);
            let (length_mean, length_std) = mean_std(&length_raw);
            results.push(MethodResult {
                dataset: dataset.clone(),
                method: m.method,
                alpha,
                picp_mean,
                picp_std,
                length_mean,
                length_std,
                n_repeats: config.n_repeats,
                excluded_raw: repeats.iter().map(|rep| rep[slot].length.excluded).collect(),
                selection_raw: repeats.iter().filter_map(|rep| rep[slot].selection).collect(),
                picp_raw,
                length_raw,
            });
        }
    }
    Ok(results)
}

/// Prepares the pool and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MethodResult>> {
    let pool = prepare_pool(config)?;
    if let Some(f) = pool.congested_fraction() {
        log::info!("{:.1}% of pooled instances have a binding line limit", 100.0 * f);
    }
    run_on_pool(config, &pool)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Decimal places that give four significant digits.
fn sig4_decimals(x: f64) -> usize {
    if x == 0.0 || !x.is_finite() {
        return 3;
    }
    (3 - x.abs().log10().floor() as i64).max(0) as usize
}

/// Four significant digits.
pub fn format_sig4(x: f64) -> String {
    format!("{:.*}", sig4_decimals(x), x)
}

/// `mean (std)` with the std at the mean's precision, e.g. `91.23 (0.56)`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    let d = sig4_decimals(mean);
    format!("{mean:.d$} ({std:.d$})")
}

#[derive(Serialize)]
struct JsonResults<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest_hash: Option<&'a str>,
    results: &'a [MethodResult],
}

pub fn render_csv(results: &[MethodResult], manifest_hash: Option<&str>) -> Result<String> {
    let mut buf = Vec::new();
    if let Some(h) = manifest_hash {
        buf.extend_from_slice(format!("# manifest_hash={h}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([
            "dataset",
            "method",
            "alpha",
            "picp_mean",
            "picp_std",
            "length_mean",
            "length_std",
            "n_repeats",
        ])?;
        for r in results {
            w.write_record([
                r.dataset.clone(),
                r.method.to_string(),
                format_sig4(r.alpha),
                format_sig4(r.picp_mean),
                format_sig4(r.picp_std),
                format_sig4(r.length_mean),
                format_sig4(r.length_std),
                r.n_repeats.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn render_json(results: &[MethodResult], manifest_hash: Option<&str>) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&JsonResults { manifest_hash, results })?;
    s.push('\n');
    Ok(s)
}

/// Writes the result table.
pub fn emit_results(
    results: &[MethodResult],
    format: OutputFormat,
    path: &Path,
    manifest_hash: Option<&str>,
) -> Result<()> {
    if results.is_empty() {
        return Err(Error::EmptySample);
    }
    let text = match format {
        OutputFormat::Csv => render_csv(results, manifest_hash)?,
        OutputFormat::Json => render_json(results, manifest_hash)?,
    };
    fs::write(path, text)?;
    Ok(())
}

/// Human-readable table, one block per α.
pub fn render_report(results: &[MethodResult], manifest_hash: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = manifest_hash {
        let _ = writeln!(out, "manifest {h}");
    }
    let mut alphas: Vec<f64> = Vec::new();
    for r in results {
        if !alphas.contains(&r.alpha) {
            alphas.push(r.alpha);
        }
    }
    for alpha in alphas {
        let rows: Vec<&MethodResult> = results.iter().filter(|r| r.alpha == alpha).collect();
        let _ = writeln!(
            out,
            "\nalpha = {} (target coverage {}%), {} repeats",
            format_sig4(alpha),
            format_sig4(100.0 * (1.0 - alpha)),
            rows[0].n_repeats
        );
        let _ = writeln!(
            out,
            "{:<12} {:<16} {:<20} {:<16}",
            "method", "dataset", "PICP (%)", "Length (%)"
        );
        for r in rows {
            let _ = writeln!(
                out,
                "{:<12} {:<16} {:<20} {:<16}",
                r.method.name(),
                r.dataset,
                format_mean_std(r.picp_mean, r.picp_std),
                format_mean_std(r.length_mean, r.length_std)
            );
        }
    }
    out
}

/// Mean length against mean coverage for each method, ordered by α.
pub fn render_plot_data(results: &[MethodResult], manifest_hash: Option<&str>) -> Result<String> {
    let mut rows: Vec<&MethodResult> = results.iter().collect();
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.alpha.total_cmp(&b.alpha)));
    let mut buf = Vec::new();
    if let Some(h) = manifest_hash {
        buf.extend_from_slice(format!("# manifest_hash={h}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["method", "alpha", "picp_mean", "length_mean"])?;
        for r in rows {
            w.write_record([
                r.method.to_string(),
                r.alpha.to_string(),
                r.picp_mean.to_string(),
                r.length_mean.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi)
    }

    #[test]
    fn picp_counts() {
        assert_eq!(picp(&[iv(0.0, 1.0), iv(0.0, 2.0)], &[0.5, 1.5]).unwrap(), 100.0);
        assert_eq!(picp(&[Interval::Empty, Interval::Empty], &[0.5, 1.5]).unwrap(), 0.0);
        let ivs: Vec<_> = (0..10)
            .map(|i| if i < 9 { iv(0.0, 1.0) } else { iv(2.0, 3.0) })
            .collect();
        assert_eq!(picp(&ivs, &[0.5; 10]).unwrap(), 90.0);
        assert!(picp(&[iv(0.0, 1.0)], &[]).is_err());
    }

    #[test]
    fn length_examples() {
        let m = normalized_length(&[iv(0.0, 1.0), iv(0.0, 2.0)], &[2.0, 4.0]).unwrap();
        assert_eq!(m.percent, 50.0);
        assert_eq!(normalized_length(&[Interval::point(1.0)], &[1.0]).unwrap().percent, 0.0);
        assert_eq!(normalized_length(&[iv(0.0, 1.0)], &[-2.0]).unwrap().percent, 50.0);
    }

    #[test]
    fn length_excludes_near_zero_labels() {
        let m = normalized_length(&[iv(0.0, 1.0), iv(0.0, 1.0)], &[0.0, 2.0]).unwrap();
        assert_eq!((m.percent, m.excluded), (50.0, 1));
        assert!(normalized_length(&[iv(0.0, 1.0)], &[0.0]).is_err());
    }

    #[test]
    fn formatting() {
        assert_eq!(format_mean_std(91.23, 0.56), "91.23 (0.56)");
        assert_eq!(format_sig4(0.41), "0.4100");
        assert_eq!(format_sig4(100.0), "100.0");
        assert_eq!(format_sig4(0.1), "0.1000");
        assert_eq!(format_mean_std(0.410, 0.016), "0.4100 (0.0160)");
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    proptest! {
        #[test]
        fn aggregates_ignore_repeat_order(mut v in prop::collection::vec(0.0f64..100.0, 2..20), seed in 0u64..1000) {
            let (m1, s1) = mean_std(&v);
            v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (m2, s2) = mean_std(&v);
            prop_assert!((m1 - m2).abs() < 1e-10 && (s1 - s2).abs() < 1e-10);
        }
    }

    fn perfect_config(n_repeats: usize) -> ExperimentConfig {
        ExperimentConfig {
            data: DataConfig::from_dataset(PathBuf::from("unused.csv")),
            n_train: 30,
            n_cal: 30,
            n_test: 30,
            n_repeats,
            alphas: vec![0.1],
            methods: default_methods(),
            base_seed: 3,
        }
    }

    #[test]
    fn perfect_bounds_are_exact() {
        let samples: Vec<_> = (0..90)
            .map(|i| BoundedSample::new(vec![i as f64], 10.0 + i as f64, 10.0 + i as f64, 10.0 + i as f64).unwrap())
            .collect();
        let config = perfect_config(1);
        let results = run_on_pool(&config, &DataPool::Fixed(samples)).unwrap();
        assert_eq!(results.len(), MethodKind::ALL.len());
        for r in results {
            assert_eq!(r.picp_mean, 100.0, "{}", r.method);
            assert_eq!(r.length_mean, 0.0, "{}", r.method);
        }
    }

    #[test]
    fn insufficient_samples() {
        let samples: Vec<_> = (0..10)
            .map(|i| BoundedSample::new(vec![], i as f64, i as f64, i as f64).unwrap())
            .collect();
        assert!(matches!(
            run_on_pool(&perfect_config(1), &DataPool::Fixed(samples)),
            Err(Error::InsufficientSamples { needed: 90, have: 10 })
        ));
    }

    #[test]
    fn full_scale_split_validates() {
        let mut c = perfect_config(10);
        c.n_train = 40_000;
        c.n_cal = 5_000;
        c.n_test = 5_000;
        c.validate().unwrap();
    }

    #[test]
    fn csv_single_row() {
        let r = MethodResult {
            dataset: "d".into(),
            method: MethodKind::Cpul,
            alpha: 0.1,
            picp_mean: 91.234,
            picp_std: 0.5612,
            length_mean: 0.41,
            length_std: 0.016,
            n_repeats: 10,
            picp_raw: vec![],
            length_raw: vec![],
            excluded_raw: vec![],
            selection_raw: vec![],
        };
        let csv = render_csv(std::slice::from_ref(&r), None).unwrap();
        assert_eq!(
            csv,
            "dataset,method,alpha,picp_mean,picp_std,length_mean,length_std,n_repeats\n\
             d,cpul,0.1000,91.23,0.5612,0.4100,0.01600,10\n"
        );
        assert_eq!(csv, render_csv(&[r], None).unwrap());
    }

    #[test]
    fn config_from_toml() {
        let text = r#"
            n_train = 100
            n_cal = 50
            n_test = 50
            alphas = [0.1]
            methods = ["cpul", { method = "cpul-omlt", reserved_fraction = 0.25 }]
            [data]
            case_spec = { n_bus = 6, topology = "ring", seed = 1 }
        "#;
        let c: ExperimentConfig = toml::from_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.n_repeats, 10);
        let m = c.method_configs();
        assert_eq!(m[0].method, MethodKind::Cpul);
        assert_eq!(m[1].reserved_fraction, 0.25);
        let bad = text.replace("\"cpul\",", "\"cpul-x\",");
        assert!(toml::from_str::<ExperimentConfig>(&bad).is_err());
    }
}
