//! Reproducible pipelines behind the command-line tool: case generation,
//! dataset generation and evaluation, each stamped with a manifest hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::DatasetWriter;
use crate::dispatch::{build_case, sample_feasible_loads, sample_rng, CaseSpec, GridCase, Topology};
use crate::error::{Error, Result};
use crate::eval::{
    load_case, prepare_pool, render_csv, render_json, render_plot_data, render_report, run_on_pool, ExperimentConfig,
    MethodEntry,
};
use crate::methods::MethodKind;
use crate::proxies::{make_bounded_samples, solve_instances, DualProxy, PrimalProxy};

/// Stream offset for the proxy-training draws of `gen-data`, far from the
/// streams of emitted samples.
const PROXY_STREAM_OFFSET: u64 = 1 << 48;
const CHUNK: usize = 4096;

/// Everything that determines a pipeline's outputs. Input files enter by
/// content digest, so the hash changes whenever an input does.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineManifest {
    pub tool_version: String,
    pub command: String,
    pub config_path: Option<String>,
    pub inputs: BTreeMap<String, FileDigest>,
    pub seeds: BTreeMap<String, u64>,
    pub parameters: serde_json::Value,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

impl PipelineManifest {
    fn new(command: &str) -> Self {
        PipelineManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_path: None,
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            parameters: serde_json::Value::Null,
            artifacts: BTreeMap::new(),
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("manifest serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

fn check_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GenCaseOptions {
    pub topology: Topology,
    pub buses: usize,
    pub seed: u64,
    pub n_gen: Option<usize>,
    pub out: PathBuf,
    pub force: bool,
}

#[derive(Serialize)]
struct CaseFile<'a> {
    manifest_hash: &'a str,
    #[serde(flatten)]
    case: &'a GridCase,
}

/// Builds a case and writes it as JSON next to its manifest hash.
pub fn gen_case(opts: &GenCaseOptions) -> Result<String> {
    if opts.buses < 2 {
        return Err(Error::InvalidParameter(format!("need ≥ 2 buses, got {}", opts.buses)));
    }
    check_writable(&opts.out, opts.force)?;
    let mut spec = CaseSpec::new(opts.buses, opts.topology, opts.seed);
    spec.n_gen = opts.n_gen;
    let case = build_case(&spec)?;

    let mut manifest = PipelineManifest::new("gen-case");
    manifest.seeds.insert("case".into(), opts.seed);
    manifest.parameters = serde_json::to_value(&spec)?;
    manifest.artifacts.insert("case".into(), opts.out.display().to_string());
    let hash = manifest.hash();

    let mut text = serde_json::to_string_pretty(&CaseFile {
        manifest_hash: &hash,
        case: &case,
    })?;
    text.push('\n');
    fs::write(&opts.out, text)?;
    Ok(hash)
}

#[derive(Debug, Clone)]
pub struct GenDataOptions {
    pub case: PathBuf,
    pub n: usize,
    pub global_range: (f64, f64),
    pub local_range: (f64, f64),
    pub seed: u64,
    pub proxy_samples: usize,
    pub primal_regularization: f64,
    pub dual_regularization: f64,
    pub out: PathBuf,
    pub force: bool,
}

#[derive(Serialize)]
struct GenDataParameters {
    n: usize,
    global_range: (f64, f64),
    local_range: (f64, f64),
    proxy_samples: usize,
    primal_regularization: f64,
    dual_regularization: f64,
}

/// Samples loads, labels them with the LP optimum and writes bounded
/// samples. Proxies are fit on a separate draw that is not emitted.
pub fn gen_data(opts: &GenDataOptions) -> Result<String> {
    if opts.n == 0 {
        return Err(Error::InvalidParameter("--n must be positive".into()));
    }
    if opts.proxy_samples < 2 {
        return Err(Error::InvalidParameter("--proxy-samples must be at least 2".into()));
    }
    check_writable(&opts.out, opts.force)?;
    let case = load_case(&opts.case)?;

    let mut manifest = PipelineManifest::new("gen-data");
    manifest.inputs.insert("case".into(), FileDigest::of(&opts.case)?);
    manifest.seeds.insert("samples".into(), opts.seed);
    manifest.parameters = serde_json::to_value(GenDataParameters {
        n: opts.n,
        global_range: opts.global_range,
        local_range: opts.local_range,
        proxy_samples: opts.proxy_samples,
        primal_regularization: opts.primal_regularization,
        dual_regularization: opts.dual_regularization,
    })?;
    manifest
        .artifacts
        .insert("dataset".into(), opts.out.display().to_string());
    let hash = manifest.hash();

    let proxy_loads: Vec<Vec<f64>> = (0..opts.proxy_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(opts.seed, PROXY_STREAM_OFFSET + i);
            sample_feasible_loads(&case, opts.global_range, opts.local_range, &mut rng).map(|s| s.d)
        })
        .collect::<Result<_>>()?;
    let proxy_train = solve_instances(&case, proxy_loads)?;
    let primal = PrimalProxy::fit(&case, &proxy_train, opts.primal_regularization)?;
    let dual = DualProxy::fit(&case, &proxy_train, opts.dual_regularization)?;

    let mut writer = DatasetWriter::create(&opts.out, case.n_load, Some(&format!("manifest_hash={hash}")))?;
    let mut start = 0;
    while start < opts.n {
        let end = (start + CHUNK).min(opts.n);
        let chunk = generate_range(&case, opts, start, end)?;
        let samples = make_bounded_samples(&case, &chunk, &primal, &dual).map_err(|e| offset_sample_error(e, start))?;
        for (k, (inst, s)) in chunk.iter().zip(&samples).enumerate() {
            writer.write(start + k, &inst.d, s.y, s.b_lo, s.b_hi)?;
        }
        start = end;
    }
    writer.finish()?;
    Ok(hash)
}

fn generate_range(
    case: &GridCase,
    opts: &GenDataOptions,
    start: usize,
    end: usize,
) -> Result<Vec<crate::proxies::SolvedInstance>> {
    let loads: Vec<Vec<f64>> = (start as u64..end as u64)
        .into_par_iter()
        .map(|i| {
            sample_feasible_loads(case, opts.global_range, opts.local_range, &mut sample_rng(opts.seed, i)).map(|s| s.d)
        })
        .collect::<Result<_>>()?;
    solve_instances(case, loads)
}

fn offset_sample_error(e: Error, start: usize) -> Error {
    match e {
        Error::SandwichViolation { index, b_lo, y, b_hi } => Error::SandwichViolation {
            index: index + start,
            b_lo,
            y,
            b_hi,
        },
        other => other,
    }
}

/// Overrides applied on top of an experiment config.
#[derive(Debug, Clone, Default)]
pub struct EvaluateOverrides {
    pub methods: Option<Vec<MethodKind>>,
    pub alphas: Option<Vec<f64>>,
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub config: PathBuf,
    pub out_dir: PathBuf,
    pub overrides: EvaluateOverrides,
    pub force: bool,
}

pub const RESULT_FILES: [&str; 5] = [
    "results.csv",
    "results.json",
    "report.txt",
    "plot_data.csv",
    "manifest.json",
];

/// Reads a TOML experiment config, resolving relative data paths against
/// the config's directory.
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut config.data.dataset, &mut config.data.case].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(config)
}

pub fn apply_overrides(config: &mut ExperimentConfig, o: &EvaluateOverrides) {
    if let Some(m) = &o.methods {
        config.methods = m.iter().copied().map(MethodEntry::Name).collect();
    }
    if let Some(a) = &o.alphas {
        config.alphas = a.clone();
    }
    if let Some(r) = o.repeats {
        config.n_repeats = r;
    }
    if let Some(s) = o.seed {
        config.base_seed = s;
    }
}

/// Runs the experiment and writes the result files into `out_dir`.
pub fn evaluate(opts: &EvaluateOptions) -> Result<String> {
    let mut config = read_config(&opts.config)?;
    apply_overrides(&mut config, &opts.overrides);
    config.validate()?;
    fs::create_dir_all(&opts.out_dir)?;
    let paths: Vec<PathBuf> = RESULT_FILES.iter().map(|f| opts.out_dir.join(f)).collect();
    for p in &paths {
        check_writable(p, opts.force)?;
    }

    let mut manifest = PipelineManifest::new("evaluate");
    manifest.config_path = Some(opts.config.display().to_string());
    manifest.inputs.insert("config".into(), FileDigest::of(&opts.config)?);
    if let Some(p) = config.data.dataset.as_ref() {
        manifest.inputs.insert("dataset".into(), FileDigest::of(p)?);
    }
    if let Some(p) = config.data.case.as_ref() {
        manifest.inputs.insert("case".into(), FileDigest::of(p)?);
    }
    manifest.seeds.insert("base".into(), config.base_seed);
    manifest
        .seeds
        .insert("samples".into(), config.data.seed.unwrap_or(config.base_seed));
    manifest.parameters = serde_json::to_value(&config)?;
    for (name, p) in RESULT_FILES.iter().zip(&paths) {
        manifest.artifacts.insert(name.to_string(), p.display().to_string());
    }
    let hash = manifest.hash();

    let pool = prepare_pool(&config)?;
    if let Some(f) = pool.congested_fraction() {
        log::info!("{:.1}% of pooled instances have a binding line limit", 100.0 * f);
    }
    let results = run_on_pool(&config, &pool)?;

    fs::write(&paths[0], render_csv(&results, Some(&hash))?)?;
    fs::write(&paths[1], render_json(&results, Some(&hash))?)?;
    fs::write(&paths[2], render_report(&results, Some(&hash)))?;
    fs::write(&paths[3], render_plot_data(&results, Some(&hash))?)?;
    let mut manifest_text = serde_json::to_string_pretty(&serde_json::json!({
        "manifest_hash": hash,
        "manifest": manifest,
    }))?;
    manifest_text.push('\n');
    fs::write(&paths[4], manifest_text)?;
    Ok(hash)
}
