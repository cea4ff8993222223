//! The operations behind the `compressnas` command-line tool:
//! describe, search, rewrite, and verify, plus the run manifest
//! attached to every emitted artifact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{factors_to_layers, reconstruct, tucker2_decompose};
use crate::estimate::Calibration;
use crate::exec::WeightResolver;
use crate::model::{
    parse_model, rewrite_neck_projection, rewrite_projection_stem, LayerKind, ModelError,
    ModelGraph, WeightSpec,
};
use crate::presets::{build_preset, PRESET_NAMES};
use crate::search::{
    apply_selection, build_lookup_table, solve_mckp, table_to_csv, SearchConfig, SearchError,
};
use crate::tensor::conv2d;
use crate::{cnt, exec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Search(#[from] SearchError),
    #[error("{0}")]
    Estimate(#[from] crate::estimate::EstimateError),
    #[error("{0}")]
    Exec(#[from] crate::exec::ExecError),
    #[error("cannot read '{path}': {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write '{path}': {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("{0}")]
    Decompose(#[from] crate::decompose::DecomposeError),
    #[error("{0}")]
    Cnt(#[from] cnt::CntError),
    #[error("verification failed: {0} check(s) did not pass")]
    VerificationFailed(usize),
    #[error("{0}")]
    BadRequest(String),
}

impl ReportError {
    /// Process exit code: 0 success, 2 input error, 3 infeasible
    /// search, 4 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReportError::Search(SearchError::Infeasible { .. }) => 3,
            ReportError::VerificationFailed(_) => 4,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(OutputFormat::Text),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format '{other}' (expected text|csv|json)")),
        }
    }
}

/// Where the model comes from: a built-in preset or a JSON file.
#[derive(Debug, Clone)]
pub enum ModelSource {
    Preset(String),
    Path(PathBuf),
}

impl ModelSource {
    /// Load and validate; the second value is the directory file-backed
    /// weights resolve against.
    pub fn load(&self) -> Result<(ModelGraph, Option<PathBuf>), ReportError> {
        match self {
            ModelSource::Preset(name) => Ok((build_preset(name)?, None)),
            ModelSource::Path(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ReportError::Read {
                    path: path.clone(),
                    source,
                })?;
                let graph = parse_model(&text)?;
                Ok((graph, path.parent().map(Path::to_path_buf)))
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ModelSource::Preset(name) => format!("preset:{name}"),
            ModelSource::Path(path) => path.display().to_string(),
        }
    }
}

/// Provenance record attached to every emitted artifact set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub source: String,
    pub fingerprint: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub wall_time_ms: u128,
    pub artifacts: Vec<String>,
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    std::fs::write(path, contents).map_err(|source| ReportError::Write {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------- describe

/// Layer table plus parameter, flash, and peak-activation totals.
pub fn cmd_describe(source: &ModelSource, format: OutputFormat) -> Result<String, ReportError> {
    let (graph, _) = source.load()?;
    let shapes = graph.validate()?;
    let params = graph.param_count();
    let peak = graph.activation_peak(4)?;

    match format {
        OutputFormat::Text => {
            let mut out = String::new();
            let _ = writeln!(out, "model: {}", source.describe());
            let _ = writeln!(out, "fingerprint: {}", graph.fingerprint());
            let _ = writeln!(out, "input: {:?}", graph.input_shape);
            let _ = writeln!(
                out,
                "{:<16} {:<15} {:>5} {:>3} {:>6} {:>3} {:>10}  out",
                "id", "kind", "ch", "k", "stride", "pad", "params"
            );
            for layer in &graph.layers {
                let shape = shapes[&layer.id];
                let _ = writeln!(
                    out,
                    "{:<16} {:<15} {:>5} {:>3} {:>6} {:>3} {:>10}  {:?}",
                    layer.id,
                    format!("{:?}", layer.kind).to_lowercase(),
                    format!("{}>{}", layer.in_channels, layer.out_channels),
                    layer.kernel_size.map_or("-".into(), |k| k.to_string()),
                    layer.stride,
                    layer.padding,
                    layer.params(),
                    shape,
                );
            }
            let _ = writeln!(out, "params: {params}");
            let _ = writeln!(
                out,
                "flash: {} B @1B/param, {} B @4B/param",
                graph.flash_bytes(1),
                graph.flash_bytes(4)
            );
            let _ = writeln!(out, "activation peak: {peak} B @4B/elem");
            Ok(out)
        }
        OutputFormat::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "# model={} params={params}", source.describe());
            let _ = writeln!(out, "id,kind,in,out,k,stride,pad,params,out_c,out_h,out_w");
            for layer in &graph.layers {
                let s = shapes[&layer.id];
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    layer.id,
                    format!("{:?}", layer.kind).to_lowercase(),
                    layer.in_channels,
                    layer.out_channels,
                    layer.kernel_size.map_or("-".into(), |k| k.to_string()),
                    layer.stride,
                    layer.padding,
                    layer.params(),
                    s[0],
                    s[1],
                    s[2],
                );
            }
            Ok(out)
        }
        OutputFormat::Json => {
            let layers: Vec<serde_json::Value> = graph
                .layers
                .iter()
                .map(|layer| {
                    let s = shapes[&layer.id];
                    serde_json::json!({
                        "id": layer.id,
                        "kind": format!("{:?}", layer.kind).to_lowercase(),
                        "in": layer.in_channels,
                        "out": layer.out_channels,
                        "k": layer.kernel_size,
                        "stride": layer.stride,
                        "pad": layer.padding,
                        "params": layer.params(),
                        "out_shape": s,
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "model": source.describe(),
                "fingerprint": graph.fingerprint(),
                "input_shape": graph.input_shape,
                "layers": layers,
                "params": params,
                "flash_bytes_1": graph.flash_bytes(1),
                "flash_bytes_4": graph.flash_bytes(4),
                "activation_peak_bytes": peak,
            });
            Ok(serde_json::to_string_pretty(&doc).unwrap())
        }
    }
}

// ------------------------------------------------------------------ search

#[derive(Debug, Clone)]
pub struct SearchOpts {
    pub flash_max: u64,
    pub step: usize,
    pub seed: u64,
    pub calib_batch: usize,
    pub granularity: u64,
    pub out_dir: PathBuf,
}

/// Run the whole pipeline and write `lookup.csv`, `selection.json`,
/// `compressed.json` (weights externalized under `weights/`), and
/// `manifest.json` into `out_dir`. Returns a printed summary.
pub fn cmd_search(source: &ModelSource, opts: &SearchOpts) -> Result<String, ReportError> {
    let start = Instant::now();
    let (graph, base_dir) = source.load()?;
    graph.validate()?;
    let resolver = WeightResolver::new(base_dir.as_deref());
    let cfg = SearchConfig {
        flash_max: opts.flash_max,
        rank_step: opts.step,
        seed: opts.seed,
        calib_batch: opts.calib_batch,
        granularity: opts.granularity,
        ..SearchConfig::default()
    };
    cfg.validate()?;

    let calib = Calibration::seeded(&graph, &resolver, cfg.seed, cfg.calib_batch)?;
    let table = build_lookup_table(&graph, &calib, &cfg, &resolver)?;
    let selection = solve_mckp(&table, &cfg)?;
    let compressed = apply_selection(&graph, &table, &selection, &cfg, &resolver)?;

    std::fs::create_dir_all(&opts.out_dir).map_err(|source| ReportError::Write {
        path: opts.out_dir.clone(),
        source,
    })?;
    let externalized = externalize_weights(&compressed, &opts.out_dir)?;

    let lookup_path = opts.out_dir.join("lookup.csv");
    write_file(&lookup_path, &table_to_csv(&table))?;
    let selection_path = opts.out_dir.join("selection.json");
    write_file(
        &selection_path,
        &serde_json::to_string_pretty(&selection).unwrap(),
    )?;
    let model_path = opts.out_dir.join("compressed.json");
    write_file(&model_path, &externalized.to_json_string()?)?;

    let manifest = RunManifest {
        command: "search".into(),
        tool_version: TOOL_VERSION.into(),
        source: source.describe(),
        fingerprint: graph.fingerprint(),
        seed: cfg.seed,
        config: serde_json::json!({
            "flash_max": cfg.flash_max,
            "rank_step": cfg.rank_step,
            "rank_start": cfg.rank_start,
            "granularity": cfg.granularity,
            "calib_batch": cfg.calib_batch,
            "hooi_iters": cfg.hooi_iters,
        }),
        wall_time_ms: start.elapsed().as_millis(),
        artifacts: vec![
            "lookup.csv".into(),
            "selection.json".into(),
            "compressed.json".into(),
        ],
    };
    write_file(
        &opts.out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).unwrap(),
    )?;

    let decomposed = selection
        .choices
        .values()
        .filter(|p| p.rank != crate::search::Rank::Keep)
        .count();
    let mut out = String::new();
    let _ = writeln!(out, "original params:   {}", graph.param_count());
    let _ = writeln!(out, "budget (params):   {}", opts.flash_max);
    let _ = writeln!(out, "compressed params: {}", compressed.param_count());
    let _ = writeln!(
        out,
        "decomposed layers: {decomposed} of {}",
        table.layers.len()
    );
    let _ = writeln!(
        out,
        "total proxy loss:  {}",
        -selection.total_delta_accuracy
    );
    let _ = writeln!(out, "artifacts in {}", opts.out_dir.display());
    Ok(out)
}

/// Replace inline weight tensors (attached by decomposition) with CNT
/// files under `<out_dir>/weights/`, so the model serializes to JSON.
fn externalize_weights(graph: &ModelGraph, out_dir: &Path) -> Result<ModelGraph, ReportError> {
    let mut result = graph.clone();
    let weights_dir = out_dir.join("weights");
    let mut created = false;
    for layer in &mut result.layers {
        if let Some(WeightSpec::Inline(tensor)) = &layer.weights {
            if !created {
                std::fs::create_dir_all(&weights_dir).map_err(|source| ReportError::Write {
                    path: weights_dir.clone(),
                    source,
                })?;
                created = true;
            }
            let rel = format!("weights/{}.cnt", layer.id);
            cnt::save(&out_dir.join(&rel), tensor)?;
            layer.weights = Some(WeightSpec::File(rel));
        }
    }
    Ok(result)
}

// ----------------------------------------------------------------- rewrite

#[derive(Debug, Clone)]
pub enum RewriteKind {
    ProjectionStem,
    NeckTaps(Vec<(String, usize)>),
}

/// Apply a graph rewrite, report parameter and peak-activation deltas,
/// and write the rewritten model JSON to `output` (or inline it in the
/// report when no path is given). A missing pattern is a flagged
/// no-op, not an error.
pub fn cmd_rewrite(
    source: &ModelSource,
    kind: &RewriteKind,
    output: Option<&Path>,
) -> Result<String, ReportError> {
    let (graph, _) = source.load()?;
    graph.validate()?;
    let outcome = match kind {
        RewriteKind::ProjectionStem => rewrite_projection_stem(&graph)?,
        RewriteKind::NeckTaps(taps) => rewrite_neck_projection(&graph, taps)?,
    };
    outcome.graph.validate()?;

    let params_before = graph.param_count();
    let params_after = outcome.graph.param_count();
    let peak_before = graph.activation_peak(4)?;
    let peak_after = outcome.graph.activation_peak(4)?;

    let mut out = String::new();
    let _ = writeln!(out, "applied: {}", outcome.applied);
    let _ = writeln!(out, "note: {}", outcome.note);
    let _ = writeln!(
        out,
        "params: {params_before} -> {params_after} (delta {})",
        params_after as i64 - params_before as i64
    );
    let _ = writeln!(
        out,
        "activation peak: {peak_before} -> {peak_after} B (ratio {:.3})",
        peak_before as f64 / peak_after as f64
    );
    let json = outcome.graph.to_json_string()?;
    match output {
        Some(path) => {
            write_file(path, &json)?;
            let _ = writeln!(out, "model written to {}", path.display());
        }
        None => {
            out.push_str(&json);
            out.push('\n');
        }
    }
    Ok(out)
}

// ------------------------------------------------------------------ verify

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(results: &mut Vec<CheckResult>, name: impl Into<String>, passed: bool, detail: String) {
    results.push(CheckResult {
        name: name.into(),
        passed,
        detail,
    });
}

/// Reference parameter counts (in parameters) and tolerances for the
/// built-in presets.
const PRESET_PARAM_TARGETS: [(&str, u64, f64); 5] = [
    ("resnet18", 11_680_000, 0.005),
    ("stresnet-tiny", 3_990_000, 0.10),
    ("stresnet-micro", 1_500_000, 0.10),
    ("stresnet-nano", 950_000, 0.10),
    ("stresnet-pico", 620_000, 0.10),
];

/// Structural checks on one preset graph: residual stage widths
/// (64/128/256/512) and well-formed factor triplets (1x1 reduce, k x k
/// square core, 1x1 expand with matching rank).
pub fn verify_graph_structure(name: &str, graph: &ModelGraph) -> Vec<CheckResult> {
    let mut results = Vec::new();
    for (stage, width) in [(1usize, 64usize), (2, 128), (3, 256), (4, 512)] {
        let id = format!("l{stage}b2_add");
        match graph.layer(&id) {
            Some(layer) => check(
                &mut results,
                format!("{name}: stage {stage} width"),
                layer.out_channels == width,
                format!("{id} has {} channels, expected {width}", layer.out_channels),
            ),
            None => {
                // The reference model carries no identity adds on
                // transition blocks; fall back to the stage's last conv.
                let fallback = graph
                    .layers
                    .iter().rfind(|l| l.id.starts_with(&format!("l{stage}")) && l.kind == LayerKind::Conv);
                check(
                    &mut results,
                    format!("{name}: stage {stage} width"),
                    fallback.is_some_and(|l| l.out_channels == width),
                    format!(
                        "stage {stage} ends at {} channels, expected {width}",
                        fallback.map_or(0, |l| l.out_channels)
                    ),
                );
            }
        }
    }
    for layer in &graph.layers {
        // Factor-triplet cores are the k=3 `*_b` convs; the stem's
        // large-kernel conv shares the suffix but is not a triplet.
        if !layer.id.ends_with("_b") || layer.kind != LayerKind::Conv || layer.k() != 3 {
            continue;
        }
        let stem = &layer.id[..layer.id.len() - 2];
        let reduce = graph.layer(&format!("{stem}_a"));
        let expand = graph.layer(&format!("{stem}_c"));
        let rank = layer.in_channels;
        let well_formed = layer.out_channels == rank
            && layer.k() == 3
            && reduce.is_some_and(|l| l.k() == 1 && l.out_channels == rank)
            && expand.is_some_and(|l| l.k() == 1 && l.in_channels == rank);
        check(
            &mut results,
            format!("{name}: triplet {stem}"),
            well_formed,
            format!(
                "core {}x{} k{}, reduce->{:?}, expand<-{:?}",
                layer.in_channels,
                layer.out_channels,
                layer.k(),
                reduce.map(|l| l.out_channels),
                expand.map(|l| l.in_channels)
            ),
        );
    }
    results
}

/// Build every preset and run parameter, structural, and composition
/// checks. Returns the report; fails with exit code 4 when any check
/// fails.
pub fn cmd_verify(format: OutputFormat) -> Result<String, ReportError> {
    let mut results: Vec<CheckResult> = Vec::new();
    for (name, target, tol) in PRESET_PARAM_TARGETS {
        let graph = match build_preset(name) {
            Ok(g) => g,
            Err(e) => {
                check(&mut results, format!("{name}: build"), false, e.to_string());
                continue;
            }
        };
        match graph.validate() {
            Ok(_) => check(&mut results, format!("{name}: validates"), true, "ok".into()),
            Err(e) => {
                check(&mut results, format!("{name}: validates"), false, e.to_string());
                continue;
            }
        }
        let params = graph.param_count();
        let rel = (params as f64 - target as f64).abs() / target as f64;
        check(
            &mut results,
            format!("{name}: params"),
            rel <= tol,
            format!("{params} vs target {target} ({:+.2}%, tol {:.1}%)", 100.0 * (params as f64 / target as f64 - 1.0), 100.0 * tol),
        );
        results.extend(verify_graph_structure(name, &graph));
    }
    results.extend(composition_checks());

    let failed = results.iter().filter(|r| !r.passed).count();
    let rendered = match format {
        OutputFormat::Json => serde_json::to_string_pretty(&serde_json::json!({
            "checks": results,
            "failed": failed,
        }))
        .unwrap(),
        _ => {
            let mut out = String::new();
            for r in &results {
                let _ = writeln!(
                    out,
                    "[{}] {} — {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
            }
            let _ = writeln!(out, "{} checks, {} failed", results.len(), failed);
            out
        }
    };
    if failed > 0 {
        // The report still matters on failure; print it before exiting.
        eprintln!("{rendered}");
        return Err(ReportError::VerificationFailed(failed));
    }
    Ok(rendered)
}

/// Sampled identity checks: a factor triplet composed as three convs
/// must match convolution with the reconstructed kernel.
fn composition_checks() -> Vec<CheckResult> {
    let mut results = Vec::new();
    for (n, m, rank, stride) in [(16usize, 16usize, 8usize, 1usize), (16, 32, 8, 2), (24, 24, 12, 1)] {
        let mut layer = crate::model::LayerSpec::conv("probe", n, m, 3, stride, 1, "in");
        layer.decomposable = true;
        let kernel = exec::seeded_gaussian_tensor(vec![m, n, 3, 3], 1234 + (n + m + rank) as u64, n * 9);
        let outcome = (|| -> Result<f64, ReportError> {
            let factors = tucker2_decompose(&kernel, rank, 2)?;
            let triplet = factors_to_layers(&factors, &layer)?;
            let kernels: Vec<_> = triplet
                .iter()
                .map(|l| match &l.weights {
                    Some(WeightSpec::Inline(t)) => t.clone(),
                    other => panic!("triplet layers carry inline weights, got {other:?}"),
                })
                .collect();
            let x = exec::seeded_gaussian_input([n, 9, 9], 7);
            let direct = conv2d(&x, &reconstruct(&factors), stride, 1)?;
            let composed = conv2d(&x, &kernels[0], 1, 0)?;
            let composed = conv2d(&composed, &kernels[1], stride, 1)?;
            let composed = conv2d(&composed, &kernels[2], 1, 0)?;
            let err: f64 = direct
                .data()
                .iter()
                .zip(composed.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            Ok(err / direct.frobenius_norm().max(1e-30))
        })();
        match outcome {
            Ok(rel) => check(
                &mut results,
                format!("composition {n}->{m} R{rank} s{stride}"),
                rel < 1e-8,
                format!("relative error {rel:.3e}"),
            ),
            Err(e) => check(
                &mut results,
                format!("composition {n}->{m} R{rank} s{stride}"),
                false,
                e.to_string(),
            ),
        }
    }
    results
}

/// All built-in preset names, re-exported for the CLI help text.
pub fn preset_names() -> &'static [&'static str] {
    &PRESET_NAMES
}
