//! Per-gene comparison of Poisson and negative binomial fits for a
//! two-group stage effect, adjusted for gender and standardized age.
//!
//! For every gene the stage coefficient gets a flip-equitailed, a Wald and
//! a sandwich interval under both families, and each method is scored by the
//! overlap of its two intervals. Genes are independent: the flip ensemble
//! of a gene is seeded from the global seed and the gene id only.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;

use crate::baselines::{sandwich_interval, wald_interval};
use crate::flip::{FlipEnsemble, Statistic};
use crate::glm::{fit_full, DesignSplit, Family};
use crate::inversion::{confint_with_ensemble, CiConfig, ConfidenceInterval, FlipMethod, IntervalMethod};
use crate::report::g9;
use crate::seeding::{derive, derive_str};
use crate::{Error, Result};

/// θ used when the moment estimate finds no overdispersion.
pub const THETA_CAP: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub gene_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    /// `counts[g][s]`.
    pub counts: Vec<Vec<u64>>,
}

impl ExpressionMatrix {
    pub fn new(gene_ids: Vec<String>, sample_ids: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != gene_ids.len() || counts.iter().any(|row| row.len() != sample_ids.len()) {
            return Err(Error::InvalidInput("count matrix does not match the id lists".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = gene_ids.iter().find(|g| !seen.insert(g.as_str())) {
            return Err(Error::InvalidInput(format!("duplicate gene id '{dup}'")));
        }
        Ok(ExpressionMatrix { gene_ids, sample_ids, counts })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariates {
    pub sample_ids: Vec<String>,
    /// 0 = early stage, 1 = advanced.
    pub stage: Vec<f64>,
    pub gender: Vec<f64>,
    pub age: Vec<f64>,
    pub log_offset: Option<Vec<f64>>,
}

impl SampleCovariates {
    /// Reorders rows to follow `sample_ids`; every id must be present.
    pub fn aligned_to(&self, sample_ids: &[String]) -> Result<SampleCovariates> {
        let index: HashMap<&str, usize> = self.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let order: Vec<usize> = sample_ids
            .iter()
            .map(|s| {
                index
                    .get(s.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("sample '{s}' has no covariates")))
            })
            .collect::<Result<_>>()?;
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        Ok(SampleCovariates {
            sample_ids: sample_ids.to_vec(),
            stage: pick(&self.stage),
            gender: pick(&self.gender),
            age: pick(&self.age),
            log_offset: self.log_offset.as_deref().map(pick),
        })
    }

    /// `x = stage`, `Z = [1, gender, standardized age]`.
    pub fn design(&self) -> Result<DesignSplit> {
        let n = self.stage.len();
        let mean = self.age.iter().sum::<f64>() / n as f64;
        let sd = (self.age.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let scale = if sd > 0.0 { sd } else { 1.0 };
        let z = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => self.gender[i],
            _ => (self.age[i] - mean) / scale,
        });
        DesignSplit::with_offset(
            DVector::from_vec(self.stage.clone()),
            z,
            self.log_offset.as_ref().map(|o| DVector::from_vec(o.clone())),
        )
    }
}

fn path_string(path: &Path) -> String {
    path.display().to_string()
}

fn parse_error(path: &Path, row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path_string(path), row, column, message: message.into() }
}

/// Reads `gene_id,<sample>,...` with non-negative integer cells. Rows and
/// columns in errors are 1-based file coordinates (the header is row 1).
pub fn load_expression(path: &Path) -> Result<ExpressionMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(parse_error(path, 1, 1, "expected gene_id followed by sample ids"));
    }
    let sample_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut gene_ids = Vec::new();
    let mut counts = Vec::new();
    let mut seen = HashMap::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 2;
        let record = record?;
        if record.len() != header.len() {
            return Err(parse_error(
                path,
                row,
                record.len().min(header.len()) + 1,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let gene = record[0].trim().to_string();
        if gene.is_empty() {
            return Err(parse_error(path, row, 1, "empty gene id"));
        }
        if let Some(first) = seen.insert(gene.clone(), row) {
            return Err(parse_error(path, row, 1, format!("duplicate gene id '{gene}' (first on row {first})")));
        }
        let values = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, cell)| {
                cell.trim()
                    .parse::<u64>()
                    .map_err(|_| parse_error(path, row, j + 2, format!("'{cell}' is not a non-negative integer count")))
            })
            .collect::<Result<Vec<u64>>>()?;
        gene_ids.push(gene);
        counts.push(values);
    }
    ExpressionMatrix::new(gene_ids, sample_ids, counts)
}

/// Reads `sample_id,stage,gender,age[,log_offset]`; stage and gender must be 0 or 1.
pub fn load_covariates(path: &Path) -> Result<SampleCovariates> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected = ["sample_id", "stage", "gender", "age"];
    let has_offset = header.len() == 5 && header[4] == "log_offset";
    if header.len() < 4 || header[..4] != expected || (header.len() > 4 && !has_offset) {
        return Err(parse_error(path, 1, 1, "expected header sample_id,stage,gender,age[,log_offset]"));
    }
    let mut cov = SampleCovariates {
        sample_ids: vec![],
        stage: vec![],
        gender: vec![],
        age: vec![],
        log_offset: has_offset.then(Vec::new),
    };
    let mut seen = HashSet::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 2;
        let record = record?;
        let id = record[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_error(path, row, 1, format!("duplicate sample id '{id}'")));
        }
        let number = |j: usize| -> Result<f64> {
            let cell = record[j].trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_error(path, row, j + 1, format!("'{cell}' is not a finite number"))),
            }
        };
        let binary = |j: usize| -> Result<f64> {
            let v = number(j)?;
            if v == 0.0 || v == 1.0 {
                Ok(v)
            } else {
                Err(parse_error(path, row, j + 1, format!("expected 0 or 1, found {v}")))
            }
        };
        cov.stage.push(binary(1)?);
        cov.gender.push(binary(2)?);
        cov.age.push(number(3)?);
        if let Some(o) = cov.log_offset.as_mut() {
            o.push(number(4)?);
        }
        cov.sample_ids.push(id);
    }
    Ok(cov)
}

/// Overlap `2 max(0, min(U) − max(L)) / (width_a + width_b)`; `None` when
/// either interval is unbounded. Two equal points overlap fully.
pub fn overlap(a: (f64, f64), b: (f64, f64)) -> Option<f64> {
    if !(a.0.is_finite() && a.1.is_finite() && b.0.is_finite() && b.1.is_finite()) {
        return None;
    }
    let total = (a.1 - a.0) + (b.1 - b.0);
    if total == 0.0 {
        return Some(if a == b { 1.0 } else { 0.0 });
    }
    let shared = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    Some(2.0 * shared / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    Poisson,
    NegBin,
}

impl Model {
    pub const ALL: [Model; 2] = [Model::Poisson, Model::NegBin];

    pub fn name(self) -> &'static str {
        match self {
            Model::Poisson => "poisson",
            Model::NegBin => "negbin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegConfig {
    pub level: f64,
    pub w: usize,
    pub seed: u64,
    /// Negative binomial θ; estimated per gene by moments when `None`.
    pub theta: Option<f64>,
    pub statistic: Statistic,
    pub tol_fraction: f64,
    pub include_symmetric: bool,
    /// HC1 instead of HC0.
    pub small_sample: bool,
    pub min_group_size: usize,
}

impl Default for DegConfig {
    fn default() -> Self {
        DegConfig {
            level: 0.95,
            w: 1000,
            seed: 0,
            theta: None,
            statistic: Statistic::Standardized,
            tol_fraction: 1.0 / 1024.0,
            include_symmetric: false,
            small_sample: false,
            min_group_size: 10,
        }
    }
}

impl DegConfig {
    pub fn methods(&self) -> Vec<IntervalMethod> {
        let mut m = vec![IntervalMethod::FlipEquitailed];
        if self.include_symmetric {
            m.push(IntervalMethod::FlipSymmetric);
        }
        m.extend([IntervalMethod::Wald, IntervalMethod::Sandwich]);
        m
    }

    fn ci_config(&self) -> CiConfig {
        CiConfig {
            level: self.level,
            statistic: self.statistic,
            tol_fraction: self.tol_fraction,
            w: self.w,
            seed: self.seed,
            ..CiConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneStatus {
    Ok,
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneResult {
    pub gene_id: String,
    pub status: GeneStatus,
    /// θ used for the negative binomial fit.
    pub theta: Option<f64>,
    pub intervals: Vec<(Model, ConfidenceInterval)>,
    /// Per method; `None` when an interval is unbounded.
    pub overlaps: Vec<(IntervalMethod, Option<f64>)>,
}

impl GeneResult {
    fn skipped(gene_id: &str, reason: String) -> Self {
        GeneResult {
            gene_id: gene_id.to_string(),
            status: GeneStatus::Skipped(reason),
            theta: None,
            intervals: vec![],
            overlaps: vec![],
        }
    }

    pub fn interval(&self, model: Model, method: IntervalMethod) -> Option<&ConfidenceInterval> {
        self.intervals.iter().find(|(m, ci)| *m == model && ci.method == method).map(|(_, ci)| ci)
    }

    pub fn overlap(&self, method: IntervalMethod) -> Option<f64> {
        self.overlaps.iter().find(|(m, _)| *m == method).and_then(|(_, o)| *o)
    }
}

/// Moment estimate of θ from the intercept-only model (with offset):
/// `Σ μ² / Σ ((y − μ)² − μ)`, or [`THETA_CAP`] without overdispersion.
pub fn moment_theta(y: &[f64], log_offset: Option<&[f64]>) -> f64 {
    let n = y.len();
    let exposure: Vec<f64> = (0..n).map(|i| log_offset.map_or(1.0, |o| o[i].exp())).collect();
    let rate = y.iter().sum::<f64>() / exposure.iter().sum::<f64>();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let mu = rate * exposure[i];
        num += mu * mu;
        den += (y[i] - mu).powi(2) - mu;
    }
    if den > 0.0 && num > 0.0 {
        (num / den).min(THETA_CAP)
    } else {
        THETA_CAP
    }
}

pub fn analyze_gene(gene_id: &str, counts: &[u64], covariates: &SampleCovariates, config: &DegConfig) -> Result<GeneResult> {
    let n = counts.len();
    if covariates.stage.len() != n {
        return Err(Error::InvalidInput(format!(
            "gene '{gene_id}' has {n} counts but {} samples have covariates",
            covariates.stage.len()
        )));
    }
    if counts.iter().all(|&c| c == 0) {
        return Ok(GeneResult::skipped(gene_id, "all-zero".into()));
    }
    let advanced = covariates.stage.iter().filter(|&&s| s == 1.0).count();
    if advanced.min(n - advanced) < config.min_group_size {
        return Ok(GeneResult::skipped(gene_id, "small-group".into()));
    }
    let design = covariates.design()?;
    let y = DVector::from_iterator(n, counts.iter().map(|&c| c as f64));
    let theta = match config.theta {
        Some(t) => t,
        None => moment_theta(y.as_slice(), covariates.log_offset.as_deref()),
    };
    let ensemble = FlipEnsemble::generate(n, config.w, derive_str(config.seed, gene_id))?;
    let alpha = config.ci_config().alpha();
    let ci_config = config.ci_config();

    let mut intervals = Vec::new();
    for model in Model::ALL {
        let family = match model {
            Model::Poisson => Family::Poisson,
            Model::NegBin => Family::negative_binomial(theta)?,
        };
        let fit = match fit_full(family, &y, &design) {
            Ok(fit) => fit,
            Err(e) if !e.is_input_error() => {
                return Ok(GeneResult::skipped(gene_id, format!("fit-failure ({}): {e}", model.name())));
            }
            Err(e) => return Err(e),
        };
        for method in config.methods() {
            let ci = match method {
                IntervalMethod::FlipEquitailed | IntervalMethod::FlipSymmetric => {
                    let flip_method =
                        if method == IntervalMethod::FlipEquitailed { FlipMethod::Equitailed } else { FlipMethod::Symmetric };
                    let cfg = CiConfig { method: flip_method, ..ci_config };
                    confint_with_ensemble(family, &y, &design, &cfg, &ensemble)
                }
                IntervalMethod::Wald => wald_interval(&fit, alpha),
                IntervalMethod::Sandwich => sandwich_interval(&fit, &design, &y, alpha, config.small_sample),
            };
            match ci {
                Ok(ci) => intervals.push((model, ci)),
                Err(e) if !e.is_input_error() => {
                    return Ok(GeneResult::skipped(
                        gene_id,
                        format!("interval-failure ({}, {}): {e}", model.name(), method.name()),
                    ));
                }
                Err(e) => return Err(e),
            }
        }
    }
    let mut result = GeneResult {
        gene_id: gene_id.to_string(),
        status: GeneStatus::Ok,
        theta: Some(theta),
        intervals,
        overlaps: vec![],
    };
    result.overlaps = config
        .methods()
        .into_iter()
        .map(|method| {
            let a = result.interval(Model::Poisson, method).expect("interval computed");
            let b = result.interval(Model::NegBin, method).expect("interval computed");
            (method, overlap((a.lower, a.upper), (b.lower, b.upper)))
        })
        .collect();
    Ok(result)
}

/// All genes in parallel, returned in input order.
pub fn analyze_all(expr: &ExpressionMatrix, covariates: &SampleCovariates, config: &DegConfig) -> Result<Vec<GeneResult>> {
    let covariates = covariates.aligned_to(&expr.sample_ids)?;
    CiConfig { level: config.level, ..config.ci_config() }.validate()?;
    expr.gene_ids
        .par_iter()
        .zip(expr.counts.par_iter())
        .map(|(g, c)| analyze_gene(g, c, &covariates, config))
        .collect()
}

pub const RESULTS_HEADER: [&str; 7] = ["gene_id", "model", "method", "lower", "upper", "width", "status"];

/// One row per gene, model and method, then one `overlap` row per method
/// (overlap value in the `width` column, empty when undefined). Skipped
/// genes get a single row with the reason in `status`.
pub fn write_results<W: Write>(results: &[GeneResult], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(RESULTS_HEADER)?;
    for r in results {
        match &r.status {
            GeneStatus::Skipped(reason) => {
                wtr.write_record([r.gene_id.as_str(), "", "", "", "", "", &format!("skipped: {reason}")])?;
            }
            GeneStatus::Ok => {
                for (model, ci) in &r.intervals {
                    wtr.write_record([
                        r.gene_id.as_str(),
                        model.name(),
                        ci.method.name(),
                        &g9(ci.lower),
                        &g9(ci.upper),
                        &g9(ci.width()),
                        "ok",
                    ])?;
                }
                for (method, value) in &r.overlaps {
                    let (v, status) = match value {
                        Some(v) => (g9(*v), "ok"),
                        None => (String::new(), "undefined"),
                    };
                    wtr.write_record([r.gene_id.as_str(), "overlap", method.name(), "", "", &v, status])?;
                }
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Linear-interpolation quantile of sorted data; NaN when empty.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

const QUANTILES: [(f64, &str); 5] = [(0.0, "min"), (0.25, "q25"), (0.5, "median"), (0.75, "q75"), (1.0, "max")];

/// Rows `(section, model, method, statistic, value)`.
pub fn summary_rows(results: &[GeneResult], config: &DegConfig) -> Vec<[String; 5]> {
    let mut rows = Vec::new();
    let mut push = |section: &str, model: &str, method: &str, stat: &str, value: String| {
        rows.push([section.into(), model.into(), method.into(), stat.into(), value]);
    };
    let total = results.len();
    let skipped = results.iter().filter(|r| r.status != GeneStatus::Ok).count();
    push("genes", "", "", "total", total.to_string());
    push("genes", "", "", "analyzed", (total - skipped).to_string());
    push("genes", "", "", "skipped", skipped.to_string());
    let skipped_fraction = if total == 0 { 0.0 } else { skipped as f64 / total as f64 };
    if skipped_fraction > 0.2 {
        push("warning", "", "", "skipped_fraction", g9(skipped_fraction));
    }
    let ok: Vec<&GeneResult> = results.iter().filter(|r| r.status == GeneStatus::Ok).collect();

    for model in Model::ALL {
        for method in config.methods() {
            let widths: Vec<f64> = ok.iter().filter_map(|r| r.interval(model, method)).map(|ci| ci.width()).collect();
            let mut finite: Vec<f64> = widths.iter().copied().filter(|w| w.is_finite()).collect();
            finite.sort_by(|a, b| a.total_cmp(b));
            push("amplitude", model.name(), method.name(), "count", finite.len().to_string());
            push("amplitude", model.name(), method.name(), "infinite", (widths.len() - finite.len()).to_string());
            for (q, name) in QUANTILES {
                push("amplitude", model.name(), method.name(), name, g9(quantile_sorted(&finite, q)));
            }
        }
    }
    for method in config.methods() {
        let mut values: Vec<f64> = ok.iter().filter_map(|r| r.overlap(method)).collect();
        values.sort_by(|a, b| a.total_cmp(b));
        let mean = if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / values.len() as f64 };
        push("overlap", "", method.name(), "count", values.len().to_string());
        push("overlap", "", method.name(), "undefined", (ok.len() - values.len()).to_string());
        push("overlap", "", method.name(), "mean", g9(mean));
        for (q, name) in QUANTILES {
            push("overlap", "", method.name(), name, g9(quantile_sorted(&values, q)));
        }
    }
    for model in Model::ALL {
        let ratios: Vec<f64> = ok
            .iter()
            .filter_map(|r| {
                let f = r.interval(model, IntervalMethod::FlipEquitailed)?.width();
                let s = r.interval(model, IntervalMethod::Sandwich)?.width();
                (f.is_finite() && f > 0.0 && s > 0.0).then(|| (f / s).ln())
            })
            .collect();
        let mean = if ratios.is_empty() { f64::NAN } else { ratios.iter().sum::<f64>() / ratios.len() as f64 };
        push("log_ratio", model.name(), "flip-equitailed/sandwich", "count", ratios.len().to_string());
        push("log_ratio", model.name(), "flip-equitailed/sandwich", "mean", g9(mean));
    }
    rows
}

pub const SUMMARY_HEADER: [&str; 5] = ["section", "model", "method", "statistic", "value"];

pub fn write_summary<W: Write>(results: &[GeneResult], config: &DegConfig, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(SUMMARY_HEADER)?;
    for row in summary_rows(results, config) {
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub genes: usize,
    pub skipped: usize,
    /// Set when more than 20% of genes were skipped.
    pub warning: Option<String>,
}

/// Loads both inputs, analyzes every gene and writes the results and summary CSVs.
pub fn run_pipeline(
    expression_path: &Path,
    covariates_path: &Path,
    results_path: &Path,
    summary_path: &Path,
    config: &DegConfig,
) -> Result<PipelineReport> {
    let expr = load_expression(expression_path)?;
    let covariates = load_covariates(covariates_path)?;
    let results = analyze_all(&expr, &covariates, config)?;
    write_results(&results, std::io::BufWriter::new(std::fs::File::create(results_path)?))?;
    write_summary(&results, config, std::io::BufWriter::new(std::fs::File::create(summary_path)?))?;
    let skipped = results.iter().filter(|r| r.status != GeneStatus::Ok).count();
    let warning = (skipped * 5 > results.len()).then(|| format!("{skipped} of {} genes skipped", results.len()));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(PipelineReport { genes: results.len(), skipped, warning })
}

/// Knobs of [`synthetic_corpus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub genes: usize,
    pub samples: usize,
    /// Share of genes drawn from a Poisson law; the rest are negative binomial.
    pub poisson_share: f64,
    /// θ range of the overdispersed genes.
    pub theta_range: (f64, f64),
    /// Standard deviation of the true stage effects.
    pub effect_sd: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { genes: 50, samples: 60, poisson_share: 0.3, theta_range: (0.5, 5.0), effect_sd: 0.5 }
    }
}

/// Random count matrix and covariates with a known stage effect per gene.
/// Returns the true effects alongside the data.
pub fn synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<(ExpressionMatrix, SampleCovariates, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, 0));
    let n = spec.samples;
    let age_law = Normal::new(60.0, 10.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let covariates = SampleCovariates {
        sample_ids: (0..n).map(|s| format!("S{:04}", s + 1)).collect(),
        stage: (0..n).map(|s| (s % 2) as f64).collect(),
        gender: (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect(),
        age: (0..n).map(|_| age_law.sample(&mut rng)).collect(),
        log_offset: None,
    };
    let effect_law = Normal::new(0.0, spec.effect_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut counts = Vec::with_capacity(spec.genes);
    let mut effects = Vec::with_capacity(spec.genes);
    for g in 0..spec.genes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, g as u64 + 1));
        let base = rng.random_range(1.0..4.0);
        let effect = effect_law.sample(&mut rng);
        let gender_effect = rng.random_range(-0.3..0.3);
        let age_effect = rng.random_range(-0.01..0.01);
        let theta = (rng.random::<f64>() >= spec.poisson_share)
            .then(|| rng.random_range(spec.theta_range.0..=spec.theta_range.1));
        let row = (0..n)
            .map(|s| {
                let eta = base
                    + effect * covariates.stage[s]
                    + gender_effect * covariates.gender[s]
                    + age_effect * (covariates.age[s] - 60.0);
                let mut mean = eta.exp();
                if let Some(t) = theta {
                    mean = Gamma::new(t, mean / t).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(&mut rng);
                }
                if mean <= 0.0 {
                    return Ok(0);
                }
                let p = Poisson::new(mean).map_err(|e| Error::InvalidInput(e.to_string()))?;
                Ok(p.sample(&mut rng) as u64)
            })
            .collect::<Result<Vec<u64>>>()?;
        counts.push(row);
        effects.push(effect);
    }
    let expr = ExpressionMatrix::new((0..spec.genes).map(|g| format!("G{:05}", g + 1)).collect(), covariates.sample_ids.clone(), counts)?;
    Ok((expr, covariates, effects))
}

pub fn write_expression<W: Write>(expr: &ExpressionMatrix, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["gene_id".to_string()];
    header.extend(expr.sample_ids.iter().cloned());
    wtr.write_record(&header)?;
    for (g, row) in expr.gene_ids.iter().zip(&expr.counts) {
        let mut rec = vec![g.clone()];
        rec.extend(row.iter().map(|c| c.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_covariates<W: Write>(cov: &SampleCovariates, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id", "stage", "gender", "age"];
    if cov.log_offset.is_some() {
        header.push("log_offset");
    }
    wtr.write_record(&header)?;
    for i in 0..cov.sample_ids.len() {
        let mut rec = vec![cov.sample_ids[i].clone(), g9(cov.stage[i]), g9(cov.gender[i]), g9(cov.age[i])];
        if let Some(o) = &cov.log_offset {
            rec.push(g9(o[i]));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap((0.0, 2.0), (0.0, 2.0)), Some(1.0));
        assert_eq!(overlap((0.0, 1.0), (2.0, 3.0)), Some(0.0));
        assert_eq!(overlap((0.0, 2.0), (1.0, 3.0)), Some(0.5));
        assert_eq!(overlap((0.0, f64::INFINITY), (1.0, 3.0)), None);
        assert_eq!(overlap((1.0, 1.0), (1.0, 1.0)), Some(1.0));
        assert_eq!(overlap((1.0, 1.0), (2.0, 2.0)), Some(0.0));
    }

    #[test]
    fn moment_theta_examples() {
        assert_eq!(moment_theta(&[3.0, 3.0, 3.0, 3.0], None), THETA_CAP);
        let y = [0.0, 10.0, 0.0, 10.0];
        let expected = 4.0 * 25.0 / (4.0 * 25.0 - 4.0 * 5.0);
        assert!((moment_theta(&y, None) - expected).abs() < 1e-12);
    }

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn expression_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write(dir.path(), "ok.csv", "gene_id,A,B\nG1,1,2\nG2,0,5\n");
        let m = load_expression(&ok).unwrap();
        assert_eq!(m.gene_ids, vec!["G1", "G2"]);
        assert_eq!(m.sample_ids, vec!["A", "B"]);
        assert_eq!(m.counts, vec![vec![1, 2], vec![0, 5]]);

        let bad = write(dir.path(), "bad.csv", "gene_id,A,B\nG1,1,2\nG2,-3,5\n");
        match load_expression(&bad).unwrap_err() {
            Error::Parse { row, column, message, .. } => {
                assert_eq!((row, column), (3, 2));
                assert!(message.contains("-3"));
            }
            e => panic!("{e}"),
        }
        let dup = write(dir.path(), "dup.csv", "gene_id,A\nG1,1\nG1,2\n");
        assert!(matches!(load_expression(&dup), Err(Error::Parse { row: 3, column: 1, .. })));
    }

    #[test]
    fn covariate_parsing_and_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "cov.csv", "sample_id,stage,gender,age\nB,1,0,50\nA,0,1,61.5\n");
        let cov = load_covariates(&p).unwrap();
        let aligned = cov.aligned_to(&["A".to_string(), "B".to_string()]).unwrap();
        assert_eq!(aligned.stage, vec![0.0, 1.0]);
        assert_eq!(aligned.age, vec![61.5, 50.0]);
        assert!(cov.aligned_to(&["C".to_string()]).is_err());
        let bad = write(dir.path(), "bad.csv", "sample_id,stage,gender,age\nA,2,0,50\n");
        assert!(matches!(load_covariates(&bad), Err(Error::Parse { row: 2, column: 2, .. })));
        let off = write(dir.path(), "off.csv", "sample_id,stage,gender,age,log_offset\nA,0,0,50,0.1\n");
        assert_eq!(load_covariates(&off).unwrap().log_offset, Some(vec![0.1]));
    }

    fn small_corpus(genes: usize, seed: u64) -> (ExpressionMatrix, SampleCovariates) {
        let spec = SyntheticSpec { genes, samples: 40, ..SyntheticSpec::default() };
        let (e, c, _) = synthetic_corpus(&spec, seed).unwrap();
        (e, c)
    }

    #[test]
    fn skips_all_zero_and_small_groups() {
        let (_, cov) = small_corpus(1, 1);
        let config = DegConfig { w: 100, ..DegConfig::default() };
        let r = analyze_gene("Z", &vec![0; 40], &cov, &config).unwrap();
        assert_eq!(r.status, GeneStatus::Skipped("all-zero".into()));
        let strict = DegConfig { min_group_size: 21, ..config };
        let r = analyze_gene("Z", &vec![1; 40], &cov, &strict).unwrap();
        assert_eq!(r.status, GeneStatus::Skipped("small-group".into()));
    }

    #[test]
    fn constant_counts_cover_zero() {
        let (_, cov) = small_corpus(1, 2);
        let config = DegConfig { w: 200, ..DegConfig::default() };
        let r = analyze_gene("C", &vec![7; 40], &cov, &config).unwrap();
        assert_eq!(r.status, GeneStatus::Ok);
        // The sandwich collapses to a point at β̂ ≈ 0 since every residual vanishes.
        for (_, ci) in &r.intervals {
            assert!(ci.lower <= 1e-12 && ci.upper >= -1e-12, "{ci:?}");
        }
    }

    #[test]
    fn gene_results_do_not_depend_on_other_genes() {
        let (expr, cov) = small_corpus(4, 3);
        let config = DegConfig { w: 100, ..DegConfig::default() };
        let all = analyze_all(&expr, &cov, &config).unwrap();
        let sub = ExpressionMatrix::new(vec![expr.gene_ids[2].clone()], expr.sample_ids.clone(), vec![expr.counts[2].clone()]).unwrap();
        let one = analyze_all(&sub, &cov, &config).unwrap();
        assert_eq!(one[0], all[2]);
    }

    #[test]
    fn empty_gene_list() {
        let (expr, cov) = small_corpus(0, 4);
        let results = analyze_all(&expr, &cov, &DegConfig::default()).unwrap();
        assert!(results.is_empty());
        let mut buf = Vec::new();
        write_summary(&results, &DegConfig::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("genes,,,total,0"));
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!(quantile_sorted(&[], 0.5).is_nan());
    }
}
