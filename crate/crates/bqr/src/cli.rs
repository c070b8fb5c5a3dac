//! Command front end: `describe`, `fit`, `compare`, and `simulate`.
//!
//! Every output file is delimiter-separated text with a one-line schema
//! tag followed by a column header, so any plotting tool can consume
//! the tables directly. Per-quantile results land in `q15`-style
//! subdirectories of the output directory.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::descriptive;
use crate::engine::{self, FitResult, ModelSpec, SmoothTermSpec, SpatialTermSpec};
use crate::graph::{parse_gra, RegionGraph};
use crate::ingest::{self, Band, Dataset, StandardizationReport};
use crate::synth;
use crate::{Error, Result};

/// Schema tag written as the first line of every output file.
const SCHEMA_VERSION: &str = "bqr-schema v1";

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "BQR_OUTPUT_ROOT";

/// Resolved run configuration. Values come from flags or a declarative
/// TOML config file, with flags taking precedence.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub graph: Option<PathBuf>,
    pub response: String,
    pub linear: Vec<String>,
    pub smooth: Vec<String>,
    /// Region column name when a spatial term is requested.
    pub spatial: Option<String>,
    pub quantiles: Vec<f64>,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub output: PathBuf,
    /// Binary stratifier column for the descriptive report.
    pub stratifier: Option<String>,
    /// Covariate against which per-band LOWESS curves are computed.
    pub exposure: Option<String>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quantiles.is_empty() {
            return Err(Error::Config("at least one quantile is required".into()));
        }
        for q in &self.quantiles {
            if !(*q > 0.0 && *q < 1.0) {
                return Err(Error::Config(format!(
                    "quantile {q} must lie strictly inside (0, 1)"
                )));
            }
        }
        for pair in self.quantiles.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Config(
                    "quantiles must be strictly increasing".into(),
                ));
            }
        }
        if self.spatial.is_some() && self.graph.is_none() {
            return Err(Error::Config(
                "spatial term requested but no graph file given".into(),
            ));
        }
        Ok(())
    }
}

/// Optional values read from a TOML config file; flags override these.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub response: Option<String>,
    pub linear: Option<Vec<String>>,
    pub smooth: Option<Vec<String>>,
    pub spatial: Option<String>,
    pub quantiles: Option<Vec<f64>>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub stratifier: Option<String>,
    pub exposure: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Default output root: $BQR_OUTPUT_ROOT when set, else the current
/// directory.
pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn read_dataset(path: &Path) -> Result<(Dataset, usize)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    ingest::read_raw(BufReader::new(file))
}

fn read_graph(path: &Path) -> Result<RegionGraph> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_gra(BufReader::new(file))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

fn schema_header(kind: &str) -> String {
    format!("# {SCHEMA_VERSION} {kind}\n")
}

/// Directory name for a quantile: q15, q50, q85, ...
pub fn quantile_dir_name(tau: f64) -> String {
    format!("q{}", (tau * 100.0).round() as u32)
}

fn median_iqr(values: &[f64]) -> Result<(f64, f64, f64)> {
    Ok((
        ingest::sample_quantile(values, 0.5)?,
        ingest::sample_quantile(values, 0.25)?,
        ingest::sample_quantile(values, 0.75)?,
    ))
}

/// Descriptive report: per-variable medians and IQRs (optionally per
/// stratum with Wilcoxon p-values), the Spearman correlation matrix,
/// quantile-band assignments of the response, and per-band LOWESS
/// curves against the exposure covariate.
pub fn cmd_describe(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let (data, _dropped) = read_dataset(&cfg.data)?;
    let y = data.column(&cfg.response)?.to_vec();
    let out = &cfg.output;

    // strata: indices per level of the binary stratifier
    let strata = match &cfg.stratifier {
        Some(name) => {
            let col = data.column(name)?;
            let mut levels: Vec<f64> = col.to_vec();
            levels.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
            levels.dedup();
            if levels.len() != 2 {
                return Err(Error::Config(format!(
                    "stratifier `{name}` has {} distinct values, need exactly 2",
                    levels.len()
                )));
            }
            let groups: Vec<(f64, Vec<usize>)> = levels
                .iter()
                .map(|lv| {
                    (
                        *lv,
                        col.iter()
                            .enumerate()
                            .filter(|(_, v)| *v == lv)
                            .map(|(i, _)| i)
                            .collect(),
                    )
                })
                .collect();
            Some((name.clone(), groups))
        }
        None => None,
    };

    let variables: Vec<String> = data
        .column_names()
        .iter()
        .filter(|n| Some(n.as_str()) != cfg.stratifier.as_deref())
        .cloned()
        .collect();

    // summary table in the Median/IQR-per-stratum layout
    let mut summary = schema_header("summary");
    match &strata {
        Some((name, groups)) => {
            summary.push_str(&format!(
                "variable\tmedian\tiqr_low\tiqr_high\t{name}={}_median\t{name}={}_iqr_low\t{name}={}_iqr_high\t{name}={}_median\t{name}={}_iqr_low\t{name}={}_iqr_high\twilcoxon_p\n",
                groups[0].0, groups[0].0, groups[0].0, groups[1].0, groups[1].0, groups[1].0
            ));
            for var in &variables {
                let col = data.column(var)?;
                let (m, lo, hi) = median_iqr(col)?;
                let a: Vec<f64> = groups[0].1.iter().map(|&i| col[i]).collect();
                let b: Vec<f64> = groups[1].1.iter().map(|&i| col[i]).collect();
                let (ma, la, ha) = median_iqr(&a)?;
                let (mb, lb, hb) = median_iqr(&b)?;
                let test = descriptive::wilcoxon_rank_sum(&a, &b)?;
                summary.push_str(&format!(
                    "{var}\t{m}\t{lo}\t{hi}\t{ma}\t{la}\t{ha}\t{mb}\t{lb}\t{hb}\t{}\n",
                    test.p_value
                ));
            }
        }
        None => {
            summary.push_str("variable\tmedian\tiqr_low\tiqr_high\n");
            for var in &variables {
                let (m, lo, hi) = median_iqr(data.column(var)?)?;
                summary.push_str(&format!("{var}\t{m}\t{lo}\t{hi}\n"));
            }
        }
    }
    write_file(&out.join("summary.tsv"), &summary)?;

    // Spearman matrix: rho above the diagonal, p below
    if variables.len() >= 2 {
        let (rho, p) = descriptive::correlation_matrix(&data, &variables)?;
        let mut corr = schema_header("correlation");
        corr.push_str(&format!("variable\t{}\n", variables.join("\t")));
        for (i, var) in variables.iter().enumerate() {
            let cells: Vec<String> = (0..variables.len())
                .map(|j| {
                    if j > i {
                        format!("{}", rho[i][j])
                    } else if j < i {
                        format!("{}", p[i][j])
                    } else {
                        "1".to_string()
                    }
                })
                .collect();
            corr.push_str(&format!("{var}\t{}\n", cells.join("\t")));
        }
        write_file(&out.join("correlation.tsv"), &corr)?;
    }

    // response quantile bands
    let bands = ingest::quantile_bands(&y, 0.15, 0.85)?;
    let mut band_rows = schema_header("bands");
    band_rows.push_str("row\tresponse\tband\n");
    for (i, (v, b)) in y.iter().zip(&bands).enumerate() {
        band_rows.push_str(&format!("{i}\t{v}\t{b}\n"));
    }
    write_file(&out.join("bands.tsv"), &band_rows)?;

    // per-band LOWESS of the response against the exposure
    let exposure = cfg.exposure.clone().or_else(|| {
        variables
            .iter()
            .find(|v| **v != cfg.response && Some(v.as_str()) != data.region_column())
            .cloned()
    });
    if let Some(exposure) = exposure {
        let x = data.column(&exposure)?;
        for (band, name) in [(Band::Low, "low"), (Band::Mid, "mid"), (Band::High, "high")] {
            let idx: Vec<usize> = bands
                .iter()
                .enumerate()
                .filter(|(_, b)| **b == band)
                .map(|(i, _)| i)
                .collect();
            let bx: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let fitted = if bx.len() >= 2 {
                descriptive::lowess(&bx, &by, 2.0 / 3.0, 3)?
            } else {
                by.clone()
            };
            let mut table = schema_header("lowess");
            table.push_str("x\ty\tfitted\n");
            for ((xv, yv), fv) in bx.iter().zip(&by).zip(&fitted) {
                table.push_str(&format!("{xv}\t{yv}\t{fv}\n"));
            }
            write_file(&out.join(format!("lowess_{name}.tsv")), &table)?;
        }
    }
    Ok(())
}

fn model_columns(cfg: &RunConfig) -> Vec<String> {
    let mut cols = vec![cfg.response.clone()];
    for c in cfg.linear.iter().chain(cfg.smooth.iter()) {
        if !cols.contains(c) {
            cols.push(c.clone());
        }
    }
    cols
}

fn build_spec(cfg: &RunConfig, tau: f64, quantile_index: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(cfg.response.clone(), tau);
    spec.linear = cfg.linear.clone();
    spec.smooth = cfg.smooth.iter().map(SmoothTermSpec::new).collect();
    spec.spatial = cfg.spatial.clone().map(|region_column| SpatialTermSpec {
        region_column,
    });
    spec.mcmc.iterations = cfg.iterations;
    spec.mcmc.burn_in = cfg.burn_in;
    spec.mcmc.thin = cfg.thin;
    // distinct derived seed per quantile so concurrent chains differ
    spec.mcmc.seed = cfg.seed + quantile_index as u64;
    spec
}

fn write_fit_outputs(dir: &Path, tau: f64, fit: &FitResult) -> Result<()> {
    // coefficient table
    let mut coef = schema_header("coefficients");
    coef.push_str("term\tmean\tlower\tupper\tsignificant\n");
    for name in &fit.linear_names {
        let s = engine::summarize(&fit.linear_coef_draws(name)?)?;
        coef.push_str(&format!(
            "{name}\t{}\t{}\t{}\t{}\n",
            s.mean, s.lower, s.upper, s.significant
        ));
    }
    write_file(&dir.join("coefficients.tsv"), &coef)?;

    // effect-curve grids
    for sf in &fit.smooth {
        let curve = engine::effect_curve(fit, &sf.column, 100)?;
        let mut table = schema_header("effect-curve");
        table.push_str("x\tmean\tlower\tupper\n");
        for i in 0..curve.grid.len() {
            table.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                curve.grid[i], curve.mean[i], curve.lower[i], curve.upper[i]
            ));
        }
        write_file(&dir.join(format!("effect_{}.tsv", sf.column)), &table)?;
    }

    // spatial-effect table
    if fit.spatial.is_some() {
        let mut table = schema_header("spatial-effects");
        table.push_str("region\tmean\tlower\tupper\tsignificant\n");
        for e in engine::spatial_table(fit)? {
            table.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.label, e.mean, e.lower, e.upper, e.significant
            ));
        }
        write_file(&dir.join("spatial.tsv"), &table)?;
    }

    // deviance and DIC
    let dic = engine::dic(fit)?;
    let mut table = schema_header("dic");
    table.push_str("quantile\tmean_deviance\tplugin_deviance\tpd\tdic\n");
    table.push_str(&format!(
        "{tau}\t{}\t{}\t{}\t{}\n",
        dic.mean_deviance, dic.plugin_deviance, dic.effective_params, dic.dic
    ));
    write_file(&dir.join("dic.tsv"), &table)?;

    // raw thinned draws
    let mut header: Vec<String> = fit.linear_names.clone();
    for sf in &fit.smooth {
        for j in 0..sf.basis.n_basis() {
            header.push(format!("{}_b{:02}", sf.column, j + 1));
        }
    }
    if let Some(sp) = &fit.spatial {
        for label in &sp.labels {
            header.push(format!("region_{label}"));
        }
    }
    for sf in &fit.smooth {
        header.push(format!("tau2_{}", sf.column));
    }
    if fit.spatial.is_some() {
        header.push("tau2_spatial".to_string());
    }
    header.push("sigma".to_string());
    header.push("deviance".to_string());
    let mut draws = schema_header("draws");
    draws.push_str(&header.join("\t"));
    draws.push('\n');
    for s in 0..fit.stored_count() {
        let mut row: Vec<String> = fit.linear_draws[s].iter().map(|v| format!("{v}")).collect();
        for sf in &fit.smooth {
            row.extend(sf.coef_draws[s].iter().map(|v| format!("{v}")));
        }
        if let Some(sp) = &fit.spatial {
            row.extend(sp.effect_draws[s].iter().map(|v| format!("{v}")));
        }
        for sf in &fit.smooth {
            row.push(format!("{}", sf.variance_draws[s]));
        }
        if let Some(sp) = &fit.spatial {
            row.push(format!("{}", sp.variance_draws[s]));
        }
        row.push(format!("{}", fit.sigma_draws[s]));
        row.push(format!("{}", fit.deviance_draws[s]));
        draws.push_str(&row.join("\t"));
        draws.push('\n');
    }
    write_file(&dir.join("draws.tsv"), &draws)?;
    Ok(())
}

/// Fit the configured model at every requested quantile, one chain per
/// quantile, writing result tables under `q15`-style subdirectories.
pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let (raw, _dropped) = read_dataset(&cfg.data)?;
    let cols = model_columns(cfg);
    let (mut data, report) = ingest::standardize(&raw, &cols)?;
    if let Some(region) = &cfg.spatial {
        data.set_region_column(region)?;
    }
    let graph = match &cfg.graph {
        Some(path) => Some(read_graph(path)?),
        None => None,
    };

    // independent chains, one per quantile
    let results: Vec<Result<FitResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .quantiles
            .iter()
            .enumerate()
            .map(|(idx, &tau)| {
                let spec = build_spec(cfg, tau, idx);
                let data = &data;
                let graph = graph.as_ref();
                let report = report.clone();
                scope.spawn(move || engine::fit(data, graph, &spec, Some(report)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain panicked")).collect()
    });

    for (&tau, result) in cfg.quantiles.iter().zip(results) {
        let dir = cfg.output.join(quantile_dir_name(tau));
        let write = result.and_then(|fit| {
            fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            write_fit_outputs(&dir, tau, &fit)
        });
        if let Err(e) = write {
            // no partial outputs
            let _ = fs::remove_dir_all(&dir);
            return Err(e);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct DicRow {
    quantile: f64,
    mean_deviance: f64,
    plugin_deviance: f64,
    pd: f64,
    dic: f64,
}

fn read_dic_table(dir: &Path) -> Result<Vec<(String, DicRow)>> {
    let mut rows = Vec::new();
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("dic.tsv").exists())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Config(format!(
            "no quantile result directories under {}",
            dir.display()
        )));
    }
    for sub in subdirs {
        let path = sub.join("dic.tsv");
        let text =
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for line in text.lines() {
            if line.starts_with('#') || line.starts_with("quantile") || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::Config(format!(
                    "malformed dic table {}",
                    path.display()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Config(format!("bad number `{s}` in {}", path.display())))
            };
            rows.push((
                sub.file_name().unwrap().to_string_lossy().to_string(),
                DicRow {
                    quantile: parse(fields[0])?,
                    mean_deviance: parse(fields[1])?,
                    plugin_deviance: parse(fields[2])?,
                    pd: parse(fields[3])?,
                    dic: parse(fields[4])?,
                },
            ));
        }
    }
    Ok(rows)
}

/// Compare DIC across fitted result directories, flagging the
/// lowest-DIC model per quantile. Returns the rendered table.
pub fn cmd_compare(dirs: &[PathBuf]) -> Result<String> {
    if dirs.len() < 2 {
        return Err(Error::Config("compare needs at least two result directories".into()));
    }
    let mut tables = Vec::new();
    for dir in dirs {
        tables.push((dir.clone(), read_dic_table(dir)?));
    }
    // all result sets must cover the same quantiles
    let reference: Vec<String> = tables[0].1.iter().map(|(q, _)| q.clone()).collect();
    for (dir, table) in &tables[1..] {
        let qs: Vec<String> = table.iter().map(|(q, _)| q.clone()).collect();
        if qs != reference {
            return Err(Error::Config(format!(
                "quantile mismatch: {} has [{}], expected [{}]",
                dir.display(),
                qs.join(", "),
                reference.join(", ")
            )));
        }
    }
    let mut out = schema_header("comparison");
    out.push_str("quantile\tmodel\tmean_deviance\tplugin_deviance\tpd\tdic\tbest\n");
    for (qi, qname) in reference.iter().enumerate() {
        let best = tables
            .iter()
            .map(|(_, t)| t[qi].1.dic)
            .fold(f64::INFINITY, f64::min);
        for (dir, table) in &tables {
            let row = &table[qi].1;
            out.push_str(&format!(
                "{qname}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                dir.display(),
                row.mean_deviance,
                row.plugin_deviance,
                row.pd,
                row.dic,
                row.dic == best
            ));
        }
    }
    Ok(out)
}

/// Parameters for `simulate`.
#[derive(Debug, Clone)]
pub struct SimulateParams {
    pub n: usize,
    pub seed: u64,
    pub grid_side: usize,
    pub per_region: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams {
            n: 500,
            seed: 58_581,
            grid_side: 8,
            per_region: 10,
        }
    }
}

/// Emit a synthetic scenario as ingest-format dataset, graph file
/// (scenario c), and truth file.
pub fn cmd_simulate(scenario: &str, params: &SimulateParams, out: &Path) -> Result<()> {
    match scenario {
        "a" => {
            let (d, truth) = synth::scenario_a_linear(params.n, params.seed)?;
            write_file(&out.join("data.raw"), &d.serialize())?;
            let mut t = schema_header("truth");
            t.push_str("field\tvalue\n");
            t.push_str(&format!("scenario\ta\nn\t{}\nseed\t{}\n", params.n, params.seed));
            t.push_str(&format!(
                "intercept\t{}\nslope\t{}\nnoise_sd\t{}\n",
                truth.intercept, truth.slope, truth.noise_sd
            ));
            write_file(&out.join("truth.tsv"), &t)?;
        }
        "b" => {
            let (d, truth) = synth::scenario_b_smooth(params.n, params.seed)?;
            write_file(&out.join("data.raw"), &d.serialize())?;
            let mut t = schema_header("truth");
            t.push_str("field\tvalue\n");
            t.push_str(&format!("scenario\tb\nn\t{}\nseed\t{}\n", params.n, params.seed));
            t.push_str(&format!("noise_sd\t{}\n", truth.noise_sd));
            write_file(&out.join("truth.tsv"), &t)?;
        }
        "c" => {
            let (d, graph, truth) =
                synth::scenario_c_spatial(params.grid_side, params.per_region, params.seed)?;
            write_file(&out.join("data.raw"), &d.serialize())?;
            write_file(&out.join("graph.gra"), &graph.serialize())?;
            let mut t = schema_header("truth");
            t.push_str("field\tvalue\n");
            t.push_str(&format!(
                "scenario\tc\ngrid_side\t{}\nper_region\t{}\nseed\t{}\nnoise_sd\t{}\n",
                params.grid_side, params.per_region, params.seed, truth.noise_sd
            ));
            for (label, value) in graph.labels().iter().zip(&truth.field) {
                t.push_str(&format!("field_region_{label}\t{value}\n"));
            }
            write_file(&out.join("truth.tsv"), &t)?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown scenario `{other}`; expected a, b, or c"
            )))
        }
    }
    Ok(())
}

// re-exported for tests that need the same standardization the fit uses
pub fn standardize_for_model(
    cfg: &RunConfig,
    raw: &Dataset,
) -> Result<(Dataset, StandardizationReport)> {
    ingest::standardize(raw, &model_columns(cfg))
}
