use std::fmt::Write as _;
use std::path::PathBuf;

use mtsls::design::{CodingKind, CodingSpec};
use mtsls::dgp::{sample_cell_dataset, sample_dataset};
use mtsls::estimator::tsls_population_estimand;
use mtsls::spec_tests::{
    covary_similarly_test, kitagawa_test, linearity_test, subsample_first_stage_test, Bins, CovaryOptions,
    KitagawaOptions, LinearityOptions, SubsampleOptions, TestReport,
};
use mtsls::weights::{
    bias_decomposition, covariate_weight_analysis, just_identified_analysis, kirkeboen_conditions, monotonicity_checks,
    BiasDecomposition, CovariateAnalysis, JustIdentifiedAnalysis, KirkeboenCheck, MonotonicityReport,
};
use mtsls::{identification_report, Dataset, IdentificationReport, Population, TreatmentCoding};
use serde::Serialize;

use crate::config::{population_source, BinsConfig, ConfigFile, Source};
use crate::error::{lib, CliError, CliResult};
use crate::report::{matrix_lines, sha256_hex, to_json, Envelope, Outputs};
use crate::table::{dataset_csv, read_dataset, Columns};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Kitagawa,
    Subsample,
    Linearity,
    Covary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CodingArg {
    Unordered,
    Ordered,
}

/// Everything that determines a run's results. Its hash goes into every
/// report; paths, `--force` and `--threads` are left out because they do
/// not change the output.
#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<TestKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coding: Option<CodingArg>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub treatments: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fe: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<(usize, usize)>,
}

/// A resolved run: the hashed configuration plus where to read and write.
pub struct Run {
    pub cfg: RunConfig,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
}

impl Run {
    fn hash(&self) -> CliResult<String> {
        Ok(sha256_hex(&to_json(&self.cfg)?))
    }

    fn config(&self) -> CliResult<&ConfigFile> {
        self.cfg
            .config
            .as_ref()
            .ok_or_else(|| CliError::invalid(format!("{} needs --config", self.cfg.command)))
    }

    fn dataset(&self) -> CliResult<Dataset> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| CliError::invalid(format!("{} needs --data", self.cfg.command)))?;
        read_dataset(
            path,
            &Columns {
                fe: self.cfg.fe.as_deref(),
                flags: &self.cfg.flags,
            },
        )
    }

    fn seed(&self) -> Option<u64> {
        self.cfg.seed.or(self.cfg.config.as_ref().and_then(|c| c.seed))
    }

    fn alpha(&self) -> f64 {
        self.cfg.config.as_ref().and_then(|c| c.alpha).unwrap_or(0.05)
    }

    /// Coding from the config (explicitly or via its population), else from
    /// `--coding` with `--treatments` or the largest treatment in the data.
    fn coding(&self, data: &Dataset) -> CliResult<TreatmentCoding> {
        if let Some(cfg) = &self.cfg.config {
            if let Some(spec) = &cfg.coding {
                return TreatmentCoding::try_from(spec.clone()).map_err(lib("config coding"));
            }
            if let Ok(source) = population_source(cfg, "config") {
                return Ok(source.coding().clone());
            }
        }
        let count = match self.cfg.treatments {
            Some(k) => k,
            None => data.t().iter().max().map_or(0, |t| t + 1),
        };
        let kind = match self.cfg.coding.unwrap_or(CodingArg::Unordered) {
            CodingArg::Unordered => CodingKind::Unordered,
            CodingArg::Ordered => CodingKind::Ordered,
        };
        TreatmentCoding::try_from(CodingSpec {
            n_treatments: count,
            kind,
            edges: None,
        })
        .map_err(lib("--coding"))
    }

    fn emit<R: Serialize>(&self, stem: &str, result: R, text: String, extra: Outputs) -> CliResult<Vec<PathBuf>> {
        let envelope = Envelope {
            tool: "mtsls",
            version: crate::report::VERSION,
            command: &self.cfg.command,
            config_hash: self.hash()?,
            config: &self.cfg,
            result,
        };
        let header = format!(
            "mtsls {} {}  config {}\n\n",
            crate::report::VERSION,
            self.cfg.command,
            &envelope.config_hash[..16]
        );
        let mut out = Outputs::default();
        out.add(format!("{stem}.json"), to_json(&envelope)?);
        out.add(format!("{stem}.txt"), header + &text);
        out.extend(extra);
        out.write(&self.out, self.force)
    }
}

pub fn run(run: &Run) -> CliResult<Vec<PathBuf>> {
    match run.cfg.command.as_str() {
        "simulate" => simulate(run),
        "estimate" => estimate(run),
        "diagnose" => diagnose(run),
        "decompose" => decompose(run),
        "test" => test(run),
        other => Err(CliError::invalid(format!("unknown command {other}"))),
    }
}

#[derive(Serialize)]
struct SimulateResult {
    rows: usize,
    seed: u64,
    noise_sd: f64,
    coding: TreatmentCoding,
    /// Population 2SLS estimand, when the rank condition holds.
    estimand: Option<Vec<f64>>,
    data_sha256: String,
}

fn simulate(run: &Run) -> CliResult<Vec<PathBuf>> {
    let cfg = run.config()?;
    let source = population_source(cfg, "config")?;
    let seed = run
        .seed()
        .ok_or_else(|| CliError::invalid("simulate needs an explicit seed (--seed or \"seed\" in the config)"))?;
    let n = cfg.n.ok_or_else(|| CliError::invalid("config: \"n\" (sample size) is required for simulate"))?;
    let noise_sd = cfg.noise_sd.unwrap_or(1.0);
    let (data, estimand) = match &source {
        Source::Single(pop) => (
            sample_dataset(pop, n, seed, noise_sd).map_err(lib("simulate"))?,
            tsls_population_estimand(pop).ok(),
        ),
        Source::Cells(pop) => (
            sample_cell_dataset(pop, n, seed, noise_sd).map_err(lib("simulate"))?,
            covariate_weight_analysis(pop).ok().and_then(|a| a.estimand),
        ),
    };
    let csv = dataset_csv(&data, run.cfg.fe.as_deref().unwrap_or("cell"))?;
    let result = SimulateResult {
        rows: data.len(),
        seed,
        noise_sd,
        coding: source.coding().clone(),
        estimand: estimand.clone(),
        data_sha256: sha256_hex(&csv),
    };
    let mut text = String::new();
    let _ = writeln!(text, "simulated {} rows (seed {seed}, noise sd {noise_sd})", data.len());
    match &estimand {
        Some(b) => {
            let _ = writeln!(text, "population 2SLS estimand: {}", fmt_vec(b));
        }
        None => {
            let _ = writeln!(text, "population 2SLS estimand: not defined (rank condition fails)");
        }
    }
    let mut extra = Outputs::default();
    extra.add("data.csv", csv);
    run.emit("simulate", result, text, extra)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn estimate(run: &Run) -> CliResult<Vec<PathBuf>> {
    let data = run.dataset()?;
    let coding = run.coding(&data)?;
    let est = mtsls::tsls_estimate(&data, &coding, run.cfg.fe.is_some()).map_err(lib("estimate"))?;
    let se = est.std_errors().unwrap_or_default();
    let mut text = String::new();
    let _ = writeln!(text, "2SLS  (N = {}, {} indicators)", est.n_obs, coding.n());
    let _ = writeln!(text, "\n{:10} {:>12} {:>12} {:>10}", "", "estimate", "std. error", "z");
    for (k, b) in est.beta_hat.iter().enumerate() {
        let s = se.get(k).copied().unwrap_or(f64::NAN);
        let _ = writeln!(text, "{:10} {:>12.6} {:>12.6} {:>10.3}", format!("beta_{}", k + 1), b, s, b / s);
    }
    let _ = writeln!(text, "\nfirst stage: intercepts {}", fmt_vec(&est.first_stage.intercepts));
    matrix_lines(&mut text, &est.first_stage.slopes, "  ");
    if !est.dropped_cells.is_empty() {
        let _ = writeln!(text, "\ndropped cells: {}", est.dropped_cells.join(", "));
    }
    run.emit("estimate", est, text, Outputs::default())
}

#[derive(Serialize)]
struct SingleDiagnosis {
    identification: IdentificationReport,
    monotonicity: MonotonicityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    kirkeboen: Option<KirkeboenCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    just_identified: Option<JustIdentifiedAnalysis>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum Diagnosis {
    Single(Box<SingleDiagnosis>),
    Cells {
        covariates: CovariateAnalysis,
        cells: Vec<IdentificationReport>,
    },
}

fn diagnose_single(pop: &Population, text: &mut String) -> CliResult<SingleDiagnosis> {
    let identification = identification_report(pop).map_err(lib("diagnose"))?;
    let monotonicity = monotonicity_checks(pop);
    let kirkeboen = kirkeboen_conditions(pop).ok();
    let just_identified = just_identified_analysis(pop).ok();
    write_identification(text, &identification);
    if let Some(k) = &kirkeboen {
        let _ = writeln!(text, "\nmonotonicity + irrelevance + next-best: {}", k.holds);
    }
    if let Some(j) = &just_identified {
        let _ = writeln!(
            text,
            "just-identified labeling: {}",
            match &j.permutation {
                Some(p) => format!("{p:?} ({} solutions)", j.solutions),
                None => "none".to_string(),
            }
        );
    }
    Ok(SingleDiagnosis {
        identification,
        monotonicity,
        kirkeboen,
        just_identified,
    })
}

fn write_identification(text: &mut String, r: &IdentificationReport) {
    let _ = writeln!(
        text,
        "proper weights: {}  (ACM {}, NCE {}, tolerance {:e})",
        r.proper, r.acm_pass, r.nce_pass, r.tolerance
    );
    for t in &r.types {
        let verdict = if r.violating_types().contains(&t.type_index) { "violates" } else { "ok" };
        let _ = writeln!(text, "\ntype {} {}  Pr = {:.4}  {verdict}", t.type_index, t.assignment.label(), t.prob);
        matrix_lines(text, &t.weights, "  ");
    }
    if !r.violations.is_empty() {
        let _ = writeln!(text, "\nviolations (largest first):");
        for v in &r.violations {
            let _ = writeln!(
                text,
                "  type {} {}: {:?} w_{}{} = {:.6}",
                v.type_index,
                v.assignment.label(),
                v.kind,
                v.row + 1,
                v.col + 1,
                v.margin
            );
        }
    }
}

fn diagnose(run: &Run) -> CliResult<Vec<PathBuf>> {
    let cfg = run.config()?;
    let mut text = String::new();
    let result = match population_source(cfg, "config")? {
        Source::Single(pop) => Diagnosis::Single(Box::new(diagnose_single(&pop, &mut text)?)),
        Source::Cells(pop) => {
            let covariates = covariate_weight_analysis(&pop).map_err(lib("diagnose"))?;
            let _ = writeln!(
                text,
                "covary similarly: {}  rank: {}",
                covariates.covary_similarly, covariates.rank_ok
            );
            let mut cells = Vec::new();
            for (x, c) in covariates.cells.iter().enumerate() {
                let _ = writeln!(text, "\ncell {} (Pr = {:.4}, a = {:.4})", c.label, c.prob, c.scale);
                if let Some(m) = &c.contamination {
                    matrix_lines(&mut text, m, "  ");
                }
                let r = identification_report(pop.population(x)).map_err(lib(&format!("cell {}", c.label)))?;
                write_identification(&mut text, &r);
                cells.push(r);
            }
            Diagnosis::Cells { covariates, cells }
        }
    };
    run.emit("diagnose", result, text, Outputs::default())
}

#[derive(Serialize)]
struct DecompositionRow {
    row: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    decomposition: Option<BiasDecomposition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn decompose(run: &Run) -> CliResult<Vec<PathBuf>> {
    let cfg = run.config()?;
    let pop = match population_source(cfg, "config")? {
        Source::Single(p) => p,
        Source::Cells(_) => return Err(CliError::invalid("config: decompose works on a single population, not cells")),
    };
    let mut rows = Vec::new();
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:4} {:>10} {:>10} {:>10} {:>10} {:>10} {:>12}",
        "row", "estimand", "compliers", "w_neg", "w_cross", "residual", "defier bound"
    );
    for k in 0..pop.coding().n() {
        match bias_decomposition(&pop, k) {
            Ok(d) => {
                let _ = writeln!(
                    text,
                    "{:4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.2e} {:>12}",
                    k + 1,
                    d.estimand,
                    d.beta_compliers,
                    d.w_negative,
                    d.w_cross,
                    d.residual,
                    d.defier_ratio_bound.map_or("-".to_string(), |b| format!("{b:.4}"))
                );
                rows.push(DecompositionRow { row: k, decomposition: Some(d), note: None });
            }
            Err(e @ mtsls::Error::NoCompliers { .. }) => {
                let _ = writeln!(text, "{:4} {e}", k + 1);
                rows.push(DecompositionRow { row: k, decomposition: None, note: Some(e.to_string()) });
            }
            Err(e) => return Err(lib("decompose")(e)),
        }
    }
    run.emit("decompose", rows, text, Outputs::default())
}

fn test(run: &Run) -> CliResult<Vec<PathBuf>> {
    let kind = run.cfg.kind.ok_or_else(|| CliError::invalid("test needs --kind"))?;
    let data = run.dataset()?;
    let coding = run.coding(&data)?;
    let fe = run.cfg.fe.is_some();
    let alpha = run.alpha();
    let cfg_bins = run.cfg.config.as_ref().and_then(|c| c.bins.clone());
    let report: TestReport = match kind {
        TestKind::Kitagawa => {
            let bins = match (run.cfg.bins, cfg_bins) {
                (Some(k), _) | (None, Some(BinsConfig::Count(k))) => Bins::Quantiles(k),
                (None, Some(BinsConfig::Explicit(b))) => Bins::Explicit(b),
                (None, None) => Bins::Auto,
            };
            let opts = KitagawaOptions { bins, fixed_effects: fe, alpha };
            kitagawa_test(&data, &coding, &opts).map_err(lib("test kitagawa"))?
        }
        TestKind::Subsample => {
            let flag = match run.cfg.flags.as_slice() {
                [f] => f.clone(),
                _ => return Err(CliError::invalid("test subsample needs exactly one --flag column")),
            };
            let mut opts = SubsampleOptions::new(&flag);
            opts.fixed_effects = fe;
            opts.alpha = alpha;
            subsample_first_stage_test(&data, &coding, &opts).map_err(lib("test subsample"))?
        }
        TestKind::Linearity => {
            let (k, l) = run.cfg.pair.unwrap_or((2, 1));
            if k == 0 || l == 0 || k > coding.n() || l > coding.n() || k == l {
                return Err(CliError::invalid(format!(
                    "--pair {k},{l}: need two distinct indicators between 1 and {}",
                    coding.n()
                )));
            }
            let mut opts = LinearityOptions::new(k - 1, l - 1);
            opts.fixed_effects = fe;
            opts.alpha = alpha;
            if let Some(b) = run.cfg.bins {
                opts.bins = b;
            }
            linearity_test(&data, &coding, &opts).map_err(lib("test linearity"))?
        }
        TestKind::Covary => {
            if !fe {
                return Err(CliError::invalid("test covary needs the cell column (--fe)"));
            }
            let opts = CovaryOptions {
                replicates: run.cfg.boot.or(run.cfg.config.as_ref().and_then(|c| c.boot)).unwrap_or(999),
                seed: run.seed().unwrap_or(0),
                alpha,
            };
            covary_similarly_test(&data, &coding, &opts).map_err(lib("test covary"))?
        }
    };
    let stem = format!("test-{}", kind_name(kind));
    let mut extra = Outputs::default();
    if !report.binned_means.is_empty() {
        extra.add(format!("{stem}-binned.csv"), binned_csv(&report)?);
    }
    let text = report.to_table();
    run.emit(&stem, report, text, extra)
}

fn kind_name(kind: TestKind) -> &'static str {
    match kind {
        TestKind::Kitagawa => "kitagawa",
        TestKind::Subsample => "subsample",
        TestKind::Linearity => "linearity",
        TestKind::Covary => "covary",
    }
}

fn binned_csv(report: &TestReport) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::invalid(format!("writing CSV: {e}"));
    for b in &report.binned_means {
        w.serialize(b).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::invalid(format!("writing CSV: {e}")))
}
