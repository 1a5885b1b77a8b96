//! Config-driven workflows behind the `lorga` binary. Every command is
//! deterministic given the config and seeds; outputs are plain CSV, JSON and
//! SVG files under `{out}/{name}/`.

mod svg;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{coverage_curve, verify_theorem2, StabilityProbeConfig, StabilityTable, Theorem2Report, ZetaRule};
use crate::data::{generate, split, Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::ga_init::{
    estimate_gradients, estimate_gradients_accumulated, initialize_network, sample_batch, GaInitConfig, InitReport,
};
use crate::linalg::io::save_csv;
use crate::linalg::{derive_seed, svd, Matrix};
use crate::lora::SchemeKind;
use crate::nn::{Network, NetworkSpec, TrainableSet};
use crate::train::{smoothed, train, MetricsLog, TrainConfig};

pub use svg::{line_chart, Chart, Series};
pub use verify::{cmd_verify, VerifyLine, VerifyOptions, VerifyReport};

/// One column of the comparison grid: an adapter scheme or full fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Vanilla,
    Gaussian,
    GaussianSo,
    GradApproxGa,
    LoraGa,
    Full,
}

impl RunKind {
    pub const ALL: [RunKind; 6] =
        [RunKind::Vanilla, RunKind::Gaussian, RunKind::GaussianSo, RunKind::GradApproxGa, RunKind::LoraGa, RunKind::Full];

    pub fn scheme(self) -> Option<SchemeKind> {
        Some(match self {
            RunKind::Vanilla => SchemeKind::Vanilla,
            RunKind::Gaussian => SchemeKind::Gaussian,
            RunKind::GaussianSo => SchemeKind::GaussianSo,
            RunKind::GradApproxGa => SchemeKind::GradApproxGa,
            RunKind::LoraGa => SchemeKind::LoraGa,
            RunKind::Full => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        self.scheme().map_or("full", SchemeKind::as_str)
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_schemes() -> Vec<RunKind> {
    vec![RunKind::Vanilla, RunKind::LoraGa]
}
fn default_eval_fraction() -> f64 {
    0.2
}
fn default_threshold_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<RunKind>,
    pub train: TrainConfig,
    #[serde(default)]
    pub ga_init: GaInitConfig,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Share of the generated data held out for evaluation.
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    /// `τ` for steps-to-threshold, as a fraction of the base network's
    /// initial training loss (identical for every scheme because the initial
    /// point is preserved).
    #[serde(default = "default_threshold_fraction")]
    pub threshold_fraction: f64,
    /// Learning rate for full fine-tuning runs; defaults to `train.lr`.
    #[serde(default)]
    pub full_lr: Option<f64>,
    #[serde(default)]
    pub stability: Option<StabilityConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub d_in: Vec<usize>,
    pub d_out: Vec<usize>,
    pub ranks: Vec<usize>,
    pub samples: usize,
    pub alpha: f64,
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            d_in: vec![256],
            d_out: vec![64, 256, 1024],
            ranks: vec![2, 8, 32],
            samples: 10_000,
            alpha: 16.0,
            gamma: 16.0,
            seed: 0,
        }
    }
}

impl StabilityConfig {
    pub fn probe(&self, seed: u64) -> StabilityProbeConfig {
        StabilityProbeConfig::grid(&self.d_in, &self.d_out, &self.ranks, self.samples, self.alpha, seed)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::invalid("schemes must not be empty"));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::invalid("name must be a non-empty single path component"));
        }
        self.dataset.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.ga_init.validate()?;
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::invalid("eval_fraction must lie in [0, 1)"));
        }
        if self.threshold_fraction.is_nan() || self.threshold_fraction <= 0.0 {
            return Err(Error::invalid("threshold_fraction must be positive"));
        }
        Ok(())
    }

    /// Seeds in precedence order: explicit list, `LORGA_SEED`, `seeds`,
    /// `seed`, then `[0]`.
    pub fn resolve_seeds(&self, cli: Option<&[u64]>, env: Option<&str>) -> Result<Vec<u64>> {
        if let Some(s) = cli {
            if s.is_empty() {
                return Err(Error::invalid("--seeds must list at least one seed"));
            }
            return Ok(s.to_vec());
        }
        if let Some(e) = env {
            let v = e.trim().parse::<u64>().map_err(|err| Error::invalid(format!("LORGA_SEED={e:?}: {err}")))?;
            return Ok(vec![v]);
        }
        if !self.seeds.is_empty() {
            return Ok(self.seeds.clone());
        }
        Ok(vec![self.seed.unwrap_or(0)])
    }
}

/// Options shared by every command.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub jobs: Option<usize>,
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::invalid("--jobs must be at least 1"));
        }
        b = b.num_threads(j);
    }
    b.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Data, base network and threshold shared by every run of a config.
pub struct Workbench {
    pub train_set: Dataset,
    pub eval_set: Option<Dataset>,
    pub base: Network,
    pub threshold: f64,
    pub initial_loss: f64,
}

pub fn workbench(cfg: &ExperimentConfig) -> Result<Workbench> {
    let data = generate(&cfg.dataset)?;
    let (train_set, eval_set) = if cfg.eval_fraction > 0.0 {
        let (a, b) = split(&data, [1.0 - cfg.eval_fraction, cfg.eval_fraction], derive_seed(cfg.dataset.seed, 7))?;
        (a, Some(b))
    } else {
        (data, None)
    };
    let base = Network::new(cfg.network.clone())?;
    let initial_loss = base.loss(&train_set.inputs, &train_set.targets)?;
    Ok(Workbench { threshold: cfg.threshold_fraction * initial_loss, initial_loss, train_set, eval_set, base })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub kind: RunKind,
    pub seed: u64,
    #[serde(skip)]
    pub log: Option<MetricsLog>,
    pub steps_to_threshold: Option<usize>,
    pub final_loss: Option<f64>,
    pub final_eval_loss: Option<f64>,
    pub diverged_at: Option<usize>,
    pub error: Option<String>,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.diverged_at.is_some()
    }
}

/// Initializes and trains one `(kind, seed)` run on the shared workbench.
pub fn run_one(cfg: &ExperimentConfig, wb: &Workbench, kind: RunKind, seed: u64) -> RunResult {
    let outcome = (|| -> Result<MetricsLog> {
        let mut tcfg = cfg.train.clone();
        tcfg.seed = derive_seed(seed, 1);
        tcfg.threshold = Some(wb.threshold);
        let mut net = match kind.scheme() {
            Some(scheme) => {
                let ga = GaInitConfig { seed: derive_seed(seed, 2), ..cfg.ga_init.clone() };
                tcfg.trainable = TrainableSet::AdaptersOnly;
                initialize_network(&wb.base, scheme, &ga, &wb.train_set.inputs, &wb.train_set.targets)?.0
            }
            None => {
                tcfg.trainable = TrainableSet::Full;
                tcfg.lr = cfg.full_lr.unwrap_or(tcfg.lr);
                wb.base.clone()
            }
        };
        train(&mut net, &wb.train_set, wb.eval_set.as_ref(), &tcfg)
    })();
    match outcome {
        Ok(log) => RunResult {
            kind,
            seed,
            steps_to_threshold: log.steps_to_threshold,
            final_loss: log.final_loss,
            final_eval_loss: log.final_eval_loss,
            diverged_at: log.diverged_at,
            error: None,
            log: Some(log),
        },
        Err(e) => RunResult {
            kind,
            seed,
            log: None,
            steps_to_threshold: None,
            final_loss: None,
            final_eval_loss: None,
            diverged_at: None,
            error: Some(e.to_string()),
        },
    }
}

/// Median of the values; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Debug, Clone, Serialize)]
pub struct SchemeSummary {
    pub scheme: RunKind,
    /// `ok` or `DIVERGED`.
    pub status: String,
    pub runs: Vec<RunResult>,
    /// Runs that never reach the threshold count as `steps`.
    pub median_steps_to_threshold: Option<f64>,
    pub reached_threshold: usize,
    pub median_final_eval_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub experiment: String,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub initial_loss: f64,
    pub threshold_fraction: f64,
    pub threshold: f64,
    pub smoothing_window: usize,
    pub schemes: Vec<SchemeSummary>,
    /// `median steps(vanilla) / median steps(lora_ga)`.
    pub speedup_vanilla_over_lora_ga: Option<f64>,
}

fn summarize(cfg: &ExperimentConfig, wb: &Workbench, seeds: &[u64], kinds: &[RunKind], results: Vec<RunResult>) -> TrainSummary {
    let steps = cfg.train.steps;
    let schemes: Vec<SchemeSummary> = kinds
        .iter()
        .map(|&k| {
            let runs: Vec<RunResult> = results.iter().filter(|r| r.kind == k).cloned().collect();
            let ok: Vec<&RunResult> = runs.iter().filter(|r| !r.failed()).collect();
            let status = if ok.len() == runs.len() { "ok" } else { "DIVERGED" };
            let stt: Vec<f64> = ok.iter().map(|r| r.steps_to_threshold.unwrap_or(steps) as f64).collect();
            let evals: Vec<f64> = ok.iter().filter_map(|r| r.final_eval_loss.or(r.final_loss)).collect();
            SchemeSummary {
                scheme: k,
                status: status.into(),
                median_steps_to_threshold: if steps == 0 { None } else { median(&stt) },
                reached_threshold: ok.iter().filter(|r| r.steps_to_threshold.is_some()).count(),
                median_final_eval_loss: median(&evals),
                runs,
            }
        })
        .collect();
    let med = |k: RunKind| schemes.iter().find(|s| s.scheme == k).and_then(|s| s.median_steps_to_threshold);
    let speedup = match (med(RunKind::Vanilla), med(RunKind::LoraGa)) {
        (Some(v), Some(g)) => Some(v / g.max(1.0)),
        _ => None,
    };
    TrainSummary {
        experiment: cfg.name.clone(),
        steps,
        seeds: seeds.to_vec(),
        initial_loss: wb.initial_loss,
        threshold_fraction: cfg.threshold_fraction,
        threshold: wb.threshold,
        smoothing_window: cfg.train.smoothing_window,
        schemes,
        speedup_vanilla_over_lora_ga: speedup,
    }
}

fn run_grid(cfg: &ExperimentConfig, opts: &RunOptions, kinds: &[RunKind]) -> Result<(Workbench, Vec<RunResult>)> {
    let wb = workbench(cfg)?;
    let jobs: Vec<(RunKind, u64)> = kinds.iter().flat_map(|&k| opts.seeds.iter().map(move |&s| (k, s))).collect();
    let results = pool(opts.jobs)?.install(|| jobs.par_iter().map(|&(k, s)| run_one(cfg, &wb, k, s)).collect::<Vec<_>>());
    let root = opts.out.join(&cfg.name);
    for r in &results {
        if let Some(log) = &r.log {
            let dir = root.join(r.kind.as_str());
            fs::create_dir_all(&dir)?;
            log.save_csv(dir.join(format!("{}.csv", r.seed)))?;
        }
    }
    Ok((wb, results))
}

fn loss_chart(cfg: &ExperimentConfig, results: &[RunResult]) -> String {
    let series: Vec<Series> = results
        .iter()
        .filter_map(|r| {
            let log = r.log.as_ref()?;
            let sm = smoothed(&log.losses(), log.smoothing_window);
            Some(Series {
                label: format!("{} s{}", r.kind.as_str(), r.seed),
                points: sm.iter().enumerate().map(|(i, &l)| (i as f64, l)).collect(),
            })
        })
        .collect();
    line_chart(
        &Chart { title: &format!("{}: smoothed training loss", cfg.name), x_label: "step", y_label: "loss", log_y: true },
        &series,
    )
}

/// Trains every configured scheme for every seed.
pub fn cmd_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainSummary> {
    let (wb, results) = run_grid(cfg, opts, &cfg.schemes)?;
    let root = opts.out.join(&cfg.name);
    fs::create_dir_all(&root)?;
    fs::write(root.join("loss_curves.svg"), loss_chart(cfg, &results))?;
    let summary = summarize(cfg, &wb, &opts.seeds, &cfg.schemes, results);
    write_json(&root.join("summary.json"), &summary)?;
    Ok(summary)
}

/// All five schemes plus full fine-tuning; failures become `DIVERGED` rows.
pub fn cmd_ablate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainSummary> {
    let (wb, results) = run_grid(cfg, opts, &RunKind::ALL)?;
    let root = opts.out.join(&cfg.name);
    fs::create_dir_all(&root)?;
    let summary = summarize(cfg, &wb, &opts.seeds, &RunKind::ALL, results);
    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
    let mut csv = String::from(
        "scheme,status,median_steps_to_threshold,median_final_eval_loss,per_seed_steps_to_threshold,per_seed_final_eval_loss\n",
    );
    for s in &summary.schemes {
        let per_steps: Vec<String> = s
            .runs
            .iter()
            .map(|r| format!("{}:{}", r.seed, r.steps_to_threshold.map_or("NA".into(), |v| v.to_string())))
            .collect();
        let per_eval: Vec<String> =
            s.runs.iter().map(|r| format!("{}:{}", r.seed, fmt_opt(r.final_eval_loss.or(r.final_loss)))).collect();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.scheme.as_str(),
            s.status,
            fmt_opt(s.median_steps_to_threshold),
            fmt_opt(s.median_final_eval_loss),
            per_steps.join(";"),
            per_eval.join(";")
        ));
    }
    fs::write(root.join("ablation.csv"), csv)?;
    write_json(&root.join("ablation.json"), &summary)?;
    fs::write(
        root.join("ablation_curves.svg"),
        loss_chart(cfg, &summary.schemes.iter().flat_map(|s| s.runs.clone()).collect::<Vec<_>>()),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerAnalysis {
    pub layer: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub coverage_2r: f64,
    pub criterion_residual: Option<f64>,
    pub predicted_residual: Option<f64>,
    /// `‖U_W[:, :r]ᵀ U_∇W[:, :2r]‖²_F / r`: how much of the weight's top-`r`
    /// left singular subspace lies in the gradient's top-`2r` one. Weight-SVD
    /// initializations adapt the former; LoRA-GA adapts the latter.
    pub weight_gradient_overlap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InitAnalysis {
    pub experiment: String,
    pub seed: u64,
    pub report: InitReport,
    pub layers: Vec<LayerAnalysis>,
}

/// Gradient heatmaps, spectra, coverage curves and criterion residuals of
/// the LoRA-GA initialization for the first seed.
pub fn cmd_init_analyze(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<InitAnalysis> {
    let seed = *opts.seeds.first().ok_or_else(|| Error::invalid("no seed"))?;
    let wb = workbench(cfg)?;
    let ga = GaInitConfig { seed: derive_seed(seed, 2), ..cfg.ga_init.clone() };
    let (_, x, t) = sample_batch(&ga, &wb.train_set.inputs, &wb.train_set.targets)?;
    let snap = match ga.micro_batch_size {
        Some(b) => estimate_gradients_accumulated(&wb.base, &x, &t, b)?,
        None => estimate_gradients(&wb.base, &x, &t)?,
    };
    let (_, report) = initialize_network(&wb.base, SchemeKind::LoraGa, &ga, &wb.train_set.inputs, &wb.train_set.targets)?;

    let dir = opts.out.join(&cfg.name).join("init");
    fs::create_dir_all(&dir)?;
    let mut layers = Vec::new();
    let mut crit = String::from("layer,criterion_residual,predicted_residual,relative_error\n");
    for lr in &report.layers {
        let l = lr.layer;
        let grad = snap.weight(l);
        save_csv(grad, dir.join(format!("layer_{l:03}_gradient.csv")))?;
        let f = svd(grad)?;
        let curve = coverage_curve(&f.s)?;
        let mut spec_csv = String::from("index,sigma\n");
        for (i, s) in curve.sigma.iter().enumerate() {
            spec_csv.push_str(&format!("{},{s:?}\n", i + 1));
        }
        fs::write(dir.join(format!("layer_{l:03}_spectrum.csv")), spec_csv)?;
        let mut cov_csv = String::from("k,coverage\n");
        for (i, c) in curve.cumulative.iter().enumerate() {
            cov_csv.push_str(&format!("{},{c:?}\n", i + 1));
        }
        fs::write(dir.join(format!("layer_{l:03}_coverage.csv")), cov_csv)?;
        for (name, points, log_y) in [
            ("spectrum", curve.sigma.iter().enumerate().map(|(i, &s)| ((i + 1) as f64, s)).collect::<Vec<_>>(), true),
            ("coverage", curve.cumulative.iter().enumerate().map(|(i, &c)| ((i + 1) as f64, c)).collect(), false),
        ] {
            let svg = line_chart(
                &Chart { title: &format!("layer {l} gradient {name}"), x_label: "k", y_label: name, log_y },
                &[Series { label: format!("layer {l}"), points }],
            );
            fs::write(dir.join(format!("layer_{l:03}_{name}.svg")), svg)?;
        }
        let rel = match (lr.criterion_residual, lr.predicted_residual) {
            (Some(c), Some(p)) if p > 0.0 => Some((c - p).abs() / p),
            (Some(c), Some(_)) => Some(c),
            _ => None,
        };
        let o = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:?}"));
        crit.push_str(&format!("{l},{},{},{}\n", o(lr.criterion_residual), o(lr.predicted_residual), o(rel)));

        let wf = svd(&wb.base.layers()[l].effective_weight())?;
        let r = lr.r;
        let uw = wf.u.select_columns(&(0..r).collect::<Vec<_>>());
        let ug = f.u.select_columns(&(0..2 * r).collect::<Vec<_>>());
        let overlap = uw.t_matmul(&ug)?.frobenius_norm().powi(2) / r as f64;
        layers.push(LayerAnalysis {
            layer: l,
            d_in: lr.d_in,
            d_out: lr.d_out,
            coverage_2r: lr.coverage_2r,
            criterion_residual: lr.criterion_residual,
            predicted_residual: lr.predicted_residual,
            weight_gradient_overlap: overlap,
        });
    }
    fs::write(dir.join("criterion.csv"), crit)?;
    let analysis = InitAnalysis { experiment: cfg.name.clone(), seed, report, layers };
    write_json(&dir.join("init_report.json"), &analysis)?;
    Ok(analysis)
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityOutput {
    pub report: Theorem2Report,
    pub lora_ga: StabilityTable,
    pub constant: StabilityTable,
}

fn stability_csv(t: &StabilityTable) -> String {
    let mut s = String::from(
        "d_in,d_out,rank,zeta,eta,forward_moment,forward_stderr,forward_predicted,backward_moment,backward_predicted\n",
    );
    for c in &t.cells {
        s.push_str(&format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            c.d_in,
            c.d_out,
            c.rank,
            c.zeta,
            c.eta,
            c.forward_moment,
            c.forward_stderr,
            c.forward_predicted,
            c.backward_moment,
            c.backward_predicted
        ));
    }
    s
}

/// Second-moment probe over the configured grid with the LoRA-GA `ζ` and
/// with constant `ζ = 1`.
pub fn cmd_stability(
    stab: &StabilityConfig,
    opts: &RunOptions,
    out_name: &str,
    rule: Option<ZetaRule>,
) -> Result<StabilityOutput> {
    let seed = opts.seeds.first().copied().unwrap_or(stab.seed);
    let probe = stab.probe(seed);
    let rule = rule.unwrap_or(ZetaRule::LoraGa { gamma: stab.gamma });
    let (report, lora_ga, constant) = pool(opts.jobs)?.install(|| verify_theorem2(&probe, rule))?;
    let dir = opts.out.join(out_name);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("stability_lora_ga.csv"), stability_csv(&lora_ga))?;
    fs::write(dir.join("stability_constant.csv"), stability_csv(&constant))?;
    let out = StabilityOutput { report, lora_ga, constant };
    write_json(&dir.join("stability.json"), &out)?;
    Ok(out)
}

pub(crate) fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub(crate) fn max_rel_diff(a: &Matrix, b: &Matrix) -> Result<f64> {
    let scale = a.max_abs().max(b.max_abs()).max(f64::MIN_POSITIVE);
    Ok(a.max_abs_diff(b)? / scale)
}
