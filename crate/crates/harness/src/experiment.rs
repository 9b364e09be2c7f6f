//! Repetition loop, method dispatch and metric aggregation.

use rayon::prelude::*;
use stagecp::adaptive::window_means;
use stagecp::baselines::{Baseline, BaselineKind, BaselineParams, OnlineMethod};
use stagecp::risk_control::{calibrate, select_lambda_nonadaptive, CalibrationSettings, LambdaGrid, RiskTest};
use stagecp::synth::{generate, geometric_mixing, ScenarioSpec};
use stagecp::{
    AbstentionPolicy, AdaptiveConfig, AdaptiveConformal, ConformalSet, IntervalKind, PredictionInterval, QuantileLevel,
    ResidualComponents, ScalingConfig, ScoredPoint, Seed, StepRecord, TwoStageModel, TwoStagePipeline,
};

use crate::config::{ExperimentConfig, Method, Protocol};
use crate::error::{HarnessError, Result};
use crate::io::{Dataset, DiagnosticRow, ResultRow};

/// Records of every method on one repetition's data.
#[derive(Debug, Clone)]
pub struct RepetitionRun {
    pub rep: usize,
    pub seed: Seed,
    pub runs: Vec<(Method, Vec<StepRecord>)>,
    pub diagnostics: Vec<DiagnosticRow>,
}

impl RepetitionRun {
    pub fn records(&self, method: Method) -> Option<&[StepRecord]> {
        self.runs.iter().find(|(m, _)| *m == method).map(|(_, r)| r.as_slice())
    }

    pub fn result_rows(&self, policy: AbstentionPolicy) -> Vec<ResultRow> {
        self.runs
            .iter()
            .flat_map(|(m, recs)| recs.iter().map(move |r| ResultRow::from_record(m.name(), r, policy)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation of the finite values; NaN when
    /// there are none.
    pub fn of(values: &[f64]) -> Self {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Stat { mean, std }
    }
}

/// Metrics of one method on one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub steps: usize,
    pub coverage: f64,
    pub coverage_reporting: f64,
    pub coverage_algorithmic: f64,
    /// Mean and spread over time of the emitted (non-abstained) widths.
    pub width: Stat,
    pub abstentions: usize,
    pub window_coverage: Vec<f64>,
    pub min_window_coverage: f64,
}

fn covered_flags(records: &[StepRecord], policy: AbstentionPolicy) -> Vec<f64> {
    records.iter().map(|r| if r.covered(policy) { 1.0 } else { 0.0 }).collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trailing means over `window` steps, starting once a full window exists
/// (or a single value over everything for short runs).
pub fn sliding_mean(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.min(values.len()).max(1);
    if values.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() + 1 - w);
    let mut sum: f64 = values[..w].iter().sum();
    out.push(sum / w as f64);
    for i in w..values.len() {
        sum += values[i] - values[i - w];
        out.push(sum / w as f64);
    }
    out
}

impl RunMetrics {
    pub fn compute(records: &[StepRecord], policy: AbstentionPolicy, window: usize) -> Self {
        let flags = covered_flags(records, policy);
        let widths: Vec<f64> = records.iter().filter(|r| !r.abstained()).map(|r| r.interval.width()).collect();
        let window_coverage = sliding_mean(&flags, window);
        let min_window_coverage = window_coverage.iter().copied().fold(f64::NAN, f64::min);
        Self {
            steps: records.len(),
            coverage: mean(&flags),
            coverage_reporting: mean(&covered_flags(records, AbstentionPolicy::Reporting)),
            coverage_algorithmic: mean(&covered_flags(records, AbstentionPolicy::Algorithmic)),
            width: Stat::of(&widths),
            abstentions: records.len() - widths.len(),
            window_coverage,
            min_window_coverage,
        }
    }
}

/// Aggregate of one method over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub coverage: Stat,
    pub coverage_reporting: Stat,
    pub coverage_algorithmic: Stat,
    /// Across repetitions, of each repetition's mean emitted width.
    pub width: Stat,
    /// Mean over repetitions of the within-run width spread.
    pub width_time_std: f64,
    pub abstentions: usize,
    pub steps: usize,
    /// Repetitions with at least one abstention.
    pub abstaining_reps: usize,
    /// Repetitions with an abstention at every step.
    pub fully_abstained_reps: usize,
    pub min_window_coverage: Stat,
    /// Sliding-window coverage averaged over repetitions.
    pub window_coverage: Vec<f64>,
    /// Largest sliding-window coverage gain over each other method.
    pub max_gain: Vec<(Method, Stat)>,
}

impl MethodSummary {
    pub fn abstained_everywhere(&self) -> bool {
        self.steps > 0 && self.abstentions == self.steps
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub repetitions: usize,
    pub methods: Vec<MethodSummary>,
}

impl ExperimentSummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// Some method abstained at every step of every repetition.
    pub fn any_abstained_everywhere(&self) -> bool {
        self.methods.iter().any(MethodSummary::abstained_everywhere)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,coverage_mean,coverage_std,coverage_reporting,coverage_algorithmic,width_mean,width_std,\
             width_time_std,abstentions,steps,abstaining_reps,fully_abstained_reps,min_window_coverage\n",
        );
        for s in &self.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                s.method.name(),
                s.coverage.mean,
                s.coverage.std,
                s.coverage_reporting.mean,
                s.coverage_algorithmic.mean,
                s.width.mean,
                s.width.std,
                s.width_time_std,
                s.abstentions,
                s.steps,
                s.abstaining_reps,
                s.fully_abstained_reps,
                s.min_window_coverage.mean
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>16} {:>16} {:>10} {:>12}\n",
            "method", "coverage", "width", "abstained", "min window"
        );
        for s in &self.methods {
            let na = s.fully_abstained_reps == self.repetitions;
            let cov = if na { "NA".to_string() } else { format!("{:.4}±{:.4}", s.coverage.mean, s.coverage.std) };
            let width = if na { "NA".to_string() } else { format!("{:.4}±{:.4}", s.width.mean, s.width.std) };
            out.push_str(&format!(
                "{:<8} {:>16} {:>16} {:>10} {:>12.4}\n",
                s.method.name(),
                cov,
                width,
                s.abstentions,
                s.min_window_coverage.mean
            ));
        }
        out
    }
}

/// Scored points after the training prefix, with `t` from the data.
fn scored_stream(cfg: &ExperimentConfig, seed: Seed, loaded: Option<&Dataset>) -> Result<Vec<ScoredPoint>> {
    if let Some(scores) = loaded.and_then(Dataset::precomputed_scores) {
        return scores;
    }
    let points = match loaded {
        Some(Dataset::Raw(points)) => points.clone(),
        _ => generate(&scenario_spec(cfg, seed)?)?,
    };
    if points.len() <= cfg.n_train {
        return Err(HarnessError::Config(format!("{} rows leave nothing after {} training rows", points.len(), cfg.n_train)));
    }
    let (train, rest) = points.split_at(cfg.n_train);
    let pipeline = TwoStagePipeline::fit(train)?;
    Ok(pipeline.score_all(rest)?)
}

/// Scenario spec for repetition seed `seed`; `t = 0` is the first point
/// after the training prefix.
pub fn scenario_spec(cfg: &ExperimentConfig, seed: Seed) -> Result<ScenarioSpec> {
    let kind = cfg.scenario_kind()?;
    let held_out = match cfg.protocol {
        Protocol::Split => cfg.n_conf + cfg.n_cal + cfg.n_test,
        Protocol::Online => cfg.k + cfg.n_test,
    };
    let mut spec = ScenarioSpec::new(kind, cfg.n_train + held_out, cfg.n_train, seed);
    if let Some(r) = cfg.shift_rate {
        spec.shift_rate = r;
    }
    if let Some(s) = cfg.shift_start {
        spec.shift_start = s;
    }
    if let Some(s) = cfg.noise_std {
        spec.noise1_std = s;
        spec.noise2_std = s;
    }
    if let Some(s) = cfg.w_std {
        spec.w_std = s;
    }
    Ok(spec)
}

fn risk_test(cfg: &ExperimentConfig) -> RiskTest {
    if cfg.p_value == "mixing" {
        RiskTest::Mixing(geometric_mixing(cfg.mixing_coef, cfg.mixing_terms))
    } else {
        RiskTest::Binomial
    }
}

fn level(v: f64) -> Result<QuantileLevel> {
    Ok(QuantileLevel::new(v)?)
}

fn baseline_params(cfg: &ExperimentConfig) -> BaselineParams {
    BaselineParams { alpha: cfg.alpha, aci_gamma: cfg.gamma, ..BaselineParams::default() }
}

fn baseline_kind(m: Method) -> Option<BaselineKind> {
    match m {
        Method::Sc => Some(BaselineKind::Sc),
        Method::Wsc => Some(BaselineKind::Wsc),
        Method::Aci => Some(BaselineKind::Aci),
        Method::DtAci => Some(BaselineKind::DtAci),
        Method::Pid => Some(BaselineKind::Pid),
        Method::Ocid => Some(BaselineKind::Ocid),
        _ => None,
    }
}

/// Fixed-level component intervals recomputed on each window.
struct WindowedComponents {
    method: Method,
    scaling: ScalingConfig,
}

impl OnlineMethod for WindowedComponents {
    fn step(&mut self, window: &[ScoredPoint], point: &ScoredPoint) -> stagecp::Result<StepRecord> {
        let set = ConformalSet::new(window)?;
        let s = &self.scaling;
        let interval = match self.method {
            Method::Signed => set.signed(s, point.y_hat)?,
            _ => set.separate(s.c, s.d, point.y_hat),
        };
        let mut rec = StepRecord::basic(point.t, point.y, interval, s.alpha);
        (rec.a, rec.b, rec.c, rec.d) = (s.a, s.b, s.c.value(), s.d.value());
        Ok(rec)
    }
}

fn adaptive_config(cfg: &ExperimentConfig) -> Result<AdaptiveConfig> {
    let c = level(cfg.c)?;
    let d = level(cfg.d)?;
    Ok(AdaptiveConfig {
        alpha: cfg.alpha,
        alpha_init: cfg.alpha,
        gamma: cfg.gamma,
        eta: cfg.eta,
        k: cfg.k,
        conf_ratio: cfg.conf_ratio,
        delta: cfg.delta,
        tau: cfg.tau,
        c_init: cfg.c,
        d_init: cfg.d,
        test: risk_test(cfg),
        fwer: cfg.fwer_algorithm()?,
        grid: LambdaGrid::regular(cfg.grid_steps, c, d)?.candidates().to_vec(),
        ..AdaptiveConfig::default()
    })
}

fn online_method(cfg: &ExperimentConfig, m: Method) -> Result<Box<dyn OnlineMethod>> {
    if let Some(kind) = baseline_kind(m) {
        return Ok(Box::new(Baseline::new(kind, baseline_params(cfg))));
    }
    match m {
        Method::Sr => Ok(Box::new(AdaptiveConformal::new(adaptive_config(cfg)?)?)),
        _ => Ok(Box::new(WindowedComponents { method: m, scaling: ScalingConfig::new(1.0, 1.0, cfg.c, cfg.d, cfg.alpha)? })),
    }
}

/// Runs `method` on `stream[start..]`, each step seeing up to `k` preceding points.
fn run_from(method: &mut dyn OnlineMethod, stream: &[ScoredPoint], start: usize, k: usize) -> Result<Vec<StepRecord>> {
    (start..stream.len()).map(|i| Ok(method.step(&stream[i.saturating_sub(k)..i], &stream[i])?)).collect()
}

/// Split-protocol SR: risk control on `cal`, then the accepted `(a, b)`
/// closest to nominal coverage on `conf`; abstains when none is accepted.
fn split_sr(cfg: &ExperimentConfig, conf: &[ScoredPoint], cal: &[ScoredPoint], test: &[ScoredPoint]) -> Result<Vec<StepRecord>> {
    let (c, d) = (level(cfg.c)?, level(cfg.d)?);
    let set = ConformalSet::new(conf)?;
    let grid = LambdaGrid::regular(cfg.grid_steps, c, d)?;
    let settings = CalibrationSettings::new(cfg.alpha, cfg.delta)
        .with_tau(cfg.tau)
        .with_test(risk_test(cfg))
        .with_fwer(cfg.fwer_algorithm()?);
    let verdict = calibrate(&grid, &set, cal, &settings)?;
    let quantiles = set.component_quantiles(c, d);
    let choice = select_lambda_nonadaptive(&verdict.lambda_val(), conf, quantiles, cfg.alpha);
    Ok(test
        .iter()
        .map(|p| {
            let (interval, (a, b)) = match choice {
                Some((a, b)) => (PredictionInterval::symmetric(p.y_hat, quantiles.half_width(a, b)), (a, b)),
                None => (PredictionInterval::abstained(p.y_hat), (f64::NAN, f64::NAN)),
            };
            let mut rec = StepRecord::basic(p.t, p.y, interval, cfg.alpha);
            (rec.a, rec.b, rec.c, rec.d) = (a, b, cfg.c, cfg.d);
            rec
        })
        .collect())
}

fn split_static(cfg: &ExperimentConfig, m: Method, held_out: &[ScoredPoint], test: &[ScoredPoint]) -> Result<Vec<StepRecord>> {
    let mut method: Box<dyn OnlineMethod> = match m {
        Method::Sc | Method::Wsc => Box::new(Baseline::new(baseline_kind(m).expect("baseline"), baseline_params(cfg))),
        _ => Box::new(WindowedComponents { method: m, scaling: ScalingConfig::new(1.0, 1.0, cfg.c, cfg.d, cfg.alpha)? }),
    };
    // The held-out set stays fixed, so the interval is built once around
    // zero and moved to each prediction.
    let base = method.step(held_out, &ScoredPoint::new(0, 0.0, 0.0, 0.0))?;
    Ok(test
        .iter()
        .map(|p| StepRecord { t: p.t, y: p.y, interval: recenter(&base.interval, p.y_hat, m == Method::Signed), ..base })
        .collect())
}

fn recenter(iv: &PredictionInterval, center: f64, asymmetric: bool) -> PredictionInterval {
    match iv.kind {
        IntervalKind::Covered { lo, hi } if asymmetric => PredictionInterval::asymmetric(center, lo + center, hi + center),
        IntervalKind::Covered { lo, hi } => PredictionInterval {
            kind: IntervalKind::Covered { lo: lo + center, hi: hi + center },
            center,
            half_width: iv.half_width,
        },
        kind => PredictionInterval { kind, center, half_width: iv.half_width },
    }
}

fn diagnostics(stream: &[ScoredPoint], start: usize, k: usize) -> Vec<DiagnosticRow> {
    (start..stream.len())
        .map(|i| {
            let c = ResidualComponents::from(&stream[i]);
            let (mean_dr1, mean_r2) = window_means(&stream[i.saturating_sub(k)..i]);
            DiagnosticRow { t: stream[i].t, r: c.r_total, delta_r1: c.delta_r1, r2: c.r2, mean_dr1, mean_r2 }
        })
        .collect()
}

/// Runs every configured method on one repetition's data.
pub fn run_repetition(cfg: &ExperimentConfig, rep: usize, loaded: Option<&Dataset>) -> Result<RepetitionRun> {
    let seed = Seed(cfg.seed).derive(rep as u64);
    let stream = scored_stream(cfg, seed, loaded)?;
    let start = match cfg.protocol {
        Protocol::Split => cfg.n_conf + cfg.n_cal,
        Protocol::Online => cfg.k,
    };
    if stream.len() <= start {
        return Err(HarnessError::Config(format!("{} scored points leave no test steps after {start}", stream.len())));
    }
    let mut runs = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let records = match cfg.protocol {
            Protocol::Online => run_from(online_method(cfg, m)?.as_mut(), &stream, start, cfg.k)?,
            Protocol::Split => {
                let (conf, rest) = stream.split_at(cfg.n_conf);
                let (cal, test) = rest.split_at(cfg.n_cal);
                match m {
                    Method::Sr => split_sr(cfg, conf, cal, test)?,
                    Method::Sc | Method::Wsc => split_static(cfg, m, &stream[..start], test)?,
                    Method::SrCd | Method::Signed => split_static(cfg, m, conf, test)?,
                    _ => run_from(online_method(cfg, m)?.as_mut(), &stream, start, cfg.k)?,
                }
            }
        };
        runs.push((m, records));
    }
    let window = if cfg.protocol == Protocol::Online { cfg.k } else { start };
    Ok(RepetitionRun { rep, seed, runs, diagnostics: diagnostics(&stream, start, window) })
}

/// Loads the configured input file, if any.
pub fn load_input(cfg: &ExperimentConfig) -> Result<Option<Dataset>> {
    cfg.input.as_ref().map(|p| crate::io::ingest_csv(p, cfg.schema)).transpose()
}

/// All repetitions, in repetition order, computed in parallel.
pub fn run_repetitions(cfg: &ExperimentConfig) -> Result<Vec<RepetitionRun>> {
    cfg.validate()?;
    let loaded = load_input(cfg)?;
    (0..cfg.repetitions).into_par_iter().map(|r| run_repetition(cfg, r, loaded.as_ref())).collect()
}

pub fn summarize(cfg: &ExperimentConfig, runs: &[RepetitionRun]) -> Result<ExperimentSummary> {
    let policy = cfg.abstention_policy()?;
    let metrics: Vec<Vec<RunMetrics>> = runs
        .iter()
        .map(|run| run.runs.iter().map(|(_, r)| RunMetrics::compute(r, policy, cfg.coverage_window)).collect())
        .collect();
    let methods = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let per_rep: Vec<&RunMetrics> = metrics.iter().map(|row| &row[j]).collect();
            let collect = |f: fn(&RunMetrics) -> f64| per_rep.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let series_len = per_rep.iter().map(|r| r.window_coverage.len()).min().unwrap_or(0);
            let window_coverage =
                (0..series_len).map(|i| per_rep.iter().map(|r| r.window_coverage[i]).sum::<f64>() / per_rep.len() as f64).collect();
            let max_gain = cfg
                .methods
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(i, &other)| {
                    let gains: Vec<f64> = metrics
                        .iter()
                        .map(|row| {
                            row[j].window_coverage.iter().zip(&row[i].window_coverage).map(|(a, b)| a - b).fold(f64::NAN, f64::max)
                        })
                        .collect();
                    (other, Stat::of(&gains))
                })
                .collect();
            MethodSummary {
                method: m,
                coverage: Stat::of(&collect(|r| r.coverage)),
                coverage_reporting: Stat::of(&collect(|r| r.coverage_reporting)),
                coverage_algorithmic: Stat::of(&collect(|r| r.coverage_algorithmic)),
                width: Stat::of(&collect(|r| r.width.mean)),
                width_time_std: Stat::of(&collect(|r| r.width.std)).mean,
                abstentions: per_rep.iter().map(|r| r.abstentions).sum(),
                steps: per_rep.iter().map(|r| r.steps).sum(),
                abstaining_reps: per_rep.iter().filter(|r| r.abstentions > 0).count(),
                fully_abstained_reps: per_rep.iter().filter(|r| r.steps > 0 && r.abstentions == r.steps).count(),
                min_window_coverage: Stat::of(&collect(|r| r.min_window_coverage)),
                window_coverage,
                max_gain,
            }
        })
        .collect();
    Ok(ExperimentSummary { repetitions: runs.len(), methods })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentSummary, Vec<RepetitionRun>)> {
    let runs = run_repetitions(cfg)?;
    Ok((summarize(cfg, &runs)?, runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Tau,
    Delta,
    Gamma,
    Eta,
    K,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tau" => Ok(SweepParam::Tau),
            "delta" => Ok(SweepParam::Delta),
            "gamma" => Ok(SweepParam::Gamma),
            "eta" => Ok(SweepParam::Eta),
            "k" => Ok(SweepParam::K),
            other => Err(HarnessError::Config(format!("cannot sweep {other:?}; use tau, delta, gamma, eta or k"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Delta => "delta",
            SweepParam::Gamma => "gamma",
            SweepParam::Eta => "eta",
            SweepParam::K => "k",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::Tau => cfg.tau = value,
            SweepParam::Delta => cfg.delta = value,
            SweepParam::Gamma => cfg.gamma = value,
            SweepParam::Eta => cfg.eta = value,
            SweepParam::K => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(HarnessError::Config(format!("k must be a whole number, got {value}")));
                }
                cfg.k = value as usize;
            }
        }
        Ok(())
    }
}

/// One summary per grid value; every value reuses the same seeds.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<(f64, ExperimentSummary)>> {
    if values.is_empty() {
        return Err(HarnessError::Config("empty sweep grid".into()));
    }
    values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            param.apply(&mut c, v)?;
            Ok((v, run_experiment(&c)?.0))
        })
        .collect()
}

pub fn sweep_csv(param: SweepParam, table: &[(f64, ExperimentSummary)]) -> String {
    let mut out = format!("{},method,coverage_mean,coverage_std,width_mean,width_std,abstentions,fully_abstained_reps\n", param.name());
    for (v, s) in table {
        for m in &s.methods {
            out.push_str(&format!(
                "{v},{},{},{},{},{},{},{}\n",
                m.method.name(),
                m.coverage.mean,
                m.coverage.std,
                m.width.mean,
                m.width.std,
                m.abstentions,
                m.fully_abstained_reps
            ));
        }
    }
    out
}
