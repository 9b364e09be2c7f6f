//! Flat experiment configuration, loadable from TOML and overridable from the
//! command line.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use stagecp::synth::ScenarioKind;
use stagecp::{AbstentionPolicy, FwerAlgorithm};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Fixed train / conf / cal / test split.
    Split,
    /// Sliding-window recalibration over a stream.
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Raw,
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Risk-controlled scaled components (adaptive under the online protocol).
    #[serde(rename = "SR")]
    Sr,
    /// Separate component quantiles at `(c, d)`, `a = b = 1`.
    #[serde(rename = "SR_CD")]
    SrCd,
    /// Signed-component heuristic at `(c, d)`, `a = b = 1`.
    #[serde(rename = "SIGNED")]
    Signed,
    #[serde(rename = "SC")]
    Sc,
    #[serde(rename = "WSC")]
    Wsc,
    #[serde(rename = "ACI")]
    Aci,
    #[serde(rename = "DTACI")]
    DtAci,
    #[serde(rename = "PID")]
    Pid,
    #[serde(rename = "OCID")]
    Ocid,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Sr,
        Method::SrCd,
        Method::Signed,
        Method::Sc,
        Method::Wsc,
        Method::Aci,
        Method::DtAci,
        Method::Pid,
        Method::Ocid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sr => "SR",
            Method::SrCd => "SR_CD",
            Method::Signed => "SIGNED",
            Method::Sc => "SC",
            Method::Wsc => "WSC",
            Method::Aci => "ACI",
            Method::DtAci => "DTACI",
            Method::Pid => "PID",
            Method::Ocid => "OCID",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(name.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// CSV input; overrides `scenario` when set.
    pub input: Option<PathBuf>,
    pub schema: Schema,
    pub protocol: Protocol,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub delta: f64,
    pub tau: f64,
    pub gamma: f64,
    pub eta: f64,
    pub k: usize,
    pub c: f64,
    pub d: f64,
    pub conf_ratio: f64,
    pub fwer: String,
    /// `binomial` or `mixing`; the latter uses `phi(i) = mixing_coef^i`.
    pub p_value: String,
    pub mixing_coef: f64,
    pub mixing_terms: usize,
    pub grid_steps: usize,
    pub n_train: usize,
    pub n_conf: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub policy: String,
    pub output: PathBuf,
    pub coverage_window: usize,
    /// Scenario overrides; unset values keep the scenario defaults.
    pub shift_rate: Option<f64>,
    pub shift_start: Option<i64>,
    pub noise_std: Option<f64>,
    pub w_std: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "IID_LINEAR".into(),
            input: None,
            schema: Schema::Raw,
            protocol: Protocol::Split,
            methods: vec![Method::Sr, Method::Sc, Method::Wsc],
            alpha: 0.1,
            delta: 0.1,
            tau: 0.0,
            gamma: 0.01,
            eta: 0.01,
            k: 100,
            c: 0.05,
            d: 0.05,
            conf_ratio: 0.5,
            fwer: "fixed_sequence".into(),
            p_value: "binomial".into(),
            mixing_coef: 0.8,
            mixing_terms: 50,
            grid_steps: 10,
            n_train: 1000,
            n_conf: 500,
            n_cal: 200,
            n_test: 2000,
            repetitions: 1,
            seed: 0,
            policy: "reporting".into(),
            output: PathBuf::from("results"),
            coverage_window: 200,
            shift_rate: None,
            shift_start: None,
            noise_std: None,
            w_std: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn scenario_kind(&self) -> Result<ScenarioKind> {
        ScenarioKind::from_name(&self.scenario)
            .ok_or_else(|| HarnessError::Config(format!("unknown scenario {:?}", self.scenario)))
    }

    pub fn abstention_policy(&self) -> Result<AbstentionPolicy> {
        match self.policy.to_ascii_lowercase().as_str() {
            "reporting" => Ok(AbstentionPolicy::Reporting),
            "algorithmic" => Ok(AbstentionPolicy::Algorithmic),
            other => Err(HarnessError::Config(format!("unknown policy {other:?}"))),
        }
    }

    pub fn fwer_algorithm(&self) -> Result<FwerAlgorithm> {
        match self.fwer.to_ascii_lowercase().as_str() {
            "fixed_sequence" => Ok(FwerAlgorithm::FixedSequence),
            "bonferroni" => Ok(FwerAlgorithm::Bonferroni),
            other => Err(HarnessError::Config(format!("unknown fwer algorithm {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("no methods requested");
        }
        if !(self.tau >= 0.0 && self.gamma >= 0.0 && self.eta >= 0.0) {
            return bad("tau, gamma and eta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.c) || !(0.0..=1.0).contains(&self.d) {
            return bad("c and d must lie in [0, 1]");
        }
        if self.grid_steps == 0 {
            return bad("grid_steps must be positive");
        }
        if self.coverage_window == 0 {
            return bad("coverage_window must be positive");
        }
        match self.protocol {
            Protocol::Split if self.n_conf == 0 || self.n_cal == 0 => return bad("split protocol needs n_conf and n_cal"),
            Protocol::Online if self.k < 2 => return bad("online protocol needs k >= 2"),
            _ => {}
        }
        if self.input.is_none() {
            self.scenario_kind()?;
        }
        self.abstention_policy()?;
        self.fwer_algorithm()?;
        if !matches!(self.p_value.as_str(), "binomial" | "mixing") {
            return bad("p_value must be binomial or mixing");
        }
        Ok(())
    }

    /// Applies every flag that was given on the command line.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = &o.$field { self.$field = v.clone(); } )* };
        }
        set!(
            scenario, schema, protocol, alpha, delta, tau, gamma, eta, k, c, d, conf_ratio, fwer, p_value,
            mixing_coef, mixing_terms, grid_steps, n_train, n_conf, n_cal, n_test, repetitions, seed, policy,
            output, coverage_window
        );
        if let Some(v) = &o.input {
            self.input = Some(v.clone());
        }
        if let Some(v) = o.shift_rate {
            self.shift_rate = Some(v);
        }
        if let Some(v) = o.shift_start {
            self.shift_start = Some(v);
        }
        if let Some(v) = o.noise_std {
            self.noise_std = Some(v);
        }
        if let Some(v) = o.w_std {
            self.w_std = Some(v);
        }
        if let Some(list) = &o.methods {
            self.methods = parse_methods(list)?;
        }
        Ok(())
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Method::parse(s).ok_or_else(|| HarnessError::Config(format!("unknown method {s:?}"))))
        .collect()
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    match s {
        "split" => Ok(Protocol::Split),
        "online" => Ok(Protocol::Online),
        _ => Err(format!("expected split or online, got {s}")),
    }
}

fn parse_schema(s: &str) -> std::result::Result<Schema, String> {
    match s {
        "raw" => Ok(Schema::Raw),
        "precomputed" => Ok(Schema::Precomputed),
        _ => Err(format!("expected raw or precomputed, got {s}")),
    }
}

/// One optional flag per configuration key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_parser = parse_schema)]
    pub schema: Option<Schema>,
    #[arg(long, value_parser = parse_protocol)]
    pub protocol: Option<Protocol>,
    /// Comma-separated method names.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub conf_ratio: Option<f64>,
    #[arg(long)]
    pub fwer: Option<String>,
    #[arg(long)]
    pub p_value: Option<String>,
    #[arg(long)]
    pub mixing_coef: Option<f64>,
    #[arg(long)]
    pub mixing_terms: Option<usize>,
    #[arg(long)]
    pub grid_steps: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_conf: Option<usize>,
    #[arg(long)]
    pub n_cal: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub coverage_window: Option<usize>,
    #[arg(long)]
    pub shift_rate: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub shift_start: Option<i64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub w_std: Option<f64>,
}
