//! Experiment specs: layered TOML documents resolved into a runnable plan.
//!
//! Layers, lowest first: the bundled recipe named by `recipe`, the user
//! file, then `key.path=value` overrides. Tables merge key by key; any other
//! value (arrays included) replaces the lower layer.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use mashvco::calibration::NlOrders;
use mashvco::mash::{apply_sweep_value, Architecture, SimConfig, SweepParam};
use mashvco::readout::gradient_pw_errors;
use mashvco::signal::{coherent_bin_frequency, Tone};
use mashvco::theory::TheoryParams;
use mashvco::vco::TuningCurve;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};
use crate::recipes;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Theory,
    Simulate,
    Sweep,
    Calibration,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Consumed during layering.
    #[serde(default)]
    pub recipe: Option<String>,
    pub kind: Kind,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub config: Table,
    #[serde(default)]
    pub presets: Presets,
    #[serde(default)]
    pub variants: Vec<VariantSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub analysis: Analysis,
    #[serde(default)]
    pub theory: TheorySpec,
    #[serde(default)]
    pub calibration: CalibrationSpec,
}

/// Shorthands applied on top of the resolved configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presets {
    pub curve1: Option<String>,
    pub curve2: Option<String>,
    /// Largest per-phase skew of a linear pulse-width gradient, seconds.
    pub pw_max_skew: Option<f64>,
    pub f_in: Option<f64>,
    pub amplitude_dbfs: Option<f64>,
    /// Multiplies `n_samples`.
    pub record_factor: Option<usize>,
    pub tones: Option<Vec<ToneSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneSpec {
    pub f: f64,
    pub dbfs: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Presets {
    fn or(&self, base: &Presets) -> Presets {
        Presets {
            curve1: self.curve1.clone().or_else(|| base.curve1.clone()),
            curve2: self.curve2.clone().or_else(|| base.curve2.clone()),
            pw_max_skew: self.pw_max_skew.or(base.pw_max_skew),
            f_in: self.f_in.or(base.f_in),
            amplitude_dbfs: self.amplitude_dbfs.or(base.amplitude_dbfs),
            record_factor: self.record_factor.or(base.record_factor),
            tones: self.tones.clone().or_else(|| base.tones.clone()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    /// Variant whose SNR this one is compared against.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub config: Table,
    #[serde(default)]
    pub presets: Presets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: String,
    #[serde(default)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analysis {
    /// Oversampling ratios to report; empty means the configured one.
    #[serde(default)]
    pub osr: Vec<usize>,
    #[serde(default = "yes")]
    pub spectrum: bool,
    #[serde(default)]
    pub streams: bool,
    /// Stored with the manifest as the default `compare` tolerance.
    #[serde(default)]
    pub tolerance_db: Option<f64>,
}

impl Default for Analysis {
    fn default() -> Self {
        Self {
            osr: Vec::new(),
            spectrum: true,
            streams: false,
            tolerance_db: None,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySpec {
    #[serde(default)]
    pub osr: Vec<f64>,
    /// Overrides of the reference design parameters.
    #[serde(default)]
    pub params: Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    #[serde(default = "default_orders")]
    pub orders: [usize; 3],
    /// Also evaluate the fixed-point LUT path.
    #[serde(default = "yes")]
    pub fixed_point: bool,
}

fn default_orders() -> [usize; 3] {
    let o = NlOrders::DEFAULT;
    [o.ni, o.nj, o.nk]
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            orders: default_orders(),
            fixed_point: true,
        }
    }
}

impl CalibrationSpec {
    pub fn orders(&self) -> NlOrders {
        NlOrders {
            ni: self.orders[0],
            nj: self.orders[1],
            nk: self.orders[2],
        }
    }
}

/// Fully resolved, validated experiment.
#[derive(Debug, Clone, Serialize)]
pub struct Plan {
    pub name: String,
    pub description: String,
    pub kind: Kind,
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
    pub variants: Vec<Variant>,
    pub sweep: Option<SweepPlan>,
    pub analysis: Analysis,
    pub theory: Option<TheoryPlan>,
    pub calibration: CalibrationSpec,
}

#[derive(Debug, Clone, Serialize)]
pub struct Variant {
    pub name: String,
    pub reference: Option<String>,
    pub config: SimConfig,
}

impl Variant {
    /// Oversampling ratios to analyze.
    pub fn osr_list(&self, analysis: &Analysis) -> Vec<usize> {
        if analysis.osr.is_empty() {
            vec![self.config.osr]
        } else {
            analysis.osr.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPlan {
    pub name: String,
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryPlan {
    pub params: TheoryParams,
    pub osr: Vec<f64>,
}

pub const DEFAULT_THEORY_OSR: [f64; 7] = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];

pub fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Applies one `a.b.c=value` override. Values parse as TOML, falling back to a bare string.
pub fn apply_set(doc: &mut Table, assignment: &str) -> CliResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("--set expects key=value, got '{assignment}'")))?;
    let keys: Vec<&str> = path.trim().split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Validation(format!("--set: bad key path '{path}'")));
    }
    let value = match toml::from_str::<Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut node = doc;
    for k in parents {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::Validation(format!("--set: '{k}' in '{path}' is not a table"))),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_table(text: &str, origin: &str) -> CliResult<Table> {
    toml::from_str::<Table>(text).map_err(|e| CliError::Validation(format!("{origin}: {e}")))
}

/// Reads a spec from a file path or a bundled recipe name and applies all layers.
pub fn load_layers(source: &str, sets: &[String]) -> CliResult<Table> {
    let path = Path::new(source);
    let mut doc = if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        let user = parse_table(&text, source)?;
        match user.get("recipe") {
            Some(Value::String(r)) => {
                let mut base = recipe_table(r)?;
                merge(&mut base, &user);
                base
            }
            Some(_) => return Err(CliError::Validation(format!("{source}: `recipe` must be a string"))),
            None => user,
        }
    } else if let Some(r) = recipes::find(source) {
        parse_table(r.text, r.name)?
    } else {
        return Err(CliError::Validation(format!(
            "'{source}' is neither a file nor a bundled recipe"
        )));
    };
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    Ok(doc)
}

fn recipe_table(name: &str) -> CliResult<Table> {
    let r = recipes::find(name)
        .ok_or_else(|| CliError::Validation(format!("unknown recipe '{name}'")))?;
    parse_table(r.text, r.name)
}

/// Deserializes through rendered TOML so errors carry line and key context.
fn from_table<T: DeserializeOwned>(t: &Table, what: &str) -> CliResult<T> {
    let text = toml::to_string(t).map_err(|e| CliError::Validation(format!("{what}: {e}")))?;
    toml::from_str(&text).map_err(|e| CliError::Validation(format!("{what}: {e}")))
}

fn to_table<T: Serialize>(v: &T) -> Table {
    Table::try_from(v).expect("plain data serializes to a TOML table")
}

pub fn parse_spec(doc: &Table) -> CliResult<ExperimentSpec> {
    from_table(doc, "spec")
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn curve_preset(name: &str) -> CliResult<TuningCurve> {
    Ok(match name {
        "table1_stage1" => TuningCurve::table1_stage1(),
        "table1_stage2" => TuningCurve::table1_stage2(),
        "stage2_nl18" => TuningCurve::stage2_nl18(),
        "stage2_nl3" => TuningCurve::stage2_nl3(),
        "stage1_dynamic_nl" => TuningCurve::stage1_dynamic_nl(),
        other => {
            return Err(CliError::Validation(format!(
                "unknown curve preset '{other}' (expected one of {})",
                CURVE_PRESETS.join(", ")
            )))
        }
    })
}

pub const CURVE_PRESETS: [&str; 5] = [
    "table1_stage1",
    "table1_stage2",
    "stage2_nl18",
    "stage2_nl3",
    "stage1_dynamic_nl",
];

fn amplitude_from_dbfs(cfg: &SimConfig, dbfs: f64) -> f64 {
    cfg.full_scale_vpp / 2.0 * 10f64.powf(dbfs / 20.0)
}

/// Reference configuration for the architecture, the config layers, then presets.
pub fn resolve_config(config: &Table, presets: &Presets) -> CliResult<SimConfig> {
    let arch: Architecture = match config.get("architecture") {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e| CliError::Validation(format!("config.architecture: {e}")))?,
        None => Architecture::MashSe,
    };
    let mut doc = to_table(&SimConfig::table1(arch));
    merge(&mut doc, config);
    let mut cfg: SimConfig = from_table(&doc, "config")?;
    if let Some(f) = presets.record_factor {
        if f == 0 || !f.is_power_of_two() {
            return Err(CliError::Validation(format!(
                "presets.record_factor must be a power of two, got {f}"
            )));
        }
        cfg.n_samples *= f;
    }
    if let Some(c) = &presets.curve1 {
        cfg.curve1 = curve_preset(c)?;
    }
    if let Some(c) = &presets.curve2 {
        cfg.curve2 = curve_preset(c)?;
    }
    if let Some(tones) = &presets.tones {
        cfg.stimulus = tones
            .iter()
            .map(|t| Tone::new(amplitude_from_dbfs(&cfg, t.dbfs), t.f, t.phase))
            .collect();
    }
    if presets.f_in.is_some() || presets.amplitude_dbfs.is_some() {
        let amp = presets.amplitude_dbfs.map(|a| amplitude_from_dbfs(&cfg, a));
        let tone = cfg
            .stimulus
            .first_mut()
            .ok_or_else(|| CliError::Validation("presets.f_in / amplitude_dbfs need a stimulus tone".into()))?;
        if let Some(f) = presets.f_in {
            tone.frequency = f;
        }
        if let Some(a) = amp {
            tone.amplitude = a;
        }
    }
    if let Some(skew) = presets.pw_max_skew {
        cfg.pw_errors = Some(gradient_pw_errors(cfg.n_phi1, skew)?);
    }
    let window = cfg.n_samples / presets.record_factor.unwrap_or(1);
    for t in &mut cfg.stimulus {
        t.frequency = coherent_bin_frequency(t.frequency, cfg.fs, window);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_theory(spec: &TheorySpec) -> CliResult<TheoryPlan> {
    let mut doc = to_table(&TheoryParams::table1());
    merge(&mut doc, &spec.params);
    let params: TheoryParams = from_table(&doc, "theory.params")?;
    params.validate()?;
    let osr = if spec.osr.is_empty() {
        DEFAULT_THEORY_OSR.to_vec()
    } else {
        spec.osr.clone()
    };
    if let Some(o) = osr.iter().find(|o| !(**o >= 1.0 && o.is_finite())) {
        return Err(CliError::Validation(format!("theory.osr values must be >= 1, got {o}")));
    }
    Ok(TheoryPlan { params, osr })
}

/// Resolves every variant and checks the cross-field rules.
pub fn resolve(spec: ExperimentSpec) -> CliResult<Plan> {
    if spec.schema != SCHEMA {
        return Err(CliError::Validation(format!(
            "schema {} is not supported (expected {SCHEMA})",
            spec.schema
        )));
    }
    if !valid_name(&spec.name) {
        return Err(CliError::Validation(format!(
            "name '{}' must be non-empty ASCII letters, digits, '_' or '-'",
            spec.name
        )));
    }
    if spec.sweep.is_some() != (spec.kind == Kind::Sweep) {
        return Err(CliError::Validation(
            "a [sweep] table is required for kind = \"sweep\" and rejected otherwise".into(),
        ));
    }
    if let Some(o) = spec.analysis.osr.iter().find(|o| **o == 0) {
        return Err(CliError::Validation(format!("analysis.osr values must be >= 1, got {o}")));
    }
    if let Some(t) = spec.analysis.tolerance_db {
        if !(t >= 0.0) {
            return Err(CliError::Validation(format!("analysis.tolerance_db must be >= 0, got {t}")));
        }
    }

    let theory = if spec.kind == Kind::Theory {
        Some(resolve_theory(&spec.theory)?)
    } else {
        None
    };

    let mut variants = Vec::new();
    if spec.kind != Kind::Theory {
        let specs = if spec.variants.is_empty() {
            vec![VariantSpec {
                name: "main".into(),
                reference: None,
                config: Table::new(),
                presets: Presets::default(),
            }]
        } else {
            spec.variants.clone()
        };
        let mut seen = BTreeSet::new();
        for v in &specs {
            if !valid_name(&v.name) {
                return Err(CliError::Validation(format!("variant name '{}' is not valid", v.name)));
            }
            if !seen.insert(v.name.clone()) {
                return Err(CliError::Validation(format!("variant name '{}' is repeated", v.name)));
            }
        }
        for v in &specs {
            if let Some(r) = &v.reference {
                if r == &v.name || !seen.contains(r) {
                    return Err(CliError::Validation(format!(
                        "variant '{}' references unknown variant '{r}'",
                        v.name
                    )));
                }
            }
            let mut table = spec.config.clone();
            merge(&mut table, &v.config);
            let config = resolve_config(&table, &v.presets.or(&spec.presets))
                .map_err(|e| e.context(format!("variant '{}'", v.name)))?;
            variants.push(Variant {
                name: v.name.clone(),
                reference: v.reference.clone(),
                config,
            });
        }
    }
    let tones_ok: fn(usize) -> bool = match spec.kind {
        Kind::Simulate => |n| (1..=2).contains(&n),
        _ => |n| n == 1,
    };
    if let Some(v) = variants.iter().find(|v| !tones_ok(v.config.stimulus.len())) {
        return Err(CliError::Validation(format!(
            "variant '{}' has {} stimulus tones; simulate takes 1 or 2, other kinds exactly 1",
            v.name,
            v.config.stimulus.len()
        )));
    }
    if spec.kind == Kind::Sweep && !spec.analysis.osr.is_empty() {
        return Err(CliError::Validation("sweeps analyze at the configured osr; drop analysis.osr".into()));
    }
    if spec.kind == Kind::Calibration {
        if variants.len() != 1 {
            return Err(CliError::Validation("calibration runs take exactly one variant".into()));
        }
        spec.calibration_orders_valid()?;
    }

    let sweep = match &spec.sweep {
        Some(s) => {
            let param: SweepParam = s.param.parse()?;
            for v in &variants {
                for &x in &s.values {
                    apply_sweep_value(&v.config, param, x)
                        .and_then(|c| c.validate())
                        .map_err(|e| {
                            CliError::from(e).context(format!("variant '{}', {} = {x}", v.name, s.param))
                        })?;
                }
            }
            Some(SweepPlan {
                name: s.param.clone(),
                param,
                values: s.values.clone(),
            })
        }
        None => None,
    };

    Ok(Plan {
        name: spec.name,
        description: spec.description,
        kind: spec.kind,
        output_dir: spec.output_dir,
        variants,
        sweep,
        analysis: spec.analysis,
        theory,
        calibration: spec.calibration,
    })
}

impl ExperimentSpec {
    fn calibration_orders_valid(&self) -> CliResult<()> {
        self.calibration.orders().validate()?;
        Ok(())
    }
}

/// Layers, parses and resolves in one step.
pub fn load_plan(source: &str, sets: &[String]) -> CliResult<Plan> {
    resolve(parse_spec(&load_layers(source, sets)?)?)
}
