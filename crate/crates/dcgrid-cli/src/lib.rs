//! Command implementations behind the `dcgrid` binary.

pub mod config;

use std::fmt;
use std::path::{Path, PathBuf};

use dcgrid::certification::{certify, CertReport};
use dcgrid::grid::{kron_reduce, kron_reduce_detailed, linearize_all, GridError, MicrogridTopology};
use dcgrid::plant::LineModel;
use dcgrid::sim::{self, RunSummary, SimError, SimOutput};
use rayon::prelude::*;
use serde::Serialize;

use config::{ConfigDocument, DguEntry, GridSection, LineEntry};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_CERTIFICATION: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;

/// An error carrying the process exit code it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn certification(message: impl Into<String>) -> Self {
        Self { code: EXIT_CERTIFICATION, message: message.into() }
    }

    pub fn divergence(message: impl Into<String>) -> Self {
        Self { code: EXIT_DIVERGENCE, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub line_model: Option<LineModel>,
    pub quiet: bool,
}

impl Options {
    fn out_dir(&self, doc: &ConfigDocument) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(&doc.output.dir))
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Topology the controllers are designed on: the grid itself, or its Kron
/// reduction for bus networks.
pub fn design_topology(doc: &ConfigDocument) -> Result<MicrogridTopology, Failure> {
    match doc.bus_network()? {
        Some((net, _)) => kron_reduce(&net).map_err(|e| Failure::config(e.to_string())),
        None => doc.topology(),
    }
}

pub fn certify_document(doc: &ConfigDocument) -> Result<CertReport, Failure> {
    let topo = design_topology(doc)?;
    let models = linearize_all(&topo).map_err(|e| Failure::config(e.to_string()))?;
    Ok(certify(&topo, &models, &doc.l1_defaults()))
}

pub fn cmd_certify(config_path: &Path, opts: &Options) -> Result<CertReport, Failure> {
    let doc = config::load(config_path)?;
    let report = certify_document(&doc)?;
    let path = opts.out_dir(&doc).join(&doc.output.report);
    write_file(&path, &to_json(&report))?;
    for d in &report.dgus {
        opts.say(format!(
            "DGU {:>3}  N={}  xi^2={:.4e}  gamma={:.4e} > {:.4e}  lambda={:.4}  {}",
            d.id,
            d.n_neighbors,
            d.xi_sq,
            d.gamma,
            d.gamma_threshold,
            d.lambda,
            if d.pass { "pass" } else { "FAIL" }
        ));
    }
    opts.say(format!("report written to {}", path.display()));
    if report.global_pass {
        Ok(report)
    } else {
        let failures: Vec<String> = report
            .dgus
            .iter()
            .flat_map(|d| d.failures.iter().map(move |f| format!("DGU {}: {f}", d.id)))
            .collect();
        Err(Failure::certification(format!(
            "certification failed\n  {}",
            failures.join("\n  ")
        )))
    }
}

/// Contents of the metrics sidecar written next to the trace.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsDocument<'a> {
    pub status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<f64>,
    pub dgu_ids: &'a [u32],
    #[serde(flatten)]
    pub summary: &'a RunSummary,
}

pub fn scenario_of(doc: &ConfigDocument, opts: &Options) -> Result<sim::Scenario, Failure> {
    let mut sc = doc.scenario()?;
    if let Some(m) = opts.line_model {
        sc.line_model = m;
    }
    Ok(sc)
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Divergence { t, .. } => Failure::divergence(format!("simulation diverged at t = {t:.6e} s")),
        other => Failure::config(other.to_string()),
    }
}

fn write_outputs(doc: &ConfigDocument, opts: &Options, out: &SimOutput, diverged_at: Option<f64>) -> Result<PathBuf, Failure> {
    let dir = opts.out_dir(doc);
    write_file(&dir.join(&doc.output.trace), &out.to_csv())?;
    let metrics = MetricsDocument {
        status: if diverged_at.is_some() { "diverged" } else { "completed" },
        diverged_at,
        dgu_ids: &out.dgu_ids,
        summary: &out.summary,
    };
    write_file(&dir.join(&doc.output.metrics), &to_json(&metrics))?;
    Ok(dir)
}

pub fn cmd_simulate(config_path: &Path, opts: &Options) -> Result<SimOutput, Failure> {
    let doc = config::load(config_path)?;
    let sc = scenario_of(&doc, opts)?;
    match sim::run(sc) {
        Ok(out) => {
            let dir = write_outputs(&doc, opts, &out, None)?;
            for w in &out.summary.warnings {
                eprintln!("warning: {w}");
            }
            for w in &out.summary.windows {
                let worst = w
                    .dgus
                    .iter()
                    .filter(|d| d.connected)
                    .filter_map(|d| d.metrics.map(|m| (d.id, m)))
                    .max_by(|a, b| a.1.peak_deviation.total_cmp(&b.1.peak_deviation));
                if let Some((id, m)) = worst {
                    opts.say(format!(
                        "t={:.4} s  {:<40} worst DGU {id}: peak {:.3} V, settling {:.2} ms{}",
                        w.t0,
                        w.events.join(", "),
                        m.peak_deviation,
                        m.settling_time * 1e3,
                        if m.settled { "" } else { " (not settled)" }
                    ));
                }
            }
            opts.say(format!("trace and metrics written to {}", dir.display()));
            Ok(out)
        }
        Err(SimError::Divergence { t, partial }) => {
            write_outputs(&doc, opts, &partial, Some(t))?;
            Err(Failure::divergence(format!("simulation diverged at t = {t:.6e} s")))
        }
        Err(e) => Err(sim_failure(e)),
    }
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub cert_pass: bool,
    pub lambda_max: f64,
    pub gamma_margin_min: f64,
    pub settling_time_max: f64,
    pub peak_deviation_max: f64,
    pub overshoot_pct_max: f64,
    pub status: String,
}

pub const SWEEP_HEADER: &str =
    "value,cert_pass,lambda_max,gamma_margin_min,settling_time_max,peak_deviation_max,overshoot_pct_max,status";

impl SweepRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{}",
            self.value,
            self.cert_pass,
            self.lambda_max,
            self.gamma_margin_min,
            self.settling_time_max,
            self.peak_deviation_max,
            self.overshoot_pct_max,
            self.status
        )
    }
}

fn lookup<'a>(root: &'a toml::Value, key: &str) -> Option<&'a toml::Value> {
    key.split('.').try_fold(root, |v, seg| match v {
        toml::Value::Table(t) => t.get(seg),
        toml::Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

fn lookup_mut<'a>(root: &'a mut toml::Value, key: &str) -> Option<&'a mut toml::Value> {
    key.split('.').try_fold(root, |v, seg| match v {
        toml::Value::Table(t) => t.get_mut(seg),
        toml::Value::Array(a) => seg.parse::<usize>().ok().and_then(move |i| a.get_mut(i)),
        _ => None,
    })
}

/// Copy of `doc` with the scalar at the dotted `key` replaced by `value`.
pub fn with_value(doc: &ConfigDocument, key: &str, value: f64) -> Result<ConfigDocument, Failure> {
    let mut root = toml::Value::try_from(doc).map_err(|e| Failure::config(e.to_string()))?;
    let slot = lookup_mut(&mut root, key).ok_or_else(|| Failure::config(format!("unknown key '{key}'")))?;
    *slot = match slot {
        toml::Value::Float(_) => toml::Value::Float(value),
        toml::Value::Integer(_) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
        toml::Value::Integer(_) => {
            return Err(Failure::config(format!("'{key}' takes integers, got {value}")));
        }
        other => {
            return Err(Failure::config(format!(
                "'{key}' is a {}, not a numeric scalar",
                other.type_str()
            )));
        }
    };
    root.try_into().map_err(|e: toml::de::Error| Failure::config(e.to_string()))
}

fn sweep_row(doc: &ConfigDocument, value: f64, opts: &Options) -> Result<SweepRow, Failure> {
    let report = certify_document(doc)?;
    let lambda_max = report.dgus.iter().map(|d| d.lambda).fold(0.0, f64::max);
    let gamma_margin_min = report
        .dgus
        .iter()
        .map(|d| d.gamma - d.gamma_threshold)
        .fold(f64::INFINITY, f64::min);
    let (summary, status) = match sim::run(scenario_of(doc, opts)?) {
        Ok(out) => (out.summary, "completed"),
        Err(SimError::Divergence { partial, .. }) => (partial.summary, "diverged"),
        Err(e) => return Err(sim_failure(e)),
    };
    let metrics: Vec<_> = summary
        .windows
        .iter()
        .flat_map(|w| w.dgus.iter())
        .filter(|d| d.connected)
        .filter_map(|d| d.metrics)
        .collect();
    let max = |f: fn(&dcgrid::metrics::TransientMetrics) -> f64| metrics.iter().map(f).fold(0.0, f64::max);
    Ok(SweepRow {
        value,
        cert_pass: report.global_pass,
        lambda_max,
        gamma_margin_min,
        settling_time_max: max(|m| m.settling_time),
        peak_deviation_max: max(|m| m.peak_deviation),
        overshoot_pct_max: max(|m| m.overshoot_pct),
        status: status.into(),
    })
}

pub fn cmd_sweep(config_path: &Path, key: &str, values: &[f64], opts: &Options) -> Result<Vec<SweepRow>, Failure> {
    let doc = config::load(config_path)?;
    let root = toml::Value::try_from(&doc).map_err(|e| Failure::config(e.to_string()))?;
    match lookup(&root, key) {
        Some(toml::Value::Float(_) | toml::Value::Integer(_)) => {}
        Some(other) => {
            return Err(Failure::config(format!(
                "'{key}' is a {}, not a numeric scalar",
                other.type_str()
            )))
        }
        None => return Err(Failure::config(format!("unknown key '{key}'"))),
    }
    let docs = values
        .iter()
        .map(|&v| with_value(&doc, key, v))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = docs
        .par_iter()
        .zip(values)
        .map(|(d, &v)| sweep_row(d, v, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    let path = opts.out_dir(&doc).join("sweep.csv");
    write_file(&path, &csv)?;
    opts.say(csv.trim_end());
    opts.say(format!("sweep table written to {}", path.display()));
    Ok(rows)
}

/// Load-connected equivalent of the bus network in `doc`, as a config document.
pub fn reduce_document(doc: &ConfigDocument) -> Result<ConfigDocument, Failure> {
    let (net, _) = doc
        .bus_network_unchecked()?
        .ok_or_else(|| Failure::config("kron needs a [grid.bus] section"))?;
    let red = kron_reduce_detailed(&net).map_err(|e| match e {
        GridError::Disconnected(..) => Failure::certification(e.to_string()),
        other => Failure::config(other.to_string()),
    })?;
    let d_nom = |id| doc.grid.dgus.iter().find(|d| d.id == id).and_then(|d| d.d_nom);
    Ok(ConfigDocument {
        grid: GridSection {
            dgus: red
                .topology
                .dgus()
                .iter()
                .map(|d| DguEntry::from_params(d, d_nom(d.id)))
                .collect(),
            lines: red
                .topology
                .lines()
                .iter()
                .map(|l| LineEntry { a: l.a, b: l.b, r: l.r_ij, l: l.l_ij })
                .collect(),
            bus: None,
        },
        baseline: doc.baseline.clone(),
        l1: doc.l1.clone(),
        scenario: Default::default(),
        output: Default::default(),
    })
}

pub fn cmd_kron(config_path: &Path, opts: &Options) -> Result<ConfigDocument, Failure> {
    let doc = config::load(config_path)?;
    let reduced = reduce_document(&doc)?;
    let text = toml::to_string_pretty(&reduced).map_err(|e| Failure::config(e.to_string()))?;
    let path = opts.out_dir(&doc).join("reduced.toml");
    write_file(&path, &text)?;
    opts.say(format!(
        "{} DGUs, {} equivalent lines written to {}",
        reduced.grid.dgus.len(),
        reduced.grid.lines.len(),
        path.display()
    ));
    Ok(reduced)
}
