//! TOML configuration schema and its conversion into library types.

use std::collections::BTreeMap;
use std::path::Path;

use dcgrid::baseline::NominalParams;
use dcgrid::certification::L1Defaults;
use dcgrid::grid::{Branch, BusNetwork, BusNode, DguParams, LineParams, MicrogridTopology, NodeId};
use dcgrid::l1::Realization;
use dcgrid::metrics::DEFAULT_BAND_PCT;
use dcgrid::plant::{LineModel, LoadTable};
use dcgrid::sim::{BaselineDesign, ControllerSettings, EventKind, Network, Scenario, SimEvent};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub grid: GridSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub l1: L1Section,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dgus: Vec<DguEntry>,
    #[serde(default)]
    pub lines: Vec<LineEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus: Option<BusSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DguEntry {
    pub id: NodeId,
    pub v_in: f64,
    pub v_ref: f64,
    pub l_t: f64,
    pub c_t: f64,
    pub r_t: f64,
    pub p_load: f64,
    #[serde(default = "default_p_rated")]
    pub p_rated: f64,
    #[serde(default = "default_f_s")]
    pub f_s: f64,
    /// Nominal duty for the baseline design.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_nom: Option<f64>,
}

fn default_p_rated() -> f64 {
    5e3
}

fn default_f_s() -> f64 {
    25e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub a: NodeId,
    pub b: NodeId,
    pub r: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSection {
    /// Voltage at which bus load powers are converted to conductances.
    pub v_nom: f64,
    pub nodes: Vec<BusNodeEntry>,
    pub branches: Vec<LineEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusNodeEntry {
    pub id: NodeId,
    #[serde(default)]
    pub load_power: f64,
    #[serde(default)]
    pub load_current: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    #[default]
    Lqi,
    Poles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub method: BaselineMethod,
    pub q: [f64; 3],
    pub r: f64,
    /// Closed-loop poles as [re, im] pairs, used with `method = "poles"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poles: Option<[[f64; 2]; 3]>,
    pub nominal: NominalEntry,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let BaselineDesign::Lqi { q, r } = BaselineDesign::default() else {
            unreachable!()
        };
        Self {
            method: BaselineMethod::Lqi,
            q,
            r,
            poles: None,
            nominal: NominalEntry::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NominalEntry {
    pub l_t: f64,
    pub c_t: f64,
    pub r_t: f64,
}

impl Default for NominalEntry {
    fn default() -> Self {
        let n = NominalParams::default();
        Self {
            l_t: n.l_t,
            c_t: n.c_t,
            r_t: n.r_t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L1Section {
    pub enabled: bool,
    pub warm_start: bool,
    pub poles: [f64; 3],
    pub realization: Realization,
    pub gamma: f64,
    pub omega_c: f64,
    pub theta_box: [[f64; 2]; 3],
    pub epsilon_scale: f64,
}

impl Default for L1Section {
    fn default() -> Self {
        let d = L1Defaults::default();
        Self {
            enabled: true,
            warm_start: false,
            poles: d.poles,
            realization: d.realization,
            gamma: d.gamma,
            omega_c: d.omega_c,
            theta_box: d.theta_box,
            epsilon_scale: d.epsilon_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Defaults to `dynamic` for load-connected grids and `qsl` for bus networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_model: Option<LineModel>,
    pub t_end: f64,
    pub dt_plant: f64,
    pub dt_ctrl: f64,
    pub band_pct: f64,
    pub initially_disconnected: Vec<NodeId>,
    pub events: Vec<EventEntry>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            line_model: None,
            t_end: 0.1,
            dt_plant: 1e-6,
            dt_ctrl: 40e-6,
            band_pct: DEFAULT_BAND_PCT,
            initially_disconnected: vec![],
            events: vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    PlugIn,
    PlugOut,
    LineFault,
    LineRestore,
    LoadStep,
    RefStep,
    LoadProfile,
}

/// One scripted event. Which of the optional fields are required depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub t: f64,
    pub kind: EventType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgu: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_ref: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currents: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// Record every n-th controller tick.
    pub stride: usize,
    pub trace: String,
    pub metrics: String,
    pub report: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            stride: 1,
            trace: "trace.csv".into(),
            metrics: "metrics.json".into(),
            report: "certificate.json".into(),
        }
    }
}

pub fn load(path: &Path) -> Result<ConfigDocument, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|f| Failure::config(format!("{}: {}", path.display(), f.message)))
}

pub fn parse(text: &str) -> Result<ConfigDocument, Failure> {
    toml::from_str(text).map_err(|e| Failure::config(e.to_string()))
}

fn cfg_err(msg: impl std::fmt::Display) -> Failure {
    Failure::config(msg.to_string())
}

impl DguEntry {
    pub fn params(&self) -> DguParams {
        DguParams {
            id: self.id,
            v_in: self.v_in,
            r_t: self.r_t,
            l_t: self.l_t,
            c_t: self.c_t,
            p_rated: self.p_rated,
            p_load: self.p_load,
            v_ref: self.v_ref,
            f_s: self.f_s,
        }
    }

    pub fn from_params(d: &DguParams, d_nom: Option<f64>) -> Self {
        Self {
            id: d.id,
            v_in: d.v_in,
            v_ref: d.v_ref,
            l_t: d.l_t,
            c_t: d.c_t,
            r_t: d.r_t,
            p_load: d.p_load,
            p_rated: d.p_rated,
            f_s: d.f_s,
            d_nom,
        }
    }
}

impl ConfigDocument {
    pub fn dgu_params(&self) -> Vec<DguParams> {
        self.grid.dgus.iter().map(DguEntry::params).collect()
    }

    pub fn bus_network(&self) -> Result<Option<(BusNetwork, f64)>, Failure> {
        let parsed = self.bus_network_unchecked()?;
        if let Some((net, _)) = &parsed {
            net.validate().map_err(cfg_err)?;
        }
        Ok(parsed)
    }

    /// Bus network as written, before connectivity and parameter checks.
    pub fn bus_network_unchecked(&self) -> Result<Option<(BusNetwork, f64)>, Failure> {
        let Some(bus) = &self.grid.bus else {
            return Ok(None);
        };
        if !self.grid.lines.is_empty() {
            return Err(cfg_err("grid.lines and grid.bus are mutually exclusive"));
        }
        if !(bus.v_nom > 0.0) {
            return Err(cfg_err("grid.bus.v_nom must be positive"));
        }
        let net = BusNetwork {
            dgus: self.dgu_params(),
            bus_nodes: bus
                .nodes
                .iter()
                .map(|n| BusNode {
                    id: n.id,
                    load_conductance: n.load_power / (bus.v_nom * bus.v_nom),
                    load_current: n.load_current,
                })
                .collect(),
            branches: bus
                .branches
                .iter()
                .map(|b| Branch { a: b.a, b: b.b, r: b.r, l: b.l })
                .collect(),
        };
        Ok(Some((net, bus.v_nom)))
    }

    /// Load-connected topology as written, without Kron reduction.
    pub fn topology(&self) -> Result<MicrogridTopology, Failure> {
        let lines = self
            .grid
            .lines
            .iter()
            .map(|l| LineParams::new(l.a, l.b, l.r, l.l))
            .collect::<Result<Vec<_>, _>>()
            .map_err(cfg_err)?;
        MicrogridTopology::new(self.dgu_params(), lines).map_err(cfg_err)
    }

    pub fn network(&self) -> Result<Network, Failure> {
        match self.bus_network()? {
            Some((net, v_nom)) => Ok(Network::Bus { net, v_nom }),
            None => Ok(Network::LoadConnected(self.topology()?)),
        }
    }

    pub fn l1_defaults(&self) -> L1Defaults {
        let l = &self.l1;
        L1Defaults {
            poles: l.poles,
            realization: l.realization,
            gamma: l.gamma,
            omega_c: l.omega_c,
            theta_box: l.theta_box,
            epsilon_scale: l.epsilon_scale,
        }
    }

    pub fn controller(&self) -> Result<ControllerSettings, Failure> {
        let b = &self.baseline;
        let design = match b.method {
            BaselineMethod::Lqi => BaselineDesign::Lqi { q: b.q, r: b.r },
            BaselineMethod::Poles => BaselineDesign::Poles {
                poles: b
                    .poles
                    .ok_or_else(|| cfg_err("baseline.poles is required with method = \"poles\""))?,
            },
        };
        let d_nom: BTreeMap<NodeId, f64> = self
            .grid
            .dgus
            .iter()
            .filter_map(|d| d.d_nom.map(|x| (d.id, x)))
            .collect();
        if let Some((id, x)) = d_nom.iter().find(|(_, x)| !(**x > 0.0 && **x < 1.0)) {
            return Err(cfg_err(format!("DGU {id}: d_nom {x} outside (0, 1)")));
        }
        Ok(ControllerSettings {
            nominal: NominalParams {
                l_t: b.nominal.l_t,
                c_t: b.nominal.c_t,
                r_t: b.nominal.r_t,
            },
            d_nom,
            design,
            l1: self.l1_defaults(),
            l1_enabled: self.l1.enabled,
            warm_start: self.l1.warm_start,
        })
    }

    pub fn scenario(&self) -> Result<Scenario, Failure> {
        let network = self.network()?;
        let s = &self.scenario;
        let mut sc = Scenario::new(network);
        sc.line_model = s.line_model.unwrap_or(if self.grid.bus.is_some() {
            LineModel::Qsl
        } else {
            LineModel::Dynamic
        });
        sc.controller = self.controller()?;
        sc.t_end = s.t_end;
        sc.dt_plant = s.dt_plant;
        sc.dt_ctrl = s.dt_ctrl;
        sc.band_pct = s.band_pct;
        sc.record_every = self.output.stride.max(1);
        sc.initially_disconnected = s.initially_disconnected.clone();
        sc.events = s
            .events
            .iter()
            .enumerate()
            .map(|(k, e)| e.to_event().map_err(|m| cfg_err(format!("scenario.events[{k}]: {m}"))))
            .collect::<Result<_, _>>()?;
        Ok(sc)
    }
}

impl EventEntry {
    pub fn to_event(&self) -> Result<SimEvent, String> {
        fn need<T: Copy>(v: Option<T>, name: &str, kind: EventType) -> Result<T, String> {
            v.ok_or_else(|| format!("{kind:?} requires '{name}'"))
        }
        let k = self.kind;
        let kind = match k {
            EventType::PlugIn => EventKind::PlugIn { dgu: need(self.dgu, "dgu", k)? },
            EventType::PlugOut => EventKind::PlugOut { dgu: need(self.dgu, "dgu", k)? },
            EventType::LineFault => EventKind::LineFault {
                a: need(self.a, "a", k)?,
                b: need(self.b, "b", k)?,
            },
            EventType::LineRestore => EventKind::LineRestore {
                a: need(self.a, "a", k)?,
                b: need(self.b, "b", k)?,
            },
            EventType::LoadStep => EventKind::LoadStep {
                node: need(self.node, "node", k)?,
                power: need(self.power, "power", k)?,
            },
            EventType::RefStep => EventKind::RefStep {
                dgu: need(self.dgu, "dgu", k)?,
                v_ref: need(self.v_ref, "v_ref", k)?,
            },
            EventType::LoadProfile => EventKind::LoadProfile {
                node: need(self.node, "node", k)?,
                table: LoadTable {
                    times: self.times.clone().ok_or("LoadProfile requires 'times'")?,
                    currents: self.currents.clone().ok_or("LoadProfile requires 'currents'")?,
                },
            },
        };
        Ok(SimEvent { t: self.t, kind })
    }
}
