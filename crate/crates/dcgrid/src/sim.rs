//! Event-driven closed-loop simulation: nonlinear plant, sampled baseline and
//! L1 controllers, plug-and-play events and per-event transient metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{Complex, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{self, BaselineError, BaselineGains, NominalParams};
use crate::certification::{certify_local, DguCert, L1Defaults};
use crate::grid::{
    compute_operating_point, coupling_matrix, kron_reduce, Branch, BusNetwork, DguParams, GridError,
    MicrogridTopology, NodeId,
};
use crate::l1::{self, composite_control, ControllerState, L1Config, PredictorZoh};
use crate::metrics::{analyze_window, TransientMetrics, DEFAULT_BAND_PCT};
use crate::plant::{Algebraic, LineModel, LoadTable, Plant, Workspace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("baseline design for DGU {id}: {source}")]
    Baseline { id: NodeId, source: BaselineError },
    #[error("simulation diverged at t = {t:.6e} s")]
    Divergence { t: f64, partial: Box<SimOutput> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    PlugIn { dgu: NodeId },
    PlugOut { dgu: NodeId },
    LineFault { a: NodeId, b: NodeId },
    LineRestore { a: NodeId, b: NodeId },
    /// New load power (W) at a DGU or bus node.
    LoadStep { node: NodeId, power: f64 },
    RefStep { dgu: NodeId, v_ref: f64 },
    /// Additional current drawn at `node` following `table`, from the event time on.
    LoadProfile { node: NodeId, table: LoadTable },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl SimEvent {
    pub fn label(&self) -> String {
        match &self.kind {
            EventKind::PlugIn { dgu } => format!("plug-in DGU{dgu}"),
            EventKind::PlugOut { dgu } => format!("plug-out DGU{dgu}"),
            EventKind::LineFault { a, b } => format!("fault line {a}-{b}"),
            EventKind::LineRestore { a, b } => format!("restore line {a}-{b}"),
            EventKind::LoadStep { node, power } => format!("load node {node} -> {power} W"),
            EventKind::RefStep { dgu, v_ref } => format!("reference DGU{dgu} -> {v_ref} V"),
            EventKind::LoadProfile { node, .. } => format!("load profile at node {node}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    LoadConnected(MicrogridTopology),
    /// Loads on interior buses. `v_nom` converts bus load powers to conductances.
    Bus { net: BusNetwork, v_nom: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineDesign {
    Lqi { q: [f64; 3], r: f64 },
    /// Closed-loop poles as [re, im] pairs.
    Poles { poles: [[f64; 2]; 3] },
}

impl Default for BaselineDesign {
    fn default() -> Self {
        BaselineDesign::Lqi {
            q: [1e-5, 1e-6, 60.0],
            r: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSettings {
    pub nominal: NominalParams,
    /// Nominal duty per DGU for the baseline design; defaults to 1 − v_in/v_ref.
    pub d_nom: BTreeMap<NodeId, f64>,
    pub design: BaselineDesign,
    pub l1: L1Defaults,
    pub l1_enabled: bool,
    /// Keep adaptive estimates across plug-in instead of zeroing them.
    pub warm_start: bool,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            nominal: NominalParams::default(),
            d_nom: BTreeMap::new(),
            design: BaselineDesign::default(),
            l1: L1Defaults::default(),
            l1_enabled: true,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: Network,
    pub line_model: LineModel,
    pub controller: ControllerSettings,
    pub t_end: f64,
    pub dt_plant: f64,
    pub dt_ctrl: f64,
    /// Record every n-th controller tick.
    pub record_every: usize,
    pub initially_disconnected: Vec<NodeId>,
    pub events: Vec<SimEvent>,
    pub band_pct: f64,
}

impl Scenario {
    pub fn new(network: Network) -> Self {
        Self {
            network,
            line_model: LineModel::Dynamic,
            controller: ControllerSettings::default(),
            t_end: 0.1,
            dt_plant: 1e-6,
            dt_ctrl: 40e-6,
            record_every: 1,
            initially_disconnected: vec![],
            events: vec![],
            band_pct: DEFAULT_BAND_PCT,
        }
    }
}

/// One recorded controller tick. Per-DGU vectors follow the DGU order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub v_dc: Vec<f64>,
    pub i_t: Vec<f64>,
    pub duty: Vec<f64>,
    /// Adaptive contribution in duty units.
    pub u_l1: Vec<f64>,
    pub theta_norm: Vec<f64>,
    pub x_tilde_norm: Vec<f64>,
    pub bus_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DguWindow {
    pub id: NodeId,
    pub connected: bool,
    pub target: f64,
    pub metrics: Option<TransientMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventWindow {
    pub t0: f64,
    pub t1: f64,
    pub events: Vec<String>,
    pub dgus: Vec<DguWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunSummary {
    pub windows: Vec<EventWindow>,
    pub gains: Vec<(NodeId, BaselineGains)>,
    /// Certificates of the connected network after the last topology change.
    pub certificates: Vec<DguCert>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SimOutput {
    pub dgu_ids: Vec<NodeId>,
    pub bus_ids: Vec<NodeId>,
    pub trace: Vec<TraceRecord>,
    pub summary: RunSummary,
}

impl SimOutput {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for id in &self.dgu_ids {
            for c in ["v", "i", "d", "ul1", "theta", "xtilde"] {
                let _ = write!(s, ",{c}_{id}");
            }
        }
        for id in &self.bus_ids {
            let _ = write!(s, ",vbus_{id}");
        }
        s.push('\n');
        for r in &self.trace {
            let _ = write!(s, "{:.8e}", r.t);
            for k in 0..self.dgu_ids.len() {
                for x in [r.v_dc[k], r.i_t[k], r.duty[k], r.u_l1[k], r.theta_norm[k], r.x_tilde_norm[k]] {
                    let _ = write!(s, ",{x:.8e}");
                }
            }
            for x in &r.bus_v {
                let _ = write!(s, ",{x:.8e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn column(&self, id: NodeId) -> Option<(Vec<f64>, Vec<f64>)> {
        let k = self.dgu_ids.iter().position(|&x| x == id)?;
        Some((
            self.trace.iter().map(|r| r.t).collect(),
            self.trace.iter().map(|r| r.v_dc[k]).collect(),
        ))
    }
}

/// Per-DGU controller constants and state.
#[derive(Debug, Clone)]
struct Controller {
    gains: BaselineGains,
    d_op: f64,
    i_op: f64,
    v_design: f64,
    v_ref: f64,
    /// Duty per unit of adaptive output.
    frame_gain: f64,
    z_eq: Vector3<f64>,
    cfg: Option<L1Config>,
    st: ControllerState,
    duty: f64,
    x_tilde_norm: f64,
}

impl Controller {
    fn frame(&self, it: f64, v: f64, xi: f64) -> Vector3<f64> {
        let g = &self.gains;
        Vector3::new(g.k_xi * xi, g.k_v * (v - self.v_design), g.k_i * (it - self.i_op)) - self.z_eq
    }
}

pub struct Simulation {
    scenario: Scenario,
    plant: Plant,
    x: Vec<f64>,
    ctrl: Vec<Controller>,
    /// Connected neighbours of each DGU as (index, equivalent line resistance).
    graph: Vec<Vec<(usize, f64)>>,
    zoh: PredictorZoh,
    certificates: Vec<DguCert>,
    warnings: Vec<String>,
    ws: Workspace,
    alg: Algebraic,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        validate(&scenario)?;
        let (mut plant, design_topo) = match &scenario.network {
            Network::LoadConnected(topo) => (Plant::from_topology(topo, scenario.line_model), topo.clone()),
            Network::Bus { net, .. } => {
                if scenario.line_model == LineModel::Dynamic {
                    return Err(SimError::Config(
                        "bus networks are simulated with line_model = qsl only".into(),
                    ));
                }
                (Plant::from_bus(net), kron_reduce(net)?)
            }
        };
        for id in &scenario.initially_disconnected {
            let k = plant
                .dgus
                .iter()
                .position(|d| d.id == *id)
                .ok_or_else(|| SimError::Config(format!("unknown DGU {id} in initially_disconnected")))?;
            plant.connected[k] = false;
        }
        plant.refresh();

        let settings = &scenario.controller;
        let mut ctrl = Vec::new();
        for d in design_topo.dgus() {
            ctrl.push(design_controller(d, settings)?);
        }
        let n = plant.n_dgu();
        let x = vec![0.0; plant.state_len()];
        let mut sim = Self {
            zoh: PredictorZoh::new(&settings.l1.a_m(), scenario.dt_ctrl),
            scenario,
            plant,
            x,
            ctrl,
            graph: vec![vec![]; n],
            certificates: vec![],
            warnings: vec![],
            ws: Workspace::default(),
            alg: Algebraic::default(),
        };
        sim.initialize_equilibrium()?;
        sim.rebuild_graph();
        sim.recertify();
        Ok(sim)
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn gains(&self) -> Vec<(NodeId, BaselineGains)> {
        self.plant.dgus.iter().zip(&self.ctrl).map(|(d, c)| (d.id, c.gains)).collect()
    }

    pub fn certificates(&self) -> &[DguCert] {
        &self.certificates
    }

    /// Exact steady state with every DGU at its reference.
    fn initialize_equilibrium(&mut self) -> Result<(), SimError> {
        let n = self.plant.n_dgu();
        let v: Vec<f64> = self.ctrl.iter().map(|c| c.v_ref).collect();
        let mut alg = Algebraic::default();
        self.plant.algebraic(0.0, &v, &mut alg);
        let mut inj = vec![0.0; n];
        for (k, br) in self.plant.branches.iter().enumerate() {
            let cur = alg.branch_i[k];
            if br.a < n {
                inj[br.a] += cur;
            }
            if br.b < n {
                inj[br.b] -= cur;
            }
        }
        for k in 0..n {
            let d = &self.plant.dgus[k];
            let i_out = self.plant.load_current(k, v[k], 0.0) - inj[k];
            let disc = d.v_in * d.v_in - 4.0 * d.r_t * v[k] * i_out;
            if disc < 0.0 {
                return Err(SimError::Config(format!(
                    "DGU {} cannot supply {:.1} A at {:.1} V",
                    d.id, i_out, v[k]
                )));
            }
            let it = if d.r_t > 0.0 {
                (d.v_in - disc.sqrt()) / (2.0 * d.r_t)
            } else {
                v[k] * i_out / d.v_in
            };
            let duty = 1.0 - (d.v_in - d.r_t * it) / v[k];
            self.x[k] = it;
            self.x[n + k] = v[k];
            let c = &mut self.ctrl[k];
            let g = c.gains;
            c.st.xi_int =
                -(duty - c.d_op + g.k_i * (it - c.i_op) + g.k_v * (v[k] - c.v_design)) / g.k_xi;
            c.z_eq = Vector3::zeros();
            c.z_eq = c.frame(it, v[k], c.st.xi_int);
            c.duty = duty;
        }
        if self.plant.mode == LineModel::Dynamic {
            for k in 0..self.plant.branches.len() {
                self.x[2 * n + k] = alg.branch_i[k];
            }
        }
        Ok(())
    }

    fn rebuild_graph(&mut self) {
        let n = self.plant.n_dgu();
        let mut graph = vec![vec![]; n];
        match &self.scenario.network {
            Network::LoadConnected(_) => {
                for br in &self.plant.branches {
                    if self.plant.branch_active(br) {
                        graph[br.a].push((br.b, br.r));
                        graph[br.b].push((br.a, br.r));
                    }
                }
            }
            Network::Bus { net, .. } => {
                let keep: Vec<usize> = (0..n).filter(|&k| self.plant.connected[k]).collect();
                let ids: BTreeSet<NodeId> = keep.iter().map(|&k| self.plant.dgus[k].id).collect();
                let mut sub = net.clone();
                sub.dgus.retain(|d| ids.contains(&d.id));
                let nd = n;
                sub.branches = self
                    .plant
                    .branches
                    .iter()
                    .filter(|b| self.plant.branch_active(b))
                    .map(|b| Branch {
                        a: self.node_id(b.a),
                        b: self.node_id(b.b),
                        r: b.r,
                        l: b.l,
                    })
                    .collect();
                for (k, bus) in sub.bus_nodes.iter_mut().enumerate() {
                    bus.load_conductance = self.plant.load_conductance(nd + k);
                }
                if !sub.dgus.is_empty() {
                    match kron_reduce(&sub) {
                        Ok(t) => {
                            for line in t.lines() {
                                let a = self.plant.node_index(line.a).expect("dgu");
                                let b = self.plant.node_index(line.b).expect("dgu");
                                graph[a].push((b, line.r_ij));
                                graph[b].push((a, line.r_ij));
                            }
                        }
                        Err(e) => self
                            .warnings
                            .push(format!("predictor coupling disabled, reduction failed: {e}")),
                    }
                }
            }
        }
        self.graph = graph;
    }

    fn node_id(&self, k: usize) -> NodeId {
        let n = self.plant.n_dgu();
        if k < n {
            self.plant.dgus[k].id
        } else {
            self.plant.interior_ids[k - n]
        }
    }

    /// Re-runs every local certificate for the current coupling graph and
    /// installs the new P matrices.
    fn recertify(&mut self) {
        let l1 = self.scenario.controller.l1.clone();
        let enabled = self.scenario.controller.l1_enabled;
        let n = self.plant.n_dgu();
        let mut certs = std::mem::take(&mut self.certificates);
        certs.resize_with(n, || placeholder_cert());
        for k in 0..n {
            let c_k = self.plant.dgus[k].c_t;
            let couplings: Vec<Matrix3<f64>> = self.graph[k]
                .iter()
                .map(|&(j, r)| coupling_matrix(r, c_k.min(self.plant.dgus[j].c_t)))
                .collect();
            let design = certify_local(self.plant.dgus[k].id, &couplings, &l1);
            if !design.cert.pass && self.plant.connected[k] {
                let msg = format!(
                    "DGU {} certificate failed, adaptive layer {}: {}",
                    design.cert.id,
                    if design.p.is_some() { "kept" } else { "disabled" },
                    design.cert.failures.join("; ")
                );
                if !self.warnings.contains(&msg) {
                    self.warnings.push(msg);
                }
            }
            let ctl = &mut self.ctrl[k];
            ctl.cfg = match (&design.p, enabled) {
                (Some(_), true) => Some(design.l1_config(&l1)),
                _ => None,
            };
            certs[k] = design.cert;
        }
        self.certificates = certs;
    }

    fn controller_tick(&mut self) {
        let n = self.plant.n_dgu();
        let dtc = self.scenario.dt_ctrl;
        let snapshot: Vec<Vector3<f64>> = self.ctrl.iter().map(|c| c.st.x_hat).collect();
        for k in 0..n {
            let (it, v) = (self.x[k], self.x[n + k]);
            let c_k = self.plant.dgus[k].c_t;
            let neighbors: Vec<(Matrix3<f64>, Vector3<f64>)> = self.graph[k]
                .iter()
                .map(|&(j, r)| (coupling_matrix(r, c_k), snapshot[j]))
                .collect();
            let ctl = &mut self.ctrl[k];
            let g = ctl.gains;
            let xi = ctl.st.xi_int;
            let u_bl = -(g.k_i * (it - ctl.i_op) + g.k_v * (v - ctl.v_design) + g.k_xi * xi);
            let mut u_ad = 0.0;
            if let Some(cfg) = ctl.cfg.clone() {
                let z = ctl.frame(it, v, xi);
                let d_hat = g.k_xi * (ctl.v_ref - ctl.v_design);
                let x_pred = ctl.st.x_hat;
                let w = l1::predictor_input(&cfg, &ctl.st, &z, &neighbors, d_hat);
                let x_next = self.zoh.step(&x_pred, &w);
                ctl.st.theta_hat = l1::adaptive_step(&cfg, &ctl.st, &z, &x_pred, dtc);
                ctl.st.x_hat = x_next;
                l1::l1_control(&cfg, &mut ctl.st, dtc);
                ctl.x_tilde_norm = (x_pred - z).norm();
                u_ad = ctl.st.u_l1 / ctl.frame_gain;
            }
            let act = composite_control(u_bl, u_ad, ctl.d_op);
            if !act.saturated {
                ctl.st.xi_int += dtc * (ctl.v_ref - v);
            }
            ctl.st.u_total = u_bl + u_ad;
            ctl.duty = act.duty;
        }
    }

    fn apply_event(&mut self, ev: &SimEvent, t: f64) -> Result<bool, SimError> {
        let n = self.plant.n_dgu();
        let dgu_index = |p: &Plant, id: NodeId| {
            p.dgus
                .iter()
                .position(|d| d.id == id)
                .ok_or_else(|| SimError::Config(format!("event references unknown DGU {id}")))
        };
        let mut touched = false;
        match &ev.kind {
            EventKind::PlugIn { dgu } => {
                let k = dgu_index(&self.plant, *dgu)?;
                if self.plant.connected[k] {
                    return Err(SimError::Config(format!("DGU {dgu} is already connected")));
                }
                self.plant.connected[k] = true;
                if !self.scenario.controller.warm_start {
                    let st = &mut self.ctrl[k].st;
                    st.theta_hat = Vector3::zeros();
                    st.lpf_state = 0.0;
                    st.u_l1 = 0.0;
                }
                touched = true;
            }
            EventKind::PlugOut { dgu } => {
                let k = dgu_index(&self.plant, *dgu)?;
                if !self.plant.connected[k] {
                    return Err(SimError::Config(format!("DGU {dgu} is not connected")));
                }
                self.plant.connected[k] = false;
                touched = true;
            }
            EventKind::LineFault { a, b } | EventKind::LineRestore { a, b } => {
                let fault = matches!(ev.kind, EventKind::LineFault { .. });
                let (ia, ib) = (self.node_index(*a)?, self.node_index(*b)?);
                let idx = self
                    .plant
                    .branches
                    .iter()
                    .position(|br| (br.a, br.b) == (ia, ib) || (br.a, br.b) == (ib, ia))
                    .ok_or_else(|| SimError::Config(format!("no line {a}-{b}")))?;
                let br = &mut self.plant.branches[idx];
                if br.faulted == fault {
                    let state = if fault { "already open" } else { "not faulted" };
                    return Err(SimError::Config(format!("line {a}-{b} is {state}")));
                }
                br.faulted = fault;
                touched = true;
            }
            EventKind::LoadStep { node, power } => {
                if !(power.is_finite() && *power >= 0.0) {
                    return Err(SimError::Config(format!("invalid load power {power}")));
                }
                let k = self.node_index(*node)?;
                let v_nom = if k < n {
                    self.ctrl[k].v_design
                } else {
                    match &self.scenario.network {
                        Network::Bus { v_nom, .. } => *v_nom,
                        Network::LoadConnected(_) => unreachable!(),
                    }
                };
                self.plant.set_load_conductance(k, power / (v_nom * v_nom));
                if k >= n {
                    // Bus loads change the Kron equivalent.
                    touched = true;
                }
            }
            EventKind::RefStep { dgu, v_ref } => {
                let k = dgu_index(&self.plant, *dgu)?;
                let d = &self.plant.dgus[k];
                if !(v_ref.is_finite() && *v_ref > d.v_in) {
                    return Err(SimError::Config(format!("invalid reference {v_ref} V for DGU {dgu}")));
                }
                self.ctrl[k].v_ref = *v_ref;
            }
            EventKind::LoadProfile { node, table } => {
                if !table.is_valid() {
                    return Err(SimError::Config("invalid load table".into()));
                }
                let k = self.node_index(*node)?;
                self.plant.set_profile(k, t, table.clone());
            }
        }
        self.plant.refresh();
        if matches!(
            ev.kind,
            EventKind::LineFault { .. } | EventKind::PlugOut { .. }
        ) && self.plant.mode == LineModel::Dynamic
        {
            // Open lines carry no current.
            let n2 = 2 * n;
            for (k, br) in self.plant.branches.iter().enumerate() {
                if !self.plant.branch_active(br) {
                    self.x[n2 + k] = 0.0;
                }
            }
        }
        Ok(touched)
    }

    fn node_index(&self, id: NodeId) -> Result<usize, SimError> {
        self.plant
            .node_index(id)
            .ok_or_else(|| SimError::Config(format!("event references unknown node {id}")))
    }

    fn record(&mut self, t: f64) -> TraceRecord {
        let n = self.plant.n_dgu();
        self.plant.algebraic(t, &self.x[n..2 * n], &mut self.alg);
        TraceRecord {
            t,
            v_dc: self.x[n..2 * n].to_vec(),
            i_t: self.x[..n].to_vec(),
            duty: self.ctrl.iter().map(|c| c.duty).collect(),
            u_l1: self
                .ctrl
                .iter()
                .map(|c| if c.cfg.is_some() { c.st.u_l1 / c.frame_gain } else { 0.0 })
                .collect(),
            theta_norm: self.ctrl.iter().map(|c| c.st.theta_hat.norm()).collect(),
            x_tilde_norm: self.ctrl.iter().map(|c| c.x_tilde_norm).collect(),
            bus_v: self.alg.interior_v.clone(),
        }
    }

    fn diverged(&self) -> bool {
        let n = self.plant.n_dgu();
        let limit = 5.0 * self.ctrl.iter().map(|c| c.v_ref.max(c.v_design)).fold(0.0, f64::max);
        self.x.iter().any(|x| !x.is_finite()) || self.x[n..2 * n].iter().any(|v| v.abs() > limit)
    }

    /// Runs the scenario to `t_end`.
    pub fn run(mut self) -> Result<SimOutput, SimError> {
        let sc = self.scenario.clone();
        let ratio = (sc.dt_ctrl / sc.dt_plant).round() as usize;
        let steps = (sc.t_end / sc.dt_plant).round() as usize;
        let n = self.plant.n_dgu();
        let mut events = sc.events.clone();
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut next_event = 0;

        let mut out = SimOutput {
            dgu_ids: self.plant.dgus.iter().map(|d| d.id).collect(),
            bus_ids: self.plant.interior_ids.clone(),
            ..Default::default()
        };
        let mut tick_t = Vec::new();
        let mut tick_v: Vec<Vec<f64>> = Vec::new();
        let mut boundaries: Vec<(f64, Vec<String>, Vec<bool>, Vec<f64>)> = Vec::new();
        let mut tick = 0usize;
        if sc.t_end <= 0.0 {
            out.summary = self.summary(vec![]);
            return Ok(out);
        }
        let snapshot = |sim: &Self| {
            (
                sim.plant.connected.clone(),
                sim.ctrl.iter().map(|c| c.v_ref).collect::<Vec<f64>>(),
            )
        };
        let (c0, r0) = snapshot(&self);
        boundaries.push((0.0, vec!["initial".into()], c0, r0));

        for s in 0..=steps {
            let t = s as f64 * sc.dt_plant;
            let mut labels = Vec::new();
            let mut topology_changed = false;
            while next_event < events.len() && events[next_event].t <= t + 0.5 * sc.dt_plant {
                let ev = events[next_event].clone();
                topology_changed |= self.apply_event(&ev, t)?;
                labels.push(ev.label());
                next_event += 1;
            }
            if !labels.is_empty() {
                if topology_changed {
                    self.rebuild_graph();
                    self.recertify();
                }
                let (c, r) = snapshot(&self);
                if boundaries.len() == 1 && tick == 0 && t == 0.0 {
                    boundaries[0] = (0.0, labels, c, r);
                } else {
                    boundaries.push((t, labels, c, r));
                }
            }
            if s % ratio == 0 {
                self.controller_tick();
                tick_t.push(t);
                tick_v.push(self.x[n..2 * n].to_vec());
                if tick % sc.record_every.max(1) == 0 {
                    let rec = self.record(t);
                    out.trace.push(rec);
                }
                tick += 1;
            }
            if s == steps {
                break;
            }
            let duties: Vec<f64> = self.ctrl.iter().map(|c| c.duty).collect();
            let mut x = std::mem::take(&mut self.x);
            self.plant.rk4_step(t, &mut x, &duties, sc.dt_plant, &mut self.ws);
            self.x = x;
            if self.diverged() {
                let t_fail = t + sc.dt_plant;
                out.summary = self.summary(vec![]);
                return Err(SimError::Divergence {
                    t: t_fail,
                    partial: Box::new(out),
                });
            }
        }

        let mut windows = Vec::new();
        for (w, (t0, labels, connected, refs)) in boundaries.iter().enumerate() {
            let t1 = boundaries.get(w + 1).map(|b| b.0).unwrap_or(sc.t_end);
            let lo = tick_t.partition_point(|&x| x < t0 - 1e-12);
            let hi = tick_t.partition_point(|&x| x <= t1 + 1e-12);
            let ts = &tick_t[lo..hi];
            let dgus = (0..n)
                .map(|k| {
                    let vs: Vec<f64> = tick_v[lo..hi].iter().map(|v| v[k]).collect();
                    DguWindow {
                        id: out.dgu_ids[k],
                        connected: connected[k],
                        target: refs[k],
                        metrics: analyze_window(ts, &vs, *t0, refs[k], sc.band_pct).ok(),
                    }
                })
                .collect();
            windows.push(EventWindow {
                t0: *t0,
                t1,
                events: labels.clone(),
                dgus,
            });
        }
        out.summary = self.summary(windows);
        Ok(out)
    }

    fn summary(&self, windows: Vec<EventWindow>) -> RunSummary {
        RunSummary {
            windows,
            gains: self.gains(),
            certificates: self.certificates.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

fn placeholder_cert() -> DguCert {
    DguCert {
        id: 0,
        n_neighbors: 0,
        xi_sq: 0.0,
        epsilon: 0.0,
        gamma: 0.0,
        gamma_threshold: 0.0,
        are_residual: None,
        p_min_eigenvalue: None,
        lambda: 0.0,
        theta_max: 0.0,
        pass_distance: false,
        pass_are: false,
        pass_l1: false,
        pass: false,
        failures: vec![],
    }
}

/// Baseline gains and frame constants for one DGU from its design parameters.
fn design_controller(d: &DguParams, settings: &ControllerSettings) -> Result<Controller, SimError> {
    let op = compute_operating_point(d)?;
    let d_nom = settings.d_nom.get(&d.id).copied().unwrap_or(op.duty);
    let model = baseline::nominal_model(&settings.nominal, d_nom, d.v_ref, d.p_load);
    let gains = match &settings.design {
        BaselineDesign::Lqi { q, r } => {
            baseline::synth_lqi(&model, &Matrix3::from_diagonal(&Vector3::from(*q)), *r)
        }
        BaselineDesign::Poles { poles } => {
            let p = poles.map(|[re, im]| Complex::new(re, im));
            baseline::synth_pole_place(&model, &p)
        }
    }
    .map_err(|source| SimError::Baseline { id: d.id, source })?;
    Ok(Controller {
        gains,
        d_op: op.duty,
        i_op: op.i_t_bar,
        v_design: d.v_ref,
        v_ref: d.v_ref,
        frame_gain: gains.k_i * d.v_ref / settings.nominal.l_t,
        z_eq: Vector3::zeros(),
        cfg: None,
        st: ControllerState::default(),
        duty: op.duty,
        x_tilde_norm: 0.0,
    })
}

fn validate(sc: &Scenario) -> Result<(), SimError> {
    let bad = |m: String| Err(SimError::Config(m));
    if !(sc.dt_plant > 0.0 && sc.dt_ctrl > 0.0) || !sc.dt_plant.is_finite() || !sc.dt_ctrl.is_finite() {
        return bad("time steps must be positive".into());
    }
    let ratio = (sc.dt_ctrl / sc.dt_plant).round();
    if ratio < 1.0 || (ratio * sc.dt_plant - sc.dt_ctrl).abs() > 1e-9 * sc.dt_ctrl {
        return bad("dt_ctrl must be an integer multiple of dt_plant".into());
    }
    if !(sc.t_end >= 0.0 && sc.t_end.is_finite()) {
        return bad(format!("invalid t_end {}", sc.t_end));
    }
    if !(sc.band_pct > 0.0) {
        return bad("band_pct must be positive".into());
    }
    for ev in &sc.events {
        if !(ev.t >= 0.0 && ev.t <= sc.t_end) {
            return bad(format!("event '{}' at t = {} outside [0, t_end]", ev.label(), ev.t));
        }
    }
    if let Network::Bus { net, v_nom } = &sc.network {
        net.validate()?;
        if !(*v_nom > 0.0) {
            return bad("bus v_nom must be positive".into());
        }
    }
    if sc.controller.l1_enabled && sc.controller.l1.gamma <= 0.0 {
        return bad("adaptation gain must be positive".into());
    }
    Ok(())
}

pub fn run(scenario: Scenario) -> Result<SimOutput, SimError> {
    Simulation::new(scenario)?.run()
}
