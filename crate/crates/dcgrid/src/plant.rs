//! Averaged nonlinear boost-converter network and its fixed-step integrator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::grid::{BusNetwork, DguParams, MicrogridTopology, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LineModel {
    #[default]
    Dynamic,
    Qsl,
}

/// Piecewise-linear current table, times relative to the activating event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadTable {
    pub times: Vec<f64>,
    pub currents: Vec<f64>,
}

impl LoadTable {
    pub fn eval(&self, tau: f64) -> f64 {
        let (t, c) = (&self.times, &self.currents);
        if t.is_empty() {
            return 0.0;
        }
        if tau <= t[0] {
            return c[0];
        }
        let k = t.partition_point(|&x| x <= tau);
        if k >= t.len() {
            return c[c.len() - 1];
        }
        let (t0, t1) = (t[k - 1], t[k]);
        c[k - 1] + (c[k] - c[k - 1]) * (tau - t0) / (t1 - t0)
    }

    pub fn is_valid(&self) -> bool {
        !self.times.is_empty()
            && self.times.len() == self.currents.len()
            && self.times.windows(2).all(|w| w[1] > w[0])
            && self.currents.iter().chain(&self.times).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Profile {
    start: f64,
    table: LoadTable,
}

#[derive(Debug, Clone, PartialEq)]
struct NodeLoad {
    conductance: f64,
    constant_current: f64,
    profile: Option<Profile>,
}

impl NodeLoad {
    fn current(&self, v: f64, t: f64) -> f64 {
        let extra = match &self.profile {
            Some(p) if t >= p.start => p.table.eval(t - p.start),
            _ => 0.0,
        };
        self.conductance * v + self.constant_current + extra
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantBranch {
    /// Node indices: DGUs first, then interior nodes.
    pub a: usize,
    pub b: usize,
    pub r: f64,
    pub l: f64,
    pub faulted: bool,
}

/// Node voltages and branch currents that are algebraic in the state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Algebraic {
    pub interior_v: Vec<f64>,
    pub branch_i: Vec<f64>,
    rhs: Vec<f64>,
    inj: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub mode: LineModel,
    pub dgus: Vec<DguParams>,
    /// Disconnected DGUs keep supplying their local load in island mode.
    pub connected: Vec<bool>,
    pub interior_ids: Vec<NodeId>,
    pub branches: Vec<PlantBranch>,
    loads: Vec<NodeLoad>,
    interior_inv: Option<DMatrix<f64>>,
    live_interior: Vec<usize>,
}

impl Plant {
    pub fn from_topology(topo: &MicrogridTopology, mode: LineModel) -> Self {
        let dgus = topo.dgus().to_vec();
        let branches = topo
            .lines()
            .iter()
            .map(|l| PlantBranch {
                a: topo.index_of(l.a).expect("validated"),
                b: topo.index_of(l.b).expect("validated"),
                r: l.r_ij,
                l: l.l_ij,
                faulted: false,
            })
            .collect();
        let loads = dgus.iter().map(local_load).collect();
        let mut p = Self {
            mode,
            connected: vec![true; dgus.len()],
            dgus,
            interior_ids: vec![],
            branches,
            loads,
            interior_inv: None,
            live_interior: vec![],
        };
        p.refresh();
        p
    }

    /// Bus networks always use algebraic branches.
    pub fn from_bus(net: &BusNetwork) -> Self {
        let dgus = net.dgus.clone();
        let ids = net.node_ids();
        let pos = |id: NodeId| ids.iter().position(|&x| x == id).expect("validated");
        let branches = net
            .branches
            .iter()
            .map(|b| PlantBranch {
                a: pos(b.a),
                b: pos(b.b),
                r: b.r,
                l: b.l,
                faulted: false,
            })
            .collect();
        let mut loads: Vec<NodeLoad> = dgus.iter().map(local_load).collect();
        loads.extend(net.bus_nodes.iter().map(|b| NodeLoad {
            conductance: b.load_conductance,
            constant_current: b.load_current,
            profile: None,
        }));
        let mut p = Self {
            mode: LineModel::Qsl,
            connected: vec![true; dgus.len()],
            dgus,
            interior_ids: net.bus_nodes.iter().map(|b| b.id).collect(),
            branches,
            loads,
            interior_inv: None,
            live_interior: vec![],
        };
        p.refresh();
        p
    }

    pub fn n_dgu(&self) -> usize {
        self.dgus.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.dgus.len() + self.interior_ids.len()
    }

    pub fn state_len(&self) -> usize {
        2 * self.n_dgu() + self.n_line_states()
    }

    pub fn n_line_states(&self) -> usize {
        match self.mode {
            LineModel::Dynamic => self.branches.len(),
            LineModel::Qsl => 0,
        }
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.dgus
            .iter()
            .map(|d| d.id)
            .chain(self.interior_ids.iter().copied())
            .position(|x| x == id)
    }

    fn node_active(&self, k: usize) -> bool {
        k >= self.n_dgu() || self.connected[k]
    }

    pub fn branch_active(&self, b: &PlantBranch) -> bool {
        !b.faulted && self.node_active(b.a) && self.node_active(b.b)
    }

    pub fn set_load_conductance(&mut self, node: usize, g: f64) {
        self.loads[node].conductance = g;
        self.refresh();
    }

    pub fn load_conductance(&self, node: usize) -> f64 {
        self.loads[node].conductance
    }

    pub fn set_profile(&mut self, node: usize, start: f64, table: LoadTable) {
        self.loads[node].profile = Some(Profile { start, table });
    }

    /// Recomputes the interior nodal solve after any topology or load change.
    pub fn refresh(&mut self) {
        let nd = self.n_dgu();
        let m = self.interior_ids.len();
        if m == 0 {
            self.interior_inv = None;
            self.live_interior.clear();
            return;
        }
        let mut g = DMatrix::zeros(m, m);
        for k in 0..m {
            g[(k, k)] = self.loads[nd + k].conductance;
        }
        for br in &self.branches {
            if !self.branch_active(br) {
                continue;
            }
            let y = 1.0 / br.r;
            match (br.a.checked_sub(nd), br.b.checked_sub(nd)) {
                (Some(i), Some(j)) => {
                    g[(i, i)] += y;
                    g[(j, j)] += y;
                    g[(i, j)] -= y;
                    g[(j, i)] -= y;
                }
                (Some(i), None) | (None, Some(i)) => g[(i, i)] += y,
                (None, None) => {}
            }
        }
        self.live_interior = (0..m).filter(|&k| g[(k, k)] > 0.0).collect();
        let live = &self.live_interior;
        let sub = DMatrix::from_fn(live.len(), live.len(), |i, j| g[(live[i], live[j])]);
        self.interior_inv = sub.try_inverse();
    }

    /// Interior node voltages and (QSL) branch currents for node voltages `v`.
    pub fn algebraic(&self, t: f64, v: &[f64], out: &mut Algebraic) {
        let nd = self.n_dgu();
        let m = self.interior_ids.len();
        out.interior_v.clear();
        out.interior_v.resize(m, 0.0);
        if let Some(inv) = &self.interior_inv {
            let live = &self.live_interior;
            let rhs = &mut out.rhs;
            rhs.clear();
            rhs.resize(live.len(), 0.0);
            for (r, &k) in live.iter().enumerate() {
                let load = &self.loads[nd + k];
                rhs[r] = -(load.current(0.0, t));
            }
            for br in &self.branches {
                if !self.branch_active(br) {
                    continue;
                }
                let y = 1.0 / br.r;
                for (node, other) in [(br.a, br.b), (br.b, br.a)] {
                    if node >= nd && other < nd {
                        if let Some(r) = live.iter().position(|&k| k == node - nd) {
                            rhs[r] += y * v[other];
                        }
                    }
                }
            }
            for (r, &k) in live.iter().enumerate() {
                out.interior_v[k] = (0..live.len()).map(|c| inv[(r, c)] * rhs[c]).sum();
            }
        }
        out.branch_i.clear();
        for br in &self.branches {
            let i = if self.branch_active(br) {
                let vb = self.node_voltage(br.b, v, &out.interior_v);
                let va = self.node_voltage(br.a, v, &out.interior_v);
                (vb - va) / br.r
            } else {
                0.0
            };
            out.branch_i.push(i);
        }
    }

    fn node_voltage(&self, k: usize, v: &[f64], interior: &[f64]) -> f64 {
        if k < self.n_dgu() {
            v[k]
        } else {
            interior[k - self.n_dgu()]
        }
    }

    /// Time derivative of x = [i_t, v_dc, i_line] for frozen `duties`.
    ///
    /// Line current k flows from node b into node a, so
    /// L dI/dt = V_b − R I − V_a.
    pub fn derivatives(&self, t: f64, x: &[f64], duties: &[f64], alg: &mut Algebraic, dx: &mut [f64]) {
        let n = self.n_dgu();
        let (it, rest) = x.split_at(n);
        let (v, il) = rest.split_at(n);
        self.algebraic(t, v, alg);
        dx.iter_mut().for_each(|d| *d = 0.0);
        let mut inj = std::mem::take(&mut alg.inj);
        inj.clear();
        inj.resize(n, 0.0);
        for (k, br) in self.branches.iter().enumerate() {
            if !self.branch_active(br) {
                continue;
            }
            let cur = match self.mode {
                LineModel::Dynamic => il[k],
                LineModel::Qsl => alg.branch_i[k],
            };
            if br.a < n {
                inj[br.a] += cur;
            }
            if br.b < n {
                inj[br.b] -= cur;
            }
            if self.mode == LineModel::Dynamic {
                let va = self.node_voltage(br.a, v, &alg.interior_v);
                let vb = self.node_voltage(br.b, v, &alg.interior_v);
                dx[2 * n + k] = (vb - br.r * il[k] - va) / br.l;
            }
        }
        for k in 0..n {
            let d = &self.dgus[k];
            let m = 1.0 - duties[k];
            dx[k] = (d.v_in - m * v[k] - d.r_t * it[k]) / d.l_t;
            let i_load = self.loads[k].current(v[k], t);
            dx[n + k] = (m * it[k] + inj[k] - i_load) / d.c_t;
        }
        alg.inj = inj;
    }

    pub fn rk4_step(&self, t: f64, x: &mut [f64], duties: &[f64], dt: f64, ws: &mut Workspace) {
        let len = x.len();
        ws.ensure(len);
        let Workspace { k1, k2, k3, k4, tmp, alg } = ws;
        self.derivatives(t, x, duties, alg, k1);
        for i in 0..len {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        self.derivatives(t + 0.5 * dt, tmp, duties, alg, k2);
        for i in 0..len {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        self.derivatives(t + 0.5 * dt, tmp, duties, alg, k3);
        for i in 0..len {
            tmp[i] = x[i] + dt * k3[i];
        }
        self.derivatives(t + dt, tmp, duties, alg, k4);
        for i in 0..len {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    /// Current drawn by the local load of DGU `k` at voltage `v`.
    pub fn load_current(&self, k: usize, v: f64, t: f64) -> f64 {
        self.loads[k].current(v, t)
    }

    /// Total resistive dissipation (W) for state `x`.
    pub fn dissipation(&self, t: f64, x: &[f64]) -> f64 {
        let n = self.n_dgu();
        let mut alg = Algebraic::default();
        self.algebraic(t, &x[n..2 * n], &mut alg);
        let mut p = 0.0;
        for k in 0..n {
            p += self.dgus[k].r_t * x[k] * x[k] + self.loads[k].conductance * x[n + k] * x[n + k];
        }
        for (k, br) in self.branches.iter().enumerate() {
            if self.branch_active(br) {
                let i = match self.mode {
                    LineModel::Dynamic => x[2 * n + k],
                    LineModel::Qsl => alg.branch_i[k],
                };
                p += br.r * i * i;
            }
        }
        for (k, &v) in alg.interior_v.iter().enumerate() {
            p += self.loads[n + k].conductance * v * v;
        }
        p
    }
}

fn local_load(d: &DguParams) -> NodeLoad {
    NodeLoad {
        conductance: d.p_load / (d.v_ref * d.v_ref),
        constant_current: 0.0,
        profile: None,
    }
}

/// Scratch buffers for the RK4 stages.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    alg: Algebraic,
}

impl Workspace {
    fn ensure(&mut self, len: usize) {
        for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            v.resize(len, 0.0);
        }
    }
}

/// Classical fourth-order Runge–Kutta step for ẋ = f(t, x).
pub fn rk4_step<F>(f: F, t: f64, x: &mut [f64], dt: f64)
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = x.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    f(t, x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    f(t + 0.5 * dt, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    f(t + 0.5 * dt, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    f(t + dt, &tmp, &mut k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}
