//! Microgrid topology, operating points, small-signal models and Kron reduction.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, Matrix2, Matrix3, RowVector2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("DGU {id}: {msg}")]
    InvalidDgu { id: NodeId, msg: String },
    #[error("line {a}-{b}: {msg}")]
    InvalidLine { a: NodeId, b: NodeId, msg: String },
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("network is disconnected: node {0} cannot reach node {1}")]
    Disconnected(NodeId, NodeId),
    #[error("network has no DGU node")]
    NoDgu,
    #[error("singular elimination at interior node {0}")]
    SingularElimination(NodeId),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Electrical constants of one boost-converter DGU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DguParams {
    pub id: NodeId,
    pub v_in: f64,
    pub r_t: f64,
    pub l_t: f64,
    pub c_t: f64,
    pub p_rated: f64,
    pub p_load: f64,
    pub v_ref: f64,
    pub f_s: f64,
}

impl DguParams {
    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |msg: &str| {
            Err(GridError::InvalidDgu {
                id: self.id,
                msg: msg.to_string(),
            })
        };
        let all = [
            self.v_in, self.r_t, self.l_t, self.c_t, self.p_rated, self.p_load, self.v_ref, self.f_s,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.v_in <= 0.0 {
            return bad("v_in must be positive");
        }
        if self.v_in >= self.v_ref {
            return bad("boost equilibrium needs v_in < v_ref");
        }
        if self.l_t <= 0.0 || self.c_t <= 0.0 {
            return bad("l_t and c_t must be positive");
        }
        if self.r_t < 0.0 {
            return bad("r_t must be non-negative");
        }
        if self.p_load < 0.0 {
            return bad("p_load must be non-negative");
        }
        Ok(())
    }
}

/// A resistive-inductive line. Endpoints are stored in ascending order so
/// (i, j) and (j, i) are the same object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub a: NodeId,
    pub b: NodeId,
    pub r_ij: f64,
    pub l_ij: f64,
}

impl LineParams {
    pub fn new(i: NodeId, j: NodeId, r_ij: f64, l_ij: f64) -> Result<Self, GridError> {
        let bad = |msg: &str| {
            Err(GridError::InvalidLine {
                a: i,
                b: j,
                msg: msg.to_string(),
            })
        };
        if i == j {
            return bad("endpoints must differ");
        }
        if !(r_ij > 0.0) || !r_ij.is_finite() {
            return bad("resistance must be positive");
        }
        if !(l_ij >= 0.0) || !l_ij.is_finite() {
            return bad("inductance must be non-negative");
        }
        Ok(Self {
            a: i.min(j),
            b: i.max(j),
            r_ij,
            l_ij,
        })
    }

    pub fn endpoints(&self) -> (NodeId, NodeId) {
        (self.a, self.b)
    }

    pub fn connects(&self, i: NodeId, j: NodeId) -> bool {
        (self.a, self.b) == (i.min(j), i.max(j))
    }

    pub fn other(&self, id: NodeId) -> Option<NodeId> {
        if id == self.a {
            Some(self.b)
        } else if id == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

/// Load-connected microgrid: every DGU feeds a local load at its PCC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridTopology {
    dgus: Vec<DguParams>,
    lines: Vec<LineParams>,
}

impl MicrogridTopology {
    pub fn new(dgus: Vec<DguParams>, lines: Vec<LineParams>) -> Result<Self, GridError> {
        let mut ids = BTreeSet::new();
        for d in &dgus {
            d.validate()?;
            if !ids.insert(d.id) {
                return Err(GridError::DuplicateNode(d.id));
            }
        }
        let mut seen = BTreeSet::new();
        for l in &lines {
            let l = LineParams::new(l.a, l.b, l.r_ij, l.l_ij)?;
            for e in [l.a, l.b] {
                if !ids.contains(&e) {
                    return Err(GridError::UnknownNode(e));
                }
            }
            if !seen.insert(l.endpoints()) {
                return Err(GridError::InvalidLine {
                    a: l.a,
                    b: l.b,
                    msg: "duplicate line".into(),
                });
            }
        }
        let lines = lines
            .into_iter()
            .map(|l| LineParams::new(l.a, l.b, l.r_ij, l.l_ij))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { dgus, lines })
    }

    pub fn dgus(&self) -> &[DguParams] {
        &self.dgus
    }

    pub fn lines(&self) -> &[LineParams] {
        &self.lines
    }

    pub fn dgu(&self, id: NodeId) -> Option<&DguParams> {
        self.dgus.iter().find(|d| d.id == id)
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.dgus.iter().position(|d| d.id == id)
    }

    pub fn line(&self, i: NodeId, j: NodeId) -> Option<&LineParams> {
        self.lines.iter().find(|l| l.connects(i, j))
    }

    pub fn neighbor_map(&self) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
        let mut map: BTreeMap<NodeId, BTreeSet<NodeId>> =
            self.dgus.iter().map(|d| (d.id, BTreeSet::new())).collect();
        for l in &self.lines {
            map.entry(l.a).or_default().insert(l.b);
            map.entry(l.b).or_default().insert(l.a);
        }
        map
    }

    /// Lines incident to `id`, paired with the DGU on the far end.
    pub fn neighbors(&self, id: NodeId) -> Vec<(LineParams, DguParams)> {
        self.lines
            .iter()
            .filter_map(|l| {
                let j = l.other(id)?;
                self.dgu(j).map(|d| (l.clone(), d.clone()))
            })
            .collect()
    }

    /// Copy with only the listed DGUs and the lines between them.
    pub fn restricted(&self, keep: &BTreeSet<NodeId>) -> Self {
        Self {
            dgus: self
                .dgus
                .iter()
                .filter(|d| keep.contains(&d.id))
                .cloned()
                .collect(),
            lines: self
                .lines
                .iter()
                .filter(|l| keep.contains(&l.a) && keep.contains(&l.b))
                .cloned()
                .collect(),
        }
    }

    pub fn without_lines(&self, removed: &[(NodeId, NodeId)]) -> Self {
        Self {
            dgus: self.dgus.clone(),
            lines: self
                .lines
                .iter()
                .filter(|l| !removed.iter().any(|&(i, j)| l.connects(i, j)))
                .cloned()
                .collect(),
        }
    }

    pub fn with_dgu(&self, dgu: DguParams, lines: Vec<LineParams>) -> Result<Self, GridError> {
        let mut d = self.dgus.clone();
        d.push(dgu);
        let mut l = self.lines.clone();
        l.extend(lines);
        Self::new(d, l)
    }

    /// Nodal conductance matrix of the line graph plus `shunt` on the diagonal.
    pub fn conductance_matrix(&self, shunt: &[f64]) -> DMatrix<f64> {
        let n = self.dgus.len();
        let mut y = DMatrix::zeros(n, n);
        for l in &self.lines {
            let (i, j) = (
                self.index_of(l.a).expect("validated"),
                self.index_of(l.b).expect("validated"),
            );
            let g = 1.0 / l.r_ij;
            y[(i, i)] += g;
            y[(j, j)] += g;
            y[(i, j)] -= g;
            y[(j, i)] -= g;
        }
        for (k, s) in shunt.iter().enumerate().take(n) {
            y[(k, k)] += s;
        }
        y
    }
}

/// Steady-state equilibrium of a lossless boost DGU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub duty: f64,
    pub i_t_bar: f64,
    pub v_dc_bar: f64,
    pub r_load_equiv: f64,
}

pub fn compute_operating_point(dgu: &DguParams) -> Result<OperatingPoint, GridError> {
    dgu.validate()?;
    let duty = 1.0 - dgu.v_in / dgu.v_ref;
    let r_load_equiv = if dgu.p_load > 0.0 {
        dgu.v_ref * dgu.v_ref / dgu.p_load
    } else {
        f64::INFINITY
    };
    let i_t_bar = if r_load_equiv.is_finite() {
        dgu.v_in / ((1.0 - duty).powi(2) * r_load_equiv)
    } else {
        0.0
    };
    Ok(OperatingPoint {
        duty,
        i_t_bar,
        v_dc_bar: dgu.v_ref,
        r_load_equiv,
    })
}

/// Linearized DGU model, state [ĩ_t, ṽ_dc], augmented with ξ̇ = v_ref − v_dc.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallSignalModel {
    pub a_ii: Matrix2<f64>,
    pub b_i: Vector2<f64>,
    pub e_i: Vector2<f64>,
    pub c_i: RowVector2<f64>,
    pub a_ii_aug: Matrix3<f64>,
    pub b_i_aug: Vector3<f64>,
    pub a_ij_aug: BTreeMap<NodeId, Matrix3<f64>>,
}

/// Index of the voltage state in the physical and augmented state vectors.
pub const V_IDX: usize = 1;

pub fn coupling_matrix(r_ij: f64, c_ti: f64) -> Matrix3<f64> {
    let mut a = Matrix3::zeros();
    a[(V_IDX, V_IDX)] = 1.0 / (r_ij * c_ti);
    a
}

pub fn linearize(
    dgu: &DguParams,
    op: &OperatingPoint,
    neighbors: &[(LineParams, DguParams)],
) -> SmallSignalModel {
    let m = 1.0 - op.duty;
    let coupling: f64 = neighbors.iter().map(|(l, _)| 1.0 / (l.r_ij * dgu.c_t)).sum();
    let a_ii = Matrix2::new(
        -dgu.r_t / dgu.l_t,
        -m / dgu.l_t,
        m / dgu.c_t,
        -coupling,
    );
    let b_i = Vector2::new(op.v_dc_bar / dgu.l_t, -op.i_t_bar / dgu.c_t);
    let e_i = Vector2::new(0.0, -1.0 / dgu.c_t);
    let c_i = RowVector2::new(0.0, 1.0);
    let mut a_ii_aug = Matrix3::zeros();
    a_ii_aug.fixed_view_mut::<2, 2>(0, 0).copy_from(&a_ii);
    a_ii_aug[(2, 1)] = -1.0;
    let b_i_aug = Vector3::new(b_i[0], b_i[1], 0.0);
    let a_ij_aug = neighbors
        .iter()
        .map(|(l, d)| (d.id, coupling_matrix(l.r_ij, dgu.c_t)))
        .collect();
    SmallSignalModel {
        a_ii,
        b_i,
        e_i,
        c_i,
        a_ii_aug,
        b_i_aug,
        a_ij_aug,
    }
}

/// Linearize every DGU of a topology about its own operating point.
pub fn linearize_all(topo: &MicrogridTopology) -> Result<Vec<SmallSignalModel>, GridError> {
    topo.dgus()
        .iter()
        .map(|d| {
            let op = compute_operating_point(d)?;
            Ok(linearize(d, &op, &topo.neighbors(d.id)))
        })
        .collect()
}

/// Global closed-loop matrix with A_ii − B_i K_i on the diagonal blocks and
/// A_ij off the diagonal. `gains[i]` is ordered as the augmented state.
pub fn assemble_global(
    topo: &MicrogridTopology,
    models: &[SmallSignalModel],
    gains: &[Vector3<f64>],
) -> Result<DMatrix<f64>, GridError> {
    let n = topo.dgus().len();
    if models.len() != n || gains.len() != n {
        return Err(GridError::Dimension(format!(
            "{} DGUs, {} models, {} gain sets",
            n,
            models.len(),
            gains.len()
        )));
    }
    let mut a = DMatrix::zeros(3 * n, 3 * n);
    for (k, (m, g)) in models.iter().zip(gains).enumerate() {
        let cl = m.a_ii_aug - m.b_i_aug * g.transpose();
        a.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&cl);
        for (j, aij) in &m.a_ij_aug {
            let col = topo.index_of(*j).ok_or(GridError::UnknownNode(*j))?;
            a.view_mut((3 * k, 3 * col), (3, 3)).copy_from(aij);
        }
    }
    Ok(a)
}

// ---------------------------------------------------------------------------
// Bus-connected networks and Kron reduction
// ---------------------------------------------------------------------------

/// Interior (non-DGU) node with a passive load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusNode {
    pub id: NodeId,
    /// Shunt load conductance (S).
    pub load_conductance: f64,
    /// Constant current drawn from the node (A).
    pub load_current: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub a: NodeId,
    pub b: NodeId,
    pub r: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusNetwork {
    pub dgus: Vec<DguParams>,
    pub bus_nodes: Vec<BusNode>,
    pub branches: Vec<Branch>,
}

impl BusNetwork {
    /// All node ids, DGUs first then interior nodes.
    pub fn node_ids(&self) -> Vec<NodeId> {
        self.dgus
            .iter()
            .map(|d| d.id)
            .chain(self.bus_nodes.iter().map(|b| b.id))
            .collect()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.dgus.is_empty() {
            return Err(GridError::NoDgu);
        }
        let mut ids = BTreeSet::new();
        for d in &self.dgus {
            d.validate()?;
            if !ids.insert(d.id) {
                return Err(GridError::DuplicateNode(d.id));
            }
        }
        for b in &self.bus_nodes {
            if !ids.insert(b.id) {
                return Err(GridError::DuplicateNode(b.id));
            }
            if !(b.load_conductance >= 0.0) || !b.load_current.is_finite() {
                return Err(GridError::InvalidLine {
                    a: b.id,
                    b: b.id,
                    msg: "bus load must be finite with non-negative conductance".into(),
                });
            }
        }
        for br in &self.branches {
            if br.a == br.b {
                return Err(GridError::InvalidLine {
                    a: br.a,
                    b: br.b,
                    msg: "self loop".into(),
                });
            }
            for e in [br.a, br.b] {
                if !ids.contains(&e) {
                    return Err(GridError::UnknownNode(e));
                }
            }
            if !(br.r > 0.0) || !br.r.is_finite() {
                return Err(GridError::SingularElimination(br.a.max(br.b)));
            }
            if !(br.l >= 0.0) {
                return Err(GridError::InvalidLine {
                    a: br.a,
                    b: br.b,
                    msg: "inductance must be non-negative".into(),
                });
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let ids = self.node_ids();
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = ids.iter().map(|&i| (i, vec![])).collect();
        for br in &self.branches {
            adj.get_mut(&br.a).expect("validated").push(br.b);
            adj.get_mut(&br.b).expect("validated").push(br.a);
        }
        let mut seen = BTreeSet::from([ids[0]]);
        let mut stack = vec![ids[0]];
        while let Some(n) = stack.pop() {
            for &m in &adj[&n] {
                if seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        match ids.iter().find(|i| !seen.contains(i)) {
            Some(&missing) => Err(GridError::Disconnected(ids[0], missing)),
            None => Ok(()),
        }
    }

    /// Full nodal conductance matrix over `node_ids()` order, bus loads on the diagonal.
    pub fn nodal_matrix(&self) -> DMatrix<f64> {
        let ids = self.node_ids();
        let pos = |id: NodeId| ids.iter().position(|&x| x == id).expect("validated");
        let n = ids.len();
        let mut y = DMatrix::zeros(n, n);
        for br in &self.branches {
            let (i, j, g) = (pos(br.a), pos(br.b), 1.0 / br.r);
            y[(i, i)] += g;
            y[(j, j)] += g;
            y[(i, j)] -= g;
            y[(j, i)] -= g;
        }
        let nd = self.dgus.len();
        for (k, b) in self.bus_nodes.iter().enumerate() {
            y[(nd + k, nd + k)] += b.load_conductance;
        }
        y
    }
}

/// Result of eliminating every interior node.
#[derive(Debug, Clone, PartialEq)]
pub struct KronReduction {
    /// Load-connected equivalent; referred loads folded into `p_load` at `v_ref`.
    pub topology: MicrogridTopology,
    /// Reduced nodal conductance matrix over the DGU nodes.
    pub y_reduced: DMatrix<f64>,
    /// Equivalent shunt conductance referred to each DGU PCC (S).
    pub shunt: Vec<f64>,
    /// Equivalent current drawn at each DGU PCC (A).
    pub drawn_current: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    g: f64,
    tau: f64,
}

pub fn kron_reduce(net: &BusNetwork) -> Result<MicrogridTopology, GridError> {
    kron_reduce_detailed(net).map(|k| k.topology)
}

/// Star-mesh elimination of interior nodes, one at a time. The conductance
/// part is exactly the Schur complement of the nodal matrix.
pub fn kron_reduce_detailed(net: &BusNetwork) -> Result<KronReduction, GridError> {
    net.validate()?;
    let mut edges: BTreeMap<(NodeId, NodeId), Edge> = BTreeMap::new();
    let key = |i: NodeId, j: NodeId| (i.min(j), i.max(j));
    let merge = |edges: &mut BTreeMap<(NodeId, NodeId), Edge>, k: (NodeId, NodeId), e: Edge| {
        edges
            .entry(k)
            .and_modify(|old| {
                let dom = if e.g > old.g { e.tau } else { old.tau };
                *old = Edge {
                    g: old.g + e.g,
                    tau: dom,
                };
            })
            .or_insert(e);
    };
    for br in &net.branches {
        merge(
            &mut edges,
            key(br.a, br.b),
            Edge {
                g: 1.0 / br.r,
                tau: br.l / br.r,
            },
        );
    }
    let mut shunt: BTreeMap<NodeId, f64> = net.node_ids().into_iter().map(|i| (i, 0.0)).collect();
    let mut drawn = shunt.clone();
    for b in &net.bus_nodes {
        shunt.insert(b.id, b.load_conductance);
        drawn.insert(b.id, b.load_current);
    }

    for b in &net.bus_nodes {
        let k = b.id;
        let star: Vec<(NodeId, Edge)> = edges
            .iter()
            .filter_map(|(&(i, j), &e)| {
                if i == k {
                    Some((j, e))
                } else if j == k {
                    Some((i, e))
                } else {
                    None
                }
            })
            .collect();
        edges.retain(|&(i, j), _| i != k && j != k);
        let (gk, ik) = (shunt[&k], drawn[&k]);
        let total: f64 = star.iter().map(|(_, e)| e.g).sum::<f64>() + gk;
        if !(total > 0.0) {
            if ik != 0.0 {
                return Err(GridError::SingularElimination(k));
            }
            continue;
        }
        for (a, &(i, ei)) in star.iter().enumerate() {
            *shunt.get_mut(&i).expect("node") += ei.g * gk / total;
            *drawn.get_mut(&i).expect("node") += ei.g / total * ik;
            for &(j, ej) in &star[a + 1..] {
                let g = ei.g * ej.g / total;
                let tau = (ei.tau / ei.g + ej.tau / ej.g) / (1.0 / ei.g + 1.0 / ej.g);
                merge(&mut edges, key(i, j), Edge { g, tau });
            }
        }
        shunt.remove(&k);
        drawn.remove(&k);
    }

    let mut lines = Vec::new();
    for (&(i, j), e) in &edges {
        let r = 1.0 / e.g;
        lines.push(LineParams::new(i, j, r, e.tau * r)?);
    }
    let shunt_v: Vec<f64> = net.dgus.iter().map(|d| shunt[&d.id]).collect();
    let drawn_v: Vec<f64> = net.dgus.iter().map(|d| drawn[&d.id]).collect();
    let dgus: Vec<DguParams> = net
        .dgus
        .iter()
        .zip(shunt_v.iter().zip(&drawn_v))
        .map(|(d, (&g, &i))| DguParams {
            p_load: d.p_load + d.v_ref * d.v_ref * g + d.v_ref * i,
            ..d.clone()
        })
        .collect();
    let topology = MicrogridTopology::new(dgus, lines)?;
    let y_reduced = topology.conductance_matrix(&shunt_v);
    Ok(KronReduction {
        topology,
        y_reduced,
        shunt: shunt_v,
        drawn_current: drawn_v,
    })
}

/// Dense Schur complement Y_DD − Y_DI Y_II⁻¹ Y_ID of the full nodal matrix.
pub fn schur_complement(net: &BusNetwork) -> Option<DMatrix<f64>> {
    let y = net.nodal_matrix();
    let nd = net.dgus.len();
    let ni = net.bus_nodes.len();
    let ydd = y.view((0, 0), (nd, nd)).into_owned();
    if ni == 0 {
        return Some(ydd);
    }
    let ydi = y.view((0, nd), (nd, ni)).into_owned();
    let yid = y.view((nd, 0), (ni, nd)).into_owned();
    let yii = y.view((nd, nd), (ni, ni)).into_owned();
    let x = yii.lu().solve(&yid)?;
    Some(ydd - ydi * x)
}
