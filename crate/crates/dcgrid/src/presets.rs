//! Reference six-DGU network and the scenarios built on it.

use std::collections::BTreeMap;

use crate::grid::{Branch, BusNetwork, BusNode, DguParams, LineParams, MicrogridTopology, NodeId};
use crate::plant::{LineModel, LoadTable};
use crate::sim::{ControllerSettings, EventKind, Network, Scenario, SimEvent};

pub const SWITCHING_FREQUENCY: f64 = 25e3;
pub const RATED_POWER: f64 = 5e3;

/// (v_in, v_ref, L_t, C_t, R_t, P_load) per DGU.
const DGU_DATA: [(f64, f64, f64, f64, f64, f64); 6] = [
    (95.0, 381.0, 28.47e-6, 37.632e-6, 0.02, 2500.0),
    (100.0, 380.5, 89.62e-6, 51.67e-6, 0.04, 2000.0),
    (90.0, 380.2, 192.5e-6, 40.73e-6, 0.02, 1800.0),
    (105.0, 379.0, 70e-6, 37e-6, 0.2, 2500.0),
    (92.0, 379.5, 35e-6, 31e-6, 0.4, 3000.0),
    (90.0, 380.7, 93.34e-6, 24.66e-6, 0.5, 2500.0),
];

/// (i, j, R, L) of the seven distribution lines.
const LINE_DATA: [(NodeId, NodeId, f64, f64); 7] = [
    (1, 2, 0.5, 10e-6),
    (1, 3, 2.0, 70e-6),
    (1, 6, 10.0, 800e-6),
    (2, 4, 4.0, 70e-6),
    (3, 4, 4.0, 70e-6),
    (4, 5, 15.0, 25e-6),
    (5, 6, 4.0, 90e-6),
];

pub fn dgus() -> Vec<DguParams> {
    DGU_DATA
        .iter()
        .enumerate()
        .map(|(k, &(v_in, v_ref, l_t, c_t, r_t, p_load))| DguParams {
            id: k as NodeId + 1,
            v_in,
            r_t,
            l_t,
            c_t,
            p_rated: RATED_POWER,
            p_load,
            v_ref,
            f_s: SWITCHING_FREQUENCY,
        })
        .collect()
}

pub fn lines() -> Vec<LineParams> {
    LINE_DATA
        .iter()
        .map(|&(i, j, r, l)| LineParams::new(i, j, r, l).expect("valid line"))
        .collect()
}

pub fn topology() -> MicrogridTopology {
    MicrogridTopology::new(dgus(), lines()).expect("valid topology")
}

/// Nominal baseline duties: 0.7368 everywhere except DGU 4.
pub fn nominal_duties() -> BTreeMap<NodeId, f64> {
    (1..=6).map(|id| (id, if id == 4 { 0.723 } else { 0.7368 })).collect()
}

pub fn controller() -> ControllerSettings {
    ControllerSettings {
        d_nom: nominal_duties(),
        ..Default::default()
    }
}

fn ev(t: f64, kind: EventKind) -> SimEvent {
    SimEvent { t, kind }
}

/// DGU 6 plugs in, two lines fault, DGU 6 sheds load, DGU 5 changes reference.
pub fn plug_and_play(line_model: LineModel) -> Scenario {
    let mut sc = Scenario::new(Network::LoadConnected(topology()));
    sc.line_model = line_model;
    sc.controller = controller();
    sc.t_end = 0.5;
    sc.initially_disconnected = vec![6];
    sc.events = vec![
        ev(0.05, EventKind::PlugIn { dgu: 6 }),
        ev(0.15, EventKind::LineFault { a: 1, b: 3 }),
        ev(0.15, EventKind::LineFault { a: 1, b: 6 }),
        ev(0.3, EventKind::LoadStep { node: 6, power: 800.0 }),
        ev(0.4, EventKind::RefStep { dgu: 5, v_ref: 377.0 }),
    ];
    sc
}

pub const BUS_ID: NodeId = 7;
pub const BUS_VOLTAGE: f64 = 380.0;

/// All six DGUs feed one common load bus through short cables.
pub fn bus_network() -> BusNetwork {
    let r = [0.2, 0.25, 0.3, 0.2, 0.35, 0.25];
    let l = [30e-6, 40e-6, 50e-6, 30e-6, 60e-6, 40e-6];
    let dgus = dgus()
        .into_iter()
        .map(|d| DguParams {
            v_ref: BUS_VOLTAGE,
            p_load: 0.0,
            ..d
        })
        .collect();
    BusNetwork {
        dgus,
        bus_nodes: vec![BusNode {
            id: BUS_ID,
            load_conductance: 15e3 / (BUS_VOLTAGE * BUS_VOLTAGE),
            load_current: 0.0,
        }],
        branches: (0..6)
            .map(|k| Branch {
                a: k as NodeId + 1,
                b: BUS_ID,
                r: r[k],
                l: l[k],
            })
            .collect(),
    }
}

/// Motor start: 25 A inrush decaying to 10 A with a 15 ms time constant.
pub fn motor_table() -> LoadTable {
    let times: Vec<f64> = (0..=200).map(|k| k as f64 * 5e-4).collect();
    let currents = times.iter().map(|t| 10.0 + 15.0 * (-t / 0.015).exp()).collect();
    LoadTable { times, currents }
}

pub fn bus_scenario() -> Scenario {
    let mut sc = Scenario::new(Network::Bus {
        net: bus_network(),
        v_nom: BUS_VOLTAGE,
    });
    sc.line_model = LineModel::Qsl;
    sc.controller = controller();
    sc.t_end = 0.4;
    sc.initially_disconnected = vec![6];
    sc.events = vec![
        ev(
            0.01,
            EventKind::LoadProfile {
                node: BUS_ID,
                table: motor_table(),
            },
        ),
        ev(0.1, EventKind::PlugIn { dgu: 6 }),
        ev(0.2, EventKind::PlugOut { dgu: 3 }),
        ev(0.3, EventKind::LoadStep { node: BUS_ID, power: 18e3 }),
    ];
    sc
}
