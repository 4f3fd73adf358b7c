//! Built-in reference cases.

use alloc::vec;
use alloc::vec::Vec;

use crate::case::{BranchRecord, BusKind, BusRecord, GenRecord, GridCase};

/// Generator at bus 1 with `V = 1`, load at bus 2, one line of reactance
/// 0.25 p.u. (susceptance 4). `shunt_b` and `q_demand` sit on the load bus.
pub fn two_bus(shunt_b: f64, q_demand: f64) -> GridCase {
    GridCase {
        base_mva: 100.0,
        buses: vec![
            BusRecord {
                id: 1,
                kind: BusKind::Generator,
                p_demand: 0.0,
                q_demand: 0.0,
                shunt_b: 0.0,
                v_setpoint: 1.0,
            },
            BusRecord {
                id: 2,
                kind: BusKind::Load,
                p_demand: 0.0,
                q_demand,
                shunt_b,
                v_setpoint: 1.0,
            },
        ],
        branches: vec![BranchRecord {
            from: 1,
            to: 2,
            reactance_x: 0.25,
            charging_b: 0.0,
        }],
        gens: vec![GenRecord {
            bus: 1,
            p_gen: 0.0,
            v_setpoint: 1.0,
        }],
    }
}

/// The IEEE 30-bus test system, lossless. Demand at generator buses is
/// folded into that generator's active output and its reactive part is
/// dropped, the same way the MATPOWER reader treats it.
pub fn ieee30() -> GridCase {
    let base = 100.0;
    let mut gens: Vec<GenRecord> = IEEE30_GENS
        .iter()
        .map(|&(bus, pg, vg)| GenRecord {
            bus,
            p_gen: pg / base,
            v_setpoint: vg,
        })
        .collect();
    let buses = IEEE30_BUSES
        .iter()
        .map(|&(id, kind, pd, qd, bs)| {
            let gen_vg = IEEE30_GENS.iter().find(|g| g.0 == id).map(|g| g.2);
            match gen_vg {
                Some(vg) => {
                    if let Some(g) = gens.iter_mut().find(|g| g.bus == id) {
                        g.p_gen -= pd / base;
                    }
                    BusRecord {
                        id,
                        kind: BusKind::Generator,
                        p_demand: 0.0,
                        q_demand: 0.0,
                        shunt_b: bs / base,
                        v_setpoint: vg,
                    }
                }
                None => {
                    debug_assert_eq!(kind, 1);
                    BusRecord {
                        id,
                        kind: BusKind::Load,
                        p_demand: pd / base,
                        q_demand: qd / base,
                        shunt_b: bs / base,
                        v_setpoint: 1.0,
                    }
                }
            }
        })
        .collect();
    let branches = IEEE30_BRANCHES
        .iter()
        .map(|&(from, to, x, b)| BranchRecord {
            from,
            to,
            reactance_x: x,
            charging_b: b,
        })
        .collect();
    GridCase {
        base_mva: base,
        buses,
        branches,
        gens,
    }
}

/// Bus ids of the six controllable compensators used in the online
/// experiments (load-bus ordinals 1, 10, 15, 22, 23 and 24).
pub const IEEE30_COMPENSATOR_BUSES: [u32; 6] = [3, 16, 21, 28, 29, 30];

/// `(id, matpower type, Pd MW, Qd MVAr, Bs MVAr at 1 p.u.)`
const IEEE30_BUSES: [(u32, u8, f64, f64, f64); 30] = [
    (1, 3, 0.0, 0.0, 0.0),
    (2, 2, 21.7, 12.7, 0.0),
    (3, 1, 2.4, 1.2, 0.0),
    (4, 1, 7.6, 1.6, 0.0),
    (5, 2, 94.2, 19.0, 0.0),
    (6, 1, 0.0, 0.0, 0.0),
    (7, 1, 22.8, 10.9, 0.0),
    (8, 2, 30.0, 30.0, 0.0),
    (9, 1, 0.0, 0.0, 0.0),
    (10, 1, 5.8, 2.0, 19.0),
    (11, 2, 0.0, 0.0, 0.0),
    (12, 1, 11.2, 7.5, 0.0),
    (13, 2, 0.0, 0.0, 0.0),
    (14, 1, 6.2, 1.6, 0.0),
    (15, 1, 8.2, 2.5, 0.0),
    (16, 1, 3.5, 1.8, 0.0),
    (17, 1, 9.0, 5.8, 0.0),
    (18, 1, 3.2, 0.9, 0.0),
    (19, 1, 9.5, 3.4, 0.0),
    (20, 1, 2.2, 0.7, 0.0),
    (21, 1, 17.5, 11.2, 0.0),
    (22, 1, 0.0, 0.0, 0.0),
    (23, 1, 3.2, 1.6, 0.0),
    (24, 1, 8.7, 6.7, 4.3),
    (25, 1, 0.0, 0.0, 0.0),
    (26, 1, 3.5, 2.3, 0.0),
    (27, 1, 0.0, 0.0, 0.0),
    (28, 1, 0.0, 0.0, 0.0),
    (29, 1, 2.4, 0.9, 0.0),
    (30, 1, 10.6, 1.9, 0.0),
];

/// `(bus, Pg MW, Vg p.u.)`
const IEEE30_GENS: [(u32, f64, f64); 6] = [
    (1, 260.2, 1.06),
    (2, 40.0, 1.045),
    (5, 0.0, 1.01),
    (8, 0.0, 1.01),
    (11, 0.0, 1.082),
    (13, 0.0, 1.071),
];

/// `(from, to, x p.u., b p.u.)`; resistances and tap ratios are dropped.
const IEEE30_BRANCHES: [(u32, u32, f64, f64); 41] = [
    (1, 2, 0.0575, 0.0528),
    (1, 3, 0.1652, 0.0408),
    (2, 4, 0.1737, 0.0368),
    (3, 4, 0.0379, 0.0084),
    (2, 5, 0.1983, 0.0418),
    (2, 6, 0.1763, 0.0374),
    (4, 6, 0.0414, 0.009),
    (5, 7, 0.116, 0.0204),
    (6, 7, 0.082, 0.017),
    (6, 8, 0.042, 0.009),
    (6, 9, 0.208, 0.0),
    (6, 10, 0.556, 0.0),
    (9, 11, 0.208, 0.0),
    (9, 10, 0.11, 0.0),
    (4, 12, 0.256, 0.0),
    (12, 13, 0.14, 0.0),
    (12, 14, 0.2559, 0.0),
    (12, 15, 0.1304, 0.0),
    (12, 16, 0.1987, 0.0),
    (14, 15, 0.1997, 0.0),
    (16, 17, 0.1923, 0.0),
    (15, 18, 0.2185, 0.0),
    (18, 19, 0.1292, 0.0),
    (19, 20, 0.068, 0.0),
    (10, 20, 0.209, 0.0),
    (10, 17, 0.0845, 0.0),
    (10, 21, 0.0749, 0.0),
    (10, 22, 0.1499, 0.0),
    (21, 22, 0.0236, 0.0),
    (15, 23, 0.202, 0.0),
    (22, 24, 0.179, 0.0),
    (23, 24, 0.27, 0.0),
    (24, 25, 0.3292, 0.0),
    (25, 26, 0.38, 0.0),
    (25, 27, 0.2087, 0.0),
    (28, 27, 0.396, 0.0),
    (27, 29, 0.4153, 0.0),
    (27, 30, 0.6027, 0.0),
    (29, 30, 0.4533, 0.0),
    (8, 28, 0.2, 0.0428),
    (6, 28, 0.0599, 0.013),
];
