//! The native TOML case format.
//!
//! ```toml
//! base_mva = 1.0000000000000000e2
//!
//! [[buses]]
//! id = 1
//! kind = "generator"
//! p_demand = 0.0000000000000000e0
//! q_demand = 0.0000000000000000e0
//! shunt_b = 0.0000000000000000e0
//! v_setpoint = 1.0000000000000000e0
//!
//! [[branches]]
//! from = 1
//! to = 2
//! reactance_x = 2.5000000000000000e-1
//! charging_b = 0.0000000000000000e0
//!
//! [[gens]]
//! bus = 1
//! p_gen = 0.0000000000000000e0
//! v_setpoint = 1.0000000000000000e0
//! ```
//!
//! All quantities are per-unit on `base_mva`. `q_demand` is consumption,
//! so the reactive injection seen by the model is its negative.

use std::fmt::Write;

use serde::Deserialize;
use vstress_core::{BranchRecord, BusKind, BusRecord, GenRecord, GridCase};

use crate::error::CaseError;
use crate::fmt::num;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    base_mva: f64,
    buses: Vec<Bus>,
    #[serde(default)]
    branches: Vec<Branch>,
    #[serde(default)]
    gens: Vec<Gen>,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Load,
    Generator,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Bus {
    id: u32,
    kind: Kind,
    p_demand: f64,
    q_demand: f64,
    shunt_b: f64,
    v_setpoint: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Branch {
    from: u32,
    to: u32,
    reactance_x: f64,
    charging_b: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Gen {
    bus: u32,
    p_gen: f64,
    v_setpoint: f64,
}

/// Parses and validates a native case document.
pub fn parse_native_case(text: &str) -> Result<GridCase, CaseError> {
    let doc: Doc = toml::from_str(text).map_err(|e| CaseError::Malformed(e.to_string()))?;
    let case = GridCase {
        base_mva: doc.base_mva,
        buses: doc
            .buses
            .into_iter()
            .map(|b| BusRecord {
                id: b.id,
                kind: match b.kind {
                    Kind::Load => BusKind::Load,
                    Kind::Generator => BusKind::Generator,
                },
                p_demand: b.p_demand,
                q_demand: b.q_demand,
                shunt_b: b.shunt_b,
                v_setpoint: b.v_setpoint,
            })
            .collect(),
        branches: doc
            .branches
            .into_iter()
            .map(|b| BranchRecord {
                from: b.from,
                to: b.to,
                reactance_x: b.reactance_x,
                charging_b: b.charging_b,
            })
            .collect(),
        gens: doc
            .gens
            .into_iter()
            .map(|g| GenRecord {
                bus: g.bus,
                p_gen: g.p_gen,
                v_setpoint: g.v_setpoint,
            })
            .collect(),
    };
    case.validate()?;
    Ok(case)
}

/// Renders any case, valid or not, with every number at 17 significant
/// digits so that parsing the text restores the exact values.
pub fn write_native_case(case: &GridCase) -> String {
    let mut s = String::new();
    // writing into a String cannot fail
    let _ = writeln!(s, "base_mva = {}", toml_num(case.base_mva));
    for b in &case.buses {
        let kind = match b.kind {
            BusKind::Load => "load",
            BusKind::Generator => "generator",
        };
        let _ = write!(
            s,
            "\n[[buses]]\nid = {}\nkind = \"{kind}\"\np_demand = {}\nq_demand = {}\nshunt_b = {}\nv_setpoint = {}\n",
            b.id,
            toml_num(b.p_demand),
            toml_num(b.q_demand),
            toml_num(b.shunt_b),
            toml_num(b.v_setpoint)
        );
    }
    for br in &case.branches {
        let _ = write!(
            s,
            "\n[[branches]]\nfrom = {}\nto = {}\nreactance_x = {}\ncharging_b = {}\n",
            br.from,
            br.to,
            toml_num(br.reactance_x),
            toml_num(br.charging_b)
        );
    }
    for g in &case.gens {
        let _ = write!(
            s,
            "\n[[gens]]\nbus = {}\np_gen = {}\nv_setpoint = {}\n",
            g.bus,
            toml_num(g.p_gen),
            toml_num(g.v_setpoint)
        );
    }
    s
}

fn toml_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        num(v)
    }
}
