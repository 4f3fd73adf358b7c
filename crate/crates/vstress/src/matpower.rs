//! Reader for the subset of MATPOWER `.m` case files used by the model.
//!
//! Only `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch` are read.
//! Extra columns are accepted and ignored.

use std::collections::BTreeMap;

use vstress_core::{BranchRecord, BusKind, BusRecord, Error, GenRecord, GridCase};

use crate::error::CaseError;

const BUS_COLUMNS: usize = 13;
const GEN_COLUMNS: usize = 10;
const BRANCH_COLUMNS: usize = 11;

/// Resistance-to-reactance ratio above which the lossless model is flagged.
pub const LOSSY_RATIO: f64 = 0.25;

// column indices, MATPOWER order
const BUS_I: usize = 0;
const BUS_TYPE: usize = 1;
const PD: usize = 2;
const QD: usize = 3;
const GS: usize = 4;
const BS: usize = 5;
const VM: usize = 7;
const GEN_BUS: usize = 0;
const PG: usize = 1;
const VG: usize = 5;
const GEN_STATUS: usize = 7;
const F_BUS: usize = 0;
const T_BUS: usize = 1;
const BR_R: usize = 2;
const BR_X: usize = 3;
const BR_B: usize = 4;
const TAP: usize = 8;
const SHIFT: usize = 9;
const BR_STATUS: usize = 10;

/// A parsed case together with the modelling warnings raised on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct MatpowerCase {
    pub case: GridCase,
    pub warnings: Vec<String>,
}

/// Parses MATPOWER case text and validates the result. Warnings are sent
/// to the `log` facade.
pub fn parse_matpower_case(text: &str) -> Result<GridCase, CaseError> {
    let parsed = parse_matpower_report(text)?;
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    Ok(parsed.case)
}

/// Same as [`parse_matpower_case`] but hands the warnings back instead of
/// logging them.
pub fn parse_matpower_report(text: &str) -> Result<MatpowerCase, CaseError> {
    let clean = strip_comments(text);
    let base = scalar(&clean, "baseMVA")?;
    let bus = matrix(&clean, "bus", BUS_COLUMNS)?;
    let gen = matrix(&clean, "gen", GEN_COLUMNS)?;
    let branch = matrix(&clean, "branch", BRANCH_COLUMNS)?;
    let mut warnings = Vec::new();

    // in-service generators per bus, in file order
    let mut gens_at: BTreeMap<u32, Vec<&Vec<f64>>> = BTreeMap::new();
    for (k, row) in gen.iter().enumerate() {
        if row[GEN_STATUS] > 0.0 {
            let id = bus_id(row[GEN_BUS], "gen", k)?;
            gens_at.entry(id).or_default().push(row);
        }
    }

    let mut buses = Vec::with_capacity(bus.len());
    let mut gens = Vec::new();
    let mut isolated = Vec::new();
    for (k, row) in bus.iter().enumerate() {
        let id = bus_id(row[BUS_I], "bus", k)?;
        let kind = match row[BUS_TYPE] {
            1.0 => 1,
            2.0 => 2,
            3.0 => 3,
            4.0 => {
                isolated.push(id);
                continue;
            }
            t => {
                return Err(CaseError::Malformed(format!(
                    "bus row {}: unknown bus type {t}",
                    k + 1
                )))
            }
        };
        if row[GS] != 0.0 {
            warnings.push(format!(
                "bus {id}: shunt conductance {} MW ignored (lossless model)",
                row[GS]
            ));
        }
        let shunt_b = row[BS] / base;
        let here = gens_at.get(&id);
        let regulated = kind == 3 || (kind == 2 && here.is_some());
        if kind == 2 && here.is_none() {
            warnings.push(format!(
                "bus {id}: type 2 without an in-service generator, treated as a load bus"
            ));
        }
        if kind == 1 && here.is_some() {
            warnings.push(format!("bus {id}: generator on a type 1 bus ignored"));
        }
        if !regulated {
            buses.push(BusRecord {
                id,
                kind: BusKind::Load,
                p_demand: row[PD] / base,
                q_demand: row[QD] / base,
                shunt_b,
                v_setpoint: if row[VM] > 0.0 { row[VM] } else { 1.0 },
            });
            continue;
        }
        let mut local: Vec<GenRecord> = match here {
            Some(rows) => rows
                .iter()
                .map(|g| GenRecord {
                    bus: id,
                    p_gen: g[PG] / base,
                    v_setpoint: g[VG],
                })
                .collect(),
            None => {
                warnings.push(format!(
                    "bus {id}: reference bus without an in-service generator, using Vm {}",
                    row[VM]
                ));
                vec![GenRecord {
                    bus: id,
                    p_gen: 0.0,
                    v_setpoint: row[VM],
                }]
            }
        };
        if local.iter().any(|g| g.v_setpoint != local[0].v_setpoint) {
            warnings.push(format!(
                "bus {id}: generators disagree on the voltage set-point, using {}",
                local[0].v_setpoint
            ));
        }
        if row[PD] != 0.0 || row[QD] != 0.0 {
            warnings.push(format!(
                "bus {id}: demand ({} MW, {} MVAr) at a voltage-regulated bus; active part folded into generation, reactive part ignored",
                row[PD], row[QD]
            ));
            local[0].p_gen -= row[PD] / base;
        }
        buses.push(BusRecord {
            id,
            kind: BusKind::Generator,
            p_demand: 0.0,
            q_demand: 0.0,
            shunt_b,
            v_setpoint: local[0].v_setpoint,
        });
        gens.extend(local);
    }
    if !isolated.is_empty() {
        warnings.push(format!("isolated buses skipped: {isolated:?}"));
    }

    let mut branches: Vec<BranchRecord> = Vec::with_capacity(branch.len());
    let mut slot: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut merged = Vec::new();
    let mut lossy = Vec::new();
    let mut tapped = Vec::new();
    for (k, row) in branch.iter().enumerate() {
        if row[BR_STATUS] <= 0.0 {
            continue;
        }
        let from = bus_id(row[F_BUS], "branch", k)?;
        let to = bus_id(row[T_BUS], "branch", k)?;
        if isolated.contains(&from) || isolated.contains(&to) {
            warnings.push(format!("branch {from}-{to} touches an isolated bus, skipped"));
            continue;
        }
        let x = row[BR_X];
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::InvalidTopology(format!(
                "branch {from}-{to} has non-positive reactance {x}"
            ))
            .into());
        }
        if row[BR_R].abs() > LOSSY_RATIO * x {
            lossy.push((from, to));
        }
        if (row[TAP] != 0.0 && row[TAP] != 1.0) || row[SHIFT] != 0.0 {
            tapped.push((from, to));
        }
        let key = (from.min(to), from.max(to));
        match slot.get(&key) {
            Some(&i) => {
                let b = &mut branches[i];
                b.reactance_x = 1.0 / (1.0 / b.reactance_x + 1.0 / x);
                b.charging_b += row[BR_B];
                merged.push(key);
            }
            None => {
                slot.insert(key, branches.len());
                branches.push(BranchRecord {
                    from,
                    to,
                    reactance_x: x,
                    charging_b: row[BR_B],
                });
            }
        }
    }
    if !merged.is_empty() {
        warnings.push(format!("parallel branches merged: {merged:?}"));
    }
    if !lossy.is_empty() {
        warnings.push(format!(
            "r/x above {LOSSY_RATIO} on {} branches {:?}; the lossless model may be inaccurate",
            lossy.len(),
            lossy
        ));
    }
    if !tapped.is_empty() {
        warnings.push(format!(
            "off-nominal taps or phase shifts ignored on branches {tapped:?}"
        ));
    }

    let case = GridCase {
        base_mva: base,
        buses,
        branches,
        gens,
    };
    case.validate()?;
    Ok(MatpowerCase { case, warnings })
}

fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        out.push_str(line.split('%').next().unwrap_or(""));
        out.push('\n');
    }
    out
}

/// Text right after `mpc.<name> =`, if the assignment exists.
fn assignment<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    let key = format!("mpc.{name}");
    let mut from = 0;
    while let Some(pos) = text[from..].find(&key) {
        let start = from + pos;
        let rest = text[start + key.len()..].trim_start();
        let word_start = start == 0
            || !text[..start]
                .chars()
                .next_back()
                .is_some_and(|c| c.is_alphanumeric() || c == '_');
        if word_start {
            if let Some(value) = rest.strip_prefix('=') {
                return Some(value);
            }
        }
        from = start + key.len();
    }
    None
}

fn scalar(text: &str, name: &str) -> Result<f64, CaseError> {
    let value = assignment(text, name)
        .ok_or_else(|| CaseError::Malformed(format!("missing mpc.{name}")))?;
    let token = value
        .split([';', '\n'])
        .next()
        .unwrap_or("")
        .trim();
    token
        .parse()
        .map_err(|_| CaseError::Malformed(format!("mpc.{name}: '{token}' is not a number")))
}

fn matrix(text: &str, name: &str, min_columns: usize) -> Result<Vec<Vec<f64>>, CaseError> {
    let value = assignment(text, name)
        .ok_or_else(|| CaseError::Malformed(format!("missing mpc.{name}")))?
        .trim_start();
    let body = value
        .strip_prefix('[')
        .ok_or_else(|| CaseError::Malformed(format!("mpc.{name} is not a bracketed matrix")))?;
    let end = body
        .find(']')
        .ok_or_else(|| CaseError::Malformed(format!("mpc.{name}: missing closing bracket")))?;
    let mut rows = Vec::new();
    for raw in body[..end].split([';', '\n']) {
        let tokens: Vec<&str> = raw
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            continue;
        }
        let row = tokens
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    CaseError::Malformed(format!(
                        "mpc.{name} row {}: '{t}' is not a number",
                        rows.len() + 1
                    ))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CaseError::Malformed(format!("mpc.{name} is empty")));
    }
    let width = rows[0].len();
    for (k, row) in rows.iter().enumerate() {
        if row.len() != width || width < min_columns {
            return Err(CaseError::Malformed(format!(
                "mpc.{name} row {}: {} columns, expected {} (at least {min_columns})",
                k + 1,
                row.len(),
                width.max(min_columns)
            )));
        }
    }
    Ok(rows)
}

fn bus_id(v: f64, table: &str, row: usize) -> Result<u32, CaseError> {
    if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(CaseError::Malformed(format!(
            "mpc.{table} row {}: bus number {v} is not a positive integer",
            row + 1
        )))
    }
}
