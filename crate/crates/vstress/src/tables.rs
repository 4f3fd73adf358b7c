//! CSV input and output: load schedules, capacity files and result tables.
//!
//! Input tables use the units of MATPOWER files (MW, MVAr) and are
//! converted with the case base power.

use std::path::Path;

use serde::Deserialize;
use vstress_core::controller::{LoadProfile, Schedule};
use vstress_core::{GridCase, NetworkModel};

use crate::error::AppError;

/// Writes a header and rows as CSV.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), AppError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let out = |source: std::io::Error| AppError::Output {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| out(e.into()))?;
    w.write_record(header).map_err(|e| out(e.into()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| out(e.into()))?;
    }
    w.flush().map_err(out)
}

#[derive(Debug, Deserialize)]
struct ScheduleRow {
    t: usize,
    bus_id: u32,
    p_demand: Option<f64>,
    q_demand: Option<f64>,
}

/// Reads a schedule of demand overrides with columns
/// `t, bus_id, p_demand, q_demand` (MW, MVAr, consumption positive).
/// An override holds until the same bus is overridden again; an empty
/// cell keeps the current value.
pub fn parse_schedule(text: &str, case: &GridCase, model: &NetworkModel) -> Result<Schedule, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (k, rec) in rdr.deserialize::<ScheduleRow>().enumerate() {
        let row = rec.map_err(|e| format!("row {}: {e}", k + 1))?;
        let finite = row.p_demand.is_none_or(f64::is_finite) && row.q_demand.is_none_or(f64::is_finite);
        if !finite {
            return Err(format!("row {}: non-finite demand", k + 1));
        }
        if model.load_index(row.bus_id).is_none() {
            return Err(format!("row {}: bus {} is not a load bus", k + 1, row.bus_id));
        }
        rows.push(row);
    }
    rows.sort_by_key(|r| r.t);
    let base = case.base_mva;
    let mut profile = LoadProfile::from_case(case);
    let mut segments = vec![(0, profile.clone())];
    let mut k = 0;
    while k < rows.len() {
        let t = rows[k].t;
        while k < rows.len() && rows[k].t == t {
            let i = model.load_index(rows[k].bus_id).expect("checked above");
            if let Some(p) = rows[k].p_demand {
                profile.p_load[i] = -(p / base);
            }
            if let Some(q) = rows[k].q_demand {
                profile.q_load[i] = -(q / base);
            }
            k += 1;
        }
        segments.push((t, profile.clone()));
    }
    Schedule::from_segments(segments).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
struct CapacityRow {
    bus_id: u32,
    q_min: f64,
    q_max: f64,
}

/// Reads injection limits with columns `bus_id, q_min, q_max` (MVAr).
/// Load buses that are not listed get a zero box.
pub fn parse_capacities(text: &str, case: &GridCase, model: &NetworkModel) -> Result<(Vec<f64>, Vec<f64>), String> {
    let n = model.n_load();
    let (mut lo, mut hi) = (vec![0.0; n], vec![0.0; n]);
    let mut seen = vec![false; n];
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    for (k, rec) in rdr.deserialize::<CapacityRow>().enumerate() {
        let row = rec.map_err(|e| format!("row {}: {e}", k + 1))?;
        let i = model
            .load_index(row.bus_id)
            .ok_or_else(|| format!("row {}: bus {} is not a load bus", k + 1, row.bus_id))?;
        if seen[i] {
            return Err(format!("row {}: bus {} listed twice", k + 1, row.bus_id));
        }
        if !(row.q_min <= row.q_max) {
            return Err(format!("row {}: q_min {} exceeds q_max {}", k + 1, row.q_min, row.q_max));
        }
        seen[i] = true;
        lo[i] = row.q_min / case.base_mva;
        hi[i] = row.q_max / case.base_mva;
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vstress_core::cases::ieee30;

    #[test]
    fn overrides_are_sticky() {
        let case = ieee30();
        let m = case.model().unwrap();
        let text = "t,bus_id,p_demand,q_demand\n10,3,,5\n20,4,10,\n10,30,1,1\n";
        let s = parse_schedule(text, &case, &m).unwrap();
        assert_eq!(s.segments().len(), 3);
        let (i3, i4) = (m.load_index(3).unwrap(), m.load_index(4).unwrap());
        let base = LoadProfile::from_case(&case);
        assert_eq!(s.at(5), &base);
        assert_eq!(s.at(15).q_load[i3], -0.05);
        assert_eq!(s.at(15).p_load[i3], base.p_load[i3]);
        assert_eq!(s.at(25).q_load[i3], -0.05);
        assert_eq!(s.at(25).p_load[i4], -0.1);
        assert_eq!(s.at(25).q_load[i4], base.q_load[i4]);
    }

    #[test]
    fn generator_bus_rejected() {
        let case = ieee30();
        let m = case.model().unwrap();
        assert!(parse_schedule("t,bus_id,p_demand,q_demand\n0,2,1,1\n", &case, &m).is_err());
        assert!(parse_capacities("bus_id,q_min,q_max\n1,-1,1\n", &case, &m).is_err());
    }

    #[test]
    fn capacities_in_per_unit() {
        let case = ieee30();
        let m = case.model().unwrap();
        let (lo, hi) = parse_capacities("bus_id,q_min,q_max\n30,-5,10\n", &case, &m).unwrap();
        let i = m.load_index(30).unwrap();
        assert_eq!((lo[i], hi[i]), (-0.05, 0.1));
        assert_eq!(hi.iter().filter(|v| **v != 0.0).count(), 1);
    }
}
