//! Grid case data in per-unit, independent of any file format.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    /// Power-regulated (PQ) bus.
    Load,
    /// Voltage-regulated (PV or slack) bus.
    Generator,
}

/// One bus. Demands are consumption in per-unit (positive = absorbed);
/// the reactive injection used by the model is `-q_demand`.
#[derive(Debug, Clone, PartialEq)]
pub struct BusRecord {
    pub id: u32,
    pub kind: BusKind,
    pub p_demand: f64,
    pub q_demand: f64,
    /// Shunt susceptance to ground (p.u.), positive for capacitors.
    pub shunt_b: f64,
    pub v_setpoint: f64,
}

impl BusRecord {
    pub fn q_injection(&self) -> f64 {
        -self.q_demand
    }

    pub fn p_injection(&self) -> f64 {
        -self.p_demand
    }
}

/// A lossless line: only the series reactance and total charging are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub from: u32,
    pub to: u32,
    pub reactance_x: f64,
    pub charging_b: f64,
}

impl BranchRecord {
    pub fn susceptance(&self) -> f64 {
        1.0 / self.reactance_x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRecord {
    pub bus: u32,
    /// Scheduled active injection (p.u.).
    pub p_gen: f64,
    pub v_setpoint: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub gens: Vec<GenRecord>,
}

impl GridCase {
    /// Checks every structural invariant. Parsers call this before
    /// returning a case; writers do not.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return Err(Error::InvalidTopology(format!(
                "base_mva must be positive, got {}",
                self.base_mva
            )));
        }
        let mut kinds = BTreeMap::new();
        for bus in &self.buses {
            if kinds.insert(bus.id, bus.kind).is_some() {
                return Err(Error::InvalidTopology(format!(
                    "duplicate bus id {}",
                    bus.id
                )));
            }
            let finite =
                bus.p_demand.is_finite() && bus.q_demand.is_finite() && bus.shunt_b.is_finite();
            if !finite {
                return Err(Error::InvalidTopology(format!(
                    "bus {} has non-finite data",
                    bus.id
                )));
            }
            if !(bus.v_setpoint.is_finite() && bus.v_setpoint > 0.0) {
                return Err(Error::InvalidTopology(format!(
                    "bus {} has non-positive voltage set-point {}",
                    bus.id, bus.v_setpoint
                )));
            }
        }
        if !kinds.values().any(|k| *k == BusKind::Generator) {
            return Err(Error::InvalidTopology("case has no generator bus".into()));
        }
        let mut pairs = BTreeSet::new();
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !kinds.contains_key(&end) {
                    return Err(Error::InvalidTopology(format!(
                        "branch {}-{} references unknown bus {}",
                        br.from, br.to, end
                    )));
                }
            }
            if br.from == br.to {
                return Err(Error::InvalidTopology(format!(
                    "branch {}-{} is a self loop",
                    br.from, br.to
                )));
            }
            if !(br.reactance_x.is_finite() && br.reactance_x > 0.0) || !br.charging_b.is_finite() {
                return Err(Error::InvalidTopology(format!(
                    "branch {}-{} has invalid reactance {}",
                    br.from, br.to, br.reactance_x
                )));
            }
            let key = (br.from.min(br.to), br.from.max(br.to));
            if !pairs.insert(key) {
                return Err(Error::InvalidTopology(format!(
                    "duplicate branch between buses {} and {}",
                    key.0, key.1
                )));
            }
        }
        for gen in &self.gens {
            match kinds.get(&gen.bus) {
                None => {
                    return Err(Error::InvalidTopology(format!(
                        "generator references unknown bus {}",
                        gen.bus
                    )))
                }
                Some(BusKind::Load) => {
                    return Err(Error::InvalidTopology(format!(
                        "generator attached to load bus {}",
                        gen.bus
                    )))
                }
                Some(BusKind::Generator) => {}
            }
            if !(gen.p_gen.is_finite() && gen.v_setpoint.is_finite() && gen.v_setpoint > 0.0) {
                return Err(Error::InvalidTopology(format!(
                    "generator at bus {} has invalid data",
                    gen.bus
                )));
            }
        }
        Ok(())
    }

    pub fn bus(&self, id: u32) -> Option<&BusRecord> {
        self.buses.iter().find(|b| b.id == id)
    }

    /// Bus ids of load buses in case order.
    pub fn load_bus_ids(&self) -> Vec<u32> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Load)
            .map(|b| b.id)
            .collect()
    }

    /// Bus ids of generator buses in case order.
    pub fn gen_bus_ids(&self) -> Vec<u32> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Generator)
            .map(|b| b.id)
            .collect()
    }

    /// Reactive injections `Q_L` at load buses, in case order.
    pub fn load_q_injections(&self) -> Vec<f64> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Load)
            .map(BusRecord::q_injection)
            .collect()
    }

    /// Active injections at load buses, in case order.
    pub fn load_p_injections(&self) -> Vec<f64> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Load)
            .map(BusRecord::p_injection)
            .collect()
    }

    /// Total scheduled active generation per generator bus, in case order.
    pub fn gen_p_injections(&self) -> Vec<f64> {
        self.gen_bus_ids()
            .iter()
            .map(|id| {
                self.gens
                    .iter()
                    .filter(|g| g.bus == *id)
                    .map(|g| g.p_gen)
                    .sum()
            })
            .collect()
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::two_bus;
    use super::*;

    #[test]
    fn two_bus_is_valid() {
        let c = two_bus(0.0, 0.5);
        c.validate().unwrap();
        assert_eq!(c.load_q_injections(), [-0.5]);
        assert_eq!(c.load_bus_ids(), [2]);
    }

    #[test]
    fn rejects_dangling_branch() {
        let mut c = two_bus(0.0, 0.5);
        c.branches[0].to = 7;
        assert!(matches!(c.validate(), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn rejects_duplicate_pair_and_self_loop() {
        let mut c = two_bus(0.0, 0.5);
        let mut rev = c.branches[0].clone();
        core::mem::swap(&mut rev.from, &mut rev.to);
        c.branches.push(rev);
        assert!(c.validate().is_err());

        let mut c = two_bus(0.0, 0.5);
        c.branches[0].to = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_missing_generator_bus() {
        let mut c = two_bus(0.0, 0.5);
        c.buses[0].kind = BusKind::Load;
        c.gens.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_generator_on_load_bus() {
        let mut c = two_bus(0.0, 0.5);
        c.gens[0].bus = 2;
        assert!(c.validate().is_err());
    }
}
