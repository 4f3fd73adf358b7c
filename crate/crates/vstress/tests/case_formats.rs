use std::path::Path;

use vstress::{parse_matpower_case, parse_matpower_report, parse_native_case, write_native_case, CaseError};
use vstress_core::cases::{ieee30, two_bus};
use vstress_core::{BusKind, BusRecord, GenRecord, GridCase};

fn read(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)).unwrap()
}

fn two_bus_text(base: f64, qd: f64) -> String {
    format!(
        "function mpc = t\nmpc.baseMVA = {base};\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 132 1 1.1 0.9;\n2 1 0 {qd} 0 0 1 1 0 132 1 1.1 0.9;\n];\n\
         mpc.gen = [1 0 0 100 -100 1 100 1 100 0];\nmpc.branch = [1 2 0 0.25 0 0 0 0 0 0 1 -360 360];\n"
    )
}

#[test]
fn bundled_ieee30_matches_builtin() {
    let parsed = parse_matpower_report(&read("case_ieee30.m")).unwrap();
    assert_eq!(parsed.case, ieee30());
    // taps and gen-bus demand are the only things the model drops
    assert!(!parsed.warnings.is_empty());
}

#[test]
fn bundled_two_bus_matches_builtin() {
    assert_eq!(parse_matpower_case(&read("case2bus.m")).unwrap(), two_bus(0.0, 0.5));
}

#[test]
fn reactive_demand_is_negative_injection() {
    let c = parse_matpower_case(&two_bus_text(100.0, 50.0)).unwrap();
    assert_eq!(c.load_q_injections(), vec![-0.5]);
}

#[test]
fn per_unit_results_do_not_depend_on_base() {
    let reference = parse_matpower_case(&two_bus_text(100.0, 50.0)).unwrap();
    let rm = reference.model().unwrap();
    for k in [2.0, 4.0] {
        let c = parse_matpower_case(&two_bus_text(100.0 * k, 50.0 * k)).unwrap();
        let m = c.model().unwrap();
        assert_eq!(c.load_q_injections(), reference.load_q_injections());
        assert_eq!(m.q_crit(), rm.q_crit());
        assert_eq!(m.v_open(), rm.v_open());
    }
}

#[test]
fn missing_branch_table_is_malformed() {
    let text = two_bus_text(100.0, 50.0);
    let cut = &text[..text.find("mpc.branch").unwrap()];
    assert!(matches!(parse_matpower_case(cut), Err(CaseError::Malformed(_))));
}

#[test]
fn short_rows_are_malformed() {
    let text = two_bus_text(100.0, 50.0).replace("1 2 0 0.25 0 0 0 0 0 0 1 -360 360", "1 2 0 0.25");
    assert!(matches!(parse_matpower_case(&text), Err(CaseError::Malformed(_))));
}

#[test]
fn nonpositive_reactance_rejected() {
    let text = two_bus_text(100.0, 50.0).replace("1 2 0 0.25", "1 2 0 -0.25");
    assert!(matches!(parse_matpower_case(&text), Err(CaseError::Invalid(_))));
}

#[test]
fn native_round_trip() {
    let one_bus = GridCase {
        base_mva: 10.0,
        buses: vec![BusRecord {
            id: 7,
            kind: BusKind::Generator,
            p_demand: 0.0,
            q_demand: 0.0,
            shunt_b: 0.0,
            v_setpoint: 1.02,
        }],
        branches: Vec::new(),
        gens: vec![GenRecord { bus: 7, p_gen: 0.1, v_setpoint: 1.02 }],
    };
    for case in [two_bus(0.0, 0.5), two_bus(2.4, 0.123456789012345), ieee30(), one_bus] {
        let text = write_native_case(&case);
        assert_eq!(parse_native_case(&text).unwrap(), case);
    }
}

#[test]
fn empty_native_document_is_malformed() {
    assert!(matches!(parse_native_case(""), Err(CaseError::Malformed(_))));
}
