use std::path::{Path, PathBuf};

use cam_core::conjunction::{ConjunctionEvent, Constraint};
use cam_core::dynamics::StateVector;
use cam_core::io::{
    emit_reports, format_events, parse_event_file, parse_events, run_batch, run_single, Aggregates, BatchReport,
    EntryStatus, EventRecord, Format, IoError, ReferenceValues, RunSettings, SCHEMA_VERSION,
};
use cam_core::scvx::ScvxConfig;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn reference() -> EventRecord {
    parse_event_file(&data("reference_event.cam")).unwrap().remove(0)
}

fn settings(constraint: Constraint, lead_orbits: f64) -> RunSettings {
    RunSettings {
        config: ScvxConfig {
            constraint,
            ..ScvxConfig::default()
        },
        lead_orbits,
        ..RunSettings::default()
    }
}

#[test]
fn table_layout_reads_values_as_printed() {
    let recs = parse_event_file(&data("reference_event.txt")).unwrap();
    assert_eq!(recs.len(), 1);
    let e = &recs[0].event;
    assert_eq!(e.primary.position, Vector3::new(2.33052185175137, -1103.70451050201, 7105.88764299718));
    assert_eq!(
        e.primary.velocity,
        Vector3::new(-7.44286282871773, -6.13734743652660e-4, 3.95136139293349e-3)
    );
    assert_eq!(e.secondary.velocity[2], -1.982472259113771e-1);
    assert_eq!(e.cov_primary_rtn[(0, 1)], -2.623398113500550e-04);
    assert_eq!(e.cov_secondary_rtn[(1, 1)], 8.199899363150306e-01);
    assert!((e.radius - 0.02971).abs() < 1e-15);
    assert_eq!(recs[0].reference.d2, Some(8.71655401455392e-01));
    assert_eq!(recs[0].reference.pc, Some(1.36040828266536e-01));
    assert_eq!(recs[0].reference.pc_approx, Some(1.47559666159940e-01));
    assert_eq!(recs[0].reference.pc_max, Some(1.92590968666693e-01));
}

#[test]
fn both_layouts_describe_the_same_event() {
    let table = parse_event_file(&data("reference_event.txt")).unwrap().remove(0);
    let blocks = reference();
    assert_eq!(table.event.primary, blocks.event.primary);
    assert_eq!(table.event.secondary, blocks.event.secondary);
    assert_eq!(table.event.cov_primary_rtn, blocks.event.cov_primary_rtn);
    assert_eq!(table.event.cov_secondary_rtn, blocks.event.cov_secondary_rtn);
    assert_eq!(table.reference, blocks.reference);
}

#[test]
fn table_markup_is_tolerated() {
    let text = std::fs::read_to_string(data("reference_event.txt")).unwrap();
    let marked: String = text
        .lines()
        .map(|l| {
            if l.starts_with('#') || l.trim().is_empty() {
                l.to_string()
            } else {
                let cells: Vec<String> = l.split_whitespace().map(|c| format!("${c}$")).collect();
                format!("{} \\\\", cells.join(" & "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let a = parse_events(&marked).unwrap().remove(0);
    assert_eq!(a.event, parse_event_file(&data("reference_event.txt")).unwrap()[0].event);
}

#[test]
fn empty_input_has_no_records() {
    assert!(parse_events("").unwrap().is_empty());
    assert!(parse_events("# nothing here\n\n   \n").unwrap().is_empty());
}

#[test]
fn asymmetric_covariance_names_the_record() {
    let text = format_events(&[reference()]).replacen(
        "cov_secondary 6.346570910720371e-4 -1.962292216245289e-3",
        "cov_secondary 6.346570910720371e-4 -1.9622e-3",
        1,
    );
    match parse_events(&text) {
        Err(IoError::Validation { id, message }) => {
            assert_eq!(id, "reference");
            assert!(message.contains("symmetric"), "{message}");
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
}

fn parse_line(text: &str) -> usize {
    match parse_events(text) {
        Err(IoError::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn malformed_files_are_located() {
    let good = format_events(&[reference()]);
    let lines: Vec<&str> = good.lines().collect();
    let with = |k: usize, replacement: &str| {
        let mut l = lines.clone();
        l[k] = replacement;
        l.join("\n")
    };
    assert_eq!(parse_line(&with(1, "primary 1 2 3 4 5")), 2);
    assert_eq!(parse_line(&with(5, "radius abc")), 6);
    assert_eq!(parse_line(&with(6, "colour blue")), 7);
    assert_eq!(parse_line(&lines[..lines.len() - 1].join("\n")), 1);
    assert_eq!(parse_line("radius 1\n"), 1);
    assert_eq!(parse_line(&format!("{good}{good}")), 12);
    let missing: Vec<&str> = lines.iter().copied().filter(|l| !l.starts_with("radius")).collect();
    assert_eq!(parse_line(&missing.join("\n")), 1);
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e4f64..1e4, -1e-3f64..1e-3, (1e-12f64..1e-6).prop_map(|v| v * 3.0)]
}

fn record_strategy() -> impl Strategy<Value = EventRecord> {
    (
        prop::array::uniform3(finite()),
        prop::array::uniform3(finite()),
        prop::array::uniform3(0.001f64..1.0),
        prop::array::uniform3(0.001f64..1.0),
        0.001f64..0.1,
        prop::option::of(0.0f64..100.0),
        "[a-z][a-z0-9_-]{0,12}",
    )
        .prop_map(|(p, v, sp, ss, radius, d2, id)| {
            // Secondary placed so that the pair is at closest approach.
            let vp = Vector3::new(v[0], v[1], v[2]) + Vector3::new(7.5, 0.0, 0.0);
            let vs = Vector3::new(-1.0, 7.0, 0.3);
            let rel = vp - vs;
            let offset = rel.cross(&Vector3::z()).normalize() * 0.5;
            let pos = Vector3::new(p[0], p[1], 7000.0 + p[2]);
            EventRecord {
                id,
                event: ConjunctionEvent {
                    primary: StateVector::new(pos, vp, 0.0),
                    secondary: StateVector::new(pos - offset, vs, 0.0),
                    cov_primary_rtn: Matrix3::from_diagonal(&Vector3::from(sp)),
                    cov_secondary_rtn: Matrix3::from_diagonal(&Vector3::from(ss)),
                    radius,
                },
                reference: ReferenceValues {
                    d2,
                    ..ReferenceValues::default()
                },
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_format_round_trips(recs in prop::collection::vec(record_strategy(), 0..4)) {
        let mut recs = recs;
        for (k, r) in recs.iter_mut().enumerate() {
            r.id = format!("{}-{k}", r.id);
        }
        let back = parse_events(&format_events(&recs)).unwrap();
        prop_assert_eq!(back, recs);
    }
}

#[test]
fn reference_run_meets_threshold_on_full_dynamics() {
    let entry = run_single(&reference(), &settings(Constraint::PcMax(1e-4), 2.0));
    assert_eq!(entry.status, EntryStatus::Converged);
    let achieved = entry.achieved.unwrap();
    assert!(achieved.pc_max.unwrap() <= 1e-4 * 1.05, "{:?}", achieved.pc_max);
    assert!(achieved.verified);
    let nominal = entry.nominal.unwrap();
    assert!((nominal.d2 - 0.871655401455392).abs() < 1e-8);
    assert_eq!(entry.schedule.len(), entry.report.unwrap().grid.n);
}

#[test]
fn safe_event_gets_zero_entry() {
    let entry = run_single(&reference(), &settings(Constraint::PcMax(0.9), 2.0));
    assert_eq!(entry.status, EntryStatus::Converged);
    assert_eq!(entry.total_dv_mps, 0.0);
    assert_eq!(entry.major_iterations, 0);
    assert!(entry.schedule.iter().all(|r| r.magnitude == 0.0));
}

#[test]
fn infeasible_event_is_recorded_and_batch_continues() {
    let mut s = settings(Constraint::PcMax(1e-4), 2.0);
    s.config.dv_max = 1e-12;
    let mut other = reference();
    other.id = "second".into();
    let report = run_batch(&[reference(), other], &s, 2);
    assert_eq!(report.entries.len(), 2);
    assert!(report.entries.iter().all(|e| e.status == EntryStatus::Infeasible));
    assert_eq!(report.aggregates.infeasible, 2);
}

fn synthetic() -> Vec<EventRecord> {
    parse_event_file(&data("synthetic_20.cam")).unwrap()
}

#[test]
fn three_event_batch_medians() {
    let recs: Vec<EventRecord> = synthetic().into_iter().take(3).collect();
    let report = run_batch(&recs, &settings(Constraint::PcMax(1e-4), 2.0), 3);
    assert_eq!(report.entries.len(), 3);
    assert_eq!(report.schema_version, SCHEMA_VERSION);
    let mut dv: Vec<f64> = report.entries.iter().map(|e| e.total_dv_mps).collect();
    dv.sort_by(f64::total_cmp);
    assert_eq!(report.aggregates.converged, 3);
    assert_eq!(report.aggregates.total_dv_mps.median, dv[1]);
    let ids: Vec<&str> = report.entries.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["syn-01", "syn-02", "syn-03"]);
}

#[test]
fn aggregates_do_not_depend_on_threads_or_order() {
    let recs: Vec<EventRecord> = synthetic().into_iter().skip(3).take(4).collect();
    let s = settings(Constraint::PcMax(1e-4), 2.0);
    let one = run_batch(&recs, &s, 1);
    let eight = run_batch(&recs, &s, 8);
    let a = serde_json::to_string(&one.aggregates).unwrap();
    assert_eq!(a, serde_json::to_string(&eight.aggregates).unwrap());
    let mut reversed = one.entries.clone();
    reversed.reverse();
    assert_eq!(a, serde_json::to_string(&Aggregates::of(&reversed)).unwrap());
}

#[test]
fn worst_case_probability_costs_more_than_constant_density() {
    let recs: Vec<EventRecord> = synthetic().into_iter().skip(10).take(5).collect();
    let pcmax = run_batch(&recs, &settings(Constraint::PcMax(1e-4), 2.0), 2);
    let pc = run_batch(&recs, &settings(Constraint::PcApprox(1e-6), 2.0), 2);
    assert!(
        pcmax.aggregates.total_dv_mps.median > pc.aggregates.total_dv_mps.median,
        "{} vs {}",
        pcmax.aggregates.total_dv_mps.median,
        pc.aggregates.total_dv_mps.median
    );
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn emitted_reports_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let entry = run_single(&reference(), &settings(Constraint::PcMax(1e-4), 8.0));
    let n = entry.report.as_ref().unwrap().grid.n;
    let report = BatchReport {
        schema_version: SCHEMA_VERSION,
        settings: settings(Constraint::PcMax(1e-4), 8.0),
        aggregates: Aggregates::of(std::slice::from_ref(&entry)),
        entries: vec![entry.clone()],
    };
    let files = emit_reports(&report, dir.path(), &[Format::Json, Format::Csv]).unwrap();
    assert!(files.iter().all(|f| f.exists()));

    let rows = csv_rows(&dir.path().join("impulses_reference.csv"));
    assert_eq!(rows.len(), n);
    let active = rows.iter().filter(|r| r[8].parse::<f64>().unwrap() > 1e-6).count();
    assert!(active.abs_diff(34) <= 5, "{active}");
    let total: f64 = rows.iter().map(|r| r[8].parse::<f64>().unwrap()).sum();
    assert!((total - entry.total_dv_mps).abs() < 1e-12);
    for r in &rows {
        let eci: f64 = (5..8).map(|k| r[k].parse::<f64>().unwrap().powi(2)).sum::<f64>().sqrt();
        let rtn: f64 = (2..5).map(|k| r[k].parse::<f64>().unwrap().powi(2)).sum::<f64>().sqrt();
        assert!((rtn - eci).abs() <= 1e-12);
    }
    let trace = csv_rows(&dir.path().join("trace_reference.csv"));
    assert_eq!(trace.len(), entry.minor_iterations.iter().sum::<usize>());
    assert_eq!(csv_rows(&dir.path().join("contour_reference.csv")).len(), 181);

    let raw = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(!raw.contains('\r'));
    let back: BatchReport = serde_json::from_str(&raw).unwrap();
    assert_eq!(back.entries[0].total_dv_mps.to_bits(), entry.total_dv_mps.to_bits());
    let plan = &entry.report.as_ref().unwrap().plan;
    assert_eq!(back.entries[0].report.as_ref().unwrap().plan.total_dv.to_bits(), plan.total_dv.to_bits());
    let json: serde_json::Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(json["schema_version"], SCHEMA_VERSION);
}

#[test]
fn zero_plan_schedule_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(Constraint::PcMax(0.9), 2.0);
    let entry = run_single(&reference(), &s);
    let report = BatchReport {
        schema_version: SCHEMA_VERSION,
        settings: s,
        aggregates: Aggregates::of(std::slice::from_ref(&entry)),
        entries: vec![entry],
    };
    emit_reports(&report, dir.path(), &[Format::Csv]).unwrap();
    let rows = csv_rows(&dir.path().join("impulses_reference.csv"));
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[8].parse::<f64>().unwrap() == 0.0));
    assert!(!dir.path().join("report.json").exists());
}
