use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::{percentile, BatchReport, RunEntry, SweepReport};
use super::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

const HISTOGRAM_BINS: usize = 10;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |e| IoError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn write_rows<const K: usize>(path: &Path, header: [&str; K], rows: impl IntoIterator<Item = [String; K]>) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn emit_entry(dir: &Path, e: &RunEntry, files: &mut Vec<PathBuf>) -> Result<(), IoError> {
    let stem = file_stem(&e.id);
    let path = dir.join(format!("impulses_{stem}.csv"));
    write_rows(
        &path,
        ["node", "time_to_ca_s", "dv_r_mps", "dv_t_mps", "dv_n_mps", "dv_x_mps", "dv_y_mps", "dv_z_mps", "magnitude_mps"],
        e.schedule.iter().map(|r| {
            [
                r.node.to_string(),
                r.time_to_ca.to_string(),
                r.dv_rtn[0].to_string(),
                r.dv_rtn[1].to_string(),
                r.dv_rtn[2].to_string(),
                r.dv_eci[0].to_string(),
                r.dv_eci[1].to_string(),
                r.dv_eci[2].to_string(),
                r.magnitude.to_string(),
            ]
        }),
    )?;
    files.push(path);

    let path = dir.join(format!("trace_{stem}.csv"));
    let trace = e.report.as_ref().map(|r| r.trace.as_slice()).unwrap_or_default();
    write_rows(
        &path,
        ["iteration", "major", "minor", "xi_km", "zeta_km", "z_xi_km", "z_zeta_km", "dv_mps", "tca_shift_s"],
        trace.iter().enumerate().map(|(k, t)| {
            [
                (k + 1).to_string(),
                t.major.to_string(),
                t.minor.to_string(),
                t.dr_b.x.to_string(),
                t.dr_b.y.to_string(),
                t.z_point.x.to_string(),
                t.z_point.y.to_string(),
                (t.total_dv * 1e3).to_string(),
                t.tca_shift.to_string(),
            ]
        }),
    )?;
    files.push(path);

    let path = dir.join(format!("contour_{stem}.csv"));
    write_rows(
        &path,
        ["xi_km", "zeta_km"],
        e.contour.iter().map(|p| [p[0].to_string(), p[1].to_string()]),
    )?;
    files.push(path);
    Ok(())
}

/// Equal-width counts over the 5th–95th percentile range of the sample.
fn histogram(values: &[f64]) -> Vec<[String; 3]> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return Vec::new();
    }
    let lo = percentile(&v, 5.0);
    let hi = percentile(&v, 95.0);
    let width = if hi > lo { (hi - lo) / HISTOGRAM_BINS as f64 } else { 1.0 };
    let bins = if hi > lo { HISTOGRAM_BINS } else { 1 };
    let mut counts = vec![0usize; bins];
    for &x in v.iter().filter(|&&x| x >= lo && x <= hi) {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let a = lo + k as f64 * width;
            [a.to_string(), (a + width).to_string(), c.to_string()]
        })
        .collect()
}

/// Writes the full report and its plot-ready tables into `out_dir`.
pub fn emit_reports(report: &BatchReport, out_dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, IoError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = Vec::new();
    if formats.contains(&Format::Json) {
        let path = out_dir.join("report.json");
        write_json(&path, report)?;
        files.push(path);
    }
    if !formats.contains(&Format::Csv) {
        return Ok(files);
    }
    let path = out_dir.join("summary.csv");
    write_rows(
        &path,
        [
            "id", "status", "total_dv_mps", "active_impulses", "major_iterations", "pc_approx", "pc_max", "miss_distance_km",
            "tca_shift_s", "verified", "solve_seconds",
        ],
        report.entries.iter().map(|e| {
            let a = e.achieved;
            [
                e.id.clone(),
                serde_json::to_value(e.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
                e.total_dv_mps.to_string(),
                e.active_impulses.to_string(),
                e.major_iterations.to_string(),
                opt(a.map(|a| a.pc_approx)),
                opt(a.and_then(|a| a.pc_max)),
                opt(a.map(|a| a.miss_distance_km)),
                opt(a.map(|a| a.tca_shift_s)),
                a.map(|a| a.verified.to_string()).unwrap_or_default(),
                e.solve_seconds.to_string(),
            ]
        }),
    )?;
    files.push(path);
    for e in &report.entries {
        emit_entry(out_dir, e, &mut files)?;
    }
    if report.entries.len() > 1 {
        let converged: Vec<&RunEntry> = report
            .entries
            .iter()
            .filter(|e| e.status == super::EntryStatus::Converged)
            .collect();
        let dv: Vec<f64> = converged.iter().map(|e| e.total_dv_mps).collect();
        let counts: Vec<f64> = converged.iter().map(|e| e.active_impulses as f64).collect();
        for (name, values) in [("histogram_total_dv.csv", dv), ("histogram_impulses.csv", counts)] {
            let path = out_dir.join(name);
            write_rows(&path, ["bin_lo", "bin_hi", "count"], histogram(&values))?;
            files.push(path);
        }
    }
    Ok(files)
}

/// Writes a parameter sweep as JSON and a one-row-per-value CSV.
pub fn emit_sweep(report: &SweepReport, out_dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, IoError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = Vec::new();
    if formats.contains(&Format::Json) {
        let path = out_dir.join("sweep.json");
        write_json(&path, report)?;
        files.push(path);
    }
    if formats.contains(&Format::Csv) {
        let path = out_dir.join("sweep.csv");
        write_rows(
            &path,
            ["value", "status", "total_dv_mps", "active_impulses", "major_iterations", "verified"],
            report.rows.iter().map(|r| {
                [
                    r.value.to_string(),
                    serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
                    r.total_dv_mps.to_string(),
                    r.active_impulses.to_string(),
                    r.major_iterations.to_string(),
                    r.verified.map(|v| v.to_string()).unwrap_or_default(),
                ]
            }),
        )?;
        files.push(path);
    }
    Ok(files)
}
