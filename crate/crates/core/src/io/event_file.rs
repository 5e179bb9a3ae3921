//! Conjunction event files.
//!
//! The canonical format is line oriented. Blank lines and lines starting
//! with `#` are ignored; each record is a block
//!
//! ```text
//! event <id>
//! primary <x> <y> <z> <vx> <vy> <vz>
//! secondary <x> <y> <z> <vx> <vy> <vz>
//! cov_primary <9 entries, row-major, RTN>
//! cov_secondary <9 entries, row-major, RTN>
//! radius <R>
//! ref_d2 <value>          (optional)
//! ref_pc <value>          (optional)
//! ref_pc_approx <value>   (optional)
//! ref_pc_max <value>      (optional)
//! end
//! ```
//!
//! States are ECI at closest approach (km, km/s), covariances km², radius
//! km. A single event may also be given in the two-column table layout
//! with `# Primary`, `# Secondary` and `# Conjunction details` sections.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::conjunction::ConjunctionEvent;
use crate::dynamics::StateVector;

/// Published values an event can be checked against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub d2: Option<f64>,
    /// Collision probability from an independent integration.
    pub pc: Option<f64>,
    pub pc_approx: Option<f64>,
    pub pc_max: Option<f64>,
}

impl ReferenceValues {
    fn is_empty(&self) -> bool {
        self.d2.is_none() && self.pc.is_none() && self.pc_approx.is_none() && self.pc_max.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: String,
    pub event: ConjunctionEvent,
    pub reference: ReferenceValues,
}

/// Reads every record of an event file, in either layout.
pub fn parse_event_file(path: &Path) -> Result<Vec<EventRecord>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_events(&text)
}

/// Parses event records from text, detecting the layout.
pub fn parse_events(text: &str) -> Result<Vec<EventRecord>, IoError> {
    let table = text.lines().any(|l| {
        let t = clean(l);
        t.starts_with('#') && t.trim_start_matches('#').trim().eq_ignore_ascii_case("primary")
    });
    if table {
        Ok(vec![parse_table(text)?])
    } else {
        parse_blocks(text)
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

fn number(tok: &str, line: usize, field: &str) -> Result<f64, IoError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_error(line, format!("{field}: cannot read '{tok}' as a number")))?;
    if !v.is_finite() {
        return Err(parse_error(line, format!("{field}: value '{tok}' is not finite")));
    }
    Ok(v)
}

fn numbers(toks: &[&str], count: usize, line: usize, field: &str) -> Result<Vec<f64>, IoError> {
    if toks.len() != count {
        return Err(parse_error(
            line,
            format!("{field}: expected {count} values, found {}", toks.len()),
        ));
    }
    toks.iter().map(|t| number(t, line, field)).collect()
}

#[derive(Default)]
struct Partial {
    id: String,
    start: usize,
    primary: Option<[f64; 6]>,
    secondary: Option<[f64; 6]>,
    cov_primary: Option<Matrix3<f64>>,
    cov_secondary: Option<Matrix3<f64>>,
    radius: Option<f64>,
    reference: ReferenceValues,
}

impl Partial {
    fn finish(self) -> Result<EventRecord, IoError> {
        let missing = |field: &str| parse_error(self.start, format!("event '{}' has no '{field}' line", self.id));
        let p = self.primary.ok_or_else(|| missing("primary"))?;
        let s = self.secondary.ok_or_else(|| missing("secondary"))?;
        let event = ConjunctionEvent {
            primary: StateVector::from_array(p, 0.0),
            secondary: StateVector::from_array(s, 0.0),
            cov_primary_rtn: self.cov_primary.ok_or_else(|| missing("cov_primary"))?,
            cov_secondary_rtn: self.cov_secondary.ok_or_else(|| missing("cov_secondary"))?,
            radius: self.radius.ok_or_else(|| missing("radius"))?,
        };
        validate_record(&self.id, &event)?;
        Ok(EventRecord {
            id: self.id,
            event,
            reference: self.reference,
        })
    }
}

fn validate_record(id: &str, event: &ConjunctionEvent) -> Result<(), IoError> {
    event.validate().map_err(|e| IoError::Validation {
        id: id.to_string(),
        message: e.to_string(),
    })
}

fn parse_blocks(text: &str) -> Result<Vec<EventRecord>, IoError> {
    let mut records = Vec::new();
    let mut current: Option<Partial> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        let (key, vals) = (toks[0], &toks[1..]);
        if key == "event" {
            if current.is_some() {
                return Err(parse_error(line, "'event' before the previous record's 'end'"));
            }
            if vals.len() != 1 {
                return Err(parse_error(line, "event: expected a single identifier"));
            }
            if records.iter().any(|r: &EventRecord| r.id == vals[0]) {
                return Err(parse_error(line, format!("event: duplicate identifier '{}'", vals[0])));
            }
            current = Some(Partial {
                id: vals[0].to_string(),
                start: line,
                ..Partial::default()
            });
            continue;
        }
        let Some(rec) = current.as_mut() else {
            return Err(parse_error(line, format!("'{key}' outside an event block")));
        };
        let state = |vals: &[&str]| -> Result<[f64; 6], IoError> {
            let v = numbers(vals, 6, line, key)?;
            Ok([v[0], v[1], v[2], v[3], v[4], v[5]])
        };
        let cov = |vals: &[&str]| -> Result<Matrix3<f64>, IoError> {
            Ok(Matrix3::from_row_slice(&numbers(vals, 9, line, key)?))
        };
        let single = |vals: &[&str]| -> Result<Option<f64>, IoError> { Ok(Some(numbers(vals, 1, line, key)?[0])) };
        match key {
            "primary" => rec.primary = Some(state(vals)?),
            "secondary" => rec.secondary = Some(state(vals)?),
            "cov_primary" => rec.cov_primary = Some(cov(vals)?),
            "cov_secondary" => rec.cov_secondary = Some(cov(vals)?),
            "radius" => rec.radius = single(vals)?,
            "ref_d2" => rec.reference.d2 = single(vals)?,
            "ref_pc" => rec.reference.pc = single(vals)?,
            "ref_pc_approx" => rec.reference.pc_approx = single(vals)?,
            "ref_pc_max" => rec.reference.pc_max = single(vals)?,
            "end" => {
                if !vals.is_empty() {
                    return Err(parse_error(line, "end: unexpected trailing text"));
                }
                records.push(current.take().expect("record open").finish()?);
            }
            _ => return Err(parse_error(line, format!("unknown key '{key}'"))),
        }
    }
    if let Some(rec) = current {
        return Err(parse_error(rec.start, format!("event '{}' is not closed by 'end'", rec.id)));
    }
    Ok(records)
}

/// Strips table markup (`$`, `&`, trailing `\\`) from a line.
fn clean(raw: &str) -> String {
    raw.replace("\\\\", " ").replace(['$', '&'], " ").trim().to_string()
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Primary,
    Secondary,
    Details,
}

#[derive(Default)]
struct ObjectRows {
    state: Vec<[f64; 2]>,
    cov: Vec<[f64; 3]>,
}

fn parse_table(text: &str) -> Result<EventRecord, IoError> {
    let mut section = Section::None;
    let mut primary = ObjectRows::default();
    let mut secondary = ObjectRows::default();
    let mut radius = None;
    let mut reference = ReferenceValues::default();
    let mut probabilities = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = clean(raw);
        if body.is_empty() {
            continue;
        }
        if body.starts_with('#') {
            let heading = body.trim_start_matches('#').trim().to_ascii_lowercase();
            if heading == "primary" {
                section = Section::Primary;
            } else if heading == "secondary" {
                section = Section::Secondary;
            } else if heading.starts_with("conjunction") {
                section = Section::Details;
            }
            continue;
        }
        match section {
            Section::None => return Err(parse_error(line, "data before the '# Primary' heading")),
            Section::Primary | Section::Secondary => {
                let rows = if section == Section::Primary {
                    &mut primary
                } else {
                    &mut secondary
                };
                let toks: Vec<&str> = body.split_whitespace().collect();
                if rows.state.len() < 3 {
                    let v = numbers(&toks, 2, line, "position/velocity row")?;
                    rows.state.push([v[0], v[1]]);
                } else if rows.cov.len() < 3 {
                    let v = numbers(&toks, 3, line, "covariance row")?;
                    rows.cov.push([v[0], v[1], v[2]]);
                } else {
                    return Err(parse_error(line, "extra row in object section"));
                }
            }
            Section::Details => {
                let Some((name, rest)) = body.split_once('=') else {
                    return Err(parse_error(line, "expected 'name = value'"));
                };
                let name: String = name.chars().filter(|c| !c.is_whitespace() && !"{}_\\".contains(*c)).collect();
                let name = name.to_ascii_lowercase();
                let toks: Vec<&str> = rest.split_whitespace().collect();
                let Some(first) = toks.first() else {
                    return Err(parse_error(line, format!("{name}: missing value")));
                };
                let value = number(first, line, &name)?;
                match name.as_str() {
                    "r" => {
                        let unit = toks.get(1).copied().unwrap_or("km");
                        radius = Some(match unit {
                            "m" => value * 1e-3,
                            "km" => value,
                            other => return Err(parse_error(line, format!("R: unknown unit '{other}'"))),
                        });
                    }
                    "dca^2" | "d^2" | "d2" => reference.d2 = Some(value),
                    "pc" => probabilities.push(value),
                    "pc,max" | "pcmax" => reference.pc_max = Some(value),
                    // Other annotations do not affect the event.
                    _ => {}
                }
            }
        }
    }
    // Probabilities are listed as the integrated value, then the
    // constant-density one.
    match probabilities.as_slice() {
        [] => {}
        [pc] => reference.pc = Some(*pc),
        [pc, approx, ..] => {
            reference.pc = Some(*pc);
            reference.pc_approx = Some(*approx);
        }
    }
    let object = |rows: &ObjectRows, name: &str| -> Result<([f64; 6], Matrix3<f64>), IoError> {
        if rows.state.len() != 3 || rows.cov.len() != 3 {
            return Err(parse_error(0, format!("{name} section needs 3 state rows and 3 covariance rows")));
        }
        let pos = Vector3::new(rows.state[0][0], rows.state[1][0], rows.state[2][0]);
        let vel = Vector3::new(rows.state[0][1], rows.state[1][1], rows.state[2][1]);
        let cov = Matrix3::from_fn(|i, j| rows.cov[i][j]);
        Ok(([pos.x, pos.y, pos.z, vel.x, vel.y, vel.z], cov))
    };
    let (p, cp) = object(&primary, "primary")?;
    let (s, cs) = object(&secondary, "secondary")?;
    let event = ConjunctionEvent {
        primary: StateVector::from_array(p, 0.0),
        secondary: StateVector::from_array(s, 0.0),
        cov_primary_rtn: cp,
        cov_secondary_rtn: cs,
        radius: radius.ok_or_else(|| parse_error(0, "no 'R = ...' line in conjunction details"))?,
    };
    let id = "event".to_string();
    validate_record(&id, &event)?;
    Ok(EventRecord { id, event, reference })
}

fn push_values(out: &mut String, key: &str, values: impl IntoIterator<Item = f64>) {
    out.push_str(key);
    for v in values {
        // `{:e}` prints the shortest representation that reads back exactly.
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
}

/// Writes records in the canonical block format.
pub fn format_events(records: &[EventRecord]) -> String {
    let mut out = String::new();
    for (k, r) in records.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let e = &r.event;
        let _ = writeln!(out, "event {}", r.id);
        push_values(&mut out, "primary", e.primary.to_vector6().iter().copied());
        push_values(&mut out, "secondary", e.secondary.to_vector6().iter().copied());
        push_values(&mut out, "cov_primary", e.cov_primary_rtn.transpose().iter().copied());
        push_values(&mut out, "cov_secondary", e.cov_secondary_rtn.transpose().iter().copied());
        push_values(&mut out, "radius", [e.radius]);
        if !r.reference.is_empty() {
            let refs = [
                ("ref_d2", r.reference.d2),
                ("ref_pc", r.reference.pc),
                ("ref_pc_approx", r.reference.pc_approx),
                ("ref_pc_max", r.reference.pc_max),
            ];
            for (key, v) in refs {
                if let Some(v) = v {
                    push_values(&mut out, key, [v]);
                }
            }
        }
        out.push_str("end\n");
    }
    out
}

pub fn write_event_file(path: &Path, records: &[EventRecord]) -> Result<(), IoError> {
    std::fs::write(path, format_events(records)).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
