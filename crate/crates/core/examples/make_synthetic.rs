//! Writes the bundled synthetic conjunction dataset.
//!
//! `cargo run --example make_synthetic -- data/synthetic_20.cam`
//!
//! Events are LEO encounters spanning relative speeds of 1.8–15 km/s and
//! b-plane miss distances of 0–2 km. Both objects are on near-circular
//! orbits through the same point, and their states are exactly at
//! closest approach.

use std::f64::consts::PI;
use std::path::PathBuf;

use cam_core::conjunction::{rtn_to_eci, ConjunctionEvent, CovarianceFrame};
use cam_core::dynamics::{GravityModel, StateVector};
use cam_core::io::{write_event_file, EventRecord, ReferenceValues};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EVENTS: usize = 20;
const SEED: u64 = 20_170;

fn rtn_covariance(rng: &mut ChaCha8Rng, sr: (f64, f64), st: (f64, f64), sn: (f64, f64)) -> Matrix3<f64> {
    let s = Vector3::new(rng.gen_range(sr.0..sr.1), rng.gen_range(st.0..st.1), rng.gen_range(sn.0..sn.1));
    let rho_rt: f64 = rng.gen_range(-0.3..0.3);
    let rho_rn: f64 = rng.gen_range(-0.1..0.1);
    let rho_tn: f64 = rng.gen_range(-0.1..0.1);
    let corr = Matrix3::new(1.0, rho_rt, rho_rn, rho_rt, 1.0, rho_tn, rho_rn, rho_tn, 1.0);
    let d = Matrix3::from_diagonal(&s);
    let c = d * corr * d;
    (c + c.transpose()) * 0.5
}

fn event(k: usize, rng: &mut ChaCha8Rng, model: &GravityModel) -> ConjunctionEvent {
    // Relative speeds spread evenly over the range, in shuffled order.
    let v_rel = 1.8 + (15.0 - 1.8) * ((k * 7) % EVENTS) as f64 / (EVENTS - 1) as f64;
    // Keep the crossing angle below 170° so the b-plane is well defined.
    let r_max = model.mu / (v_rel / (2.0 * 85f64.to_radians().sin())).powi(2);
    let r = (model.re + rng.gen_range(450.0..950.0)).min(r_max);
    let speed = (model.mu / r).sqrt();

    // Position direction and the primary's horizontal velocity.
    let lat: f64 = rng.gen_range(-1.2..1.2);
    let lon: f64 = rng.gen_range(0.0..2.0 * PI);
    let r_hat = Vector3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin());
    let east = Vector3::z().cross(&r_hat).normalize();
    let north = r_hat.cross(&east);
    let heading: f64 = rng.gen_range(0.0..2.0 * PI);
    let v_p = (east * heading.cos() + north * heading.sin()) * speed;

    let alpha = 2.0 * (v_rel / (2.0 * speed)).asin();
    let turn = Rotation3::from_axis_angle(&Unit::new_normalize(r_hat), alpha);
    let v_s = turn * v_p;

    // Miss vector perpendicular to the relative velocity.
    let dv = v_p - v_s;
    let u1 = dv.cross(&r_hat).normalize();
    let u2 = dv.normalize().cross(&u1);
    let miss = 2.0 * ((k * 11) % EVENTS) as f64 / (EVENTS - 1) as f64;
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let dr = (u1 * phase.cos() + u2 * phase.sin()) * miss;

    let p = r_hat * r;
    let s = p - dr;
    // Sanity: both frames must exist for the covariance rotation.
    rtn_to_eci(&p, &v_p).expect("primary frame");
    rtn_to_eci(&s, &v_s).expect("secondary frame");
    let mut ev = ConjunctionEvent {
        primary: StateVector::new(p, v_p, 0.0),
        secondary: StateVector::new(s, v_s, 0.0),
        cov_primary_rtn: rtn_covariance(rng, (0.01, 0.05), (0.05, 0.4), (0.01, 0.05)),
        cov_secondary_rtn: rtn_covariance(rng, (0.02, 0.1), (0.2, 1.0), (0.02, 0.1)),
        radius: rng.gen_range(0.005..0.03),
    };
    // Size the hard body so the nominal worst-case probability lies in
    // [3e-4, 3e-2]; pc_max = R² / (d² √det e).
    let g = ev.geometry(CovarianceFrame::PerObject).expect("nominal geometry");
    let target = 10f64.powf(rng.gen_range(-3.5..-1.5));
    if g.d2 > 0.0 {
        let r2 = target * g.d2 * g.c_b.determinant().sqrt() * std::f64::consts::E;
        ev.radius = r2.sqrt().clamp(0.002, 0.1);
    }
    ev
}

fn main() {
    let out: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/synthetic_20.cam"));
    let model = GravityModel::earth();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let records: Vec<EventRecord> = (0..EVENTS)
        .map(|k| EventRecord {
            id: format!("syn-{:02}", k + 1),
            event: event(k, &mut rng, &model),
            reference: ReferenceValues::default(),
        })
        .collect();
    for r in &records {
        r.event.validate().expect("generated event is valid");
    }
    write_event_file(&out, &records).expect("write dataset");
    println!("wrote {} events to {}", records.len(), out.display());
}
