//! Fuel-optimal multiple-impulse collision avoidance maneuvers for
//! short-term conjunctions.
//!
//! The pipeline linearizes J2–J4 orbital dynamics about a reference
//! trajectory, projects the encounter onto the b-plane, and solves a
//! sequence of second-order cone programs whose optimum approaches an
//! optimum of the original non-convex maneuver problem.

pub mod conjunction;
pub mod dynamics;
pub mod io;
pub mod scvx;
pub mod socp;
