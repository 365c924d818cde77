//! Highway consensus: the unit DAG, GHOST voting, summit-based finality,
//! endorsements, a per-validator protocol engine and a deterministic
//! network simulator.

pub mod analysis;
pub mod check;
pub mod dag;
pub mod endorsement;
pub mod engine;
pub mod finality;
pub mod fixture;
pub mod ghost;
pub mod ids;
pub mod oracle;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod unit;
