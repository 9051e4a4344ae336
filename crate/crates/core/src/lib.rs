//! Mission planning for orchard robots: farm context, L1 plans, plan
//! generation, decoding, simulated execution and stochastic orienteering.

pub mod bench;
pub mod decoder;
pub mod geo;
pub mod planner;
pub mod schema;
pub mod sim;
pub mod sop;

#[cfg(any(test, feature = "testkit"))]
pub mod testkit;
