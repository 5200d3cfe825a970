//! Congestion pricing with heterogeneous, self-regulating users.
//!
//! Users declare what they will pay per unit of bandwidth. The network can
//! price congested links with a dual subgradient method ([`num`]) or by
//! trying the declared bids from the lowest up ([`micc`]). Users react to
//! price and to service below their minimum requirement, and may leave
//! ([`selfreg`]).

pub mod calibrate;
pub mod experiment;
pub mod market;
pub mod micc;
pub mod multilink;
pub mod num;
pub mod report;
pub mod scenario;
pub mod selfreg;
pub mod tables;
pub mod utility;

pub use market::{bid_price, link_load, BidPrice, Market, Topology, User, UserId};
pub use micc::{micc_select, verify_proposition1, BidSet, MiccResult};
pub use num::{price_update, run_subgradient, SolverConfig, StepPolicy};
pub use scenario::Scenario;
pub use selfreg::{run, SimTrace, Strategy};
pub use utility::{best_response, dissatisfaction, utility, UtilityParams};
