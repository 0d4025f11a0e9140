//! Multi-market dispatch of a storage-plus-renewables microgrid.
//!
//! The crate provides a hard-constraint-safe environment ([`env`]), seeded
//! exogenous processes ([`exogenous`]), the feasibility projection that keeps
//! every applied action admissible ([`projection`]), an ex-post optimal DP
//! benchmark ([`oracle`]), a receding-horizon controller ([`mpc`]), a PPO
//! trainer ([`ppo`]) and the scenario/report plumbing behind the `gridmkt`
//! command line ([`harness`]).

pub mod env;
pub mod exogenous;
pub mod harness;
pub mod io;
pub mod model;
pub mod mpc;
pub mod oracle;
pub mod policy;
pub mod ppo;
pub mod projection;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/systems.md")]
    mod systems {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/projection.md")]
    mod projection {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
}
