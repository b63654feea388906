//! Scenario runner for the swaption simulator: parses TOML scenario files,
//! plays them and checks their expectations.

pub mod bundled;
pub mod exec;
pub mod scenario;

pub use exec::{run_scenario, Format, Options, Report};
pub use scenario::{parse, ParseError, Scenario};
