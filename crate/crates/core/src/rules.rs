//! Rule bases shipped with the crate.

use crate::error::Result;
use crate::ruledsl::{parse_rulebase, RuleBase};

pub const CARTPOLE: &str = include_str!("../rules/cartpole.kgr");
pub const CARTPOLE_CONTINUOUS: &str = include_str!("../rules/cartpole_continuous.kgr");

/// Source text of the bundled rule base for an environment id.
pub fn bundled_source(env_id: &str) -> Option<&'static str> {
    match env_id {
        "cartpole" => Some(CARTPOLE),
        "cartpole-continuous" => Some(CARTPOLE_CONTINUOUS),
        _ => None,
    }
}

pub fn cartpole() -> RuleBase {
    parse_rulebase(CARTPOLE).expect("bundled rule base parses")
}

pub fn cartpole_continuous() -> RuleBase {
    parse_rulebase(CARTPOLE_CONTINUOUS).expect("bundled rule base parses")
}

pub fn bundled(env_id: &str) -> Option<Result<RuleBase>> {
    bundled_source(env_id).map(|s| Ok(parse_rulebase(s)?))
}
