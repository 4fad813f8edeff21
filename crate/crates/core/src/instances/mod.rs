//! Instance builders: gridworlds, the set-cover reduction and random MDPs.

pub mod grid;
pub mod random;
pub mod x3c;

use std::path::PathBuf;

use crate::error::{Error, Result};
use grid::{build_grid, GridSpec, GridWorld};

/// Environment variable naming a directory that overrides the bundled configs.
pub const DATA_ENV: &str = "APT_FORGE_DATA";

/// Names of the bundled gridworlds.
pub const BUNDLED_ENVS: [&str; 3] = ["cliff", "action_hacking", "grass_mud"];

fn bundled_text(name: &str) -> Option<&'static str> {
    match name {
        "cliff" => Some(include_str!("../../data/cliff.json")),
        "action_hacking" => Some(include_str!("../../data/action_hacking.json")),
        "grass_mud" => Some(include_str!("../../data/grass_mud.json")),
        _ => None,
    }
}

/// Grid spec of a named environment. A `<name>.json` file in the directory
/// named by `APT_FORGE_DATA` takes precedence over the bundled copy.
pub fn bundled_spec(name: &str) -> Result<GridSpec> {
    if let Some(dir) = std::env::var_os(DATA_ENV) {
        let path = PathBuf::from(dir).join(format!("{name}.json"));
        if path.is_file() {
            return GridSpec::load(&path);
        }
    }
    let text = bundled_text(name).ok_or_else(|| {
        Error::InvalidArgument(format!("unknown environment '{name}' (expected one of {})", BUNDLED_ENVS.join(", ")))
    })?;
    GridSpec::from_json(text)
}

/// Builds a named environment.
pub fn bundled_env(name: &str) -> Result<GridWorld> {
    build_grid(&bundled_spec(name)?)
}
