//! Subcommand implementations. Each command evaluates its configured grid,
//! writes CSV/JSON artifacts into the bundle, and optionally emits plots.

pub mod calibrate;
pub mod classical;
pub mod floquet;
pub mod stochastic;

use crate::config::RunConfig;

/// Everything a command needs besides its own config section.
pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    /// Master seed (CLI override wins over the config).
    pub seed: u64,
    pub plot: bool,
}
