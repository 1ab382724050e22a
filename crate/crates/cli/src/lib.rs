//! Experiment runner behind the `esid` command: config files, seeded runs,
//! trajectory and summary files, and the remote objective client.

pub mod config;
pub mod remote;
pub mod runner;
pub mod study;

use config::ConfigError;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_REMOTE: i32 = 3;

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<esid::Error>() {
        Some(esid::Error::Transport { .. }) => EXIT_REMOTE,
        Some(esid::Error::RemoteConfig(_) | esid::Error::InvalidSpec(_)) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}
