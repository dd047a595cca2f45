//! `uvavatar` command-line tool and HTTP service.

pub mod cli;
pub mod commands;
pub mod server;

use clap::Parser;
use std::ffi::OsString;

/// Exit code for bad input: missing files, malformed assets, invalid arguments.
pub const EXIT_USER: i32 = 1;
/// Exit code for a failed internal post-condition.
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    User(anyhow::Error),
    Internal(anyhow::Error),
}

impl CliError {
    pub fn user(e: impl Into<anyhow::Error>) -> Self {
        CliError::User(e.into())
    }

    pub fn internal(e: impl Into<anyhow::Error>) -> Self {
        CliError::Internal(e.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => EXIT_USER,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(e) => write!(f, "error: {e:#}"),
            CliError::Internal(e) => write!(f, "internal error: {e:#}"),
        }
    }
}

/// Engine errors come from inputs (assets, cameras, poses), so they map to exit 1.
impl From<uvavatar::Error> for CliError {
    fn from(e: uvavatar::Error) -> Self {
        CliError::User(e.into())
    }
}

/// Cap rayon's global pool from `AVATAR_THREADS`, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("AVATAR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::user(anyhow::anyhow!("AVATAR_THREADS must be a positive integer, got {value:?}")))?;
    // A second call in the same process (tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parse `args`, run the command and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match cli::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log).try_init();
    let result = configure_threads().and_then(|_| commands::run(cli));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
