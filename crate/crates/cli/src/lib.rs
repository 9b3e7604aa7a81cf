//! The `vpf` command-line tool.

pub mod args;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

use args::Cli;

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<String> = argv
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    configure_threads();
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}

fn parse(argv: &[String]) -> Result<Cli, i32> {
    let clap_exit = |e: clap::Error| {
        let code = if e.use_stderr() { 1 } else { 0 };
        let _ = e.print();
        code
    };
    let cli = Cli::try_parse_from(argv).map_err(clap_exit)?;
    let Some(path) = cli.command.config().cloned() else {
        return Ok(cli);
    };
    let merged = std::fs::read_to_string(&path)
        .map_err(|e| vpf_core::Error::Io {
            path: path.clone(),
            source: e,
        })
        .and_then(|text| config::parse(&text, &path))
        .and_then(|entries| config::merge(argv, commands::name(&cli.command), &entries, &path));
    match merged {
        Ok(args) => Cli::try_parse_from(&args).map_err(clap_exit),
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            Err(e.exit_code())
        }
    }
}

/// Honors `VPF_THREADS` when it holds a positive integer.
fn configure_threads() {
    let Some(n) = std::env::var("VPF_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) else {
        return;
    };
    if n > 0 {
        // Fails only if a pool already exists, e.g. on a second in-process run.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
