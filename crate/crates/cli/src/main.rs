mod args;
mod commands;
mod output;
mod plot;
mod repro;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Turns `key = value` lines into `--key=value` flags.
fn config_flags(text: &str) -> Result<Vec<OsString>, String> {
    let mut flags = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", i + 1))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", i + 1));
        }
        flags.push(OsString::from(format!("--{key}={}", v.trim())));
    }
    Ok(flags)
}

/// Inserts the flags from `--config FILE` right after the subcommand so that
/// flags given on the command line override them. `synth` reads its config
/// file itself.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(sub) = argv.get(1).and_then(|s| s.to_str()) else {
        return Ok(argv);
    };
    if sub.starts_with('-') || sub == "synth" {
        return Ok(argv);
    }
    let mut path = None;
    for (i, a) in argv.iter().enumerate().skip(2) {
        let Some(s) = a.to_str() else { continue };
        if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        } else if s == "--config" {
            path = argv.get(i + 1).cloned();
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config {}: {e}", path.to_string_lossy()))?;
    let flags = config_flags(&text)?;
    let mut out = Vec::with_capacity(argv.len() + flags.len());
    out.extend_from_slice(&argv[..2]);
    out.extend(flags);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
