//! `key = value` config files. Keys are long flag names; values are merged
//! in front of the real arguments so the command line wins.

use std::path::Path;

use clap::CommandFactory;
use vpf_core::{Error, Result};

use crate::args::Cli;

pub fn parse(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Invalid(format!(
                "{}:{}: expected `key = value`",
                origin.display(),
                i + 1
            )));
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        out.push((key, v.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

/// Returns `argv` with config entries inserted right after the subcommand.
pub fn merge(argv: &[String], subcommand: &str, entries: &[(String, String)], origin: &Path) -> Result<Vec<String>> {
    let cmd = Cli::command();
    let sub = cmd
        .find_subcommand(subcommand)
        .ok_or_else(|| Error::Invalid(format!("unknown subcommand {subcommand}")))?;
    let pos = argv
        .iter()
        .position(|a| a == subcommand)
        .ok_or_else(|| Error::Invalid(format!("subcommand {subcommand} missing from arguments")))?;
    let mut injected = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::Invalid(format!("{}: `{key}` is not a flag of {subcommand}", origin.display())))?;
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}"));
            injected.push(value.clone());
        } else {
            match value.as_str() {
                "true" | "on" | "yes" | "1" => injected.push(format!("--{key}")),
                "false" | "off" | "no" | "0" => {}
                _ => {
                    return Err(Error::Invalid(format!(
                        "{}: `{key}` is a switch; use true or false",
                        origin.display()
                    )))
                }
            }
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let e = parse("# run\nepochs = 3  # short\n\nn_ped=2\n--lr = \"0.01\"\n", Path::new("c")).unwrap();
        assert_eq!(
            e,
            vec![
                ("epochs".into(), "3".into()),
                ("n-ped".into(), "2".into()),
                ("lr".into(), "0.01".into())
            ]
        );
        assert!(parse("epochs 3", Path::new("c")).is_err());
    }

    #[test]
    fn command_line_follows_config() {
        let argv: Vec<String> = ["vpf", "train", "--epochs", "5"].iter().map(|s| s.to_string()).collect();
        let entries = vec![("epochs".to_string(), "3".to_string()), ("lr".to_string(), "0.1".to_string())];
        let merged = merge(&argv, "train", &entries, Path::new("c")).unwrap();
        assert_eq!(merged, ["vpf", "train", "--epochs", "3", "--lr", "0.1", "--epochs", "5"]);
        assert!(merge(&argv, "train", &[("bogus".into(), "1".into())], Path::new("c")).is_err());
        let sw = merge(&argv, "eval", &[], Path::new("c"));
        assert!(sw.is_err());
    }
}
