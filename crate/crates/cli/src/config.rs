//! `key = value` config files.
//!
//! Entries are turned into `--key value` flags placed right after the
//! subcommand, ahead of the user's own flags. Since every flag may be given
//! more than once and the last occurrence wins, command-line flags override
//! the file, which overrides built-in defaults.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::Command;

use crate::CliError;

/// `(key, value)` pairs of a config file, in order. Blank lines and lines
/// starting with `#` are skipped; values may be wrapped in double quotes.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

/// Locate `--config FILE` and the subcommand in `raw`.
fn scan(raw: &[OsString]) -> (Option<PathBuf>, Option<usize>) {
    let mut path = None;
    let mut sub = None;
    let mut i = 1;
    while i < raw.len() {
        let t = raw[i].to_string_lossy();
        if t == "--" {
            break;
        }
        if t == "--config" {
            path = raw.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = t.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else if sub.is_none() && !t.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    (path, sub)
}

pub fn expand(raw: Vec<OsString>, cli: &Command) -> Result<Vec<OsString>, CliError> {
    let (Some(path), Some(sub_at)) = scan(&raw) else {
        return Ok(raw);
    };
    let name = raw[sub_at].to_string_lossy().into_owned();
    let Some(sub) = cli.find_subcommand(&name) else {
        // Let the parser report the unknown subcommand.
        return Ok(raw);
    };
    let text = fs::read_to_string(&path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    let entries = parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;

    let mut flags: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| CliError::Usage(format!("{}: unknown key {key:?} for {name}", path.display())))?;
        if arg.get_action().takes_values() {
            flags.push(format!("--{key}").into());
            flags.push(value.into());
        } else {
            match value.as_str() {
                "true" => flags.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    return Err(CliError::Usage(format!(
                        "{}: {key} expects true or false, got {value:?}",
                        path.display()
                    )))
                }
            }
        }
    }
    let mut out = raw;
    out.splice(sub_at + 1..sub_at + 1, flags);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{CommandFactory, Parser};

    use crate::{Cli, Command as Sub};

    #[test]
    fn parses_comments_and_quotes() {
        let got = parse("# run\n\nepochs = 2\nout=\"a b.ckpt\"\n").unwrap();
        assert_eq!(got, vec![("epochs".into(), "2".into()), ("out".into(), "a b.ckpt".into())]);
        assert!(parse("epochs 2").is_err());
    }

    fn train_with(file: &str, args: &[&str]) -> crate::TrainArgs {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, file).unwrap();
        let mut raw: Vec<OsString> = vec!["monocnn".into(), "--config".into(), path.clone().into(), "train".into()];
        raw.extend(args.iter().map(OsString::from));
        let expanded = expand(raw, &Cli::command()).unwrap();
        match Cli::try_parse_from(expanded).unwrap().command {
            Sub::Train(t) => t,
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn flags_beat_file_beats_defaults() {
        let t = train_with("epochs = 7\nlr = 0.2\naugment = true\n", &["--lr", "0.3"]);
        assert_eq!(t.optim.epochs, 7);
        assert_eq!(t.optim.lr, 0.3);
        assert!(t.optim.augment);
        assert_eq!(t.optim.batch_size, 32);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        fs::write(&path, "epoch = 2\n").unwrap();
        let raw = vec!["monocnn".into(), "train".into(), "--config".into(), path.into()];
        assert!(matches!(expand(raw, &Cli::command()), Err(CliError::Usage(_))));
    }
}
