//! TOML defaults merged into the argument list ahead of the user's flags.
//!
//! Top-level keys become global flags and the table named after the
//! subcommand (`[gen-data]`, `[bps.encode]`, ...) supplies its flags. Values
//! are inserted before the user's own arguments, so explicit flags override
//! them; keys whose environment variable is set are skipped so the
//! environment wins too.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const ENV_PREFIX: &str = "GRASPDIFF_";

const SUBCOMMANDS: [&str; 10] =
    ["gen-data", "train-sampler", "train-evaluator", "sample", "score", "refine", "ablate", "bench", "report", "bps"];

/// Config path from `--config` in `argv` or the environment.
pub fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    std::env::var_os(format!("{ENV_PREFIX}CONFIG")).map(PathBuf::from)
}

pub fn load(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    text.parse::<toml::Table>().map_err(|e| CliError::Config { path: path.to_path_buf(), detail: e.to_string() })
}

/// Returns `argv` with the config's flags spliced in.
pub fn merge(argv: Vec<OsString>, table: &toml::Table, path: &Path) -> Result<Vec<OsString>> {
    let tokens: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(sub) = tokens.iter().skip(1).position(|t| SUBCOMMANDS.contains(&t.as_str())).map(|i| i + 1) else {
        return Ok(argv);
    };
    let mut sub_end = sub + 1;
    let mut section = table.get(&tokens[sub]);
    if tokens[sub] == "bps" {
        if let Some(next) = tokens.get(sub + 1) {
            section = section.and_then(|s| s.get(next));
            sub_end += 1;
        }
    }

    let mut globals = Vec::new();
    for (key, value) in table {
        if value.is_table() {
            continue;
        }
        let env = format!("{ENV_PREFIX}{}", key.to_uppercase().replace('-', "_"));
        if std::env::var_os(env).is_some() {
            continue;
        }
        push_flag(&mut globals, key, value, path)?;
    }
    let mut local = Vec::new();
    if let Some(section) = section {
        let section = section.as_table().ok_or_else(|| CliError::Config {
            path: path.to_path_buf(),
            detail: format!("`{}` must be a table", tokens[sub]),
        })?;
        for (key, value) in section {
            if !value.is_table() {
                push_flag(&mut local, key, value, path)?;
            }
        }
    }

    let mut out: Vec<OsString> = vec![argv[0].clone()];
    out.extend(globals.into_iter().map(OsString::from));
    out.extend(argv[1..sub_end].iter().cloned());
    out.extend(local.into_iter().map(OsString::from));
    out.extend(argv[sub_end..].iter().cloned());
    Ok(out)
}

fn push_flag(out: &mut Vec<String>, key: &str, value: &toml::Value, path: &Path) -> Result<()> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &toml::Value| -> Result<String> {
        match v {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(i) => Ok(i.to_string()),
            toml::Value::Float(f) => Ok(f.to_string()),
            other => Err(CliError::Config { path: path.to_path_buf(), detail: format!("unsupported value for `{key}`: {other}") }),
        }
    };
    match value {
        toml::Value::Boolean(true) => out.push(flag),
        toml::Value::Boolean(false) => {}
        toml::Value::Array(items) => {
            let joined = items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(",");
            out.extend([flag, joined]);
        }
        v => out.extend([flag, scalar(v)?]),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<OsString> {
        s.split_whitespace().map(OsString::from).collect()
    }

    #[test]
    fn config_values_precede_user_flags() {
        let table: toml::Table = "threads = 2\n[gen-data]\nobjects = 7\nviews = 2\n".parse().unwrap();
        let merged = merge(args("graspdiff gen-data --objects 3 --out x"), &table, Path::new("c.toml")).unwrap();
        let merged: Vec<_> = merged.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(merged, ["graspdiff", "--threads", "2", "gen-data", "--objects", "7", "--views", "2", "--objects", "3", "--out", "x"]);
    }

    #[test]
    fn nested_sections_and_arrays() {
        let table: toml::Table = "[bps.encode]\nbasis_size = 16\n[bench]\nsigmas = [0.1, 0.2, 0.3]\nflag = true\n".parse().unwrap();
        let merged = merge(args("graspdiff bps encode --out y"), &table, Path::new("c.toml")).unwrap();
        assert_eq!(merged, args("graspdiff bps encode --basis-size 16 --out y"));
        let merged = merge(args("graspdiff bench"), &table, Path::new("c.toml")).unwrap();
        assert_eq!(merged, args("graspdiff bench --flag --sigmas 0.1,0.2,0.3"));
    }

    #[test]
    fn finds_the_config_path() {
        assert_eq!(config_path(&args("g --config a.toml gen-data")), Some(PathBuf::from("a.toml")));
        assert_eq!(config_path(&args("g gen-data --config=b.toml")), Some(PathBuf::from("b.toml")));
    }
}
