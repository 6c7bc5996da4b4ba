//! `--config FILE` support.
//!
//! The file is TOML with one table per subcommand. Keys are flag names
//! without the leading dashes:
//!
//! ```toml
//! [train]
//! noise-family = "sas"
//! alpha = 1.9
//! snr = 25
//! epochs = 30
//!
//! [bench]
//! preset = "fig4-desk"
//! train-missing = true
//! ```
//!
//! Entries become flags placed before the ones given on the command line,
//! so an explicit flag always wins.

use std::fs;

use anyhow::{anyhow, bail, Context, Result};

/// Returns `argv` with the `--config` file of the subcommand expanded in
/// place. Without `--config` the input is returned unchanged.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let (path, consumed) = match argv[pos].strip_prefix("--config=") {
        Some(p) => (p.to_owned(), 1),
        None => (
            argv.get(pos + 1).cloned().ok_or_else(|| anyhow!("--config needs a file"))?,
            2,
        ),
    };
    // first non-flag argument after the program name is the subcommand
    let sub_pos = argv
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| !a.starts_with('-'))
        .map(|(i, _)| i)
        .filter(|&i| i < pos)
        .ok_or_else(|| anyhow!("--config must follow a subcommand"))?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let table: toml::Table = text.parse().with_context(|| format!("parsing config {path}"))?;
    let sub = &argv[sub_pos];
    let mut injected = Vec::new();
    if let Some(section) = table.get(sub) {
        let section = section
            .as_table()
            .ok_or_else(|| anyhow!("[{sub}] in {path} is not a table"))?;
        for (key, value) in section {
            push_flag(&mut injected, key, value).with_context(|| format!("{path}: [{sub}] {key}"))?;
        }
    }
    let mut out = Vec::with_capacity(argv.len() + injected.len());
    out.extend_from_slice(&argv[..=sub_pos]);
    out.extend(injected);
    for (i, a) in argv.iter().enumerate().skip(sub_pos + 1) {
        if i < pos || i >= pos + consumed {
            out.push(a.clone());
        }
    }
    Ok(out)
}

fn push_flag(out: &mut Vec<String>, key: &str, value: &toml::Value) -> Result<()> {
    let flag = format!("--{key}");
    match value {
        toml::Value::Boolean(true) => out.push(flag),
        toml::Value::Boolean(false) => {}
        toml::Value::String(s) => out.extend([flag, s.clone()]),
        toml::Value::Integer(i) => out.extend([flag, i.to_string()]),
        toml::Value::Float(f) => out.extend([flag, f.to_string()]),
        _ => bail!("only strings, numbers and booleans are supported"),
    }
    Ok(())
}
