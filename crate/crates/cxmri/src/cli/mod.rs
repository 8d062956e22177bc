//! Command-line surface. Exit codes: 0 success, 1 usage error, 2 data or
//! invariant error, 3 numerical failure.

mod compare;
mod gradcheck_cmd;
mod phantom;
mod recon;
mod train_cmd;
mod verify;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

const USAGE: &str = "usage: cxmri <command> [flags]

commands:
  phantom    generate a synthetic multi-coil dataset
  train      train a reconstruction network from a key=value config
  compare    sweep real/complex modes, activations, widths and depths
  gradcheck  run the finite-difference gradient suite
  verify     audit every invariant of a generated dataset
  recon      reconstruct one example and export PNG + metrics

run `cxmri <command> --help` for the command's flags";

/// Flag table: `--name value` pairs, validated against an allow-list.
pub(crate) struct Args {
    values: BTreeMap<String, String>,
}

impl Args {
    fn parse(argv: &[String], allowed: &[(&str, &str)], help: &str) -> Result<Option<Args>> {
        let mut values = BTreeMap::new();
        let mut i = 0;
        while i < argv.len() {
            let arg = &argv[i];
            if arg == "--help" || arg == "-h" {
                println!("{help}");
                return Ok(None);
            }
            let Some(name) = arg.strip_prefix("--") else {
                return Err(Error::Config(format!("unexpected argument '{arg}'")));
            };
            if !allowed.iter().any(|(a, _)| *a == name) {
                let list: Vec<&str> = allowed.iter().map(|(a, _)| *a).collect();
                return Err(Error::Config(format!(
                    "unknown flag '--{name}' (valid: --{})",
                    list.join(", --")
                )));
            }
            let Some(value) = argv.get(i + 1) else {
                return Err(Error::Config(format!("flag '--{name}' needs a value")));
            };
            if values.insert(name.to_string(), value.clone()).is_some() {
                return Err(Error::Config(format!("duplicate flag '--{name}'")));
            }
            i += 2;
        }
        Ok(Some(Args { values }))
    }

    pub(crate) fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&str> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing required flag '--{name}'")))
    }

    pub(crate) fn num<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for --{name}"))),
        }
    }
}

fn help_text(command: &str, summary: &str, allowed: &[(&str, &str)]) -> String {
    let mut text = format!("usage: cxmri {command} [flags]\n\n{summary}\n\nflags:\n");
    for (name, desc) in allowed {
        text.push_str(&format!("  --{name:<16} {desc}\n"));
    }
    text
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::NonFinite { .. }
        | Error::NonFiniteLoss { .. }
        | Error::Numerical(_)
        | Error::Diverged(_)
        | Error::LossNotScalar
        | Error::ZeroTarget(_) => 3,
        _ => 2,
    }
}

/// Entry point for the binary: dispatch, print errors, map to exit codes.
pub fn run(argv: &[String]) -> i32 {
    let Some(command) = argv.first() else {
        eprintln!("{USAGE}");
        return 1;
    };
    let rest = &argv[1..];
    let result = match command.as_str() {
        "phantom" => phantom::run(rest),
        "train" => train_cmd::run(rest),
        "compare" => compare::run(rest),
        "gradcheck" => gradcheck_cmd::run(rest),
        "verify" => verify::run(rest),
        "recon" => recon::run(rest),
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            return 0;
        }
        other => {
            eprintln!("unknown command '{other}'\n{USAGE}");
            return 1;
        }
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
