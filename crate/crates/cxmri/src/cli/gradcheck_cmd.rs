//! `cxmri gradcheck`: run the finite-difference suite and report the worst
//! relative error per operation kind.

use super::{help_text, Args};
use crate::error::{Error, Result};
use crate::suite::{gradient_suite, GRADIENT_TOLERANCE};

const FLAGS: &[(&str, &str)] = &[
    ("step", "central-difference step (default 1e-5)"),
    ("seed", "sampling seed (default 17)"),
];

pub fn run(argv: &[String]) -> Result<()> {
    let Some(args) = Args::parse(
        argv,
        FLAGS,
        &help_text("gradcheck", "Check every backward rule against central differences.", FLAGS),
    )?
    else {
        return Ok(());
    };
    let step = args.num("step", 1e-5f64)?;
    let seed = args.num("seed", 17u64)?;
    let results = gradient_suite(step, seed)?;
    let mut failures = 0;
    for (name, err) in &results {
        let status = if *err <= GRADIENT_TOLERANCE { "ok" } else { "FAIL" };
        println!("gradcheck {name:<22} max relative error {err:.3e}  {status}");
        if *err > GRADIENT_TOLERANCE {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::Numerical(format!(
            "{failures} operation(s) above the {GRADIENT_TOLERANCE:.0e} gradient tolerance"
        )));
    }
    Ok(())
}
