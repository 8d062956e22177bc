//! `cxmri train`: drive a training run from a key=value config file.

use std::path::Path;

use super::{help_text, Args};
use crate::error::Result;
use crate::io::read_kv_file;
use crate::metrics::mean_std;
use crate::train::{train, TrainConfig};

const FLAGS: &[(&str, &str)] = &[("config", "path to a key=value config file (required)")];

pub fn run(argv: &[String]) -> Result<()> {
    let Some(args) = Args::parse(
        argv,
        FLAGS,
        &help_text(
            "train",
            "Train a reconstruction network. Config keys: model, conv, activation,\n\
             iterations, feature_maps, denoiser_layers, convs_per_level, kernel, lr,\n\
             beta1, beta2, epsilon, batch, steps, seed, checkpoint_every, data, out.",
            FLAGS,
        ),
    )?
    else {
        return Ok(());
    };
    let cfg = TrainConfig::from_kv(&read_kv_file(Path::new(args.require("config")?))?)?;
    let outcome = train(&cfg)?;
    println!(
        "trained {} steps; best checkpoint at step {} (val NRMSE {:.4})",
        cfg.steps, outcome.best_step, outcome.best_val_nrmse
    );
    if !outcome.test_reports.is_empty() {
        let nrmse: Vec<f64> = outcome.test_reports.iter().map(|r| r.nrmse).collect();
        let (m, s) = mean_std(&nrmse);
        println!("test NRMSE {m:.4} +/- {s:.4} over {} examples", nrmse.len());
    }
    println!("outputs in {}", outcome.out_dir.display());
    Ok(())
}
