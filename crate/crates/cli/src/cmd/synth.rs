use std::path::PathBuf;

use acton::persist::save_dataset;
use acton::synthgen::{generate_cohort_with, SynthConfig};
use clap::Args;

use crate::failure::{CmdResult, Failure};
use crate::manifest::Recorder;
use crate::settings::{env_seed, flag, layered, read_config};
use crate::Global;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    /// Seconds per sample
    #[arg(long, value_name = "SECONDS")]
    sampling_period: Option<u32>,
    /// Fraction of subjects written to the labels file
    #[arg(long)]
    labeled_fraction: Option<f64>,
    /// Positive-class prevalence of the binary tasks
    #[arg(long)]
    prevalence: Option<f64>,
}

pub fn run(g: &Global, a: SynthArgs) -> CmdResult {
    let mut defaults = SynthConfig::default();
    flag(&mut defaults.seed, env_seed()?);
    let mut cfg = layered(defaults, &read_config(g.config.as_deref())?)?;
    flag(&mut cfg.seed, a.seed);
    flag(&mut cfg.n_subjects, a.subjects);
    flag(&mut cfg.days, a.days);
    flag(&mut cfg.sampling_period_s, a.sampling_period);
    flag(&mut cfg.labeled_fraction, a.labeled_fraction);
    flag(&mut cfg.binary_prevalence, a.prevalence);

    let mut rec = Recorder::new("synth");
    rec.seed("cohort", cfg.seed);
    let ds = generate_cohort_with(&cfg, g.threads > 1)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::data(&a.out, e))?;
    let (act, lab) = (a.out.join("activity.csv"), a.out.join("labels.csv"));
    save_dataset(&ds, &act, Some(&lab))?;
    rec.output(&act);
    rec.output(&lab);
    rec.finish(&cfg, &a.out.join("manifest.json"))?;
    println!(
        "{} subjects, {} labeled, {} samples each -> {}",
        ds.len(),
        ds.labels.len(),
        cfg.sequence_len(),
        a.out.display()
    );
    Ok(())
}
