use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use regcl::data::{apply_filter, load_sparse_text, save_sparse_text, FeatureFilter};
use regcl::harness::{parse_config, parse_seed_list, Overrides, RunConfig};
use regcl::metrics::{flip_rates, ClassSel};
use regcl::scenarios::ScenarioKind;
use regcl::snapshot::ModelSnapshot;
use regcl::synth::{synth_cil_generate, synth_dil_generate, GOODWARE, MALWARE};
use regcl::{Error, Result};

#[derive(Parser)]
#[command(name = "regcl", version, about = "Continual learning with update-regression metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment matrix from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seed list, overrides the file.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep every snapshot instead of the last two.
        #[arg(long)]
        keep_all: bool,
    },
    /// Flip audit between two snapshots on a sparse-text test file.
    Eval {
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        new: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum)]
        class: ClassArg,
        /// Feature filter written by `run`, applied to the test file first.
        #[arg(long)]
        filter: Option<PathBuf>,
    },
    /// Write a synthetic dataset as sparse text.
    Synth {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config file whose `[synth]` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Mw,
    Gw,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Dil,
    Cil,
}

fn cmd_run(config: &Path, seeds: Option<&str>, out: Option<PathBuf>, keep_all: bool) -> Result<()> {
    let seeds = seeds.map(parse_seed_list).transpose()?;
    let cfg = parse_config(config, &Overrides { seeds, out, keep_all })?;
    let outcome = regcl::harness::run(&cfg)?;
    print!("{}", regcl::harness::report::render_summary(&outcome.report));
    for s in &outcome.manifest.seeds {
        if let Some(e) = &s.error {
            eprintln!("seed {} failed: {e}", s.seed);
        }
    }
    println!("\nreports written to {}", cfg.output.dir.display());
    Ok(())
}

fn cmd_eval(old: &Path, new: &Path, test: &Path, class: ClassArg, filter: Option<&Path>) -> Result<()> {
    let old = ModelSnapshot::load(old)?;
    let new = ModelSnapshot::load(new)?;
    let mut data = load_sparse_text(test, false)?;
    if let Some(f) = filter {
        let f = FeatureFilter::read(BufReader::new(fs::File::open(f)?))?;
        data = apply_filter(&f, &data)?;
    }
    let classes = new.model().output_dim();
    if let Some(bad) = data.labels().into_iter().find(|&y| y >= classes) {
        return Err(Error::Input(format!("test label {bad} outside the model's {classes} classes")));
    }
    let refs = data.refs();
    let old_preds = old.predict(&refs)?;
    let new_preds = new.predict(&refs)?;
    let sel = match class {
        ClassArg::Mw => ClassSel::Class(MALWARE),
        ClassArg::Gw => ClassSel::Class(GOODWARE),
        ClassArg::All => ClassSel::All,
    };
    match flip_rates(&old_preds, &new_preds, &data.labels(), sel)? {
        Some(f) => println!("n={} nf={} pf={} nfr={:.6} pfr={:.6}", f.n, f.nf, f.pf, f.nfr, f.pfr),
        None => println!("n=0 nfr=absent pfr=absent"),
    }
    Ok(())
}

fn cmd_synth(scenario: ScenarioArg, out: &Path, seed: u64, config: Option<&Path>) -> Result<()> {
    let kind = match scenario {
        ScenarioArg::Dil => ScenarioKind::Dil,
        ScenarioArg::Cil => ScenarioKind::Cil,
    };
    let synth = match config {
        Some(p) => parse_config(p, &Overrides::default())?.synth,
        None => RunConfig::new(kind).synth,
    };
    let stream = match kind {
        ScenarioKind::Dil => synth_dil_generate(&synth, seed)?,
        ScenarioKind::Cil => synth_cil_generate(&synth, seed)?,
    };
    fs::create_dir_all(out)?;
    save_sparse_text(out.join("dataset.txt"), &stream.all_samples())?;
    for e in stream.experiences() {
        save_sparse_text(out.join(format!("exp_{}_train.txt", e.id)), e.train.samples())?;
        save_sparse_text(out.join(format!("exp_{}_test.txt", e.id)), e.test.samples())?;
    }
    println!("{} experiences written to {}", stream.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { config, seeds, out, keep_all } => cmd_run(&config, seeds.as_deref(), out, keep_all),
        Command::Eval { old, new, test, class, filter } => cmd_eval(&old, &new, &test, class, filter.as_deref()),
        Command::Synth { scenario, out, seed, config } => cmd_synth(scenario, &out, seed, config.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("regcl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
