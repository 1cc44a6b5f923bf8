use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use recobf::corpus::{build_bank, VideoId};
use recobf::denoiser::{denoise, repopulate};
use recobf::harness::{
    mi_tiny_world_study, personalization_study, sweep_alpha, ExperimentConfig, MetricRow, Pipeline,
    RunArtifacts, Stage, Table, TinyWorldConfig,
};
use recobf::metrics::ClassDistribution;
use recobf::world::CalibrationConfig;
use recobf::{Error, Result};

#[derive(Parser)]
#[command(
    name = "recobf",
    about = "Obfuscate-then-denoise experiments on a simulated recommender"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: desk, smoke or default.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or load) the corpus.
    GenCorpus(Common),
    /// Tune the world's noise so sock puppets hit the target norms.
    CalibrateWorld(Common),
    /// Generate training and evaluation personas and the world norms.
    GenPersonas(Common),
    TrainSurrogate(Common),
    /// Train the policy and build the baselines.
    TrainObfuscator(Common),
    /// Privacy of every obfuscator against the surrogate and the world.
    Evaluate(Common),
    TrainDenoiser(Common),
    /// Stealth and de-obfuscation detectors.
    Adversary(Common),
    /// Every stage of the main pipeline.
    Run(Common),
    /// Privacy and utility across obfuscation budgets.
    Sweep(Common),
    /// Personalized-objective policies against the standard one.
    Personalize(Common),
    /// Exact information study on a tiny world.
    MiStudy {
        /// TOML tiny-world config; defaults when absent.
        #[arg(long)]
        tiny: Option<PathBuf>,
        #[arg(long, default_value = "runs/mi")]
        output: PathBuf,
    },
    /// Estimate `C^u` for obfuscated personas read as JSON lines.
    Denoise {
        #[command(flatten)]
        common: Common,
        /// Lines of `{"user": [...], "obfuscated": [...], "c_o": [...]}`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Materialize a recommendation list for a class distribution.
    Repopulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated class masses.
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DenoiseInput {
    user: Vec<VideoId>,
    obfuscated: Vec<VideoId>,
    c_o: ClassDistribution,
}

#[derive(Serialize)]
struct DenoiseOutput {
    c_hat: ClassDistribution,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::desk(),
    };
    if let Some(o) = &c.output {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_table(t: &Table) {
    println!("# {}", t.name);
    for r in &t.rows {
        match r.stderr {
            Some(se) => println!("{}\t{:.6}\t±{:.6}\tn={}", r.metric, r.value, se, r.n),
            None => println!("{}\t{:.6}\tn={}", r.metric, r.value, r.n),
        }
    }
}

fn stage(c: &Common, stage: Stage) -> Result<()> {
    let mut p = Pipeline::new(load_config(c)?)?;
    p.run_until(stage)?;
    for t in &p.art.tables {
        print_table(t);
    }
    println!("artifacts: {}", p.art.dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus(c) => stage(&c, Stage::Corpus),
        Command::CalibrateWorld(c) => {
            let mut cfg = load_config(&c)?;
            cfg.calibration
                .get_or_insert_with(CalibrationConfig::default);
            let mut p = Pipeline::new(cfg)?;
            p.run_until(Stage::World)?;
            let w = p.world()?;
            println!(
                "{}",
                toml::to_string(w.config()).map_err(|e| Error::config(e.to_string()))?
            );
            Ok(())
        }
        Command::GenPersonas(c) => stage(&c, Stage::Personas),
        Command::TrainSurrogate(c) => stage(&c, Stage::Surrogate),
        Command::TrainObfuscator(c) => stage(&c, Stage::Obfuscators),
        Command::Evaluate(c) => stage(&c, Stage::Evaluate),
        Command::TrainDenoiser(c) => stage(&c, Stage::Denoiser),
        Command::Adversary(c) | Command::Run(c) => stage(&c, Stage::Adversary),
        Command::Sweep(c) => {
            let mut p = Pipeline::new(load_config(&c)?)?;
            print_table(&sweep_alpha(&mut p)?);
            Ok(())
        }
        Command::Personalize(c) => {
            let mut p = Pipeline::new(load_config(&c)?)?;
            print_table(&personalization_study(&mut p)?);
            Ok(())
        }
        Command::MiStudy { tiny, output } => {
            let cfg = match tiny {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
                    toml::from_str(&text).map_err(|e| Error::config(format!("toml: {e}")))?
                }
                None => TinyWorldConfig::default(),
            };
            cfg.validate()?;
            let report = mi_tiny_world_study(&cfg).map_err(|e| e.in_stage("mi-study"))?;
            let hash = recobf::rng::hash_ids(serde_json::to_vec(&cfg)?.into_iter().map(u64::from));
            let mut art = RunArtifacts::open(&output, &format!("{hash:016x}"))?;
            let mut t = Table::new("mi");
            for (name, v) in [
                ("h_c_u", report.h_c_u),
                ("i_all", report.i_all),
                ("i_co_vo", report.i_co_vo),
                ("i_vu_given_co_vo", report.i_vu_given_co_vo),
                ("chain_residual", report.chain_residual),
                ("i_vu", report.i_vu),
                ("i_co_given_vu", report.i_co_given_vu),
                ("i_vo_given_co_vu", report.i_vo_given_co_vu),
                ("expanded_chain_residual", report.expanded_chain_residual),
                ("bayes_loss_with_user", report.bayes_loss_with_user),
                ("bayes_loss_without_user", report.bayes_loss_without_user),
            ] {
                t.push(MetricRow::new(name, v, report.cells));
            }
            art.write_json("mi.json", &report)?;
            print_table(&t);
            art.write_table(t)?;
            Ok(())
        }
        Command::Denoise { common, input } => {
            let mut p = Pipeline::new(load_config(&common)?)?;
            let corpus = p.corpus()?;
            let model = p.denoiser()?;
            let reader = BufReader::new(std::fs::File::open(&input)?);
            let mut out = std::io::stdout().lock();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let s: DenoiseInput = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: input.clone(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
                let c_hat = denoise(&model, &corpus, &s.user, &s.obfuscated, &s.c_o)?;
                serde_json::to_writer(&mut out, &DenoiseOutput { c_hat })?;
                writeln!(out)?;
            }
            Ok(())
        }
        Command::Repopulate {
            common,
            target,
            count,
        } => {
            let mut p = Pipeline::new(load_config(&common)?)?;
            let corpus = p.corpus()?;
            let masses: Vec<f64> = target
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::config(format!("--target: {e}")))?;
            let target = ClassDistribution::from_counts(&masses)?;
            let bank = build_bank(&corpus, &[], &p.cfg.bank)?.bank;
            let r = repopulate(&bank, &target, count)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            match e {
                Error::Config(_) | Error::Parse { .. } | Error::Format { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
