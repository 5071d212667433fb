//! Command-line front end over [`crate::pipeline`].

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::pipeline::{
    analyze_model, build_vocabulary, encode_items, evaluate_model, export_item_embeddings, preprocess, train_model,
    PipelineError, RunConfig, Workdir,
};
use crate::training::StrategyKind;
use crate::verbalize::SessionGeometry;

#[derive(Debug, Parser)]
#[command(name = "textrec", about = "Text-matching sequential recommendation pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    /// inbatch, random, popular or hard.
    #[arg(long, global = true)]
    pub strategy: Option<StrategyKind>,
    /// Session geometry, e.g. 2x256.
    #[arg(long, global = true)]
    pub sessions: Option<SessionGeometry>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter interactions and write leave-one-out splits.
    Preprocess,
    /// Build the word vocabulary from item texts.
    BuildVocab,
    /// Train a checkpoint.
    Train {
        /// Start from this checkpoint; required by the hard strategy.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
    },
    /// Embed every catalog item.
    Encode(CheckpointArg),
    /// Full-catalog ranking metrics.
    Evaluate {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        /// Drop each user's history items from the ranking.
        #[arg(long)]
        mask_history: bool,
    },
    /// Long-tail and popularity-bias report.
    Analyze(CheckpointArg),
    /// Labeled embeddings of sampled popular and other items.
    ExportEmbeddings(CheckpointArg),
}

#[derive(Debug, Args)]
pub struct CheckpointArg {
    /// Defaults to `<workdir>/model-<strategy>.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Merge file, flags and subcommand options into one config.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let g = &cli.global;
    let mut config = match &g.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for o in &g.overrides {
        let (k, v) =
            o.split_once('=').ok_or_else(|| PipelineError::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(w) = &g.workdir {
        config.paths.workdir = w.clone();
    }
    if let Some(kind) = g.strategy {
        let k = config.strategy.negatives_per_example;
        config.strategy.kind = kind;
        if kind == StrategyKind::InbatchOnly {
            config.strategy.negatives_per_example = 0;
        } else if k == 0 {
            config.strategy.negatives_per_example = 9;
        }
    }
    if let Some(s) = g.sessions {
        config.sessions = s;
    }
    if let Some(t) = g.threads {
        config.threads = t;
    }
    if let Command::Evaluate { mask_history: true, .. } = cli.command {
        config.eval.mask_history = true;
    }
    config.validate()?;
    Ok(config)
}

fn checkpoint_path(config: &RunConfig, arg: &CheckpointArg) -> PathBuf {
    arg.checkpoint
        .clone()
        .unwrap_or_else(|| Workdir(config.paths.workdir.clone()).default_checkpoint(config.strategy.kind))
}

/// Run one command, writing progress to `out`. Returns a short summary line.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<String, PipelineError> {
    let config = resolve_config(cli)?;
    let _ = writeln!(out, "# effective config");
    let _ = write!(out, "{}", config.render());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Preprocess => {
            let s = preprocess(&config)?;
            Ok(format!(
                "users {} items {} actions {} train {} dev {} test {}",
                s.users, s.items, s.actions, s.train, s.dev, s.test
            ))
        }
        Command::BuildVocab => {
            let v = build_vocabulary(&config)?;
            Ok(format!("vocabulary of {} tokens", v.len()))
        }
        Command::Train { init_checkpoint } => {
            let s = train_model(&config, init_checkpoint.as_deref())?;
            Ok(format!("{} after {} steps, final loss {:.6}", s.checkpoint.display(), s.steps, s.final_loss))
        }
        Command::Encode(arg) => {
            let path = encode_items(&config, &checkpoint_path(&config, arg))?;
            Ok(format!("wrote {}", path.display()))
        }
        Command::Evaluate { checkpoint, .. } => {
            let r = evaluate_model(&config, &checkpoint_path(&config, checkpoint))?;
            let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
            Ok(format!("{} users on {}: {}", r.users, r.split, metrics.join(" ")))
        }
        Command::Analyze(arg) => {
            let r = analyze_model(&config, &checkpoint_path(&config, arg))?;
            Ok(format!(
                "threshold {} tail ratio {:.3} popular ratio {:.3} dist-1 {:.3} dist-2 {:.3} bleu-4 {:.4}",
                r.threshold, r.achieved_ratio, r.popular_ratio, r.dist_1, r.dist_2, r.bleu4
            ))
        }
        Command::ExportEmbeddings(arg) => {
            let path = export_item_embeddings(&config, &checkpoint_path(&config, arg))?;
            Ok(format!("wrote {}", path.display()))
        }
    })
}

/// Parse `args`, run, and map the outcome to an exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match execute(&cli, out) {
        Ok(summary) => {
            let _ = writeln!(out, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn flags_override_file_defaults() {
        let cli = parse(&[
            "textrec",
            "evaluate",
            "--mask-history",
            "--seed",
            "9",
            "--sessions",
            "4x8",
            "--strategy",
            "popular",
            "--set",
            "model.hidden_dim=16",
        ]);
        let c = resolve_config(&cli).unwrap();
        assert!(c.eval.mask_history);
        assert_eq!(c.seed, 9);
        assert_eq!(c.sessions, SessionGeometry::new(4, 8));
        assert_eq!(c.strategy.kind, StrategyKind::Popular);
        assert_eq!(c.model.hidden_dim, 16);

        let c = resolve_config(&parse(&["textrec", "train", "--strategy", "inbatch"])).unwrap();
        assert_eq!(c.strategy.negatives_per_example, 0);
    }

    #[test]
    fn bad_input_exit_codes() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["textrec", "frobnicate"], &mut out, &mut err), 2);
        assert_eq!(run(["textrec", "train", "--set", "model.width=1"], &mut out, &mut err), 2);
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.tsv");
        let code = run(
            [
                "textrec".into(),
                "preprocess".into(),
                "--workdir".into(),
                dir.path().as_os_str().to_owned(),
                "--set".into(),
                format!("paths.interactions={}", missing.display()).into(),
            ] as [OsString; 6],
            &mut out,
            &mut err,
        );
        assert_eq!(code, 3);
        assert!(String::from_utf8_lossy(&err).contains("nope.tsv"));
    }
}
