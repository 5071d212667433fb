//! Drive every CLI subcommand in-process over a synthetic corpus.

use textrec::cli::run;
use textrec::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("textrec-cli");
    std::fs::create_dir_all(&dir)?;
    generate(&SyntheticConfig::default()).write(&dir)?;
    let conf = dir.join("run.conf");
    std::fs::write(
        &conf,
        format!(
            "paths.interactions = {0}/interactions.tsv\npaths.items = {0}/items.jsonl\npaths.workdir = {0}/work\n\
             verbalize.attributes = title,follows\nverbalize.sessions = 2x16\n\
             train.lr = 1e-3\ntrain.total_steps = 200\nstrategy.k = 4\n",
            dir.display()
        ),
    )?;
    let conf = conf.display().to_string();
    for cmd in ["preprocess", "build-vocab", "train", "evaluate", "analyze", "export-embeddings", "encode"] {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(["textrec", "--config", &conf, "--strategy", "random", cmd], &mut out, &mut err);
        let out = String::from_utf8(out)?;
        println!("{cmd:<18} exit {code}  {}", out.lines().last().unwrap_or(""));
        if code != 0 {
            eprint!("{}", String::from_utf8(err)?);
            std::process::exit(code.into());
        }
    }
    Ok(())
}
