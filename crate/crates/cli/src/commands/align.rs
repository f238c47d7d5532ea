use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use lrf_core::align::{alignment_loss, fit_decoder, save_decoder, FitConfig, PairedSample, SplitTag};

#[derive(Args)]
pub struct AlignArgs {
    /// Pairs directory: {id}.lrf + {id}.png + split.txt (`id train|novel`).
    #[arg(long)]
    pairs: PathBuf,

    /// Output decoder path.
    #[arg(long)]
    out: PathBuf,

    /// FitConfig as JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_pairs(dir: &PathBuf) -> Result<Vec<PairedSample>> {
    let split_path = dir.join("split.txt");
    let text = std::fs::read_to_string(&split_path)
        .with_context(|| format!("cannot read {}", split_path.display()))?;
    let mut samples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(id), Some(tag), None) = (it.next(), it.next(), it.next()) else {
            bail!("{}: line {}: expected 'id train|novel'", split_path.display(), idx + 1);
        };
        let split = match tag {
            "train" => SplitTag::Train,
            "novel" | "test" => SplitTag::Novel,
            other => bail!("{}: line {}: unknown split '{other}'", split_path.display(), idx + 1),
        };
        let latent = lrf_core::latent::read_lrf(dir.join(format!("{id}.lrf")))
            .with_context(|| format!("latent for pair '{id}'"))?;
        let image = lrf_core::latent::read_png(dir.join(format!("{id}.png")))
            .with_context(|| format!("image for pair '{id}'"))?;
        samples.push(PairedSample::new(latent, image, split)?);
    }
    if samples.is_empty() {
        bail!("{} lists no pairs", split_path.display());
    }
    Ok(samples)
}

pub fn run(args: AlignArgs, seed_override: Option<u64>) -> Result<i32> {
    let mut config: FitConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("bad align config {}", path.display()))?
        }
        None => FitConfig::default(),
    };
    if let Some(seed) = seed_override {
        config.seed = seed;
    }

    let samples = load_pairs(&args.pairs)?;
    let n_train = samples.iter().filter(|s| s.split == SplitTag::Train).count();
    eprintln!(
        "fitting decoder on {} pairs ({} train, {} novel), {} iterations",
        samples.len(),
        n_train,
        samples.len() - n_train,
        config.iterations
    );
    let decoder = fit_decoder(&samples, &config)?;
    let (final_loss, _) =
        alignment_loss(&decoder, &samples, config.lambda_train, config.lambda_novel)?;
    save_decoder(&args.out, &decoder)?;
    eprintln!("final alignment loss {final_loss:.6}");
    println!("{}", args.out.display());
    Ok(0)
}
