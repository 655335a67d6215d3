use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use lightd::gradcheck::{self, GradModule};
use lightd::harness::{load_manifest, run_batch, write_report, BackendKind, RunConfig};
use lightd::imagecore::{read_png, write_png};
use lightd::lightgen::{generate_lighting_image, Direction, LightingParams};
use lightd::metrics::{
    bleu, cider, niqe_fit, niqe_score, rouge_l, NiqeModel, NiqeOptions, TokenSeq,
};
use lightd::recommender::parse_hex_color;

#[derive(Parser)]
#[command(name = "lightd", version, about = "Adversarial relighting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attack every record of a manifest and write a report.
    Attack {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// surrogate or remote
        #[arg(long)]
        backend: Option<BackendKind>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render a reference lighting image.
    Lightgen {
        #[arg(long)]
        start: String,
        #[arg(long)]
        end: String,
        #[arg(long, default_value = "left_to_right")]
        direction: Direction,
        #[arg(long, default_value_t = 1.0)]
        weight: f64,
        /// Output size as HxW, e.g. 256x384
        #[arg(long)]
        size: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score candidate captions from a JSON-lines file of {id, candidate, references}.
    EvalCaptions {
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Fit a NIQE model on every PNG in a directory.
    NiqeFit {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = NiqeOptions::default().patch_size)]
        patch_size: usize,
    },
    /// Score one PNG against a fitted NIQE model.
    NiqeScore {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Run the finite-difference gradient suites.
    CheckGrad {
        #[arg(long)]
        module: Option<GradModule>,
        #[arg(long, default_value_t = gradcheck::DEFAULT_INSTANCES)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("size {s:?} is not HxW"))?;
    Ok((h.trim().parse()?, w.trim().parse()?))
}

fn attack(
    config: Option<PathBuf>,
    manifest: PathBuf,
    out: PathBuf,
    backend: Option<BackendKind>,
    endpoint: Option<String>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> Result<()> {
    let mut cfg = match &config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(kind) = backend {
        cfg.backend.kind = kind;
    }
    if endpoint.is_some() {
        cfg.backend.endpoint = endpoint;
    }
    if let Some(s) = seed {
        cfg.attack.seed = s;
    }
    if let Some(w) = workers {
        cfg.harness.workers = w;
    }
    let manifest = load_manifest(&manifest)?;
    let captions: Vec<String> = manifest
        .records
        .iter()
        .flat_map(|r| r.captions.iter().cloned())
        .collect();
    let backends = cfg.build_backends(&captions)?;
    if cfg.backend.kind == BackendKind::Remote {
        log::info!("caption and answer metrics need a captioner and are skipped in remote mode");
    }
    let report = run_batch(&cfg, &manifest, &backends)?;
    write_report(&report, &out)?;
    println!(
        "{} records ({} ok, {} failed) in {:.1}s; report in {}",
        report.records.len(),
        report.succeeded,
        report.failed,
        report.wall_time_secs,
        out.display()
    );
    for (k, v) in &report.means {
        println!("  mean {k:<14} {v:.6}");
    }
    Ok(())
}

#[derive(Deserialize)]
struct CaptionFixture {
    id: String,
    candidate: String,
    references: Vec<String>,
}

fn eval_captions(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: CaptionFixture =
            serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        items.push(item);
    }
    if items.is_empty() {
        bail!("no fixtures in {}", path.display());
    }
    let cands: Vec<TokenSeq> = items.iter().map(|f| TokenSeq::new(&f.candidate)).collect();
    let refs: Vec<Vec<TokenSeq>> = items
        .iter()
        .map(|f| f.references.iter().map(|r| TokenSeq::new(r)).collect())
        .collect();
    println!(
        "{:<16} {:>10} {:>10} {:>10}",
        "id", "BLEU-4", "ROUGE-L", "CIDEr"
    );
    let mut rouge_sum = 0.0;
    for (k, item) in items.iter().enumerate() {
        let b = bleu(&cands[k..k + 1], &refs[k..k + 1])?;
        let r = rouge_l(&cands[k], &refs[k])?;
        let c = cider(&cands[k..k + 1], &refs[k..k + 1], &refs)?;
        rouge_sum += r;
        println!("{:<16} {b:>10.6} {r:>10.6} {c:>10.6}", item.id);
    }
    println!(
        "{:<16} {:>10.6} {:>10.6} {:>10.6}",
        "corpus",
        bleu(&cands, &refs)?,
        rouge_sum / items.len() as f64,
        cider(&cands, &refs, &refs)?
    );
    Ok(())
}

fn niqe_fit_dir(dir: &Path, out: &Path, patch_size: usize) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    let images = paths
        .iter()
        .map(read_png)
        .collect::<lightd::Result<Vec<_>>>()?;
    let opts = NiqeOptions {
        patch_size,
        ..Default::default()
    };
    let model = niqe_fit(&images, &opts)?;
    model.save(out)?;
    println!(
        "fitted on {} images ({} patches); model in {}",
        model.meta.corpus_size,
        model.meta.patches,
        out.display()
    );
    Ok(())
}

fn check_grad(module: Option<GradModule>, instances: usize, seed: u64) -> Result<bool> {
    let modules = module
        .map(|m| vec![m])
        .unwrap_or_else(|| GradModule::ALL.to_vec());
    let mut ok = true;
    for m in modules {
        let started = Instant::now();
        let r = gradcheck::check(m, instances, seed)?;
        println!(
            "{} {:<9} instances={} max_rel_err={:.3e} tol={:.0e} ({:.2}s)",
            if r.passed() { "PASS" } else { "FAIL" },
            m.as_str(),
            r.instances,
            r.max_error(),
            r.tolerance,
            started.elapsed().as_secs_f64()
        );
        ok &= r.passed();
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Attack {
            config,
            manifest,
            out,
            backend,
            endpoint,
            seed,
            workers,
        } => attack(config, manifest, out, backend, endpoint, seed, workers)?,
        Command::Lightgen {
            start,
            end,
            direction,
            weight,
            size,
            out,
        } => {
            let (h, w) = parse_size(&size)?;
            let p = LightingParams::new(
                parse_hex_color(&start)?,
                parse_hex_color(&end)?,
                direction,
                weight,
            )?;
            write_png(&out, &generate_lighting_image(&p, h, w)?)?;
            println!("wrote {h}x{w} lighting image to {}", out.display());
        }
        Command::EvalCaptions { fixtures } => eval_captions(&fixtures)?,
        Command::NiqeFit {
            images,
            out,
            patch_size,
        } => niqe_fit_dir(&images, &out, patch_size)?,
        Command::NiqeScore { model, image } => {
            let model = NiqeModel::load(&model)?;
            println!("{:.6}", niqe_score(&model, &read_png(&image)?)?);
        }
        Command::CheckGrad {
            module,
            instances,
            seed,
        } => return check_grad(module, instances, seed),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
