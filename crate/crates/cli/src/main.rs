use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dsnav::config::Config;
use dsnav::diffusion::{train_with_progress, DiffusionPolicy};
use dsnav::experiments::{
    ablate_representation, ablate_scaling, ablate_vtoken, arms_csv, local_support_study, parse_arms, run_benchmark,
    suite_world, ArmResult, Suite,
};
use dsnav::expert::{astar_expert, build_dataset, load_dataset, save_dataset};
use dsnav::planner::run_episode;
use dsnav::plot::{deviation_svg, overlay_svg, scaling_svg};
use dsnav::seed::{derive_seed, streams};
use dsnav::selftest;
use log::info;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(name = "dsnav", version, about = "Diffusion-sampled B-spline local planning in 2D grid worlds")]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,
    /// Worker threads for parallel rollouts (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate expert demonstrations.
    GenData,
    /// Train the diffusion policy.
    Train(TrainArgs),
    /// Benchmark a trained policy.
    Eval(EvalArgs),
    /// Train and benchmark several arms of one study.
    Ablate {
        #[arg(value_enum)]
        study: Study,
    },
    /// Render figures.
    Plot {
        #[command(subcommand)]
        figure: Figure,
    },
    /// Check numerical kernels against reference computations.
    Selftest,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory from `gen-data`; generated on the fly when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    suite: Option<Suite>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Write per-step traces, world maps and overlays for the first N episodes.
    #[arg(long, default_value_t = 0)]
    traces: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Study {
    Repr,
    Vtoken,
    Scaling,
}

#[derive(Subcommand, Debug)]
enum Figure {
    /// SR/SPL against data fraction from an `ablate scaling` table.
    Scaling {
        #[arg(long)]
        arms: PathBuf,
    },
    /// Displacement after perturbing trailing anchors, B-spline vs cubic.
    Deviation {
        #[arg(long, default_value_t = 10)]
        draws: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
    },
}

fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_policy(path: &Path) -> Result<DiffusionPolicy> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(DiffusionPolicy::read_checkpoint(BufReader::new(f))?)
}

fn gen_data(cfg: &Config, out: &Path) -> Result<()> {
    let t = Instant::now();
    let ds = build_dataset(&cfg.data)?;
    let dir = out.join("data");
    save_dataset(&ds, &cfg.data, &dir)?;
    info!("{} samples from {} episodes in {:.1?}", ds.samples.len(), ds.episodes.len(), t.elapsed());
    println!("wrote {}", dir.display());
    Ok(())
}

fn train_cmd(cfg: &Config, out: &Path, args: &TrainArgs) -> Result<()> {
    let ds = match &args.data {
        Some(dir) => {
            let (ds, manifest) = load_dataset(dir)?;
            if manifest.config.representation != cfg.data.representation {
                bail!(
                    "dataset holds {} labels but the config asks for {}",
                    manifest.config.representation,
                    cfg.data.representation
                );
            }
            ds
        }
        None => {
            info!("no --data given; generating {} episodes", cfg.data.episodes);
            build_dataset(&cfg.data)?
        }
    };
    let t = Instant::now();
    let epochs = cfg.diffusion.epochs;
    let (mut policy, log) = train_with_progress(&ds, &cfg.diffusion, |epoch, loss| {
        if epoch % 10 == 0 || epoch + 1 == epochs {
            info!("epoch {epoch:>4}  loss {loss:.5}");
        }
    })?;
    policy.config_hash = dsnav::seed::config_hash(&(&cfg.data, &cfg.diffusion));
    let path = out.join("policy.ckpt");
    let mut w = BufWriter::new(File::create(&path)?);
    policy.write_checkpoint(&mut w)?;
    w.flush()?;
    write_json(&out.join("train_log.json"), &log)?;
    println!(
        "trained in {:.1?}: loss {:.4} -> {:.4}, wrote {}",
        t.elapsed(),
        log.initial_loss,
        log.final_loss,
        path.display()
    );
    Ok(())
}

fn eval_cmd(cfg: &Config, out: &Path, args: &EvalArgs) -> Result<()> {
    let policy = load_policy(&args.model)?;
    if policy.kind != cfg.data.representation {
        info!("checkpoint decodes {}; config says {}", policy.kind, cfg.data.representation);
    }
    let mut eval = cfg.eval.clone();
    if let Some(s) = args.suite {
        eval.suite = s;
    }
    if let Some(n) = args.episodes {
        eval.episodes = n;
    }
    let t = Instant::now();
    let bench = run_benchmark(&policy, &cfg.data.world, &eval, &cfg.planner)?;
    fs::write(out.join("episodes.csv"), bench.to_csv())?;
    let summary = serde_json::json!({
        "suite": bench.suite.as_str(),
        "episodes": bench.records.len(),
        "sr": bench.sr,
        "spl": bench.spl,
        "heading_oscillation": bench.mean_heading_oscillation,
        "collisions": bench.records.iter().filter(|r| r.collided).count(),
        "config_hash": bench.config_hash,
        "seeds": bench.seeds,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{}: SR {:.1}%  SPL {:.1}%  oscillation {:.3} rad  ({} episodes, {:.1?})",
        bench.suite.as_str(),
        bench.sr,
        bench.spl,
        bench.mean_heading_oscillation,
        bench.records.len(),
        t.elapsed()
    );

    if args.traces > 0 {
        let dir = out.join("traces");
        fs::create_dir_all(&dir)?;
        for i in 0..args.traces.min(eval.episodes) {
            let w = suite_world(eval.suite, &cfg.data.world, eval.seed, i)?;
            let mut steps = Vec::new();
            let seed = derive_seed(eval.seed, streams::EPISODE, i as u64);
            run_episode(&policy, &w.grid, w.start, w.goal, &cfg.planner, seed, Some(&mut steps))?;
            let mut f = BufWriter::new(File::create(dir.join(format!("episode_{i:03}.jsonl")))?);
            for s in &steps {
                serde_json::to_writer(&mut f, s)?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
            fs::write(dir.join(format!("world_{i:03}.txt")), w.grid.to_text())?;
            let executed: Vec<_> = std::iter::once(w.start).chain(steps.iter().flat_map(|s| s.executed.iter().copied())).collect();
            let reference = astar_expert(&w.grid, w.start, w.goal, cfg.planner.robot_radius, 0.0, w.seed).ok();
            let svg = overlay_svg(&w.grid, w.start, w.goal, &executed, reference.as_ref().map(|e| e.expert_path.as_slice()), &[]);
            fs::write(dir.join(format!("overlay_{i:03}.svg")), svg)?;
        }
        println!("wrote {} traces to {}", args.traces.min(eval.episodes), dir.display());
    }
    Ok(())
}

fn ablate_cmd(cfg: &Config, out: &Path, study: Study) -> Result<()> {
    let acfg = cfg.ablation_config();
    let t = Instant::now();
    let (name, arms): (&str, Vec<ArmResult>) = match study {
        Study::Repr => ("repr", ablate_representation(&acfg)?),
        Study::Vtoken => ("vtoken", ablate_vtoken(&acfg)?),
        Study::Scaling => ("scaling", ablate_scaling(&acfg)?),
    };
    let csv = arms_csv(&arms);
    fs::write(out.join(format!("ablate_{name}.csv")), &csv)?;
    write_json(&out.join(format!("ablate_{name}.json")), &arms)?;
    if let Study::Scaling = study {
        fs::write(out.join("scaling.svg"), scaling_svg(&arms, &acfg.fractions))?;
    }
    print!("{csv}");
    println!("({:.1?})", t.elapsed());
    Ok(())
}

fn plot_cmd(cfg: &Config, out: &Path, figure: &Figure) -> Result<()> {
    match figure {
        Figure::Scaling { arms } => {
            let text = fs::read_to_string(arms).with_context(|| format!("reading {}", arms.display()))?;
            let arms = parse_arms(&text)?;
            let fractions: Vec<f64> = arms
                .iter()
                .map(|a| a.label.trim_end_matches('%').parse::<f64>().map(|p| p / 100.0))
                .collect::<Result<_, _>>()
                .context("arm labels must be percentages")?;
            let path = out.join("scaling.svg");
            fs::write(&path, scaling_svg(&arms, &fractions))?;
            println!("wrote {}", path.display());
        }
        Figure::Deviation { draws, radius } => {
            let study = local_support_study(cfg.seed, *draws, *radius)?;
            let path = out.join("deviation.svg");
            fs::write(&path, deviation_svg(&study))?;
            write_json(&out.join("deviation.json"), &study)?;
            println!(
                "first span (s <= {:.2} m): B-spline mean {:.2e} m, cubic mean {:.2e} m; wrote {}",
                study.span_end,
                study.bspline_first_span.0,
                study.cubic_first_span.0,
                path.display()
            );
        }
    }
    Ok(())
}

fn selftest_cmd(out: &Path) -> Result<()> {
    let checks = selftest::run_all();
    for c in &checks {
        println!("{} {:<32} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    write_json(&out.join("selftest.json"), &checks)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let cfg = resolve_config(&cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    cfg.write_snapshot(&cli.out)?;
    match &cli.command {
        Command::GenData => gen_data(&cfg, &cli.out),
        Command::Train(a) => train_cmd(&cfg, &cli.out, a),
        Command::Eval(a) => eval_cmd(&cfg, &cli.out, a),
        Command::Ablate { study } => ablate_cmd(&cfg, &cli.out, *study),
        Command::Plot { figure } => plot_cmd(&cfg, &cli.out, figure),
        Command::Selftest => selftest_cmd(&cli.out),
    }
}
