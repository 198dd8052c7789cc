//! Command-line harness: dataset generation, training, evaluation, and the
//! verification suite, all reproducible from a single seed. Every command
//! writes a manifest next to its outputs recording the full configuration.

mod manifest;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use gksn::datasets::{
    generate, load_frames, save_frames, split_frames, DatasetKind, GenConfig, OscillatorySpec,
    SplitProtocol,
};
use gksn::invariants::{FeatureConfig, FeatureKind, FeatureSet, Metric};
use gksn::network::{
    load_checkpoint, model_label, save_checkpoint, Checkpoint, Model, ModelKind, NetworkConfig,
    DEFAULT_POOL_WIDTH,
};
use gksn::training::{evaluate, train, TrainConfig};
use gksn::verify;

use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "gksn",
    version,
    about = "Invariant superposition networks: generate, train, evaluate, verify"
)]
struct Cli {
    /// Worker threads for batch work (1 = fully sequential). Results are
    /// bit-identical for any value. Env: GKSN_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of relaxed configurations.
    Gen(GenArgs),
    /// Train a model on a frames file.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a frames file.
    Eval(EvalArgs),
    /// Run numerical verification checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Dataset kind: lj | polymer
    #[arg(long)]
    kind: String,
    /// Particles per frame.
    #[arg(long)]
    m: usize,
    /// Spatial dimension.
    #[arg(long)]
    n: usize,
    /// Number of frames.
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pair-energy modulation: default (oscillatory) | zero
    #[arg(long, default_value = "default")]
    osc: String,
    /// Interaction length scale.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Polymer rest length.
    #[arg(long, default_value_t = 1.0)]
    dhat: f64,
    /// Relaxation learning rate.
    #[arg(long, default_value_t = 0.01)]
    em_lr: f64,
    /// Relaxation iterations.
    #[arg(long, default_value_t = 500)]
    em_iters: usize,
    /// Output frames file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Input frames file.
    #[arg(long)]
    data: PathBuf,
    /// Model kind: kan | mlp
    #[arg(long, default_value = "kan")]
    model: String,
    /// Permutation pooling front end: on | off
    #[arg(long, default_value = "off")]
    perm: String,
    /// Append the node index as a feature: true | false
    #[arg(long = "node-index", default_value = "false")]
    node_index: String,
    /// Pair against the first n rows only (true) or all points (false).
    #[arg(long, default_value = "true")]
    linear: String,
    /// Comma list from {n1,n12,inner,outer,cos,sin}.
    #[arg(long, default_value = "n1,n12,inner,outer")]
    features: String,
    /// Metric: euclidean | minkowski
    #[arg(long, default_value = "euclidean")]
    metric: String,
    /// Include atom types as features: true | false
    #[arg(long = "use-types", default_value = "false")]
    use_types: String,
    /// Architecture size preset: small | medium | large
    #[arg(long, default_value = "small")]
    size: String,
    /// Basis functions per univariate function.
    #[arg(long, default_value_t = 8)]
    basis: usize,
    /// Pool bank width (pooled models).
    #[arg(long = "pool-width", default_value_t = DEFAULT_POOL_WIDTH)]
    pool_width: usize,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 4092)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-9)]
    wd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Split protocol: 80/20 | md
    #[arg(long, default_value = "80/20")]
    split: String,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Output history CSV path.
    #[arg(long)]
    history: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Evaluate only the test part of the checkpoint's split protocol
    /// (default) or the whole file.
    #[arg(long, default_value = "split")]
    subset: String,
    /// Metrics JSON output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run the full check matrix.
    #[arg(long)]
    all: bool,
    /// Seeds per check family.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Run a single named check.
    #[arg(long)]
    check: Option<String>,
    /// Run only the negative controls and require them to fail.
    #[arg(long = "negative-controls")]
    negative_controls: bool,
    #[arg(long, default_value_t = 15)]
    m: usize,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_bool(value: &str, flag: &str) -> anyhow::Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        other => bail!("invalid value '{other}' for --{flag} (true/false)"),
    }
}

fn parse_features(list: &str) -> anyhow::Result<FeatureSet> {
    let mut set = FeatureSet::new();
    for part in list.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let kind: FeatureKind = part.parse()?;
        set.insert(kind);
    }
    if set.is_empty() {
        bail!("feature list is empty");
    }
    Ok(set)
}

fn parse_metric(s: &str) -> anyhow::Result<Metric> {
    match s {
        "euclidean" => Ok(Metric::Euclidean),
        "minkowski" => Ok(Metric::Minkowski),
        other => bail!("unknown metric '{other}' (euclidean/minkowski)"),
    }
}

fn parse_osc(s: &str) -> anyhow::Result<OscillatorySpec> {
    match s {
        "default" => Ok(OscillatorySpec::default()),
        "zero" => Ok(OscillatorySpec::zero()),
        other => bail!("unknown oscillation spec '{other}' (default/zero)"),
    }
}

fn main() {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("GKSN_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    let result = pool.install(|| match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(*args),
        Command::Eval(args) => cmd_eval(args),
        Command::Verify(args) => cmd_verify(args),
    });
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn cmd_gen(args: GenArgs) -> anyhow::Result<()> {
    let t0 = Instant::now();
    let kind: DatasetKind = args.kind.parse()?;
    let osc = parse_osc(&args.osc)?;
    let mut config = GenConfig::new(args.m, args.n, args.samples, args.seed);
    config.em_lr = args.em_lr;
    config.em_iters = args.em_iters;
    config.lj_a = args.a;
    config.bond_target = args.dhat;

    let frames = generate(kind, &config, &osc).context("generation failed")?;
    save_frames(&frames, &args.out)?;

    let manifest = RunManifest::new("gen", args.seed)
        .config(serde_json::json!({
            "kind": args.kind,
            "gen": config,
            "osc": osc,
        }))
        .output(&args.out)
        .wall_seconds(t0.elapsed().as_secs_f64());
    manifest.write_next_to(&args.out)?;
    println!("wrote {} frames to {}", frames.len(), args.out.display());
    Ok(())
}

struct TrainSetup {
    feature_config: FeatureConfig,
    metric: Metric,
    net: NetworkConfig,
    split: SplitProtocol,
}

fn train_setup(args: &TrainArgs) -> anyhow::Result<TrainSetup> {
    let kind = match args.model.as_str() {
        "kan" => ModelKind::Kan,
        "mlp" => ModelKind::Mlp,
        other => bail!("unknown model '{other}' (kan/mlp)"),
    };
    let mut net = NetworkConfig::preset(kind, &args.size)?;
    net.basis = args.basis;
    if parse_bool(&args.perm, "perm")? {
        net.perm_pool = Some(args.pool_width);
    }
    let feature_config = FeatureConfig {
        node_index: parse_bool(&args.node_index, "node-index")?,
        linear: parse_bool(&args.linear, "linear")?,
        features: parse_features(&args.features)?,
        center: true,
        include_types: parse_bool(&args.use_types, "use-types")?,
    };
    Ok(TrainSetup {
        feature_config,
        metric: parse_metric(&args.metric)?,
        net,
        split: args.split.parse()?,
    })
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let t0 = Instant::now();
    let setup = train_setup(&args)?;

    let loaded = load_frames(&args.data)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    if loaded.frames.is_empty() {
        bail!("no frames in {}", args.data.display());
    }
    let m = loaded.frames[0].num_points();
    let n = loaded.frames[0].dim();
    let (train_frames, test_frames) = split_frames(loaded.frames, setup.split, args.seed)?;

    let mut model = Model::build(
        m,
        n,
        setup.feature_config.clone(),
        setup.metric.clone(),
        &setup.net,
        args.seed,
    )?;

    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        lr: args.lr,
        weight_decay: args.wd,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &train_frames, &test_frames, &config)?;
    history.save_csv(&args.history)?;

    let label = model_label(&model);
    let mut ckpt = Checkpoint::new(model);
    ckpt.train_seed = Some(args.seed);
    ckpt.split = Some(setup.split.to_string());
    ckpt.huber_delta = config.huber_delta;
    save_checkpoint(&ckpt, &args.out)?;

    let manifest = RunManifest::new("train", args.seed)
        .config(serde_json::json!({
            "data": args.data,
            "model": label,
            "network": setup.net,
            "features": setup.feature_config,
            "metric": setup.metric,
            "train": config,
            "split": setup.split.to_string(),
            "history": args.history,
        }))
        .output(&args.out)
        .wall_seconds(t0.elapsed().as_secs_f64());
    manifest.write_next_to(&args.out)?;

    if let Some(last) = history.records.last() {
        println!(
            "{label}: {} epochs, final test huber {:.6e}, test NLL {:.4}",
            args.epochs, last.test_huber, last.test_nll
        );
    } else {
        println!("{label}: initialized checkpoint written (0 epochs)");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let t0 = Instant::now();
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let loaded = load_frames(&args.data)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }

    let frames = match args.subset.as_str() {
        "all" => loaded.frames,
        "split" => {
            let split: SplitProtocol = ckpt
                .split
                .as_deref()
                .unwrap_or("80/20")
                .parse()
                .unwrap_or(SplitProtocol::Fraction80);
            let seed = ckpt.train_seed.unwrap_or(0);
            let (_, test) = split_frames(loaded.frames, split, seed)?;
            test
        }
        other => bail!("unknown subset '{other}' (split/all)"),
    };
    if frames.is_empty() {
        bail!("no frames to evaluate");
    }

    // Flag a scaler mismatch: normalized targets far outside [0, 1] suggest
    // the checkpoint was fitted on a different energy scale.
    let scaler = ckpt.model.output_scaler;
    let mut mismatch = false;
    for f in &frames {
        if let Some(e) = f.energy() {
            let y = scaler.normalize(e);
            if !(-0.5..=1.5).contains(&y) {
                mismatch = true;
            }
        }
    }
    if mismatch {
        eprintln!("warning: target range differs substantially from the checkpoint scaler");
    }

    let (mean_huber, nll) = evaluate(&ckpt.model, &frames, ckpt.huber_delta)?;
    let metrics = serde_json::json!({
        "model": ckpt.label,
        "mean_huber": mean_huber,
        "nll": if nll.is_finite() { serde_json::json!(nll) } else { serde_json::json!("inf") },
        "n_test": frames.len(),
        "scaler_mismatch": mismatch,
    });
    let text = serde_json::to_string_pretty(&metrics)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text)?;
            let manifest = RunManifest::new("eval", ckpt.train_seed.unwrap_or(0))
                .config(serde_json::json!({
                    "checkpoint": args.checkpoint,
                    "data": args.data,
                    "subset": args.subset,
                }))
                .output(path)
                .wall_seconds(t0.elapsed().as_secs_f64());
            manifest.write_next_to(path)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> anyhow::Result<()> {
    let t0 = Instant::now();
    let reports = if args.negative_controls {
        let mut reports = Vec::new();
        for seed in 0..args.seeds {
            reports.push(verify::verify_lemma_a14_rank_deficient(args.m, args.n, args.k, seed)?);
            reports.push(verify::verify_broken_featurization(4, 3, seed)?);
        }
        reports
    } else if let Some(check) = &args.check {
        vec![run_single_check(check, &args)?]
    } else if args.all {
        verify::run_all(args.seeds)?
    } else {
        bail!("choose one of --all, --check <name>, or --negative-controls");
    };

    let json = verify::reports_to_json(&reports);
    match &args.out {
        Some(path) => {
            std::fs::write(path, &json)?;
            let manifest = RunManifest::new("verify", args.seed)
                .config(serde_json::json!({
                    "all": args.all,
                    "check": args.check,
                    "negative_controls": args.negative_controls,
                    "seeds": args.seeds,
                }))
                .output(path)
                .wall_seconds(t0.elapsed().as_secs_f64());
            manifest.write_next_to(path)?;
        }
        None => println!("{json}"),
    }

    let healthy = verify::suite_ok(&reports);
    let (passed, failed): (Vec<_>, Vec<_>) = reports.iter().partition(|r| r.pass);
    eprintln!(
        "{} checks: {} passed, {} failed ({} failures expected), {:.2}s",
        reports.len(),
        passed.len(),
        failed.len(),
        reports.iter().filter(|r| r.expect_fail).count(),
        t0.elapsed().as_secs_f64()
    );
    if !healthy {
        bail!("verification reported unexpected outcomes");
    }
    Ok(())
}

fn run_single_check(name: &str, args: &VerifyArgs) -> anyhow::Result<verify::VerifyReport> {
    let report = match name {
        "lemma-a14" => verify::verify_lemma_a14(args.m, args.n, args.k, args.seed)?,
        "lemma-a14-rank-deficient" => {
            verify::verify_lemma_a14_rank_deficient(args.m, args.n, args.k, args.seed)?
        }
        "rotation-listing" => verify::verify_rotation_listing(args.m, args.n, args.seed)?,
        "orthogonal" => verify::verify_orthogonality(args.n, args.seed),
        "boost" => verify::verify_boost_identity(args.n.max(2), 1.5, args.seed),
        "minkowski-gram" => verify::verify_minkowski_gram(args.m, args.n.max(2), 1.5, args.seed)?,
        "broken-featurization" => verify::verify_broken_featurization(4, 3, args.seed)?,
        other => bail!(
            "unknown check '{other}'; see --all for the full matrix \
             (lemma-a14, lemma-a14-rank-deficient, rotation-listing, orthogonal, \
             boost, minkowski-gram, broken-featurization)"
        ),
    };
    Ok(report)
}
