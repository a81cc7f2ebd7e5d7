//! One binary, five subcommands: generate data, train, attack, evaluate,
//! and export the label-transition graph. Every output artifact gets a
//! `.manifest` sibling recording the resolved parameters.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use uap_cli::manifest::RunManifest;
use uap_core::{
    accuracy, build_label_graph, compute_uap, dominant_labels, export_dot, export_edges_csv,
    fooling_rate, generate_blobs, load_dataset, load_model, load_perturbation, norm_sweep,
    random_perturbation, save_dataset, save_model, save_perturbation, split_attack_set, train,
    AttackConfig, Norm, Rng, SweepCurve, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "uap",
    version,
    about = "Universal adversarial perturbations against small trained classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-blob classification dataset.
    GenData(GenDataArgs),
    /// Train an MLP classifier on a dataset file.
    Train(TrainArgs),
    /// Compute a universal perturbation against a trained model.
    Attack(AttackArgs),
    /// Sweep fooling rates over perturbation norms, with random baselines.
    Eval(EvalArgs),
    /// Export the label-transition graph under a perturbation.
    Graph(GraphArgs),
}

fn parse_at_least_2(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v < 2 {
        return Err("must be at least 2".into());
    }
    Ok(v)
}

fn parse_at_least_1(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v < 1 {
        return Err("must be at least 1".into());
    }
    Ok(v)
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err("must be a positive finite number".into());
    }
    Ok(v)
}

fn parse_rate(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(v > 0.0 && v <= 1.0) {
        return Err("must be in (0, 1]".into());
    }
    Ok(v)
}

fn parse_norm_order(s: &str) -> Result<Norm, String> {
    s.parse().map_err(|e| format!("{e}"))
}

/// Comma-separated hidden layer widths; empty string means no hidden layers.
#[derive(Clone, Debug)]
struct HiddenList(Vec<usize>);

impl std::fmt::Display for HiddenList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

fn parse_hidden(s: &str) -> Result<HiddenList, String> {
    if s.is_empty() {
        return Ok(HiddenList(Vec::new()));
    }
    s.split(',')
        .map(|part| parse_at_least_1(part.trim()))
        .collect::<Result<Vec<_>, _>>()
        .map(HiddenList)
}

/// Comma-separated positive strictly increasing norms.
#[derive(Clone, Debug)]
struct NormGrid(Vec<f64>);

impl std::fmt::Display for NormGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

fn parse_norms(s: &str) -> Result<NormGrid, String> {
    let values = s
        .split(',')
        .map(|part| parse_positive(part.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("at least one norm required".into());
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err("norms must be strictly increasing".into());
    }
    Ok(NormGrid(values))
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of classes.
    #[arg(long, default_value_t = 10, value_parser = parse_at_least_2)]
    classes: usize,
    /// Images per class.
    #[arg(long, default_value_t = 100, value_parser = parse_at_least_1)]
    per_class: usize,
    /// Image dimension.
    #[arg(long, default_value_t = 32, value_parser = parse_at_least_2)]
    dim: usize,
    /// Minimum distance between class centers.
    #[arg(long, default_value_t = 8.0, value_parser = parse_positive)]
    margin: f64,
    /// Within-class standard deviation.
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Input dataset file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.1, value_parser = parse_positive)]
    lr: f64,
    /// Mini-batch size.
    #[arg(long, default_value_t = 32, value_parser = parse_at_least_1)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated hidden layer widths; "" for none.
    #[arg(long, default_value = "64", value_parser = parse_hidden)]
    hidden: HiddenList,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Attack-set images drawn per class; the rest is held out.
    #[arg(long, default_value_t = 50, value_parser = parse_at_least_1)]
    per_class: usize,
    /// Perturbation budget.
    #[arg(long, value_parser = parse_positive)]
    xi: f64,
    /// Norm order: 2 or inf.
    #[arg(long, default_value = "2", value_parser = parse_norm_order)]
    p: Norm,
    /// Stop once this fooling rate is reached on the attack set.
    #[arg(long, default_value_t = 0.8, value_parser = parse_rate)]
    target_rate: f64,
    #[arg(long, default_value_t = 10)]
    max_passes: usize,
    /// Start from a previously saved perturbation.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Seeds both the attack-set split and the per-pass shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output perturbation file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Perturbation file; repeat for several curves.
    #[arg(long)]
    perturbation: Vec<PathBuf>,
    /// Number of random baseline directions.
    #[arg(long, default_value_t = 0)]
    random: usize,
    /// Comma-separated norms to sweep, strictly increasing.
    #[arg(long, value_parser = parse_norms)]
    norms: NormGrid,
    /// Clamp perturbed images to the dataset value range.
    #[arg(long)]
    clamp: bool,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    perturbation: PathBuf,
    /// Output DOT file.
    #[arg(long)]
    out_dot: PathBuf,
    /// Output edge-list CSV file.
    #[arg(long)]
    out_csv: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Graph(args) => cmd_graph(args),
    }
}

fn manifest_path(artifact: &Path) -> PathBuf {
    let mut os: OsString = artifact.as_os_str().to_os_string();
    os.push(".manifest");
    PathBuf::from(os)
}

fn usage_exit(message: &str) -> ! {
    eprintln!("error: {message}");
    std::process::exit(2);
}

fn load_model_at(path: &Path) -> anyhow::Result<uap_core::Model> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_dataset_at(path: &Path) -> anyhow::Result<uap_core::Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_perturbation_at(path: &Path) -> anyhow::Result<uap_core::Perturbation> {
    load_perturbation(path).with_context(|| format!("loading perturbation {}", path.display()))
}

fn cmd_gen_data(args: GenDataArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let ds = generate_blobs(
        args.classes,
        args.per_class,
        args.dim,
        args.margin,
        args.sigma,
        args.seed,
    )?;
    save_dataset(&ds, &args.out)
        .with_context(|| format!("writing dataset {}", args.out.display()))?;

    let mut m = RunManifest::new("gen-data");
    m.arg("classes", args.classes);
    m.arg("per-class", args.per_class);
    m.arg("dim", args.dim);
    m.arg("margin", args.margin);
    m.arg("sigma", args.sigma);
    m.arg("seed", args.seed);
    m.arg("out", args.out.display());
    m.duration_ms = started.elapsed().as_millis();
    m.write(&manifest_path(&args.out))?;

    println!(
        "wrote {} images ({} classes x {}), dim {} -> {}",
        ds.num_images(),
        ds.num_classes(),
        args.per_class,
        ds.dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let ds = load_dataset_at(&args.data)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed: args.seed,
        hidden: args.hidden.0.clone(),
        ..Default::default()
    };
    let model = train(&ds, &cfg)?;
    let acc = accuracy(&model, &ds)?;
    save_model(&model, &args.out)
        .with_context(|| format!("writing model {}", args.out.display()))?;

    let mut m = RunManifest::new("train");
    m.arg("data", args.data.display());
    m.arg("epochs", args.epochs);
    m.arg("lr", args.lr);
    m.arg("batch", args.batch);
    m.arg("seed", args.seed);
    m.arg("hidden", &args.hidden);
    m.arg("out", args.out.display());
    m.duration_ms = started.elapsed().as_millis();
    m.write(&manifest_path(&args.out))?;

    println!("final accuracy: {acc:.4}");
    println!("wrote model -> {}", args.out.display());
    Ok(())
}

fn cmd_attack(args: AttackArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let model = load_model_at(&args.model)?;
    let data = load_dataset_at(&args.data)?;
    let (attack_set, held_out) = split_attack_set(&data, args.per_class, args.seed)?;
    let v0 = match &args.warm_start {
        Some(path) => Some(load_perturbation_at(path)?.v),
        None => None,
    };
    let cfg = AttackConfig {
        p: args.p,
        xi: args.xi,
        target_fooling_rate: args.target_rate,
        max_passes: args.max_passes,
        shuffle_seed: args.seed,
        ..Default::default()
    };
    let run = compute_uap(&attack_set, &model, &cfg, v0.as_ref())?;
    save_perturbation(&run.perturbation, &args.out)
        .with_context(|| format!("writing perturbation {}", args.out.display()))?;

    let mut m = RunManifest::new("attack");
    m.arg("model", args.model.display());
    m.arg("data", args.data.display());
    m.arg("per-class", args.per_class);
    m.arg("xi", args.xi);
    m.arg("p", args.p);
    m.arg("target-rate", args.target_rate);
    m.arg("max-passes", args.max_passes);
    if let Some(path) = &args.warm_start {
        m.arg("warm-start", path.display());
    }
    m.arg("seed", args.seed);
    m.arg("out", args.out.display());
    m.duration_ms = started.elapsed().as_millis();
    m.write(&manifest_path(&args.out))?;

    let on_x = fooling_rate(&attack_set, &run.perturbation.v, &model, false)?;
    println!(
        "fooling rate on attack set: {:.4} ({}/{})",
        on_x.rate, on_x.fooled, on_x.total
    );
    match &held_out {
        Some(held) => {
            let r = fooling_rate(held, &run.perturbation.v, &model, false)?;
            println!(
                "fooling rate on held-out set: {:.4} ({}/{})",
                r.rate, r.fooled, r.total
            );
        }
        None => println!("fooling rate on held-out set: n/a (attack set uses every image)"),
    }
    println!("passes used: {}", run.perturbation.passes_used);
    if run.stalled {
        println!("stalled: a full pass produced no successful per-point perturbations");
    }
    println!("wrote perturbation -> {}", args.out.display());
    Ok(())
}

fn unique_id(base: String, used: &mut BTreeSet<String>) -> String {
    if used.insert(base.clone()) {
        return base;
    }
    for k in 2.. {
        let candidate = format!("{base}-{k}");
        if used.insert(candidate.clone()) {
            return candidate;
        }
    }
    unreachable!()
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    if args.perturbation.is_empty() && args.random == 0 {
        usage_exit("nothing to evaluate: pass --perturbation and/or --random > 0");
    }
    let started = Instant::now();
    let model = load_model_at(&args.model)?;
    let data = load_dataset_at(&args.data)?;

    let mut curves: Vec<SweepCurve> = Vec::new();
    let mut used_ids = BTreeSet::new();
    let mut base_p = None;
    for path in &args.perturbation {
        let pert = load_perturbation_at(path)?;
        base_p.get_or_insert(pert.p);
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "perturbation".to_string());
        let id = unique_id(stem, &mut used_ids);
        curves.push(norm_sweep(
            &data,
            &pert.v,
            &model,
            pert.p,
            &args.norms.0,
            args.clamp,
            &id,
        )?);
    }

    if args.random > 0 {
        let p = base_p.unwrap_or(Norm::L2);
        let mut rng = Rng::new(0);
        let mut random_curves = Vec::new();
        for i in 0..args.random {
            let v = random_perturbation(data.dim(), p, 1.0, &mut rng)?;
            random_curves.push(norm_sweep(
                &data,
                &v,
                &model,
                p,
                &args.norms.0,
                args.clamp,
                &format!("random-{i}"),
            )?);
        }
        let mean_rates: Vec<f64> = (0..args.norms.0.len())
            .map(|j| random_curves.iter().map(|c| c.rates[j]).sum::<f64>() / args.random as f64)
            .collect();
        curves.extend(random_curves);
        curves.push(SweepCurve {
            norms: args.norms.0.clone(),
            rates: mean_rates,
            perturbation_id: "random-mean".to_string(),
        });
    }

    uap_core::write_curve_csv(&curves, &args.out)
        .with_context(|| format!("writing curves {}", args.out.display()))?;

    let mut m = RunManifest::new("eval");
    m.arg("model", args.model.display());
    m.arg("data", args.data.display());
    for path in &args.perturbation {
        m.arg("perturbation", path.display());
    }
    m.arg("random", args.random);
    m.arg("norms", &args.norms);
    m.flag("clamp", args.clamp);
    m.arg("out", args.out.display());
    m.duration_ms = started.elapsed().as_millis();
    m.write(&manifest_path(&args.out))?;

    println!(
        "wrote {} curves x {} norms -> {}",
        curves.len(),
        args.norms.0.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_graph(args: GraphArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let model = load_model_at(&args.model)?;
    let data = load_dataset_at(&args.data)?;
    let pert = load_perturbation_at(&args.perturbation)?;

    let g = build_label_graph(&data, &pert.v, &model)?;
    let report = fooling_rate(&data, &pert.v, &model, false)?;
    export_dot(&g, &args.out_dot)
        .with_context(|| format!("writing DOT {}", args.out_dot.display()))?;
    export_edges_csv(&g, &args.out_csv)
        .with_context(|| format!("writing edge CSV {}", args.out_csv.display()))?;

    let mut m = RunManifest::new("graph");
    m.arg("model", args.model.display());
    m.arg("data", args.data.display());
    m.arg("perturbation", args.perturbation.display());
    m.arg("out-dot", args.out_dot.display());
    m.arg("out-csv", args.out_csv.display());
    m.duration_ms = started.elapsed().as_millis();
    m.write(&manifest_path(&args.out_dot))?;

    println!(
        "fooled {} of {} images; total edge weight {}",
        report.fooled,
        report.total,
        g.total_weight()
    );
    println!("top dominant labels:");
    let top = dominant_labels(&g, 5);
    if top.is_empty() {
        println!("  (none: no images fooled)");
    }
    for (rank, (label, indegree)) in top.iter().enumerate() {
        println!(
            "  {}. {} (label {}): weighted indegree {}",
            rank + 1,
            g.class_names()[*label],
            label,
            indegree
        );
    }
    println!(
        "wrote graph -> {} and {}",
        args.out_dot.display(),
        args.out_csv.display()
    );
    Ok(())
}
