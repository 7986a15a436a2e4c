use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use gst_core::circuit_engine::{simulate, DataSet};
use gst_core::diagnostics::{export_boxplot, violation_report, DEFAULT_ALPHA};
use gst_core::estimation::{fit, FitOptions, ObjectiveKind};
use gst_core::experiment_design::{
    build_design, fiducial_candidates, germ_candidates, is_amplificationally_complete, powers_of_two,
    reduce_fiducial_pairs, select_fiducials, select_germs, ExperimentDesign, FiducialSet, GermContext,
    DEFAULT_FIDUCIAL_CUTOFF, DEFAULT_GERM_CUTOFF,
};
use gst_core::gauge_opt::staged_gauge_optimize;
use gst_core::gateset_model::{param_kind_from_json, GateSet, ParamKind, Parameterization};
use gst_core::models::{perturb, std_fiducials_xyi, std_germs_xyi, target_xyi, Perturbation};
use gst_core::scaling::{verify_scaling, ScalingMode, ScalingOptions};
use gst_core::uncertainty::{
    bootstrap, confidence_data, named_quantities, named_quantity_gradients, scalar_interval_bootstrap,
    scalar_interval_hessian, BootstrapMode,
};
use gst_core::util::{artifact_header, substream_seed};
use gst_core::GstError;

const BUILTIN_TARGET: &str = "xyi";
const MAX_LISTED: usize = 20;

#[derive(Parser)]
#[command(name = "gst", version, about = "Gate set tomography")]
struct Cli {
    /// Global seed.
    #[arg(long, env = "GST_SEED", default_value_t = 0, global = true)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select fiducials and germs and write a long-sequence design.
    Design(DesignArgs),
    /// Sample counts for every design circuit.
    Simulate(SimulateArgs),
    /// LGST seed, staged fit, gauge fixing and model-violation report.
    Fit(FitArgs),
    /// Staged gauge optimization of an estimate to a target.
    GaugeOpt(GaugeOptArgs),
    /// Model-violation report for an estimate.
    Report(ReportArgs),
    /// Error bars on gate, prep and effect entries.
    Errorbars(ErrorbarsArgs),
    /// Scaling of the estimation error with shots or depth.
    VerifyScaling(ScalingArgs),
}

#[derive(Args)]
struct DesignArgs {
    /// Target gate set: a JSON file or "xyi".
    #[arg(long, default_value = BUILTIN_TARGET)]
    target: String,
    #[arg(long)]
    max_depth: usize,
    /// Apply fiducial-pair reduction.
    #[arg(long)]
    fpr: bool,
    /// Use the standard fiducials and germs instead of selecting them (xyi only).
    #[arg(long)]
    standard: bool,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Gate set to sample from: a JSON file or "xyi".
    #[arg(long, default_value = BUILTIN_TARGET)]
    gateset: String,
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    shots: u64,
    /// Perturb the gate set first (depolarization, SPAM error, small rotations).
    #[arg(long)]
    perturb: bool,
    /// Where to write the gate set actually sampled from.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// `.json` for JSON, otherwise the text format.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value = BUILTIN_TARGET)]
    target: String,
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "tp")]
    param: ParamKind,
    /// Final-stage objective: logl-tp or logl-poisson.
    #[arg(long)]
    objective: Option<ObjectiveKind>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Output directory for estimate.json and report.json.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct GaugeOptArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long, default_value = BUILTIN_TARGET)]
    target: String,
    /// Defaults to the estimate's recorded parameterization.
    #[arg(long)]
    param: Option<ParamKind>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    param: Option<ParamKind>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Box-plot grid of per-circuit statistics (.csv or .json).
    #[arg(long)]
    boxplot: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Method {
    Hessian,
    Bootstrap,
}

#[derive(Args)]
struct ErrorbarsArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = BUILTIN_TARGET)]
    target: String,
    #[arg(long)]
    param: Option<ParamKind>,
    #[arg(long, value_enum, default_value = "hessian")]
    method: Method,
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value = "parametric")]
    mode: BootstrapMode,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long)]
    mode: ScalingMode,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Exact probabilities instead of sampling.
    #[arg(long)]
    exact: bool,
    /// Trials on the unperturbed target.
    #[arg(long)]
    no_noise: bool,
    #[arg(long)]
    fpr: bool,
    /// Comma-separated shot counts (lgst mode).
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<u64>>,
    /// Comma-separated depths (lsgst mode).
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &GstError) -> u8 {
    match e {
        GstError::NotAmplificationallyComplete { .. } | GstError::InformationalIncompleteness { .. } => 2,
        GstError::MissingCircuits(_) => 3,
        GstError::Optimizer(_) | GstError::Bootstrap(_) => 4,
        _ => 1,
    }
}

fn read_bytes(path: &Path) -> gst_core::Result<Vec<u8>> {
    Ok(std::fs::read(path)?)
}

/// Gate set from a JSON file (bare, or wrapped under "gateset") or a builtin name.
fn load_gateset(spec: &str) -> gst_core::Result<(GateSet, Vec<u8>, Option<ParamKind>)> {
    if spec == BUILTIN_TARGET {
        return Ok((target_xyi(), spec.as_bytes().to_vec(), None));
    }
    let bytes = read_bytes(Path::new(spec))?;
    let v: Value = serde_json::from_slice(&bytes)?;
    let inner = v.get("gateset").unwrap_or(&v);
    let kind = param_kind_from_json(inner);
    Ok((GateSet::from_json(inner)?, bytes, kind))
}

fn load_design(path: &Path) -> gst_core::Result<(ExperimentDesign, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let v: Value = serde_json::from_slice(&bytes)?;
    Ok((ExperimentDesign::from_json(v.get("design").unwrap_or(&v))?, bytes))
}

fn load_data(path: &Path) -> gst_core::Result<(DataSet, Vec<u8>)> {
    Ok((DataSet::read(path)?, read_bytes(path)?))
}

/// Header fields first, then the payload.
fn artifact(seed: u64, inputs: &[&[u8]], payload: Value) -> Value {
    let mut out = match artifact_header(seed, inputs) {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    if let Value::Object(m) = payload {
        out.extend(m);
    }
    Value::Object(out)
}

fn write_json(path: &Path, v: &Value) -> gst_core::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_design(a: &DesignArgs, seed: u64) -> gst_core::Result<()> {
    let (target, tbytes, _) = load_gateset(&a.target)?;
    let (fids, germs) = if a.standard {
        (FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() }, std_germs_xyi())
    } else {
        let cands = fiducial_candidates(&target.gate_labels, DEFAULT_FIDUCIAL_CUTOFF);
        let fids = select_fiducials(&target, &cands, (target.d2(), 6.max(target.d2())))?;
        let ctx = GermContext::new(&target, ParamKind::TP, seed)?;
        let set = select_germs(&ctx, &germ_candidates(&target.gate_labels, DEFAULT_GERM_CUTOFF))?;
        (fids, set.germs)
    };
    let ctx = GermContext::new(&target, ParamKind::TP, seed)?;
    let ac = is_amplificationally_complete(&germs, &ctx)?;
    if !ac.complete {
        return Err(GstError::NotAmplificationallyComplete {
            achieved: ac.achieved,
            required: ac.required,
            unamplified: ac.unamplified,
        });
    }
    let mut design = build_design(&target, &fids, &germs, &powers_of_two(a.max_depth))?;
    let mut fpr = Value::Null;
    if a.fpr {
        let (reduced, rep) = reduce_fiducial_pairs(&design, &target, ParamKind::TP, seed)?;
        fpr = json!({
            "circuits_before": rep.circuits_before,
            "circuits_after": rep.circuits_after,
            "full_ranks": rep.full_ranks,
            "kept_ranks": rep.kept_ranks,
        });
        design = reduced;
    }
    println!("circuits: {}", design.circuits().len());
    println!("germs: {}", design.germs.len());
    println!("amplified rank: {} of {}", ac.achieved, ac.required);
    let payload = json!({
        "design": design.to_json(),
        "amplification": {"achieved": ac.achieved, "required": ac.required},
        "fpr": fpr,
    });
    write_json(&a.out, &artifact(seed, &[&tbytes, a.max_depth.to_string().as_bytes()], payload))
}

fn cmd_simulate(a: &SimulateArgs, seed: u64) -> gst_core::Result<()> {
    let (mut gs, gbytes, _) = load_gateset(&a.gateset)?;
    let (design, dbytes) = load_design(&a.design)?;
    if a.perturb {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(substream_seed(seed, u64::MAX));
        gs = perturb(&gs, Perturbation::default(), &mut rng);
    }
    let mut ds = simulate(&gs, design.circuits(), a.shots, seed)?;
    ds.meta.gateset_hash = Some(gs.hash_hex());
    ds.write(&a.out)?;
    if let Some(p) = &a.truth_out {
        let payload = json!({ "gateset": gs.to_json(None) });
        write_json(p, &artifact(seed, &[&gbytes, &dbytes], payload))?;
    }
    println!("rows: {}", ds.len());
    Ok(())
}

fn cmd_fit(a: &FitArgs, seed: u64) -> gst_core::Result<()> {
    let (target, tbytes, _) = load_gateset(&a.target)?;
    let (design, dbytes) = load_design(&a.design)?;
    let (ds, data_bytes) = load_data(&a.data)?;
    let opts = FitOptions { param_kind: a.param, final_objective: a.objective, ..Default::default() };
    let res = fit(&design, &ds, &target, &opts)?;
    if !res.converged() {
        eprintln!("warning: not every stage converged");
    }
    let fixed = staged_gauge_optimize(&res.gateset, &target, a.param)?;
    let report = violation_report(&fixed, &ds, design.circuits(), a.param, a.alpha)?;
    let param = Parameterization::new(a.param, &fixed);
    let kind_text = a.param.to_string();
    let inputs: [&[u8]; 4] = [&tbytes, &dbytes, &data_bytes, kind_text.as_bytes()];
    let estimate = json!({
        "gateset": fixed.to_json(Some(&param)),
        "fit": res.to_json(),
    });
    write_json(&a.out.join("estimate.json"), &artifact(seed, &inputs, estimate))?;
    write_json(&a.out.join("report.json"), &artifact(seed, &inputs, report.to_json()))?;
    println!("2 delta logL: {:.4}", report.two_delta_logl);
    println!("k: {}", report.k);
    println!("N_sigma: {:.3}", report.n_sigma);
    println!("flagged circuits: {}", report.per_circuit.iter().filter(|c| c.flagged).count());
    Ok(())
}

fn estimate_kind(explicit: Option<ParamKind>, recorded: Option<ParamKind>) -> ParamKind {
    explicit.or(recorded).unwrap_or(ParamKind::TP)
}

fn cmd_gauge_opt(a: &GaugeOptArgs, seed: u64) -> gst_core::Result<()> {
    let (est, ebytes, recorded) = load_gateset(&a.estimate.to_string_lossy())?;
    let (target, tbytes, _) = load_gateset(&a.target)?;
    let kind = estimate_kind(a.param, recorded);
    let fixed = staged_gauge_optimize(&est, &target, kind)?;
    let param = Parameterization::new(kind, &fixed);
    let payload = json!({
        "gateset": fixed.to_json(Some(&param)),
        "gate_distances": fixed.gate_distances(&target),
        "spam_distance": fixed.spam_distance(&target),
    });
    write_json(&a.out, &artifact(seed, &[&ebytes, &tbytes], payload))
}

fn cmd_report(a: &ReportArgs, seed: u64) -> gst_core::Result<()> {
    let (est, ebytes, recorded) = load_gateset(&a.estimate.to_string_lossy())?;
    let (design, dbytes) = load_design(&a.design)?;
    let (ds, data_bytes) = load_data(&a.data)?;
    let kind = estimate_kind(a.param, recorded);
    let report = violation_report(&est, &ds, design.circuits(), kind, a.alpha)?;
    if let Some(p) = &a.boxplot {
        export_boxplot(&report, &design, p)?;
    }
    println!("N_sigma: {:.3}", report.n_sigma);
    write_json(&a.out, &artifact(seed, &[&ebytes, &dbytes, &data_bytes], report.to_json()))
}

fn cmd_errorbars(a: &ErrorbarsArgs, seed: u64) -> gst_core::Result<()> {
    let (est, ebytes, recorded) = load_gateset(&a.estimate.to_string_lossy())?;
    let (design, dbytes) = load_design(&a.design)?;
    let (ds, data_bytes) = load_data(&a.data)?;
    let (target, tbytes, _) = load_gateset(&a.target)?;
    let kind = estimate_kind(a.param, recorded);
    let names = named_quantities(&est);
    let mut out = Map::new();
    let method;
    match a.method {
        Method::Hessian => {
            method = "hessian";
            let l = design.max_depths.last().copied().unwrap_or(1) as f64;
            let conf = confidence_data(&est, &ds, design.circuits(), kind, l * l)?;
            let grads = named_quantity_gradients(&est, &Parameterization::new(kind, &est))?;
            for (i, (name, value)) in names.iter().enumerate() {
                let iv = scalar_interval_hessian(&conf, &grads.row(i).transpose(), a.alpha)?;
                out.insert(name.clone(), json!({"value": value, "delta": iv.delta, "pure_gauge": iv.pure_gauge}));
            }
        }
        Method::Bootstrap => {
            method = "bootstrap";
            let opts = FitOptions { param_kind: kind, ..Default::default() };
            let ens = bootstrap(&est, &design, &ds, &target, &opts, a.mode, a.samples, seed)?;
            if ens.failures > 0 {
                eprintln!("warning: {} bootstrap fits failed", ens.failures);
            }
            for (i, (name, _)) in names.iter().enumerate() {
                let iv = scalar_interval_bootstrap(&ens, &est, |g| named_quantities(g)[i].1, a.alpha)?;
                out.insert(name.clone(), json!({"value": iv.value, "delta": iv.delta, "warning": iv.warning}));
            }
        }
    }
    let payload = json!({"method": method, "alpha": a.alpha, "quantities": out});
    write_json(&a.out, &artifact(seed, &[&ebytes, &dbytes, &data_bytes, &tbytes], payload))
}

fn cmd_verify_scaling(a: &ScalingArgs, seed: u64) -> gst_core::Result<()> {
    let mut opts = ScalingOptions::new(a.mode);
    opts.trials = a.trials;
    opts.seed = seed;
    opts.exact = a.exact;
    opts.fpr = a.fpr;
    if a.no_noise {
        opts.noise = Perturbation { max_depolarization: 0.0, spam_error: 0.0, max_rotation: 0.0 };
    }
    if let Some(s) = &a.shots {
        opts.shots = s.clone();
    }
    if let Some(d) = &a.depths {
        opts.depths = d.clone();
    }
    let fids = FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() };
    let rep = verify_scaling(&target_xyi(), &fids, &std_germs_xyi(), &opts)?;
    println!("trial  slope");
    for t in &rep.trials {
        match t.slope {
            Some(s) => println!("{:5}  {s:+.3}", t.trial),
            None => println!("{:5}  (at floor)", t.trial),
        }
    }
    match rep.median_slope {
        Some(m) => println!("median slope: {m:+.3}"),
        None => println!("median slope: none"),
    }
    if let Some(p) = &a.out {
        let payload = serde_json::to_value(&rep)?;
        let mut wrapped = Map::new();
        wrapped.insert("scaling".into(), payload);
        write_json(p, &artifact(seed, &[format!("{:?}", a.mode).as_bytes()], Value::Object(wrapped)))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> gst_core::Result<()> {
    match &cli.cmd {
        Command::Design(a) => cmd_design(a, cli.seed),
        Command::Simulate(a) => cmd_simulate(a, cli.seed),
        Command::Fit(a) => cmd_fit(a, cli.seed),
        Command::GaugeOpt(a) => cmd_gauge_opt(a, cli.seed),
        Command::Report(a) => cmd_report(a, cli.seed),
        Command::Errorbars(a) => cmd_errorbars(a, cli.seed),
        Command::VerifyScaling(a) => cmd_verify_scaling(a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(GstError::MissingCircuits(m)) if m.len() > MAX_LISTED => {
            eprintln!("error: dataset is missing {} circuit(s): {}, ...", m.len(), m[..MAX_LISTED].join(", "));
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
