//! Scaling trials: perturb a target, simulate, estimate, and fit the log-log
//! slope of the gauge-fixed error against shots (LGST) or depth (long-sequence).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::circuit_engine::{exact_dataset, simulate, DataSet};
use crate::error::{invalid, Result};
use crate::estimation::{fit, FitOptions};
use crate::experiment_design::{build_design, lgst_circuits, reduce_fiducial_pairs, FiducialSet};
use crate::gauge_opt::staged_gauge_optimize;
use crate::gateset_model::{GateSet, ParamKind};
use crate::lgst::run_lgst;
use crate::models::{perturb, Perturbation};
use crate::util::substream_seed;

/// Below this every distance is numerical noise and no slope is fitted.
pub const DISTANCE_FLOOR: f64 = 1e-8;
/// Stand-in for infinite shots when `exact` is set.
const EXACT_SHOTS: u64 = 1_000_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    Lgst,
    Lsgst,
}

impl std::str::FromStr for ScalingMode {
    type Err = crate::GstError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lgst" => Ok(ScalingMode::Lgst),
            "lsgst" => Ok(ScalingMode::Lsgst),
            _ => invalid(format!("unknown scaling mode '{s}'")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScalingOptions {
    pub mode: ScalingMode,
    pub trials: usize,
    pub seed: u64,
    pub noise: Perturbation,
    /// Shot counts swept in LGST mode.
    pub shots: Vec<u64>,
    /// Depths swept in long-sequence mode.
    pub depths: Vec<usize>,
    /// Shots per circuit in long-sequence mode.
    pub lsgst_shots: u64,
    /// Use exact probabilities instead of sampling.
    pub exact: bool,
    pub fpr: bool,
    pub param_kind: ParamKind,
}

impl ScalingOptions {
    pub fn new(mode: ScalingMode) -> Self {
        ScalingOptions {
            mode,
            trials: 20,
            seed: 0,
            noise: Perturbation::default(),
            shots: vec![256, 1024, 4096, 16384, 65536],
            depths: vec![1, 2, 4, 8, 16, 32, 64, 128],
            lsgst_shots: 1000,
            exact: false,
            fpr: false,
            param_kind: ParamKind::TP,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingTrial {
    pub trial: usize,
    /// Shots or depths.
    pub x: Vec<f64>,
    pub distances: Vec<f64>,
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub mode: ScalingMode,
    pub trials: Vec<ScalingTrial>,
    pub median_slope: Option<f64>,
}

/// Least-squares slope of `log y` against `log x`; `None` when every `y` is
/// at the floor.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || y.iter().all(|&v| v < DISTANCE_FLOOR) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Some(sxy / sxx)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 0 { 0.5 * (s[m - 1] + s[m]) } else { s[m] })
}

fn sample(gs: &GateSet, circuits: &[crate::circuit_engine::Circuit], shots: u64, seed: u64, exact: bool) -> Result<DataSet> {
    if exact {
        exact_dataset(gs, circuits, EXACT_SHOTS)
    } else {
        simulate(gs, circuits, shots, seed)
    }
}

fn distance(est: &GateSet, truth: &GateSet, kind: ParamKind) -> Result<f64> {
    Ok(staged_gauge_optimize(est, truth, kind)?.mean_gate_distance(truth))
}

fn run_trial(target: &GateSet, fids: &FiducialSet, opts: &ScalingOptions, design: Option<&crate::experiment_design::ExperimentDesign>, t: usize) -> Result<ScalingTrial> {
    let trial_seed = substream_seed(opts.seed, t as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let truth = perturb(target, opts.noise, &mut rng);
    let (x, distances): (Vec<f64>, Vec<f64>) = match opts.mode {
        ScalingMode::Lgst => {
            let circuits = lgst_circuits(target, fids);
            let mut d = Vec::new();
            for (i, &n) in opts.shots.iter().enumerate() {
                let ds = sample(&truth, &circuits, n, substream_seed(trial_seed, i as u64 + 1), opts.exact)?;
                d.push(distance(&run_lgst(&ds, fids, target)?.gateset, &truth, opts.param_kind)?);
            }
            (opts.shots.iter().map(|&n| n as f64).collect(), d)
        }
        ScalingMode::Lsgst => {
            let design = design.expect("design built for long-sequence mode");
            let ds = sample(&truth, design.circuits(), opts.lsgst_shots, substream_seed(trial_seed, 1), opts.exact)?;
            let res = fit(design, &ds, target, &FitOptions { param_kind: opts.param_kind, ..Default::default() })?;
            // one estimate per depth: the chi-squared stage that stops at it
            let mut d = Vec::new();
            for est in &res.stage_estimates[..opts.depths.len()] {
                d.push(distance(est, &truth, opts.param_kind)?);
            }
            (opts.depths.iter().map(|&l| l as f64).collect(), d)
        }
    };
    Ok(ScalingTrial { trial: t, slope: loglog_slope(&x, &distances), x, distances })
}

/// Runs `opts.trials` independent trials in parallel. Trial `t` draws from
/// substream `t` of `opts.seed`.
pub fn verify_scaling(target: &GateSet, fids: &FiducialSet, germs: &[crate::circuit_engine::Circuit], opts: &ScalingOptions) -> Result<ScalingReport> {
    let design = match opts.mode {
        ScalingMode::Lgst => {
            if opts.shots.len() < 2 {
                return invalid("need at least two shot counts");
            }
            None
        }
        ScalingMode::Lsgst => {
            if opts.depths.len() < 2 {
                return invalid("need at least two depths");
            }
            let d = build_design(target, fids, germs, &opts.depths)?;
            Some(if opts.fpr { reduce_fiducial_pairs(&d, target, opts.param_kind, opts.seed)?.0 } else { d })
        }
    };
    let trials: Vec<ScalingTrial> = (0..opts.trials)
        .into_par_iter()
        .map(|t| run_trial(target, fids, opts, design.as_ref(), t))
        .collect::<Result<_>>()?;
    let slopes: Vec<f64> = trials.iter().filter_map(|t| t.slope).collect();
    Ok(ScalingReport { mode: opts.mode, median_slope: median(&slopes), trials })
}
