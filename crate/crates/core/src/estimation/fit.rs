//! Staged long-sequence fit: chi-squared on growing depth truncations, then
//! a final maximum-likelihood stage on all data.

use serde::Serialize;
use serde_json::{json, Value};

use super::lm::{least_squares, LsqOptions};
use super::objective::{two_delta_logl, CompiledData, Objective, ObjectiveKind, DEFAULT_P_MIN};
use crate::circuit_engine::{Circuit, DataSet};
use crate::error::{invalid, Result};
use crate::experiment_design::ExperimentDesign;
use crate::gauge_opt::{gauge_optimize, GaugeGroupKind, GaugeGroupSpec, GaugeMetricWeights};
use crate::gateset_model::{GateSet, ParamKind, Parameterization};
use crate::lgst::run_lgst;
use crate::linalg::Vector;

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub param_kind: ParamKind,
    /// Final-stage objective; defaults to the Poisson form for `Full` and the
    /// multinomial form otherwise.
    pub final_objective: Option<ObjectiveKind>,
    pub p_min: f64,
    pub max_iters: usize,
    /// Starting point instead of the linear-inversion seed.
    pub start: Option<GateSet>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            param_kind: ParamKind::TP,
            final_objective: None,
            p_min: DEFAULT_P_MIN,
            max_iters: 500,
            start: None,
        }
    }
}

impl FitOptions {
    pub fn final_kind(&self) -> ObjectiveKind {
        self.final_objective.unwrap_or(match self.param_kind {
            ParamKind::Full => ObjectiveKind::LogLPoisson,
            _ => ObjectiveKind::LogLTP,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageReport {
    /// `None` for the final all-data stage.
    pub max_depth: Option<usize>,
    pub objective: ObjectiveKind,
    pub n_circuits: usize,
    pub initial_value: f64,
    pub final_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Estimate before any gauge fixing.
    pub gateset: GateSet,
    pub param_kind: ParamKind,
    pub theta: Vector,
    pub seed: GateSet,
    pub stages: Vec<StageReport>,
    /// Estimate after each stage.
    pub stage_estimates: Vec<GateSet>,
    /// `2 (logL_max - logL)` over the final stage's circuits.
    pub two_delta_logl: f64,
    /// Final-stage loglikelihood (dropped constants excluded).
    pub logl: f64,
    pub circuits: Vec<Circuit>,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.stages.iter().all(|s| s.converged)
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    pub fn to_json(&self) -> Value {
        let param = Parameterization::new(self.param_kind, &self.gateset);
        json!({
            "gateset": self.gateset.to_json(Some(&param)),
            "param_kind": self.param_kind.to_string(),
            "stages": self.stages,
            "two_delta_logl": self.two_delta_logl,
            "neg_logl": -self.logl,
            "converged": self.converged(),
        })
    }
}

/// Linear-inversion estimate moved to the target's gauge, used as the fit's
/// starting point.
pub fn lgst_seed(design: &ExperimentDesign, ds: &DataSet, target: &GateSet, kind: ParamKind) -> Result<GateSet> {
    let raw = run_lgst(ds, &design.fiducials, target)?.gateset;
    let group = match kind {
        ParamKind::Full => GaugeGroupKind::FullGL,
        _ => GaugeGroupKind::TPGroup,
    };
    let weights = GaugeMetricWeights::uniform(&raw);
    Ok(gauge_optimize(&raw, target, GaugeGroupSpec::new(group), &weights)?.0)
}

/// Runs the chi-squared stages on `design.truncated(L)` for each `L`, then
/// the likelihood stage on every design circuit.
pub fn fit(design: &ExperimentDesign, ds: &DataSet, target: &GateSet, opts: &FitOptions) -> Result<FitResult> {
    let final_kind = opts.final_kind();
    if final_kind == ObjectiveKind::Chi2 {
        return invalid("the final stage needs a likelihood objective");
    }
    if final_kind == ObjectiveKind::LogLTP && opts.param_kind == ParamKind::Full {
        return invalid("multinomial likelihood needs a trace-preserving parameterization");
    }
    let missing = ds.missing(design.circuits());
    if !missing.is_empty() {
        return Err(crate::GstError::MissingCircuits(missing));
    }
    let param = Parameterization::new(opts.param_kind, target);
    let seed = match &opts.start {
        Some(gs) => gs.clone(),
        None => lgst_seed(design, ds, target, opts.param_kind)?,
    };
    let mut theta = param.to_vector(&seed).or_else(|_| param.to_vector(target))?;
    let lsq = LsqOptions { max_iters: opts.max_iters, ..Default::default() };
    let mut stages = Vec::new();
    let mut stage_estimates = Vec::new();
    let mut plan: Vec<(Option<usize>, ObjectiveKind, Vec<Circuit>)> = design
        .stages()
        .into_iter()
        .map(|(l, cs)| (Some(l), ObjectiveKind::Chi2, cs))
        .collect();
    plan.push((None, final_kind, design.circuits().to_vec()));
    let mut last_data = None;
    for (depth, kind, circuits) in plan {
        let data = CompiledData::new(target, ds, &circuits)?;
        let obj = Objective::new(kind, opts.p_min);
        let res = least_squares(|t, want| obj.residuals(&param, t, &data, want), &theta, &lsq)?;
        theta = res.theta.clone();
        stage_estimates.push(param.from_vector(&theta)?);
        stages.push(StageReport {
            max_depth: depth,
            objective: kind,
            n_circuits: circuits.len(),
            initial_value: res.trace[0],
            final_value: res.objective,
            iterations: res.iterations,
            converged: res.converged,
            message: res.message,
            trace: res.trace,
        });
        last_data = Some((data, circuits));
    }
    let (data, circuits) = last_data.expect("at least the final stage ran");
    let gateset = param.from_vector(&theta)?;
    let logl = Objective::new(final_kind, opts.p_min).value(&gateset, &data)?;
    Ok(FitResult {
        two_delta_logl: two_delta_logl(&gateset, &data, opts.p_min),
        logl,
        gateset,
        param_kind: opts.param_kind,
        theta,
        seed,
        stages,
        stage_estimates,
        circuits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit_engine::{exact_dataset, outcome_probabilities, simulate};
    use crate::experiment_design::{build_design, FiducialSet};
    use crate::models::{perturb, std_fiducials_xyi, std_germs_xyi, target_xyi};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_design() -> ExperimentDesign {
        let fids = FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() };
        build_design(&target_xyi(), &fids, &std_germs_xyi(), &[1, 2, 4]).unwrap()
    }

    fn noisy(seed: u64) -> GateSet {
        perturb(&target_xyi(), Default::default(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn exact_data_recovers_probabilities() {
        let design = small_design();
        let truth = noisy(1);
        let ds = exact_dataset(&truth, design.circuits(), 1_000_000_000_000).unwrap();
        let res = fit(&design, &ds, &target_xyi(), &FitOptions::default()).unwrap();
        assert!(res.converged(), "{:?}", res.stages.iter().map(|s| &s.message).collect::<Vec<_>>());
        let mut worst: f64 = 0.0;
        for c in design.circuits() {
            let a = outcome_probabilities(&truth, c).unwrap();
            let b = outcome_probabilities(&res.gateset, c).unwrap();
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs());
            }
        }
        assert!(worst < 1e-6, "worst probability error {worst}");
    }

    #[test]
    fn stages_follow_the_depth_schedule() {
        let design = small_design();
        let ds = simulate(&noisy(2), design.circuits(), 1000, 3).unwrap();
        let res = fit(&design, &ds, &target_xyi(), &FitOptions::default()).unwrap();
        assert_eq!(res.stages.len(), 4);
        assert_eq!(res.stages.iter().map(|s| s.max_depth).collect::<Vec<_>>(), vec![Some(1), Some(2), Some(4), None]);
        assert_eq!(res.stages[3].objective, ObjectiveKind::LogLTP);
        for s in &res.stages {
            assert!(s.trace.windows(2).all(|w| w[1] <= w[0]));
        }
        let n: Vec<usize> = res.stages.iter().map(|s| s.n_circuits).collect();
        assert!(n.windows(2).all(|w| w[0] <= w[1]));
        // deterministic
        let again = fit(&design, &ds, &target_xyi(), &FitOptions::default()).unwrap();
        assert_eq!(res.theta, again.theta);
    }

    #[test]
    fn truth_seeded_fit_barely_moves() {
        let design = small_design();
        let truth = noisy(4);
        let ds = exact_dataset(&truth, design.circuits(), 1_000_000_000_000).unwrap();
        let opts = FitOptions { start: Some(truth.clone()), ..Default::default() };
        let res = fit(&design, &ds, &target_xyi(), &opts).unwrap();
        for s in &res.stages {
            assert!(s.final_value <= s.initial_value);
            assert!(s.initial_value - s.final_value < 1e-6 * s.initial_value.max(1.0) + 1e-6);
        }
    }

    #[test]
    fn missing_circuits_are_reported() {
        let design = small_design();
        let ds = simulate(&noisy(5), &design.circuits()[..50], 100, 1).unwrap();
        assert!(matches!(
            fit(&design, &ds, &target_xyi(), &FitOptions::default()),
            Err(crate::GstError::MissingCircuits(_))
        ));
    }

    #[test]
    fn full_kind_defaults_to_poisson() {
        let opts = FitOptions { param_kind: ParamKind::Full, ..Default::default() };
        assert_eq!(opts.final_kind(), ObjectiveKind::LogLPoisson);
        let bad = FitOptions { param_kind: ParamKind::Full, final_objective: Some(ObjectiveKind::LogLTP), ..Default::default() };
        let design = small_design();
        let ds = simulate(&noisy(6), design.circuits(), 100, 1).unwrap();
        assert!(fit(&design, &ds, &target_xyi(), &bad).is_err());
    }
}
