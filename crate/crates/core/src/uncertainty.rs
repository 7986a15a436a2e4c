//! Error bars: likelihood Hessian with gauge directions projected out, and
//! bootstrap ensembles refitted and gauge-fixed per sample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::circuit_engine::simulate::multinomial;
use crate::circuit_engine::{outcome_probabilities, DataSet};
use crate::error::{invalid, GstError, Result};
use crate::estimation::objective::{CompiledData, Objective, ObjectiveKind, DEFAULT_P_MIN};
use crate::estimation::{fit, FitOptions};
use crate::experiment_design::ExperimentDesign;
use crate::gauge_opt::staged_gauge_optimize;
use crate::gateset_model::{gauge_space_projector, GateSet, ParamKind, Parameterization};
use crate::linalg::{nullspace, sym_eigen, Mat, Vector};
use crate::util::substream_seed;

/// Relative step of the finite-difference Hessian.
pub const HESSIAN_STEP: f64 = 1e-5;
/// Eigenvalues below this fraction of the largest count as flat.
pub const FLAT_TOL: f64 = 1e-8;
pub const MAX_FAIL_FRACTION: f64 = 0.2;
pub const MIN_BOOTSTRAP_SAMPLES: usize = 10;

/// Hessian of `-logL` at `theta`: central differences of the analytic
/// gradient, symmetrized.
pub fn logl_hessian_at(param: &Parameterization, theta: &Vector, data: &CompiledData, kind: ObjectiveKind, p_min: f64) -> Result<Mat> {
    if kind == ObjectiveKind::Chi2 {
        return invalid("the Hessian needs a likelihood objective");
    }
    let obj = Objective::new(kind, p_min);
    let n = theta.len();
    let cols: Vec<Result<Vector>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let h = HESSIAN_STEP * theta[i].abs().max(1.0);
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let gp = obj.value_and_gradient(param, &tp, data)?.1;
            let gm = obj.value_and_gradient(param, &tm, data)?.1;
            Ok(-(gp - gm) / (2.0 * h))
        })
        .collect();
    let mut hess = Mat::zeros(n, n);
    for (i, c) in cols.into_iter().enumerate() {
        hess.set_column(i, &c?);
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

/// Hessian of `-logL` of `gs` on `data` in the coordinates of `kind`.
pub fn logl_hessian(gs: &GateSet, data: &CompiledData, kind: ParamKind) -> Result<Mat> {
    let param = Parameterization::new(kind, gs);
    let theta = param.to_vector(gs)?;
    let obj = if kind == ParamKind::Full { ObjectiveKind::LogLPoisson } else { ObjectiveKind::LogLTP };
    logl_hessian_at(&param, &theta, data, obj, DEFAULT_P_MIN)
}

#[derive(Clone, Debug)]
pub struct ConfidenceData {
    pub hessian: Mat,
    /// Projector onto the non-gauge complement, along the gauge directions.
    pub nongauge_projector: Mat,
    /// Orthonormal basis of the non-gauge complement (columns).
    pub nongauge_basis: Mat,
    /// Hessian restricted to the non-gauge basis.
    pub projected_hessian: Mat,
    pub gauge_rank: usize,
}

impl ConfidenceData {
    pub fn n_nongauge(&self) -> usize {
        self.nongauge_basis.ncols()
    }
}

/// Diagonal metric weighting gate parameters by `gate_weight` and the rest by 1.
pub fn intrinsic_error_metric(param: &Parameterization, gate_weight: f64) -> Vector {
    Vector::from_fn(param.num_params(), |i, _| if param.is_gate_param(i) { gate_weight } else { 1.0 })
}

/// Splits parameter space into gauge directions and their complement under
/// the diagonal metric `metric`, and restricts the Hessian to the complement.
pub fn nongauge_projection(hessian: &Mat, gs: &GateSet, kind: ParamKind, metric: &Vector) -> Result<ConfidenceData> {
    let param = Parameterization::new(kind, gs);
    let np = param.num_params();
    if hessian.shape() != (np, np) || metric.len() != np {
        return invalid("Hessian or metric does not match the parameterization");
    }
    if metric.iter().any(|&w| !(w > 0.0)) {
        return invalid("metric weights must be positive");
    }
    let gp = gauge_space_projector(gs, &param)?;
    let b = gp.basis.clone();
    let w = Mat::from_diagonal(metric);
    let btw = b.transpose() * &w;
    let p_gauge = if b.ncols() > 0 {
        &b * crate::linalg::inverse(&(&btw * &b))? * &btw
    } else {
        Mat::zeros(np, np)
    };
    let projector = Mat::identity(np, np) - p_gauge;
    let basis = if b.ncols() > 0 { nullspace(&btw, 1e-10) } else { Mat::identity(np, np) };
    let projected = basis.transpose() * hessian * &basis;
    let (ev, vecs) = sym_eigen(&projected);
    let hmax = sym_eigen(hessian).0.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let flat: Vec<usize> = (0..ev.len()).filter(|&i| ev[i] <= FLAT_TOL * hmax).collect();
    if !flat.is_empty() {
        let dirs: Vec<String> = flat
            .iter()
            .map(|&i| {
                let v = &basis * vecs.column(i);
                let (j, _) = v.iter().enumerate().fold((0, 0.0), |acc, (j, x)| if x.abs() > acc.1 { (j, x.abs()) } else { acc });
                format!("eigenvalue {:.3e} along parameter {j}", ev[i])
            })
            .collect();
        return Err(GstError::RankDeficient(format!(
            "{} flat non-gauge directions: {}",
            flat.len(),
            dirs.join("; ")
        )));
    }
    Ok(ConfidenceData {
        hessian: hessian.clone(),
        nongauge_projector: projector,
        nongauge_basis: basis,
        projected_hessian: projected,
        gauge_rank: gp.rank,
    })
}

/// Hessian of `gs` on `circuits` of `ds`, projected with gate parameters
/// weighted `gate_weight` relative to SPAM.
pub fn confidence_data(gs: &GateSet, ds: &DataSet, circuits: &[crate::circuit_engine::Circuit], kind: ParamKind, gate_weight: f64) -> Result<ConfidenceData> {
    let data = CompiledData::new(gs, ds, circuits)?;
    let hessian = logl_hessian(gs, &data, kind)?;
    let param = Parameterization::new(kind, gs);
    nongauge_projection(&hessian, gs, kind, &intrinsic_error_metric(&param, gate_weight))
}

/// Position of gate entry `(r, c)` in [`named_quantities`] and in the rows of
/// [`named_quantity_gradients`].
pub fn gate_element_index(gs: &GateSet, label: &str, r: usize, c: usize) -> Result<usize> {
    let g = gs.gate_index(label).ok_or_else(|| GstError::MissingGate(label.to_string()))?;
    let n = gs.d2();
    if r >= n || c >= n {
        return invalid("gate element out of range");
    }
    Ok(gs.preps.len() * n + g * n * n + r * n + c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianInterval {
    pub delta: f64,
    /// The gradient has no component outside the gauge directions.
    pub pure_gauge: bool,
}

fn hessian_interval(conf: &ConfidenceData, grad: &Vector, c: f64) -> Result<HessianInterval> {
    if grad.len() != conf.hessian.nrows() {
        return invalid("gradient length does not match the Hessian");
    }
    let g = conf.nongauge_basis.transpose() * grad;
    if g.norm() <= 1e-12 * grad.norm().max(1e-300) || grad.norm() == 0.0 {
        return Ok(HessianInterval { delta: 0.0, pure_gauge: grad.norm() > 0.0 });
    }
    let chol = (conf.projected_hessian.clone() / c)
        .cholesky()
        .ok_or_else(|| GstError::RankDeficient("projected Hessian is not positive definite".into()))?;
    let x = chol.solve(&g);
    Ok(HessianInterval { delta: g.dot(&x).max(0.0).sqrt(), pure_gauge: false })
}

/// `delta f = sqrt(g^T (H_ng / C_1)^-1 g)` with `g` the non-gauge part of
/// `grad`, `C_1` the `alpha` quantile of chi-squared with one degree of freedom.
pub fn scalar_interval_hessian(conf: &ConfidenceData, grad: &Vector, alpha: f64) -> Result<HessianInterval> {
    hessian_interval(conf, grad, chi2_quantile(1.0, alpha)?)
}

/// Same with `C_k`, `k` the number of non-gauge parameters (projection of the
/// joint confidence region).
pub fn scalar_interval_region(conf: &ConfidenceData, grad: &Vector, alpha: f64) -> Result<HessianInterval> {
    hessian_interval(conf, grad, chi2_quantile(conf.n_nongauge() as f64, alpha)?)
}

fn chi2_quantile(k: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("confidence level must lie in (0, 1), got {alpha}"));
    }
    Ok(ChiSquared::new(k).map_err(|e| GstError::InvalidArgument(e.to_string()))?.inverse_cdf(alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BootstrapMode {
    Parametric,
    Nonparametric,
}

impl std::str::FromStr for BootstrapMode {
    type Err = GstError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" => Ok(BootstrapMode::Parametric),
            "nonparametric" | "non-parametric" => Ok(BootstrapMode::Nonparametric),
            _ => invalid(format!("unknown bootstrap mode '{s}'")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BootstrapEnsemble {
    pub mode: BootstrapMode,
    /// Gauge-fixed refits.
    pub samples: Vec<GateSet>,
    pub seed: u64,
    pub failures: usize,
}

/// Resampled data set: from `gs` (parametric) or from each row's observed
/// frequencies (nonparametric), keeping every row's shot count.
pub fn resample(ds: &DataSet, gs: Option<&GateSet>, seed: u64) -> Result<DataSet> {
    let rows = ds.sorted_rows();
    let sampled: Vec<Result<Vec<(String, u64)>>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let labels: Vec<String> = r.counts.iter().map(|(l, _)| l.clone()).collect();
            let probs = match gs {
                Some(gs) => {
                    let p = outcome_probabilities(gs, &r.circuit)?;
                    let by_label: Vec<f64> = labels
                        .iter()
                        .map(|l| {
                            gs.effect_labels[r.circuit.povm].iter().position(|x| x == l).map(|k| p[k]).unwrap_or(0.0)
                        })
                        .collect();
                    crate::circuit_engine::simulate::sampling_distribution(&by_label, &r.circuit)?
                }
                None => r.frequencies(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, i as u64));
            Ok(labels.into_iter().zip(multinomial(&mut rng, r.total, &probs)).collect())
        })
        .collect();
    let mut out = DataSet::new();
    out.meta.seed = Some(seed);
    for (r, s) in rows.iter().zip(sampled) {
        out.insert(r.circuit.clone(), s?);
    }
    Ok(out)
}

/// Refits `n_samples` resampled data sets (parametric ones drawn from
/// `estimate`) with the options of the original
/// fit and gauge-fixes each one to `target` with the staged procedure.
pub fn bootstrap(
    estimate: &GateSet,
    design: &ExperimentDesign,
    ds: &DataSet,
    target: &GateSet,
    opts: &FitOptions,
    mode: BootstrapMode,
    n_samples: usize,
    seed: u64,
) -> Result<BootstrapEnsemble> {
    let results: Vec<Result<GateSet>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let s = substream_seed(seed, i as u64);
            let source = match mode {
                BootstrapMode::Parametric => Some(estimate),
                BootstrapMode::Nonparametric => None,
            };
            let data = resample(ds, source, s)?;
            let f = fit(design, &data, target, &FitOptions { start: None, ..opts.clone() })?;
            staged_gauge_optimize(&f.gateset, target, opts.param_kind)
        })
        .collect();
    let mut samples = Vec::new();
    let mut failures = 0;
    for r in results {
        match r {
            Ok(g) => samples.push(g),
            Err(_) => failures += 1,
        }
    }
    if n_samples > 0 && failures as f64 > MAX_FAIL_FRACTION * n_samples as f64 {
        return Err(GstError::Bootstrap(format!("{failures} of {n_samples} bootstrap fits failed")));
    }
    Ok(BootstrapEnsemble { mode, samples, seed, failures })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarInterval {
    pub value: f64,
    pub delta: f64,
    pub low: f64,
    pub high: f64,
    pub warning: Option<String>,
}

/// `f(estimate) +- z sigma`, `sigma` the sample standard deviation of `f`
/// over the ensemble and `z` the two-sided normal quantile for `alpha`.
pub fn scalar_interval_bootstrap<F>(ensemble: &BootstrapEnsemble, estimate: &GateSet, f: F, alpha: f64) -> Result<ScalarInterval>
where
    F: Fn(&GateSet) -> f64,
{
    let vals: Vec<f64> = ensemble.samples.iter().map(&f).collect();
    interval_from_samples(f(estimate), &vals, alpha)
}

pub fn interval_from_samples(value: f64, vals: &[f64], alpha: f64) -> Result<ScalarInterval> {
    if vals.is_empty() {
        return invalid("bootstrap ensemble is empty");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("confidence level must lie in (0, 1), got {alpha}"));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 { vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let z = Normal::standard().inverse_cdf(0.5 + alpha / 2.0);
    let delta = z * var.sqrt();
    let warning = (vals.len() < MIN_BOOTSTRAP_SAMPLES)
        .then(|| format!("only {} bootstrap samples; interval is unreliable", vals.len()));
    Ok(ScalarInterval { value, delta, low: value - delta, high: value + delta, warning })
}

/// Gate matrix elements, prep and effect entries, named like `Gx[1,2]`.
pub fn named_quantities(gs: &GateSet) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, p) in gs.preps.iter().enumerate() {
        out.extend(p.iter().enumerate().map(|(k, x)| (format!("rho{i}[{k}]"), *x)));
    }
    for (l, g) in gs.gate_labels.iter().zip(&gs.gates) {
        for r in 0..g.nrows() {
            for c in 0..g.ncols() {
                out.push((format!("{l}[{r},{c}]"), g[(r, c)]));
            }
        }
    }
    for (m, povm) in gs.povms.iter().enumerate() {
        for (e, v) in gs.effect_labels[m].iter().zip(povm) {
            out.extend(v.iter().enumerate().map(|(k, x)| (format!("M{m}:{e}[{k}]"), *x)));
        }
    }
    out
}

/// Gradients of [`named_quantities`] with respect to the parameters.
pub fn named_quantity_gradients(gs: &GateSet, param: &Parameterization) -> Result<Mat> {
    // element vector order: preps, gates (row-major), effects
    let theta = param.to_vector(gs)?;
    param.jacobian(&theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit_engine::simulate;
    use crate::estimation::FitResult;
    use crate::experiment_design::{build_design, FiducialSet};
    use crate::gateset_model::gauge_jacobian;
    use crate::models::{perturb, std_fiducials_xyi, std_germs_xyi, target_xyi};
    use rand::Rng;

    fn design() -> ExperimentDesign {
        let fids = FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() };
        build_design(&target_xyi(), &fids, &std_germs_xyi(), &[1, 2]).unwrap()
    }

    fn fitted(kind: ParamKind, seed: u64, shots: u64) -> (ExperimentDesign, DataSet, FitResult) {
        let d = design();
        let truth = perturb(&target_xyi(), Default::default(), &mut ChaCha8Rng::seed_from_u64(seed));
        let ds = simulate(&truth, d.circuits(), shots, seed).unwrap();
        let r = fit(&d, &ds, &target_xyi(), &FitOptions { param_kind: kind, ..Default::default() }).unwrap();
        (d, ds, r)
    }

    #[test]
    fn hessian_is_symmetric_and_matches_gradient_differences() {
        let (d, ds, r) = fitted(ParamKind::TP, 1, 1000);
        let data = CompiledData::new(&r.gateset, &ds, d.circuits()).unwrap();
        let param = Parameterization::new(ParamKind::TP, &r.gateset);
        let theta = param.to_vector(&r.gateset).unwrap();
        let h = logl_hessian(&r.gateset, &data, ParamKind::TP).unwrap();
        assert!((&h - h.transpose()).amax() < 1e-10 * h.amax());
        let obj = Objective::new(ObjectiveKind::LogLTP, DEFAULT_P_MIN);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let v = Vector::from_fn(theta.len(), |_, _| rng.random_range(-1.0..1.0)).normalize();
            let e = 1e-5;
            let gp = obj.value_and_gradient(&param, &(&theta + &v * e), &data).unwrap().1;
            let gm = obj.value_and_gradient(&param, &(&theta - &v * e), &data).unwrap().1;
            let fd = -(gp - gm) / (2.0 * e);
            let hv = &h * &v;
            assert!((&fd - &hv).norm() <= 1e-5 * hv.norm().max(1.0), "{}", (&fd - &hv).norm() / hv.norm());
        }
    }

    #[test]
    fn full_kind_hessian_has_sixteen_flat_directions() {
        let (d, ds, r) = fitted(ParamKind::Full, 2, 1000);
        let data = CompiledData::new(&r.gateset, &ds, d.circuits()).unwrap();
        let h = logl_hessian(&r.gateset, &data, ParamKind::Full).unwrap();
        let (ev, _) = sym_eigen(&h);
        let max = ev.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        assert_eq!(ev.iter().filter(|&&x| x.abs() < FLAT_TOL * max).count(), 16, "{:?}", &ev[..18]);
        let conf = nongauge_projection(&h, &r.gateset, ParamKind::Full, &Vector::from_element(60, 1.0)).unwrap();
        assert_eq!(conf.n_nongauge(), 60 - 16);
        let pev = sym_eigen(&conf.projected_hessian).0;
        assert!(pev[0] > FLAT_TOL * max);
    }

    #[test]
    fn projector_complements_the_gauge_space() {
        let (_, _, r) = fitted(ParamKind::TP, 3, 1000);
        let param = Parameterization::new(ParamKind::TP, &r.gateset);
        let np = param.num_params();
        let metric = intrinsic_error_metric(&param, 4.0);
        let gp = gauge_space_projector(&r.gateset, &param).unwrap();
        let w = Mat::from_diagonal(&metric);
        let b = &gp.basis;
        let p_gauge = b * crate::linalg::inverse(&(b.transpose() * &w * b)).unwrap() * b.transpose() * &w;
        let h = Mat::identity(np, np);
        let conf = nongauge_projection(&h, &r.gateset, ParamKind::TP, &metric).unwrap();
        assert!((&conf.nongauge_projector * &p_gauge).amax() < 1e-10);
        assert!((&conf.nongauge_projector * &conf.nongauge_projector - &conf.nongauge_projector).amax() < 1e-10);
    }

    #[test]
    fn gaussian_toy_interval() {
        // -logL = (theta - t0)^2 / (2 sigma^2) in one dimension, no gauge
        let sigma = 0.3;
        let conf = ConfidenceData {
            hessian: Mat::from_element(1, 1, 1.0 / (sigma * sigma)),
            nongauge_projector: Mat::identity(1, 1),
            nongauge_basis: Mat::identity(1, 1),
            projected_hessian: Mat::from_element(1, 1, 1.0 / (sigma * sigma)),
            gauge_rank: 0,
        };
        let d = scalar_interval_hessian(&conf, &Vector::from_element(1, 1.0), 0.95).unwrap();
        assert!((d.delta - 1.959964 * sigma).abs() < 1e-5);
        assert_eq!(scalar_interval_hessian(&conf, &Vector::zeros(1), 0.95).unwrap().delta, 0.0);
    }

    #[test]
    fn pure_gauge_gradient_has_zero_width() {
        let (d, ds, r) = fitted(ParamKind::TP, 4, 1000);
        let data = CompiledData::new(&r.gateset, &ds, d.circuits()).unwrap();
        let h = logl_hessian(&r.gateset, &data, ParamKind::TP).unwrap();
        let param = Parameterization::new(ParamKind::TP, &r.gateset);
        let metric = intrinsic_error_metric(&param, 4.0);
        let conf = nongauge_projection(&h, &r.gateset, ParamKind::TP, &metric).unwrap();
        let gp = gauge_space_projector(&r.gateset, &param).unwrap();
        let grad = Mat::from_diagonal(&metric) * gp.basis.column(0);
        let iv = scalar_interval_hessian(&conf, &grad, 0.95).unwrap();
        assert!(iv.pure_gauge && iv.delta == 0.0);
        // gauge_jacobian spans the element-space orbit tangents
        assert!(gauge_jacobian(&r.gateset).ncols() > 0);
    }

    #[test]
    fn region_interval_is_wider() {
        let (d, ds, r) = fitted(ParamKind::TP, 5, 1000);
        let data = CompiledData::new(&r.gateset, &ds, d.circuits()).unwrap();
        let h = logl_hessian(&r.gateset, &data, ParamKind::TP).unwrap();
        let param = Parameterization::new(ParamKind::TP, &r.gateset);
        let conf = nongauge_projection(&h, &r.gateset, ParamKind::TP, &intrinsic_error_metric(&param, 4.0)).unwrap();
        let g = named_quantity_gradients(&r.gateset, &param).unwrap().row(8).transpose();
        let a = scalar_interval_hessian(&conf, &g, 0.95).unwrap().delta;
        let b = scalar_interval_region(&conf, &g, 0.95).unwrap().delta;
        let c = scalar_interval_hessian(&conf, &g, 0.68).unwrap().delta;
        assert!(b > a && a > c && c > 0.0);
    }

    #[test]
    fn bootstrap_basics() {
        let (d, ds, r) = fitted(ParamKind::TP, 6, 1000);
        let opts = FitOptions::default();
        let empty = bootstrap(&r.gateset, &d, &ds, &target_xyi(), &opts, BootstrapMode::Parametric, 0, 1).unwrap();
        assert!(empty.samples.is_empty());
        let a = bootstrap(&r.gateset, &d, &ds, &target_xyi(), &opts, BootstrapMode::Nonparametric, 3, 7).unwrap();
        let b = bootstrap(&r.gateset, &d, &ds, &target_xyi(), &opts, BootstrapMode::Nonparametric, 3, 7).unwrap();
        assert_eq!(a.samples.len(), 3);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.element_vector(), y.element_vector());
        }
        let iv = scalar_interval_bootstrap(&a, &r.gateset, |g| g.gates[1][(2, 3)], 0.95).unwrap();
        assert!(iv.warning.is_some());
    }

    #[test]
    fn sample_interval_examples() {
        let c = interval_from_samples(2.0, &[2.0; 20], 0.95).unwrap();
        assert_eq!((c.low, c.high), (2.0, 2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = rand_distr::Normal::new(0.0, 0.5).unwrap();
        let vals: Vec<f64> = (0..1000).map(|_| rng.sample(normal)).collect();
        let iv = interval_from_samples(0.0, &vals, 0.95).unwrap();
        assert!((iv.delta - 1.959964 * 0.5).abs() < 0.1 * 1.959964 * 0.5);
        assert!(iv.warning.is_none());
        let narrow = interval_from_samples(0.0, &vals, 0.68).unwrap();
        assert!(narrow.delta < iv.delta);
        assert!(interval_from_samples(0.0, &[], 0.95).is_err());
    }

    #[test]
    fn resampling_keeps_shot_counts() {
        let (_, ds, r) = fitted(ParamKind::TP, 8, 500);
        for src in [Some(&r.gateset), None] {
            let s = resample(&ds, src, 3).unwrap();
            for (a, b) in ds.sorted_rows().iter().zip(s.sorted_rows()) {
                assert_eq!(a.circuit, b.circuit);
                assert_eq!(a.total, b.total);
            }
        }
    }
}
