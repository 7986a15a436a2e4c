use gst_core::circuit_engine::{simulate, DataSet};
use gst_core::estimation::{fit, FitOptions, FitResult};
use gst_core::experiment_design::{build_design, ExperimentDesign, FiducialSet};
use gst_core::gauge_opt::staged_gauge_optimize;
use gst_core::gateset_model::{GateSet, ParamKind, Parameterization};
use gst_core::models::{perturb, std_fiducials_xyi, std_germs_xyi, target_xyi};
use gst_core::uncertainty::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const DEPTHS: [usize; 2] = [1, 2];

fn design() -> ExperimentDesign {
    let fids = FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() };
    build_design(&target_xyi(), &fids, &std_germs_xyi(), &DEPTHS).unwrap()
}

fn truth() -> GateSet {
    perturb(&target_xyi(), Default::default(), &mut ChaCha8Rng::seed_from_u64(11))
}

fn gauge_fixed_fit(d: &ExperimentDesign, ds: &DataSet) -> (FitResult, GateSet) {
    let r = fit(d, ds, &target_xyi(), &FitOptions::default()).unwrap();
    let g = staged_gauge_optimize(&r.gateset, &target_xyi(), ParamKind::TP).unwrap();
    (r, g)
}

// (Gx[2,2], Gy[1,3]) sit in rotation-sensitive blocks
fn elements(gs: &GateSet) -> Vec<usize> {
    vec![gate_element_index(gs, "Gx", 2, 2).unwrap(), gate_element_index(gs, "Gy", 1, 3).unwrap()]
}

fn hessian_delta(d: &ExperimentDesign, ds: &DataSet, gs: &GateSet, idx: usize, alpha: f64) -> f64 {
    let w = (*DEPTHS.last().unwrap() as f64).powi(2);
    let conf = confidence_data(gs, ds, d.circuits(), ParamKind::TP, w).unwrap();
    let param = Parameterization::new(ParamKind::TP, gs);
    let grad = named_quantity_gradients(gs, &param).unwrap().row(idx).transpose();
    scalar_interval_hessian(&conf, &grad, alpha).unwrap().delta
}

#[test]
fn intervals_shrink_as_one_over_root_n() {
    let d = design();
    let t = truth();
    for idx in elements(&t) {
        let mut ratios = Vec::new();
        for seed in 0..3 {
            let a = simulate(&t, d.circuits(), 1000, 100 + seed).unwrap();
            let b = simulate(&t, d.circuits(), 4000, 200 + seed).unwrap();
            let (_, ga) = gauge_fixed_fit(&d, &a);
            let (_, gb) = gauge_fixed_fit(&d, &b);
            ratios.push(hessian_delta(&d, &a, &ga, idx, 0.95) / hessian_delta(&d, &b, &gb, idx, 0.95));
        }
        for r in &ratios {
            assert!((r - 2.0).abs() < 0.4, "delta(N)/delta(4N) = {r}");
        }
    }
}

#[test]
fn bootstrap_agrees_with_hessian() {
    let d = design();
    let ds = simulate(&truth(), d.circuits(), 1000, 5).unwrap();
    let (r, g) = gauge_fixed_fit(&d, &ds);
    let ens = bootstrap(&r.gateset, &d, &ds, &target_xyi(), &FitOptions::default(), BootstrapMode::Parametric, 60, 9).unwrap();
    assert_eq!(ens.failures, 0);
    let c1 = ChiSquared::new(1.0).unwrap().inverse_cdf(0.95);
    for idx in elements(&g) {
        let se_h = hessian_delta(&d, &ds, &g, idx, 0.95) / c1.sqrt();
        let vals: Vec<f64> = ens.samples.iter().map(|s| s.element_vector()[idx]).collect();
        let iv = interval_from_samples(g.element_vector()[idx], &vals, 0.6826894921370859).unwrap();
        let se_b = iv.delta;
        let ratio = se_b / se_h;
        assert!((1.0 / 1.5..=1.5).contains(&ratio), "bootstrap {se_b:.3e} vs hessian {se_h:.3e}");
    }
}

#[test]
fn hessian_interval_coverage() {
    let d = design();
    let t = truth();
    let t_fixed = staged_gauge_optimize(&t, &target_xyi(), ParamKind::TP).unwrap();
    let idx = elements(&t)[0];
    let truth_val = t_fixed.element_vector()[idx];
    let trials = 200u64;
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|s| {
            let ds = simulate(&t, d.circuits(), 1000, 1000 + s).unwrap();
            let (_, g) = gauge_fixed_fit(&d, &ds);
            let delta = hessian_delta(&d, &ds, &g, idx, 0.95);
            usize::from((g.element_vector()[idx] - truth_val).abs() <= delta)
        })
        .sum();
    let cov = hits as f64 / trials as f64;
    assert!((0.88..=0.99).contains(&cov), "coverage {cov}");
}
