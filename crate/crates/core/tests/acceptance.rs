//! Acceptance criteria 1–8. Runs as a plain binary (`harness = false`) so
//! that every criterion prints its PASS/FAIL line.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::{E, PI};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use common::{analytic_log_det, numeric_log_det, random_flow, random_input};
use flowdet::autodiff::{gradient_check, Tensor};
use flowdet::bench::{
    point_seed, preset, read_csv, run_point, run_sweep, train_flow_for, BenchPlan, BerRecord, FlowKey, FlowRegistry,
    FlowTraining, SweepAxis, SweepOptions,
};
use flowdet::channel::{all_candidates, gen_frame, MimoScenario, DEFAULT_CANDIDATE_CAP};
use flowdet::detect::{
    ggamp_detect, neighborhood, neighborhood_size, Detector, DetectorConfig, DetectorKind, ScoreScratch,
};
use flowdet::flow::{
    batch_tensor, build_nll, layers, mean_nll, save_checkpoint, squeeze, train, write_checkpoint, FlowConfig,
    FlowEvaluator, Scratch, TrainOptions,
};
use flowdet::noise::{sample_noise_in, NoiseSpec};
use flowdet::rng::Domain;

const FRAMES: usize = 100_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Trained flows shared between criteria, keyed by checkpoint file name.
#[derive(Default)]
struct Flows {
    cache: HashMap<String, Arc<FlowEvaluator>>,
}

impl Flows {
    fn get(&mut self, s: &MimoScenario) -> Arc<FlowEvaluator> {
        let key = FlowKey::for_scenario(s);
        self.cache
            .entry(key.file_name())
            .or_insert_with(|| {
                let t = Instant::now();
                let ckpt = train_flow_for(s, &FlowTraining::desk(s.n_rx)).unwrap();
                eprintln!(
                    "  trained flow {key} in {:.0} s (held-out NLL {:.4})",
                    t.elapsed().as_secs_f64(),
                    ckpt.metadata.final_holdout_nll.unwrap()
                );
                Arc::new(FlowEvaluator::new(ckpt.params).unwrap())
            })
            .clone()
    }
}

fn ber(s: &MimoScenario, config: DetectorConfig, flow: Option<Arc<FlowEvaluator>>, frames: usize) -> BerRecord {
    let det = Detector::for_scenario(config, s, flow).unwrap();
    let r = run_point(s, &det, frames, false).unwrap();
    eprintln!(
        "  {:<20} {} snr={} {}: ber {:.3e} ({} bit errors)",
        r.detector,
        r.family,
        r.snr_db,
        r.alpha.map(|a| format!("alpha={a}")).unwrap_or_default(),
        r.ber,
        r.bit_errors
    );
    r
}

fn manfe() -> DetectorConfig {
    DetectorConfig::new(DetectorKind::Manfe)
}

fn fig3_point(alpha: f64) -> MimoScenario {
    preset("fig3-desk")
        .unwrap()
        .points()
        .into_iter()
        .find(|p| p.scenario.noise.alpha() == Some(alpha))
        .unwrap()
        .scenario
}

fn gaussian_equivalence(flows: &mut Flows) -> Outcome {
    let plan = BenchPlan {
        name: "alpha2".into(),
        n_tx: 4,
        n_rx: 4,
        noise: NoiseSpec::Sas { alpha: 2.0, sigma: 1.0 },
        axis: SweepAxis::Snr,
        axis_values: vec![10.0, 15.0, 20.0],
        snr_db: 0.0,
        detectors: vec![],
        frames: FRAMES,
        seed: 1,
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for p in plan.points() {
        let s = p.scenario;
        let flow = flows.get(&s);
        let e = ber(&s, DetectorConfig::new(DetectorKind::EMle), None, FRAMES);
        let m = ber(&s, manfe(), Some(flow), FRAMES);
        let rel = (m.ber - e.ber).abs() / e.ber;
        pass &= rel <= 0.25;
        parts.push(format!("{} dB rel diff {rel:.3}", s.snr_db));
    }
    outcome(pass, format!("{} (limit 0.25)", parts.join(", ")))
}

fn impulsive_advantage(flows: &mut Flows) -> Outcome {
    let s = fig3_point(1.9);
    let flow = flows.get(&s);
    let e = ber(&s, DetectorConfig::new(DetectorKind::EMle), None, FRAMES);
    let m = ber(&s, manfe(), Some(flow), FRAMES);
    let ratio = m.ber / e.ber;
    outcome(
        ratio <= 0.25,
        format!("MANFE/E-MLE = {ratio:.3} ({} vs {} bit errors, limit 0.25)", m.bit_errors, e.bit_errors),
    )
}

fn refinement(flows: &mut Flows) -> Outcome {
    let s = fig3_point(1.9);
    let flow = flows.get(&s);
    let g = ber(&s, DetectorConfig::new(DetectorKind::Ggamp), None, FRAMES);
    let r1 = ber(&s, DetectorConfig::with_errors(DetectorKind::GgampManfe, 1), Some(flow), FRAMES);
    let ratio = r1.ber / g.ber;
    let mut pass = ratio <= 0.8;
    let mut violations = Vec::new();
    for p in preset("fig3-desk").unwrap().points() {
        let s = p.scenario;
        let flow = flows.get(&s);
        let e1 = ber(&s, DetectorConfig::with_errors(DetectorKind::GgampManfe, 1), Some(flow.clone()), FRAMES);
        let e2 = ber(&s, DetectorConfig::with_errors(DetectorKind::GgampManfe, 2), Some(flow), FRAMES);
        if e2.ber > e1.ber {
            pass = false;
            violations.push(format!("alpha={}", s.noise.alpha().unwrap()));
        }
    }
    outcome(
        pass,
        format!(
            "G-GAMP-MANFE(1)/G-GAMP = {ratio:.3} ({} vs {} bit errors, limit 0.8); MANFE(2) > MANFE(1) at [{}]",
            r1.bit_errors,
            g.bit_errors,
            violations.join(", ")
        ),
    )
}

fn candidate_counts() -> Outcome {
    let n1 = neighborhood(&[0, 1, 2, 3], 1, 4).unwrap().len();
    let n2 = neighborhood(&[0, 1, 2, 3], 2, 4).unwrap().len();
    let all = all_candidates(4, 4, DEFAULT_CANDIDATE_CAP).unwrap().len();
    let pass = (n1, n2, all) == (13, 67, 256)
        && neighborhood_size(4, 4, 1) == 13
        && neighborhood_size(4, 4, 2) == 67;
    outcome(pass, format!("E=1: {n1}, E=2: {n2}, exhaustive: {all}"))
}

fn analytic_oracles(flows: &mut Flows) -> Outcome {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for name in ["fig9-desk", "fig10-desk"] {
        for p in preset(name).unwrap().points() {
            let s = p.scenario;
            let flow = flows.get(&s);
            let o = ber(&s, DetectorConfig::new(DetectorKind::OracleMle), None, FRAMES);
            let m = ber(&s, manfe(), Some(flow), FRAMES);
            let ok = m.bit_errors as f64 <= 1.3 * o.bit_errors as f64;
            pass &= ok;
            if o.bit_errors > 0 {
                worst = worst.max(m.ber / o.ber);
            }
            if !ok {
                parts.push(format!("{} {} dB: {} vs {}", s.noise.family().as_str(), s.snr_db, m.bit_errors, o.bit_errors));
            }
        }
    }
    outcome(
        pass,
        format!("worst MANFE/ML = {worst:.3} (limit 1.3); failing points: [{}]", parts.join("; ")),
    )
}

fn flow_suite() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // (a) analytic log-det against a dense numerical Jacobian
    let mut worst_ld: f64 = 0.0;
    for i in 0..100u64 {
        let dim = 1 + (i % 4) as usize;
        let ev = FlowEvaluator::new(random_flow(FlowConfig::new(dim), 1000 + i, 0.1)).unwrap();
        let h0 = random_input(2 * dim, 5000 + i);
        worst_ld = worst_ld.max((analytic_log_det(&ev, &h0) - numeric_log_det(&ev, &h0, 1e-5)).abs());
    }
    pass &= worst_ld < 1e-5;
    notes.push(format!("(a) log-det err {worst_ld:.1e}"));

    // (b) inverses, whole flow and each coupling
    let mut worst_inv: f64 = 0.0;
    for i in 0..100u64 {
        let dim = 1 + (i % 4) as usize;
        let p = random_flow(FlowConfig::new(dim), 2000 + i, 0.1);
        let ev = FlowEvaluator::new(p.clone()).unwrap();
        let h0 = random_input(2 * dim, 6000 + i);
        let trace = ev.trace_flat(&h0).unwrap();
        let back = ev.inverse_flat(trace.activations.last().unwrap()).unwrap();
        let mut err = back.iter().zip(&h0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        for k in 0..p.config.k_steps {
            let (a, _) = layers::actnorm(&p, k, &trace.activations[k]).unwrap();
            let (c, _) = layers::conv(&p, k, &a).unwrap();
            let (u0, _) = layers::coupling(&p, k, 0, &c);
            let (u1, _) = layers::coupling(&p, k, 1, &u0);
            let back0 = layers::coupling_inverse(&p, k, 1, &u1);
            let back1 = layers::coupling_inverse(&p, k, 0, &back0);
            err = err.max(u1.iter().zip(&trace.activations[k + 1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            err = err.max(back1.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        worst_inv = worst_inv.max(err);
    }
    pass &= worst_inv < 1e-8;
    notes.push(format!("(b) inverse err {worst_inv:.1e}"));

    // (c) NLL gradient against central differences
    let mut worst_grad: f64 = 0.0;
    for dim in 1..=4 {
        let mut config = FlowConfig::new(dim);
        config.k_steps = 2;
        let p = random_flow(config, 3000 + dim as u64, 0.1);
        let data = random_input(8 * config.flat_dim(), 7000 + dim as u64);
        let tensors: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        let report = gradient_check(
            &tensors,
            |g, ids| {
                let batch = g.constant(batch_tensor(&data, config.flat_dim())?);
                build_nll(g, ids, &config, batch)
            },
            1e-6,
            1e-4,
        )
        .unwrap();
        pass &= report.passed;
        worst_grad = worst_grad.max(report.max_rel_error);
    }
    notes.push(format!("(c) gradient rel err {worst_grad:.1e}"));

    // (d) a trained single-antenna density integrates to one
    let spec = flowdet::channel::noise_for_sigma(&NoiseSpec::two_component_mixture(), 1.0);
    let data = sample_noise_in(&spec, 20_000, 1, 11, Domain::TrainingData).unwrap();
    let opts = TrainOptions {
        epochs: 10,
        batch_size: 256,
        ..TrainOptions::default()
    };
    let (params, _) = train(FlowConfig::new(1), &data, &opts).unwrap();
    let ev = FlowEvaluator::new(params).unwrap();
    let (half, step) = (15.0, 0.02);
    let n = (2.0 * half / step) as usize;
    let mut s = Scratch::default();
    let mut mass = 0.0;
    for i in 0..n {
        let re = -half + (i as f64 + 0.5) * step;
        for j in 0..n {
            let im = -half + (j as f64 + 0.5) * step;
            let lp = ev.log_prob_flat(&[re, im], &mut s).unwrap();
            mass += lp.exp() * step * step;
        }
    }
    pass &= (mass - 1.0).abs() <= 0.01;
    notes.push(format!("(d) mass {mass:.4}"));

    // (e) Gaussian NLL against the analytic entropy
    let sigma = 1.0;
    let dim = 2;
    let total = 120_000;
    let data = sample_noise_in(&NoiseSpec::Gaussian { sigma }, total, dim, 12, Domain::TrainingData).unwrap();
    let opts = TrainOptions {
        holdout_fraction: 20_000.0 / total as f64,
        ..TrainOptions::default()
    };
    let (params, _) = train(FlowConfig::new(dim), &data, &opts).unwrap();
    let test = sample_noise_in(&NoiseSpec::Gaussian { sigma }, 20_000, dim, 13, Domain::TrainingData).unwrap();
    let flat: Vec<f64> = test.rows().flat_map(squeeze).collect();
    let nll = mean_nll(&FlowEvaluator::new(params).unwrap(), &flat).unwrap() / (2 * dim) as f64;
    let entropy = 0.5 * (2.0 * PI * E * sigma * sigma).ln();
    pass &= (nll - entropy).abs() <= 0.05;
    notes.push(format!("(e) NLL/dim {nll:.4} vs entropy {entropy:.4}"));

    outcome(pass, notes.join(", "))
}

fn determinism() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let s = MimoScenario {
        n_tx: 2,
        n_rx: 2,
        snr_db: 12.0,
        noise: NoiseSpec::Sas { alpha: 1.5, sigma: 1.0 },
        seed: 21,
    };
    let mut training = FlowTraining::desk(2);
    training.train_samples = 8_000;
    training.holdout_samples = 2_000;
    training.options.epochs = 3;
    let bytes = |c: &flowdet::flow::Checkpoint| {
        let mut b = Vec::new();
        write_checkpoint(c, &mut b).unwrap();
        b
    };
    let ck_a = train_flow_for(&s, &training).unwrap();
    let ck_b = train_flow_for(&s, &training).unwrap();
    let same_ckpt = bytes(&ck_a) == bytes(&ck_b);
    pass &= same_ckpt;
    notes.push(format!("checkpoints identical: {same_ckpt}"));

    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let parallel = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let flow = Arc::new(FlowEvaluator::new(ck_a.params.clone()).unwrap());
    let mut same_det = true;
    for kind in [DetectorKind::Manfe, DetectorKind::GgampManfe, DetectorKind::EMle] {
        let det = Detector::for_scenario(DetectorConfig::new(kind), &s, Some(flow.clone())).unwrap();
        let a = serial.install(|| run_point(&s, &det, 3000, false).unwrap());
        let b = parallel.install(|| run_point(&s, &det, 3000, false).unwrap());
        same_det &= a == b;
        let mut scratch = ScoreScratch::default();
        for i in 0..200 {
            let f = gen_frame(&s, i);
            let x = det.detect(&f, s.sigma().powi(2), &mut scratch).unwrap();
            let y = det.detect(&f, s.sigma().powi(2), &mut ScoreScratch::default()).unwrap();
            same_det &= x == y;
        }
    }
    pass &= same_det;
    notes.push(format!("detections identical: {same_det}"));

    let dir = tempfile::tempdir().unwrap();
    let mut registry = FlowRegistry::new(dir.path());
    save_checkpoint(&ck_a, &registry.path(&FlowKey::for_scenario(&s))).unwrap();
    let plan = BenchPlan {
        name: "det".into(),
        n_tx: 2,
        n_rx: 2,
        noise: s.noise.clone(),
        axis: SweepAxis::Snr,
        axis_values: vec![12.0],
        snr_db: 0.0,
        detectors: vec![manfe(), DetectorConfig::new(DetectorKind::Ggamp)],
        frames: 2000,
        seed: 21,
    };
    assert_eq!(point_seed(plan.seed, 0), s.seed);
    let csv_serial = dir.path().join("serial.csv");
    let csv_parallel = dir.path().join("parallel.csv");
    serial.install(|| run_sweep(&plan, Some(&mut registry), Some(&csv_serial), SweepOptions::default()).unwrap());
    parallel.install(|| run_sweep(&plan, Some(&mut registry), Some(&csv_parallel), SweepOptions::default()).unwrap());
    let same_csv = std::fs::read(&csv_serial).unwrap() == std::fs::read(&csv_parallel).unwrap()
        && read_csv(&csv_serial).unwrap().len() == 2;
    pass &= same_csv;
    notes.push(format!("CSVs identical: {same_csv}"));
    outcome(pass, notes.join(", "))
}

fn full_neighborhood(flows: &mut Flows) -> Outcome {
    let s = fig3_point(1.9);
    let flow = flows.get(&s);
    let all: BTreeSet<Vec<usize>> = all_candidates(4, 4, DEFAULT_CANDIDATE_CAP).unwrap().iter().map(<[usize]>::to_vec).collect();
    let exhaustive = Detector::for_scenario(manfe(), &s, Some(flow.clone())).unwrap();
    let local = Detector::for_scenario(DetectorConfig::with_errors(DetectorKind::GgampManfe, 4), &s, Some(flow)).unwrap();
    let mut scratch = ScoreScratch::default();
    let (mut same, mut same_sets) = (0, true);
    let noise_var = s.sigma().powi(2);
    for i in 0..1000 {
        let f = gen_frame(&s, i);
        let x0 = ggamp_detect(&f, 30, noise_var).x_hat;
        let ball: BTreeSet<Vec<usize>> = neighborhood(&x0, 4, 4).unwrap().iter().map(<[usize]>::to_vec).collect();
        same_sets &= ball == all;
        let a = exhaustive.detect(&f, noise_var, &mut scratch).unwrap();
        let b = local.detect(&f, noise_var, &mut scratch).unwrap();
        if a.x_hat == b.x_hat {
            same += 1;
        }
    }
    outcome(
        same == 1000 && same_sets,
        format!("{same}/1000 identical decisions, candidate sets equal: {same_sets}"),
    )
}

fn main() -> ExitCode {
    let mut flows = Flows::default();
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Flows) -> Outcome>)> = vec![
        ("1 Gaussian equivalence", Box::new(gaussian_equivalence)),
        ("2 impulsive advantage", Box::new(impulsive_advantage)),
        ("3 low-complexity refinement", Box::new(refinement)),
        ("4 candidate counts", Box::new(|_| candidate_counts())),
        ("5 analytic-noise oracles", Box::new(analytic_oracles)),
        ("6 flow correctness", Box::new(|_| flow_suite())),
        ("7 determinism", Box::new(|_| determinism())),
        ("8 E=N degeneracy", Box::new(full_neighborhood)),
    ];
    // ACCEPTANCE_ONLY=4,6 runs a subset
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_owned()).collect());
    let mut lines = Vec::new();
    for (name, run) in criteria {
        let number = name.split(' ').next().unwrap();
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == number)) {
            continue;
        }
        eprintln!("criterion {name}: running");
        let t = Instant::now();
        let o = run(&mut flows);
        let line = format!(
            "criterion {name}: {} ({}; {:.0} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push((o.pass, line));
    }
    println!("\nsummary:");
    for (_, line) in &lines {
        println!("{line}");
    }
    if lines.iter().all(|(p, _)| *p) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
