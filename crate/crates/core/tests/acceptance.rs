//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use netdr::allocation::{pi_joint, pi_neighborhood};
use netdr::design::Term;
use netdr::estimators::{ipw_mean, EstimationContext, Estimand, EstimatorKind, Target};
use netdr::outcome::{fit_wls, OutcomeDesign, OutcomeFit, OutcomeVariant};
use netdr::propensity::{joint_propensity, PropensityFit};
use netdr::quadrature::GaussHermite;
use netdr::simulate::{run_scenarios, study_truth, DgpConfig, ScenarioEntry, ScenarioReport, Study};
use netdr::{ComponentGraph, NodeData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for d in 0..=64usize {
        for k in 0..=100 {
            let alpha = k as f64 / 100.0;
            let mut nb = 0.0;
            let mut joint = 0.0;
            for s in 0..=d {
                nb += pi_neighborhood(s, d, alpha).unwrap();
                joint += pi_joint(0, s, d, alpha).unwrap() + pi_joint(1, s, d, alpha).unwrap();
            }
            worst = worst.max((nb - 1.0).abs()).max((joint - 1.0).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-12 && secs < 5.0, format!("max |sum - 1| = {worst:.2e}, {secs:.2} s"))
}

/// Trapezoid rule on [-14 sd, 14 sd] with 40,001 points.
fn trapezoid_joint(eta: &[f64], z: &[u8], phi: f64) -> f64 {
    let sd = phi.sqrt();
    let steps = 40_000;
    let (a, b) = (-14.0 * sd, 14.0 * sd);
    let dx = (b - a) / steps as f64;
    let mut total = 0.0;
    for k in 0..=steps {
        let u = a + k as f64 * dx;
        let dens = (-0.5 * u * u / phi).exp() / (2.0 * std::f64::consts::PI * phi).sqrt();
        let prod: f64 = eta
            .iter()
            .zip(z)
            .map(|(&e, &zj)| if zj == 1 { logistic(e + u) } else { 1.0 - logistic(e + u) })
            .product();
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        total += w * dens * prod;
    }
    total * dx
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..1000 {
        let d = rng.random_range(0..=6usize);
        let phi = rng.random_range(1e-3..=4.0);
        let eta: Vec<f64> = (0..=d).map(|_| rng.random_range(-5.0..=5.0)).collect();
        let z: Vec<u8> = (0..=d).map(|_| u8::from(rng.random::<bool>())).collect();
        let edges: Vec<(usize, usize)> = (1..=d).map(|j| (0, j)).collect();
        let g = ComponentGraph::load(&edges, d + 1).unwrap();
        let data = NodeData::new(vec!["eta".into()], vec![eta.clone()], z.clone(), vec![0.0; d + 1]).unwrap();
        let fit = PropensityFit::from_parameters(vec![Term::column("eta")], vec![0.0, 1.0], phi, 10).unwrap();
        let got = joint_propensity(&fit, &g, &data, 0, z[0], &z[1..]).unwrap();
        let oracle = trapezoid_joint(&eta, &z, phi);
        let rel = (got - oracle).abs() / oracle;
        worst = worst.max(rel);
        failures += usize::from(rel > 1e-6);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 10.0,
        format!("max relative error {worst:.2e}, {failures}/1000 instances above 1e-6, {secs:.2} s"),
    )
}

/// Random graph on `n` nodes split into one to three blocks.
fn small_instance(rng: &mut ChaCha8Rng, n: usize) -> (ComponentGraph, Vec<f64>) {
    let blocks = rng.random_range(1..=3usize).min(n);
    let block_of: Vec<usize> = (0..n).map(|i| i * blocks / n).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if block_of[i] == block_of[j] && rng.random::<f64>() < 0.35 {
                edges.push((i, j));
            }
        }
    }
    let g = ComponentGraph::from_blocks(&edges, &block_of).unwrap();
    let x = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (g, x)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..=12usize);
        let (g, x) = small_instance(&mut rng, n);
        let gamma = vec![rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)];
        let phi = rng.random_range(0.2..1.5);
        let fit = PropensityFit::from_parameters(vec![Term::column("x")], gamma.clone(), phi, 8).unwrap();
        // y_i(z, s) = a_i + b_i z + c_i s + d_i z s^2
        let coef: Vec<[f64; 4]> = (0..n).map(|_| [0.0; 4].map(|_: f64| rng.random_range(-2.0..2.0))).collect();
        let y_of = |i: usize, z: u8, s: usize| {
            let c = coef[i];
            let (zf, sf) = (f64::from(z), s as f64);
            c[0] + c[1] * zf + c[2] * sf + c[3] * zf * sf * sf
        };
        // treatment law: discrete mixture over the same quadrature nodes, component-wise
        let rule = GaussHermite::new(8).unwrap();
        let (nodes, weights) = rule.normal_points(phi);
        let prob = |z: &[u8]| -> f64 {
            g.components()
                .iter()
                .map(|comp| {
                    nodes
                        .iter()
                        .zip(&weights)
                        .map(|(&b, &w)| {
                            w * comp
                                .iter()
                                .map(|&i| {
                                    let p = logistic(gamma[0] + gamma[1] * x[i] + b);
                                    if z[i] == 1 { p } else { 1.0 - p }
                                })
                                .product::<f64>()
                        })
                        .sum::<f64>()
                })
                .product()
        };
        for (zt, alpha) in [(0u8, 0.3), (1, 0.3), (1, 0.75)] {
            let truth = g
                .components()
                .iter()
                .map(|comp| {
                    comp.iter()
                        .map(|&i| {
                            let d = g.degree(i);
                            (0..=d).map(|s| y_of(i, zt, s) * pi_neighborhood(s, d, alpha).unwrap()).sum::<f64>()
                        })
                        .sum::<f64>()
                        / comp.len() as f64
                })
                .sum::<f64>()
                / g.n_components() as f64;
            let mut expectation = 0.0;
            let mut total_prob = 0.0;
            for bits in 0..(1u32 << n) {
                let z: Vec<u8> = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
                let y: Vec<f64> =
                    (0..n).map(|i| y_of(i, z[i], g.neighborhood_treatment_sum(&z, i).unwrap())).collect();
                let data = NodeData::new(vec!["x".into()], vec![x.clone()], z.clone(), y).unwrap();
                let p = prob(&z);
                total_prob += p;
                expectation += p * ipw_mean(&g, &data, &fit, zt, alpha).unwrap().value;
            }
            worst = worst.max((expectation - truth).abs()).max((total_prob - 1.0).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-10 && secs < 60.0, format!("max |E[IPW] - truth| = {worst:.2e} over 50 graphs, {secs:.2} s"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let design = OutcomeDesign { terms: vec![Term::column("x")], ..Default::default() };
    let targets = [
        Target::Arm { z: 0, alpha: 0.3 },
        Target::Arm { z: 1, alpha: 0.6 },
        Target::Marginal { alpha: 0.45 },
    ];
    let mut collapse_violations = 0;
    let mut worst_ipwls: f64 = 0.0;
    let mut wls_instances = 0;
    for _ in 0..200 {
        // three blocks of eight nodes: balanced components
        let n = 24;
        let block_of: Vec<usize> = (0..n).map(|i| i / 8).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if block_of[i] == block_of[j] && rng.random::<f64>() < 0.4 {
                    edges.push((i, j));
                }
            }
        }
        let g = ComponentGraph::from_blocks(&edges, &block_of).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
        let data = NodeData::new(vec!["x".into()], vec![x.clone()], z.clone(), y).unwrap();
        let fit_p = PropensityFit::from_parameters(
            vec![Term::column("x")],
            vec![rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)],
            rng.random_range(0.1..1.5),
            10,
        )
        .unwrap();
        let beta: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fit_o = OutcomeFit::from_coefficients(design.clone(), OutcomeVariant::Ols, beta).unwrap();
        let zero = OutcomeFit::from_coefficients(design.clone(), OutcomeVariant::Ols, vec![0.0; 5]).unwrap();
        let ctx = EstimationContext::with_propensity(&g, &data, &design, &fit_p).unwrap();
        let fitted: Vec<f64> = (0..n)
            .map(|i| {
                let d = g.degree(i);
                let h = if d == 0 { 0.0 } else { g.neighborhood_treatment_sum(&z, i).unwrap() as f64 / d as f64 };
                fit_o.predict(z[i], h, &[x[i]])
            })
            .collect();
        let data0 = data.with_outcome(fitted).unwrap();
        let ctx0 = EstimationContext::with_propensity(&g, &data0, &design, &fit_p).unwrap();
        for t in targets {
            collapse_violations += usize::from(ctx0.drbc(&fit_o, t).unwrap().value != ctx0.reg(&fit_o, t).unwrap().value);
            collapse_violations += usize::from(ctx.drbc(&zero, t).unwrap().value != ctx.ipw(t).unwrap().value);
        }
        for (zt, alpha) in [(0u8, 0.3), (1, 0.6)] {
            let Ok(arm) = fit_wls(&g, &data, &design, &fit_p, zt, alpha) else { continue };
            wls_instances += 1;
            let a = ctx.ipwls_arm(&arm).unwrap().value;
            let b = ctx.drbc(&arm, Target::Arm { z: zt, alpha }).unwrap().value;
            worst_ipwls = worst_ipwls.max((a - b).abs());
        }
    }
    outcome(
        collapse_violations == 0 && worst_ipwls <= 1e-8 && wls_instances > 0,
        format!(
            "{collapse_violations} exact-collapse violations in 1200 checks; IP-WLS vs DR-BC max gap {worst_ipwls:.2e} over {wls_instances} weighted fits"
        ),
    )
}

fn scheme1_report() -> ScenarioReport {
    let study = Study {
        dgp: DgpConfig::balanced(30),
        scenarios: ["a", "b", "c", "d", "latent"].iter().map(|s| ScenarioEntry::Preset(s.to_string())).collect(),
        estimators: EstimatorKind::ALL.to_vec(),
        estimands: vec![Estimand::De { alpha: 0.6 }, Estimand::De { alpha: 0.2 }],
        replicates: 200,
        seed: 1,
        ..Default::default()
    };
    run_scenarios(&study).unwrap()
}

fn scheme2_report() -> ScenarioReport {
    let study = Study {
        dgp: DgpConfig::unbalanced(100),
        scenarios: vec![ScenarioEntry::Preset("a".into()), ScenarioEntry::Preset("b".into())],
        estimators: EstimatorKind::ALL.to_vec(),
        estimands: vec![Estimand::De { alpha: 0.6 }],
        replicates: 200,
        seed: 1,
        ..Default::default()
    };
    run_scenarios(&study).unwrap()
}

const DE06: Estimand = Estimand::De { alpha: 0.6 };
const DE02: Estimand = Estimand::De { alpha: 0.2 };

fn bias(r: &ScenarioReport, s: &str, k: EstimatorKind, e: &Estimand) -> f64 {
    r.row(s, k, e).unwrap().bias
}

fn criterion_5(r: &ScenarioReport) -> Outcome {
    let reg_b = bias(r, "b", EstimatorKind::Reg, &DE06);
    let dr_b = bias(r, "b", EstimatorKind::DrBc, &DE06);
    let ipw_c = bias(r, "c", EstimatorKind::Ipw, &DE06);
    let dr_c = bias(r, "c", EstimatorKind::DrBc, &DE06);
    let pass = (-0.45..=-0.22).contains(&reg_b) && dr_b.abs() < 0.05 && (-0.48..=-0.24).contains(&ipw_c) && dr_c.abs() < 0.05;
    outcome(
        pass,
        format!("(b) REG {reg_b:+.4} DR-BC {dr_b:+.4}; (c) IPW {ipw_c:+.4} DR-BC {dr_c:+.4}"),
    )
}

fn criterion_6(r: &ScenarioReport) -> Outcome {
    let cov = |s: &str| r.row(s, EstimatorKind::DrBc, &DE06).unwrap().coverage.unwrap_or(f64::NAN);
    let (a, b, c, d) = (cov("a"), cov("b"), cov("c"), cov("d"));
    let pass = [a, b, c].iter().all(|v| (0.90..=0.99).contains(v)) && d < 0.80;
    outcome(pass, format!("DR-BC coverage (a) {a:.3} (b) {b:.3} (c) {c:.3} (d) {d:.3}"))
}

fn criterion_7(r: &ScenarioReport) -> Outcome {
    let ipw = bias(r, "latent", EstimatorKind::Ipw, &DE02);
    let dr = bias(r, "latent", EstimatorKind::DrBc, &DE02);
    outcome((ipw + 0.140).abs() <= 0.05 && dr.abs() < 0.04, format!("IPW {ipw:+.4} DR-BC {dr:+.4}"))
}

fn criterion_8(r: &ScenarioReport) -> Outcome {
    let ipwls = bias(r, "b", EstimatorKind::IpWls, &DE06);
    let dr = bias(r, "b", EstimatorKind::DrBc, &DE06);
    outcome(ipwls.abs() > 0.05 && dr.abs() < 0.03, format!("(b) IP-WLS {ipwls:+.4} DR-BC {dr:+.4}"))
}

fn criterion_9(r: &ScenarioReport) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for k in [EstimatorKind::Ipw, EstimatorKind::Reg, EstimatorKind::DrBc] {
        let row = r.row("a", k, &DE06).unwrap();
        let ratio = row.ase.unwrap_or(f64::NAN) / row.ese;
        pass &= (0.85..=1.15).contains(&ratio);
        parts.push(format!("{} {ratio:.3}", k.label()));
    }
    outcome(pass, format!("ASE/ESE {}", parts.join(", ")))
}

fn criterion_10() -> Outcome {
    let estimands = vec![
        Estimand::De { alpha: 0.2 },
        Estimand::De { alpha: 0.5 },
        Estimand::De { alpha: 0.8 },
        Estimand::Ie { alpha: 0.8, alpha_prime: 0.2 },
    ];
    let study = Study { dgp: DgpConfig::balanced(30), estimands: estimands.clone(), replicates: 200, seed: 1, ..Default::default() };
    let truth = study_truth(&study).unwrap();
    let reference = [2.200, 2.499, 2.797, 0.597];
    let mut pass = true;
    let mut parts = Vec::new();
    for (e, r) in estimands.iter().zip(reference) {
        let v = truth.effect(e).unwrap();
        pass &= (v - r).abs() <= 0.01;
        parts.push(format!("{} {v:.4} (ref {r:.3})", e.label()));
    }
    outcome(pass, parts.join(", "))
}

fn main() {
    let mut all = true;
    let mut report = |k: usize, o: Outcome| {
        all &= o.pass;
        println!("acceptance criterion {k:>2}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    let t = Instant::now();
    let s1 = scheme1_report();
    let s1_secs = t.elapsed().as_secs_f64();
    report(5, criterion_5(&s1));
    report(6, criterion_6(&s1));
    report(7, criterion_7(&s1));
    let t = Instant::now();
    let s2 = scheme2_report();
    let s2_secs = t.elapsed().as_secs_f64();
    report(8, criterion_8(&s2));
    report(9, criterion_9(&s2));
    report(10, criterion_10());
    println!("scheme 1 study: {s1_secs:.0} s; scheme 2 study: {s2_secs:.0} s");
    for r in s1.rows.iter().chain(&s2.rows) {
        println!(
            "  {:<7} {:<6} {:<8} bias {:+.4} mse {:.4} ese {:.4} ase {:.4} cov {:.3} used {} excluded {}",
            r.scenario,
            r.estimator.label(),
            r.estimand.label(),
            r.bias,
            r.mse,
            r.ese,
            r.ase.unwrap_or(f64::NAN),
            r.coverage.unwrap_or(f64::NAN),
            r.used,
            r.excluded
        );
    }
    if !all {
        std::process::exit(1);
    }
}
