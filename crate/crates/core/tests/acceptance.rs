//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test -p fmea-bn --test acceptance -- --nocapture` to see them.

use std::time::{Duration, Instant};

use fmea_bn::consistency::{detect_inconsistencies, recommend_observed, GaConfig};
use fmea_bn::inference::{
    exact_posteriors, likelihood_weighting, Evidence, FailureState, SamplingConfig,
};
use fmea_bn::noisy_or::{
    compile_with, insert_aggregation, CompileOptions, CompiledNetwork, GateSpec, NodeKind,
};
use fmea_bn::occurrence::{class_to_interval, probability_to_class, OccurrenceClass};
use fmea_bn::params::ParameterVector;
use fmea_bn::synthetic::{self, ScaleProfile};
use fmea_bn::{compile, likelihood_weighting as lw};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("\n[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

#[test]
fn leak_formula_oracle() {
    const NETWORKS: usize = 500;
    const TOL: f64 = 1e-9;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1eaf);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for k in 0..NETWORKS {
        let n = 2 + k % 9;
        let (net, params) = synthetic::random_polytree(&mut rng, n);
        let compiled = compile_with(&net, &params, CompileOptions::default()).unwrap();
        let exact = exact_posteriors(&compiled, &Evidence::new()).unwrap();
        let marginals = fmea_bn::noisy_or::marginal_actives(&net, &params).unwrap();
        for i in 0..net.len() {
            let consistent = marginals.implied_leak[i].is_some_and(|l| l >= 0.0);
            if !consistent {
                continue;
            }
            let id = &net.node(i).id;
            let absence = 1.0 - exact.posteriors[id];
            let err = (absence - (1.0 - params.priors[i])).abs();
            worst = worst.max(err);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "leak formula oracle",
        worst <= TOL && checked > 0 && elapsed < Duration::from_secs(60),
        &format!("{NETWORKS} networks, {checked} consistent nodes, max |P(X=0) - target| = {worst:.2e} (tol {TOL:.0e}), {elapsed:.2?}"),
    );
}

#[test]
fn inference_accuracy() {
    const NETWORKS: u64 = 200;
    const TOL: f64 = 0.01;
    let start = Instant::now();
    let mut total = 0usize;
    let mut within = 0usize;
    for seed in 0..NETWORKS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = 3 + (seed as usize % 10);
        let (net, params) = synthetic::random_dag(&mut rng, n, 6);
        let compiled = compile_with(&net, &params, CompileOptions::default()).unwrap();
        let evidence = synthetic::random_evidence(&mut rng, &net, 3);
        let exact = match exact_posteriors(&compiled, &evidence) {
            Ok(r) => r,
            Err(fmea_bn::InferenceError::ImpossibleEvidence) => continue,
            Err(e) => panic!("seed {seed}: {e}"),
        };
        let approx =
            likelihood_weighting(&compiled, &evidence, SamplingConfig::new(100_000, seed)).unwrap();
        for (id, &p) in &exact.posteriors {
            if evidence.get(id).is_some() {
                continue;
            }
            total += 1;
            let err = (approx.posteriors[id] - p).abs();
            if err <= TOL {
                within += 1;
            } else {
                println!(
                    "  network seed {}: {id} exact {p:.4} lw {:.4}",
                    1000 + seed,
                    approx.posteriors[id]
                );
            }
        }
    }
    let elapsed = start.elapsed();
    let frac = within as f64 / total as f64;
    verdict(
        "inference accuracy",
        frac >= 0.99 && elapsed < Duration::from_secs(600),
        &format!(
            "{within}/{total} posteriors within {TOL} ({:.2}%, need >= 99%), {elapsed:.2?}",
            100.0 * frac
        ),
    );
}

#[test]
fn aggregation_decomposability() {
    const TOL: f64 = 1e-9;
    let mut worst = 0.0f64;
    let mut compared = 0;
    let mut seed = 0u64;
    while compared < 60 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(0xa66 + seed);
        let n = 6 + (seed as usize % 10);
        let (net, params) = synthetic::random_dag(&mut rng, n, 5);
        let evidence = synthetic::random_evidence(&mut rng, &net, 3);
        let flat = compile_with(&net, &params, CompileOptions::flat()).unwrap();
        let Ok(reference) = exact_posteriors(&flat, &evidence) else {
            continue;
        };
        let mut grouped = Vec::new();
        for g in 2..=5 {
            let compiled =
                compile_with(&net, &params, CompileOptions { max_group_size: g }).unwrap();
            assert!(compiled.max_fan_in() <= g);
            match exact_posteriors(&compiled, &evidence) {
                Ok(r) => grouped.push(r),
                Err(fmea_bn::InferenceError::TooLarge { .. }) => break,
                Err(e) => panic!("seed {seed}, g={g}: {e}"),
            }
        }
        if grouped.len() < 4 {
            continue;
        }
        for r in &grouped {
            for (id, &p) in &reference.posteriors {
                worst = worst.max((r.posteriors[id] - p).abs());
            }
        }
        compared += 1;
    }

    let nine = GateSpec::child(
        "X",
        NodeKind::Failure,
        (1..=9).map(|j| (format!("P{j}"), 0.1 * j as f64)).collect(),
    );
    let roots = || {
        (1..=9)
            .map(|j| GateSpec::root(format!("P{j}"), NodeKind::Failure, 0.2))
            .collect::<Vec<_>>()
    };
    let flat_rows = CompiledNetwork::from_gates([roots(), vec![nine.clone()]].concat(), 9)
        .unwrap()
        .cpt_rows();
    let rows_of = |g: usize| {
        CompiledNetwork::from_gates([roots(), insert_aggregation(&nine, g).unwrap()].concat(), g)
            .unwrap()
            .cpt_rows()
    };
    let (threes, twos) = (rows_of(3), rows_of(2));

    verdict(
        "aggregation decomposability",
        worst <= TOL && flat_rows == 512 && threes == 32 && twos == 32,
        &format!(
            "{compared} networks x group sizes 2..=5, max posterior diff {worst:.2e} (tol {TOL:.0e}); 9-parent CPT rows {flat_rows} -> {threes} (groups of 3) / {twos} (groups of 2)"
        ),
    );
}

#[test]
fn table_fidelity() {
    let expected: [(f64, f64); 10] = [
        (0.0, 1e-6),
        (1e-6, 50e-6),
        (50e-6, 100e-6),
        (100e-6, 1e-3),
        (1e-3, 2e-3),
        (2e-3, 5e-3),
        (5e-3, 10e-3),
        (10e-3, 20e-3),
        (20e-3, 50e-3),
        (50e-3, 1.0),
    ];
    let mut mismatches = Vec::new();
    for (k, &(lo, hi)) in expected.iter().enumerate() {
        let class = k as i64 + 1;
        let iv = class_to_interval(class).unwrap();
        if iv.lower != lo || iv.upper != hi || iv.lower_closed != (class == 1) {
            mismatches.push(format!("class {class} interval"));
        }
        // upper bound inclusive, lower bound exclusive (except class 1)
        if probability_to_class(hi).unwrap().get() as i64 != class {
            mismatches.push(format!("upper bound of class {class}"));
        }
        let just_above = hi.next_up();
        if class < 10 && probability_to_class(just_above).unwrap().get() as i64 != class + 1 {
            mismatches.push(format!("just above class {class}"));
        }
        let inside = OccurrenceClass::new(class).unwrap().representative_prior();
        if probability_to_class(inside).unwrap().get() as i64 != class {
            mismatches.push(format!("representative prior of class {class}"));
        }
    }
    if probability_to_class(0.0).unwrap().get() != 1
        || probability_to_class(1e-6).unwrap().get() != 1
        || probability_to_class(1.0000001e-6).unwrap().get() != 2
        || probability_to_class(3e-3).unwrap().get() != 6
        || class_to_interval(0).is_ok()
        || class_to_interval(11).is_ok()
    {
        mismatches.push("named boundary examples".into());
    }
    verdict(
        "table fidelity",
        mismatches.is_empty(),
        &if mismatches.is_empty() {
            "10 intervals and all boundaries match".to_string()
        } else {
            mismatches.join(", ")
        },
    );
}

#[test]
fn ga_repair() {
    const NETWORKS: u64 = 20;
    let mut resolved_fraction = 0.0;
    let mut cap_ok = true;
    let mut monotone = true;
    let mut sanity = true;
    let mut slowest = Duration::ZERO;
    for seed in 0..NETWORKS {
        let s = synthetic::seeded_inconsistent(seed, 30, 60, 10);
        let caps = s.expert.triggers.clone();
        let n = s.network.len();
        let config = GaConfig {
            seed,
            ..GaConfig::default()
        };
        let start = Instant::now();
        let rec = recommend_observed(&s.network, &s.expert, &config, |_, population| {
            for genes in population {
                if genes[n..].iter().zip(&caps).any(|(t, cap)| t > cap) {
                    cap_ok = false;
                }
            }
        })
        .unwrap();
        slowest = slowest.max(start.elapsed());
        monotone &= rec
            .history
            .windows(2)
            .all(|w| w[1].best_loss <= w[0].best_loss);
        sanity &= detect_inconsistencies(&s.network, &rec.suggested)
            .unwrap()
            .count
            == rec.residual_inconsistencies;
        cap_ok &= rec
            .suggested
            .triggers
            .iter()
            .zip(&caps)
            .all(|(t, c)| t <= c);
        let fraction = (rec.initial_inconsistencies
            - rec
                .residual_inconsistencies
                .min(rec.initial_inconsistencies)) as f64
            / rec.initial_inconsistencies as f64;
        println!(
            "  seed {seed}: {} -> {} inconsistencies, loss {:.4}, {} generations",
            rec.initial_inconsistencies, rec.residual_inconsistencies, rec.loss, rec.generations
        );
        resolved_fraction += fraction / NETWORKS as f64;
    }
    verdict(
        "GA repair",
        resolved_fraction >= 0.9 && cap_ok && monotone && sanity && slowest < Duration::from_secs(300),
        &format!(
            "mean resolved {:.1}% (need >= 90%), trigger cap held: {cap_ok}, best loss monotone: {monotone}, residual count consistent: {sanity}, slowest {slowest:.2?}",
            100.0 * resolved_fraction
        ),
    );
}

#[test]
fn production_scale_throughput() {
    let net = synthetic::production_scale(2024, ScaleProfile::default());
    let roots = (0..net.len()).filter(|&i| net.is_root(i)).count();
    let max_fan_in = (0..net.len()).map(|i| net.incoming(i).len()).max().unwrap();

    let start = Instant::now();
    let compiled = compile(&net).unwrap();
    let leaf = &net.node(net.topological_order()[net.len() - 1]).id;
    let evidence = Evidence::from_observations([(leaf.as_str(), FailureState::Occurred)]).unwrap();
    let report = lw(&compiled, &evidence, SamplingConfig::new(100_000, 7)).unwrap();
    let query = start.elapsed();
    assert_eq!(report.posteriors.len(), 432);

    let expert = ParameterVector::expert(&net);
    let config = GaConfig {
        max_generations: 1,
        ..GaConfig::default()
    };
    let start = Instant::now();
    let rec = fmea_bn::recommend(&net, &expert, &config).unwrap();
    let generation = start.elapsed();
    assert!(rec.generations <= 1);

    verdict(
        "production-scale throughput",
        query < Duration::from_secs(60) && generation < Duration::from_secs(5),
        &format!(
            "{} failures, {} CERs, {roots} roots, max fan-in {max_fan_in}, {} compiled nodes; compile + LW(1e5) {query:.2?} (< 60 s), one GA generation {generation:.2?} (< 5 s)",
            net.len(),
            net.edges().len(),
            compiled.len()
        ),
    );
}

#[test]
fn explaining_away() {
    let net = synthetic::collider();
    let evidence =
        Evidence::from_observations([("B", FailureState::Occurred), ("A", FailureState::Absent)])
            .unwrap();
    let exact = exact_posteriors(&net, &evidence).unwrap().posteriors["C"];
    let approx = likelihood_weighting(&net, &evidence, SamplingConfig::new(100_000, 1))
        .unwrap()
        .posteriors["C"];
    verdict(
        "explaining away",
        exact == 1.0 && (approx - 1.0).abs() <= 0.01,
        &format!("P(C | B occurred, A absent): exact {exact}, LW {approx:.4}"),
    );
}
