use fmea_bn::consistency::{detect_inconsistencies, recommend_observed, GaConfig};
use fmea_bn::synthetic;
use fmea_bn::{recommend, ParameterVector};

fn config(seed: u64) -> GaConfig {
    GaConfig {
        population: 40,
        max_generations: 60,
        seed,
        ..GaConfig::default()
    }
}

#[test]
fn same_seed_same_recommendation() {
    let seeded = synthetic::seeded_inconsistent(5, 20, 30, 3);
    let a = recommend(&seeded.network, &seeded.expert, &config(9)).unwrap();
    let b = recommend(&seeded.network, &seeded.expert, &config(9)).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn every_individual_stays_in_range() {
    let seeded = synthetic::seeded_inconsistent(6, 15, 25, 2);
    let triggers = seeded.expert.triggers.clone();
    let n_priors = seeded.expert.priors.len();
    let mut seen = 0;
    recommend_observed(
        &seeded.network,
        &seeded.expert,
        &config(1),
        |_, population| {
            for genes in population {
                for (k, &g) in genes.iter().enumerate() {
                    assert!((0.0..=1.0).contains(&g));
                    if k >= n_priors {
                        assert!(
                            g <= triggers[k - n_priors] + 1e-15,
                            "trigger gene {k} exceeds the expert value"
                        );
                    }
                }
                seen += 1;
            }
        },
    )
    .unwrap();
    assert!(seen > 0);
}

#[test]
fn best_loss_never_increases_and_output_is_coherent() {
    let seeded = synthetic::seeded_inconsistent(11, 25, 40, 4);
    let rec = recommend(
        &seeded.network,
        &seeded.expert,
        &GaConfig {
            seed: 2,
            ..GaConfig::default()
        },
    )
    .unwrap();
    assert_eq!(rec.initial_inconsistencies, 4);
    for pair in rec.history.windows(2) {
        assert!(pair[1].best_loss <= pair[0].best_loss);
    }
    assert!(rec.history.iter().all(|h| h.max_trigger_excess <= 0.0));
    let check = detect_inconsistencies(&seeded.network, &rec.suggested).unwrap();
    assert_eq!(check.count, rec.residual_inconsistencies);
    assert_eq!(rec.diff.len(), rec.suggested.len());
    rec.suggested.validate(&seeded.network).unwrap();
}

#[test]
fn consistent_input_is_returned_unchanged() {
    let net = synthetic::six_node_network();
    let expert = ParameterVector::expert(&net);
    let rec = recommend(&net, &expert, &config(0)).unwrap();
    assert_eq!(rec.residual_inconsistencies, 0);
    assert_eq!(rec.changed().count(), 0);
    assert_eq!(rec.loss, 0.0);
}
