//! Verifies the forgotten-data access contract across all three unlearning
//! strategies: once a request is being honored, only the gradient-ascent
//! phase (which needs the forgotten samples to push away from them) and
//! evaluation may touch forgotten indices. Everything else — retraining,
//! calibration, Fisher estimation, fine-tuning, and the target's
//! post-unlearning local update — must run on retained data alone.
//!
//! The audit log is process-global, so this binary holds a single test.

use std::collections::BTreeSet;

use fedunlearn::data::{apply_request, audit, gen_synthetic, partition_iid, AccessPhase};
use fedunlearn::eval::efficacy;
use fedunlearn::federation::{dataset_accuracy, train, FLConfig};
use fedunlearn::unlearning::{unlearn, Method, UnlearnConfig};
use fedunlearn::data::{RequestLevel, UnlearningRequest};

#[test]
fn strategies_never_read_forgotten_data_outside_ascent_and_eval() {
    let dataset = gen_synthetic(6, 20, 8, 0.3, 77).unwrap();
    let partition = partition_iid(&dataset, 4, 77).unwrap();
    let fl = FLConfig {
        num_clients: 4,
        rounds: 6,
        local_epochs: 1,
        batch_size: 16,
        learning_rate: 0.05,
        hidden_dims: vec![16],
        seed: 77,
    };
    let history = train(&dataset, &partition, &fl).unwrap();

    let request =
        UnlearningRequest { target_client: 1, level: RequestLevel::Classes(vec![2]) };
    let resolved = apply_request(&dataset, &partition, &request).unwrap();
    let forgotten: BTreeSet<usize> = resolved.forgotten.iter().copied().collect();
    assert!(!forgotten.is_empty());

    let config = UnlearnConfig {
        calibration_epochs: 1,
        ascent_steps: 5,
        lambda_ewc: 1.0,
        fine_tune_rounds: 2,
    };

    audit::enable();
    for method in Method::all() {
        let outcome =
            unlearn(method, &history, &dataset, &partition, &request, &config).unwrap();
        // Post-unlearning evaluation legitimately measures forgotten-class
        // accuracy; it runs under the Eval phase.
        efficacy(
            &dataset,
            &resolved.forgotten,
            &resolved.retained,
            history.final_global(),
            &outcome.global_after,
        )
        .unwrap();
        dataset_accuracy(&dataset, &outcome.target_local_after, &resolved.retained).unwrap();
    }
    let records = audit::drain();
    assert!(audit::drain().is_empty(), "drain must reset the log");
    assert!(!records.is_empty());

    let mut phases_seen = BTreeSet::new();
    for record in &records {
        phases_seen.insert(format!("{:?}", record.phase));
        let touched: Vec<usize> =
            record.indices.iter().copied().filter(|i| forgotten.contains(i)).collect();
        match record.phase {
            AccessPhase::Ascent => {
                assert!(
                    record.indices.iter().all(|i| forgotten.contains(i)),
                    "ascent read retained indices: {:?}",
                    record.indices
                );
            }
            AccessPhase::Eval => {}
            phase => {
                assert!(
                    !phase.may_read_forgotten(),
                    "unexpected permissive phase {phase:?} during unlearning"
                );
                assert!(
                    touched.is_empty(),
                    "{phase:?} read forgotten indices {touched:?}"
                );
            }
        }
    }

    for expected in ["Retrain", "Calibrate", "Fisher", "Ascent", "FineTune", "PostUpdate", "Eval"]
    {
        assert!(
            phases_seen.contains(expected),
            "phase {expected} never ran; saw {phases_seen:?}"
        );
    }
}
