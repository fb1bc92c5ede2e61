//! Held-out subjects must not influence anything fitted on a fold.

use moodsense::dataset::{build_samples, subject_kfold, Sample, Task};
use moodsense::eval::{prepare_fold, FeatureSet, LstmRegressor, Regressor};
use moodsense::model::TrainConfig;
use moodsense::pipeline::extract_cohort;
use moodsense::synth::{generate, SynthConfig};
use moodsense::{Algorithm, ClusterParams, SubjectId};

fn samples() -> Vec<Sample> {
    let cohort = generate(&SynthConfig {
        n_subjects: 12,
        n_weeks: 3,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let ex = extract_cohort(&cohort.logs, &ClusterParams::default_for(Algorithm::TimeBased)).unwrap();
    build_samples(&ex.rows(), &cohort.phq, Task::Diagnosis)
}

fn perturb(samples: &[Sample], who: &SubjectId) -> Vec<Sample> {
    let mut out = samples.to_vec();
    for s in out.iter_mut().filter(|s| &s.subject == who) {
        s.target = 27.0 - s.target;
        for day in &mut s.seq {
            for (v, m) in day.values.iter_mut().zip(day.missing.iter_mut()) {
                *v = 1e6;
                *m = false;
            }
        }
    }
    out
}

#[test]
fn test_subjects_do_not_touch_training_state() {
    let samples = samples();
    let subjects: Vec<SubjectId> = samples.iter().map(|s| s.subject.clone()).collect();
    let plan = subject_kfold(&subjects, 4, 0).unwrap();
    let features = FeatureSet::All;
    let cfg = TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let reg = LstmRegressor { config: cfg };
    for fold in 0..4 {
        let victim = (*plan.test_subjects(fold).iter().next().unwrap()).clone();
        let changed = perturb(&samples, &victim);
        let a = prepare_fold(&samples, &plan, fold, &features).unwrap();
        let b = prepare_fold(&changed, &plan, fold, &features).unwrap();
        // bit-identical scaling, baseline and training inputs
        assert_eq!(format!("{:?}", a.stats), format!("{:?}", b.stats));
        assert_eq!(a.baseline.to_bits(), b.baseline.to_bits());
        assert_eq!(a.train, b.train);

        let fa = reg.fit_predict(&a.train, &a.test, fold).unwrap();
        let fb = reg.fit_predict(&b.train, &b.test, fold).unwrap();
        assert_eq!(fa.model, fb.model);
        for ((sa, pa), pb) in a.test_samples.iter().zip(&fa.predictions).zip(&fb.predictions) {
            if sa.subject != victim {
                assert_eq!(pa.to_bits(), pb.to_bits());
            }
        }
    }
}

#[test]
fn train_and_test_subjects_are_disjoint_and_cover_everyone() {
    let samples = samples();
    let subjects: Vec<SubjectId> = samples.iter().map(|s| s.subject.clone()).collect();
    let plan = subject_kfold(&subjects, 10, 3).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for k in 0..10 {
        let (test, train) = (plan.test_subjects(k), plan.train_subjects(k));
        assert!(test.is_disjoint(&train));
        assert_eq!(test.len() + train.len(), 12);
        for s in test {
            assert!(seen.insert(s.clone()), "{s} tested twice");
        }
    }
    assert_eq!(seen.len(), 12);
}
