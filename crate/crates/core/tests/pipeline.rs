//! Cross-module runs on small budgets: build a repertoire, persist it,
//! adapt with it and redescribe it.

use dream_core::adapt::{adapt_to_target, reachability_probe, AdaptConfig};
use dream_core::gan::{train_gan, GanConfig, PolicyGenerator};
use dream_core::qd::{run_qd, QdConfig};
use dream_core::sim::EnvironmentSpec;
use dream_core::{Archive, Environment, RealityGap};

fn small_repertoire(seed: u64) -> (EnvironmentSpec, Archive) {
    let env = EnvironmentSpec::throw();
    let cfg = QdConfig {
        generations: 20,
        batch: 32,
        initial: 500,
        seed,
        ..QdConfig::default()
    };
    let (archive, log) = run_qd(&env, &cfg).unwrap();
    assert_eq!(log.rows.last().unwrap().archive_size, archive.len());
    (env, archive)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn archive_survives_a_round_trip_through_disk() {
    let (env, archive) = small_repertoire(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.jsonl");
    archive.save(&path).unwrap();
    let back = Archive::load(&path, env.bounds()).unwrap();
    assert_eq!(back.len(), archive.len());
    for (a, b) in archive.skills().iter().zip(back.skills()) {
        assert_eq!(a.params.values(), b.params.values());
        assert_eq!(a.outcome.values, b.outcome.values);
        assert_eq!(a.quality, b.quality);
    }
}

#[test]
fn repertoire_and_probe_do_not_depend_on_thread_count() {
    let (one, probe_one) = in_pool(1, || {
        let (env, a) = small_repertoire(2);
        let p = reachability_probe(&a, &env, &RealityGap::uniform(1.1, 0.05, env.n_joints()), 20, 3, &AdaptConfig::for_env(&env)).unwrap();
        (a, p)
    });
    let (three, probe_three) = in_pool(3, || {
        let (env, a) = small_repertoire(2);
        let p = reachability_probe(&a, &env, &RealityGap::uniform(1.1, 0.05, env.n_joints()), 20, 3, &AdaptConfig::for_env(&env)).unwrap();
        (a, p)
    });
    assert_eq!(one.skills(), three.skills());
    assert_eq!(probe_one, probe_three);
}

#[test]
fn adapting_to_a_stored_outcome_without_gap_hits_first_try() {
    let (env, archive) = small_repertoire(3);
    let cfg = AdaptConfig::for_env(&env);
    for skill in archive.skills().iter().take(10) {
        let mut copy = archive.clone();
        let report = adapt_to_target(&mut copy, &env, &RealityGap::nominal(), &skill.outcome.values, &cfg).unwrap();
        assert!(report.succeeded(), "target {:?}: {:?}", skill.outcome.values, report.status);
    }
}

#[test]
fn trained_generator_round_trips_and_samples_within_bounds() {
    let (env, archive) = small_repertoire(4);
    let cfg = GanConfig {
        epochs: 20,
        batch: 16,
        hidden: 16,
        ..GanConfig::default()
    };
    let trained = train_gan(&archive, &cfg).unwrap();
    assert_eq!(trained.history.len(), 20);
    let mut buf = Vec::new();
    trained.model.write_to(&mut buf).unwrap();
    let back = PolicyGenerator::read_from(buf.as_slice()).unwrap();
    let target = &archive.skills()[0].outcome.values;
    let a = trained.model.sample(target, 8, 5).unwrap();
    let b = back.sample(target, 8, 5).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|t| t.is_within_bounds() && t.dim() == env.param_dim()));
}
