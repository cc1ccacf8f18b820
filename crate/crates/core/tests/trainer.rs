use cutnmix::datasets::{Dataset, DatasetSpec, SyntheticParams};
use cutnmix::models::Checkpoint;
use cutnmix::{train, train_step, DistillConfig, OptimConfig, TrainConfig, TrainState};

fn small_data() -> Dataset {
    let spec = DatasetSpec {
        num_classes: 4,
        synthetic: SyntheticParams { n_train: 96, n_test: 24, seed: 3, difficulty: 0.6 },
        ..Default::default()
    };
    spec.load().unwrap().0
}

fn cfg(num_peers: usize, alpha: f64, beta: f64, gamma: f64, train_teacher: bool) -> TrainConfig {
    TrainConfig {
        num_classes: 4,
        batch_size: 8,
        eval_batch_size: 12,
        seed: 11,
        distill: DistillConfig { num_peers, alpha, beta, gamma, ..Default::default() },
        optim: OptimConfig { max_epochs: 3, milestones: vec![1, 2], ..Default::default() },
        train_teacher,
        ..Default::default()
    }
}

fn param_bits(state: &TrainState, j: usize) -> Vec<u32> {
    state.peers[j].params().entries().iter().flat_map(|e| e.value.iter().map(|v| v.to_bits())).collect()
}

#[test]
fn peer_without_distillation_follows_solo_cutmix_bit_for_bit() {
    let data = small_data();
    let twin_cfg = cfg(2, 0.0, 0.0, 0.0, false);
    let solo_cfg = cfg(1, 0.0, 0.0, 0.0, false);
    let mut twin = TrainState::new(&twin_cfg).unwrap();
    let mut solo = TrainState::new(&solo_cfg).unwrap();
    assert_eq!(param_bits(&twin, 0), param_bits(&solo, 0));

    let mut steps = 0;
    'outer: for epoch in 0..3 {
        twin.begin_epoch(&twin_cfg, epoch);
        solo.begin_epoch(&solo_cfg, epoch);
        for batch in data.train_batches(8, 11, epoch).unwrap() {
            let a = train_step(&mut twin, &twin_cfg, &batch).unwrap();
            let b = train_step(&mut solo, &solo_cfg, &batch).unwrap();
            assert_eq!(a.lam, b.lam);
            assert_eq!(a.peers[0].parts.ce.to_bits(), b.peers[0].parts.ce.to_bits());
            assert_eq!(param_bits(&twin, 0), param_bits(&solo, 0), "diverged at step {steps}");
            steps += 1;
            if steps == 20 {
                break 'outer;
            }
        }
    }
    assert_eq!(steps, 20);
    assert_ne!(param_bits(&twin, 0), param_bits(&twin, 1));
}

#[test]
fn any_distillation_weight_breaks_the_equivalence() {
    let data = small_data();
    let batch = &data.train_batches(8, 11, 0).unwrap()[0];
    let solo_cfg = cfg(1, 0.0, 0.0, 0.0, false);
    let mut solo = TrainState::new(&solo_cfg).unwrap();
    solo.begin_epoch(&solo_cfg, 0);
    train_step(&mut solo, &solo_cfg, batch).unwrap();
    for (a, b, g) in [(0.5, 0.0, 0.0), (0.0, 0.5, 0.0), (0.0, 0.0, 0.5)] {
        let c = cfg(2, a, b, g, g > 0.0);
        let mut twin = TrainState::new(&c).unwrap();
        twin.begin_epoch(&c, 0);
        train_step(&mut twin, &c, batch).unwrap();
        assert_ne!(param_bits(&twin, 0), param_bits(&solo, 0), "weights {a} {b} {g}");
    }
}

#[test]
fn resuming_from_a_checkpoint_reproduces_the_uninterrupted_run() {
    let data = small_data();
    let c = cfg(2, 0.6, 0.2, 0.1, true);
    let full = train(&c, &data, None, |_, _| Ok(())).unwrap();

    let mut first = c.clone();
    first.optim.max_epochs = 1;
    let mut mid = None;
    train(&first, &data, None, |s, _| {
        mid = Some(s.to_checkpoint(&c)?);
        Ok(())
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    mid.unwrap().save(&path).unwrap();
    let restored = TrainState::from_checkpoint(&c, &Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(restored.epoch, 1);
    let resumed = train(&c, &data, Some(restored), |_, _| Ok(())).unwrap();

    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.step, full.step);
    for j in 0..2 {
        assert_eq!(param_bits(&resumed, j), param_bits(&full, j));
    }
    let t = |s: &TrainState| s.teacher.as_ref().unwrap().params().checksum();
    assert_eq!(t(&resumed), t(&full));
}

#[test]
fn checkpoint_rejects_a_different_configuration() {
    let c = cfg(2, 0.6, 0.2, 0.1, true);
    let ck = TrainState::new(&c).unwrap().to_checkpoint(&c).unwrap();
    let mut other = c.clone();
    other.seed += 1;
    assert!(TrainState::from_checkpoint(&other, &ck).is_err());
    let mut other = c.clone();
    other.distill.num_peers = 3;
    assert!(TrainState::from_checkpoint(&other, &ck).is_err());
    let mut other = c;
    other.num_classes = 5;
    assert!(TrainState::from_checkpoint(&other, &ck).is_err());
}

#[test]
fn every_mode_trains_with_finite_losses() {
    let data = small_data();
    for c in [cfg(2, 0.6, 0.2, 0.1, true), cfg(3, 0.6, 0.2, 0.1, true), cfg(1, 0.0, 0.0, 0.0, false)] {
        let mut c = c;
        c.optim.max_epochs = 1;
        let s = train(&c, &data, None, |_, _| Ok(())).unwrap();
        assert_eq!(s.history.len(), c.distill.num_peers);
        for r in &s.history {
            assert!(r.total.is_finite() && r.ce > 0.0);
            assert!((0.0..=1.0).contains(&r.test_acc));
        }
    }
}

#[test]
fn alternating_updates_match_simultaneous_ones_only_without_coupling() {
    let data = small_data();
    let batches = data.train_batches(8, 11, 0).unwrap();
    let run = |alpha: f64, alternating: bool| {
        let c = TrainConfig { alternating, ..cfg(2, alpha, 0.0, 0.0, false) };
        let mut state = TrainState::new(&c).unwrap();
        state.begin_epoch(&c, 0);
        for batch in &batches[..4] {
            train_step(&mut state, &c, batch).unwrap();
        }
        (param_bits(&state, 0), param_bits(&state, 1))
    };
    assert_eq!(run(0.0, true), run(0.0, false));
    let (alt, sim) = (run(0.6, true), run(0.6, false));
    assert_eq!(alt.0.len(), sim.0.len());
    assert_ne!(alt.1, sim.1, "peer 1 should see peer 0's update");
}
