//! Library-level pipeline semantics: mask schedules, reset fidelity,
//! discriminator treatments, one-shot vs iterative masks, rewinding,
//! and transfer weight loading.

use ticketlab::datasets::ring8;
use ticketlab::models::{DiscConfig, GenConfig};
use ticketlab::pruning::{apply_mask, schedule_sparsity};
use ticketlab::tickets::{
    rewind, run_imp, run_one_shot_sweep, run_transfer, train_gan, GanPair, MaskPair, TicketMode,
    TrainConfig, TransferRegime, TransferSource,
};

fn tiny_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        steps: 40,
        batch_size: 16,
        eval_samples: 256,
        gen: GenConfig {
            latent_dim: 4,
            hidden: vec![12, 12],
            out_dim: 2,
            ..GenConfig::desk_scale()
        },
        disc: DiscConfig {
            hidden: vec![12, 12],
            ..DiscConfig::desk_scale()
        },
        ..TrainConfig::desk_scale(ring8(), seed)
    }
}

#[test]
fn imp_g_follows_schedule_and_leaves_disc_dense() {
    let rounds = run_imp(TicketMode::ImpG, &tiny_cfg(1), 3).unwrap();
    assert_eq!(rounds.len(), 4);
    for (i, data) in rounds.iter().enumerate() {
        let expect = schedule_sparsity(i as u32);
        assert!(
            (data.record.gen_sparsity - expect).abs() < 2e-3,
            "round {i}: {} vs {expect}",
            data.record.gen_sparsity
        );
        assert_eq!(data.record.disc_sparsity, 0.0);
        assert!(data.masks.disc.is_all_ones());
        // Zero counts are exact under round-half-up.
        let want = (expect * data.masks.gen.prunable_count() as f64).round() as usize;
        assert_eq!(data.masks.gen.zero_count(), want);
    }
}

#[test]
fn imp_gd_masks_are_monotone_in_both_networks() {
    let rounds = run_imp(TicketMode::ImpGd, &tiny_cfg(2), 2).unwrap();
    for pair in rounds.windows(2) {
        assert!(pair[0].masks.gen.covers(&pair[1].masks.gen));
        assert!(pair[0].masks.disc.covers(&pair[1].masks.disc));
    }
    let last = rounds.last().unwrap();
    assert!(last.record.disc_sparsity > 0.3);
}

#[test]
fn reset_fidelity_rounds_start_from_masked_theta0() {
    let cfg = tiny_cfg(3);
    let rounds = run_imp(TicketMode::ImpG, &cfg, 2).unwrap();
    let theta0 = rounds[0]
        .snapshots
        .at(0)
        .expect("dense run snapshots step 0");
    for data in &rounds[1..] {
        let start = data.snapshots.at(0).expect("round snapshot step 0");
        let expect_gen = apply_mask(&theta0.gen, &data.masks.gen).unwrap();
        assert!(start.gen.bits_eq(&expect_gen), "round {}", data.round);
        let expect_disc = apply_mask(&theta0.disc, &data.masks.disc).unwrap();
        assert!(start.disc.bits_eq(&expect_disc));
    }
}

#[test]
fn imp_g_f_keeps_the_trained_discriminator() {
    let cfg = tiny_cfg(4);
    let rounds = run_imp(TicketMode::ImpGF, &cfg, 2).unwrap();
    for k in 0..rounds.len() - 1 {
        let trained_disc = &rounds[k].final_params.as_ref().unwrap().disc;
        let next_start = rounds[k + 1].snapshots.at(0).unwrap();
        assert!(
            next_start.disc.bits_eq(trained_disc),
            "round {} discriminator must carry over",
            k + 1
        );
        // The generator, in contrast, goes back to theta_0.
        let theta0 = rounds[0].snapshots.at(0).unwrap();
        let expect_gen = apply_mask(&theta0.gen, &rounds[k + 1].masks.gen).unwrap();
        assert!(next_start.gen.bits_eq(&expect_gen));
    }
}

#[test]
fn standard_pruning_continues_without_reset() {
    let cfg = tiny_cfg(5);
    let rounds = run_imp(TicketMode::Standard, &cfg, 2).unwrap();
    for k in 0..rounds.len() - 1 {
        let trained = rounds[k].final_params.as_ref().unwrap();
        let next_start = rounds[k + 1].snapshots.at(0).unwrap();
        let expect = apply_mask(&trained.gen, &rounds[k + 1].masks.gen).unwrap();
        assert!(next_start.gen.bits_eq(&expect), "round {}", k + 1);
    }
}

#[test]
fn random_ticket_pairs_imp_masks_with_fresh_init() {
    let cfg = tiny_cfg(6);
    let rt = run_imp(TicketMode::RandomTicket, &cfg, 2).unwrap();
    let imp = run_imp(TicketMode::ImpG, &cfg, 2).unwrap();
    // The mask chain matches IMP_G's bit for bit (same dense run, same
    // magnitude ranking).
    for (a, b) in rt.iter().zip(&imp) {
        assert_eq!(a.masks.gen, b.masks.gen);
    }
    // But retraining starts from the fresh init, not theta_0.
    let theta_prime = GanPair::init(
        &cfg.gen,
        &cfg.disc,
        ticketlab::tickets::theta_prime_seed(cfg.seed),
    );
    let start = rt[1].snapshots.at(0).unwrap();
    let expect = apply_mask(&theta_prime.gen, &rt[1].masks.gen).unwrap();
    assert!(start.gen.bits_eq(&expect));
    let theta0_masked = apply_mask(
        &imp[0].snapshots.at(0).unwrap().gen,
        &rt[1].masks.gen,
    )
    .unwrap();
    assert!(!start.gen.bits_eq(&theta0_masked));
}

#[test]
fn one_shot_first_round_equals_imp_round_one() {
    // Long enough that retraining between rounds reorders magnitudes.
    let cfg = TrainConfig {
        steps: 500,
        ..tiny_cfg(7)
    };
    let omp = run_one_shot_sweep(TicketMode::OmpG, &cfg, &[0.2, schedule_sparsity(3)]).unwrap();
    let imp = run_imp(TicketMode::ImpG, &cfg, 3).unwrap();
    // Same dense run, one pruning round: identical masks.
    assert_eq!(omp[1].masks.gen, imp[1].masks.gen);
    // At 48.8% the one-shot mask differs from the iterated one.
    let direct = &omp[2].masks.gen;
    let iterated = &imp[3].masks.gen;
    assert!((direct.sparsity() - iterated.sparsity()).abs() < 1e-12);
    let disagreements: usize = direct
        .entries
        .iter()
        .zip(&iterated.entries)
        .map(|(a, b)| {
            a.bits
                .iter()
                .zip(&b.bits)
                .filter(|(x, y)| x != y)
                .count()
        })
        .sum();
    assert!(disagreements > 0, "one-shot and IMP masks should diverge");
}

#[test]
fn rewind_masks_snapshot_elementwise() {
    let cfg = tiny_cfg(8);
    let start = GanPair::init(&cfg.gen, &cfg.disc, cfg.seed);
    let masks = MaskPair::all_ones(&start);
    let out = train_gan(&start, &masks, &cfg, 0, None).unwrap();

    let mut pruned = masks.clone();
    pruned.gen = ticketlab::pruning::random_mask(&start.gen, None, 0.5, 1).unwrap();
    let step = cfg.snapshot_steps()[1];
    let rewound = rewind(&out.snapshots, step, &pruned).unwrap();
    let snap = out.snapshots.at(step).unwrap();
    for (e, s) in rewound.gen.entries.iter().zip(&snap.gen.entries) {
        match pruned.gen.bits(&e.name) {
            Some(bits) => {
                for ((v, orig), &b) in e.tensor.data().iter().zip(s.tensor.data()).zip(bits) {
                    if b == 1 {
                        assert_eq!(v.to_bits(), orig.to_bits());
                    } else {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
            None => assert!(e.tensor.bits_eq(&s.tensor)),
        }
    }
    // All-ones mask: the exact snapshot comes back.
    let full = rewind(&out.snapshots, step, &masks).unwrap();
    assert!(full.gen.bits_eq(&snap.gen) && full.disc.bits_eq(&snap.disc));
    // Missing snapshot is a lookup error.
    assert!(rewind(&out.snapshots, 12345, &masks).is_err());
}

#[test]
fn kd_regularization_changes_the_trajectory() {
    let cfg = tiny_cfg(9);
    let gd = run_imp(TicketMode::ImpGd, &cfg, 1).unwrap();
    let kd = run_imp(TicketMode::ImpGdKd, &cfg, 1).unwrap();
    // Same dense round, same masks.
    assert_eq!(gd[1].masks.gen, kd[1].masks.gen);
    // The KD term must actually alter discriminator training.
    let d_gd = &gd[1].final_params.as_ref().unwrap().disc;
    let d_kd = &kd[1].final_params.as_ref().unwrap().disc;
    assert!(!d_gd.bits_eq(d_kd));
}

#[test]
fn transfer_regimes_load_the_right_weights() {
    let cfg = tiny_cfg(10);
    let source = run_imp(TicketMode::ImpG, &cfg, 1).unwrap();
    let sources: Vec<TransferSource> = source[1..]
        .iter()
        .map(|d| TransferSource {
            source_mode: d.record.mode.clone(),
            round: d.round,
            masks: d.masks.clone(),
            trained: d.final_params.clone().unwrap(),
        })
        .collect();
    let mut target_cfg = cfg.clone();
    target_cfg.dataset = ticketlab::datasets::grid25();

    let theta0 = GanPair::init(&cfg.gen, &cfg.disc, cfg.seed);

    let t0 = run_transfer(&sources, &target_cfg, TransferRegime::Theta0).unwrap();
    let start = t0[1].snapshots.at(0).unwrap();
    let expect = apply_mask(&theta0.gen, &sources[0].masks.gen).unwrap();
    assert!(start.gen.bits_eq(&expect));
    assert_eq!(t0[1].record.dataset, "grid25");
    assert!(t0[1].record.mode.contains("theta_0"));

    let tr = run_transfer(&sources, &target_cfg, TransferRegime::ThetaR).unwrap();
    let start_r = tr[1].snapshots.at(0).unwrap();
    assert!(!start_r.gen.bits_eq(&expect), "fresh init must differ");
    assert_eq!(tr[1].masks.gen, sources[0].masks.gen);

    let tb = run_transfer(&sources, &target_cfg, TransferRegime::ThetaBest).unwrap();
    let start_b = tb[1].snapshots.at(0).unwrap();
    let expect_b = apply_mask(&sources[0].trained.gen, &sources[0].masks.gen).unwrap();
    assert!(start_b.gen.bits_eq(&expect_b));
}

#[test]
fn round_zero_record_equals_dense_baseline() {
    let cfg = tiny_cfg(11);
    let rounds = run_imp(TicketMode::ImpG, &cfg, 0).unwrap();
    let start = GanPair::init(&cfg.gen, &cfg.disc, cfg.seed);
    let dense = train_gan(&start, &MaskPair::all_ones(&start), &cfg, 0, None).unwrap();
    assert_eq!(rounds[0].record.score.unwrap().to_bits(), dense.score.to_bits());
    assert!(rounds[0]
        .final_params
        .as_ref()
        .unwrap()
        .bits_eq(&dense.params));
}
