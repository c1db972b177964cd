//! The alternating-update GAN training loop with gradient masking,
//! snapshot capture, and Fréchet-distance evaluation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datasets::{held_out, sample};
use crate::metrics::{frechet_distance, gaussian_fit, GaussianStats};
use crate::models::{
    bind_params, discriminator_forward, generate_samples, generator_forward, ForwardMode,
    ParamKind, ParamSet,
};
use crate::pruning::{apply_mask, Mask};
use crate::rng::{mix, rng_from, RngState};
use crate::tensor::{Adam, Tape, Tensor};

use super::losses::{disc_loss, gen_loss, kd_term};
use super::{
    GanPair, MaskPair, Result, SnapshotPair, SnapshotStore, TicketError, TracePoint, TrainConfig,
    STREAM_EVAL, STREAM_TRAIN,
};

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GanPair,
    pub snapshots: SnapshotStore,
    pub trace: Vec<TracePoint>,
    pub score: f64,
}

/// Gaussian fit of the held-out real sample for a config's dataset.
pub fn held_out_stats(cfg: &TrainConfig) -> Result<GaussianStats> {
    Ok(gaussian_fit(&held_out(&cfg.dataset, cfg.eval_samples))?)
}

/// Scores a generator against held-out statistics: Fréchet distance
/// between Gaussian fits, lower is better.
pub fn evaluate_generator(
    gen_cfg: &crate::models::GenConfig,
    params: &ParamSet,
    mask: Option<&Mask>,
    n: usize,
    seed: u64,
    held: &GaussianStats,
) -> Result<f64> {
    let samples = generate_samples(gen_cfg, params, mask, n, seed)?;
    let fit = gaussian_fit(&samples)?;
    Ok(frechet_distance(&fit, held)?)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(vec![rows, cols], data).expect("matrix layout")
}

/// Trains `start` under `masks` for the configured step budget.
///
/// One step is one discriminator update followed by one generator
/// update. Pruned positions stay exactly zero: the forward pass uses
/// `m ⊙ θ`, gradients are read at the parameter leaves (already masked),
/// and the optimizer freezes masked positions on top of that.
///
/// `stream_tag` separates the batch/noise streams of otherwise identical
/// runs (e.g. mask-finding chains vs record retrainings); the round
/// number is folded in by callers. With `kd_teacher` given, the
/// discriminator loss adds the KL consistency term.
pub fn train_gan(
    start: &GanPair,
    masks: &MaskPair,
    cfg: &TrainConfig,
    stream_tag: u64,
    kd_teacher: Option<&ParamSet>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    masks.gen.check_congruent(&start.gen)?;
    masks.disc.check_congruent(&start.disc)?;

    let mut gan = GanPair {
        gen: apply_mask(&start.gen, &masks.gen)?,
        disc: apply_mask(&start.disc, &masks.disc)?,
    };
    let mut teacher_scratch = kd_teacher.cloned();

    let mut adam_g = Adam::new(cfg.optim);
    let mut adam_d = Adam::new(cfg.optim);
    let snapshot_steps = cfg.snapshot_steps();
    let mut snapshots = SnapshotStore::default();
    let mut trace = Vec::new();

    let mut rng = rng_from(mix(&[cfg.seed, STREAM_TRAIN, stream_tag]));
    let eval_seed = mix(&[cfg.seed, STREAM_EVAL]);
    let held = held_out_stats(cfg)?;

    for step in 0..cfg.steps {
        if snapshot_steps.contains(&step) {
            snapshots.snaps.push(SnapshotPair {
                step,
                gen: gan.gen.clone(),
                disc: gan.disc.clone(),
                rng: RngState::capture(&rng),
            });
        }

        let lr = cfg.lr_decay.lr_at(cfg.optim.lr, step, cfg.steps);
        adam_d.hyper.lr = lr;
        adam_g.hyper.lr = lr;

        let real = sample(&cfg.dataset, cfg.batch_size, rng.gen::<u64>());
        let z_d = normal_matrix(&mut rng, cfg.batch_size, cfg.gen.latent_dim);
        disc_update(
            &mut gan,
            masks,
            cfg,
            &real,
            &z_d,
            teacher_scratch.as_mut(),
            &mut adam_d,
            step,
        )?;

        let z_g = normal_matrix(&mut rng, cfg.batch_size, cfg.gen.latent_dim);
        gen_update(&mut gan, masks, cfg, &z_g, &mut adam_g, step)?;

        let done = step + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done != cfg.steps {
            let score = evaluate_generator(
                &cfg.gen,
                &gan.gen,
                Some(&masks.gen),
                cfg.eval_samples,
                eval_seed,
                &held,
            )?;
            trace.push(TracePoint { step: done, score });
        }
    }

    if snapshot_steps.contains(&cfg.steps) {
        snapshots.snaps.push(SnapshotPair {
            step: cfg.steps,
            gen: gan.gen.clone(),
            disc: gan.disc.clone(),
            rng: RngState::capture(&rng),
        });
    }

    let score = evaluate_generator(
        &cfg.gen,
        &gan.gen,
        Some(&masks.gen),
        cfg.eval_samples,
        eval_seed,
        &held,
    )?;
    trace.push(TracePoint {
        step: cfg.steps,
        score,
    });

    Ok(TrainOutcome {
        params: gan,
        snapshots,
        trace,
        score,
    })
}

#[allow(clippy::too_many_arguments)]
fn disc_update(
    gan: &mut GanPair,
    masks: &MaskPair,
    cfg: &TrainConfig,
    real: &Tensor,
    z: &Tensor,
    teacher: Option<&mut ParamSet>,
    adam: &mut Adam,
    step: u64,
) -> Result<()> {
    let GanPair { gen, disc } = gan;
    let mut tape = Tape::new();
    let gen_binding = bind_params(&mut tape, gen, Some(&masks.gen), false)?;
    let disc_binding = bind_params(&mut tape, disc, Some(&masks.disc), true)?;
    let x_real = tape.constant(real);
    let zv = tape.constant(z);

    let fake = generator_forward(
        &mut tape,
        &cfg.gen,
        gen,
        &gen_binding,
        zv,
        ForwardMode::Train,
        None,
    )?;
    // One power iteration per training step happens here; later
    // discriminator passes in the same step leave the buffers alone.
    let d_real = discriminator_forward(
        &mut tape,
        &cfg.disc,
        disc,
        &disc_binding,
        x_real,
        ForwardMode::Train,
        None,
    )?;
    let d_fake = discriminator_forward(
        &mut tape,
        &cfg.disc,
        disc,
        &disc_binding,
        fake,
        ForwardMode::TrainFrozen,
        None,
    )?;
    let mut loss = disc_loss(&mut tape, cfg.loss, d_real, d_fake)?;

    if let Some(teacher) = teacher {
        let t_binding = bind_params(&mut tape, teacher, None, false)?;
        let t_logits = discriminator_forward(
            &mut tape,
            &cfg.disc,
            teacher,
            &t_binding,
            x_real,
            ForwardMode::TrainFrozen,
            None,
        )?;
        let kd = kd_term(&mut tape, d_real, t_logits)?;
        let kd_w = tape.scale(kd, cfg.kd_weight);
        loss = tape.add(loss, kd_w)?;
    }

    if !tape.value(loss)[0].is_finite() {
        return Err(TicketError::Diverged { step });
    }
    tape.backward(loss)?;
    adam.begin_step();
    for (i, e) in disc.entries.iter_mut().enumerate() {
        if let Some(grad) = tape.grad_tensor(disc_binding.leaves[i]) {
            let bits = if e.kind == ParamKind::Weight {
                masks.disc.bits(&e.name)
            } else {
                None
            };
            adam.update(&e.name, &mut e.tensor, &grad, bits)?;
        }
    }
    Ok(())
}

fn gen_update(
    gan: &mut GanPair,
    masks: &MaskPair,
    cfg: &TrainConfig,
    z: &Tensor,
    adam: &mut Adam,
    step: u64,
) -> Result<()> {
    let GanPair { gen, disc } = gan;
    let mut tape = Tape::new();
    let gen_binding = bind_params(&mut tape, gen, Some(&masks.gen), true)?;
    let disc_binding = bind_params(&mut tape, disc, Some(&masks.disc), false)?;
    let zv = tape.constant(z);

    let fake = generator_forward(
        &mut tape,
        &cfg.gen,
        gen,
        &gen_binding,
        zv,
        ForwardMode::Train,
        None,
    )?;
    let d_fake = discriminator_forward(
        &mut tape,
        &cfg.disc,
        disc,
        &disc_binding,
        fake,
        ForwardMode::TrainFrozen,
        None,
    )?;
    let loss = gen_loss(&mut tape, cfg.loss, d_fake)?;

    if !tape.value(loss)[0].is_finite() {
        return Err(TicketError::Diverged { step });
    }
    tape.backward(loss)?;
    adam.begin_step();
    for (i, e) in gen.entries.iter_mut().enumerate() {
        if let Some(grad) = tape.grad_tensor(gen_binding.leaves[i]) {
            let bits = if e.kind == ParamKind::Weight {
                masks.gen.bits(&e.name)
            } else {
                None
            };
            adam.update(&e.name, &mut e.tensor, &grad, bits)?;
        }
    }
    Ok(())
}
