//! Loss builders shared by the ticket and channel-pruning training loops.

use crate::models::{
    bind_params, discriminator_forward, DiscConfig, ForwardMode, ParamSet,
};
use crate::pruning::Mask;
use crate::tensor::{Tape, Tensor, Var};

use super::{GanLoss, Result};

const PROB_FLOOR: f64 = 1e-7;

/// Discriminator hinge or non-saturating loss from real/fake logits.
pub fn disc_loss(tape: &mut Tape, loss: GanLoss, d_real: Var, d_fake: Var) -> Result<Var> {
    match loss {
        GanLoss::Hinge => {
            // mean(relu(1 - d_real)) + mean(relu(1 + d_fake))
            let neg_real = tape.scale(d_real, -1.0);
            let real_margin = tape.add_scalar(neg_real, 1.0);
            let real_hinge = tape.relu(real_margin);
            let real_term = tape.mean(real_hinge);
            let fake_margin = tape.add_scalar(d_fake, 1.0);
            let fake_hinge = tape.relu(fake_margin);
            let fake_term = tape.mean(fake_hinge);
            Ok(tape.add(real_term, fake_term)?)
        }
        GanLoss::NonSaturating => {
            // mean(softplus(-d_real)) + mean(softplus(d_fake))
            let neg_real = tape.scale(d_real, -1.0);
            let real_sp = tape.softplus(neg_real);
            let real_term = tape.mean(real_sp);
            let fake_sp = tape.softplus(d_fake);
            let fake_term = tape.mean(fake_sp);
            Ok(tape.add(real_term, fake_term)?)
        }
    }
}

/// Generator loss from fake logits.
pub fn gen_loss(tape: &mut Tape, loss: GanLoss, d_fake: Var) -> Result<Var> {
    match loss {
        GanLoss::Hinge => {
            let m = tape.mean(d_fake);
            Ok(tape.scale(m, -1.0))
        }
        GanLoss::NonSaturating => {
            let neg = tape.scale(d_fake, -1.0);
            let sp = tape.softplus(neg);
            Ok(tape.mean(sp))
        }
    }
}

/// Mean KL divergence `KL(teacher || student)` between the Bernoulli
/// distributions induced by the two logit batches. Probabilities are
/// clamped to `[1e-7, 1 - 1e-7]`; gradients flow into the student only.
pub fn kd_term(tape: &mut Tape, student_logits: Var, teacher_logits: Var) -> Result<Var> {
    let ps = tape.sigmoid(student_logits);
    let ps = tape.clamp(ps, PROB_FLOOR, 1.0 - PROB_FLOOR);
    let pt = tape.sigmoid(teacher_logits);
    let pt = tape.clamp(pt, PROB_FLOOR, 1.0 - PROB_FLOOR);

    let ln_ps = tape.ln(ps);
    let ln_pt = tape.ln(pt);
    // 1 - p for both sides.
    let neg_ps = tape.scale(ps, -1.0);
    let qs = tape.add_scalar(neg_ps, 1.0);
    let neg_pt = tape.scale(pt, -1.0);
    let qt = tape.add_scalar(neg_pt, 1.0);
    let ln_qs = tape.ln(qs);
    let ln_qt = tape.ln(qt);

    // pt * (ln pt - ln ps) + (1 - pt) * (ln qt - ln qs)
    let diff_p = tape.sub(ln_pt, ln_ps)?;
    let pos = tape.mul(pt, diff_p)?;
    let diff_q = tape.sub(ln_qt, ln_qs)?;
    let neg = tape.mul(qt, diff_q)?;
    let total = tape.add(pos, neg)?;
    Ok(tape.mean(total))
}

/// Standalone KD loss between a masked student discriminator and a dense
/// teacher on one batch; the spec-level entry point used by tests and
/// diagnostics. The training loop fuses the same term into its own tape.
pub fn kd_loss(
    x_batch: &Tensor,
    disc_cfg: &DiscConfig,
    d_params: &ParamSet,
    m_d: &Mask,
    teacher_params: &ParamSet,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut student_scratch = d_params.clone();
    let mut teacher_scratch = teacher_params.clone();
    let student_binding = bind_params(&mut tape, &student_scratch, Some(m_d), false)?;
    let teacher_binding = bind_params(&mut tape, &teacher_scratch, None, false)?;
    let x = tape.constant(x_batch);
    let student_logits = discriminator_forward(
        &mut tape,
        disc_cfg,
        &mut student_scratch,
        &student_binding,
        x,
        ForwardMode::TrainFrozen,
        None,
    )?;
    let teacher_logits = discriminator_forward(
        &mut tape,
        disc_cfg,
        &mut teacher_scratch,
        &teacher_binding,
        x,
        ForwardMode::TrainFrozen,
        None,
    )?;
    let kd = kd_term(&mut tape, student_logits, teacher_logits)?;
    Ok(tape.value(kd)[0])
}

/// Mean squared error between two equally shaped nodes.
pub fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// Mean absolute error between two equally shaped nodes.
pub fn mae(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let lo = tape.l1_norm(d);
    let n = tape.shape(a).iter().product::<usize>() as f64;
    Ok(tape.scale(lo, 1.0 / n))
}
