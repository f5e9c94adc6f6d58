//! Central finite differences, kept independent of [`super::backward`] so it
//! can serve as an oracle for it.

use super::{forward, Batch, Gradients, Model, NnError};

/// `(loss(w + h e_j) - loss(w - h e_j)) / 2h` for every coordinate `j` of
/// every parameter group.
pub fn finite_diff_grad(model: &Model, batch: &Batch, h: f64) -> Result<Gradients, NnError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(NnError::BadStep(h));
    }
    let mut probe = model.clone();
    let mut out = Gradients::zeros_like(model);
    for k in 0..model.num_groups() {
        for j in 0..model.group(k).len() {
            let orig = model.group(k).data()[j];
            probe.group_mut(k).data_mut()[j] = orig + h;
            let plus = loss_at(&probe, batch)?;
            probe.group_mut(k).data_mut()[j] = orig - h;
            let minus = loss_at(&probe, batch)?;
            probe.group_mut(k).data_mut()[j] = orig;
            out.0[k].data_mut()[j] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

fn loss_at(model: &Model, batch: &Batch) -> Result<f64, NnError> {
    match forward(model, batch) {
        Ok((loss, _)) => Ok(loss),
        Err(NnError::NonFiniteActivation(_)) => Err(NnError::NonFiniteLoss),
        Err(e) => Err(e),
    }
}

/// `max_j |a_j - b_j| / (|b_j| + 1e-8)` over all groups, with `b` the reference.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten().iter())
        .map(|(x, y)| (x - y).abs() / (y.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// Smallest `|z|` over the pre-activations of ReLU layers, used to keep
/// finite-difference probes away from the kink.
pub fn min_abs_preactivation(model: &Model, batch: &Batch) -> Result<f64, NnError> {
    let (_, cache) = forward(model, batch)?;
    Ok(model
        .layers()
        .iter()
        .zip(cache.preactivations())
        .filter(|(l, _)| l.activation == super::Activation::Relu)
        .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min))
}
