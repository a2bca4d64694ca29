//! Wasserstein losses with gradient penalty.

use diffcore::{grad, Elem, Tensor};

use super::model::{Critic, CriticOutput};
use crate::error::{Error, Result};

/// `λ · mean_i (‖∇_x̂ D(x̂)_i‖₂ − 1)²` with `x̂_i = ε_i·real_i + (1−ε_i)·fake_i`.
///
/// `critic` maps an image batch to N×1 scores. The input gradient is built
/// with `create_graph`, so the result is differentiable in the critic's
/// parameters.
pub fn gradient_penalty<T: Elem>(
    critic: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    eps: &[T],
    lambda: f64,
) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() {
        return Err(Error::Model(format!(
            "real batch {:?} and fake batch {:?} differ",
            real.shape(),
            fake.shape()
        )));
    }
    let n = real.shape()[0];
    if eps.len() != n {
        return Err(Error::Model(format!("{} interpolation weights for {n} samples", eps.len())));
    }
    let mut eps_shape = vec![1; real.shape().len()];
    eps_shape[0] = n;
    let e = Tensor::from_vec(eps.to_vec(), &eps_shape)?;
    let one_minus = Tensor::from_vec(eps.iter().map(|&v| T::one() - v).collect(), &eps_shape)?;
    let mixed = real.detach().mul(&e)?.add(&fake.detach().mul(&one_minus)?)?;
    let x_hat = mixed.as_var();
    let scores = critic(&x_hat)?;
    let g = grad(&scores.sum_all()?, &[&x_hat], true)?.remove(0);
    let axes: Vec<usize> = (1..g.shape().len()).collect();
    let norm = g.square()?.sum_keepdim(&axes)?.sqrt()?;
    Ok(norm.add_scalar(-T::one())?.square()?.mean_all()?.scale(T::lit(lambda))?)
}

/// Scalar pieces of a critic update, kept for logging.
#[derive(Debug, Clone)]
pub struct CriticLoss<T: Elem> {
    pub total: Tensor<T>,
    /// `E[D(real)] − E[D(fake)]`.
    pub wasserstein: f64,
    pub penalty: f64,
    pub aux: f64,
}

fn aux_term<T: Elem>(out: &CriticOutput<T>, labels: &[usize]) -> Result<Option<Tensor<T>>> {
    match &out.aux_logits {
        Some(logits) => Ok(Some(logits.cross_entropy(labels)?)),
        None => Ok(None),
    }
}

/// `E[D(fake|c)] − E[D(real|c)] + GP`, plus the auxiliary classification
/// loss on real and fake images when the critic has that head.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss<T: Elem>(
    critic: &Critic<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    labels: &[usize],
    eps: &[T],
    lambda_gp: f64,
    ac_weight: f64,
    train: bool,
) -> Result<CriticLoss<T>> {
    let real_out = critic.forward(real, labels, train)?;
    let fake_out = critic.forward(&fake.detach(), labels, train)?;
    let d_real = real_out.score.mean_all()?;
    let d_fake = fake_out.score.mean_all()?;
    let w_term = d_fake.sub(&d_real)?;
    let gp = if lambda_gp != 0.0 {
        Some(gradient_penalty(
            |x| Ok(critic.forward(x, labels, train)?.score),
            real,
            fake,
            eps,
            lambda_gp,
        )?)
    } else {
        None
    };
    let mut total = w_term.clone();
    let mut penalty = 0.0;
    if let Some(gp) = &gp {
        penalty = gp.item()?.to_f64().unwrap_or(f64::NAN);
        total = total.add(gp)?;
    }
    let mut aux = 0.0;
    if let (Some(a), Some(b)) = (aux_term(&real_out, labels)?, aux_term(&fake_out, labels)?) {
        let ce = a.add(&b)?;
        aux = ce.item()?.to_f64().unwrap_or(f64::NAN);
        total = total.add(&ce.scale(T::lit(ac_weight))?)?;
    }
    Ok(CriticLoss {
        total,
        wasserstein: -w_term.item()?.to_f64().unwrap_or(f64::NAN),
        penalty,
        aux,
    })
}

/// `−E[D(fake|c)]`, plus the auxiliary classification loss on the fakes.
pub fn generator_loss<T: Elem>(
    critic: &Critic<T>,
    fake: &Tensor<T>,
    labels: &[usize],
    ac_weight: f64,
    train: bool,
) -> Result<Tensor<T>> {
    let out = critic.forward(fake, labels, train)?;
    let mut loss = out.score.mean_all()?.neg()?;
    if let Some(ce) = aux_term(&out, labels)? {
        loss = loss.add(&ce.scale(T::lit(ac_weight))?)?;
    }
    Ok(loss)
}
