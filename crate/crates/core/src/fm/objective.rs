use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;
use super::VelocityModel;
use crate::error::{Error, Result};

/// One training sample and its optional control input.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub sample: Tensor,
    pub cond: Option<Tensor>,
}

/// Per-sample draw of the interpolation time and the Gaussian endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub t: f64,
    pub eps: Tensor,
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

pub fn fm_interpolate(x0: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
    x0.check_shape(eps)?;
    check_t(t)?;
    let data = x0.data.iter().zip(&eps.data).map(|(a, e)| (1.0 - t) * a + t * e).collect();
    Ok(Tensor { data, ..*x0 })
}

pub fn fm_target_velocity(x0: &Tensor, eps: &Tensor) -> Result<Tensor> {
    x0.check_shape(eps)?;
    let data = x0.data.iter().zip(&eps.data).map(|(a, e)| e - a).collect();
    Ok(Tensor { data, ..*x0 })
}

pub fn standard_normal(rng: &mut impl Rng, shape: [usize; 3]) -> Tensor {
    let [c, h, w] = shape;
    let data = (0..c * h * w).map(|_| StandardNormal.sample(rng)).collect();
    Tensor { c, h, w, data }
}

/// Draws `t ~ U[0, 1)` and `eps ~ N(0, I)` for each sample, in batch order.
pub fn draw_noise(rng: &mut impl Rng, batch: &[&TrainItem]) -> Vec<NoiseDraw> {
    batch
        .iter()
        .map(|item| {
            let t: f64 = rng.random();
            let eps = standard_normal(rng, item.sample.shape());
            NoiseDraw { t, eps }
        })
        .collect()
}

/// Loss for fixed draws: mean of `(û − v)²` over batch, channels and pixels.
/// Returns the loss and its parameter gradient.
pub fn loss_with_draws<M: VelocityModel + ?Sized>(model: &M, batch: &[&TrainItem], draws: &[NoiseDraw]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if batch.len() != draws.len() {
        return Err(Error::shape(format!("{} draws", batch.len()), draws.len()));
    }
    let mut grad = vec![0.0; model.params().len()];
    let mut sse = 0.0;
    let mut count = 0usize;
    for (item, draw) in batch.iter().zip(draws) {
        let x_t = fm_interpolate(&item.sample, &draw.eps, draw.t)?;
        let v = fm_target_velocity(&item.sample, &draw.eps)?;
        sse += model.sse_grad(&x_t, item.cond.as_ref(), draw.t, &v, &mut grad)?;
        count += item.sample.len();
    }
    let scale = 1.0 / count as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((sse * scale, grad))
}

pub fn fm_loss_grad<M: VelocityModel + ?Sized>(model: &M, batch: &[&TrainItem], rng: &mut impl Rng) -> Result<(f64, Vec<f64>)> {
    let draws = draw_noise(rng, batch);
    loss_with_draws(model, batch, &draws)
}

pub fn fm_loss<M: VelocityModel + ?Sized>(model: &M, batch: &[&TrainItem], rng: &mut impl Rng) -> Result<f64> {
    fm_loss_grad(model, batch, rng).map(|(loss, _)| loss)
}
