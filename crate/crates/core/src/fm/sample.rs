use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::objective::standard_normal;
use super::tensor::Tensor;
use super::VelocityModel;
use crate::error::{Error, Result};

/// Closure-backed parameter-free velocity field.
pub struct FnVelocity<F>(pub F);

impl<F: Fn(&Tensor, f64) -> Tensor> VelocityModel for FnVelocity<F> {
    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn velocity(&self, x: &Tensor, _cond: Option<&Tensor>, t: f64) -> Result<Tensor> {
        Ok((self.0)(x, t))
    }

    fn sse_grad(&self, x: &Tensor, _cond: Option<&Tensor>, t: f64, target: &Tensor, _grad: &mut [f64]) -> Result<f64> {
        let u = (self.0)(x, t);
        u.check_shape(target)?;
        Ok(u.data.iter().zip(&target.data).map(|(a, b)| (a - b).powi(2)).sum())
    }
}

/// Explicit Euler from `t = 1` (at `x_init`) down to `t = 0` in `steps`
/// uniform steps: `x ← x − û(x, t_k)/N` with `t_k = 1 − k/N`.
pub fn sample_from<M: VelocityModel + ?Sized>(model: &M, cond: Option<&Tensor>, x_init: Tensor, steps: usize) -> Result<Tensor> {
    if steps < 1 {
        return Err(Error::invalid("integrator needs at least one step"));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x_init;
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let u = model.velocity(&x, cond, t)?;
        x.check_shape(&u)?;
        for (xv, uv) in x.data.iter_mut().zip(&u.data) {
            *xv -= dt * uv;
        }
    }
    Ok(x)
}

/// Samples from `eps ~ N(0, I)` drawn with `seed`.
pub fn sample<M: VelocityModel + ?Sized>(model: &M, cond: Option<&Tensor>, shape: [usize; 3], steps: usize, seed: u64) -> Result<Tensor> {
    if steps < 1 {
        return Err(Error::invalid("integrator needs at least one step"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = standard_normal(&mut rng, shape);
    sample_from(model, cond, eps, steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_zero_step_returns_noise() {
        let zero = FnVelocity(|x: &Tensor, _t: f64| x.map(|_| 0.0));
        let out = sample(&zero, None, [1, 2, 3], 1, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(out, standard_normal(&mut rng, [1, 2, 3]));
        assert!(sample(&zero, None, [1, 2, 3], 0, 7).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let m = FnVelocity(|x: &Tensor, t: f64| x.map(|v| v * t));
        assert_eq!(sample(&m, None, [1, 4, 4], 10, 3).unwrap(), sample(&m, None, [1, 4, 4], 10, 3).unwrap());
        assert_ne!(sample(&m, None, [1, 4, 4], 10, 3).unwrap(), sample(&m, None, [1, 4, 4], 10, 4).unwrap());
    }

    #[test]
    fn constant_data_velocity_lands_on_data() {
        // exact velocity toward x0 = 0.5 on the linear path
        let m = FnVelocity(|x: &Tensor, t: f64| x.map(|v| (v - 0.5) / t));
        let out = sample(&m, None, [1, 3, 3], 50, 1).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.5).abs() < 1e-9));
    }
}
