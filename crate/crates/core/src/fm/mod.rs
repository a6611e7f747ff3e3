//! Flow-matching training and sampling on the linear path
//! `x_t = (1 − t)·x0 + t·eps`, target velocity `eps − x0`.

pub mod checkpoint;
pub mod net;
pub mod objective;
pub mod sample;
pub mod tensor;
pub mod train;
pub mod two_stage;

pub use net::{ConvNet, NetConfig};
pub use objective::{fm_interpolate, fm_loss, fm_loss_grad, fm_target_velocity, NoiseDraw, TrainItem};
pub use sample::{sample, sample_from, FnVelocity};
pub use tensor::Tensor;
pub use train::{train, FMConfig, Phase, TrainRecord, TrainingSet};

use crate::error::Result;

/// A velocity predictor `û(x_t; cond, t)` with a flat parameter vector.
pub trait VelocityModel {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn velocity(&self, x: &Tensor, cond: Option<&Tensor>, t: f64) -> Result<Tensor>;

    /// Returns `Σ (û − target)²` and adds its parameter gradient into `grad`.
    fn sse_grad(&self, x: &Tensor, cond: Option<&Tensor>, t: f64, target: &Tensor, grad: &mut [f64]) -> Result<f64>;
}

/// `û = a·x + b·t`, elementwise. Two parameters; used for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMicroModel {
    pub params: [f64; 2],
}

impl VelocityModel for LinearMicroModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn velocity(&self, x: &Tensor, _cond: Option<&Tensor>, t: f64) -> Result<Tensor> {
        let [a, b] = self.params;
        Ok(x.map(|v| a * v + b * t))
    }

    fn sse_grad(&self, x: &Tensor, cond: Option<&Tensor>, t: f64, target: &Tensor, grad: &mut [f64]) -> Result<f64> {
        target.check_shape(x)?;
        let u = self.velocity(x, cond, t)?;
        let mut sse = 0.0;
        for ((u, v), xv) in u.data.iter().zip(&target.data).zip(&x.data) {
            let r = u - v;
            sse += r * r;
            grad[0] += 2.0 * r * xv;
            grad[1] += 2.0 * r * t;
        }
        Ok(sse)
    }
}
