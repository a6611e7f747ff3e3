//! Small convolutional velocity network with an additive control branch.
//!
//! Trunk: `h0 = silu(conv_in((1 − t)·x) + temb)`, then per block
//! `h_{b+1} = h_b + silu(conv_b(h_b)) + ctx_b`, then `D = conv_out(h_B)`.
//! Control: `c0 = silu(ctrl_in(cond))`, `c_{b+1} = c_b + silu(ctrl_b(c_b))`,
//! `ctx_b = proj_b(c_{b+1})` with zero-initialised 1×1 projections.
//!
//! The network output `D` is a data estimate; the velocity is
//! `û = (x − D) / max(t, t_floor)`. Scaling the trunk input by `1 − t` keeps
//! pure noise from reaching the trunk at `t = 1`, where only the condition
//! carries information.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::VelocityModel;
use crate::error::{Error, Result};

pub const MAX_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Channels of the generated sample.
    pub channels: usize,
    /// Channels of the control input; 0 disables the control branch.
    pub cond_channels: usize,
    pub hidden: usize,
    pub ctrl_hidden: usize,
    pub blocks: usize,
    /// Number of sinusoidal time features (even).
    pub time_features: usize,
    pub t_floor: f64,
    pub init_seed: u64,
}

impl NetConfig {
    pub fn new(channels: usize, cond_channels: usize) -> Self {
        Self {
            channels,
            cond_channels,
            hidden: 24,
            ctrl_hidden: 12,
            blocks: 2,
            time_features: 8,
            t_floor: 0.5,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 {
            return Err(Error::invalid("channels and hidden width must be positive"));
        }
        if self.hidden > MAX_HIDDEN {
            return Err(Error::invalid(format!("hidden width {} exceeds {MAX_HIDDEN}", self.hidden)));
        }
        if !(1..=3).contains(&self.blocks) {
            return Err(Error::invalid("between 1 and 3 trunk blocks"));
        }
        if self.cond_channels > 0 && self.ctrl_hidden == 0 {
            return Err(Error::invalid("control branch needs a positive width"));
        }
        if self.time_features == 0 || self.time_features % 2 != 0 {
            return Err(Error::invalid("time_features must be even and positive"));
        }
        if !(self.t_floor > 0.0 && self.t_floor <= 1.0) {
            return Err(Error::invalid("t_floor must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Conv {
    w: Range<usize>,
    b: Range<usize>,
    out_c: usize,
    in_c: usize,
    k: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    time_w: Range<usize>,
    time_b: Range<usize>,
    trunk_in: Conv,
    blocks: Vec<Conv>,
    trunk_out: Conv,
    ctrl_in: Option<Conv>,
    ctrl_blocks: Vec<Conv>,
    proj: Vec<Conv>,
}

fn build_layout(cfg: &NetConfig) -> (Layout, Vec<ParamSpec>) {
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| -> Range<usize> {
        let len: usize = shape.iter().product();
        specs.push(ParamSpec { name, shape, offset });
        offset += len;
        offset - len..offset
    };
    let mut conv = |name: &str, out_c: usize, in_c: usize, k: usize| Conv {
        w: push(format!("{name}.w"), vec![out_c, in_c, k, k]),
        b: push(format!("{name}.b"), vec![out_c]),
        out_c,
        in_c,
        k,
    };
    let (c, h, ch) = (cfg.channels, cfg.hidden, cfg.ctrl_hidden);
    let time = conv("time", h, cfg.time_features, 1);
    let trunk_in = conv("trunk.in", h, c, 3);
    let blocks = (0..cfg.blocks).map(|b| conv(&format!("trunk.block{b}"), h, h, 3)).collect();
    let trunk_out = conv("trunk.out", c, h, 3);
    let (ctrl_in, ctrl_blocks, proj) = if cfg.cond_channels > 0 {
        let ctrl_in = conv("ctrl.in", ch, cfg.cond_channels, 3);
        let mut cb = Vec::new();
        let mut pj = Vec::new();
        for b in 0..cfg.blocks {
            cb.push(conv(&format!("ctrl.block{b}"), ch, ch, 3));
            pj.push(conv(&format!("ctrl.proj{b}"), h, ch, 1));
        }
        (Some(ctrl_in), cb, pj)
    } else {
        (None, Vec::new(), Vec::new())
    };
    let layout = Layout {
        time_w: time.w,
        time_b: time.b,
        trunk_in,
        blocks,
        trunk_out,
        ctrl_in,
        ctrl_blocks,
        proj,
    };
    (layout, specs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    config: NetConfig,
    params: Vec<f64>,
    specs: Vec<ParamSpec>,
    layout: Layout,
}

struct CtrlCache {
    pre_in: Tensor,
    c: Vec<Tensor>,
    pre: Vec<Tensor>,
}

struct Cache {
    feats: Vec<f64>,
    pre_in: Tensor,
    h: Vec<Tensor>,
    pre: Vec<Tensor>,
    ctrl: Option<CtrlCache>,
    t: f64,
    t_eff: f64,
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn silu(t: &Tensor) -> Tensor {
    t.map(|a| a * sigmoid(a))
}

/// `g ⊙ silu'(pre)`.
fn silu_backward(pre: &Tensor, g: &Tensor) -> Tensor {
    let data = pre
        .data
        .iter()
        .zip(&g.data)
        .map(|(a, g)| {
            let s = sigmoid(*a);
            g * s * (1.0 + a * (1.0 - s))
        })
        .collect();
    Tensor { data, ..*pre }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}

/// Spatial window of valid output rows/cols for a kernel offset.
fn span(len: usize, d: isize) -> Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d.max(0)).max(lo as isize) as usize;
    lo..hi
}

fn conv_forward(input: &Tensor, conv: &Conv, params: &[f64]) -> Tensor {
    let (h, w) = (input.h, input.w);
    let r = (conv.k / 2) as isize;
    let weights = &params[conv.w.clone()];
    let bias = &params[conv.b.clone()];
    let mut out = Tensor::zeros(conv.out_c, h, w);
    for o in 0..conv.out_c {
        let oplane = out.channel_mut(o);
        oplane.fill(bias[o]);
        for i in 0..conv.in_c {
            let iplane = input.channel(i);
            for ky in 0..conv.k {
                let dy = ky as isize - r;
                let ys = span(h, dy);
                for kx in 0..conv.k {
                    let dx = kx as isize - r;
                    let xs = span(w, dx);
                    let wv = weights[((o * conv.in_c + i) * conv.k + ky) * conv.k + kx];
                    for y in ys.clone() {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut oplane[y * w + xs.start..y * w + xs.end];
                        let istart = (sy * w) as isize + xs.start as isize + dx;
                        let irow = &iplane[istart as usize..istart as usize + xs.len()];
                        for (a, b) in orow.iter_mut().zip(irow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient if asked.
fn conv_backward(input: &Tensor, g_out: &Tensor, conv: &Conv, params: &[f64], grad: &mut [f64], need_input: bool) -> Option<Tensor> {
    let (h, w) = (input.h, input.w);
    let r = (conv.k / 2) as isize;
    let weights = &params[conv.w.clone()];
    let mut g_in = need_input.then(|| Tensor::zeros(conv.in_c, h, w));
    for o in 0..conv.out_c {
        let gplane = g_out.channel(o);
        grad[conv.b.start + o] += gplane.iter().sum::<f64>();
        for i in 0..conv.in_c {
            let iplane = input.channel(i);
            for ky in 0..conv.k {
                let dy = ky as isize - r;
                let ys = span(h, dy);
                for kx in 0..conv.k {
                    let dx = kx as isize - r;
                    let xs = span(w, dx);
                    let widx = ((o * conv.in_c + i) * conv.k + ky) * conv.k + kx;
                    let wv = weights[widx];
                    let mut acc = 0.0;
                    for y in ys.clone() {
                        let sy = (y as isize + dy) as usize;
                        let grow = &gplane[y * w + xs.start..y * w + xs.end];
                        let istart = ((sy * w) as isize + xs.start as isize + dx) as usize;
                        let irow = &iplane[istart..istart + xs.len()];
                        acc += grow.iter().zip(irow).map(|(g, v)| g * v).sum::<f64>();
                        if let Some(gi) = g_in.as_mut() {
                            let gin = &mut gi.channel_mut(i)[istart..istart + xs.len()];
                            for (d, g) in gin.iter_mut().zip(grow) {
                                *d += wv * g;
                            }
                        }
                    }
                    grad[conv.w.start + widx] += acc;
                }
            }
        }
    }
    g_in
}

impl ConvNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let total = specs.last().map_or(0, |s| s.offset + s.len());
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        for spec in &specs {
            // biases and control projections start at zero
            if spec.shape.len() == 1 || spec.name.starts_with("ctrl.proj") {
                continue;
            }
            let fan_in: usize = spec.shape[1..].iter().product();
            let std = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[spec.range()] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = std * z;
            }
        }
        Ok(Self {
            config,
            params,
            specs,
            layout,
        })
    }

    pub fn from_parts(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::new(config)?;
        if params.len() != net.params.len() {
            return Err(Error::shape(format!("{} parameters", net.params.len()), params.len()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.specs.iter().find(|s| s.name == name).map(|s| &self.params[s.range()])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.specs.iter().find(|s| s.name == name)?.range();
        Some(&mut self.params[range])
    }

    pub fn has_control(&self) -> bool {
        self.layout.ctrl_in.is_some()
    }

    /// Forces every control projection to output exactly zero.
    pub fn zero_control(&mut self) {
        for p in &self.layout.proj {
            self.params[p.w.clone()].fill(0.0);
            self.params[p.b.clone()].fill(0.0);
        }
    }

    fn time_features(&self, t: f64) -> Vec<f64> {
        let half = self.config.time_features / 2;
        let mut feats = Vec::with_capacity(2 * half);
        for k in 0..half {
            let omega = std::f64::consts::PI * (1u64 << k) as f64;
            feats.push((omega * t).sin());
            feats.push((omega * t).cos());
        }
        feats
    }

    fn check_inputs(&self, x: &Tensor, cond: Option<&Tensor>, t: f64) -> Result<()> {
        if x.c != self.config.channels {
            return Err(Error::shape(format!("{} channels", self.config.channels), x.c));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("t"));
        }
        if let Some(c) = cond {
            if !self.has_control() {
                return Err(Error::invalid("network has no control branch"));
            }
            if c.c != self.config.cond_channels || (c.h, c.w) != (x.h, x.w) {
                return Err(Error::shape(
                    format!("{}x{}x{}", self.config.cond_channels, x.h, x.w),
                    format!("{}x{}x{}", c.c, c.h, c.w),
                ));
            }
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor, cond: Option<&Tensor>, t: f64) -> Result<(Tensor, Cache)> {
        self.check_inputs(x, cond, t)?;
        let p = &self.params;
        let l = &self.layout;
        let hd = self.config.hidden;
        let feats = self.time_features(t);
        let nf = feats.len();
        let x_in = x.map(|v| v * (1.0 - t));
        let mut pre_in = conv_forward(&x_in, &l.trunk_in, p);
        for j in 0..hd {
            let mut e = p[l.time_b.start + j];
            for (k, f) in feats.iter().enumerate() {
                e += p[l.time_w.start + j * nf + k] * f;
            }
            for v in pre_in.channel_mut(j) {
                *v += e;
            }
        }
        let mut h = vec![silu(&pre_in)];
        let mut pre = Vec::with_capacity(l.blocks.len());
        let mut ctrl = match (cond, &l.ctrl_in) {
            (Some(c), Some(ci)) => {
                let pre_c = conv_forward(c, ci, p);
                let c0 = silu(&pre_c);
                Some(CtrlCache {
                    pre_in: pre_c,
                    c: vec![c0],
                    pre: Vec::new(),
                })
            }
            _ => None,
        };
        for (b, block) in l.blocks.iter().enumerate() {
            let r = conv_forward(&h[b], block, p);
            let mut next = h[b].clone();
            add_into(&mut next, &silu(&r));
            if let Some(cc) = ctrl.as_mut() {
                let a = conv_forward(&cc.c[b], &l.ctrl_blocks[b], p);
                let mut c_next = cc.c[b].clone();
                add_into(&mut c_next, &silu(&a));
                let ctx = conv_forward(&c_next, &l.proj[b], p);
                add_into(&mut next, &ctx);
                cc.pre.push(a);
                cc.c.push(c_next);
            }
            pre.push(r);
            h.push(next);
        }
        let d = conv_forward(h.last().unwrap(), &l.trunk_out, p);
        let t_eff = t.max(self.config.t_floor);
        let u = Tensor {
            data: x.data.iter().zip(&d.data).map(|(x, d)| (x - d) / t_eff).collect(),
            ..*x
        };
        Ok((
            u,
            Cache {
                feats,
                pre_in,
                h,
                pre,
                ctrl,
                t,
                t_eff,
            },
        ))
    }

    fn backward(&self, x: &Tensor, cond: Option<&Tensor>, cache: &Cache, g_u: &Tensor, grad: &mut [f64]) {
        let p = &self.params;
        let l = &self.layout;
        let g_d = g_u.map(|g| -g / cache.t_eff);
        let nb = l.blocks.len();
        let mut g_h = conv_backward(&cache.h[nb], &g_d, &l.trunk_out, p, grad, true).unwrap();
        let mut g_c: Option<Tensor> = cache.ctrl.as_ref().map(|cc| Tensor::zeros(cc.c[nb].c, x.h, x.w));
        for b in (0..nb).rev() {
            if let (Some(cc), Some(gc)) = (cache.ctrl.as_ref(), g_c.as_mut()) {
                let from_proj = conv_backward(&cc.c[b + 1], &g_h, &l.proj[b], p, grad, true).unwrap();
                add_into(gc, &from_proj);
                let g_a = silu_backward(&cc.pre[b], gc);
                let through = conv_backward(&cc.c[b], &g_a, &l.ctrl_blocks[b], p, grad, true).unwrap();
                add_into(gc, &through);
            }
            let g_r = silu_backward(&cache.pre[b], &g_h);
            let through = conv_backward(&cache.h[b], &g_r, &l.blocks[b], p, grad, true).unwrap();
            add_into(&mut g_h, &through);
        }
        if let (Some(cc), Some(gc), Some(c), Some(ci)) = (cache.ctrl.as_ref(), g_c.as_ref(), cond, l.ctrl_in.as_ref()) {
            let g_pre = silu_backward(&cc.pre_in, gc);
            conv_backward(c, &g_pre, ci, p, grad, false);
        }
        let g_pre = silu_backward(&cache.pre_in, &g_h);
        let nf = cache.feats.len();
        for j in 0..self.config.hidden {
            let ge: f64 = g_pre.channel(j).iter().sum();
            grad[l.time_b.start + j] += ge;
            for (k, f) in cache.feats.iter().enumerate() {
                grad[l.time_w.start + j * nf + k] += ge * f;
            }
        }
        let x_in = x.map(|v| v * (1.0 - cache.t));
        conv_backward(&x_in, &g_pre, &l.trunk_in, p, grad, false);
    }
}

impl VelocityModel for ConvNet {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn velocity(&self, x: &Tensor, cond: Option<&Tensor>, t: f64) -> Result<Tensor> {
        self.forward(x, cond, t).map(|(u, _)| u)
    }

    fn sse_grad(&self, x: &Tensor, cond: Option<&Tensor>, t: f64, target: &Tensor, grad: &mut [f64]) -> Result<f64> {
        target.check_shape(x)?;
        let (u, cache) = self.forward(x, cond, t)?;
        let mut sse = 0.0;
        let g_u = Tensor {
            data: u
                .data
                .iter()
                .zip(&target.data)
                .map(|(u, v)| {
                    let r = u - v;
                    sse += r * r;
                    2.0 * r
                })
                .collect(),
            ..u
        };
        self.backward(x, cond, &cache, &g_u, grad);
        Ok(sse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::from_vec(c, h, w, data).unwrap()
    }

    fn small_config() -> NetConfig {
        NetConfig {
            channels: 2,
            cond_channels: 3,
            hidden: 4,
            ctrl_hidden: 3,
            blocks: 2,
            time_features: 4,
            t_floor: 0.05,
            init_seed: 9,
        }
    }

    #[test]
    fn layout_names_and_offsets() {
        let net = ConvNet::new(small_config()).unwrap();
        let names: Vec<_> = net.specs().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names[..4], ["time.w", "time.b", "trunk.in.w", "trunk.in.b"]);
        assert!(names.contains(&"ctrl.proj1.w"));
        let mut end = 0;
        for s in net.specs() {
            assert_eq!(s.offset, end);
            end += s.len();
        }
        assert_eq!(end, net.params().len());
        assert!(net.param("ctrl.proj0.w").unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let input = random_tensor(2, 5, 4, 1);
        let conv = Conv {
            w: 0..2 * 2 * 9,
            b: 36..38,
            out_c: 2,
            in_c: 2,
            k: 3,
        };
        let params: Vec<f64> = (0..38).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = conv_forward(&input, &conv, &params);
        for o in 0..2 {
            for y in 0..5 {
                for x in 0..4 {
                    let mut acc = params[36 + o];
                    for i in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                                if sy >= 0 && sy < 5 && sx >= 0 && sx < 4 {
                                    acc += params[((o * 2 + i) * 3 + ky) * 3 + kx] * input.at(i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    assert!((out.at(o, y, x) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = ConvNet::new(small_config()).unwrap();
        // non-zero projections so the control path is exercised
        for (i, v) in net.param_mut("ctrl.proj0.w").unwrap().iter_mut().enumerate() {
            *v = 0.1 * (i as f64).cos();
        }
        for (i, v) in net.param_mut("ctrl.proj1.w").unwrap().iter_mut().enumerate() {
            *v = 0.1 * (i as f64 + 0.5).sin();
        }
        let x = random_tensor(2, 5, 6, 2);
        let cond = random_tensor(3, 5, 6, 3);
        let target = random_tensor(2, 5, 6, 4);
        let t = 0.37;
        let mut grad = vec![0.0; net.params().len()];
        net.sse_grad(&x, Some(&cond), t, &target, &mut grad).unwrap();
        let h = 1e-6;
        let mut scratch = vec![0.0; grad.len()];
        for idx in (0..grad.len()).step_by(7) {
            let orig = net.params()[idx];
            net.params_mut()[idx] = orig + h;
            let up = net.sse_grad(&x, Some(&cond), t, &target, &mut scratch).unwrap();
            net.params_mut()[idx] = orig - h;
            let down = net.sse_grad(&x, Some(&cond), t, &target, &mut scratch).unwrap();
            net.params_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6);
            assert!(err < 1e-4, "{}: analytic {} fd {fd}", idx, grad[idx]);
        }
    }

    #[test]
    fn zero_control_is_bit_identical() {
        let mut net = ConvNet::new(small_config()).unwrap();
        let x = random_tensor(2, 6, 6, 5);
        let cond = random_tensor(3, 6, 6, 6);
        net.param_mut("ctrl.proj0.w").unwrap().fill(0.3);
        assert_ne!(net.velocity(&x, Some(&cond), 0.4).unwrap(), net.velocity(&x, None, 0.4).unwrap());
        net.zero_control();
        let a = net.velocity(&x, Some(&cond), 0.4).unwrap();
        let b = net.velocity(&x, None, 0.4).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = ConvNet::new(small_config()).unwrap();
        let x = random_tensor(2, 4, 4, 1);
        assert!(net.velocity(&random_tensor(3, 4, 4, 1), None, 0.5).is_err());
        assert!(net.velocity(&x, Some(&random_tensor(2, 4, 4, 1)), 0.5).is_err());
        assert!(net.velocity(&x, None, f64::NAN).is_err());
        let plain = ConvNet::new(NetConfig::new(2, 0)).unwrap();
        assert!(plain.velocity(&x, Some(&random_tensor(3, 4, 4, 1)), 0.5).is_err());
        let mut wide = small_config();
        wide.hidden = 65;
        assert!(ConvNet::new(wide).is_err());
    }
}
