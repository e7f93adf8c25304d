//! Minimal dense feed-forward network with softplus activations, a
//! double-sided softplus output bounding layer, Adam, and a checksummed
//! binary checkpoint format. No autodiff: backward passes are hand-written
//! and finite-difference tested.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sha2::{Digest, Sha256};
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Squashes z into (lo, hi): y = softplus(z - lo) - softplus(z - hi) + lo.
/// Near-identity deep inside the interval, saturating at the ends.
pub fn bounded_output(z: f64, lo: f64, hi: f64) -> f64 {
    softplus(z - lo) - softplus(z - hi) + lo
}

/// d bounded_output / dz = sigmoid(z - lo) - sigmoid(z - hi).
pub fn bounded_output_deriv(z: f64, lo: f64, hi: f64) -> f64 {
    sigmoid(z - lo) - sigmoid(z - hi)
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    /// per-component output bounds applied by the bounding layer
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

/// Intermediate values of one forward pass, needed by backward.
#[derive(Debug, Clone)]
pub struct Cache {
    /// layer inputs: x, h1, ..., h_{L-1}
    inputs: Vec<DVector<f64>>,
    /// pre-activations z1, ..., zL (zL feeds the bounding layer)
    pre: Vec<DVector<f64>>,
}

/// Parameter gradients, same shapes as the layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                    b: DVector::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w *= s;
            l.b *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.amax().max(l.b.amax()))
            .fold(0.0, f64::max)
    }
}

pub const HIDDEN_WIDTH: usize = 64;
pub const HIDDEN_LAYERS: usize = 3;

impl Mlp {
    /// Three hidden layers of width 64, uniform fan-in initialization.
    pub fn new<R: Rng>(n_in: usize, lo: Vec<f64>, hi: Vec<f64>, rng: &mut R) -> Self {
        Self::with_widths(n_in, &[HIDDEN_WIDTH; HIDDEN_LAYERS], lo, hi, rng)
    }

    pub fn with_widths<R: Rng>(
        n_in: usize,
        hidden: &[usize],
        lo: Vec<f64>,
        hi: Vec<f64>,
        rng: &mut R,
    ) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(l, h)| l < h), "bounds must satisfy lo < hi");
        let n_out = lo.len();
        let mut dims = vec![n_in];
        dims.extend_from_slice(hidden);
        dims.push(n_out);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Dense {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound)),
                    b: DVector::from_fn(fan_out, |_, _| rng.gen_range(-bound..bound)),
                }
            })
            .collect();
        Mlp {
            layers,
            lo: DVector::from_vec(lo),
            hi: DVector::from_vec(hi),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.lo.len()
    }

    pub fn forward(&self, x: &DVector<f64>) -> (DVector<f64>, Cache) {
        assert_eq!(x.len(), self.n_inputs());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            inputs.push(h.clone());
            let z = &layer.w * &h + &layer.b;
            pre.push(z.clone());
            if k + 1 < self.layers.len() {
                h = z.map(softplus);
            } else {
                h = DVector::from_fn(z.len(), |i, _| bounded_output(z[i], self.lo[i], self.hi[i]));
            }
        }
        (h, Cache { inputs, pre })
    }

    /// Backpropagates dl_dy (gradient of the loss in the bounded outputs)
    /// through the net; returns parameter gradients and dl_dx.
    pub fn backward(&self, cache: &Cache, dl_dy: &DVector<f64>) -> (Gradients, DVector<f64>) {
        let last = self.layers.len() - 1;
        let z_out = &cache.pre[last];
        let mut delta = DVector::from_fn(dl_dy.len(), |i, _| {
            dl_dy[i] * bounded_output_deriv(z_out[i], self.lo[i], self.hi[i])
        });
        let mut grads = Gradients::zeros_like(self);
        for k in (0..=last).rev() {
            grads.layers[k].w = &delta * cache.inputs[k].transpose();
            grads.layers[k].b = delta.clone();
            let upstream = self.layers[k].w.transpose() * &delta;
            if k > 0 {
                let z = &cache.pre[k - 1];
                delta = DVector::from_fn(upstream.len(), |i, _| upstream[i] * sigmoid(z[i]));
            } else {
                delta = upstream;
            }
        }
        (grads, delta)
    }

    // -- checkpoint format ------------------------------------------------
    //
    //   magic "DC2ACNN1" | u32 n_layers | per layer: u32 rows, u32 cols |
    //   u32 n_out | lo | hi | per layer: w row-major, b | sha256 of all
    //   preceding bytes. Integers little-endian u32, floats little-endian
    //   f64.

    const MAGIC: &'static [u8; 8] = b"DC2ACNN1";

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<(), NnetError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            buf.extend_from_slice(&(l.w.nrows() as u32).to_le_bytes());
            buf.extend_from_slice(&(l.w.ncols() as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.lo.len() as u32).to_le_bytes());
        for v in self.lo.iter().chain(self.hi.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.layers {
            for r in 0..l.w.nrows() {
                for c in 0..l.w.ncols() {
                    buf.extend_from_slice(&l.w[(r, c)].to_le_bytes());
                }
            }
            for v in l.b.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self, NnetError> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        if buf.len() < 8 + 32 || &buf[..8] != Self::MAGIC {
            return Err(NnetError::Format("missing magic header".into()));
        }
        let (body, sum) = buf.split_at(buf.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != sum {
            return Err(NnetError::Format("checksum mismatch".into()));
        }
        let mut pos = 8;
        let take_u32 = |pos: &mut usize| -> Result<u32, NnetError> {
            let end = *pos + 4;
            if end > body.len() {
                return Err(NnetError::Format("truncated".into()));
            }
            let v = u32::from_le_bytes(body[*pos..end].try_into().unwrap());
            *pos = end;
            Ok(v)
        };
        let n_layers = take_u32(&mut pos)? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(NnetError::Format(format!("implausible layer count {n_layers}")));
        }
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let r = take_u32(&mut pos)? as usize;
            let c = take_u32(&mut pos)? as usize;
            shapes.push((r, c));
        }
        let n_out = take_u32(&mut pos)? as usize;
        if shapes[n_layers - 1].0 != n_out {
            return Err(NnetError::Format("output bound count disagrees with last layer".into()));
        }
        let take_f64 = |pos: &mut usize| -> Result<f64, NnetError> {
            let end = *pos + 8;
            if end > body.len() {
                return Err(NnetError::Format("truncated".into()));
            }
            let v = f64::from_le_bytes(body[*pos..end].try_into().unwrap());
            *pos = end;
            Ok(v)
        };
        let mut lo = DVector::zeros(n_out);
        let mut hi = DVector::zeros(n_out);
        for i in 0..n_out {
            lo[i] = take_f64(&mut pos)?;
        }
        for i in 0..n_out {
            hi[i] = take_f64(&mut pos)?;
        }
        let mut layers = Vec::with_capacity(n_layers);
        for &(r, c) in &shapes {
            let mut w = DMatrix::zeros(r, c);
            for i in 0..r {
                for j in 0..c {
                    w[(i, j)] = take_f64(&mut pos)?;
                }
            }
            let mut b = DVector::zeros(r);
            for i in 0..r {
                b[i] = take_f64(&mut pos)?;
            }
            layers.push(Dense { w, b });
        }
        if pos != body.len() {
            return Err(NnetError::Format("trailing bytes".into()));
        }
        Ok(Mlp { layers, lo, hi })
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Adam {
            lr,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for ((layer, g), (m, v)) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut().zip(self.v.layers.iter_mut()))
        {
            for (p, (gv, (mv, vv))) in layer
                .w
                .iter_mut()
                .chain(layer.b.iter_mut())
                .zip(g.w.iter().chain(g.b.iter()).zip(
                    m.w.iter_mut()
                        .chain(m.b.iter_mut())
                        .zip(v.w.iter_mut().chain(v.b.iter_mut())),
                ))
            {
                *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Mean squared error and its gradient in the predictions.
pub fn mse_loss(pred: &DVector<f64>, target: &DVector<f64>) -> (f64, DVector<f64>) {
    assert_eq!(pred.len(), target.len());
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.norm_squared() / n;
    (loss, diff * (2.0 / n))
}
