//! Feed-forward detector: rectified hidden layers produce the feature vector,
//! a scalar logistic head produces the forgery probability.
//!
//! All parameters live in one flat buffer. Each layer stores its weight block
//! (row-major, `out x in`) followed by its bias; the head comes last. The same
//! layout is used for gradients and checkpoints.

use std::io::{Read, Write};
use std::marker::PhantomData;
use std::path::Path;

use crate::error::{contract, Error, Result};
use crate::numerics::linalg::{axpy, dot, matvec_into, matvec_t_acc, outer_acc};
use crate::numerics::Rng;

/// Clamp applied to the head output so that `ln(y_p)` and `ln(1 - y_p)` stay finite.
pub const PROB_EPS: f64 = 1e-7;

const CHECKPOINT_MAGIC: &[u8; 8] = b"DARWMLP1";

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

/// Model weights. `arch[0]` is the input width, the remaining entries are hidden
/// widths; the last hidden layer is the feature layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Vec<usize>,
    slots: Vec<Slot>,
    params: Vec<f64>,
}

/// Cached activations of one forward pass. Borrows the model, so the weights
/// cannot change while records are alive.
#[derive(Debug, Clone)]
pub struct ForwardRecord<'m> {
    /// `acts[0]` is the input, `acts[l + 1]` the output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    logit: f64,
    y_p: f64,
    clamped: bool,
    _model: PhantomData<&'m Mlp>,
}

impl ForwardRecord<'_> {
    pub fn features(&self) -> &[f64] {
        self.acts.last().expect("at least one hidden layer")
    }

    pub fn y_p(&self) -> f64 {
        self.y_p
    }

    pub fn logit(&self) -> f64 {
        self.logit
    }

    /// Hidden pre-activations, one vector per layer.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

/// Gradient of the scalar loss with respect to one sample's outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Upstream {
    pub d_yp: f64,
    pub d_features: Option<Vec<f64>>,
}

impl Upstream {
    pub fn zero() -> Self {
        Self::default()
    }
}

fn layout(arch: &[usize]) -> (Vec<Slot>, usize) {
    let mut slots = Vec::with_capacity(arch.len());
    let mut off = 0;
    let dims = arch.iter().copied().chain(std::iter::once(1));
    let pairs: Vec<(usize, usize)> = arch.iter().copied().zip(dims.skip(1)).collect();
    for (cols, rows) in pairs {
        slots.push(Slot {
            w: off,
            b: off + rows * cols,
            rows,
            cols,
        });
        off += rows * cols + rows;
    }
    (slots, off)
}

fn validate_arch(arch: &[usize]) -> Result<()> {
    if arch.len() < 2 {
        return Err(contract(
            "architecture needs an input width and at least one hidden width",
        ));
    }
    if arch.contains(&0) {
        return Err(contract("layer widths must be at least 1"));
    }
    Ok(())
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// Weights ~ U(-scale/sqrt(fan_in), scale/sqrt(fan_in)), biases zero.
    pub fn new(arch: &[usize], rng: &mut Rng, scale: f64) -> Result<Self> {
        validate_arch(arch)?;
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(contract("init scale must be finite and non-negative"));
        }
        let (slots, n) = layout(arch);
        let mut params = vec![0.0; n];
        for s in &slots {
            let half = scale / (s.cols as f64).sqrt();
            for p in &mut params[s.w..s.b] {
                *p = if half > 0.0 {
                    rng.uniform_range(-half, half)
                } else {
                    0.0
                };
            }
        }
        Ok(Self {
            arch: arch.to_vec(),
            slots,
            params,
        })
    }

    pub fn from_params(arch: &[usize], params: Vec<f64>) -> Result<Self> {
        validate_arch(arch)?;
        let (slots, n) = layout(arch);
        if params.len() != n {
            return Err(contract(format!(
                "architecture {arch:?} needs {n} parameters, got {}",
                params.len()
            )));
        }
        if let Some(index) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numerical {
                index,
                message: "non-finite parameter".into(),
            });
        }
        Ok(Self {
            arch: arch.to_vec(),
            slots,
            params,
        })
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.arch.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn hidden(&self) -> &[Slot] {
        &self.slots[..self.slots.len() - 1]
    }

    fn head(&self) -> Slot {
        *self.slots.last().unwrap()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(contract(format!(
                "input of length {} for a model with input width {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardRecord<'_>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.slots.len());
        let mut pre = Vec::with_capacity(self.slots.len() - 1);
        acts.push(x.to_vec());
        for s in self.hidden() {
            let mut z = vec![0.0; s.rows];
            matvec_into(
                &self.params[s.w..s.b],
                s.rows,
                s.cols,
                acts.last().unwrap(),
                &mut z,
            );
            axpy(1.0, &self.params[s.b..s.b + s.rows], &mut z);
            let a = z.iter().map(|v| v.max(0.0)).collect();
            pre.push(z);
            acts.push(a);
        }
        let h = self.head();
        let logit = dot(&self.params[h.w..h.b], acts.last().unwrap()) + self.params[h.b];
        let raw = logistic(logit);
        let y_p = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
        Ok(ForwardRecord {
            acts,
            pre,
            logit,
            y_p,
            clamped: y_p != raw,
            _model: PhantomData,
        })
    }

    /// Forgery probability without caching intermediates.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.y_p)
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut rec = self.forward(x)?;
        Ok(rec.acts.pop().unwrap())
    }

    /// Sum over samples of the chain rule from `upstream` back to every parameter.
    /// Any averaging belongs in the upstream values.
    pub fn backward(&self, records: &[ForwardRecord<'_>], upstream: &[Upstream]) -> Result<Vec<f64>> {
        if records.len() != upstream.len() {
            return Err(contract(format!(
                "{} records but {} upstream gradients",
                records.len(),
                upstream.len()
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        let head = self.head();
        let fdim = self.feature_dim();
        for (rec, up) in records.iter().zip(upstream) {
            if rec.acts.len() != self.slots.len() {
                return Err(contract("record produced by a different architecture"));
            }
            let mut dh = vec![0.0; fdim];
            if let Some(df) = &up.d_features {
                if df.len() != fdim {
                    return Err(contract(format!(
                        "feature gradient of length {} for feature width {fdim}",
                        df.len()
                    )));
                }
                dh.copy_from_slice(df);
            }
            let dz = if rec.clamped {
                0.0
            } else {
                up.d_yp * rec.y_p * (1.0 - rec.y_p)
            };
            if dz != 0.0 {
                let h = rec.features();
                axpy(dz, h, &mut grad[head.w..head.b]);
                grad[head.b] += dz;
                axpy(dz, &self.params[head.w..head.b], &mut dh);
            }

            for (l, s) in self.hidden().iter().enumerate().rev() {
                let dpre: Vec<f64> = dh
                    .iter()
                    .zip(&rec.pre[l])
                    .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                    .collect();
                if dpre.iter().all(|g| *g == 0.0) {
                    break;
                }
                outer_acc(&dpre, &rec.acts[l], &mut grad[s.w..s.b]);
                axpy(1.0, &dpre, &mut grad[s.b..s.b + s.rows]);
                if l > 0 {
                    let mut next = vec![0.0; s.cols];
                    matvec_t_acc(&self.params[s.w..s.b], s.rows, s.cols, &dpre, &mut next);
                    dh = next;
                }
            }
        }
        Ok(grad)
    }

    /// Binary checkpoint: magic `DARWMLP1`, u64 layer count, u64 widths, u64
    /// parameter count, then every parameter as little-endian f64 in layout order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.arch.len() as u64).to_le_bytes())?;
        for a in &self.arch {
            w.write_all(&(*a as u64).to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse {
                row: 0,
                message: "not a model checkpoint".into(),
            });
        }
        let mut word = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n_layers = read_u64(&mut r)? as usize;
        if n_layers > 1024 {
            return Err(contract("implausible layer count in checkpoint"));
        }
        let arch = (0..n_layers)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        validate_arch(&arch)?;
        let n = read_u64(&mut r)? as usize;
        if n != layout(&arch).1 {
            return Err(contract("parameter count does not match architecture"));
        }
        let params = (0..n)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(&arch, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_checkpoint(bytes.as_slice())
    }
}
