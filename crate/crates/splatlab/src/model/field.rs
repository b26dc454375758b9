//! Time-conditioned displacement field.
//!
//! The field maps `(x, t)` through sinusoidal features and a two-hidden-layer
//! tanh network to a displacement `u` plus the penultimate activation `h`,
//! which is exposed so regularizers can act on the embedding instead of the
//! output. The final layer starts at zero, so a fresh field is the identity
//! deformation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of a [`DeformationField`]: layer widths, activation name and
/// the number of sinusoidal feature octaves per raw input coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    /// World dimension D; the network input is `(x, t)` with D + 1 raw coordinates.
    pub input_dim: usize,
    /// Feature octaves per raw coordinate: sin/cos of `2^j * pi * v` for `j < fourier_features`.
    pub fourier_features: usize,
    pub hidden_width: usize,
    /// Width of the second hidden layer, whose activation is the embedding `h`.
    pub embed_width: usize,
    pub activation: String,
}

impl Default for FieldDescriptor {
    fn default() -> Self {
        Self {
            input_dim: 2,
            fourier_features: 6,
            hidden_width: 32,
            embed_width: 16,
            activation: "tanh".into(),
        }
    }
}

impl FieldDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_width == 0 || self.embed_width == 0 {
            return Err(Error::Config("field layer widths must be positive".into()));
        }
        if self.activation != "tanh" {
            return Err(Error::Config(format!(
                "unsupported activation '{}' (only tanh)",
                self.activation
            )));
        }
        Ok(())
    }

    /// Features per raw coordinate: the raw value plus sin/cos pairs.
    pub fn block_len(&self) -> usize {
        1 + 2 * self.fourier_features
    }

    pub fn feature_dim(&self) -> usize {
        (self.input_dim + 1) * self.block_len()
    }

    pub fn param_count(&self) -> usize {
        let f = self.feature_dim();
        let h = self.hidden_width;
        let e = self.embed_width;
        let d = self.input_dim;
        h * f + h + e * h + e + d * e + d
    }

    fn offsets(&self) -> ParamOffsets {
        let f = self.feature_dim();
        let h = self.hidden_width;
        let e = self.embed_width;
        let d = self.input_dim;
        let w1 = 0;
        let b1 = w1 + h * f;
        let w2 = b1 + h;
        let b2 = w2 + e * h;
        let w3 = b2 + e;
        let b3 = w3 + d * e;
        ParamOffsets { w1, b1, w2, b2, w3, b3 }
    }
}

#[derive(Debug, Clone, Copy)]
struct ParamOffsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

/// Displacements and embeddings for a batch of positions, both row-major.
#[derive(Debug, Clone)]
pub struct FieldEval {
    /// `count x input_dim` displacements.
    pub displacements: Vec<f64>,
    /// `count x embed_width` embeddings (penultimate activations).
    pub embeddings: Vec<f64>,
    pub count: usize,
}

impl FieldEval {
    pub fn zeros(count: usize, dim: usize, embed: usize) -> Self {
        Self {
            displacements: vec![0.0; count * dim],
            embeddings: vec![0.0; count * embed],
            count,
        }
    }
}

/// Saved activations from a forward pass, consumed by [`DeformationField::backward`].
#[derive(Debug, Clone)]
pub struct FieldTape {
    features: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    count: usize,
}

/// Gradients produced by the backward pass.
#[derive(Debug, Clone)]
pub struct FieldGrads {
    /// Flat gradient aligned with [`DeformationField::params`].
    pub params: Vec<f64>,
    /// Gradient with respect to the input positions, `count x input_dim`.
    pub positions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    descriptor: FieldDescriptor,
    params: Vec<f64>,
}

impl DeformationField {
    /// Fresh field: Xavier-uniform hidden layers, zero final layer so that
    /// `u(x, t) = 0` everywhere at initialization.
    pub fn new<R: Rng + ?Sized>(descriptor: FieldDescriptor, rng: &mut R) -> Result<Self> {
        descriptor.validate()?;
        let off = descriptor.offsets();
        let mut params = vec![0.0; descriptor.param_count()];
        let f = descriptor.feature_dim();
        let h = descriptor.hidden_width;
        let e = descriptor.embed_width;
        let a1 = (6.0 / (f + h) as f64).sqrt();
        for p in &mut params[off.w1..off.b1] {
            *p = rng.gen_range(-a1..a1);
        }
        let a2 = (6.0 / (h + e) as f64).sqrt();
        for p in &mut params[off.w2..off.b2] {
            *p = rng.gen_range(-a2..a2);
        }
        // w3, b3 stay zero
        Ok(Self { descriptor, params })
    }

    pub fn from_params(descriptor: FieldDescriptor, params: Vec<f64>) -> Result<Self> {
        descriptor.validate()?;
        if params.len() != descriptor.param_count() {
            return Err(Error::Contract(format!(
                "expected {} field parameters, got {}",
                descriptor.param_count(),
                params.len()
            )));
        }
        Ok(Self { descriptor, params })
    }

    pub fn descriptor(&self) -> &FieldDescriptor {
        &self.descriptor
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_inputs(&self, positions: &[f64], t: f64) -> Result<usize> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::CorruptModel("non-finite field parameter".into()));
        }
        let d = self.descriptor.input_dim;
        if positions.len() % d != 0 {
            return Err(Error::Contract(format!(
                "position array length {} is not a multiple of dim {d}",
                positions.len()
            )));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::Contract("non-finite position".into()));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Contract(format!("time {t} outside [0, 1]")));
        }
        Ok(positions.len() / d)
    }

    /// Evaluate `(u, h)` for a batch of positions at time `t`.
    pub fn eval(&self, positions: &[f64], t: f64) -> Result<FieldEval> {
        self.eval_with_tape(positions, t).map(|(e, _)| e)
    }

    /// Evaluate and keep the activations needed for [`Self::backward`].
    pub fn eval_with_tape(&self, positions: &[f64], t: f64) -> Result<(FieldEval, FieldTape)> {
        let count = self.check_inputs(positions, t)?;
        let desc = &self.descriptor;
        let off = desc.offsets();
        let d = desc.input_dim;
        let fdim = desc.feature_dim();
        let h = desc.hidden_width;
        let e = desc.embed_width;

        let mut features = vec![0.0; count * fdim];
        let mut a1 = vec![0.0; count * h];
        let mut a2 = vec![0.0; count * e];
        let mut u = vec![0.0; count * d];

        for n in 0..count {
            let f = &mut features[n * fdim..(n + 1) * fdim];
            encode_features(desc, &positions[n * d..(n + 1) * d], t, f);

            let z1 = &mut a1[n * h..(n + 1) * h];
            for (i, z) in z1.iter_mut().enumerate() {
                let row = &self.params[off.w1 + i * fdim..off.w1 + (i + 1) * fdim];
                let mut acc = self.params[off.b1 + i];
                for (w, x) in row.iter().zip(f.iter()) {
                    acc += w * x;
                }
                *z = acc.tanh();
            }

            let z2 = &mut a2[n * e..(n + 1) * e];
            for (i, z) in z2.iter_mut().enumerate() {
                let row = &self.params[off.w2 + i * h..off.w2 + (i + 1) * h];
                let mut acc = self.params[off.b2 + i];
                for (w, x) in row.iter().zip(a1[n * h..(n + 1) * h].iter()) {
                    acc += w * x;
                }
                *z = acc.tanh();
            }

            let un = &mut u[n * d..(n + 1) * d];
            for (i, out) in un.iter_mut().enumerate() {
                let row = &self.params[off.w3 + i * e..off.w3 + (i + 1) * e];
                let mut acc = self.params[off.b3 + i];
                for (w, x) in row.iter().zip(a2[n * e..(n + 1) * e].iter()) {
                    acc += w * x;
                }
                *out = acc;
            }
        }

        let eval = FieldEval {
            displacements: u,
            embeddings: a2.clone(),
            count,
        };
        let tape = FieldTape {
            features,
            a1,
            a2,
            count,
        };
        Ok((eval, tape))
    }

    /// Backpropagate `d_u` (and optionally `d_h`) through the network.
    ///
    /// Returns gradients for every parameter and for the input positions; the
    /// position gradient is the vector-Jacobian product through the feature
    /// encoding, which callers may ignore when positions are to be treated as
    /// constants.
    pub fn backward(&self, tape: &FieldTape, d_u: &[f64], d_h: Option<&[f64]>) -> FieldGrads {
        let desc = &self.descriptor;
        let off = desc.offsets();
        let d = desc.input_dim;
        let fdim = desc.feature_dim();
        let h = desc.hidden_width;
        let e = desc.embed_width;
        let count = tape.count;
        assert_eq!(d_u.len(), count * d, "d_u length mismatch");
        if let Some(dh) = d_h {
            assert_eq!(dh.len(), count * e, "d_h length mismatch");
        }

        let mut gp = vec![0.0; self.params.len()];
        let mut gx = vec![0.0; count * d];
        let mut da2 = vec![0.0; e];
        let mut dz2 = vec![0.0; e];
        let mut da1 = vec![0.0; h];
        let mut dz1 = vec![0.0; h];
        let mut df = vec![0.0; fdim];

        for n in 0..count {
            let du = &d_u[n * d..(n + 1) * d];
            let a2 = &tape.a2[n * e..(n + 1) * e];
            let a1 = &tape.a1[n * h..(n + 1) * h];
            let f = &tape.features[n * fdim..(n + 1) * fdim];

            for (i, v) in da2.iter_mut().enumerate() {
                *v = match d_h {
                    Some(dh) => dh[n * e + i],
                    None => 0.0,
                };
            }
            for i in 0..d {
                let g = du[i];
                if g == 0.0 {
                    continue;
                }
                gp[off.b3 + i] += g;
                let row = &self.params[off.w3 + i * e..off.w3 + (i + 1) * e];
                for j in 0..e {
                    gp[off.w3 + i * e + j] += g * a2[j];
                    da2[j] += g * row[j];
                }
            }

            for j in 0..e {
                dz2[j] = da2[j] * (1.0 - a2[j] * a2[j]);
            }
            da1.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..e {
                let g = dz2[i];
                if g == 0.0 {
                    continue;
                }
                gp[off.b2 + i] += g;
                let row = &self.params[off.w2 + i * h..off.w2 + (i + 1) * h];
                for j in 0..h {
                    gp[off.w2 + i * h + j] += g * a1[j];
                    da1[j] += g * row[j];
                }
            }

            for j in 0..h {
                dz1[j] = da1[j] * (1.0 - a1[j] * a1[j]);
            }
            df.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..h {
                let g = dz1[i];
                if g == 0.0 {
                    continue;
                }
                gp[off.b1 + i] += g;
                let row = &self.params[off.w1 + i * fdim..off.w1 + (i + 1) * fdim];
                for j in 0..fdim {
                    gp[off.w1 + i * fdim + j] += g * f[j];
                    df[j] += g * row[j];
                }
            }

            // Feature Jacobian back to the spatial coordinates (the t block is dropped).
            let block = desc.block_len();
            for c in 0..d {
                let fb = &f[c * block..(c + 1) * block];
                let db = &df[c * block..(c + 1) * block];
                let mut acc = db[0];
                for j in 0..desc.fourier_features {
                    let omega = std::f64::consts::PI * (1u64 << j) as f64;
                    let sin_v = fb[1 + 2 * j];
                    let cos_v = fb[2 + 2 * j];
                    acc += omega * (cos_v * db[1 + 2 * j] - sin_v * db[2 + 2 * j]);
                }
                gx[n * d + c] = acc;
            }
        }

        FieldGrads {
            params: gp,
            positions: gx,
        }
    }
}

fn encode_features(desc: &FieldDescriptor, x: &[f64], t: f64, out: &mut [f64]) {
    let block = desc.block_len();
    for (c, &v) in x.iter().chain(std::iter::once(&t)).enumerate() {
        let b = &mut out[c * block..(c + 1) * block];
        b[0] = v;
        for j in 0..desc.fourier_features {
            let omega = std::f64::consts::PI * (1u64 << j) as f64;
            let (s, co) = (omega * v).sin_cos();
            b[1 + 2 * j] = s;
            b[2 + 2 * j] = co;
        }
    }
}
