//! Hash head, sign/tanh binarization, the additive-margin hypersphere loss,
//! the joint objective and the packed code format.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, log_sum_exp, norm, Tensor};

pub const CODES_MAGIC: &[u8; 4] = b"CMHC";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HashInput {
    /// The globally pooled feature `g(x)`.
    Pooled,
    /// The whole feature map, flattened.
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HashMode {
    Train,
    Infer,
}

/// An `l`-bit code with entries exactly `-1` or `+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode(Vec<i8>);

impl HashCode {
    pub fn new(bits: Vec<i8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b != 1 && b != -1) {
            return Err(Error::InvalidArgument(format!("hash code entry {b} is not +-1")));
        }
        Ok(Self(bits))
    }

    /// `sign(z)` with `sign(0) = +1`.
    pub fn from_signs(z: &[f64]) -> Self {
        Self(z.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect())
    }

    pub fn bits(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HashOutput {
    Relaxed(Vec<f64>),
    Code(HashCode),
}

/// Fully-connected hash layer `z = W x + b`, `W: l x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashHead {
    pub weight: Tensor,
    pub bias: Tensor,
    pub input: HashInput,
}

impl HashHead {
    pub fn new<R: Rng>(input_dim: usize, bits: usize, input: HashInput, rng: &mut R) -> Result<Self> {
        if bits == 0 || input_dim == 0 {
            return Err(Error::InvalidArgument("hash head needs >= 1 bit and input".into()));
        }
        let std = (1.0 / input_dim as f64).sqrt();
        let mut weight = Tensor::zeros(&[bits, input_dim]);
        for v in weight.data_mut() {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(Self {
            weight,
            bias: Tensor::zeros(&[bits]),
            input,
        })
    }

    pub fn bits(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "hash head expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(self
            .weight
            .iter_rows()
            .zip(self.bias.data())
            .map(|(w, b)| dot(w, x) + b)
            .collect())
    }

    /// `tanh(z)` in training mode, `sign(z)` at inference.
    pub fn forward(&self, x: &[f64], mode: HashMode) -> Result<HashOutput> {
        let z = self.pre_activation(x)?;
        Ok(match mode {
            HashMode::Train => HashOutput::Relaxed(z.iter().map(|v| v.tanh()).collect()),
            HashMode::Infer => HashOutput::Code(HashCode::from_signs(&z)),
        })
    }

    /// Given the relaxed code `tanh(z)` and its gradient, accumulates
    /// parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&self, x: &[f64], relaxed: &[f64], grad_code: &[f64], grads: &mut HashHead) -> Vec<f64> {
        let mut grad_x = vec![0.0; self.input_dim()];
        for (bit, (&t, &gc)) in relaxed.iter().zip(grad_code).enumerate() {
            let dz = gc * (1.0 - t * t);
            if dz == 0.0 {
                continue;
            }
            grads.bias.data_mut()[bit] += dz;
            for (gw, &xv) in grads.weight.row_mut(bit).iter_mut().zip(x) {
                *gw += dz * xv;
            }
            for (gx, &w) in grad_x.iter_mut().zip(self.weight.row(bit)) {
                *gx += dz * w;
            }
        }
        grad_x
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
            input: self.input,
        }
    }
}

/// Additive angular margin `m`, scale `s` and unit-norm class centers (`numSeen x l`).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginConfig {
    pub margin: f64,
    pub scale: f64,
    pub centers: Tensor,
}

impl MarginConfig {
    pub fn new<R: Rng>(margin: f64, scale: f64, classes: usize, bits: usize, rng: &mut R) -> Result<Self> {
        if !(margin >= 0.0) || !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "margin must be >= 0 and scale > 0 (got m={margin}, s={scale})"
            )));
        }
        let mut centers = Tensor::zeros(&[classes, bits]);
        for v in centers.data_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        let mut cfg = Self { margin, scale, centers };
        cfg.normalize_centers();
        Ok(cfg)
    }

    pub fn normalize_centers(&mut self) {
        for c in 0..self.centers.rows() {
            let row = self.centers.row_mut(c);
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
}

pub fn hypersphere_loss(codes: &Tensor, labels: &[usize], cfg: &MarginConfig) -> Result<f64> {
    Ok(hypersphere_loss_grad(codes, labels, cfg)?.0)
}

/// Additive-margin cosine softmax over normalized codes, averaged over samples.
/// Returns the loss and gradients w.r.t. the codes and the centers.
pub fn hypersphere_loss_grad(codes: &Tensor, labels: &[usize], cfg: &MarginConfig) -> Result<(f64, Tensor, Tensor)> {
    if codes.rows() != labels.len() {
        return Err(Error::Shape(format!("{} codes for {} labels", codes.rows(), labels.len())));
    }
    if codes.rows() > 0 && codes.cols() != cfg.centers.cols() {
        return Err(Error::Shape(format!(
            "codes have {} bits, centers {}",
            codes.cols(),
            cfg.centers.cols()
        )));
    }
    let mut grad_codes = codes.zeros_like();
    let mut grad_centers = cfg.centers.zeros_like();
    if codes.rows() == 0 {
        return Ok((0.0, grad_codes, grad_centers));
    }
    let n = codes.rows() as f64;
    let classes = cfg.centers.rows();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidArgument(format!("label {y} outside {classes} seen classes")));
        }
        let code = codes.row(i);
        let len = norm(code);
        if len == 0.0 {
            return Err(Error::InvalidArgument(format!("code {i} has zero norm")));
        }
        let unit: Vec<f64> = code.iter().map(|v| v / len).collect();
        let cos: Vec<f64> = cfg.centers.iter_rows().map(|w| dot(&unit, w)).collect();
        let logits: Vec<f64> = cos
            .iter()
            .enumerate()
            .map(|(c, &v)| cfg.scale * if c == y { v - cfg.margin } else { v })
            .collect();
        let lse = log_sum_exp(logits.iter().copied());
        total += lse - logits[y];

        let mut grad_unit = vec![0.0; unit.len()];
        for (c, &z) in logits.iter().enumerate() {
            let p = (z - lse).exp() - if c == y { 1.0 } else { 0.0 };
            let dcos = cfg.scale * p / n;
            for ((gu, gw), (&w, &u)) in grad_unit
                .iter_mut()
                .zip(grad_centers.row_mut(c))
                .zip(cfg.centers.row(c).iter().zip(&unit))
            {
                *gu += dcos * w;
                *gw += dcos * u;
            }
        }
        // d(x/|x|)/dx = (I - u u^T) / |x|
        let radial = dot(&grad_unit, &unit);
        for ((g, &gu), &u) in grad_codes.row_mut(i).iter_mut().zip(&grad_unit).zip(&unit) {
            *g = (gu - radial * u) / len;
        }
    }
    Ok((total / n, grad_codes, grad_centers))
}

/// Loss weights in the order pointwise, pairwise, classwise, hash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights(pub [f64; 4]);

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights([10.0, 1.0, 10.0, 1.0])
    }
}

/// `sum_i lambda_i L_i`.
pub fn total_loss(losses: [f64; 4], weights: LossWeights) -> f64 {
    losses.iter().zip(weights.0).map(|(l, w)| w * l).sum()
}

fn bytes_per_code(bits: usize) -> usize {
    bits.div_ceil(8)
}

/// `CMHC`, `u32` count, `u32` bits, then `ceil(bits/8)` bytes per code with
/// bit `j % 8` of byte `j / 8` set when element `j` is `+1`.
pub fn pack_codes(codes: &[HashCode]) -> Result<Vec<u8>> {
    let bits = codes.first().map(HashCode::len).unwrap_or(0);
    pack_codes_with_bits(codes, bits)
}

/// Like [`pack_codes`], with an explicit bit width (needed for an empty list).
pub fn pack_codes_with_bits(codes: &[HashCode], bits: usize) -> Result<Vec<u8>> {
    if let Some((i, c)) = codes.iter().enumerate().find(|(_, c)| c.len() != bits) {
        return Err(Error::Shape(format!("code {i} has {} bits, expected {bits}", c.len())));
    }
    let per = bytes_per_code(bits);
    let mut out = Vec::with_capacity(12 + per * codes.len());
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&(codes.len() as u32).to_le_bytes());
    out.extend_from_slice(&(bits as u32).to_le_bytes());
    for code in codes {
        let mut bytes = vec![0u8; per];
        for (j, &b) in code.bits().iter().enumerate() {
            if b == 1 {
                bytes[j / 8] |= 1 << (j % 8);
            }
        }
        out.extend_from_slice(&bytes);
    }
    Ok(out)
}

/// Inverse of [`pack_codes`]; returns the codes and the bit width.
pub fn unpack_codes(buf: &[u8]) -> Result<(Vec<HashCode>, usize)> {
    if buf.len() < 12 || &buf[..4] != CODES_MAGIC {
        return Err(Error::Format("packed codes: missing CMHC header".into()));
    }
    let count = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let bits = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let per = bytes_per_code(bits);
    if buf.len() != 12 + per * count {
        return Err(Error::Format(format!(
            "packed codes: {count} x {bits}-bit codes need {} payload bytes, found {}",
            per * count,
            buf.len() - 12
        )));
    }
    let codes = buf[12..]
        .chunks(per.max(1))
        .take(count)
        .map(|bytes| HashCode((0..bits).map(|j| if bytes[j / 8] >> (j % 8) & 1 == 1 { 1 } else { -1 }).collect()))
        .collect();
    Ok((codes, bits))
}
