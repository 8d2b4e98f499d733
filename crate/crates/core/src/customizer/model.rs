use rand::Rng;

use crate::embed::{normalize, Embedding};
use crate::linalg::Matrix;
use crate::scalar::{dot, Scalar};
use crate::wire::{put_str16, Reader};

use super::CustomizerError;

/// On-edge model: `normalize(W2 · tanh(W1·x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallModel<T> {
    arch_id: String,
    w1: Matrix<T>,
    b1: Vec<T>,
    w2: Matrix<T>,
    b2: Vec<T>,
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct Forward<T> {
    pub hidden: Vec<T>,
    pub pre_norm: T,
    pub embedding: Embedding<T>,
}

/// Gradient with the same layout as [`SmallModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &SmallModel<T>) -> Self {
        Self {
            w1: Matrix::zeros(model.w1.rows(), model.w1.cols()),
            b1: vec![T::zero(); model.b1.len()],
            w2: Matrix::zeros(model.w2.rows(), model.w2.cols()),
            b2: vec![T::zero(); model.b2.len()],
        }
    }

    /// Parameters flattened in checkpoint order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len());
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn max_abs(&self) -> T {
        self.to_flat().into_iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T: Scalar> SmallModel<T> {
    /// Fresh model with `W1 ~ N(0, 1/P)`, `W2 ~ N(0, 1/H)` and zero biases.
    pub fn new<R: Rng + ?Sized>(
        arch_id: impl Into<String>,
        input_dim: usize,
        hidden: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Self {
        assert!(input_dim > 0 && hidden > 0 && embed_dim > 0, "model dimensions must be positive");
        Self {
            arch_id: arch_id.into(),
            w1: Matrix::gaussian(hidden, input_dim, (1.0 / input_dim as f64).sqrt(), rng),
            b1: vec![T::zero(); hidden],
            w2: Matrix::gaussian(embed_dim, hidden, (1.0 / hidden as f64).sqrt(), rng),
            b2: vec![T::zero(); embed_dim],
        }
    }

    pub fn from_parts(
        arch_id: impl Into<String>,
        w1: Matrix<T>,
        b1: Vec<T>,
        w2: Matrix<T>,
        b2: Vec<T>,
    ) -> Result<Self, CustomizerError> {
        let (h, d) = (w1.rows(), w2.rows());
        if b1.len() != h || w2.cols() != h || b2.len() != d || w1.cols() == 0 || h == 0 || d == 0 {
            return Err(CustomizerError::InvalidConfig("inconsistent parameter shapes".into()));
        }
        Ok(Self {
            arch_id: arch_id.into(),
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn arch_id(&self) -> &str {
        &self.arch_id
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn num_params(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    pub(crate) fn forward(&self, raw: &[T]) -> Result<Forward<T>, CustomizerError> {
        if raw.len() != self.input_dim() {
            return Err(CustomizerError::DimensionMismatch {
                expected: self.input_dim(),
                got: raw.len(),
            });
        }
        let hidden: Vec<T> = self
            .w1
            .matvec(raw)
            .into_iter()
            .zip(&self.b1)
            .map(|(a, &b)| (a + b).tanh())
            .collect();
        let pre: Vec<T> = self.w2.matvec(&hidden).into_iter().zip(&self.b2).map(|(a, &b)| a + b).collect();
        let pre_norm = dot(&pre, &pre).sqrt();
        let embedding = normalize(&pre)?;
        Ok(Forward {
            hidden,
            pre_norm,
            embedding,
        })
    }

    /// Unit-norm embedding of a raw sample.
    pub fn embed(&self, raw: &[T]) -> Result<Embedding<T>, CustomizerError> {
        Ok(self.forward(raw)?.embedding)
    }

    /// Accumulates the parameter gradient of one sample given `∂L/∂v` at the
    /// normalized output.
    pub(crate) fn backprop(&self, raw: &[T], fwd: &Forward<T>, grad_v: &[T], acc: &mut Gradients<T>) {
        let v = fwd.embedding.as_slice();
        let radial = dot(grad_v, v);
        let grad_pre: Vec<T> = grad_v
            .iter()
            .zip(v)
            .map(|(&g, &vi)| (g - radial * vi) / fwd.pre_norm)
            .collect();
        for (r, &g) in grad_pre.iter().enumerate() {
            acc.b2[r] += g;
            for (a, &h) in acc.w2.row_mut(r).iter_mut().zip(&fwd.hidden) {
                *a += g * h;
            }
        }
        let grad_hidden = self.w2.matvec_t(&grad_pre);
        for (j, (&gh, &h)) in grad_hidden.iter().zip(&fwd.hidden).enumerate() {
            let ga = gh * (T::one() - h * h);
            if ga == T::zero() {
                continue;
            }
            acc.b1[j] += ga;
            for (a, &x) in acc.w1.row_mut(j).iter_mut().zip(raw) {
                *a += ga * x;
            }
        }
    }

    /// `θ ← θ − lr·g`
    pub fn apply(&mut self, grad: &Gradients<T>, lr: T) {
        let step = |p: &mut [T], g: &[T]| {
            for (p, &g) in p.iter_mut().zip(g) {
                *p -= lr * g;
            }
        };
        step(self.w1.as_mut_slice(), grad.w1.as_slice());
        step(&mut self.b1, &grad.b1);
        step(self.w2.as_mut_slice(), grad.w2.as_slice());
        step(&mut self.b2, &grad.b2);
    }

    /// Parameters flattened in checkpoint order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params());
        let (a, rest) = flat.split_at(self.w1.as_slice().len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.as_slice().len());
        self.w1.as_mut_slice().copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.as_mut_slice().copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    /// Checkpoint: `arch_id (u16 len + UTF-8) | P | H | D (u32 each)`, then
    /// W1, b1, W2, b2 as row-major little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.arch_id.len() + 12 + 4 * self.num_params());
        put_str16(&mut out, &self.arch_id);
        for n in [self.input_dim(), self.hidden_dim(), self.embed_dim()] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in self.to_flat() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CustomizerError> {
        let bad = |e: crate::wire::ReadError| CustomizerError::Checkpoint(e.to_string());
        let mut cur = Reader::new(bytes);
        let arch_id = cur.str16().map_err(bad)?.to_owned();
        let p = cur.u32().map_err(bad)? as usize;
        let h = cur.u32().map_err(bad)? as usize;
        let d = cur.u32().map_err(bad)? as usize;
        if p == 0 || h == 0 || d == 0 {
            return Err(CustomizerError::Checkpoint("zero dimension".into()));
        }
        let n = h * p + h + d * h + d;
        if cur.remaining() != 4 * n {
            return Err(CustomizerError::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                4 * n,
                cur.remaining()
            )));
        }
        let mut read = |k: usize| -> Result<Vec<T>, CustomizerError> {
            (0..k).map(|_| Ok(T::from_wire(cur.f32().map_err(bad)?))).collect()
        };
        let w1 = Matrix::from_vec(h, p, read(h * p)?);
        let b1 = read(h)?;
        let w2 = Matrix::from_vec(d, h, read(d * h)?);
        let b2 = read(d)?;
        let model = Self::from_parts(arch_id, w1, b1, w2, b2)?;
        if !model.is_finite() {
            return Err(CustomizerError::Checkpoint("non-finite parameter".into()));
        }
        Ok(model)
    }
}
