//! Synthetic foundation-model oracle.
//!
//! The world owns a set of class prototypes in the embedding space and a
//! frozen random encoder from the raw sensor space (dimension `P`) into the
//! embedding space (dimension `D`):
//!
//! ```text
//! mix(x) = A·x + g · V·tanh(U'·x)
//! ```
//!
//! `A` is a dense Gaussian `D×P` map. `U' = U·(I − A⁺A)` only sees the part of
//! the input lying in the null space of `A`, so the per-class base inputs
//! `A⁺·(s·prototype)` encode exactly onto their prototypes while sample noise
//! still passes through the nonlinear branch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::embed::{normalize, Embedding, EmbedError, PromptTemplate, TextEmbeddingPool};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::{dot, Scalar};

/// Width of the frozen hidden layer inside the mixing map.
const MIX_HIDDEN: usize = 32;
/// Variance multiplier of the hidden-layer weights (`κ/P`).
const MIX_HIDDEN_GAIN: f64 = 9.0;
/// Weight of the nonlinear branch.
const MIX_NONLINEAR: f64 = 0.25;
/// Norm of `A·base_input` for every class.
const SIGNAL: f64 = 4.0;
/// Pairwise prototype cosine must stay strictly below this.
pub const MAX_PROTOTYPE_COSINE: f64 = 0.8;
const MAX_PROTOTYPE_ATTEMPTS: usize = 10_000;

const CLASS_VOCAB: [&str; 40] = [
    "apple", "bicycle", "book", "bottle", "bowl", "chair", "clock", "cup", "desk", "door",
    "fan", "fork", "guitar", "hat", "kettle", "keyboard", "lamp", "laptop", "mirror", "mouse",
    "mug", "notebook", "pen", "phone", "pillow", "plant", "plate", "printer", "scissors", "shoe",
    "sofa", "speaker", "spoon", "stapler", "table", "teapot", "towel", "umbrella", "vase", "window",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid world configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("raw input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Parameters of a synthetic world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub noise_sigma: f64,
    pub fm_noise_sigma: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            num_classes: 10,
            input_dim: 256,
            embed_dim: crate::embed::DEFAULT_DIM,
            noise_sigma: 0.1,
            fm_noise_sigma: 0.0,
        }
    }
}

/// Unlabeled sensor sample. `true_class` is only read by evaluation code.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: u64,
    pub raw: Vec<T>,
    pub true_class: String,
}

/// Pseudo text embedding and its confidence weight.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel<T> {
    pub class_name: String,
    pub text_embedding: Embedding<T>,
    pub confidence: T,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld<T> {
    config: WorldConfig,
    names: Vec<String>,
    prototypes: Vec<Embedding<T>>,
    base_inputs: Vec<Vec<T>>,
    mix_linear: Matrix<T>,
    mix_hidden: Matrix<T>,
    mix_out: Matrix<T>,
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn gaussian_vec<T: Scalar, R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Vec<T> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::of(z * std)
        })
        .collect()
}

/// Class name for index `i` of a world.
pub fn class_name(i: usize) -> String {
    match CLASS_VOCAB.get(i) {
        Some(n) => (*n).to_owned(),
        None => format!("class_{i:03}"),
    }
}

impl<T: Scalar> SyntheticWorld<T> {
    pub fn new(config: WorldConfig) -> Result<Self, OracleError> {
        let WorldConfig {
            seed,
            num_classes: c,
            input_dim: p,
            embed_dim: d,
            noise_sigma,
            fm_noise_sigma,
        } = config;
        if c < 2 {
            return Err(OracleError::InvalidConfig(format!("need at least 2 classes, got {c}")));
        }
        if d == 0 || p < d {
            return Err(OracleError::InvalidConfig(format!(
                "need input_dim >= embed_dim > 0, got P={p}, D={d}"
            )));
        }
        for (name, v) in [("noise_sigma", noise_sigma), ("fm_noise_sigma", fm_noise_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(OracleError::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);

        let mut prototypes: Vec<Embedding<T>> = Vec::with_capacity(c);
        let mut attempts = 0;
        while prototypes.len() < c {
            attempts += 1;
            if attempts > MAX_PROTOTYPE_ATTEMPTS {
                return Err(OracleError::InvalidConfig(format!(
                    "cannot place {c} separable prototypes in dimension {d}"
                )));
            }
            let cand = normalize(&gaussian_vec::<T, _>(d, 1.0, &mut rng))?;
            let separable = prototypes
                .iter()
                .all(|q| dot(q.as_slice(), cand.as_slice()).as_f64() < MAX_PROTOTYPE_COSINE);
            if separable {
                prototypes.push(cand);
            }
        }

        let mix_linear = Matrix::<T>::gaussian(d, p, (1.0 / p as f64).sqrt(), &mut rng);
        let raw_hidden = Matrix::<T>::gaussian(MIX_HIDDEN, p, (MIX_HIDDEN_GAIN / p as f64).sqrt(), &mut rng);
        let mix_out = Matrix::<T>::gaussian(d, MIX_HIDDEN, (1.0 / MIX_HIDDEN as f64).sqrt(), &mut rng);

        let gram = mix_linear.mul_t(&mix_linear);
        let chol = Cholesky::factor(&gram)
            .ok_or_else(|| OracleError::InvalidConfig("mixing map is rank deficient".into()))?;

        // U' = U − (U·Aᵀ·G⁻¹)·A
        let ua = raw_hidden.mul_t(&mix_linear);
        let mut z = Matrix::<T>::zeros(MIX_HIDDEN, d);
        for r in 0..MIX_HIDDEN {
            let sol = chol.solve(ua.row(r));
            z.row_mut(r).copy_from_slice(&sol);
        }
        let za = z.mul(&mix_linear);
        let mut mix_hidden = raw_hidden;
        for (u, s) in mix_hidden.as_mut_slice().iter_mut().zip(za.as_slice()) {
            *u -= *s;
        }

        let base_inputs = prototypes
            .iter()
            .map(|proto| {
                let target: Vec<T> = proto.as_slice().iter().map(|&v| v * T::of(SIGNAL)).collect();
                mix_linear.matvec_t(&chol.solve(&target))
            })
            .collect();

        Ok(Self {
            config,
            names: (0..c).map(class_name).collect(),
            prototypes,
            base_inputs,
            mix_linear,
            mix_hidden,
            mix_out,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn noise_sigma(&self) -> f64 {
        self.config.noise_sigma
    }

    pub fn class_names(&self) -> &[String] {
        &self.names
    }

    fn class_index(&self, class: &str) -> Result<usize, OracleError> {
        self.names
            .iter()
            .position(|n| n == class)
            .ok_or_else(|| OracleError::UnknownClass(class.to_owned()))
    }

    pub fn prototype(&self, class: &str) -> Result<&Embedding<T>, OracleError> {
        Ok(&self.prototypes[self.class_index(class)?])
    }

    pub fn base_input(&self, class: &str) -> Result<&[T], OracleError> {
        Ok(&self.base_inputs[self.class_index(class)?])
    }

    /// Independent random stream `k` derived from the world seed.
    pub fn rng_stream(&self, k: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(k);
        rng
    }

    /// Draws `base_input(class) + N(0, σ²·I)`.
    pub fn sample_draw<R: Rng + ?Sized>(
        &self,
        class: &str,
        id: u64,
        rng: &mut R,
    ) -> Result<Sample<T>, OracleError> {
        let base = &self.base_inputs[self.class_index(class)?];
        let noise = gaussian_vec::<T, _>(base.len(), self.config.noise_sigma, rng);
        Ok(Sample {
            id,
            raw: base.iter().zip(noise).map(|(&b, n)| b + n).collect(),
            true_class: class.to_owned(),
        })
    }

    /// Draws `n` samples with classes chosen uniformly from `classes`, ids
    /// starting at `first_id`.
    pub fn dataset<R: Rng + ?Sized>(
        &self,
        classes: &[String],
        n: usize,
        first_id: u64,
        rng: &mut R,
    ) -> Result<Vec<Sample<T>>, OracleError> {
        if classes.is_empty() {
            return Err(OracleError::InvalidConfig("no classes to sample from".into()));
        }
        (0..n)
            .map(|i| {
                let c = rng.random_range(0..classes.len());
                self.sample_draw(&classes[c], first_id + i as u64, rng)
            })
            .collect()
    }

    fn mix(&self, raw: &[T]) -> Vec<T> {
        let mut out = self.mix_linear.matvec(raw);
        let hidden: Vec<T> = self.mix_hidden.matvec(raw).into_iter().map(T::tanh).collect();
        let g = T::of(MIX_NONLINEAR);
        for (o, h) in out.iter_mut().zip(self.mix_out.matvec(&hidden)) {
            *o += g * h;
        }
        out
    }

    /// The FM sensor encoder. Encoder imperfection is pseudo-random noise
    /// keyed on the input bits, so the map stays a pure function.
    pub fn fm_encode(&self, raw: &[T]) -> Result<Embedding<T>, OracleError> {
        if raw.len() != self.config.input_dim {
            return Err(OracleError::DimensionMismatch {
                expected: self.config.input_dim,
                got: raw.len(),
            });
        }
        let mut z = self.mix(raw);
        if self.config.fm_noise_sigma > 0.0 {
            let bytes: Vec<u8> = raw.iter().flat_map(|v| v.as_f64().to_le_bytes()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.config.seed, &bytes));
            let noise = gaussian_vec::<T, _>(z.len(), self.config.fm_noise_sigma, &mut rng);
            for (v, n) in z.iter_mut().zip(noise) {
                *v += n;
            }
        }
        Ok(normalize(&z)?)
    }

    /// The FM text encoder: exact prototypes for world classes, a
    /// hash-seeded unit vector for any other name.
    pub fn fm_text_encode(&self, class: &str, prompt: &PromptTemplate) -> Result<Embedding<T>, OracleError> {
        let text = prompt.render(class)?;
        if let Ok(i) = self.class_index(class) {
            return Ok(self.prototypes[i].clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.config.seed, text.as_bytes()));
        Ok(normalize(&gaussian_vec::<T, _>(self.config.embed_dim, 1.0, &mut rng))?)
    }

    /// Text pool holding the given classes in order.
    pub fn text_pool(&self, classes: &[String], prompt: PromptTemplate) -> Result<TextEmbeddingPool<T>, OracleError> {
        let mut pool = TextEmbeddingPool::new(self.config.embed_dim, prompt.clone());
        for c in classes {
            pool.add(c, self.fm_text_encode(c, &prompt)?)?;
        }
        Ok(pool)
    }

    /// Pseudo text embedding plus confidence for a raw sample. Also returns
    /// the FM sensor embedding the label was derived from.
    pub fn knowledge_query_full(
        &self,
        pool: &TextEmbeddingPool<T>,
        raw: &[T],
    ) -> Result<(Embedding<T>, PseudoLabel<T>), OracleError> {
        if pool.is_empty() {
            return Err(EmbedError::EmptyPool.into());
        }
        let e = self.fm_encode(raw)?;
        let m = pool.best_match(&e)?;
        let label = PseudoLabel {
            class_name: pool.name(m.index).to_owned(),
            text_embedding: pool.embedding(m.index).clone(),
            confidence: m.similarity.max(T::zero()),
        };
        Ok((e, label))
    }

    pub fn knowledge_query(&self, pool: &TextEmbeddingPool<T>, raw: &[T]) -> Result<PseudoLabel<T>, OracleError> {
        Ok(self.knowledge_query_full(pool, raw)?.1)
    }

    /// Cloud-side open-set prediction: class and raw similarity.
    pub fn fm_predict(&self, pool: &TextEmbeddingPool<T>, raw: &[T]) -> Result<(String, T), OracleError> {
        if pool.is_empty() {
            return Err(EmbedError::EmptyPool.into());
        }
        let m = pool.best_match(&self.fm_encode(raw)?)?;
        Ok((pool.name(m.index).to_owned(), m.similarity))
    }
}
