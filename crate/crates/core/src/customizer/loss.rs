//! Distillation objectives over already-normalized embeddings. Each function
//! returns the batch loss and `∂L/∂v_i` for every batch member.

use crate::scalar::{dot, Scalar};

fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(T::neg_infinity(), T::max);
    m + xs.map(|x| (x - m).exp()).sum::<T>().ln()
}

/// `(1/bs) Σ_i (1/D) ‖T(x_i) − v_i‖²`
pub(crate) fn vis<T: Scalar>(fm: &[&[T]], v: &[&[T]]) -> (T, Vec<Vec<T>>) {
    let n = T::of(v.len() as f64);
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(v.len());
    for (f, vi) in fm.iter().zip(v) {
        let d = T::of(vi.len() as f64);
        let mut g = Vec::with_capacity(vi.len());
        let mut sq = T::zero();
        for (&a, &b) in f.iter().zip(vi.iter()) {
            let diff = b - a;
            sq += diff * diff;
            g.push(T::of(2.0) * diff / (n * d));
        }
        loss += sq / d;
        grads.push(g);
    }
    (loss / n, grads)
}

/// Confidence-weighted bidirectional contrastive loss between sensor
/// embeddings `v` and pseudo text embeddings `t`, both indexed by batch
/// position.
pub(crate) fn text<T: Scalar>(v: &[&[T]], t: &[&[T]], w: &[T], lambda: T, tau: T) -> (T, Vec<Vec<T>>) {
    let n = v.len();
    let nt = T::of(n as f64);
    let dim = v.first().map_or(0, |x| x.len());
    // logits[i][k] = ⟨v_i, t_k⟩ / τ
    let logits: Vec<Vec<T>> = v.iter().map(|vi| t.iter().map(|tk| dot(vi, tk) / tau).collect()).collect();
    let row_lse: Vec<T> = logits.iter().map(|row| log_sum_exp(row.iter().copied())).collect();
    let col_lse: Vec<T> = (0..n)
        .map(|i| log_sum_exp((0..n).map(|k| logits[k][i])))
        .collect();

    let mut loss = T::zero();
    for i in 0..n {
        let v2t = row_lse[i] - logits[i][i];
        let t2v = col_lse[i] - logits[i][i];
        loss += w[i] * (lambda * v2t + (T::one() - lambda) * t2v);
    }
    loss /= nt;

    let one_minus = T::one() - lambda;
    let mut grads = vec![vec![T::zero(); dim]; n];
    for (j, g) in grads.iter_mut().enumerate() {
        // v→t' term of sample j
        let cj = w[j] * lambda;
        if cj != T::zero() {
            for (k, tk) in t.iter().enumerate() {
                let p = (logits[j][k] - row_lse[j]).exp();
                for (gd, &x) in g.iter_mut().zip(tk.iter()) {
                    *gd += cj * p * x;
                }
            }
        }
        // t'→v terms where v_j appears in the denominator of sample i
        for (i, ti) in t.iter().enumerate() {
            let ci = w[i] * one_minus;
            if ci == T::zero() {
                continue;
            }
            let q = (logits[j][i] - col_lse[i]).exp();
            for (gd, &x) in g.iter_mut().zip(ti.iter()) {
                *gd += ci * q * x;
            }
        }
        // numerators of both directions
        let cself = w[j];
        if cself != T::zero() {
            for (gd, &x) in g.iter_mut().zip(t[j].iter()) {
                *gd -= cself * x;
            }
        }
        let scale = nt * tau;
        for gd in g.iter_mut() {
            *gd /= scale;
        }
    }
    (loss, grads)
}

/// Cross-entropy of `softmax(⟨v_i, p_k⟩/τ)` over the pool against hard
/// targets.
pub(crate) fn hard_ce<T: Scalar>(v: &[&[T]], pool: &[&[T]], targets: &[usize], tau: T) -> (T, Vec<Vec<T>>) {
    let n = T::of(v.len() as f64);
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(v.len());
    for (vi, &y) in v.iter().zip(targets) {
        let logits: Vec<T> = pool.iter().map(|p| dot(vi, p) / tau).collect();
        let lse = log_sum_exp(logits.iter().copied());
        loss += lse - logits[y];
        let mut g = vec![T::zero(); vi.len()];
        for (k, p) in pool.iter().enumerate() {
            let mut c = (logits[k] - lse).exp();
            if k == y {
                c -= T::one();
            }
            for (gd, &x) in g.iter_mut().zip(p.iter()) {
                *gd += c * x / (n * tau);
            }
        }
        grads.push(g);
    }
    (loss / n, grads)
}
