//! The attention-feature (AF) module: SNR-conditioned channel-wise soft attention.
//!
//! Given features `F` (`h x w x c`) and the feedback SNR `mu` in dB:
//!
//! 1. context extraction: `I = [mu, mean(F_1), ..., mean(F_c)]`
//! 2. factor prediction: `S = sigmoid(W2^T relu(W1^T I + b1) + b2)`, `S` in `(0, 1)^c`
//! 3. recalibration: `F'_i = S_i * F_i`
//!
//! `W1` is `(c + 1) x m` and `W2` is `m x c`, both row-major.

use std::ops::Deref;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Param, Scalar};

/// `[mu, I_1, ..., I_c]`, SNR first.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector<T>(Vec<T>);

impl<T: Scalar> ContextVector<T> {
    pub fn snr_db(&self) -> T {
        self.0[0]
    }

    pub fn pooled(&self) -> &[T] {
        &self.0[1..]
    }
}

impl<T> Deref for ContextVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Per-channel factors produced by the factor-prediction network, all in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFactors<T>(Vec<T>);

impl<T> ScalingFactors<T> {
    pub fn into_vec(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for ScalingFactors<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Weights of one factor-prediction network.
#[derive(Debug, Clone, PartialEq)]
pub struct AfParams<T> {
    pub w1: Param<T>,
    pub b1: Param<T>,
    pub w2: Param<T>,
    pub b2: Param<T>,
}

impl<T: Scalar> AfParams<T> {
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        Self {
            w1: Param::zeros(&[channels + 1, hidden]),
            b1: Param::zeros(&[hidden]),
            w2: Param::zeros(&[hidden, channels]),
            b2: Param::zeros(&[channels]),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(channels: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(channels, hidden);
        glorot_uniform(&mut p.w1.data, channels + 1, hidden, rng);
        glorot_uniform(&mut p.w2.data, hidden, channels, rng);
        p
    }

    pub fn channels(&self) -> usize {
        self.b2.len()
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels(), self.hidden())
    }

    pub(crate) fn params(&self) -> [(&'static str, &Param<T>); 4] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> [(&'static str, &mut Param<T>); 4] {
        [
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

pub(crate) fn glorot_uniform<T: Scalar>(
    data: &mut [T],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in data {
        *v = T::from_f64_lossy(rng.random_range(-limit..limit));
    }
}

/// Logistic function clamped into the open interval `(0, 1)` for the element type.
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    let hi = T::one() - T::epsilon() / T::from_f64_lossy(2.0);
    if s.is_nan() {
        return s;
    }
    s.max(T::min_positive_value()).min(hi)
}

/// Spatial mean of each channel.
pub fn global_average_pool<T: Scalar>(features: &FeatureMap<T>) -> Vec<T> {
    let n = T::from_usize(features.plane_len()).unwrap();
    (0..features.channels())
        .map(|c| features.plane(c).iter().copied().sum::<T>() / n)
        .collect()
}

/// Prepends the SNR (raw dB) to the pooled channel statistics.
pub fn build_context<T: Scalar>(pooled: &[T], snr_db: f64) -> Result<ContextVector<T>> {
    if pooled.is_empty() {
        return Err(Error::InvalidParameter(
            "context needs at least one feature channel".into(),
        ));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!("SNR fed to AF must be finite, got {snr_db}")));
    }
    let mut v = Vec::with_capacity(pooled.len() + 1);
    v.push(T::from_f64_lossy(snr_db));
    v.extend_from_slice(pooled);
    Ok(ContextVector(v))
}

struct FactorPass<T> {
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
    factors: Vec<T>,
}

fn factor_pass<T: Scalar>(ctx: &[T], params: &AfParams<T>) -> Result<FactorPass<T>> {
    let (c, m) = (params.channels(), params.hidden());
    if params.w1.shape != [c + 1, m] || params.w2.shape != [m, c] || params.b1.len() != m {
        return Err(Error::InvalidParameter(format!(
            "inconsistent AF parameter shapes: w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}",
            params.w1.shape, params.b1.shape, params.w2.shape, params.b2.shape
        )));
    }
    if ctx.len() != c + 1 {
        return Err(Error::DimensionMismatch {
            context: "AF context vector",
            expected: c + 1,
            actual: ctx.len(),
        });
    }
    let mut hidden_pre = params.b1.data.clone();
    for (i, &x) in ctx.iter().enumerate() {
        let row = &params.w1.data[i * m..(i + 1) * m];
        for (h, &w) in hidden_pre.iter_mut().zip(row) {
            *h = *h + x * w;
        }
    }
    let hidden: Vec<T> = hidden_pre.iter().map(|&v| v.max(T::zero())).collect();
    let mut logits = params.b2.data.clone();
    for (j, &h) in hidden.iter().enumerate() {
        let row = &params.w2.data[j * c..(j + 1) * c];
        for (z, &w) in logits.iter_mut().zip(row) {
            *z = *z + h * w;
        }
    }
    let factors = logits.into_iter().map(sigmoid).collect();
    Ok(FactorPass {
        hidden_pre,
        hidden,
        factors,
    })
}

/// Two-layer factor prediction network with ReLU then sigmoid.
pub fn predict_factors<T: Scalar>(
    ctx: &ContextVector<T>,
    params: &AfParams<T>,
) -> Result<ScalingFactors<T>> {
    Ok(ScalingFactors(factor_pass(ctx, params)?.factors))
}

/// Channel-wise product `F'_i = s_i * F_i`.
pub fn recalibrate<T: Scalar>(features: &FeatureMap<T>, factors: &[T]) -> Result<FeatureMap<T>> {
    if factors.len() != features.channels() {
        return Err(Error::DimensionMismatch {
            context: "scaling factors",
            expected: features.channels(),
            actual: factors.len(),
        });
    }
    let mut out = features.clone();
    for (c, &s) in factors.iter().enumerate() {
        for v in out.plane_mut(c) {
            *v = *v * s;
        }
    }
    Ok(out)
}

/// Full AF module: pool, build context, predict factors, recalibrate.
pub fn af_forward<T: Scalar>(
    features: &FeatureMap<T>,
    snr_db: f64,
    params: &AfParams<T>,
) -> Result<FeatureMap<T>> {
    let ctx = build_context(&global_average_pool(features), snr_db)?;
    let factors = predict_factors(&ctx, params)?;
    recalibrate(features, &factors)
}

/// Intermediate values of one AF forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AfTrace<T> {
    context: Vec<T>,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
    factors: Vec<T>,
}

impl<T: Scalar> AfTrace<T> {
    pub fn factors(&self) -> &[T] {
        &self.factors
    }
}

/// Same result as [`af_forward`], also returning the trace needed by [`af_backward`].
pub fn af_forward_traced<T: Scalar>(
    features: &FeatureMap<T>,
    snr_db: f64,
    params: &AfParams<T>,
) -> Result<(FeatureMap<T>, AfTrace<T>)> {
    let ctx = build_context(&global_average_pool(features), snr_db)?;
    let pass = factor_pass(&ctx, params)?;
    let out = recalibrate(features, &pass.factors)?;
    Ok((
        out,
        AfTrace {
            context: ctx.0,
            hidden_pre: pass.hidden_pre,
            hidden: pass.hidden,
            factors: pass.factors,
        },
    ))
}

/// Gradients of the AF module with respect to its input features and SNR.
#[derive(Debug, Clone)]
pub struct AfInputGrads<T> {
    pub features: FeatureMap<T>,
    pub snr_db: T,
}

/// Backpropagates `grad_out` through one AF module, accumulating parameter
/// gradients into `grads`.
pub fn af_backward<T: Scalar>(
    features: &FeatureMap<T>,
    trace: &AfTrace<T>,
    params: &AfParams<T>,
    grad_out: &FeatureMap<T>,
    grads: &mut AfParams<T>,
) -> AfInputGrads<T> {
    let (c, m) = (params.channels(), params.hidden());
    let plane = features.plane_len();

    // dS_i = sum_p dF'_i(p) F_i(p); through the sigmoid.
    let d_logits: Vec<T> = (0..c)
        .map(|ch| {
            let ds: T = features
                .plane(ch)
                .iter()
                .zip(grad_out.plane(ch))
                .map(|(&f, &g)| f * g)
                .sum();
            let s = trace.factors[ch];
            ds * s * (T::one() - s)
        })
        .collect();

    let mut d_hidden = vec![T::zero(); m];
    for j in 0..m {
        let h = trace.hidden[j];
        let w_row = &params.w2.data[j * c..(j + 1) * c];
        let g_row = &mut grads.w2.data[j * c..(j + 1) * c];
        let mut acc = T::zero();
        for k in 0..c {
            g_row[k] = g_row[k] + h * d_logits[k];
            acc = acc + w_row[k] * d_logits[k];
        }
        d_hidden[j] = if trace.hidden_pre[j] > T::zero() {
            acc
        } else {
            T::zero()
        };
    }
    for k in 0..c {
        grads.b2.data[k] = grads.b2.data[k] + d_logits[k];
    }
    for j in 0..m {
        grads.b1.data[j] = grads.b1.data[j] + d_hidden[j];
    }

    let mut d_ctx = vec![T::zero(); c + 1];
    for (i, &x) in trace.context.iter().enumerate() {
        let w_row = &params.w1.data[i * m..(i + 1) * m];
        let g_row = &mut grads.w1.data[i * m..(i + 1) * m];
        let mut acc = T::zero();
        for j in 0..m {
            g_row[j] = g_row[j] + x * d_hidden[j];
            acc = acc + w_row[j] * d_hidden[j];
        }
        d_ctx[i] = acc;
    }

    let inv_n = T::one() / T::from_usize(plane).unwrap();
    let mut d_features = FeatureMap::zeros(c, features.height(), features.width());
    for ch in 0..c {
        let s = trace.factors[ch];
        let d_pool = d_ctx[ch + 1] * inv_n;
        for (d, &g) in d_features.plane_mut(ch).iter_mut().zip(grad_out.plane(ch)) {
            *d = g * s + d_pool;
        }
    }
    AfInputGrads {
        features: d_features,
        snr_db: d_ctx[0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamTag};
    use proptest::prelude::*;
    use rand::Rng;

    fn fm(c: usize, h: usize, w: usize, data: Vec<f64>) -> FeatureMap<f64> {
        FeatureMap::from_vec(c, h, w, data).unwrap()
    }

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
        let mut r = stream(seed, StreamTag::Init, &[]);
        fm(c, h, w, (0..c * h * w).map(|_| r.random_range(-2.0..2.0)).collect())
    }

    #[test]
    fn pool_examples() {
        assert_eq!(global_average_pool(&fm(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0])), vec![2.5]);
        let constant = FeatureMap::filled(3, 5, 7, 0.75);
        assert_eq!(global_average_pool(&constant), vec![0.75; 3]);
        assert_eq!(global_average_pool(&fm(3, 1, 1, vec![4.0, -1.0, 9.0])), vec![4.0, -1.0, 9.0]);
    }

    #[test]
    fn context_examples() {
        assert_eq!(&*build_context(&[0.5, 0.7], 10.0).unwrap(), &[10.0, 0.5, 0.7]);
        assert!(build_context::<f64>(&[], 3.0).is_err());
        let ctx = build_context(&[1.0], 0.0).unwrap();
        assert_eq!(&*ctx, &[0.0, 1.0]);
        assert_eq!(ctx.snr_db(), 0.0);
        assert_eq!(ctx.pooled(), &[1.0]);
    }

    #[test]
    fn zero_params_give_one_half() {
        let s = predict_factors(&build_context(&[0.3, -2.0, 5.0], 12.0).unwrap(), &AfParams::zeros(3, 3))
            .unwrap();
        assert_eq!(&*s, &[0.5; 3]);
    }

    #[test]
    fn hand_evaluated_factor() {
        let params = AfParams {
            w1: Param::from_vec(&[2, 1], vec![0.0, 1.0]).unwrap(),
            b1: Param::from_vec(&[1], vec![0.0]).unwrap(),
            w2: Param::from_vec(&[1, 1], vec![1.0]).unwrap(),
            b2: Param::from_vec(&[1], vec![0.0]).unwrap(),
        };
        let s = predict_factors(&build_context(&[1.0f64], 5.0).unwrap(), &params).unwrap();
        assert!((s[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let ctx = build_context(&[1.0, 2.0], 5.0).unwrap();
        assert!(predict_factors(&ctx, &AfParams::<f64>::zeros(3, 2)).is_err());
    }

    #[test]
    fn recalibrate_examples() {
        let f = random_map(3, 2, 4, 1);
        assert_eq!(recalibrate(&f, &[1.0; 3]).unwrap(), f);
        let out = recalibrate(&f, &[1.0, 0.0, 1.0]).unwrap();
        assert!(out.plane(1).iter().all(|&v| v == 0.0));
        let ones = FeatureMap::filled(2, 2, 2, 1.0);
        let out = recalibrate(&ones, &[0.25, 0.5]).unwrap();
        assert_eq!(out.plane(0), &[0.25; 4]);
        assert_eq!(out.plane(1), &[0.5; 4]);
        assert!(recalibrate(&ones, &[0.25]).is_err());
    }

    #[test]
    fn zero_params_halve_features() {
        let f = random_map(5, 3, 4, 2);
        let out = af_forward(&f, 7.0, &AfParams::zeros(5, 5)).unwrap();
        assert_eq!(out, f.map(|v| 0.5 * v));
    }

    #[test]
    fn traced_forward_matches_plain_forward() {
        let f = random_map(4, 3, 3, 3);
        let p = AfParams::init(4, 6, &mut stream(4, StreamTag::Init, &[]));
        let (traced, _) = af_forward_traced(&f, 11.0, &p).unwrap();
        assert_eq!(traced, af_forward(&f, 11.0, &p).unwrap());
    }

    #[test]
    fn sigmoid_stays_open_in_f32() {
        assert!(sigmoid(40.0f32) < 1.0);
        assert!(sigmoid(-200.0f32) > 0.0);
        assert!(sigmoid(800.0f64) < 1.0);
    }

    fn weighted_sum(out: &FeatureMap<f64>, w: &FeatureMap<f64>) -> f64 {
        out.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (c, h, w, m) = (3, 2, 3, 4);
        let f = random_map(c, h, w, 10);
        let mut p = AfParams::init(c, m, &mut stream(11, StreamTag::Init, &[]));
        for v in p.b1.data.iter_mut() {
            *v = 0.3;
        }
        let upstream = random_map(c, h, w, 12);
        let snr = 4.0;
        let (_, trace) = af_forward_traced(&f, snr, &p).unwrap();
        let mut grads = p.zeros_like();
        let g = af_backward(&f, &trace, &p, &upstream, &mut grads);
        let eps = 1e-6;
        let check = |a: f64, n: f64| {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-5, "analytic {a} vs numeric {n}");
        };
        for i in 0..f.as_slice().len() {
            let mut fp = f.clone();
            fp.as_mut_slice()[i] += eps;
            let mut fm_ = f.clone();
            fm_.as_mut_slice()[i] -= eps;
            let n = (weighted_sum(&af_forward(&fp, snr, &p).unwrap(), &upstream)
                - weighted_sum(&af_forward(&fm_, snr, &p).unwrap(), &upstream))
                / (2.0 * eps);
            check(g.features.as_slice()[i], n);
        }
        let n = (weighted_sum(&af_forward(&f, snr + eps, &p).unwrap(), &upstream)
            - weighted_sum(&af_forward(&f, snr - eps, &p).unwrap(), &upstream))
            / (2.0 * eps);
        check(g.snr_db, n);
        for which in 0..4 {
            let len = p.params()[which].1.len();
            for i in 0..len {
                let mut pp = p.clone();
                pp.params_mut()[which].1.data[i] += eps;
                let mut pm = p.clone();
                pm.params_mut()[which].1.data[i] -= eps;
                let n = (weighted_sum(&af_forward(&f, snr, &pp).unwrap(), &upstream)
                    - weighted_sum(&af_forward(&f, snr, &pm).unwrap(), &upstream))
                    / (2.0 * eps);
                check(grads.params()[which].1.data[i], n);
            }
        }
    }

    proptest! {
        #[test]
        fn af_preserves_shape_and_factor_range(
            c in 1usize..6, h in 1usize..5, w in 1usize..5, m in 1usize..6,
            seed in any::<u64>(), snr in -10.0f64..30.0,
        ) {
            let f = random_map(c, h, w, seed);
            let p = AfParams::init(c, m, &mut stream(seed, StreamTag::Snr, &[]));
            let out = af_forward(&f, snr, &p).unwrap();
            prop_assert_eq!(out.shape(), f.shape());
            let s = predict_factors(&build_context(&global_average_pool(&f), snr).unwrap(), &p).unwrap();
            prop_assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
