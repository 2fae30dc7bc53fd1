//! Channel model: real/complex symbol packing, per-block power normalization,
//! SNR to noise-power conversion, AWGN and equalized flat-fading transmission.
//!
//! Signal power is fixed to 1 by [`power_normalize`], so a channel at `snr_db`
//! adds circularly symmetric complex Gaussian noise of total variance
//! `10^(-snr_db / 10)` per complex symbol (half of it per real component).

use num_complex::{Complex, Complex64};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Stream, StreamTag};
use crate::tensor::Scalar;

/// A block of `k` complex channel symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector<T> {
    symbols: Vec<Complex<T>>,
}

impl<T: Scalar> SymbolVector<T> {
    pub fn new(symbols: Vec<Complex<T>>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidParameter(
                "symbol vector needs at least one symbol".into(),
            ));
        }
        Ok(Self { symbols })
    }

    /// Channel bandwidth `k`.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[Complex<T>] {
        &self.symbols
    }

    /// Average symbol power `(1/k) * sum |z_i|^2`, accumulated in `f64`.
    pub fn average_power(&self) -> f64 {
        let total: f64 = self.symbols.iter().map(|z| z.norm_sqr().as_f64()).sum();
        total / self.len() as f64
    }

    /// Inverse of [`pack_complex`]: `[re_0, im_0, re_1, im_1, ...]`.
    pub fn unpack(&self) -> Vec<T> {
        self.symbols.iter().flat_map(|z| [z.re, z.im]).collect()
    }
}

/// Interleaved pairs to complex symbols: symbol `i` is `values[2i] + j values[2i+1]`.
pub fn pack_complex<T: Scalar>(values: &[T]) -> Result<SymbolVector<T>> {
    if !values.len().is_multiple_of(2) {
        return Err(Error::OddRealDimension(values.len()));
    }
    SymbolVector::new(
        values
            .chunks_exact(2)
            .map(|p| Complex::new(p[0], p[1]))
            .collect(),
    )
}

/// Scales the block so that its average complex-symbol power is exactly 1.
pub fn power_normalize<T: Scalar>(raw: &SymbolVector<T>) -> Result<SymbolVector<T>> {
    let normalized = normalize_reals(&raw.unpack())?;
    pack_complex(&normalized)
}

/// `sqrt(k / sum |z|^2)` over the interleaved real representation, in `f64`.
pub(crate) fn normalization_scale<T: Scalar>(reals: &[T], k: usize) -> Result<f64> {
    let energy: f64 = reals.iter().map(|&v| v.as_f64() * v.as_f64()).sum();
    if energy <= 0.0 || !energy.is_finite() {
        return Err(Error::ZeroPowerBlock);
    }
    Ok((k as f64 / energy).sqrt())
}

/// Interleaved reals scaled to unit average complex power. The scaling is
/// done in `f64` and rounded once per element.
pub(crate) fn normalize_reals<T: Scalar>(reals: &[T]) -> Result<Vec<T>> {
    let scale = normalization_scale(reals, reals.len() / 2)?;
    Ok(reals.iter().map(|&v| T::from_f64_lossy(v.as_f64() * scale)).collect())
}

/// Vector-Jacobian product of power normalization on the interleaved reals.
///
/// With `z = g * raw` and `g = sqrt(k / E)`, `E = |raw|^2`:
/// `d raw = g * (dz - raw * <dz, raw> / E)`.
pub fn power_normalize_backward<T: Scalar>(raw: &[T], grad_out: &[T]) -> Result<Vec<T>> {
    let k = raw.len() / 2;
    let energy: T = raw.iter().map(|&v| v * v).sum();
    let g = T::from_f64_lossy(normalization_scale(raw, k)?);
    let dot: T = raw.iter().zip(grad_out).map(|(&r, &d)| r * d).sum();
    let coeff = dot / energy;
    Ok(raw
        .iter()
        .zip(grad_out)
        .map(|(&r, &d)| g * (d - r * coeff))
        .collect())
}

/// Noise power for unit signal power: `10^(-snr_db / 10)`.
pub fn snr_to_noise_power(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Transmission model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelMode {
    Awgn,
    /// `h z + w` followed by zero-forcing equalization at the receiver.
    EqualizedFading { gain: Complex64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    /// True channel SNR in dB. `f64::INFINITY` gives a noiseless channel.
    pub snr_db: f64,
    pub seed: u64,
    pub mode: ChannelMode,
}

impl ChannelConfig {
    pub fn awgn(snr_db: f64, seed: u64) -> Self {
        Self {
            snr_db,
            seed,
            mode: ChannelMode::Awgn,
        }
    }

    pub fn noise_power(&self) -> f64 {
        snr_to_noise_power(self.snr_db)
    }
}

/// A channel instance owning one noise stream. Successive transmissions
/// advance the stream; a single instance must not be shared across threads.
#[derive(Debug, Clone)]
pub struct Channel {
    mode: ChannelMode,
    stream: Stream,
}

impl Channel {
    pub fn new(seed: u64, mode: ChannelMode) -> Self {
        Self::from_stream(rng::stream(seed, StreamTag::ChannelNoise, &[]), mode)
    }

    pub fn from_stream(stream: Stream, mode: ChannelMode) -> Self {
        Self { mode, stream }
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    /// Sends one power-normalized block through the channel at `snr_db`.
    pub fn transmit<T: Scalar>(
        &mut self,
        z: &SymbolVector<T>,
        snr_db: f64,
    ) -> Result<SymbolVector<T>> {
        let gain = match self.mode {
            ChannelMode::Awgn => Complex64::new(1.0, 0.0),
            ChannelMode::EqualizedFading { gain } => {
                if gain.norm_sqr() == 0.0 {
                    return Err(Error::DeepFade);
                }
                gain
            }
        };
        let sigma = (snr_to_noise_power(snr_db) / 2.0).sqrt();
        let symbols = z
            .symbols
            .iter()
            .map(|s| {
                let re: f64 = StandardNormal.sample(&mut self.stream);
                let im: f64 = StandardNormal.sample(&mut self.stream);
                let mut w = Complex64::new(sigma * re, sigma * im);
                if let ChannelMode::EqualizedFading { .. } = self.mode {
                    w /= gain;
                }
                Complex::new(
                    s.re + T::from_f64_lossy(w.re),
                    s.im + T::from_f64_lossy(w.im),
                )
            })
            .collect();
        Ok(SymbolVector { symbols })
    }
}

/// `z_hat = z + w`, `w ~ CN(0, sigma^2 I)`; deterministic in `cfg.seed`.
pub fn awgn_transmit<T: Scalar>(
    z: &SymbolVector<T>,
    cfg: &ChannelConfig,
) -> Result<SymbolVector<T>> {
    if cfg.mode != ChannelMode::Awgn {
        return Err(Error::InvalidParameter(
            "awgn_transmit requires an AWGN channel configuration".into(),
        ));
    }
    Channel::new(cfg.seed, ChannelMode::Awgn).transmit(z, cfg.snr_db)
}

/// `(h z + w) / h = z + w / h`; effective noise variance `sigma^2 / |h|^2`.
pub fn fading_transmit_equalized<T: Scalar>(
    z: &SymbolVector<T>,
    gain: Complex64,
    cfg: &ChannelConfig,
) -> Result<SymbolVector<T>> {
    if gain.norm_sqr() == 0.0 {
        return Err(Error::DeepFade);
    }
    Channel::new(cfg.seed, ChannelMode::EqualizedFading { gain }).transmit(z, cfg.snr_db)
}

/// Mean squared error between sent and received blocks.
pub fn empirical_noise_power<T: Scalar>(
    sent: &SymbolVector<T>,
    received: &SymbolVector<T>,
) -> Result<f64> {
    if sent.len() != received.len() {
        return Err(Error::DimensionMismatch {
            context: "symbol blocks",
            expected: sent.len(),
            actual: received.len(),
        });
    }
    let total: f64 = sent
        .symbols
        .iter()
        .zip(&received.symbols)
        .map(|(a, b)| (*b - *a).norm_sqr().as_f64())
        .sum();
    Ok(total / sent.len() as f64)
}

/// Post-channel SNR in dB for a unit-power block: `10 log10(1 / mean |w|^2)`.
pub fn empirical_snr_db<T: Scalar>(
    sent: &SymbolVector<T>,
    received: &SymbolVector<T>,
) -> Result<f64> {
    Ok(10.0 * (sent.average_power() / empirical_noise_power(sent, received)?).log10())
}
