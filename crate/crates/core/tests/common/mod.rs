#![allow(dead_code)]

use adjscc::channel::{Channel, ChannelMode};
use adjscc::codec::{ArchSpec, Model};
use adjscc::data::{Dataset, ImageTensor, Split};
use adjscc::rng::{self, StreamTag};
use adjscc::training::mse_distortion;
use adjscc::FeatureMap;
use rand::Rng;

/// Smooth random RGB images: a few low-frequency sinusoids per channel,
/// quantized to 8 bits.
pub fn smooth_images(n: usize, side: usize, seed: u64) -> Dataset {
    let images = (0..n)
        .map(|i| {
            let mut r = rng::stream(seed, StreamTag::Init, &[1000 + i as u64]);
            let mut px = vec![0u16; 3 * side * side];
            for c in 0..3 {
                let waves: Vec<(f64, f64, f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            r.random_range(-3.0..3.0),
                            r.random_range(-3.0..3.0),
                            r.random_range(0.0..std::f64::consts::TAU),
                            r.random_range(0.1..0.3),
                        )
                    })
                    .collect();
                let base = r.random_range(0.3..0.7);
                for y in 0..side {
                    for x in 0..side {
                        let (u, v) = (y as f64 / side as f64, x as f64 / side as f64);
                        let s: f64 = waves
                            .iter()
                            .map(|&(fy, fx, ph, a)| a * (std::f64::consts::TAU * (fy * u + fx * v) + ph).sin())
                            .sum();
                        px[c * side * side + y * side + x] = ((base + s).clamp(0.0, 1.0) * 255.0).round() as u16;
                    }
                }
            }
            ImageTensor::from_planar(3, side, side, &px, 255).unwrap()
        })
        .collect();
    Dataset::new(images, Split::Train, "synthetic")
}

/// Uniform random image in `[0, 1]`.
pub fn noise_image(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
    let mut r = rng::stream(seed, StreamTag::Init, &[5]);
    FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Reconstruction through the noiseless channel.
pub fn chain_output(model: &Model<f64>, x: &FeatureMap<f64>, snr_fb: f64) -> FeatureMap<f64> {
    let z = model.encode(x, snr_fb).unwrap();
    let mut ch = Channel::new(0, ChannelMode::Awgn);
    let z_hat = ch.transmit(&z, f64::INFINITY).unwrap();
    model.decode(&z_hat, snr_fb, x.height(), x.width()).unwrap()
}

/// Loss of the noiseless encode/decode chain.
pub fn chain_loss(model: &Model<f64>, x: &FeatureMap<f64>, snr_fb: f64) -> f64 {
    mse_distortion(x, &chain_output(model, x, snr_fb)).unwrap()
}

/// `mse(x, a) - mse(x, b)` written as `mean((a - b)(a + b - 2x))`, which
/// avoids cancelling two nearly equal losses.
pub fn mse_difference(x: &FeatureMap<f64>, a: &FeatureMap<f64>, b: &FeatureMap<f64>) -> f64 {
    let n = x.as_slice().len() as f64;
    x.as_slice()
        .iter()
        .zip(a.as_slice().iter().zip(b.as_slice()))
        .map(|(&x, (&a, &b))| (a - b) * (a + b - 2.0 * x))
        .sum::<f64>()
        / n
}

/// Worst relative error between analytic and central-difference gradients of
/// the noiseless chain on a `side x side` noise image, over `per_tensor`
/// sampled entries of every tensor. Returns (worst, entries checked, location).
pub fn chain_gradient_error(
    arch: ArchSpec,
    side: usize,
    seed: u64,
    per_tensor: usize,
) -> (f64, usize, String) {
    let mut model = Model::<f64>::init(arch, seed).unwrap();
    let x = noise_image(3, side, side, seed);
    let snr_fb = 7.0;
    let mut grads = model.params().zeros_like();
    let mut ch = Channel::new(0, ChannelMode::Awgn);
    model
        .accumulate_gradients(&x, snr_fb, f64::INFINITY, &mut ch, 1.0, &mut grads)
        .unwrap();
    let analytic: Vec<(String, Vec<f64>)> =
        grads.tensors().into_iter().map(|(n, p)| (n, p.data.clone())).collect();

    let eps = 1e-7;
    let mut pick = rng::stream(seed, StreamTag::Init, &[99]);
    let (mut worst, mut checked, mut where_) = (0.0f64, 0usize, String::new());
    for (t, (name, g)) in analytic.iter().enumerate() {
        let len = g.len();
        let idx: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| pick.random_range(0..len)).collect()
        };
        for j in idx {
            let orig = model.params().tensors()[t].1.data[j];
            model.params_mut().tensors_mut()[t].1.data[j] = orig + eps;
            let plus = chain_output(&model, &x, snr_fb);
            model.params_mut().tensors_mut()[t].1.data[j] = orig - eps;
            let minus = chain_output(&model, &x, snr_fb);
            model.params_mut().tensors_mut()[t].1.data[j] = orig;
            let numeric = mse_difference(&x, &plus, &minus) / (2.0 * eps);
            let e = rel_err(g[j], numeric);
            checked += 1;
            if e > worst {
                worst = e;
                where_ = format!("{name}[{j}] analytic {:e} numeric {:e}", g[j], numeric);
            }
        }
    }
    (worst, checked, where_)
}
