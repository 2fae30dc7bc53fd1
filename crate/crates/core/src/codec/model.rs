//! Encoder/decoder parameters, forward passes and hand-derived backward passes.

use rand::Rng;

use super::arch::{Activation, ArchSpec, Direction, LayerSpec};
use super::conv::{conv_down, conv_down_backward, conv_up, conv_up_backward};
use super::gdn::{self, Mode};
use crate::attention::{af_backward, af_forward_traced, glorot_uniform, sigmoid, AfParams, AfTrace};
use crate::channel::{normalize_reals, pack_complex, power_normalize_backward, Channel, SymbolVector};
use crate::error::{Error, Result};
use crate::rng::{self, StreamTag};
use crate::tensor::{add_assign, FeatureMap, Param, Scalar};

const PRELU_INIT_SLOPE: f64 = 0.25;
const GDN_INIT_BETA: f64 = 1.0;
const GDN_INIT_GAMMA_DIAG: f64 = 0.1;
const GDN_INIT_GAMMA_OFF: f64 = 1e-3;

/// Parameters of one FL module. `beta`/`gamma` hold unconstrained values.
#[derive(Debug, Clone, PartialEq)]
pub struct FlParams<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub beta: Param<T>,
    pub gamma: Param<T>,
    pub slope: Option<Param<T>>,
}

impl<T: Scalar> FlParams<T> {
    fn weight_shape(spec: &LayerSpec, in_channels: usize) -> [usize; 4] {
        let k = spec.kernel_size;
        match spec.direction {
            Direction::Down => [spec.filters, in_channels, k, k],
            Direction::Up => [in_channels, spec.filters, k, k],
        }
    }

    pub fn zeros(spec: &LayerSpec, in_channels: usize) -> Self {
        let c = spec.filters;
        Self {
            weight: Param::zeros(&Self::weight_shape(spec, in_channels)),
            bias: Param::zeros(&[c]),
            beta: Param::zeros(&[c]),
            gamma: Param::zeros(&[c, c]),
            slope: (spec.activation == Activation::Prelu).then(|| Param::zeros(&[c])),
        }
    }

    pub fn init(spec: &LayerSpec, in_channels: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(spec, in_channels);
        let c = spec.filters;
        let kk = spec.kernel_size * spec.kernel_size;
        glorot_uniform(&mut p.weight.data, in_channels * kk, c * kk, rng);
        p.beta.data.fill(T::from_f64_lossy(gdn::beta_to_raw(GDN_INIT_BETA)));
        let diag = T::from_f64_lossy(gdn::gamma_to_raw(GDN_INIT_GAMMA_DIAG));
        let off = T::from_f64_lossy(gdn::gamma_to_raw(GDN_INIT_GAMMA_OFF));
        for i in 0..c {
            for j in 0..c {
                p.gamma.data[i * c + j] = if i == j { diag } else { off };
            }
        }
        if let Some(s) = p.slope.as_mut() {
            s.data.fill(T::from_f64_lossy(PRELU_INIT_SLOPE));
        }
        p
    }

    pub fn effective_beta(&self) -> Vec<T> {
        self.beta.data.iter().map(|&r| gdn::positive_beta(r)).collect()
    }

    pub fn effective_gamma(&self) -> Vec<T> {
        self.gamma.data.iter().map(|&r| gdn::nonnegative_gamma(r)).collect()
    }

    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        let mut v = vec![
            ("weight", &self.weight),
            ("bias", &self.bias),
            ("gdn_beta", &self.beta),
            ("gdn_gamma", &self.gamma),
        ];
        if let Some(s) = &self.slope {
            v.push(("prelu_slope", s));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        let mut v = vec![
            ("weight", &mut self.weight),
            ("bias", &mut self.bias),
            ("gdn_beta", &mut self.beta),
            ("gdn_gamma", &mut self.gamma),
        ];
        if let Some(s) = self.slope.as_mut() {
            v.push(("prelu_slope", s));
        }
        v
    }
}

/// The FL and AF modules of one side (encoder or decoder).
#[derive(Debug, Clone, PartialEq)]
pub struct StackParams<T> {
    pub layers: Vec<FlParams<T>>,
    pub attention: Vec<AfParams<T>>,
}

/// Which half of the codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::Encoder => "encoder",
            Side::Decoder => "decoder",
        }
    }
}

/// Encoder parameter set and decoder parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: StackParams<T>,
    pub decoder: StackParams<T>,
}

fn stack_layout(arch: &ArchSpec, side: Side) -> (&[LayerSpec], usize) {
    match side {
        Side::Encoder => (&arch.encoder, arch.input_channels),
        Side::Decoder => (&arch.decoder, arch.output_channels),
    }
}

impl<T: Scalar> ModelParams<T> {
    fn build(
        arch: &ArchSpec,
        mut fl: impl FnMut(&LayerSpec, usize) -> FlParams<T>,
        mut af: impl FnMut(usize) -> AfParams<T>,
    ) -> Self {
        let mut stack = |side| {
            let (layers, mut in_c) = stack_layout(arch, side);
            let mut params = StackParams {
                layers: Vec::with_capacity(layers.len()),
                attention: Vec::new(),
            };
            for (i, spec) in layers.iter().enumerate() {
                params.layers.push(fl(spec, in_c));
                if arch.use_attention && i + 1 < layers.len() {
                    params.attention.push(af(spec.filters));
                }
                in_c = spec.filters;
            }
            params
        };
        let encoder = stack(Side::Encoder);
        let decoder = stack(Side::Decoder);
        Self { encoder, decoder }
    }

    /// All-zero parameters shaped for `arch`.
    pub fn zeros(arch: &ArchSpec) -> Self {
        let m = arch.af_hidden_width;
        Self::build(arch, FlParams::zeros, |c| AfParams::zeros(c, m))
    }

    /// Seeded random initialization.
    pub fn init(arch: &ArchSpec, seed: u64) -> Self {
        let m = arch.af_hidden_width;
        let mut rng = rng::stream(seed, StreamTag::Init, &[]);
        let mut fl_rng = rng::stream(seed, StreamTag::Init, &[1]);
        rng.random::<u64>();
        Self::build(
            arch,
            |spec, in_c| FlParams::init(spec, in_c, &mut fl_rng),
            |c| AfParams::init(c, m, &mut rng),
        )
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, p) in z.tensors_mut() {
            p.data.fill(T::zero());
        }
        z
    }

    pub fn side(&self, side: Side) -> &StackParams<T> {
        match side {
            Side::Encoder => &self.encoder,
            Side::Decoder => &self.decoder,
        }
    }

    /// Every parameter array with a stable dotted name, encoder first.
    pub fn tensors(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (side, stack) in [(Side::Encoder, &self.encoder), (Side::Decoder, &self.decoder)] {
            for (i, l) in stack.layers.iter().enumerate() {
                for (n, p) in l.params() {
                    out.push((format!("{}.fl{i}.{n}", side.name()), p));
                }
            }
            for (i, a) in stack.attention.iter().enumerate() {
                for (n, p) in a.params() {
                    out.push((format!("{}.af{i}.{n}", side.name()), p));
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (side, stack) in [
            (Side::Encoder, &mut self.encoder),
            (Side::Decoder, &mut self.decoder),
        ] {
            for (i, l) in stack.layers.iter_mut().enumerate() {
                for (n, p) in l.params_mut() {
                    out.push((format!("{}.fl{i}.{n}", side.name()), p));
                }
            }
            for (i, a) in stack.attention.iter_mut().enumerate() {
                for (n, p) in a.params_mut() {
                    out.push((format!("{}.af{i}.{n}", side.name()), p));
                }
            }
        }
        out
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, p)| p.len()).sum()
    }

    /// Number of parameters inside AF modules.
    pub fn attention_count(&self) -> usize {
        self.encoder
            .attention
            .iter()
            .chain(&self.decoder.attention)
            .map(AfParams::param_count)
            .sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            add_assign(&mut a.data, &b.data);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, p) in self.tensors_mut() {
            for v in &mut p.data {
                *v = *v * factor;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U> {
            encoder: cast_stack(&self.encoder),
            decoder: cast_stack(&self.decoder),
        };
        // cast_stack already converted the values; keep the borrow checker simple.
        let _ = &mut out;
        out
    }

    /// Verifies that tensor shapes agree with `arch`.
    pub fn check_shapes(&self, arch: &ArchSpec) -> Result<()> {
        let expected = ModelParams::<T>::zeros(arch);
        let want = expected.tensors();
        let have = self.tensors();
        if want.len() != have.len() {
            return Err(Error::InvalidArch(format!(
                "parameter set has {} tensors, architecture needs {}",
                have.len(),
                want.len()
            )));
        }
        for ((wn, wp), (hn, hp)) in want.iter().zip(&have) {
            if wn != hn || wp.shape != hp.shape {
                return Err(Error::InvalidArch(format!(
                    "parameter {hn} {:?} does not match {wn} {:?}",
                    hp.shape, wp.shape
                )));
            }
        }
        Ok(())
    }
}

fn cast_param<T: Scalar, U: Scalar>(p: &Param<T>) -> Param<U> {
    Param {
        shape: p.shape.clone(),
        data: p.data.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
    }
}

fn cast_stack<T: Scalar, U: Scalar>(s: &StackParams<T>) -> StackParams<U> {
    StackParams {
        layers: s
            .layers
            .iter()
            .map(|l| FlParams {
                weight: cast_param(&l.weight),
                bias: cast_param(&l.bias),
                beta: cast_param(&l.beta),
                gamma: cast_param(&l.gamma),
                slope: l.slope.as_ref().map(cast_param),
            })
            .collect(),
        attention: s
            .attention
            .iter()
            .map(|a| AfParams {
                w1: cast_param(&a.w1),
                b1: cast_param(&a.b1),
                w2: cast_param(&a.w2),
                b2: cast_param(&a.b2),
            })
            .collect(),
    }
}

/// Total scalar parameter count, including GDN, PReLU and AF parameters.
pub fn count_parameters<T: Scalar>(params: &ModelParams<T>) -> usize {
    params.count()
}

/// Intermediate values of one FL module (and its AF module, if any).
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace<T> {
    input_shape: (usize, usize, usize),
    /// Input map, kept for up convolutions.
    input: Option<FeatureMap<T>>,
    /// Unfolded input, kept for down convolutions.
    col: Vec<T>,
    pre_norm: FeatureMap<T>,
    denom: Vec<T>,
    normed: FeatureMap<T>,
    output: FeatureMap<T>,
    af: Option<AfTrace<T>>,
    recalibrated: Option<FeatureMap<T>>,
}

fn check_stride<T: Scalar>(x: &FeatureMap<T>, spec: &LayerSpec) -> Result<()> {
    if spec.direction == Direction::Down
        && (!x.height().is_multiple_of(spec.stride) || !x.width().is_multiple_of(spec.stride))
    {
        return Err(Error::StrideMismatch {
            height: x.height(),
            width: x.width(),
            multiple: spec.stride,
        });
    }
    Ok(())
}

fn check_layer_params<T: Scalar>(x: &FeatureMap<T>, spec: &LayerSpec, p: &FlParams<T>) -> Result<()> {
    let want = FlParams::<T>::weight_shape(spec, x.channels());
    if p.weight.shape != want || p.bias.len() != spec.filters {
        return Err(Error::DimensionMismatch {
            context: "FL module weights",
            expected: want.iter().product(),
            actual: p.weight.len(),
        });
    }
    if (spec.activation == Activation::Prelu) != p.slope.is_some() {
        return Err(Error::InvalidParameter(
            "PReLU slope presence does not match layer activation".into(),
        ));
    }
    Ok(())
}

fn fl_forward_traced<T: Scalar>(
    x: FeatureMap<T>,
    spec: &LayerSpec,
    p: &FlParams<T>,
) -> Result<LayerTrace<T>> {
    check_stride(&x, spec)?;
    check_layer_params(&x, spec, p)?;
    let input_shape = x.shape();
    let (pre_norm, col, input) = match spec.direction {
        Direction::Down => {
            let (y, col) = conv_down(&x, &p.weight.data, &p.bias.data, spec.kernel_size, spec.stride);
            (y, col, None)
        }
        Direction::Up => {
            let y = conv_up(&x, &p.weight.data, &p.bias.data, spec.kernel_size, spec.stride);
            (y, Vec::new(), Some(x))
        }
    };
    let mode = match spec.direction {
        Direction::Down => Mode::Forward,
        Direction::Up => Mode::Inverse,
    };
    let (normed, denom) = gdn::normalize(&pre_norm, &p.effective_beta(), &p.effective_gamma(), mode);
    let output = match (spec.activation, &p.slope) {
        (Activation::Prelu, Some(slope)) => {
            let mut out = normed.clone();
            for (c, &a) in slope.data.iter().enumerate() {
                for v in out.plane_mut(c) {
                    if *v <= T::zero() {
                        *v = a * *v;
                    }
                }
            }
            out
        }
        (Activation::Sigmoid, _) => normed.map(sigmoid),
        _ => normed.clone(),
    };
    Ok(LayerTrace {
        input_shape,
        input,
        col,
        pre_norm,
        denom,
        normed,
        output,
        af: None,
        recalibrated: None,
    })
}

/// One FL module: (transposed) convolution, GDN (IGDN when upsampling), activation.
pub fn fl_forward<T: Scalar>(
    x: &FeatureMap<T>,
    spec: &LayerSpec,
    params: &FlParams<T>,
) -> Result<FeatureMap<T>> {
    Ok(fl_forward_traced(x.clone(), spec, params)?.output)
}

fn fl_backward<T: Scalar>(
    spec: &LayerSpec,
    p: &FlParams<T>,
    trace: &LayerTrace<T>,
    d_out: FeatureMap<T>,
    grads: &mut FlParams<T>,
    need_input_grad: bool,
) -> Option<FeatureMap<T>> {
    let mut d_normed = d_out;
    match spec.activation {
        Activation::Prelu => {
            let slope = p.slope.as_ref().expect("checked in forward");
            let g_slope = grads.slope.as_mut().expect("same layout as params");
            for (c, &a) in slope.data.iter().enumerate() {
                let mut acc = T::zero();
                let normed = trace.normed.plane(c);
                for (d, &n) in d_normed.plane_mut(c).iter_mut().zip(normed) {
                    if n <= T::zero() {
                        acc = acc + *d * n;
                        *d = *d * a;
                    }
                }
                g_slope.data[c] = g_slope.data[c] + acc;
            }
        }
        Activation::Sigmoid => {
            for (d, &y) in d_normed.as_mut_slice().iter_mut().zip(trace.output.as_slice()) {
                *d = *d * y * (T::one() - y);
            }
        }
        Activation::None => {}
    }

    let mode = match spec.direction {
        Direction::Down => Mode::Forward,
        Direction::Up => Mode::Inverse,
    };
    let c = spec.filters;
    let mut g_beta = vec![T::zero(); c];
    let mut g_gamma = vec![T::zero(); c * c];
    let d_pre = gdn::normalize_backward(
        &trace.pre_norm,
        &trace.denom,
        &p.effective_gamma(),
        mode,
        &d_normed,
        &mut g_beta,
        &mut g_gamma,
    );
    for ((g, &d), &raw) in grads.beta.data.iter_mut().zip(&g_beta).zip(&p.beta.data) {
        *g = *g + d * gdn::reparam_derivative(raw);
    }
    for ((g, &d), &raw) in grads.gamma.data.iter_mut().zip(&g_gamma).zip(&p.gamma.data) {
        *g = *g + d * gdn::reparam_derivative(raw);
    }

    match spec.direction {
        Direction::Down => {
            let dx = conv_down_backward(
                trace.input_shape,
                &trace.col,
                &p.weight.data,
                spec.kernel_size,
                spec.stride,
                &d_pre,
                &mut grads.weight.data,
                &mut grads.bias.data,
            );
            need_input_grad.then_some(dx)
        }
        Direction::Up => {
            let dx = conv_up_backward(
                trace.input.as_ref().expect("up layers keep their input"),
                &p.weight.data,
                spec.kernel_size,
                spec.stride,
                &d_pre,
                &mut grads.weight.data,
                &mut grads.bias.data,
            );
            need_input_grad.then_some(dx)
        }
    }
}

/// Trace of a whole encoder or decoder pass.
#[derive(Debug, Clone)]
pub(crate) struct StackTrace<T> {
    layers: Vec<LayerTrace<T>>,
}

impl<T: Scalar> StackTrace<T> {
    fn output(&self) -> &FeatureMap<T> {
        let last = self.layers.last().expect("stacks are nonempty");
        last.recalibrated.as_ref().unwrap_or(&last.output)
    }

    pub(crate) fn factors(&self) -> Vec<Vec<T>> {
        self.layers
            .iter()
            .filter_map(|l| l.af.as_ref().map(|a| a.factors().to_vec()))
            .collect()
    }

    pub(crate) fn recalibrated(&self) -> Vec<FeatureMap<T>> {
        self.layers.iter().filter_map(|l| l.recalibrated.clone()).collect()
    }
}

fn stack_forward<T: Scalar>(
    x: FeatureMap<T>,
    snr_db: f64,
    specs: &[LayerSpec],
    params: &StackParams<T>,
) -> Result<StackTrace<T>> {
    if params.layers.len() != specs.len() {
        return Err(Error::DimensionMismatch {
            context: "FL module count",
            expected: specs.len(),
            actual: params.layers.len(),
        });
    }
    let mut layers = Vec::with_capacity(specs.len());
    let mut current = x;
    for (i, (spec, p)) in specs.iter().zip(&params.layers).enumerate() {
        let mut trace = fl_forward_traced(current, spec, p)?;
        current = match params.attention.get(i) {
            Some(af) if i + 1 < specs.len() => {
                let (out, af_trace) = af_forward_traced(&trace.output, snr_db, af)?;
                trace.af = Some(af_trace);
                trace.recalibrated = Some(out.clone());
                out
            }
            _ => trace.output.clone(),
        };
        layers.push(trace);
    }
    Ok(StackTrace { layers })
}

/// Returns the gradient with respect to the stack input when requested.
fn stack_backward<T: Scalar>(
    specs: &[LayerSpec],
    params: &StackParams<T>,
    trace: &StackTrace<T>,
    d_out: FeatureMap<T>,
    grads: &mut StackParams<T>,
    need_input_grad: bool,
) -> Option<FeatureMap<T>> {
    let mut g = d_out;
    for i in (0..specs.len()).rev() {
        let lt = &trace.layers[i];
        if let Some(af_trace) = &lt.af {
            g = af_backward(&lt.output, af_trace, &params.attention[i], &g, &mut grads.attention[i])
                .features;
        }
        let need = i > 0 || need_input_grad;
        {
            let dx = fl_backward(&specs[i], &params.layers[i], lt, g, &mut grads.layers[i], need)?;
            g = dx
        }
    }
    Some(g)
}

/// Result of running the encoder on one image.
#[derive(Debug, Clone)]
pub struct Encoded<T> {
    /// Power-normalized channel input.
    pub symbols: SymbolVector<T>,
    /// Scaling factors of every encoder AF module, in order.
    pub factors: Vec<Vec<T>>,
    /// Recalibrated features `F^A` of every encoder AF module, in order.
    pub recalibrated: Vec<FeatureMap<T>>,
}

fn encode_traced<T: Scalar>(
    x: &FeatureMap<T>,
    snr_db: f64,
    params: &ModelParams<T>,
    arch: &ArchSpec,
) -> Result<(StackTrace<T>, Vec<T>, SymbolVector<T>)> {
    if x.channels() != arch.input_channels {
        return Err(Error::DimensionMismatch {
            context: "image channels",
            expected: arch.input_channels,
            actual: x.channels(),
        });
    }
    arch.check_image_size(x.height(), x.width())?;
    let trace = stack_forward(x.clone(), snr_db, &arch.encoder, &params.encoder)?;
    let raw = trace.output().as_slice().to_vec();
    let normalized = normalize_reals(&raw)?;
    let symbols = pack_complex(&normalized)?;
    Ok((trace, raw, symbols))
}

/// Encoder `z = f(x, snr)`: FL/AF stack, flatten (channel-planar order),
/// pack interleaved pairs into complex symbols, normalize to unit average power.
pub fn encode<T: Scalar>(
    x: &FeatureMap<T>,
    snr_db: f64,
    params: &ModelParams<T>,
    arch: &ArchSpec,
) -> Result<SymbolVector<T>> {
    Ok(encode_traced(x, snr_db, params, arch)?.2)
}

fn decode_traced<T: Scalar>(
    z_hat: &SymbolVector<T>,
    snr_db: f64,
    params: &ModelParams<T>,
    arch: &ArchSpec,
    height: usize,
    width: usize,
) -> Result<StackTrace<T>> {
    let k = arch.symbols_for(height, width)?;
    if z_hat.len() != k {
        return Err(Error::DimensionMismatch {
            context: "received symbols",
            expected: k,
            actual: z_hat.len(),
        });
    }
    let s = arch.total_stride();
    let latent = FeatureMap::from_vec(arch.output_channels, height / s, width / s, z_hat.unpack())?;
    stack_forward(latent, snr_db, &arch.decoder, &params.decoder)
}

/// Decoder `x_hat = g(z_hat, snr)` producing a `height x width` image in `(0, 1)`.
pub fn decode<T: Scalar>(
    z_hat: &SymbolVector<T>,
    snr_db: f64,
    params: &ModelParams<T>,
    arch: &ArchSpec,
    height: usize,
    width: usize,
) -> Result<FeatureMap<T>> {
    Ok(decode_traced(z_hat, snr_db, params, arch, height, width)?
        .output()
        .clone())
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    arch: ArchSpec,
    params: ModelParams<T>,
}

/// Outcome of one differentiable transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    /// Per-image mean squared error.
    pub mse: f64,
}

impl<T: Scalar> Model<T> {
    pub fn new(arch: ArchSpec, params: ModelParams<T>) -> Result<Self> {
        arch.validate()?;
        params.check_shapes(&arch)?;
        Ok(Self { arch, params })
    }

    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = ModelParams::init(&arch, seed);
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn into_parts(self) -> (ArchSpec, ModelParams<T>) {
        (self.arch, self.params)
    }

    pub fn has_attention(&self) -> bool {
        self.arch.use_attention
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn encode(&self, x: &FeatureMap<T>, snr_db: f64) -> Result<SymbolVector<T>> {
        encode(x, snr_db, &self.params, &self.arch)
    }

    /// Encoder output plus its AF scaling factors and recalibrated features.
    pub fn encode_detailed(&self, x: &FeatureMap<T>, snr_db: f64) -> Result<Encoded<T>> {
        let (trace, _, symbols) = encode_traced(x, snr_db, &self.params, &self.arch)?;
        Ok(Encoded {
            symbols,
            factors: trace.factors(),
            recalibrated: trace.recalibrated(),
        })
    }

    pub fn decode(
        &self,
        z_hat: &SymbolVector<T>,
        snr_db: f64,
        height: usize,
        width: usize,
    ) -> Result<FeatureMap<T>> {
        decode(z_hat, snr_db, &self.params, &self.arch, height, width)
    }

    /// Scaling factors of every decoder AF module for a received block.
    pub fn decoder_factors(
        &self,
        z_hat: &SymbolVector<T>,
        snr_db: f64,
        height: usize,
        width: usize,
    ) -> Result<Vec<Vec<T>>> {
        Ok(decode_traced(z_hat, snr_db, &self.params, &self.arch, height, width)?.factors())
    }

    /// Encode, transmit, decode and backpropagate the per-image MSE scaled by
    /// `loss_weight` into `grads`. `snr_db` is both the feedback SNR and the
    /// channel SNR unless `channel_snr_db` overrides the latter.
    pub fn accumulate_gradients(
        &self,
        x: &FeatureMap<T>,
        snr_db: f64,
        channel_snr_db: f64,
        channel: &mut Channel,
        loss_weight: T,
        grads: &mut ModelParams<T>,
    ) -> Result<StepLoss> {
        let (enc_trace, raw, z) = encode_traced(x, snr_db, &self.params, &self.arch)?;
        let z_hat = channel.transmit(&z, channel_snr_db)?;
        let dec_trace =
            decode_traced(&z_hat, snr_db, &self.params, &self.arch, x.height(), x.width())?;
        let x_hat = dec_trace.output();

        let n = x.as_slice().len();
        let mut sq = 0.0;
        let coeff = loss_weight * T::from_f64_lossy(2.0 / n as f64);
        let d_xhat: Vec<T> = x_hat
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .map(|(&a, &b)| {
                let d = a - b;
                sq += d.as_f64() * d.as_f64();
                coeff * d
            })
            .collect();
        let d_xhat = FeatureMap::from_vec(x_hat.channels(), x_hat.height(), x_hat.width(), d_xhat)?;

        let d_latent = stack_backward(
            &self.arch.decoder,
            &self.params.decoder,
            &dec_trace,
            d_xhat,
            &mut grads.decoder,
            true,
        )
        .expect("input gradient requested");
        // The channel adds noise independent of z, so dz_hat/dz is the identity.
        let d_raw = power_normalize_backward(&raw, d_latent.as_slice())?;
        let out = enc_trace.output();
        let d_enc_out = FeatureMap::from_vec(out.channels(), out.height(), out.width(), d_raw)?;
        stack_backward(
            &self.arch.encoder,
            &self.params.encoder,
            &enc_trace,
            d_enc_out,
            &mut grads.encoder,
            false,
        );
        Ok(StepLoss { mse: sq / n as f64 })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }
}
