//! Declarative architecture description and bandwidth-ratio algebra.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A bandwidth ratio `k / n` (complex channel symbols per source dimension).
pub type BandwidthRatio = Ratio<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Strided convolution; spatial size divided by the stride.
    Down,
    /// Transposed convolution; spatial size multiplied by the stride.
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Prelu,
    Sigmoid,
    None,
}

/// One feature-learning (FL) module: convolution, (I)GDN, activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kernel_size: usize,
    pub filters: usize,
    pub stride: usize,
    pub direction: Direction,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn down(kernel_size: usize, filters: usize, stride: usize, activation: Activation) -> Self {
        Self {
            kernel_size,
            filters,
            stride,
            direction: Direction::Down,
            activation,
        }
    }

    pub const fn up(kernel_size: usize, filters: usize, stride: usize, activation: Activation) -> Self {
        Self {
            kernel_size,
            filters,
            stride,
            direction: Direction::Up,
            activation,
        }
    }
}

/// Full encoder/decoder description.
///
/// With `use_attention`, an AF module follows every FL module except the last
/// one of the encoder and of the decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    /// Image channels `C`.
    pub input_channels: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub use_attention: bool,
    /// Channels `c` of the last encoder layer; sets the bandwidth ratio.
    pub output_channels: usize,
    /// Hidden width `m` of each factor-prediction network.
    pub af_hidden_width: usize,
}

/// Named presets.
pub const PRESETS: &[&str] = &["paper-cifar", "tiny"];

impl ArchSpec {
    /// Five down modules (9x9 then 5x5 kernels, strides 2,2,1,1,1) mirrored by
    /// five up modules, all with `filters` channels except the encoder output
    /// (`output_channels`) and the decoder output (3).
    pub fn five_module(
        name: &str,
        filters: usize,
        output_channels: usize,
        use_attention: bool,
        af_hidden_width: usize,
    ) -> Self {
        use Activation::*;
        Self {
            name: name.to_string(),
            input_channels: 3,
            encoder: vec![
                LayerSpec::down(9, filters, 2, Prelu),
                LayerSpec::down(5, filters, 2, Prelu),
                LayerSpec::down(5, filters, 1, Prelu),
                LayerSpec::down(5, filters, 1, Prelu),
                LayerSpec::down(5, output_channels, 1, None),
            ],
            decoder: vec![
                LayerSpec::up(5, filters, 1, Prelu),
                LayerSpec::up(5, filters, 1, Prelu),
                LayerSpec::up(5, filters, 1, Prelu),
                LayerSpec::up(5, filters, 2, Prelu),
                LayerSpec::up(9, 3, 2, Sigmoid),
            ],
            use_attention,
            output_channels,
            af_hidden_width,
        }
    }

    /// `paper-cifar`: 256 filters, AF hidden width 16. With `output_channels = 16`
    /// this has 10,690,351 parameters without attention and 10,758,191 with it.
    ///
    /// `tiny`: 32 filters, AF hidden width equal to the filter count.
    pub fn preset(name: &str, output_channels: usize, use_attention: bool) -> Result<Self> {
        let spec = match name {
            "paper-cifar" => Self::five_module(name, 256, output_channels, use_attention, 16),
            "tiny" => Self::five_module(name, 32, output_channels, use_attention, 32),
            other => {
                return Err(Error::InvalidArch(format!(
                    "unknown preset {other:?}, expected one of {PRESETS:?}"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Preset sized for a target bandwidth ratio on `height x width` images.
    pub fn preset_for_ratio(
        name: &str,
        ratio: BandwidthRatio,
        height: usize,
        width: usize,
        use_attention: bool,
    ) -> Result<Self> {
        let probe = Self::preset(name, 2, use_attention)?;
        let c = channels_for_ratio(ratio, height, width, probe.input_channels, probe.total_stride())?;
        Self::preset(name, c, use_attention)
    }

    pub fn with_af_hidden_width(mut self, m: usize) -> Self {
        self.af_hidden_width = m;
        self
    }

    /// Product of the encoder strides. Image height and width must be multiples of it.
    pub fn total_stride(&self) -> usize {
        self.encoder.iter().map(|l| l.stride).product()
    }

    /// Number of AF modules on each side.
    pub fn attention_modules(&self) -> (usize, usize) {
        if self.use_attention {
            (self.encoder.len() - 1, self.decoder.len() - 1)
        } else {
            (0, 0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArch(msg));
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return bad("encoder and decoder need at least one layer each".into());
        }
        for (side, layers, dir) in [
            ("encoder", &self.encoder, Direction::Down),
            ("decoder", &self.decoder, Direction::Up),
        ] {
            for (i, l) in layers.iter().enumerate() {
                if l.direction != dir {
                    return bad(format!("{side} layer {i} has direction {:?}", l.direction));
                }
                if l.kernel_size == 0 || l.kernel_size % 2 == 0 {
                    return bad(format!("{side} layer {i}: kernel size must be odd"));
                }
                if l.filters == 0 || l.stride == 0 {
                    return bad(format!("{side} layer {i}: filters and stride must be positive"));
                }
            }
        }
        let dec_stride: usize = self.decoder.iter().map(|l| l.stride).product();
        if dec_stride != self.total_stride() {
            return bad(format!(
                "encoder stride product {} differs from decoder stride product {dec_stride}",
                self.total_stride()
            ));
        }
        if self.encoder.last().unwrap().filters != self.output_channels {
            return bad("last encoder layer must have output_channels filters".into());
        }
        if !self.output_channels.is_multiple_of(2) {
            return bad("output_channels must be even to pack reals into complex symbols".into());
        }
        if self.decoder.last().unwrap().filters != self.input_channels {
            return bad("last decoder layer must produce input_channels channels".into());
        }
        let sigmoids = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .filter(|l| l.activation == Activation::Sigmoid)
            .count();
        if sigmoids != 1 || self.decoder.last().unwrap().activation != Activation::Sigmoid {
            return bad("exactly one sigmoid, on the final decoder layer, is required".into());
        }
        if self.use_attention && self.af_hidden_width == 0 {
            return bad("af_hidden_width must be positive".into());
        }
        Ok(())
    }

    /// Checks that `height x width` images fit the stride pattern.
    pub fn check_image_size(&self, height: usize, width: usize) -> Result<()> {
        let s = self.total_stride();
        if height == 0 || width == 0 || !height.is_multiple_of(s) || !width.is_multiple_of(s) {
            return Err(Error::StrideMismatch {
                height,
                width,
                multiple: s,
            });
        }
        Ok(())
    }

    /// Number of complex channel symbols `k` for `height x width` images.
    pub fn symbols_for(&self, height: usize, width: usize) -> Result<usize> {
        self.check_image_size(height, width)?;
        let s = self.total_stride();
        Ok((height / s) * (width / s) * self.output_channels / 2)
    }

    /// Canonical text form (TOML).
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("ArchSpec serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let spec: Self =
            toml::from_str(text).map_err(|e| Error::InvalidArch(format!("unparsable: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 of the canonical text form.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

/// `R = k / n`.
pub fn bandwidth_ratio(n: u64, k: u64) -> Result<BandwidthRatio> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "bandwidth ratio needs positive sizes, got n={n}, k={k}"
        )));
    }
    Ok(Ratio::new(k, n))
}

/// Encoder output channels `c` giving ratio `R` on `H x W x C` images:
/// `c = 2 R H W C / ((H/s)(W/s))`, i.e. `2 R C s^2` for divisible sizes.
pub fn channels_for_ratio(
    ratio: BandwidthRatio,
    height: usize,
    width: usize,
    channels: usize,
    total_stride: usize,
) -> Result<usize> {
    if total_stride == 0 || !height.is_multiple_of(total_stride) || !width.is_multiple_of(total_stride) {
        return Err(Error::StrideMismatch {
            height,
            width,
            multiple: total_stride,
        });
    }
    let n = (height * width * channels) as u64;
    let positions = ((height / total_stride) * (width / total_stride)) as u64;
    let c = ratio * Ratio::from_integer(2 * n) / Ratio::from_integer(positions);
    if !c.is_integer() || c.to_integer() == 0 {
        return Err(Error::RatioUnreachable(format!(
            "R={ratio} needs c={:.4} output channels",
            *c.numer() as f64 / *c.denom() as f64
        )));
    }
    Ok(c.to_integer() as usize)
}

/// Parses `"1/6"`, `"0.25"`-style decimal fractions are rejected; integers are accepted.
pub fn parse_ratio(text: &str) -> Result<BandwidthRatio> {
    let t = text.trim();
    let parsed = match t.split_once('/') {
        Some((a, b)) => a.trim().parse::<u64>().ok().zip(b.trim().parse::<u64>().ok()),
        None => t.parse::<u64>().ok().map(|a| (a, 1)),
    };
    match parsed {
        Some((a, b)) if a > 0 && b > 0 => Ok(Ratio::new(a, b)),
        _ => Err(Error::InvalidConfig(format!(
            "bandwidth ratio {text:?} must look like \"1/6\""
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(bandwidth_ratio(3072, 512).unwrap(), Ratio::new(1, 6));
        assert_eq!(bandwidth_ratio(3072, 256).unwrap(), Ratio::new(1, 12));
        assert_eq!(bandwidth_ratio(77, 77).unwrap(), Ratio::from_integer(1));
        assert!(bandwidth_ratio(0, 1).is_err());
    }

    #[test]
    fn channels_for_ratio_examples() {
        assert_eq!(channels_for_ratio(Ratio::new(1, 6), 32, 32, 3, 4).unwrap(), 16);
        assert_eq!(channels_for_ratio(Ratio::new(1, 12), 32, 32, 3, 4).unwrap(), 8);
        let err = channels_for_ratio(Ratio::new(1, 5), 32, 32, 3, 4).unwrap_err();
        assert!(err.to_string().contains("ratio unreachable with this architecture"));
    }

    #[test]
    fn channels_for_ratio_inverts_symbol_count() {
        let spec = ArchSpec::preset("tiny", 16, true).unwrap();
        let k = spec.symbols_for(32, 32).unwrap();
        assert_eq!(k, 512);
        let r = bandwidth_ratio(32 * 32 * 3, k as u64).unwrap();
        assert_eq!(r, Ratio::new(1, 6));
        assert_eq!(channels_for_ratio(r, 32, 32, 3, spec.total_stride()).unwrap(), 16);
    }

    #[test]
    fn presets_validate_and_round_trip_through_text() {
        for name in PRESETS {
            for att in [false, true] {
                let spec = ArchSpec::preset(name, 16, att).unwrap();
                assert_eq!(spec.total_stride(), 4);
                let back = ArchSpec::from_text(&spec.to_text()).unwrap();
                assert_eq!(back, spec);
                assert_eq!(back.fingerprint(), spec.fingerprint());
            }
        }
        assert!(ArchSpec::preset("nope", 16, true).is_err());
    }

    #[test]
    fn validation_catches_broken_specs() {
        let good = ArchSpec::preset("tiny", 16, true).unwrap();

        let mut s = good.clone();
        s.decoder[3].stride = 1;
        assert!(s.validate().is_err());

        let mut s = good.clone();
        s.decoder[4].activation = Activation::Prelu;
        assert!(s.validate().is_err());

        let mut s = good.clone();
        s.encoder[0].activation = Activation::Sigmoid;
        assert!(s.validate().is_err());

        let mut s = good.clone();
        s.encoder[2].kernel_size = 4;
        assert!(s.validate().is_err());

        let mut s = good.clone();
        s.output_channels = 8;
        assert!(s.validate().is_err());

        assert!(ArchSpec::preset("tiny", 15, true).is_err());
    }

    #[test]
    fn image_size_must_match_stride() {
        let spec = ArchSpec::preset("tiny", 16, true).unwrap();
        let err = spec.check_image_size(33, 33).unwrap_err();
        assert!(err.to_string().contains("must be a multiple of 4"));
        spec.check_image_size(128, 64).unwrap();
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratio("1/6").unwrap(), Ratio::new(1, 6));
        assert_eq!(parse_ratio(" 2 / 12 ").unwrap(), Ratio::new(1, 6));
        assert!(parse_ratio("0.2").is_err());
        assert!(parse_ratio("1/0").is_err());
    }
}
