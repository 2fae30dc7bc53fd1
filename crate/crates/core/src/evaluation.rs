//! PSNR measurement, SNR sweeps, mismatch grids, AF statistics and storage accounting.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::channel::{Channel, ChannelMode};
use crate::codec::{Model, Side};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, StreamTag};
use crate::tensor::{FeatureMap, Scalar};
use crate::training::mse_distortion;

/// PSNR reported for a perfect reconstruction.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `10 log10(max_pixel^2 / mse)`, capped at `cap_db`.
pub fn psnr_from_mse(mse: f64, max_pixel: f64, cap_db: f64) -> f64 {
    if mse <= 0.0 {
        return cap_db;
    }
    (10.0 * (max_pixel * max_pixel / mse).log10()).min(cap_db)
}

/// PSNR of `x_hat` against `x`, both holding values in `[0, max_pixel]`.
pub fn psnr<T: Scalar>(x: &FeatureMap<T>, x_hat: &FeatureMap<T>, max_pixel: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse_distortion(x, x_hat)?, max_pixel, PSNR_CAP_DB))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub snr_test_list: Vec<f64>,
    /// Transmissions per image at each SNR.
    pub repeats: usize,
    pub seed: u64,
    /// Peak value in the PSNR formula. Images are scaled from `[0, 1]` to
    /// `[0, max_pixel]` first.
    pub max_pixel: f64,
    /// Evaluate only the first `n` images.
    pub max_images: Option<usize>,
    pub psnr_cap_db: f64,
    /// Where [`attention_stats`] collects scaling factors.
    pub attention_side: Side,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_test_list: (0..=20).map(f64::from).collect(),
            repeats: 10,
            seed: 0,
            max_pixel: 1.0,
            max_images: None,
            psnr_cap_db: PSNR_CAP_DB,
            attention_side: Side::Encoder,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        if !(self.max_pixel > 0.0 && self.max_pixel.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "max_pixel must be positive, got {}",
                self.max_pixel
            )));
        }
        if self.max_images == Some(0) {
            return Err(Error::InvalidConfig("max_images must be at least 1".into()));
        }
        Ok(())
    }

    fn validate_sweep(&self) -> Result<()> {
        self.validate()?;
        if self.snr_test_list.is_empty() {
            return Err(Error::InvalidConfig("snr_test_list is empty".into()));
        }
        Ok(())
    }

    fn image_count(&self, data: &Dataset) -> usize {
        self.max_images.map_or(data.len(), |m| m.min(data.len()))
    }
}

/// Mean and population standard deviation across images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-image PSNRs (each averaged over `cfg.repeats` transmissions) with the
/// AF modules fed `snr_fb_db` and the channel running at `snr_true_db`.
pub fn per_image_psnr<T: Scalar>(
    model: &Model<T>,
    data: &Dataset,
    snr_fb_db: f64,
    snr_true_db: f64,
    cfg: &EvalConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    data.ensure_nonempty()?;
    let count = cfg.image_count(data);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let x: FeatureMap<T> = data.sample(i, 0, cfg.seed)?.to_map();
            let z = model.encode(&x, snr_fb_db)?;
            let stream = rng::stream(cfg.seed, StreamTag::EvalChannel, &[i as u64]);
            let mut channel = Channel::from_stream(stream, ChannelMode::Awgn);
            let mut total = 0.0;
            for _ in 0..cfg.repeats {
                let z_hat = channel.transmit(&z, snr_true_db)?;
                let x_hat = model.decode(&z_hat, snr_fb_db, x.height(), x.width())?;
                let mse = mse_distortion(&x, &x_hat)? * cfg.max_pixel * cfg.max_pixel;
                total += psnr_from_mse(mse, cfg.max_pixel, cfg.psnr_cap_db);
            }
            Ok(total / cfg.repeats as f64)
        })
        .collect()
}

/// Channel-mismatch evaluation: per-image-then-average PSNR.
pub fn mismatch_eval<T: Scalar>(
    model: &Model<T>,
    data: &Dataset,
    snr_fb_db: f64,
    snr_true_db: f64,
    cfg: &EvalConfig,
) -> Result<PsnrStats> {
    let (mean, std) = mean_std(&per_image_psnr(model, data, snr_fb_db, snr_true_db, cfg)?);
    Ok(PsnrStats { mean, std })
}

/// Matched-SNR evaluation at `snr_db`.
pub fn dataset_psnr<T: Scalar>(
    model: &Model<T>,
    data: &Dataset,
    snr_db: f64,
    cfg: &EvalConfig,
) -> Result<PsnrStats> {
    mismatch_eval(model, data, snr_db, snr_db, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model_id: String,
    pub snr_test_db: f64,
    pub mean_psnr_db: f64,
    pub std_psnr_db: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// [`dataset_psnr`] at every `cfg.snr_test_list` entry.
pub fn sweep<T: Scalar>(
    model: &Model<T>,
    data: &Dataset,
    cfg: &EvalConfig,
    model_id: &str,
) -> Result<SweepResult> {
    ensemble_eval(&[(f64::NAN, model)], data, cfg, model_id)
}

/// Index of the model whose training SNR is nearest to `snr_test_db`; ties
/// go to the lower training SNR.
pub fn select_nearest(snr_trains: &[f64], snr_test_db: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in snr_trains.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let (d, db) = ((s - snr_test_db).abs(), (snr_trains[b] - snr_test_db).abs());
                if d < db || (d == db && s < snr_trains[b]) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Ensemble of fixed-SNR models: each test SNR is served by the nearest model.
pub fn ensemble_eval<T: Scalar>(
    models: &[(f64, &Model<T>)],
    data: &Dataset,
    cfg: &EvalConfig,
    model_id: &str,
) -> Result<SweepResult> {
    cfg.validate_sweep()?;
    if models.is_empty() {
        return Err(Error::InvalidParameter("ensemble has no models".into()));
    }
    let trains: Vec<f64> = models.iter().map(|m| m.0).collect();
    let mut rows = Vec::with_capacity(cfg.snr_test_list.len());
    for &snr in &cfg.snr_test_list {
        let pick = if models.len() == 1 { 0 } else { select_nearest(&trains, snr).expect("nonempty") };
        let stats = dataset_psnr(models[pick].1, data, snr, cfg)?;
        rows.push(SweepRow {
            model_id: model_id.to_string(),
            snr_test_db: snr,
            mean_psnr_db: stats.mean,
            std_psnr_db: stats.std,
            repeats: cfg.repeats,
        });
    }
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MismatchRow {
    pub model_id: String,
    pub snr_fb_db: f64,
    pub snr_true_db: f64,
    pub mean_psnr_db: f64,
    pub std_psnr_db: f64,
}

/// Full `snr_fb x snr_true` grid, feedback-major.
pub fn mismatch_grid<T: Scalar>(
    model: &Model<T>,
    data: &Dataset,
    fb_list: &[f64],
    true_list: &[f64],
    cfg: &EvalConfig,
    model_id: &str,
) -> Result<Vec<MismatchRow>> {
    if fb_list.is_empty() || true_list.is_empty() {
        return Err(Error::InvalidConfig("mismatch grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(fb_list.len() * true_list.len());
    for &fb in fb_list {
        for &tr in true_list {
            let s = mismatch_eval(model, data, fb, tr, cfg)?;
            rows.push(MismatchRow {
                model_id: model_id.to_string(),
                snr_fb_db: fb,
                snr_true_db: tr,
                mean_psnr_db: s.mean,
                std_psnr_db: s.std,
            });
        }
    }
    Ok(rows)
}

/// Scaling-factor statistics of one AF module.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleStats {
    pub module_index: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Population variance of the per-channel means.
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStats {
    pub snr_db: f64,
    pub side: Side,
    pub modules: Vec<ModuleStats>,
}

/// Per-channel mean/std of every AF module's factors over the dataset.
/// Decoder-side factors are taken from one channel realization per image.
pub fn attention_stats<T: Scalar>(
    model: &Model<T>,
    data: &Dataset,
    snr_db: f64,
    cfg: &EvalConfig,
) -> Result<AttentionStats> {
    if !model.has_attention() {
        return Err(Error::NoAttentionModules);
    }
    cfg.validate()?;
    data.ensure_nonempty()?;
    let count = cfg.image_count(data);
    let per_image: Vec<Vec<Vec<T>>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let x: FeatureMap<T> = data.sample(i, 0, cfg.seed)?.to_map();
            match cfg.attention_side {
                Side::Encoder => Ok(model.encode_detailed(&x, snr_db)?.factors),
                Side::Decoder => {
                    let z = model.encode(&x, snr_db)?;
                    let stream = rng::stream(cfg.seed, StreamTag::EvalChannel, &[i as u64]);
                    let z_hat = Channel::from_stream(stream, ChannelMode::Awgn).transmit(&z, snr_db)?;
                    model.decoder_factors(&z_hat, snr_db, x.height(), x.width())
                }
            }
        })
        .collect::<Result<_>>()?;

    let modules = (0..per_image[0].len())
        .map(|m| {
            let channels = per_image[0][m].len();
            let (mean, std): (Vec<f64>, Vec<f64>) = (0..channels)
                .map(|c| {
                    let vals: Vec<f64> = per_image.iter().map(|f| f[m][c].as_f64()).collect();
                    mean_std(&vals)
                })
                .unzip();
            let (_, spread) = mean_std(&mean);
            ModuleStats {
                module_index: m,
                mean,
                std,
                var: spread * spread,
            }
        })
        .collect();
    Ok(AttentionStats {
        snr_db,
        side: cfg.attention_side,
        modules,
    })
}

/// One line of a storage table.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageRow {
    pub strategy: String,
    pub param_count: u64,
    pub bytes: u64,
    /// `bytes / 2^20`.
    pub mb: f64,
}

impl StorageRow {
    /// Megabytes rounded to two decimals, as storage tables usually print them.
    pub fn mb_display(&self) -> String {
        format!("{:.2}", self.mb)
    }
}

/// Storage of each strategy `(name, parameters per model, number of models)`
/// at four bytes per parameter.
pub fn storage_report(strategies: &[(String, u64, u64)]) -> Vec<StorageRow> {
    strategies
        .iter()
        .map(|(name, params, models)| {
            let count = params * models;
            let bytes = count * 4;
            StorageRow {
                strategy: name.clone(),
                param_count: count,
                bytes,
                mb: bytes as f64 / (1u64 << 20) as f64,
            }
        })
        .collect()
}

/// `%g`-style rendering with six significant digits.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let rounded: f64 = format!("{v:.5e}").parse().expect("valid float");
    let exp = if rounded.abs() >= 10f64.powi(exp + 1) { exp + 1 } else { exp };
    if (-4..6).contains(&exp) {
        let s = format!("{:.*}", (5 - exp).max(0) as usize, rounded);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{rounded:.5e}");
        let (mant, e) = s.split_once('e').expect("exponent form");
        let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
        let e: i32 = e.parse().expect("exponent");
        format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    }
}

/// Comment lines written above every CSV header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvPreamble {
    /// A `# generated ...` line, omitted when `None`.
    pub timestamp: Option<String>,
    pub max_pixel: Option<f64>,
}

impl CsvPreamble {
    fn render(&self) -> String {
        let mut s = String::new();
        if let Some(t) = &self.timestamp {
            let _ = writeln!(s, "# generated {t}");
        }
        if let Some(m) = self.max_pixel {
            let _ = writeln!(
                s,
                "# psnr: max_pixel={}, per-image mean over repeats then mean over images, cap {} dB",
                fmt_sig6(m),
                fmt_sig6(PSNR_CAP_DB)
            );
        }
        s
    }
}

pub fn sweep_csv(rows: &[SweepRow], pre: &CsvPreamble) -> String {
    let mut s = pre.render();
    s.push_str("model_id,snr_test_db,mean_psnr_db,std_psnr_db,repeats\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.model_id,
            fmt_sig6(r.snr_test_db),
            fmt_sig6(r.mean_psnr_db),
            fmt_sig6(r.std_psnr_db),
            r.repeats
        );
    }
    s
}

pub fn mismatch_csv(rows: &[MismatchRow], pre: &CsvPreamble) -> String {
    let mut s = pre.render();
    s.push_str("model_id,snr_fb_db,snr_true_db,mean_psnr_db,std_psnr_db\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.model_id,
            fmt_sig6(r.snr_fb_db),
            fmt_sig6(r.snr_true_db),
            fmt_sig6(r.mean_psnr_db),
            fmt_sig6(r.std_psnr_db)
        );
    }
    s
}

/// One row per (module, channel) and a `var` summary row per module; the
/// summary row carries the variance in the `mean` column and leaves `std` empty.
pub fn attention_csv(stats: &[AttentionStats], pre: &CsvPreamble) -> String {
    let mut s = pre.render();
    if let Some(first) = stats.first() {
        let side = match first.side {
            Side::Encoder => "encoder",
            Side::Decoder => "decoder",
        };
        let _ = writeln!(s, "# scaling factors collected at the {side}");
    }
    s.push_str("module_index,channel_index,snr_db,mean,std\n");
    for st in stats {
        for m in &st.modules {
            for (c, (mean, std)) in m.mean.iter().zip(&m.std).enumerate() {
                let _ = writeln!(
                    s,
                    "{},{c},{},{},{}",
                    m.module_index,
                    fmt_sig6(st.snr_db),
                    fmt_sig6(*mean),
                    fmt_sig6(*std)
                );
            }
            let _ = writeln!(s, "{},var,{},{},", m.module_index, fmt_sig6(st.snr_db), fmt_sig6(m.var));
        }
    }
    s
}

pub fn storage_csv(rows: &[StorageRow], pre: &CsvPreamble) -> String {
    let mut s = pre.render();
    s.push_str("strategy,param_count,bytes,mb\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.strategy, r.param_count, r.bytes, fmt_sig6(r.mb));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ArchSpec;
    use crate::data::{ImageTensor, Split};
    use rand::Rng;

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr_from_mse(1.0, 1.0, PSNR_CAP_DB), 0.0);
        assert_eq!(psnr_from_mse(255.0 * 255.0, 255.0, PSNR_CAP_DB), 0.0);
        assert!((psnr_from_mse(0.01, 1.0, PSNR_CAP_DB) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(0.0, 1.0, PSNR_CAP_DB), 100.0);
        let x = FeatureMap::filled(3, 2, 2, 0.3f64);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn population_statistics() {
        let (m, s) = mean_std(&[10.0, 20.0]);
        assert_eq!(m, 15.0);
        assert_eq!(s, 5.0);
        assert_eq!(mean_std(&[3.0]).1, 0.0);
    }

    #[test]
    fn nearest_selection_rule() {
        let t = [5.0, 15.0];
        assert_eq!(select_nearest(&t, 9.0), Some(0));
        assert_eq!(select_nearest(&t, 11.0), Some(1));
        assert_eq!(select_nearest(&t, 10.0), Some(0));
        assert_eq!(select_nearest(&[15.0, 5.0], 10.0), Some(1));
        assert_eq!(select_nearest(&[], 10.0), None);
    }

    #[test]
    fn storage_arithmetic() {
        let rows = storage_report(&[
            ("BDJSCC-1".into(), 10_690_351, 1),
            ("ADJSCC".into(), 10_758_191, 1),
            ("BDJSCC-2".into(), 10_690_351, 2),
        ]);
        assert_eq!(rows[0].mb_display(), "40.78");
        assert_eq!(rows[1].mb_display(), "41.04");
        assert_eq!(rows[2].bytes, 2 * rows[0].bytes);
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig6(29.831), "29.831");
        assert_eq!(fmt_sig6(40.780_525), "40.7805");
        assert_eq!(fmt_sig6(100.0), "100");
        assert_eq!(fmt_sig6(0.5), "0.5");
        assert_eq!(fmt_sig6(-3.25), "-3.25");
        assert_eq!(fmt_sig6(1234567.0), "1.23457e+06");
        assert_eq!(fmt_sig6(0.000_012_345_678), "1.23457e-05");
        assert_eq!(fmt_sig6(999_999.7), "1e+06");
        assert_eq!(fmt_sig6(0.000_123_456_7), "0.000123457");
    }

    fn data(n: usize, side: usize) -> Dataset {
        let mut r = rng::stream(2, StreamTag::Init, &[]);
        let images = (0..n)
            .map(|_| {
                let px: Vec<u16> = (0..3 * side * side).map(|_| r.random_range(0..256)).collect();
                ImageTensor::from_planar(3, side, side, &px, 255).unwrap()
            })
            .collect();
        Dataset::new(images, Split::Test, "synthetic")
    }

    fn cfg(list: Vec<f64>) -> EvalConfig {
        EvalConfig {
            snr_test_list: list,
            repeats: 2,
            seed: 4,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn matched_mismatch_equals_sweep() {
        let m = Model::<f32>::init(ArchSpec::preset("tiny", 8, true).unwrap(), 0).unwrap();
        let d = data(3, 8);
        let c = cfg(vec![4.0]);
        let sw = sweep(&m, &d, &c, "a").unwrap();
        let mm = mismatch_eval(&m, &d, 4.0, 4.0, &c).unwrap();
        assert_eq!(sw.rows[0].mean_psnr_db, mm.mean);
        assert_eq!(sw.rows[0].std_psnr_db, mm.std);
    }

    #[test]
    fn baseline_ignores_feedback() {
        let m = Model::<f32>::init(ArchSpec::preset("tiny", 8, false).unwrap(), 0).unwrap();
        let d = data(2, 8);
        let c = cfg(vec![]);
        let a = mismatch_eval(&m, &d, 0.0, 10.0, &c).unwrap();
        let b = mismatch_eval(&m, &d, 20.0, 10.0, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_inputs_rejected() {
        let m = Model::<f32>::init(ArchSpec::preset("tiny", 8, false).unwrap(), 0).unwrap();
        assert!(sweep(&m, &data(2, 8), &cfg(vec![]), "a").is_err());
        let empty = Dataset::new(vec![], Split::Test, "none");
        assert!(sweep(&m, &empty, &cfg(vec![1.0]), "a").is_err());
        let zero_rep = EvalConfig { repeats: 0, ..cfg(vec![1.0]) };
        assert!(sweep(&m, &data(2, 8), &zero_rep, "a").is_err());
    }

    #[test]
    fn attention_stats_errors_and_shapes() {
        let b = Model::<f32>::init(ArchSpec::preset("tiny", 8, false).unwrap(), 0).unwrap();
        let err = attention_stats(&b, &data(2, 8), 5.0, &cfg(vec![])).unwrap_err();
        assert!(err.to_string().contains("no attention modules"));

        let a = Model::<f32>::init(ArchSpec::preset("tiny", 8, true).unwrap(), 0).unwrap();
        let one = attention_stats(&a, &data(1, 8), 5.0, &cfg(vec![])).unwrap();
        assert_eq!(one.modules.len(), 4);
        assert!(one.modules.iter().all(|m| m.std.iter().all(|&s| s == 0.0)));

        let dec = EvalConfig { attention_side: Side::Decoder, ..cfg(vec![]) };
        let s = attention_stats(&a, &data(3, 8), 5.0, &dec).unwrap();
        assert_eq!(s.modules.len(), 4);
        assert!(s.modules.iter().all(|m| m.var >= 0.0));
    }

    #[test]
    fn attention_csv_layout() {
        let st = AttentionStats {
            snr_db: 5.0,
            side: Side::Encoder,
            modules: vec![ModuleStats {
                module_index: 0,
                mean: vec![0.5, 0.5],
                std: vec![0.0, 0.0],
                var: 0.0,
            }],
        };
        let csv = attention_csv(&[st], &CsvPreamble::default());
        let lines: Vec<_> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines, ["module_index,channel_index,snr_db,mean,std", "0,0,5,0.5,0", "0,1,5,0.5,0", "0,var,5,0,"]);
    }
}
