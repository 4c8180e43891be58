//! Fidelity metrics and the evaluation report.
//!
//! PSNR uses the container peak `2^N - 1`. SSIM is the usual 11x11 Gaussian
//! window (sigma 1.5, K1 = 0.01, K2 = 0.03) over valid window positions only,
//! computed per channel and averaged.

use serde::{Serialize, Serializer};

use crate::bitcore::ImageTensor;
use crate::error::{invalid, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Label recorded in reports for how colour SSIM is reduced.
pub const SSIM_CHANNEL_MODE: &str = "per_channel_mean";

fn check_pair(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(invalid(format!("shape mismatch: {} vs {}", a.shape(), b.shape())));
    }
    if a.container_bits() != b.container_bits() {
        return Err(invalid(format!(
            "container depth mismatch: {} vs {} bits",
            a.container_bits(),
            b.container_bits()
        )));
    }
    Ok(())
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .codes()
        .iter()
        .zip(b.codes())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.codes().len() as f64)
}

/// `10 log10(peak^2 / mse)`; `f64::INFINITY` for identical images.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let err = mse(a, b)?;
    Ok(psnr_from_mse(err, a.peak()))
}

pub fn psnr_from_mse(mse: f64, peak: u32) -> f64 {
    if mse == 0.0 {
        return f64::INFINITY;
    }
    let peak = f64::from(peak);
    10.0 * (peak * peak / mse).log10()
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

// Separable valid-mode filtering of one channel: returns a (h-10) x (w-10) map.
fn filter_valid(src: &[f64], height: usize, width: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let out_w = width - SSIM_WINDOW + 1;
    let out_h = height - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; height * out_w];
    for y in 0..height {
        let line = &src[y * width..(y + 1) * width];
        for x in 0..out_w {
            rows[y * out_w + x] = win.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for y in 0..out_h {
        for x in 0..out_w {
            out[y * out_w + x] = win
                .iter()
                .enumerate()
                .map(|(k, w)| w * rows[(y + k) * out_w + x])
                .sum();
        }
    }
    out
}

fn ssim_channel(a: &[u16], b: &[u16], height: usize, width: usize, peak: f64) -> f64 {
    let win = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let x: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let mu_x = filter_valid(&x, height, width, &win);
    let mu_y = filter_valid(&y, height, width, &win);
    let e_xx = filter_valid(&xx, height, width, &win);
    let e_yy = filter_valid(&yy, height, width, &win);
    let e_xy = filter_valid(&xy, height, width, &win);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
    }
    total / mu_x.len() as f64
}

/// Mean structural similarity, averaged over channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_pair(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, image is {}x{}",
            a.height(),
            a.width()
        )));
    }
    let peak = f64::from(a.peak());
    let total: f64 = (0..a.channels())
        .map(|c| ssim_channel(a.channel(c), b.channel(c), a.height(), a.width(), peak))
        .sum();
    Ok(total / a.channels() as f64)
}

/// PSNR/SSIM/MSE of one image against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Score {
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

impl Score {
    /// SSIM is reported as NaN (serialized `null`) when the image is smaller
    /// than the SSIM window.
    pub fn measure(estimate: &ImageTensor, truth: &ImageTensor) -> Result<Self> {
        let err = mse(estimate, truth)?;
        let ssim = if estimate.height() >= SSIM_WINDOW && estimate.width() >= SSIM_WINDOW {
            ssim(estimate, truth)?
        } else {
            f64::NAN
        };
        Ok(Self { psnr: psnr_from_mse(err, truth.peak()), ssim, mse: err })
    }

    fn mean(scores: &[Score]) -> Score {
        let n = scores.len() as f64;
        Score {
            psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
            ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
            mse: scores.iter().map(|s| s.mse).sum::<f64>() / n,
        }
    }
}

/// Infinite PSNR is written as the string `"inf"`; NaN as `null`.
fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else if v.is_nan() {
        s.serialize_none()
    } else {
        s.serialize_f64(*v)
    }
}

fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodScore {
    pub method: String,
    #[serde(flatten)]
    pub score: Score,
}

/// Fidelity after `stage` recovered planes (stage 0 is the quantized input).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageScore {
    pub stage: u32,
    pub effective_bits: u32,
    #[serde(flatten)]
    pub score: Score,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageReport {
    pub id: String,
    pub methods: Vec<MethodScore>,
    pub accumulation: Vec<StageScore>,
}

/// Per-image and aggregate results of one evaluation run.
///
/// Aggregates are arithmetic means of the per-image rows, so one infinite
/// PSNR makes the mean infinite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub source_bits: u32,
    pub target_bits: u32,
    pub inference_mode: String,
    pub ssim_channel_mode: String,
    pub methods: Vec<String>,
    pub images: Vec<ImageReport>,
    pub aggregate: Vec<MethodScore>,
    pub accumulation: Vec<StageScore>,
}

impl MetricsReport {
    /// Builds the report and its means. Every image must list the same
    /// methods and the same number of stages, in the same order.
    pub fn new(
        source_bits: u32,
        target_bits: u32,
        inference_mode: impl Into<String>,
        images: Vec<ImageReport>,
    ) -> Result<Self> {
        let first = images.first().ok_or_else(|| invalid("report needs at least one image"))?;
        let methods: Vec<String> = first.methods.iter().map(|m| m.method.clone()).collect();
        let stages = first.accumulation.len();
        for img in &images {
            let names: Vec<&str> = img.methods.iter().map(|m| m.method.as_str()).collect();
            if names != methods.iter().map(String::as_str).collect::<Vec<_>>()
                || img.accumulation.len() != stages
            {
                return Err(invalid(format!("image `{}` has a different report layout", img.id)));
            }
        }
        let aggregate = methods
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let scores: Vec<Score> = images.iter().map(|img| img.methods[i].score).collect();
                MethodScore { method: name.clone(), score: Score::mean(&scores) }
            })
            .collect();
        let accumulation = (0..stages)
            .map(|s| {
                let scores: Vec<Score> = images.iter().map(|img| img.accumulation[s].score).collect();
                let head = &first.accumulation[s];
                StageScore { stage: head.stage, effective_bits: head.effective_bits, score: Score::mean(&scores) }
            })
            .collect();
        Ok(Self {
            source_bits,
            target_bits,
            inference_mode: inference_mode.into(),
            ssim_channel_mode: SSIM_CHANNEL_MODE.to_string(),
            methods,
            images,
            aggregate,
            accumulation,
        })
    }

    pub fn aggregate_for(&self, method: &str) -> Option<&Score> {
        self.aggregate.iter().find(|m| m.method == method).map(|m| &m.score)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per image plus a final `mean` row. Columns are
    /// `image`, then `<method>_psnr,<method>_ssim,<method>_mse` per method,
    /// then `stage<k>_psnr` per accumulation stage.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["image".to_string()];
        for m in &self.methods {
            header.extend([format!("{m}_psnr"), format!("{m}_ssim"), format!("{m}_mse")]);
        }
        for s in &self.accumulation {
            header.push(format!("stage{}_psnr", s.stage));
        }
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        wtr.write_record(&header).expect("in-memory write");
        let mut row = |id: &str, methods: &[MethodScore], stages: &[StageScore]| {
            let mut rec = vec![id.to_string()];
            for m in methods {
                rec.push(format_db(m.score.psnr));
                rec.push(format_db(m.score.ssim));
                rec.push(format!("{}", m.score.mse));
            }
            rec.extend(stages.iter().map(|s| format_db(s.score.psnr)));
            wtr.write_record(&rec).expect("in-memory write");
        };
        for img in &self.images {
            row(&img.id, &img.methods, &img.accumulation);
        }
        row("mean", &self.aggregate, &self.accumulation);
        let bytes = wtr.into_inner().expect("flush in-memory csv");
        String::from_utf8(bytes).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::Shape;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, shape: Shape, bits: u32) -> ImageTensor {
        let max = 1u32 << bits;
        let codes = (0..shape.len()).map(|_| rng.random_range(0..max) as u16).collect();
        ImageTensor::new(shape, codes, bits).unwrap()
    }

    fn constant(shape: Shape, bits: u32, v: u16) -> ImageTensor {
        ImageTensor::new(shape, vec![v; shape.len()], bits).unwrap()
    }

    // Naive references kept deliberately loop-shaped.
    fn mse_oracle(a: &ImageTensor, b: &ImageTensor) -> f64 {
        let mut acc = 0.0;
        for c in 0..a.channels() {
            for y in 0..a.height() {
                for x in 0..a.width() {
                    let d = a.get(c, y, x) as f64 - b.get(c, y, x) as f64;
                    acc += d * d;
                }
            }
        }
        acc / a.shape().len() as f64
    }

    fn ssim_oracle(a: &ImageTensor, b: &ImageTensor) -> f64 {
        let win = gaussian_window();
        let l = a.peak() as f64;
        let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
        let mut per_channel = 0.0;
        for c in 0..a.channels() {
            let mut sum = 0.0;
            let mut count = 0;
            for y0 in 0..=a.height() - 11 {
                for x0 in 0..=a.width() - 11 {
                    let (mut mx, mut my) = (0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let w = win[i] * win[j];
                            mx += w * a.get(c, y0 + i, x0 + j) as f64;
                            my += w * b.get(c, y0 + i, x0 + j) as f64;
                        }
                    }
                    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let w = win[i] * win[j];
                            let dx = a.get(c, y0 + i, x0 + j) as f64 - mx;
                            let dy = b.get(c, y0 + i, x0 + j) as f64 - my;
                            vx += w * dx * dx;
                            vy += w * dy * dy;
                            cov += w * dx * dy;
                        }
                    }
                    sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
            per_channel += sum / count as f64;
        }
        per_channel / a.channels() as f64
    }

    #[test]
    fn mse_examples() {
        let shape = Shape::new(4, 4, 3);
        let a = constant(shape, 8, 100);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &constant(shape, 8, 116)).unwrap(), 256.0);
        let other = constant(Shape::new(4, 5, 3), 8, 0);
        assert!(mse(&a, &other).is_err());
    }

    #[test]
    fn psnr_closed_forms() {
        let shape = Shape::new(4, 4, 1);
        let a = constant(shape, 8, 10);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let got = psnr(&a, &constant(shape, 8, 26)).unwrap();
        assert!((got - 20.0 * (255.0f64 / 16.0).log10()).abs() < 1e-9);
        assert!((got - 24.0484).abs() < 1e-4);
        let got16 = psnr(&constant(shape, 16, 7), &constant(shape, 16, 8)).unwrap();
        assert!((got16 - 20.0 * 65535.0f64.log10()).abs() < 1e-9);
        assert!((got16 - 96.3295).abs() < 1e-4);
        assert!(psnr(&a, &constant(shape, 10, 10)).is_err());
    }

    #[test]
    fn psnr_is_symmetric_and_decreasing() {
        let shape = Shape::new(3, 3, 1);
        let a = constant(shape, 8, 50);
        let mut last = f64::INFINITY;
        for d in 1..20u16 {
            let b = constant(shape, 8, 50 + d);
            let p = psnr(&a, &b).unwrap();
            assert_eq!(p, psnr(&b, &a).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn metrics_match_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let shape = Shape::new(32, 32, 3);
            let a = random_image(&mut rng, shape, 8);
            let b = random_image(&mut rng, shape, 8);
            let m = mse(&a, &b).unwrap();
            assert!((m - mse_oracle(&a, &b)).abs() <= 1e-9 * m);
            let s = ssim(&a, &b).unwrap();
            assert!((s - ssim_oracle(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, Shape::new(16, 16, 3), 12);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        // Binary image at the extremes, compared with its negative.
        let shape = Shape::new(16, 16, 1);
        let codes: Vec<u16> = (0..shape.len()).map(|_| if rng.random_bool(0.5) { 255 } else { 0 }).collect();
        let img = ImageTensor::new(shape, codes.clone(), 8).unwrap();
        let neg = ImageTensor::new(shape, codes.iter().map(|&c| 255 - c).collect(), 8).unwrap();
        assert!(ssim(&img, &neg).unwrap() < 0.0);

        let small = constant(Shape::new(10, 20, 1), 8, 0);
        assert!(matches!(ssim(&small, &small), Err(crate::Error::InvalidArgument(_))));
    }

    #[test]
    fn report_means_and_serialization() {
        let score = |p: f64| Score { psnr: p, ssim: 0.5, mse: 1.0 };
        let img = |id: &str, p: f64| ImageReport {
            id: id.to_string(),
            methods: vec![MethodScore { method: "zp".into(), score: score(p) }],
            accumulation: vec![StageScore { stage: 0, effective_bits: 4, score: score(p) }],
        };
        let report = MetricsReport::new(4, 8, "binarized", vec![img("a", 30.0), img("b", 40.0)]).unwrap();
        assert_eq!(report.aggregate_for("zp").unwrap().psnr, 35.0);
        let inf = MetricsReport::new(4, 8, "binarized", vec![img("a", f64::INFINITY)]).unwrap();
        let json = inf.to_json();
        assert!(json.contains("\"psnr\": \"inf\""));
        let csv = inf.to_csv();
        assert!(csv.starts_with("image,zp_psnr,zp_ssim,zp_mse,stage0_psnr\n"));
        assert!(csv.contains("a,inf,0.5,1,inf"));
    }
}
