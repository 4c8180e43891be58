//! Scores recovered images and baselines against ground truth.

use rayon::prelude::*;

use super::bundle::ModelBundle;
use super::recover::recover_stages;
use crate::baselines::Baseline;
use crate::bitcore::{quantize, ImageTensor, RecoveryRange, Role};
use crate::error::{invalid, Result};
use crate::metrics::{ImageReport, MethodScore, MetricsReport, Score, StageScore};

/// Method label of the learned recovery in reports.
pub const RECOVERED: &str = "recovered";

/// A ground-truth image and its identifier in reports.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalImage {
    pub id: String,
    pub image: ImageTensor,
}

/// Evaluates with an arbitrary stage producer: `stages(I_q, O)` returns the
/// estimates after 0, 1, ... restored planes, the last being the final output.
///
/// Images are processed in parallel; rows keep corpus order.
pub fn evaluate_with<F>(
    corpus: &[EvalImage],
    range: RecoveryRange,
    inference_mode: &str,
    baselines: &[Baseline],
    stages: F,
) -> Result<MetricsReport>
where
    F: Fn(&ImageTensor, &ImageTensor) -> Result<Vec<ImageTensor>> + Sync,
{
    let (q, n) = (range.source_bits(), range.target_bits());
    let rows = corpus
        .par_iter()
        .map(|item| {
            let o = &item.image;
            if o.role() != Role::Full || o.container_bits() != n {
                return Err(invalid(format!("`{}` is not a full {n}-bit image", item.id)));
            }
            let iq = quantize(o, q)?;
            let est = stages(&iq, o)?;
            let last = est.last().ok_or_else(|| invalid("recovery produced no stages"))?;
            let mut methods = vec![MethodScore { method: RECOVERED.to_string(), score: Score::measure(last, o)? }];
            for b in baselines {
                methods.push(MethodScore { method: b.label().to_string(), score: Score::measure(&b.apply(&iq)?, o)? });
            }
            let steps = est.len() as u32 - 1;
            let accumulation = est
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let k = k as u32;
                    let effective_bits = if k == steps { n } else { q + k * (n - q) / steps.max(1) };
                    Ok(StageScore { stage: k, effective_bits, score: Score::measure(s, o)? })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ImageReport { id: item.id.clone(), methods, accumulation })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::new(q, n, inference_mode, rows)
}

/// Quantizes every image to `q`, recovers it with `bundle`, and scores the
/// result, each accumulation stage and each requested baseline.
pub fn evaluate(corpus: &[EvalImage], bundle: &ModelBundle, baselines: &[Baseline]) -> Result<MetricsReport> {
    evaluate_with(corpus, bundle.range(), bundle.inference_mode(), baselines, |iq, o| {
        recover_stages(iq, bundle, Some(o))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::Shape;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(n: u32, count: usize) -> Vec<EvalImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..count)
            .map(|i| EvalImage {
                id: format!("img{i}"),
                image: ImageTensor::from_fn(Shape::new(12, 13, 3), n, |_, _, _| rng.random_range(0..(1u32 << n)) as u16)
                    .unwrap(),
            })
            .collect()
    }

    #[test]
    fn oracle_bundle_reports_infinite_psnr() {
        let range = RecoveryRange::new(4, 10).unwrap();
        let report = evaluate(&corpus(10, 3), &ModelBundle::oracle(range), &Baseline::ALL).unwrap();
        assert_eq!(report.methods, vec!["recovered", "zp", "mig", "br"]);
        assert!(report.images.iter().all(|r| r.methods[0].score.psnr == f64::INFINITY));
        assert!(report.to_json().contains("\"psnr\": \"inf\""));
        let series: Vec<f64> = report.accumulation.iter().map(|s| s.score.psnr).collect();
        assert_eq!(series.len(), 7);
        assert!(series.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(report.accumulation.iter().map(|s| s.effective_bits).collect::<Vec<_>>(), (4..=10).collect::<Vec<_>>());
    }

    #[test]
    fn aggregates_are_means_and_order_is_stable() {
        let range = RecoveryRange::new(3, 8).unwrap();
        let data = corpus(8, 5);
        let zp_only = |iq: &ImageTensor, _: &ImageTensor| Ok(vec![iq.clone(), iq.clone().into_full()]);
        let report = evaluate_with(&data, range, "test", &[Baseline::IdealGain], zp_only).unwrap();
        assert_eq!(report.images.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["img0", "img1", "img2", "img3", "img4"]);
        for (m, agg) in report.aggregate.iter().enumerate() {
            let mean = report.images.iter().map(|r| r.methods[m].score.psnr).sum::<f64>() / 5.0;
            assert!((agg.score.psnr - mean).abs() < 1e-9);
        }
        let again = evaluate_with(&data, range, "test", &[Baseline::IdealGain], zp_only).unwrap();
        assert_eq!(report.to_json(), again.to_json());
    }
}
