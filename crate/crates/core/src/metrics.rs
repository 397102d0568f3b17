//! Pixel and image error rates, confusion counts and dataset evaluation.

use std::fmt::Write as _;

use crate::data::{Sample, BACKGROUND_CLASS, MNIST_CLASSES};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{LabelGrid, SequenceND};
use crate::network::{network_forward_with, Network};

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_pair(predictions: &SequenceND, targets: &LabelGrid) -> Result<()> {
    if predictions.shape() != targets.shape() || predictions.width() != targets.num_classes() {
        return Err(Error::data(format!(
            "predictions of shape {} width {} do not match targets of shape {} with {} classes",
            predictions.shape(),
            predictions.width(),
            targets.shape(),
            targets.num_classes()
        )));
    }
    Ok(())
}

fn misclassified(predictions: &SequenceND, targets: &LabelGrid) -> usize {
    targets
        .labels()
        .iter()
        .enumerate()
        .filter(|(p, &t)| argmax(predictions.point(*p)) != t)
        .count()
}

/// Fraction of points whose argmax differs from the target.
pub fn pixel_error(predictions: &SequenceND, targets: &LabelGrid) -> Result<f64> {
    check_pair(predictions, targets)?;
    Ok(misclassified(predictions, targets) as f64 / targets.labels().len() as f64)
}

pub fn pixel_accuracy(predictions: &SequenceND, targets: &LabelGrid) -> Result<f64> {
    Ok(1.0 - pixel_error(predictions, targets)?)
}

/// The digit whose output summed over every point is largest. Background
/// is not a candidate.
pub fn cumulative_classify(predictions: &SequenceND) -> Result<usize> {
    if predictions.width() != MNIST_CLASSES {
        return Err(Error::config(format!(
            "cumulative classification needs {MNIST_CLASSES} outputs, got {}",
            predictions.width()
        )));
    }
    let mut totals = [0.0; BACKGROUND_CLASS];
    for p in 0..predictions.shape().point_count() {
        for (t, v) in totals.iter_mut().zip(predictions.point(p)) {
            *t += v;
        }
    }
    Ok(argmax(&totals))
}

/// Aggregated evaluation counts. Rates are derived on demand so that
/// reports over shards merge exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalReport {
    pub num_classes: usize,
    pub sequences: usize,
    pub points: usize,
    pub pixel_errors: usize,
    /// Sequences carrying a digit label.
    pub images: usize,
    pub image_errors: usize,
    /// `confusion[target * K + predicted]`.
    pub confusion: Vec<u64>,
}

impl EvalReport {
    pub fn empty(num_classes: usize) -> Self {
        EvalReport {
            num_classes,
            sequences: 0,
            points: 0,
            pixel_errors: 0,
            images: 0,
            image_errors: 0,
            confusion: vec![0; num_classes * num_classes],
        }
    }

    pub fn pixel_error_rate(&self) -> f64 {
        if self.points == 0 {
            0.0
        } else {
            self.pixel_errors as f64 / self.points as f64
        }
    }

    /// `None` when no sequence carried a digit.
    pub fn image_error_rate(&self) -> Option<f64> {
        (self.images > 0).then(|| self.image_errors as f64 / self.images as f64)
    }

    /// Adds one sequence. Returns the cumulative prediction for digit tasks.
    pub fn add(&mut self, probabilities: &SequenceND, sample: &Sample) -> Result<Option<usize>> {
        check_pair(probabilities, &sample.targets)?;
        if probabilities.width() != self.num_classes {
            return Err(Error::data("sequence class count differs from the report"));
        }
        let k = self.num_classes;
        for (p, &t) in sample.targets.labels().iter().enumerate() {
            let guess = argmax(probabilities.point(p));
            self.confusion[t * k + guess] += 1;
            if guess != t {
                self.pixel_errors += 1;
            }
        }
        self.points += sample.targets.labels().len();
        self.sequences += 1;
        match sample.digit {
            Some(digit) => {
                let guess = cumulative_classify(probabilities)?;
                self.images += 1;
                if guess != digit {
                    self.image_errors += 1;
                }
                Ok(Some(guess))
            }
            None => Ok(None),
        }
    }

    pub fn merge(&mut self, other: &EvalReport) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::data(
                "cannot merge reports with different class counts",
            ));
        }
        self.sequences += other.sequences;
        self.points += other.points;
        self.pixel_errors += other.pixel_errors;
        self.images += other.images;
        self.image_errors += other.image_errors;
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            *a += b;
        }
        Ok(())
    }

    /// Flat `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sequences = {}", self.sequences);
        let _ = writeln!(s, "points = {}", self.points);
        let _ = writeln!(s, "pixel_errors = {}", self.pixel_errors);
        let _ = writeln!(s, "pixel_error_rate = {}", self.pixel_error_rate());
        let _ = writeln!(s, "images = {}", self.images);
        let _ = writeln!(s, "image_errors = {}", self.image_errors);
        match self.image_error_rate() {
            Some(r) => {
                let _ = writeln!(s, "image_error_rate = {r}");
            }
            None => {
                let _ = writeln!(s, "image_error_rate = NA");
            }
        }
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        s
    }

    /// Rows are targets, columns predictions.
    pub fn confusion_csv(&self) -> String {
        let k = self.num_classes;
        let mut s = String::from("target");
        for c in 0..k {
            let _ = write!(s, ",pred_{c}");
        }
        s.push('\n');
        for t in 0..k {
            let _ = write!(s, "{t}");
            for c in 0..k {
                let _ = write!(s, ",{}", self.confusion[t * k + c]);
            }
            s.push('\n');
        }
        s
    }
}

/// Outcome for one evaluated sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequencePrediction {
    pub index: usize,
    pub digit: Option<usize>,
    pub predicted: Option<usize>,
    pub points: usize,
    pub pixel_errors: usize,
}

pub fn predictions_csv(rows: &[SequencePrediction]) -> String {
    let opt = |v: Option<usize>| v.map_or("NA".to_string(), |d| d.to_string());
    let mut s = String::from("index,digit,predicted,points,pixel_errors\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.index,
            opt(r.digit),
            opt(r.predicted),
            r.points,
            r.pixel_errors
        );
    }
    s
}

pub fn evaluate(net: &Network, data: &[Sample], exec: Execution) -> Result<EvalReport> {
    Ok(evaluate_detailed(net, data, exec)?.0)
}

/// Forward pass over every sequence (spread across workers by `exec`),
/// merged in dataset order.
pub fn evaluate_detailed(
    net: &Network,
    data: &[Sample],
    exec: Execution,
) -> Result<(EvalReport, Vec<SequencePrediction>)> {
    if data.is_empty() {
        return Err(Error::data("no evaluation data"));
    }
    let k = net.config().output_width;
    let per_item = exec.map(
        data.len(),
        |i| -> Result<(EvalReport, SequencePrediction)> {
            let sample = &data[i];
            let fwd = network_forward_with(net, &sample.input, Execution::Sequential)
                .map_err(|e| Error::Data(format!("sequence {i}: {e}")))?;
            let mut report = EvalReport::empty(k);
            let predicted = report
                .add(&fwd.probabilities, sample)
                .map_err(|e| Error::Data(format!("sequence {i}: {e}")))?;
            let row = SequencePrediction {
                index: i,
                digit: sample.digit,
                predicted,
                points: report.points,
                pixel_errors: report.pixel_errors,
            };
            Ok((report, row))
        },
    );
    let mut total = EvalReport::empty(k);
    let mut rows = Vec::with_capacity(data.len());
    for item in per_item {
        let (report, row) = item?;
        total.merge(&report)?;
        rows.push(row);
    }
    Ok((total, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shape;
    use crate::lstm::LstmLayerConfig;
    use crate::network::{LayerConfig, NetworkConfig};
    use proptest::prelude::{any, prop_assert_eq, proptest};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(shape: &Shape, k: usize, classes: &[usize]) -> SequenceND {
        let mut v = vec![0.0; classes.len() * k];
        for (p, &c) in classes.iter().enumerate() {
            v[p * k + c] = 1.0;
        }
        SequenceND::new(shape.clone(), k, v).unwrap()
    }

    fn random_dist(shape: &Shape, k: usize, rng: &mut ChaCha8Rng) -> SequenceND {
        let n = shape.point_count();
        let mut v: Vec<f64> = (0..n * k).map(|_| rng.gen_range(0.0..1.0)).collect();
        for p in 0..n {
            let s: f64 = v[p * k..(p + 1) * k].iter().sum();
            v[p * k..(p + 1) * k].iter_mut().for_each(|x| *x /= s);
        }
        SequenceND::new(shape.clone(), k, v).unwrap()
    }

    #[test]
    fn perfect_predictions_have_zero_error() {
        let shape = Shape::new(&[2, 3]).unwrap();
        let labels = vec![0, 1, 2, 2, 1, 0];
        let t = LabelGrid::new(shape.clone(), 3, labels.clone()).unwrap();
        assert_eq!(pixel_error(&one_hot(&shape, 3, &labels), &t).unwrap(), 0.0);
    }

    #[test]
    fn uniform_ties_resolve_to_class_zero() {
        let shape = Shape::new(&[4]).unwrap();
        let p = SequenceND::new(shape.clone(), 5, vec![0.2; 20]).unwrap();
        let t = LabelGrid::new(shape, 5, vec![0; 4]).unwrap();
        assert_eq!(pixel_error(&p, &t).unwrap(), 0.0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let p = SequenceND::zeros(Shape::new(&[2, 2]).unwrap(), 3);
        let t = LabelGrid::new(Shape::new(&[4]).unwrap(), 3, vec![0; 4]).unwrap();
        assert!(pixel_error(&p, &t).is_err());
    }

    proptest! {
        #[test]
        fn pixel_error_matches_recount(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = Shape::new(&[10, 10]).unwrap();
            let p = random_dist(&shape, 11, &mut rng);
            let labels: Vec<usize> = (0..100).map(|_| rng.gen_range(0..11)).collect();
            let t = LabelGrid::new(shape, 11, labels.clone()).unwrap();
            let mut wrong = 0;
            for (pt, &l) in labels.iter().enumerate() {
                let row = &p.values()[pt * 11..pt * 11 + 11];
                let best = row.iter().cloned().fold(f64::MIN, f64::max);
                let first = row.iter().position(|&v| v == best).unwrap();
                if first != l {
                    wrong += 1;
                }
            }
            let e = pixel_error(&p, &t).unwrap();
            prop_assert_eq!(e, wrong as f64 / 100.0);
            prop_assert_eq!(e + pixel_accuracy(&p, &t).unwrap(), 1.0);
        }

        #[test]
        fn cumulative_classify_matches_summation_and_ignores_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = Shape::new(&[28, 28]).unwrap();
            let p = random_dist(&shape, 11, &mut rng);
            let mut sums = [0.0f64; 10];
            for pt in 0..784 {
                for d in 0..10 {
                    sums[d] += p.values()[pt * 11 + d];
                }
            }
            let mut best = 0;
            for d in 1..10 {
                if sums[d] > sums[best] {
                    best = d;
                }
            }
            prop_assert_eq!(cumulative_classify(&p).unwrap(), best);
            let mut order: Vec<usize> = (0..784).collect();
            order.shuffle(&mut rng);
            let shuffled = p.permuted(&order);
            prop_assert_eq!(cumulative_classify(&shuffled).unwrap(), best);
        }
    }

    #[test]
    fn cumulative_examples() {
        let shape = Shape::new(&[2, 2]).unwrap();
        assert_eq!(
            cumulative_classify(&one_hot(&shape, 11, &[4; 4])).unwrap(),
            4
        );
        assert_eq!(
            cumulative_classify(&one_hot(&shape, 11, &[2, 10, 2, 10])).unwrap(),
            2
        );
        assert_eq!(
            cumulative_classify(&one_hot(&shape, 11, &[10, 10, 10, 3])).unwrap(),
            3
        );
        let wrong_k = SequenceND::zeros(shape, 5);
        assert!(matches!(
            cumulative_classify(&wrong_k),
            Err(Error::Config(_))
        ));
    }

    fn digit_net(bias_class: usize) -> Network {
        let cfg = NetworkConfig {
            layer: LayerConfig::Lstm(LstmLayerConfig::new(2, 1, 2)),
            output_width: 11,
            multidirectional: true,
        };
        let mut net = Network::zeros(cfg).unwrap();
        net.params_mut().output_bias[bias_class] = 5.0;
        net
    }

    fn digit_sample(rows: usize, cols: usize, digit: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(&[rows, cols]).unwrap();
        let img: Vec<f64> = (0..rows * cols)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    rng.gen_range(0.1..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let img = SequenceND::new(shape, 1, img).unwrap();
        crate::data::build_pixel_targets(&img, digit, 0.0).unwrap()
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let err = evaluate(&digit_net(0), &[], Execution::Sequential).unwrap_err();
        assert!(err.to_string().contains("no evaluation data"));
    }

    #[test]
    fn constant_prediction_matching_targets_scores_zero() {
        let net = digit_net(4);
        let shape = Shape::new(&[3, 3]).unwrap();
        let sample = Sample {
            input: SequenceND::new(shape.clone(), 1, vec![1.0; 9]).unwrap(),
            targets: LabelGrid::new(shape, 11, vec![4; 9]).unwrap(),
            digit: Some(4),
        };
        let r = evaluate(&net, &[sample.clone(), sample], Execution::default()).unwrap();
        assert_eq!(r.pixel_error_rate(), 0.0);
        assert_eq!(r.image_error_rate(), Some(0.0));
        assert_eq!(r.confusion[4 * 11 + 4], 18);
    }

    #[test]
    fn evaluation_is_deterministic_and_shards_merge() {
        let net = Network::random(*digit_net(0).config(), 3, 0.3).unwrap();
        let data: Vec<Sample> = (0..100)
            .map(|i| digit_sample(5, 6, i % 10, i as u64))
            .collect();
        let a = evaluate(&net, &data, Execution::Sequential).unwrap();
        let b = evaluate(&net, &data, Execution::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_key_value(), b.to_key_value());
        let mut merged = evaluate(&net, &data[..37], Execution::Sequential).unwrap();
        merged
            .merge(&evaluate(&net, &data[37..], Execution::Sequential).unwrap())
            .unwrap();
        assert_eq!(merged, a);
        assert_eq!(a.confusion.iter().sum::<u64>(), a.points as u64);
        assert_eq!(a.sequences, 100);
    }

    #[test]
    fn report_serialisation() {
        let net = digit_net(10);
        let data = vec![digit_sample(2, 2, 7, 1)];
        let (r, rows) = evaluate_detailed(&net, &data, Execution::Sequential).unwrap();
        let kv = r.to_key_value();
        assert!(kv.contains("sequences = 1\n"));
        assert!(kv.contains("points = 4\n"));
        let csv = r.confusion_csv();
        assert_eq!(csv.lines().count(), 12);
        assert!(csv.starts_with("target,pred_0,"));
        let pcsv = predictions_csv(&rows);
        assert_eq!(pcsv.lines().nth(1).unwrap().split(',').nth(1), Some("7"));
        let no_digit = EvalReport::empty(3);
        assert!(no_digit.to_key_value().contains("image_error_rate = NA"));
    }
}
