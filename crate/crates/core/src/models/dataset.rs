use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub label: usize,
}

const NOISE_STD: f64 = 0.1;
const COARSE_CELLS: usize = 4;

/// Gaussian blobs around block-pattern class templates.
///
/// Each template is `0.5 ± separation / 2` over a coarse `4×4` cell grid
/// (fewer cells for images smaller than that). Within every channel half the
/// cells are raised and half lowered, so templates share the same mean
/// brightness. Images are interleaved by class.
pub fn synthetic_blob_dataset<R: Rng + ?Sized>(
    n_per_class: usize,
    shape: Shape,
    n_classes: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Vec<LabeledImage>> {
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation must be > 0, got {separation}")));
    }
    if n_classes < 2 || shape.is_empty() {
        return Err(Error::invalid("blob dataset needs >= 2 classes and a non-empty shape"));
    }
    let cells = COARSE_CELLS.min(shape.height).min(shape.width);
    let patterns = distinct_patterns(n_classes, shape.channels, cells * cells, rng);
    let row_cell: Vec<usize> = (0..shape.height).map(|r| r * cells / shape.height).collect();
    let col_cell: Vec<usize> = (0..shape.width).map(|c| c * cells / shape.width).collect();

    let templates: Vec<Vec<f64>> = patterns
        .iter()
        .map(|pattern| {
            let mut t = Vec::with_capacity(shape.len());
            for ch in 0..shape.channels {
                for rc in &row_cell {
                    for cc in &col_cell {
                        let cell = ch * cells * cells + rc * cells + cc;
                        t.push((0.5 + 0.5 * separation * pattern[cell]).clamp(0.0, 1.0));
                    }
                }
            }
            t
        })
        .collect();

    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let mut out = Vec::with_capacity(n_per_class * n_classes);
    for _ in 0..n_per_class {
        for (label, template) in templates.iter().enumerate() {
            let data = template.iter().map(|t| t + noise.sample(rng)).collect();
            out.push(LabeledImage { image: ImageTensor::from_clipped(shape, data)?, label });
        }
    }
    Ok(out)
}

/// `n` distinct sign patterns, balanced within each channel.
fn distinct_patterns<R: Rng + ?Sized>(
    n: usize,
    channels: usize,
    cells: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut patterns: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut tries = 0;
    while patterns.len() < n {
        let mut p = Vec::with_capacity(channels * cells);
        for _ in 0..channels {
            let mut plane: Vec<f64> = (0..cells)
                .map(|i| match (i < cells / 2, cells % 2 == 1 && i == cells - 1) {
                    (_, true) => 0.0,
                    (true, _) => 1.0,
                    _ => -1.0,
                })
                .collect();
            plane.shuffle(rng);
            p.extend(plane);
        }
        tries += 1;
        // tiny grids cannot always host n distinct patterns
        if !patterns.contains(&p) || tries > 1000 {
            patterns.push(p);
        }
    }
    patterns
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nearest_template_accuracy(data: &[LabeledImage], n_classes: usize) -> f64 {
        // class means act as templates
        let n = data[0].image.len();
        let mut means = vec![vec![0.0; n]; n_classes];
        let mut counts = vec![0usize; n_classes];
        for s in data {
            counts[s.label] += 1;
            means[s.label].iter_mut().zip(s.image.data()).for_each(|(m, v)| *m += v);
        }
        for (m, c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= *c as f64);
        }
        let correct = data
            .iter()
            .filter(|s| {
                let d: Vec<f64> = means
                    .iter()
                    .map(|m| m.iter().zip(s.image.data()).map(|(a, b)| (a - b).powi(2)).sum())
                    .collect();
                crate::tensor::argmax(&d.iter().map(|v: &f64| -v).collect::<Vec<_>>()) == s.label
            })
            .count();
        correct as f64 / data.len() as f64
    }

    #[test]
    fn large_separation_is_perfectly_separable() {
        let shape = Shape::new(3, 16, 16);
        let data = synthetic_blob_dataset(25, shape, 4, 10.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(data.len(), 100);
        assert_eq!(nearest_template_accuracy(&data, 4), 1.0);
    }

    #[test]
    fn empty_and_deterministic() {
        let shape = Shape::new(1, 4, 4);
        assert!(synthetic_blob_dataset(0, shape, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .is_empty());
        let a = synthetic_blob_dataset(3, shape, 3, 0.4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = synthetic_blob_dataset(3, shape, 3, 0.4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|s| s.label).collect::<Vec<_>>(), vec![0, 1, 2, 0, 1, 2, 0, 1, 2]);
        assert!(synthetic_blob_dataset(3, shape, 3, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn template_distance_scales_with_separation() {
        let shape = Shape::new(2, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let patterns = distinct_patterns(3, 2, 16, &mut rng);
        for p in &patterns {
            for plane in p.chunks(16) {
                assert_eq!(plane.iter().sum::<f64>(), 0.0);
            }
        }
        // class means at two separations: distance ratio follows the separation ratio
        let dist = |sep: f64| {
            let d = synthetic_blob_dataset(400, shape, 2, sep, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let mut m = [vec![0.0; shape.len()], vec![0.0; shape.len()]];
            for s in &d {
                m[s.label].iter_mut().zip(s.image.data()).for_each(|(a, v)| *a += v / 400.0);
            }
            m[0].iter().zip(&m[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let ratio = dist(0.4) / dist(0.2);
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }
}
