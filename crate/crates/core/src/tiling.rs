//! Tile-constant perturbations: a low-dimensional vector of tile values is
//! expanded to a full-resolution delta that is constant over square-ish
//! pixel blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelOracle;
use crate::tensor::{apply_perturbation, ImageTensor, Shape};

/// Cut positions `floor(i * extent / n_tiles)` for `i = 0..=n_tiles`.
///
/// Tiles produced by these cuts differ in width by at most one pixel.
pub fn tile_boundaries(extent: usize, n_tiles: usize) -> Result<Vec<usize>> {
    if n_tiles == 0 || n_tiles > extent {
        return Err(Error::InvalidGrid(format!(
            "{n_tiles} tiles do not fit an extent of {extent}"
        )));
    }
    Ok((0..=n_tiles).map(|i| i * extent / n_tiles).collect())
}

/// Maps each pixel index along one axis to its tile index.
fn tile_index_map(extent: usize, n_tiles: usize) -> Result<Vec<usize>> {
    let cuts = tile_boundaries(extent, n_tiles)?;
    let mut map = Vec::with_capacity(extent);
    for (tile, pair) in cuts.windows(2).enumerate() {
        map.extend(std::iter::repeat_n(tile, pair[1] - pair[0]));
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    n_tiles: usize,
    shape: Shape,
    per_channel: bool,
    #[serde(skip)]
    row_tile: Vec<usize>,
    #[serde(skip)]
    col_tile: Vec<usize>,
}

impl TileGrid {
    /// A grid with `n_tiles` tiles per side and one value per channel.
    pub fn new(shape: Shape, n_tiles: usize) -> Result<Self> {
        Self::with_channels(shape, n_tiles, true)
    }

    pub fn with_channels(shape: Shape, n_tiles: usize, per_channel: bool) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidGrid(format!("empty image shape {shape}")));
        }
        let row_tile = tile_index_map(shape.height, n_tiles)?;
        let col_tile = tile_index_map(shape.width, n_tiles)?;
        Ok(Self { n_tiles, shape, per_channel, row_tile, col_tile })
    }

    pub fn n_tiles(&self) -> usize {
        self.n_tiles
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn per_channel(&self) -> bool {
        self.per_channel
    }

    /// Number of free tile values.
    pub fn search_dimension(&self) -> usize {
        let per_plane = self.n_tiles * self.n_tiles;
        if self.per_channel {
            per_plane * self.shape.channels
        } else {
            per_plane
        }
    }

    /// Spreads tile values (ordered channel, tile row, tile column) over the
    /// full image.
    pub fn expand(&self, tile_values: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.shape.len()];
        self.expand_into(tile_values, &mut out)?;
        Ok(out)
    }

    pub fn expand_into(&self, tile_values: &[f64], out: &mut [f64]) -> Result<()> {
        if tile_values.len() != self.search_dimension() {
            return Err(Error::shape(self.search_dimension(), tile_values.len()));
        }
        if out.len() != self.shape.len() {
            return Err(Error::shape(self.shape.len(), out.len()));
        }
        let per_plane = self.n_tiles * self.n_tiles;
        let plane = self.shape.plane();
        for ch in 0..self.shape.channels {
            let offset = if self.per_channel { ch * per_plane } else { 0 };
            let dst = &mut out[ch * plane..(ch + 1) * plane];
            for (r, row) in dst.chunks_exact_mut(self.shape.width).enumerate() {
                let base = offset + self.row_tile[r] * self.n_tiles;
                for (c, px) in row.iter_mut().enumerate() {
                    *px = tile_values[base + self.col_tile[c]];
                }
            }
        }
        Ok(())
    }
}

/// Independent `±epsilon` draws, one per tile value.
pub fn random_signed_tiles<R: Rng + ?Sized>(
    grid: &TileGrid,
    epsilon: f64,
    rng: &mut R,
) -> Vec<f64> {
    (0..grid.search_dimension())
        .map(|_| if rng.random_bool(0.5) { epsilon } else { -epsilon })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SingleShotOutcome {
    pub success: bool,
    pub image: ImageTensor,
}

/// Draws one random tiled sign pattern, applies it and asks the model once.
/// Success means the predicted class moved away from `label`.
pub fn single_shot_tiled_attack<M, R>(
    model: &M,
    x: &ImageTensor,
    label: usize,
    epsilon: f64,
    grid: &TileGrid,
    rng: &mut R,
) -> Result<SingleShotOutcome>
where
    M: ModelOracle + ?Sized,
    R: Rng + ?Sized,
{
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if grid.shape() != x.shape() {
        return Err(Error::shape(grid.shape().len(), x.len()));
    }
    let tiles = random_signed_tiles(grid, epsilon, rng);
    let delta = grid.expand(&tiles)?;
    let image = apply_perturbation(x, &delta)?;
    let logits = model.logits(&image)?;
    Ok(SingleShotOutcome { success: logits.argmax() != label, image })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearModel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn boundary_examples() {
        assert_eq!(tile_boundaries(4, 2).unwrap(), vec![0, 2, 4]);
        assert_eq!(tile_boundaries(5, 2).unwrap(), vec![0, 2, 5]);
        assert!(matches!(tile_boundaries(3, 4), Err(Error::InvalidGrid(_))));
        assert!(tile_boundaries(3, 0).is_err());
    }

    #[test]
    fn boundaries_for_inception_sized_images() {
        let cuts = tile_boundaries(299, 30).unwrap();
        assert_eq!(cuts.len(), 31);
        assert_eq!(&cuts[..3], &[0, 9, 19]);
        assert_eq!(*cuts.last().unwrap(), 299);
        // independent evaluation of the floor rule
        for (i, c) in cuts.iter().enumerate() {
            assert_eq!(*c, ((i as f64) * 299.0 / 30.0).floor() as usize);
        }
        assert!(cuts.windows(2).all(|w| (9..=10).contains(&(w[1] - w[0]))));
    }

    #[test]
    fn expand_one_by_one_tiles_is_identity() {
        let shape = Shape::new(2, 3, 3);
        let grid = TileGrid::new(shape, 3).unwrap();
        let values: Vec<f64> = (0..18).map(f64::from).collect();
        assert_eq!(grid.expand(&values).unwrap(), values);
    }

    #[test]
    fn expand_single_tile_fills_channel() {
        let grid = TileGrid::new(Shape::new(3, 4, 5), 1).unwrap();
        let out = grid.expand(&[1.0, 2.0, 3.0]).unwrap();
        assert!(out[..20].iter().all(|v| *v == 1.0));
        assert!(out[20..40].iter().all(|v| *v == 2.0));
        assert!(out[40..].iter().all(|v| *v == 3.0));
    }

    #[test]
    fn expand_row_major_blocks() {
        let grid = TileGrid::new(Shape::new(1, 4, 4), 2).unwrap();
        let out = grid.expand(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(out, expected);
        assert!(matches!(grid.expand(&[1.0; 3]), Err(Error::Shape { expected: 4, actual: 3 })));
    }

    #[test]
    fn shared_channel_grid() {
        let grid = TileGrid::with_channels(Shape::new(3, 2, 2), 2, false).unwrap();
        assert_eq!(grid.search_dimension(), 4);
        let out = grid.expand(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(&out[..4], &out[4..8]);
        assert_eq!(&out[..4], &out[8..]);
        assert_eq!(TileGrid::new(Shape::new(3, 8, 8), 4).unwrap().search_dimension(), 48);
        assert!(TileGrid::new(Shape::new(3, 8, 6), 7).is_err());
    }

    #[test]
    fn signed_tiles_support_and_determinism() {
        let grid = TileGrid::new(Shape::new(3, 8, 8), 4).unwrap();
        let a = random_signed_tiles(&grid, 0.05, &mut ChaCha8Rng::seed_from_u64(3));
        let b = random_signed_tiles(&grid, 0.05, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.iter().all(|v| *v == 0.05 || *v == -0.05));
    }

    #[test]
    fn signed_tiles_are_balanced() {
        let grid = TileGrid::new(Shape::new(1, 1, 1), 1).unwrap();
        let eps = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| random_signed_tiles(&grid, eps, &mut rng)[0])
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 3.0 * eps * 10f64.powf(-2.5), "mean {mean}");
    }

    fn mean_model(shape: Shape, weight: f64, bias: f64) -> LinearModel {
        // class 1 score: weight * mean(x) + bias; class 0 score: 0
        let n = shape.len();
        let mut w = vec![0.0; n];
        w.extend(std::iter::repeat_n(weight / n as f64, n));
        LinearModel::new(shape, 2, w, vec![0.0, bias]).unwrap()
    }

    #[test]
    fn zero_epsilon_never_fools() {
        let shape = Shape::new(1, 4, 4);
        let model = mean_model(shape, 1.0, 0.1);
        let x = ImageTensor::filled(shape, 0.5).unwrap();
        let grid = TileGrid::new(shape, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let out = single_shot_tiled_attack(&model, &x, 1, 0.0, &grid, &mut rng).unwrap();
            assert!(!out.success);
        }
    }

    #[test]
    fn single_tile_flips_small_margin_linear_model() {
        // score1 - score0 = mean(x) - 0.52; x = 0.55 gives margin 0.03. One
        // tile per channel moves mean(x) by exactly ±eps, so a -0.05 draw flips.
        let shape = Shape::new(1, 4, 4);
        let model = mean_model(shape, 1.0, -0.52);
        let x = ImageTensor::filled(shape, 0.55).unwrap();
        assert_eq!(model.logits(&x).unwrap().argmax(), 1);
        let grid = TileGrid::new(shape, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let outcomes: Vec<bool> = (0..40)
            .map(|_| single_shot_tiled_attack(&model, &x, 1, 0.05, &grid, &mut rng).unwrap().success)
            .collect();
        assert!(outcomes.iter().any(|s| *s));
        assert!(outcomes.iter().any(|s| !*s));
        for (s, img) in [(true, 0.5), (false, 0.6)] {
            let pert = ImageTensor::filled(shape, img).unwrap();
            assert_eq!(model.logits(&pert).unwrap().argmax() != 1, s);
        }
    }

    proptest! {
        #[test]
        fn expansion_preserves_sup_norm_and_linearity(
            n_tiles in 1usize..6,
            seed in any::<u64>(),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let grid = TileGrid::new(Shape::new(2, 7, 6), n_tiles).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = grid.search_dimension();
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eu = grid.expand(&u).unwrap();
            let ev = grid.expand(&v).unwrap();
            let sup = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert_eq!(sup(&eu), sup(&u));
            let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
            let ec = grid.expand(&combo).unwrap();
            for i in 0..ec.len() {
                prop_assert!((ec[i] - (alpha * eu[i] + beta * ev[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn tile_areas_cover_the_image(h in 1usize..64, w in 1usize..64, n in 1usize..64) {
            prop_assume!(n <= h.min(w));
            let rows = tile_boundaries(h, n).unwrap();
            let cols = tile_boundaries(w, n).unwrap();
            let mut area = 0;
            for r in rows.windows(2) {
                for c in cols.windows(2) {
                    area += (r[1] - r[0]) * (c[1] - c[0]);
                }
            }
            prop_assert_eq!(area, h * w);
            prop_assert!(rows.windows(2).all(|p| p[1] > p[0]));
            let widths: Vec<usize> = rows.windows(2).map(|p| p[1] - p[0]).collect();
            prop_assert!(widths.iter().max().unwrap() - widths.iter().min().unwrap() <= 1);
        }
    }
}
