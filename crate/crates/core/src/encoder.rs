//! Frozen synthetic visual encoder.
//!
//! The agent "sees" through `W_p` rays spread over its field of view; each
//! ray is one column of a patch grid. Row `h` of a column looks out to a
//! band distance `r_h` (log-spaced in `[0.1, max_range]`): if the wall hit
//! by the ray is nearer than `r_h` the patch shows that wall, otherwise it
//! shows the floor at distance `r_h`. The soft band indicator blends the two
//! near the boundary. Walls carry a per-cell hashed texture, the floor a
//! texture field interpolated between hashed lattice nodes, so the pooled
//! embedding varies smoothly with position.
//!
//! Raw patch features `[band, depth/max_range, texture...]` are mapped
//! through one seeded `D × F` projection and L2-normalized per patch.

use thiserror::Error;

use crate::datastore::OfflineDataset;
use crate::mazesim::{MazeWorld, Pose, RayHit};
use crate::seeding::{derive_seed, rng_from};

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("pooled embedding is degenerate (zero mean patch vector)")]
    Degenerate,
    #[error("no observation has SSD above {threshold}; the goal set is empty")]
    EmptyGoalSet { threshold: f32 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("grid shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

pub const NEAREST_BAND: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub rows: usize,
    pub cols: usize,
    pub fov_deg: f64,
    pub max_range: f64,
    pub crop_fraction: f64,
    pub texture_dims: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 32,
            rows: 4,
            cols: 8,
            fov_deg: 120.0,
            max_range: 4.0,
            crop_fraction: 0.5,
            texture_dims: 16,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.dim == 0 || self.rows == 0 || self.cols == 0 || self.texture_dims == 0 {
            return bad("dim, rows, cols and texture_dims must be positive".into());
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return bad(format!("fov_deg {} outside (0, 360]", self.fov_deg));
        }
        if !(self.max_range > NEAREST_BAND) {
            return bad(format!("max_range {} must exceed {NEAREST_BAND}", self.max_range));
        }
        crop_extent(self.rows, self.cols, self.crop_fraction).map(|_| ())
    }

    pub fn raw_dims(&self) -> usize {
        2 + self.texture_dims
    }
}

/// `rows × cols × dim` patch features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * dim || rows == 0 || cols == 0 || dim == 0 {
            return Err(EncoderError::Shape(format!(
                "{} values for a {rows}x{cols}x{dim} grid",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::Shape("non-finite patch value".into()));
        }
        Ok(PatchGrid { rows, cols, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// Unit-norm pooled representation plus its spatial standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub ssd: f32,
}

/// Valid goal observations as `(episode, step)` references.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSet {
    pub indices: Vec<(u32, u32)>,
    pub threshold: f32,
}

impl GoalSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, episode: u32, step: u32) -> bool {
        self.indices.binary_search(&(episode, step)).is_ok()
    }
}

/// Rows and columns kept by a central crop, as `(row0, nrows, col0, ncols)`.
fn crop_extent(rows: usize, cols: usize, fraction: f64) -> Result<(usize, usize, usize, usize)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EncoderError::InvalidConfig(format!("crop_fraction {fraction} outside (0, 1]")));
    }
    let keep = |n: usize| (n as f64 * fraction + 1e-9).floor() as usize;
    let (kr, kc) = (keep(rows), keep(cols));
    if kr == 0 || kc == 0 {
        return Err(EncoderError::InvalidConfig(format!(
            "crop_fraction {fraction} keeps less than one patch of a {rows}x{cols} grid"
        )));
    }
    Ok(((rows - kr) / 2, kr, (cols - kc) / 2, kc))
}

/// Mean over the cropped patches of the per-dimension population standard
/// deviation.
pub fn spatial_std(grid: &PatchGrid, crop_fraction: f64) -> Result<f64> {
    let (r0, nr, c0, nc) = crop_extent(grid.rows, grid.cols, crop_fraction)?;
    let count = (nr * nc) as f64;
    let mut total = 0.0;
    for k in 0..grid.dim {
        let vals = (r0..r0 + nr).flat_map(|r| (c0..c0 + nc).map(move |c| (r, c)));
        let (mut sum, mut sq) = (0.0, 0.0);
        for (r, c) in vals {
            let v = grid.patch(r, c)[k];
            sum += v;
            sq += v * v;
        }
        let mean = sum / count;
        total += (sq / count - mean * mean).max(0.0).sqrt();
    }
    Ok(total / grid.dim as f64)
}

/// Mean patch, L2-normalized, with the SSD attached.
pub fn pool(grid: &PatchGrid, crop_fraction: f64) -> Result<Embedding> {
    let mut mean = vec![0.0f64; grid.dim];
    for patch in grid.data.chunks_exact(grid.dim) {
        for (m, v) in mean.iter_mut().zip(patch) {
            *m += v;
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-9) {
        return Err(EncoderError::Degenerate);
    }
    let ssd = spatial_std(grid, crop_fraction)?;
    Ok(Embedding {
        vector: mean.iter().map(|v| (v / norm) as f32).collect(),
        ssd: ssd as f32,
    })
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    /// `dim × raw_dims`, row-major.
    projection: Vec<f64>,
    bands: Vec<f64>,
    log_band_width: f64,
    texture_seed: u64,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.raw_dims();
        let mut rng = rng_from(derive_seed(cfg.seed, "encoder.projection"));
        let scale = 1.0 / (f as f64).sqrt();
        let projection = (0..cfg.dim * f)
            .map(|_| scale * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        let (lo, hi) = (NEAREST_BAND.ln(), cfg.max_range.ln());
        let bands: Vec<f64> = if cfg.rows == 1 {
            vec![cfg.max_range]
        } else {
            (0..cfg.rows)
                .map(|h| (lo + (hi - lo) * h as f64 / (cfg.rows - 1) as f64).exp())
                .collect()
        };
        let log_band_width = if cfg.rows == 1 { hi - lo } else { (hi - lo) / (cfg.rows - 1) as f64 };
        let texture_seed = derive_seed(cfg.seed, "encoder.texture");
        Ok(Encoder { cfg, projection, bands, log_band_width, texture_seed })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Band distances, nearest first.
    pub fn bands(&self) -> &[f64] {
        &self.bands
    }

    /// Soft indicator that row `h` sees the wall at `depth` (1) rather than
    /// floor (0). Exactly 0 or 1 away from the band edge.
    pub fn band_response(&self, h: usize, hit: &RayHit) -> f64 {
        if hit.cell.is_none() {
            return 0.0;
        }
        let d = hit.depth.max(1e-6);
        (0.5 + (self.bands[h].ln() - d.ln()) / self.log_band_width).clamp(0.0, 1.0)
    }

    pub fn encode(&self, world: &MazeWorld, pose: &Pose) -> PatchGrid {
        let hits = world.cast_rays(pose, self.cfg.cols, self.cfg.fov_deg.to_radians(), self.cfg.max_range);
        self.encode_hits(world.cell_size(), pose, &hits)
    }

    /// Patch grid for precomputed ray hits, one hit per column.
    pub fn encode_hits(&self, cell_size: f64, pose: &Pose, hits: &[RayHit]) -> PatchGrid {
        let cfg = &self.cfg;
        let f = cfg.raw_dims();
        let fov = cfg.fov_deg.to_radians();
        let mut data = Vec::with_capacity(cfg.rows * cfg.cols * cfg.dim);
        let mut raw = vec![0.0f64; f];
        let mut tex = vec![0.0f64; cfg.texture_dims];
        for h in 0..cfg.rows {
            for (w, hit) in hits.iter().enumerate().take(cfg.cols) {
                let s = self.band_response(h, hit);
                raw[0] = s;
                raw[1] = hit.depth / cfg.max_range;
                raw[2..].iter_mut().for_each(|v| *v = 0.0);
                if s > 0.0 {
                    if let Some((r, c)) = hit.cell {
                        self.wall_texture(r, c, &mut tex);
                        for (o, t) in raw[2..].iter_mut().zip(&tex) {
                            *o += s * t;
                        }
                    }
                }
                if s < 1.0 {
                    let offset = if cfg.cols == 1 {
                        0.0
                    } else {
                        fov * (w as f64 / (cfg.cols - 1) as f64 - 0.5)
                    };
                    let (sin, cos) = (pose.theta + offset).sin_cos();
                    let px = pose.x + self.bands[h] * cos;
                    let py = pose.y + self.bands[h] * sin;
                    self.floor_texture(px / cell_size, py / cell_size, &mut tex);
                    for (o, t) in raw[2..].iter_mut().zip(&tex) {
                        *o += (1.0 - s) * t;
                    }
                }
                self.project_into(&raw, &mut data);
            }
        }
        PatchGrid { rows: cfg.rows, cols: cfg.cols, dim: cfg.dim, data }
    }

    fn project_into(&self, raw: &[f64], out: &mut Vec<f64>) {
        let f = raw.len();
        let start = out.len();
        for k in 0..self.cfg.dim {
            let row = &self.projection[k * f..(k + 1) * f];
            out.push(row.iter().zip(raw).map(|(a, b)| a * b).sum());
        }
        let patch = &mut out[start..];
        let norm = patch.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            patch.iter_mut().for_each(|v| *v /= norm);
        }
    }

    /// Full pipeline for one pose: encode, then pool.
    pub fn embed(&self, world: &MazeWorld, pose: &Pose) -> Result<Embedding> {
        pool(&self.encode(world, pose), self.cfg.crop_fraction)
    }

    fn wall_texture(&self, row: isize, col: isize, out: &mut [f64]) {
        hashed_vector(self.texture_seed ^ 0x5741_4c4c, row, col, out);
    }

    /// Bilinear blend of hashed vectors on the lattice of cell centres.
    fn floor_texture(&self, gx: f64, gy: f64, out: &mut [f64]) {
        let (u, v) = (gx - 0.5, gy - 0.5);
        let (i0, j0) = (u.floor(), v.floor());
        let (fu, fv) = (u - i0, v - j0);
        let (i0, j0) = (i0 as isize, j0 as isize);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut node = vec![0.0; out.len()];
        for (di, dj, wgt) in [
            (0, 0, (1.0 - fu) * (1.0 - fv)),
            (1, 0, fu * (1.0 - fv)),
            (0, 1, (1.0 - fu) * fv),
            (1, 1, fu * fv),
        ] {
            if wgt == 0.0 {
                continue;
            }
            hashed_vector(self.texture_seed, j0 + dj, i0 + di, &mut node);
            for (o, n) in out.iter_mut().zip(&node) {
                *o += wgt * n;
            }
        }
    }
}

/// Deterministic zero-mean, unit-variance pseudo-random vector for a lattice
/// coordinate.
fn hashed_vector(seed: u64, a: isize, b: isize, out: &mut [f64]) {
    let base = mix(seed ^ mix((a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64)));
    let sqrt3 = 3f64.sqrt();
    for (k, o) in out.iter_mut().enumerate() {
        let bits = mix(base.wrapping_add(k as u64));
        let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
        *o = sqrt3 * (2.0 * unit - 1.0);
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Every observation whose SSD exceeds `threshold` (strictly).
pub fn build_goal_set(dataset: &OfflineDataset, threshold: f32) -> Result<GoalSet> {
    if dataset.total_steps() == 0 {
        return Err(EncoderError::EmptyDataset);
    }
    let mut indices = Vec::new();
    for (e, ep) in dataset.episodes().iter().enumerate() {
        for (t, ssd) in ep.ssd.iter().enumerate() {
            if *ssd > threshold {
                indices.push((e as u32, t as u32));
            }
        }
    }
    if indices.is_empty() {
        return Err(EncoderError::EmptyGoalSet { threshold });
    }
    Ok(GoalSet { indices, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mazesim::WorldParams;

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
    }

    #[test]
    fn encoding_is_deterministic_and_unit_norm() {
        let world = MazeWorld::builtin("standard", WorldParams::default()).unwrap();
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        let p = Pose::new(1.5, 1.5, 0.0);
        let a = enc.encode(&world, &p);
        assert_eq!(a, enc.encode(&world, &p));
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                let n: f64 = a.patch(r, c).iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
        let e = pool(&a, 0.5).unwrap();
        let n: f64 = e.vector.iter().map(|v| f64::from(*v).powi(2)).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-6);
        // same seed, fresh encoder: same frozen projection
        let enc2 = Encoder::new(EncoderConfig::default()).unwrap();
        assert_eq!(enc2.encode(&world, &p), a);
    }

    #[test]
    fn flat_wall_close_up_rows_are_uniform() {
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        let hits: Vec<RayHit> = (0..8)
            .map(|_| RayHit { depth: 0.05, cell: Some((3, 7)), point: (7.0, 3.5) })
            .collect();
        let grid = enc.encode_hits(1.0, &Pose::new(6.95, 3.5, 0.0), &hits);
        for r in 0..grid.rows() {
            for c in 1..grid.cols() {
                assert_eq!(grid.patch(r, c), grid.patch(r, 0));
            }
        }
        assert!(spatial_std(&grid, 0.5).unwrap() < 0.02);
    }

    #[test]
    fn wall_close_up_fails_ssd_threshold() {
        let world = MazeWorld::builtin("simple", WorldParams::default()).unwrap();
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        // radius 0.2: flush against the east wall at x = 7
        let close = enc.embed(&world, &Pose::new(6.79, 3.5, 0.0)).unwrap();
        assert!(close.ssd < 0.02, "ssd {}", close.ssd);
        let open = enc.embed(&world, &Pose::new(1.5, 3.5, 0.0)).unwrap();
        assert!(open.ssd > 0.02, "ssd {}", open.ssd);
    }

    #[test]
    fn ssd_population_convention() {
        let grid = PatchGrid::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        assert!((spatial_std(&grid, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let same = PatchGrid::new(2, 2, 3, vec![0.5; 12]).unwrap();
        assert_eq!(spatial_std(&same, 1.0).unwrap(), 0.0);
        assert!(matches!(spatial_std(&grid, 0.2), Err(EncoderError::InvalidConfig(_))));
        assert!(matches!(spatial_std(&grid, 0.0), Err(EncoderError::InvalidConfig(_))));
    }

    #[test]
    fn pool_cases() {
        let u = [0.6, 0.8, 0.0];
        let grid = PatchGrid::new(2, 2, 3, u.repeat(4)).unwrap();
        let e = pool(&grid, 1.0).unwrap();
        for (a, b) in e.vector.iter().zip(u) {
            assert!((f64::from(*a) - b).abs() < 1e-7);
        }
        let anti = PatchGrid::new(1, 2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        assert_eq!(pool(&anti, 1.0), Err(EncoderError::Degenerate));
    }

    #[test]
    fn encoder_config_validation() {
        assert!(Encoder::new(EncoderConfig { crop_fraction: 0.1, ..Default::default() }).is_err());
        assert!(Encoder::new(EncoderConfig { dim: 0, ..Default::default() }).is_err());
        // paper-scale grid accepted
        assert!(Encoder::new(EncoderConfig { rows: 28, cols: 49, ..Default::default() }).is_ok());
    }

    #[test]
    fn nearby_poses_look_alike() {
        let world = MazeWorld::builtin("simple", WorldParams::default()).unwrap();
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        let a = enc.embed(&world, &Pose::new(2.0, 2.0, 0.0)).unwrap();
        let b = enc.embed(&world, &Pose::new(2.1, 2.0, 0.0)).unwrap();
        let far = enc.embed(&world, &Pose::new(5.5, 5.5, 0.0)).unwrap();
        assert!(cosine(&a.vector, &b.vector) > cosine(&a.vector, &far.vector));
    }
}
