//! Exploration noise processes.
//!
//! Every generator produces a `length × dims` matrix, one independent
//! process per action dimension. Pink processes are synthesized in the
//! frequency domain: a complex Gaussian spectrum is shaped by `f^(-beta/2)`,
//! transformed back with an inverse FFT and standardized. The pink-uniform
//! variant then pushes each sample through the standard normal CDF and
//! rescales it to the action range, which flattens the marginal while
//! keeping the sample ordering (and thus the temporal structure) intact.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::seeding::{derive_indexed, rng_from};

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("invalid noise config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid range: a_min {min} must be below a_max {max}")]
    InvalidRange { min: f64, max: f64 },
    #[error("sequence too short: {len} < {min}")]
    TooShort { len: usize, min: usize },
}

pub type Result<T> = std::result::Result<T, NoiseError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    WhiteUniform,
    WhiteGaussian,
    Ou,
    PinkGaussian,
    PinkUniform,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 5] = [
        NoiseKind::WhiteUniform,
        NoiseKind::WhiteGaussian,
        NoiseKind::Ou,
        NoiseKind::PinkGaussian,
        NoiseKind::PinkUniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::WhiteUniform => "white-uniform",
            NoiseKind::WhiteGaussian => "white-gaussian",
            NoiseKind::Ou => "ou",
            NoiseKind::PinkGaussian => "pink-gaussian",
            NoiseKind::PinkUniform => "pink-uniform",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| NoiseError::InvalidConfig(format!("unknown noise kind `{s}`")))
    }
}

/// Closed interval an action component lives in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionRange {
    pub min: f64,
    pub max: f64,
}

impl ActionRange {
    pub const UNIT: ActionRange = ActionRange { min: -1.0, max: 1.0 };

    pub fn new(min: f64, max: f64) -> Result<Self> {
        let r = ActionRange { min, max };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min < self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(NoiseError::InvalidRange { min: self.min, max: self.max });
        }
        Ok(())
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.max - self.min)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub length: usize,
    pub dims: usize,
    /// Spectral exponent of the pink kinds.
    pub beta: f64,
    /// Marginal standard deviation of the Gaussian kinds, in half-range units.
    pub sigma: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub range: ActionRange,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: NoiseKind::PinkUniform,
            length: 1024,
            dims: 2,
            beta: 1.0,
            sigma: 0.5,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            range: ActionRange::UNIT,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(NoiseError::InvalidConfig(format!("length {} < 2", self.length)));
        }
        if self.dims < 1 {
            return Err(NoiseError::InvalidConfig("dims must be at least 1".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(NoiseError::InvalidConfig(format!("beta {} < 0", self.beta)));
        }
        if !(self.sigma > 0.0) {
            return Err(NoiseError::InvalidConfig(format!("sigma {} <= 0", self.sigma)));
        }
        if self.kind == NoiseKind::Ou {
            if !(self.ou_theta > 0.0) {
                return Err(NoiseError::InvalidConfig(format!("ou_theta {} <= 0", self.ou_theta)));
            }
            if !(self.ou_sigma >= 0.0) {
                return Err(NoiseError::InvalidConfig(format!("ou_sigma {} < 0", self.ou_sigma)));
            }
        }
        self.range.validate()
    }
}

/// Row-major `length × dims` matrix of action components.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSequence {
    length: usize,
    dims: usize,
    values: Vec<f64>,
    ranges: Vec<(f64, f64)>,
}

impl NoiseSequence {
    fn from_columns(columns: Vec<Vec<f64>>, ranges: Vec<(f64, f64)>) -> Self {
        let dims = columns.len();
        let length = columns.first().map_or(0, Vec::len);
        let mut values = vec![0.0; length * dims];
        for (d, col) in columns.iter().enumerate() {
            for (t, v) in col.iter().enumerate() {
                values[t * dims + d] = *v;
            }
        }
        NoiseSequence { length, dims, values, ranges }
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.dims + d]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.length).map(|t| self.get(t, d)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-dimension support, `(-inf, inf)` for unbounded stages.
    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    /// CSV dump: `step,a0,a1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = (0..self.dims).map(|d| format!("a{d}")).collect();
        writeln!(w, "step,{}", header.join(","))?;
        for t in 0..self.length {
            let row: Vec<String> = self.row(t).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Scale used inside `Φ(x / σ)` of the probability integral transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PitScale {
    /// Per-dimension population standard deviation of the input.
    Empirical,
    Fixed(f64),
}

/// Dispatch on `cfg.kind`. Bounded kinds are clamped to `cfg.range`.
pub fn generate(cfg: &NoiseConfig) -> Result<NoiseSequence> {
    cfg.validate()?;
    let range = cfg.range;
    let n = cfg.length;
    match cfg.kind {
        NoiseKind::WhiteUniform => gen_white_uniform(n, cfg.dims, range, cfg.seed),
        NoiseKind::WhiteGaussian => {
            let stage = gen_white_gaussian(n, cfg.dims, cfg.seed);
            Ok(scale_and_clamp(&stage, cfg.sigma, range))
        }
        NoiseKind::Ou => {
            let raw = gen_ou(n, cfg.dims, cfg.ou_theta, cfg.ou_sigma, 0.0, cfg.seed)?;
            Ok(scale_and_clamp(&raw, 1.0, range))
        }
        NoiseKind::PinkGaussian => {
            let stage = gen_pink_gaussian(n, cfg.dims, cfg.beta, cfg.seed)?;
            Ok(scale_and_clamp(&stage, cfg.sigma, range))
        }
        NoiseKind::PinkUniform => {
            let stage = gen_pink_gaussian(n, cfg.dims, cfg.beta, cfg.seed)?;
            to_pink_uniform(&stage, PitScale::Empirical, range)
        }
    }
}

/// `mid + half_width * scale * x`, clamped.
fn scale_and_clamp(seq: &NoiseSequence, scale: f64, range: ActionRange) -> NoiseSequence {
    let values = seq
        .values
        .iter()
        .map(|x| range.clamp(range.mid() + range.half_width() * scale * x))
        .collect();
    NoiseSequence {
        length: seq.length,
        dims: seq.dims,
        values,
        ranges: vec![(range.min, range.max); seq.dims],
    }
}

fn gen_white_gaussian(n: usize, dims: usize, seed: u64) -> NoiseSequence {
    let columns = (0..dims)
        .map(|d| {
            let mut rng = rng_from(derive_indexed(seed, d as u64));
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    NoiseSequence::from_columns(columns, vec![(f64::NEG_INFINITY, f64::INFINITY); dims])
}

/// Standardized 1/f^beta Gaussian stage, zero mean and unit population
/// variance per dimension.
pub fn gen_pink_gaussian(n: usize, dims: usize, beta: f64, seed: u64) -> Result<NoiseSequence> {
    if n < 2 {
        return Err(NoiseError::InvalidConfig(format!("length {n} < 2")));
    }
    if !(beta >= 0.0) {
        return Err(NoiseError::InvalidConfig(format!("beta {beta} < 0")));
    }
    if dims < 1 {
        return Err(NoiseError::InvalidConfig("dims must be at least 1".into()));
    }
    let m = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(m);

    let columns = (0..dims)
        .map(|d| {
            let mut rng = rng_from(derive_indexed(seed, d as u64));
            let mut spectrum = vec![Complex::new(0.0, 0.0); m];
            for k in 1..=m / 2 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let amp = (k as f64).powf(-beta / 2.0);
                // The Nyquist bin of a real signal has no imaginary part.
                let im = if k == m / 2 { 0.0 } else { im };
                spectrum[k] = Complex::new(re * amp, im * amp);
                if k != m / 2 {
                    spectrum[m - k] = spectrum[k].conj();
                }
            }
            ifft.process(&mut spectrum);
            let mut col: Vec<f64> = spectrum[..n].iter().map(|c| c.re).collect();
            standardize(&mut col);
            col
        })
        .collect();
    Ok(NoiseSequence::from_columns(
        columns,
        vec![(f64::NEG_INFINITY, f64::INFINITY); dims],
    ))
}

fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn standardize(xs: &mut [f64]) {
    let (mean, std) = mean_and_std(xs);
    // A constant column can only come out of a degenerate spectrum; leave it centered.
    let inv = if std > 0.0 { 1.0 / std } else { 1.0 };
    for x in xs.iter_mut() {
        *x = (*x - mean) * inv;
    }
}

/// Standard normal CDF, `0.5 * erfc(-x / sqrt 2)` with the fdlibm erfc.
pub fn gaussian_cdf(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(NoiseError::InvalidInput("gaussian_cdf of NaN".into()));
    }
    Ok(0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Probability integral transform of a Gaussian stage onto `range`:
/// `a = a_min + (a_max - a_min) * Φ(x / σ)`.
pub fn to_pink_uniform(
    stage: &NoiseSequence,
    scale: PitScale,
    range: ActionRange,
) -> Result<NoiseSequence> {
    range.validate()?;
    let columns = (0..stage.dims)
        .map(|d| {
            let col = stage.column(d);
            let sigma = match scale {
                PitScale::Empirical => mean_and_std(&col).1,
                PitScale::Fixed(s) => s,
            };
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(NoiseError::InvalidInput(format!(
                    "dimension {d} has non-positive scale {sigma}"
                )));
            }
            col.iter()
                .map(|x| {
                    let u = gaussian_cdf(x / sigma)?;
                    Ok(range.clamp(range.min + (range.max - range.min) * u))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseSequence::from_columns(columns, vec![(range.min, range.max); stage.dims]))
}

/// Raw (unclamped) Ornstein-Uhlenbeck process with unit time step:
/// `x[t+1] = x[t] - theta * x[t] + sigma * xi[t]`, starting from `x0`.
pub fn gen_ou(
    n: usize,
    dims: usize,
    theta: f64,
    sigma: f64,
    x0: f64,
    seed: u64,
) -> Result<NoiseSequence> {
    if !(theta > 0.0) {
        return Err(NoiseError::InvalidConfig(format!("ou_theta {theta} <= 0")));
    }
    if n < 1 || dims < 1 {
        return Err(NoiseError::InvalidConfig("empty OU sequence".into()));
    }
    let columns = (0..dims)
        .map(|d| {
            let mut rng = rng_from(derive_indexed(seed, d as u64));
            let mut x = x0;
            let mut col = Vec::with_capacity(n);
            for _ in 0..n {
                col.push(x);
                let xi: f64 = rng.sample(StandardNormal);
                x += theta * (0.0 - x) + sigma * xi;
            }
            col
        })
        .collect();
    Ok(NoiseSequence::from_columns(
        columns,
        vec![(f64::NEG_INFINITY, f64::INFINITY); dims],
    ))
}

/// I.i.d. `Unif(a_min, a_max)` entries.
pub fn gen_white_uniform(n: usize, dims: usize, range: ActionRange, seed: u64) -> Result<NoiseSequence> {
    range.validate()?;
    let columns = (0..dims)
        .map(|d| {
            let mut rng = rng_from(derive_indexed(seed, d as u64));
            (0..n).map(|_| rng.random_range(range.min..=range.max)).collect()
        })
        .collect();
    Ok(NoiseSequence::from_columns(columns, vec![(range.min, range.max); dims]))
}

pub const PSD_MIN_LEN: usize = 1024;

/// Least-squares slope of log10 periodogram power against log10 frequency,
/// restricted to the two decades centred (geometrically) on the available
/// frequency span `1..=n/2`.
pub fn psd_slope(seq: &[f64]) -> Result<f64> {
    let n = seq.len();
    if n < PSD_MIN_LEN {
        return Err(NoiseError::TooShort { len: n, min: PSD_MIN_LEN });
    }
    let mean = seq.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = seq.iter().map(|x| Complex::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf.iter().map(|c| c.norm_sqr()).collect();
    slope_over_middle_decades(&power, n)
}

/// Shared by `psd_slope` and by test oracles that build their own periodogram.
pub fn slope_over_middle_decades(power: &[f64], n: usize) -> Result<f64> {
    let top = (n / 2) as f64;
    let centre = top.log10() / 2.0;
    let (lo, hi) = (10f64.powf(centre - 1.0), 10f64.powf(centre + 1.0));
    let pts: Vec<(f64, f64)> = (1..=n / 2)
        .filter(|&k| (k as f64) >= lo && (k as f64) <= hi && power[k] > 0.0)
        .map(|k| ((k as f64).log10(), power[k].log10()))
        .collect();
    if pts.len() < 2 {
        return Err(NoiseError::TooShort { len: n, min: PSD_MIN_LEN });
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag1_autocorr(xs: &[f64]) -> f64 {
        let (mean, std) = mean_and_std(xs);
        let n = xs.len();
        let cov: f64 = (0..n - 1).map(|t| (xs[t] - mean) * (xs[t + 1] - mean)).sum::<f64>()
            / (n - 1) as f64;
        cov / (std * std)
    }

    /// Two-sided KS statistic against Unif(lo, hi) via the empirical CDF.
    fn ks_uniform(xs: &[f64], lo: f64, hi: f64) -> f64 {
        let mut s = xs.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = s.len() as f64;
        s.iter()
            .enumerate()
            .map(|(i, x)| {
                let f = (x - lo) / (hi - lo);
                let above = (i + 1) as f64 / n - f;
                let below = f - i as f64 / n;
                above.max(below)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn pink_slope_beta_one_and_zero() {
        let n = 1 << 16;
        let pink = gen_pink_gaussian(n, 1, 1.0, 11).unwrap();
        let s = psd_slope(&pink.column(0)).unwrap();
        assert!((-1.15..=-0.85).contains(&s), "slope {s}");
        let white = gen_pink_gaussian(n, 1, 0.0, 11).unwrap();
        let s = psd_slope(&white.column(0)).unwrap();
        assert!((-0.1..=0.1).contains(&s), "slope {s}");
    }

    #[test]
    fn pink_stage_is_standardized() {
        let seq = gen_pink_gaussian(1 << 16, 2, 1.0, 3).unwrap();
        for d in 0..2 {
            let (m, s) = mean_and_std(&seq.column(d));
            assert!(m.abs() < 1e-9, "mean {m}");
            assert!((s * s - 1.0).abs() < 1e-9, "var {}", s * s);
        }
    }

    #[test]
    fn pink_rejects_bad_config() {
        assert!(matches!(gen_pink_gaussian(1, 1, 1.0, 0), Err(NoiseError::InvalidConfig(_))));
        assert!(matches!(gen_pink_gaussian(64, 1, -0.5, 0), Err(NoiseError::InvalidConfig(_))));
    }

    #[test]
    fn non_power_of_two_length_is_truncated() {
        let seq = gen_pink_gaussian(1000, 3, 1.0, 5).unwrap();
        assert_eq!(seq.len(), 1000);
        assert_eq!(seq.dims(), 3);
        assert!(seq.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cdf_known_points() {
        assert_eq!(gaussian_cdf(0.0).unwrap(), 0.5);
        assert!((gaussian_cdf(1.959964).unwrap() - 0.975).abs() < 1e-6);
        assert!(gaussian_cdf(-8.0).unwrap() < 1e-14);
        assert!(gaussian_cdf(-8.0).unwrap() > 0.0);
        assert!(matches!(gaussian_cdf(f64::NAN), Err(NoiseError::InvalidInput(_))));
    }

    #[test]
    fn pit_midpoint_and_range_check() {
        let stage = NoiseSequence::from_columns(vec![vec![0.0, 1.0, -1.0]], vec![(f64::NEG_INFINITY, f64::INFINITY)]);
        let out = to_pink_uniform(&stage, PitScale::Fixed(1.0), ActionRange::UNIT).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
        assert!(out.get(1, 0) > 0.0 && out.get(2, 0) < 0.0);
        let bad = ActionRange { min: 1.0, max: 1.0 };
        assert!(matches!(
            to_pink_uniform(&stage, PitScale::Fixed(1.0), bad),
            Err(NoiseError::InvalidRange { .. })
        ));
    }

    #[test]
    fn ou_stationary_variance_and_autocorrelation() {
        let (theta, sigma) = (0.15, 0.2);
        let seq = gen_ou(1_000_000, 1, theta, sigma, 0.0, 21).unwrap();
        let col = seq.column(0);
        let (_, std) = mean_and_std(&col);
        // AR(1) x' = (1-θ)x + σξ has stationary variance σ²/(1-(1-θ)²).
        let closed = sigma * sigma / (2.0 * theta - theta * theta);
        assert!((std * std / closed - 1.0).abs() < 0.05, "var {} vs {closed}", std * std);
        let rho = lag1_autocorr(&col);
        assert!((rho / (1.0 - theta) - 1.0).abs() < 0.02, "rho {rho}");
    }

    #[test]
    fn ou_without_diffusion_decays_geometrically() {
        let seq = gen_ou(20, 1, 0.25, 0.0, 1.0, 0).unwrap();
        for t in 0..20 {
            let expected = 0.75f64.powi(t as i32);
            assert!((seq.get(t, 0) - expected).abs() < 1e-12);
        }
        assert!(gen_ou(10, 1, 0.0, 0.1, 0.0, 0).is_err());
    }

    #[test]
    fn white_uniform_properties() {
        let seq = gen_white_uniform(1_000_000, 1, ActionRange::UNIT, 8).unwrap();
        let col = seq.column(0);
        assert!(lag1_autocorr(&col).abs() < 0.01);
        assert!(col.iter().all(|v| (-1.0..=1.0).contains(v)));
        let small = gen_white_uniform(100_000, 1, ActionRange::new(0.0, 1.0).unwrap(), 9).unwrap();
        assert!(ks_uniform(&small.column(0), 0.0, 1.0) < 0.02);
        let again = gen_white_uniform(100_000, 1, ActionRange::new(0.0, 1.0).unwrap(), 9).unwrap();
        assert_eq!(small, again);
        assert!(gen_white_uniform(10, 1, ActionRange { min: 0.0, max: -1.0 }, 0).is_err());
    }

    #[test]
    fn pink_uniform_marginal_is_flat() {
        let stage = gen_pink_gaussian(100_000, 1, 1.0, 12).unwrap();
        let out = to_pink_uniform(&stage, PitScale::Empirical, ActionRange::new(0.0, 1.0).unwrap()).unwrap();
        assert!(ks_uniform(&out.column(0), 0.0, 1.0) < 0.02);
    }

    #[test]
    fn psd_slope_rejects_short_input() {
        assert!(matches!(psd_slope(&[0.0; 100]), Err(NoiseError::TooShort { .. })));
    }

    #[test]
    fn generate_dispatch_respects_bounds() {
        for kind in NoiseKind::ALL {
            let cfg = NoiseConfig { kind, length: 4096, dims: 2, seed: 4, ..Default::default() };
            let seq = generate(&cfg).unwrap();
            assert_eq!(seq.len(), 4096);
            assert!(seq.values().iter().all(|v| (-1.0..=1.0).contains(v)), "{kind}");
            assert_eq!(generate(&cfg).unwrap(), seq);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in NoiseKind::ALL {
            assert_eq!(kind.name().parse::<NoiseKind>().unwrap(), kind);
        }
        assert!("brown".parse::<NoiseKind>().is_err());
    }

    #[test]
    fn csv_layout() {
        let seq = gen_white_uniform(2, 2, ActionRange::UNIT, 0).unwrap();
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,a0,a1");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,"));
    }
}
