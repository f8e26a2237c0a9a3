//! Synthetic regression data, train/test splits and the LGBB lift table.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Noise-free regression signal `sin(10 x) x^2`.
pub fn sine_signal(x: f64) -> f64 {
    (10.0 * x).sin() * x * x
}

/// `n` points with `x ~ U[x_low, x_high)` and `y = sin(10x) x^2 + N(0, noise_variance)`.
pub fn gen_sine_dataset(n: usize, x_low: f64, x_high: f64, noise_variance: f64, seed: u64) -> Result<Dataset> {
    if !(x_low < x_high) || !x_low.is_finite() || !x_high.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid x range [{x_low}, {x_high}]")));
    }
    if !(noise_variance >= 0.0) {
        return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = noise_variance.sqrt();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = rng.gen_range(x_low..x_high);
        let eps: f64 = rng.sample(StandardNormal);
        x.push(xi);
        y.push(sine_signal(xi) + sd * eps);
    }
    Ok(Dataset::from_xy(&x, &y)?
        .with_meta("generator", "sine")
        .with_meta("seed", seed))
}

/// Training region of the complement split.
pub const COMPLEMENT_TRAIN: (f64, f64) = (-1.7, 1.7);
/// Outer bounds of the complement test region, `[-2.8, -1.7) U (1.7, 1.9)`.
pub const COMPLEMENT_TEST_OUTER: (f64, f64) = (-2.8, 1.9);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    Random,
    ComplementRegion,
    RelatedRegion,
    LgbbBeta4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn random(train_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            kind: SplitKind::Random,
            train_fraction,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SplitKind::Random && !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

fn nonempty_pair(train: Vec<usize>, test: Vec<usize>, data: &Dataset, what: &str) -> Result<(Dataset, Dataset)> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{what} split leaves an empty side ({} train, {} test)",
            train.len(),
            test.len()
        )));
    }
    Ok((data.select(&train)?, data.select(&test)?))
}

/// Train on `x in [-1.7, 1.7]`, test on `x in [-2.8, -1.7) U (1.7, 1.9)`.
///
/// Points outside both regions are rejected so the split stays a partition.
pub fn ood_complement_split(data: &Dataset) -> Result<(Dataset, Dataset)> {
    let (lo, hi) = COMPLEMENT_TRAIN;
    let (outer_lo, outer_hi) = COMPLEMENT_TEST_OUTER;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, row) in data.x.outer_iter().enumerate() {
        let x = row[0];
        if (lo..=hi).contains(&x) {
            train.push(i);
        } else if (outer_lo..lo).contains(&x) || (x > hi && x < outer_hi) {
            test.push(i);
        } else {
            return Err(Error::InvalidArgument(format!(
                "x = {x} lies outside both complement regions"
            )));
        }
    }
    nonempty_pair(train, test, data, "complement")
}

pub const RELATED_TRAIN_SIZE: usize = 450;
pub const RELATED_TEST_SIZE: usize = 50;
pub const RELATED_NOISE_SD: f64 = 0.05;
/// Interval of training inputs; test inputs cover all of `[0, 1)`.
pub const RELATED_TRAIN_REGION: (f64, f64) = (0.05, 0.95);

/// 450 training points on an inner interval and 50 test points on `[0, 1)`,
/// the test sample redrawn until its range strictly contains the training range.
pub fn gen_related_dataset(seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| sine_signal(xi) + RELATED_NOISE_SD * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y)
    };
    let (tx, ty) = draw(RELATED_TRAIN_SIZE, RELATED_TRAIN_REGION.0, RELATED_TRAIN_REGION.1, &mut rng);
    let train_min = tx.iter().copied().fold(f64::INFINITY, f64::min);
    let train_max = tx.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..10_000 {
        let (sx, sy) = draw(RELATED_TEST_SIZE, 0.0, 1.0, &mut rng);
        let test_min = sx.iter().copied().fold(f64::INFINITY, f64::min);
        let test_max = sx.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if test_min < train_min && test_max > train_max {
            let train = Dataset::from_xy(&tx, &ty)?.with_meta("split", "related-train").with_meta("seed", seed);
            let test = Dataset::from_xy(&sx, &sy)?.with_meta("split", "related-test").with_meta("seed", seed);
            return Ok((train, test));
        }
    }
    Err(Error::InvalidArgument("could not draw a strictly broader test region".into()))
}

pub const LGBB_COLUMNS: [&str; 4] = ["mach", "alpha", "beta", "lift"];
pub const LGBB_BETA_LEVELS: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 3.0, 4.0];
pub const LGBB_ROWS: usize = 3167;

/// LGBB table with any out-of-range warnings raised while reading it.
#[derive(Debug, Clone, PartialEq)]
pub struct LgbbTable {
    pub data: Dataset,
    pub warnings: Vec<String>,
}

fn range_warnings(line: usize, mach: f64, alpha: f64, beta: f64) -> Vec<String> {
    let mut w = Vec::new();
    if !(0.0..=6.0).contains(&mach) {
        w.push(format!("line {line}: mach {mach} outside [0, 6]"));
    }
    if !(-5.0..=30.0).contains(&alpha) {
        w.push(format!("line {line}: alpha {alpha} outside [-5, 30]"));
    }
    if !LGBB_BETA_LEVELS.contains(&beta) {
        w.push(format!("line {line}: beta {beta} not one of {LGBB_BETA_LEVELS:?}"));
    }
    w
}

/// Reads a `mach,alpha,beta,lift` CSV. Columns may appear in any order; extra columns are ignored.
pub fn load_lgbb_csv(path: &Path) -> Result<LgbbTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 1, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(LGBB_COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column `{name}`"),
        })?;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut warnings = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, i + 2, e))?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        let mut vals = [0.0; 4];
        for (v, (&col, name)) in vals.iter_mut().zip(idx.iter().zip(LGBB_COLUMNS)) {
            let raw = record.get(col).unwrap_or("");
            *v = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("column `{name}`: cannot parse `{raw}` as a finite number"),
            })?;
        }
        warnings.extend(range_warnings(line, vals[0], vals[1], vals[2]));
        xs.extend_from_slice(&vals[..3]);
        ys.push(vals[3]);
    }
    if ys.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "no data rows".into(),
        });
    }
    let n = ys.len();
    let data = Dataset::new(
        Array2::from_shape_vec((n, 3), xs).expect("three inputs per row"),
        Array2::from_shape_vec((n, 1), ys).expect("one output per row"),
    )?
    .with_meta("source", path.display());
    Ok(LgbbTable { data, warnings })
}

fn csv_error(path: &Path, line: usize, e: csv::Error) -> Error {
    let line = e.position().map_or(line, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Smooth stand-in for the lift response of the glide-back booster.
pub fn lgbb_surrogate_lift(mach: f64, alpha: f64, beta: f64) -> f64 {
    let a = alpha.to_radians();
    let compress = 1.0 / (1.0 + 0.8 * (-(mach - 1.0) * (mach - 1.0) / 0.3).exp());
    let base = 1.1 * (2.0 * a).sin() * (1.0 - 0.08 * mach) * compress;
    let stall = 0.25 * (1.0 + ((alpha - 18.0) / 3.0).tanh()) * (a).sin();
    base - stall * 0.5 - 0.015 * beta * beta * a.cos() + 0.02 * beta * (mach / 6.0)
}

/// `n` rows on the LGBB input box with small Gaussian measurement noise.
pub fn gen_lgbb_surrogate(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(3 * n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let mach = rng.gen_range(0.0..6.0);
        let alpha = rng.gen_range(-5.0..30.0);
        let beta = *LGBB_BETA_LEVELS.choose(&mut rng).expect("non-empty");
        let eps: f64 = rng.sample(StandardNormal);
        xs.extend_from_slice(&[mach, alpha, beta]);
        ys.push(lgbb_surrogate_lift(mach, alpha, beta) + noise_sd * eps);
    }
    Ok(Dataset::new(
        Array2::from_shape_vec((n, 3), xs).expect("three inputs per row"),
        Array2::from_shape_vec((n, 1), ys).expect("one output per row"),
    )?
    .with_meta("generator", "lgbb-surrogate")
    .with_meta("seed", seed))
}

/// Writes a dataset with LGBB column names.
pub fn write_lgbb_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, 0, e))?;
    w.write_record(LGBB_COLUMNS).map_err(|e| csv_error(path, 0, e))?;
    for (x, y) in data.x.outer_iter().zip(data.y.outer_iter()) {
        w.write_record([x[0], x[1], x[2], y[0]].iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(path, 0, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Random or sideslip-angle split of an LGBB table (beta is input column 2).
pub fn lgbb_splits(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    match spec.kind {
        SplitKind::Random => random_split(data, spec.train_fraction, spec.seed),
        SplitKind::LgbbBeta4 => {
            if data.input_dim() < 3 {
                return Err(Error::InvalidArgument("beta split needs three inputs".into()));
            }
            let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| data.x[[i, 2]] == 4.0);
            nonempty_pair(train, test, data, "beta = 4")
        }
        other => Err(Error::InvalidConfig(format!("{other:?} is not an LGBB split"))),
    }
}

/// Seeded shuffle, first `floor(fraction * N)` rows to train.
pub fn random_split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction * data.len() as f64).floor() as usize;
    let test = idx.split_off(cut);
    nonempty_pair(idx, test, data, "random")
}

/// Per-column affine maps fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

fn column_stats(a: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let mean = a.mean_axis(Axis(0)).expect("non-empty");
    let std: Vec<f64> = a
        .axis_iter(Axis(1))
        .zip(mean.iter())
        .map(|(c, m)| {
            let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / c.len() as f64;
            // constant columns are only centred
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean.to_vec(), std)
}

fn affine(a: &Array2<f64>, shift: &[f64], scale: &[f64], inverse: bool) -> Array2<f64> {
    let shift = Array1::from(shift.to_vec());
    let scale = Array1::from(scale.to_vec());
    if inverse {
        a * &scale + &shift
    } else {
        (a - &shift) / &scale
    }
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Self {
        let (x_mean, x_std) = column_stats(&train.x);
        let (y_mean, y_std) = column_stats(&train.y);
        Standardizer {
            x_mean,
            x_std,
            y_mean,
            y_std,
        }
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        let mut out = Dataset::new(
            affine(&data.x, &self.x_mean, &self.x_std, false),
            affine(&data.y, &self.y_mean, &self.y_std, false),
        )?;
        out.meta = data.meta.clone();
        Ok(out)
    }

    pub fn inverse(&self, data: &Dataset) -> Result<Dataset> {
        let mut out = Dataset::new(
            affine(&data.x, &self.x_mean, &self.x_std, true),
            affine(&data.y, &self.y_mean, &self.y_std, true),
        )?;
        out.meta = data.meta.clone();
        Ok(out)
    }

    /// Maps outputs (rows of samples, one column per output) back to the original scale.
    pub fn inverse_y(&self, y: &Array2<f64>) -> Array2<f64> {
        affine(y, &self.y_mean, &self.y_std, true)
    }
}

/// Fits on `train` and applies the same map to both sets.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    let s = Standardizer::fit(train);
    Ok((s.transform(train)?, s.transform(test)?, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_sine_is_exact() {
        let d = gen_sine_dataset(50, -1.0, 1.0, 0.0, 3).unwrap();
        for i in 0..50 {
            assert_eq!(d.y[[i, 0]], sine_signal(d.x[[i, 0]]));
            assert!((-1.0..1.0).contains(&d.x[[i, 0]]));
        }
        assert_eq!(sine_signal(0.0), 0.0);
    }

    #[test]
    fn sine_noise_moments() {
        let n = 100_000;
        let d = gen_sine_dataset(n, 0.0, 2.0, 0.25, 11).unwrap();
        let eps: Vec<f64> = (0..n).map(|i| d.y[[i, 0]] - sine_signal(d.x[[i, 0]])).collect();
        let m = crate::stats::mean(&eps);
        let v = crate::stats::sample_variance(&eps);
        assert!(m.abs() < 3.0 * 0.5 / (n as f64).sqrt());
        // var of the sample variance of a normal is 2 sigma^4 / (n - 1)
        let se = (2.0 * 0.25f64.powi(2) / (n as f64 - 1.0)).sqrt();
        assert!((v - 0.25).abs() < 3.0 * se);
    }

    #[test]
    fn generators_depend_on_seed() {
        let a = gen_sine_dataset(20, 0.0, 2.0, 0.25, 1).unwrap();
        let b = gen_sine_dataset(20, 0.0, 2.0, 0.25, 1).unwrap();
        let c = gen_sine_dataset(20, 0.0, 2.0, 0.25, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x, c.x);
        assert!(a.y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn complement_split_regions() {
        let d = Dataset::from_xy(&[0.0, 1.8, -2.0, 1.7, -1.7], &[0.0; 5]).unwrap();
        let (train, test) = ood_complement_split(&d).unwrap();
        let tx: Vec<f64> = train.x.iter().copied().collect();
        let sx: Vec<f64> = test.x.iter().copied().collect();
        assert_eq!(tx, vec![0.0, 1.7, -1.7]);
        assert_eq!(sx, vec![1.8, -2.0]);
        let outside = Dataset::from_xy(&[0.0, 2.5], &[0.0, 0.0]).unwrap();
        assert!(ood_complement_split(&outside).is_err());
        let only_train = Dataset::from_xy(&[0.0, 0.5], &[0.0, 0.0]).unwrap();
        assert!(ood_complement_split(&only_train).is_err());
    }

    #[test]
    fn complement_split_sizes_on_generated_data() {
        let d = gen_sine_dataset(500, -2.8, 1.9, 0.25, 5).unwrap();
        let (train, test) = ood_complement_split(&d).unwrap();
        assert_eq!(train.len() + test.len(), 500);
        // expected 500 * 3.4 / 4.7 = 361.7, binomial sd about 10
        assert!((train.len() as f64 - 361.7).abs() < 30.0, "{}", train.len());
    }

    #[test]
    fn related_dataset_shape() {
        for seed in 0..5 {
            let (train, test) = gen_related_dataset(seed).unwrap();
            assert_eq!((train.len(), test.len()), (450, 50));
            let range = |d: &Dataset| {
                let v: Vec<f64> = d.x.iter().copied().collect();
                (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            };
            let (a, b) = range(&train);
            let (c, d) = range(&test);
            assert!(c < a && b < d);
        }
    }

    #[test]
    fn beta_split_and_random_split() {
        let d = gen_lgbb_surrogate(300, 0.01, 2).unwrap();
        let (train, test) = lgbb_splits(
            &d,
            &SplitSpec {
                kind: SplitKind::LgbbBeta4,
                train_fraction: 0.8,
                seed: 0,
            },
        )
        .unwrap();
        assert!(test.x.column(2).iter().all(|b| *b == 4.0));
        assert!(train.x.column(2).iter().all(|b| *b != 4.0));
        assert_eq!(train.len() + test.len(), 300);

        let (a, b) = lgbb_splits(&d, &SplitSpec::random(0.8, 9)).unwrap();
        assert_eq!((a.len(), b.len()), (240, 60));
        let (a2, _) = lgbb_splits(&d, &SplitSpec::random(0.8, 9)).unwrap();
        assert_eq!(a, a2);
    }

    #[test]
    fn standardization_round_trip() {
        let d = gen_lgbb_surrogate(200, 0.01, 4).unwrap();
        let (train, test) = random_split(&d, 0.8, 1).unwrap();
        let (st, ss, s) = standardize(&train, &test).unwrap();
        for c in 0..3 {
            let col = st.x.column(c).to_vec();
            let m = crate::stats::mean(&col);
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-12 && (v.sqrt() - 1.0).abs() < 1e-12);
        }
        let back = s.inverse(&ss).unwrap();
        for (a, b) in back.x.iter().zip(test.x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s, Standardizer::fit(&train));
    }
}
