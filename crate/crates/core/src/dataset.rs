//! Noise-cloud training pairs built around a subsampled trajectory.
//!
//! Each anchor state `x_i` (all but the last) gets `n_cloud` multiplicatively
//! perturbed copies `z = x_i (1 - R + 2 R ξ)`, `ξ ~ U[0, 1]` per component,
//! each paired with the clean next state `x_{i+1}`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::csv_io;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::rng::{self, Pcg64};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    /// Perturbed state at `time_index`.
    pub z: Vec<f64>,
    /// Clean trajectory state at `time_index + 1`.
    pub x_next: Vec<f64>,
    pub time_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// How the cloud was generated; carried alongside the pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudParams {
    pub n_cloud: usize,
    pub r_range: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<SamplePair>,
    pub val: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCloudDataset {
    pub train: Vec<SamplePair>,
    pub val: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
    pub params: CloudParams,
}

pub const EQUAL_THIRDS: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

/// `anchor_j (1 - R + 2 R xi_j)`.
pub fn cloud_point(anchor: &[f64], xi: &[f64], r_range: f64) -> Vec<f64> {
    anchor
        .iter()
        .zip(xi)
        .map(|(x, u)| x * (1.0 - r_range + 2.0 * r_range * u))
        .collect()
}

fn validate_cloud(n_cloud: usize, r_range: f64) -> Result<()> {
    if n_cloud == 0 {
        return Err(Error::InvalidArgument("n_cloud must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&r_range) {
        return Err(Error::InvalidArgument(format!(
            "r_range must lie in [0, 1), got {r_range}"
        )));
    }
    Ok(())
}

/// Draws one perturbed copy of `anchor` with fresh uniforms.
pub fn sample_cloud_point<R: Rng + ?Sized>(anchor: &[f64], r_range: f64, rng: &mut R) -> Vec<f64> {
    let xi: Vec<f64> = (0..anchor.len()).map(|_| rng.random::<f64>()).collect();
    cloud_point(anchor, &xi, r_range)
}

/// Emits `n_cloud` pairs for every anchor index `0..len-1`, anchor-major.
pub fn build_noise_cloud(
    traj: &Trajectory,
    n_cloud: usize,
    r_range: f64,
    seed: u64,
) -> Result<Vec<SamplePair>> {
    validate_cloud(n_cloud, r_range)?;
    if traj.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 trajectory states to form pairs, got {}",
            traj.len()
        )));
    }
    let mut rng = rng::substream(seed, "cloud");
    let states = traj.states();
    let mut out = Vec::with_capacity((states.len() - 1) * n_cloud);
    for (i, pair) in states.windows(2).enumerate() {
        for _ in 0..n_cloud {
            out.push(SamplePair {
                z: sample_cloud_point(&pair[0], r_range, &mut rng),
                x_next: pair[1].clone(),
                time_index: i,
            });
        }
    }
    Ok(out)
}

/// Split sizes for `n` samples: validation and test get `floor(n f)`, the
/// remainder goes to training.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    // Guard against 1/3 * 3 landing just below an integer.
    let cut = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let val = cut(fractions[1]);
    let test = cut(fractions[2]);
    Ok([n - val - test, val, test])
}

/// Seeded permutation followed by contiguous cuts (train, val, test).
pub fn split(mut samples: Vec<SamplePair>, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("cannot split an empty sample set".into()));
    }
    let [n_train, n_val, _] = split_sizes(samples.len(), fractions)?;
    samples.shuffle(&mut rng::substream(seed, "split"));
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    Ok(Splits {
        train: samples,
        val,
        test,
    })
}

impl NoiseCloudDataset {
    pub fn generate(traj: &Trajectory, params: CloudParams, fractions: [f64; 3]) -> Result<Self> {
        let samples = build_noise_cloud(traj, params.n_cloud, params.r_range, params.seed)?;
        let Splits { train, val, test } = split(samples, fractions, params.seed)?;
        Ok(Self {
            train,
            val,
            test,
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.train
            .first()
            .or(self.val.first())
            .or(self.test.first())
            .map_or(0, |p| p.z.len())
    }

    pub fn part(&self, split: Split) -> &[SamplePair] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Largest anchor index present in any split.
    pub fn last_anchor(&self) -> Option<usize> {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|p| p.time_index)
            .max()
    }

    pub fn to_csv(&self) -> String {
        let m = self.dim();
        let mut out = csv_io::header_with("i", &["z", "x"], m);
        out.pop();
        out.push_str(",split\n");
        for split in [Split::Train, Split::Val, Split::Test] {
            for p in self.part(split) {
                out.push_str(&p.time_index.to_string());
                out.push(',');
                csv_io::push_record(&mut out, p.z.iter().chain(&p.x_next).copied());
                out.pop();
                out.push(',');
                out.push_str(&split.to_string());
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path, params: CloudParams) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let n_cols = header.split(',').count();
        if n_cols < 4 || (n_cols - 2) % 2 != 0 {
            return Err(parse_err(1, format!("malformed header `{header}`")));
        }
        let m = (n_cols - 2) / 2;
        let mut expected = csv_io::header_with("i", &["z", "x"], m);
        expected.pop();
        expected.push_str(",split");
        if header.trim() != expected {
            return Err(parse_err(1, format!("expected header `{expected}`")));
        }

        let mut ds = Self {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            params,
        };
        for (idx, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != n_cols {
                return Err(parse_err(
                    idx + 1,
                    format!("expected {n_cols} fields, found {}", fields.len()),
                ));
            }
            let time_index = fields[0]
                .parse::<usize>()
                .map_err(|_| parse_err(idx + 1, format!("bad time index `{}`", fields[0])))?;
            let nums = fields[1..=2 * m]
                .iter()
                .map(|t| csv_io::parse_f64(t, path, idx + 1))
                .collect::<Result<Vec<_>>>()?;
            let split: Split = fields[n_cols - 1]
                .parse()
                .map_err(|e: Error| parse_err(idx + 1, e.to_string()))?;
            let pair = SamplePair {
                z: nums[..m].to_vec(),
                x_next: nums[m..].to_vec(),
                time_index,
            };
            match split {
                Split::Train => ds.train.push(pair),
                Split::Val => ds.val.push(pair),
                Split::Test => ds.test.push(pair),
            }
        }
        if ds.is_empty() {
            return Err(parse_err(2, "dataset has no rows".into()));
        }
        Ok(ds)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path, params: CloudParams) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path, params)
    }
}

/// Clamps a requested batch size to the available sample count, warning when
/// it has to.
pub fn clamp_batch_size(m: usize, available: usize) -> Result<usize> {
    if m == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if available == 0 {
        return Err(Error::InsufficientData("no samples to batch".into()));
    }
    if m > available {
        log::warn!("batch size {m} exceeds {available} available samples; using {available}");
        Ok(available)
    } else {
        Ok(m)
    }
}

/// Shuffled-epoch batching: a fresh permutation of `0..n` cut into chunks of
/// `m` (the last may be shorter).
pub fn epoch_batches(n: usize, m: usize, rng: &mut Pcg64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(m.max(1)).map(<[usize]>::to_vec).collect()
}

/// One epoch of mini-batches over `part`.
pub fn minibatch<'a>(
    part: &'a [SamplePair],
    m: usize,
    rng: &mut Pcg64,
) -> Result<Vec<Vec<&'a SamplePair>>> {
    let m = clamp_batch_size(m, part.len())?;
    Ok(epoch_batches(part.len(), m, rng)
        .into_iter()
        .map(|b| b.into_iter().map(|i| &part[i]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_reference, LorenzField, Method};
    use proptest::prelude::*;

    fn lorenz_training_traj() -> Trajectory {
        let f = LorenzField::default();
        generate_reference(&f, &[0.0, 1.0, 0.0], 1e-4, 3.0, Method::Euler)
            .unwrap()
            .subsample(150)
            .unwrap()
    }

    #[test]
    fn midpoint_xi_reproduces_anchor() {
        let a = [2.0, -1.0, 0.5];
        assert_eq!(cloud_point(&a, &[0.5; 3], 0.02), a.to_vec());
    }

    #[test]
    fn upper_edge_of_cloud() {
        let z = cloud_point(&[2.0, -1.0, 0.5], &[1.0; 3], 0.02);
        let expected = [2.04, -1.02, 0.51];
        for (a, b) in z.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn full_sized_cloud() {
        let traj = lorenz_training_traj();
        assert_eq!(traj.len(), 201);
        let pairs = build_noise_cloud(&traj, 100, 0.02, 1).unwrap();
        assert_eq!(pairs.len(), 20000);
        for p in &pairs {
            assert_eq!(p.x_next, traj.states()[p.time_index + 1]);
            for (z, x) in p.z.iter().zip(&traj.states()[p.time_index]) {
                if *x != 0.0 {
                    let ratio = z / x;
                    assert!((0.98..=1.02).contains(&ratio));
                } else {
                    assert_eq!(*z, 0.0);
                }
            }
        }
    }

    #[test]
    fn cloud_needs_two_states() {
        let t = Trajectory::new(0.0, 1.0, vec![vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(
            build_noise_cloud(&t, 10, 0.02, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn split_sizes_examples() {
        assert_eq!(split_sizes(20000, EQUAL_THIRDS).unwrap(), [6668, 6666, 6666]);
        assert_eq!(split_sizes(3, EQUAL_THIRDS).unwrap(), [1, 1, 1]);
        assert_eq!(split_sizes(200, EQUAL_THIRDS).unwrap(), [68, 66, 66]);
        assert!(split_sizes(10, [0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let traj = lorenz_training_traj();
        let pairs = build_noise_cloud(&traj, 5, 0.02, 3).unwrap();
        let a = split(pairs.clone(), EQUAL_THIRDS, 9).unwrap();
        let b = split(pairs.clone(), EQUAL_THIRDS, 9).unwrap();
        let c = split(pairs, EQUAL_THIRDS, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
        assert!(split(Vec::new(), EQUAL_THIRDS, 0).is_err());
    }

    #[test]
    fn batches_per_epoch() {
        let mut rng = rng::seeded(0);
        let batches = epoch_batches(6668, 1000, &mut rng);
        assert_eq!(batches.len(), 7);
        assert_eq!(batches[6].len(), 668);

        let whole = epoch_batches(40, 40, &mut rng);
        assert_eq!(whole.len(), 1);
        let mut sorted = whole[0].clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn minibatch_clamps_and_repeats() {
        let traj = lorenz_training_traj();
        let pairs = build_noise_cloud(&traj, 1, 0.0, 3).unwrap();
        let part = &pairs[..10];
        let b = minibatch(part, 50, &mut rng::seeded(4)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 10);
        let again = minibatch(part, 50, &mut rng::seeded(4)).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let traj = lorenz_training_traj();
        let params = CloudParams {
            n_cloud: 3,
            r_range: 0.02,
            seed: 5,
        };
        let ds = NoiseCloudDataset::generate(&traj, params, EQUAL_THIRDS).unwrap();
        let text = ds.to_csv();
        assert!(text.starts_with("i,z1,z2,z3,x1,x2,x3,split\n"));
        let back = NoiseCloudDataset::from_csv(&text, Path::new("mem"), params).unwrap();
        assert_eq!(back, ds);
        assert_eq!(ds.last_anchor(), Some(199));
    }

    proptest! {
        #[test]
        fn splits_partition_the_samples(n_cloud in 1usize..6, seed in any::<u64>()) {
            let traj = Trajectory::new(0.0, 0.1, (0..17).map(|i| vec![i as f64 + 1.0, -2.0]).collect()).unwrap();
            let pairs = build_noise_cloud(&traj, n_cloud, 0.05, seed).unwrap();
            let total = pairs.len();
            let s = split(pairs.clone(), EQUAL_THIRDS, seed).unwrap();
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), total);
            let key = |p: &SamplePair| (p.time_index, p.z.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            let mut all: Vec<_> = s.train.iter().chain(&s.val).chain(&s.test).map(key).collect();
            let mut orig: Vec<_> = pairs.iter().map(key).collect();
            all.sort();
            orig.sort();
            prop_assert_eq!(all, orig);
        }
    }
}
