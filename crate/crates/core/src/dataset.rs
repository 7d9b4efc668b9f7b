//! Labelled samples, the synthetic two-class generator, minibatch sampling,
//! CSV persistence and accuracy evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    #[inline]
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            -1 => Some(Label::Neg),
            1 => Some(Label::Pos),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DVector<f64>,
    pub y: Label,
}

impl Sample {
    pub fn new(x: DVector<f64>, y: Label) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector".into()));
        }
        Ok(Self { x, y })
    }
}

/// An immutable collection of samples sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    samples: Vec<Sample>,
    dim: usize,
}

impl TrainingSet {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.x.len())
            .ok_or(Error::Empty("training set"))?;
        for s in &samples {
            check_dim(dim, s.x.len())?;
        }
        Ok(Self { samples, dim })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `batch_size` draws, uniform over the set, with replacement.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&Sample>> {
        if batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be at least 1".into(),
            ));
        }
        let n = self.samples.len();
        Ok((0..batch_size)
            .map(|_| &self.samples[rng.random_range(0..n)])
            .collect())
    }

    /// Fraction of samples with `sign(wᵀx) = y`. A zero score counts as a miss.
    pub fn accuracy(&self, w: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, w.len())?;
        let hits = self
            .samples
            .iter()
            .filter(|s| s.y.as_f64() * w.dot(&s.x) > 0.0)
            .count();
        Ok(hits as f64 / self.samples.len() as f64)
    }

    /// Writes `label,feat_1,…,feat_n` rows with 17 significant digits.
    pub fn save_csv(&self, path: &Path, header: bool) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            if header {
                write!(out, "label")?;
                for j in 1..=self.dim {
                    write!(out, ",x{j}")?;
                }
                writeln!(out)?;
            }
            for s in &self.samples {
                write!(out, "{}", if s.y == Label::Pos { "1" } else { "-1" })?;
                for v in s.x.iter() {
                    write!(out, ",{}", fmt_f64(*v))?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path, header: bool) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(header)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut samples = Vec::new();
        let mut dim = None;
        for (i, record) in reader.records().enumerate() {
            let line = i + 1 + header as usize;
            let record = record.map_err(|e| csv_error(path, e))?;
            let malformed = |reason: String| Error::Malformed {
                path: path.to_path_buf(),
                line,
                reason,
            };
            let sample = parse_row(&record).map_err(malformed)?;
            let expected = *dim.get_or_insert(sample.x.len());
            if sample.x.len() != expected {
                return Err(malformed(format!(
                    "expected {} fields, found {}",
                    expected + 1,
                    record.len()
                )));
            }
            samples.push(sample);
        }
        TrainingSet::new(samples)
    }
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Malformed {
            path: path.to_path_buf(),
            line,
            reason: format!("{other:?}"),
        },
    }
}

fn parse_row(record: &csv::StringRecord) -> std::result::Result<Sample, String> {
    if record.len() < 2 {
        return Err(format!(
            "expected a label and at least one feature, found {} fields",
            record.len()
        ));
    }
    let label = record[0]
        .parse::<i64>()
        .ok()
        .and_then(Label::from_i64)
        .ok_or_else(|| format!("invalid label {:?}, expected -1 or 1", &record[0]))?;
    let x = record
        .iter()
        .skip(1)
        .map(|field| match field.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(format!("non-finite feature value {field:?}")),
            Err(_) => Err(format!("invalid feature value {field:?}")),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Sample {
        x: DVector::from_vec(x),
        y: label,
    })
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval(pub f64, pub f64);

/// Two-class generator: per class, i.i.d. uniform components on an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub neg_interval: Interval,
    pub pos_interval: Interval,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::new(4, 10_000, 0)
    }
}

impl SyntheticSpec {
    fn default_neg() -> Interval {
        Interval(-0.8, 0.2)
    }

    fn default_pos() -> Interval {
        Interval(-0.2, 0.8)
    }

    pub fn new(n: usize, count: usize, seed: u64) -> Self {
        Self {
            n,
            count,
            neg_interval: Self::default_neg(),
            pos_interval: Self::default_pos(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter(
                "dimension n must be at least 1".into(),
            ));
        }
        if self.count == 0 || !self.count.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "sample count must be positive and even, got {}",
                self.count
            )));
        }
        for Interval(lo, hi) in [self.neg_interval, self.pos_interval] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "invalid interval [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Generates from the [`Stream::TrainingSet`] stream of `seed`.
    pub fn generate(&self) -> Result<TrainingSet> {
        self.generate_with(&mut rng::stream(self.seed, Stream::TrainingSet))
    }

    /// Classes are interleaved, then shuffled with the same generator.
    pub fn generate_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrainingSet> {
        self.validate()?;
        let uniform = |Interval(lo, hi): Interval| {
            Uniform::new(lo, hi).map_err(|e| Error::InvalidParameter(e.to_string()))
        };
        let neg = uniform(self.neg_interval)?;
        let pos = uniform(self.pos_interval)?;
        let mut samples = Vec::with_capacity(self.count);
        for _ in 0..self.count / 2 {
            for (dist, y) in [(&neg, Label::Neg), (&pos, Label::Pos)] {
                let x = DVector::from_fn(self.n, |_, _| dist.sample(rng));
                samples.push(Sample { x, y });
            }
        }
        samples.shuffle(rng);
        TrainingSet::new(samples)
    }
}

/// Largest dimension for which [`clairvoyant_accuracy`] is offered.
pub const CLAIRVOYANT_MAX_DIM: usize = 30;

/// Accuracy of `sign(Σⱼ xⱼ)` under the default two-class model in dimension `n`.
///
/// A negative-class sample is misclassified when its shifted uniform sum
/// exceeds zero, an event of probability `F_IH(0.2·n; n)` where `F_IH` is the
/// Irwin-Hall CDF. The alternating sum is evaluated exactly over the integers
/// (`x = n/5` makes every term rational) before a single final division.
pub fn clairvoyant_accuracy(n: usize) -> Result<f64> {
    if !(1..=CLAIRVOYANT_MAX_DIM).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "clairvoyant accuracy supports 1 <= n <= {CLAIRVOYANT_MAX_DIM}, got {n}"
        )));
    }
    // F_IH(n/5; n) = Σ_{k ≤ n/5} (-1)^k C(n,k) (n − 5k)^n / (5^n · n!)
    let exp = n as u32;
    let mut numerator = BigInt::zero();
    let mut binom = BigInt::one();
    for k in 0..=n / 5 {
        let term = &binom * BigInt::from(n - 5 * k).pow(exp);
        if k % 2 == 0 {
            numerator += term;
        } else {
            numerator -= term;
        }
        binom = binom * BigInt::from(n - k) / BigInt::from(k + 1);
    }
    let factorial: BigInt = (1..=n).map(BigInt::from).product();
    let denominator = BigInt::from(5).pow(exp) * factorial;
    debug_assert!(!numerator.is_negative());
    let cdf = numerator.to_f64().unwrap_or(f64::NAN) / denominator.to_f64().unwrap_or(f64::NAN);
    Ok(1.0 - cdf)
}
