//! Long-tailed datasets: synthetic generation and CSV ingestion.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{random_psd, GaussianSampler, SeededRng, Vector};

/// Parameters of a synthetic long-tailed Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongTailSpec {
    pub num_classes: usize,
    /// Count of the most frequent class.
    pub max_count: usize,
    /// Ratio between the most and least frequent class counts.
    pub imbalance_factor: f64,
    pub input_dim: usize,
    pub class_mean_scale: f64,
    pub class_cov_scale: f64,
    /// Samples per class in the balanced test split.
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for LongTailSpec {
    fn default() -> Self {
        LongTailSpec {
            num_classes: 10,
            max_count: 500,
            imbalance_factor: 100.0,
            input_dim: 20,
            class_mean_scale: 3.0,
            class_cov_scale: 1.0,
            test_per_class: 100,
            seed: 0,
        }
    }
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.max_count < 1 {
            return bad("max_count must be >= 1".into());
        }
        if !(self.imbalance_factor >= 1.0 && self.imbalance_factor.is_finite()) {
            return bad(format!(
                "imbalance_factor must be >= 1, got {}",
                self.imbalance_factor
            ));
        }
        if self.input_dim < 1 {
            return bad("input_dim must be >= 1".into());
        }
        if !(self.class_mean_scale >= 0.0 && self.class_cov_scale >= 0.0) {
            return bad("class_mean_scale and class_cov_scale must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vector,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_counts: Vec<usize>,
    input_dim: usize,
}

impl Dataset {
    /// Builds a dataset over `num_classes` classes, checking labels and dims.
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        let input_dim = samples.first().map_or(0, |s| s.x.dim());
        let mut class_counts = vec![0; num_classes];
        for s in &samples {
            if s.x.dim() != input_dim {
                return Err(Error::DimensionMismatch {
                    context: "Dataset::new",
                    expected: input_dim,
                    actual: s.x.dim(),
                });
            }
            if s.y >= num_classes {
                return Err(Error::InvalidLabel {
                    label: s.y,
                    num_classes,
                });
            }
            class_counts[s.y] += 1;
        }
        Ok(Dataset {
            samples,
            class_counts,
            input_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Serializes as `x_1,…,x_d,label` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for k in 0..self.input_dim {
            let _ = write!(out, "x{},", k + 1);
        }
        out.push_str("label\n");
        for s in &self.samples {
            for v in s.x.as_slice() {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{}", s.y);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Exponential long-tail profile `N_c = round(N₁ · λ^(−c/(C−1)))`, clamped
/// to at least one sample per class.
pub fn class_counts(spec: &LongTailSpec) -> Vec<usize> {
    let c_max = (spec.num_classes - 1) as f64;
    (0..spec.num_classes)
        .map(|c| {
            let n = spec.max_count as f64 * spec.imbalance_factor.powf(-(c as f64) / c_max);
            (n.round() as usize).max(1)
        })
        .collect()
}

/// Draws a long-tailed train split and a balanced test split from the same
/// per-class Gaussians.
pub fn synthesize(spec: &LongTailSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let d = spec.input_dim;
    let mut structure_rng = SeededRng::derive(spec.seed, 0);
    let samplers = (0..spec.num_classes)
        .map(|_| {
            let mut dir = structure_rng.normal_vec(d);
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.iter_mut()
                .for_each(|v| *v *= spec.class_mean_scale / norm);
            let cov = random_psd(d, spec.class_cov_scale, &mut structure_rng);
            GaussianSampler::new(&Vector::from(dir), &cov)
        })
        .collect::<Result<Vec<_>>>()?;

    let draw = |counts: &[usize], rng: &mut SeededRng| -> Result<Dataset> {
        let mut samples = Vec::with_capacity(counts.iter().sum());
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                samples.push(Sample {
                    x: samplers[c].sample(rng),
                    y: c,
                });
            }
        }
        Dataset::new(samples, spec.num_classes)
    };

    let train = draw(&class_counts(spec), &mut SeededRng::derive(spec.seed, 1))?;
    let test = draw(
        &vec![spec.test_per_class; spec.num_classes],
        &mut SeededRng::derive(spec.seed, 2),
    )?;
    Ok((train, test))
}

/// Reads `x_1,…,x_d,label` rows. A first line that does not parse as
/// numbers is treated as a header. The class count is `max(label) + 1`
/// unless `num_classes` is given.
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_csv(&text, path, num_classes)
}

fn parse_csv(text: &str, path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut samples = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(parse_err(
                line_no,
                "expected at least one feature and a label".into(),
            ));
        }
        let (features, label) = fields.split_at(fields.len() - 1);
        let parsed: std::result::Result<Vec<f64>, _> =
            features.iter().map(|f| f.parse::<f64>()).collect();
        let x = match parsed {
            Ok(x) => x,
            Err(_) if samples.is_empty() && dim.is_none() => {
                // header
                dim = Some(features.len());
                continue;
            }
            Err(e) => return Err(parse_err(line_no, format!("bad feature value: {e}"))),
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line_no, "non-finite feature value".into()));
        }
        let y: usize = label[0]
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad label {:?}: {e}", label[0])))?;
        match dim {
            Some(d) if d != x.len() => {
                return Err(parse_err(
                    line_no,
                    format!("expected {d} features, found {}", x.len()),
                ))
            }
            _ => dim = Some(x.len()),
        }
        samples.push(Sample { x: x.into(), y });
    }
    if samples.is_empty() {
        return Err(Error::Empty("CSV file contains no samples"));
    }
    let classes = num_classes.unwrap_or_else(|| samples.iter().map(|s| s.y).max().unwrap_or(0) + 1);
    Dataset::new(samples, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: usize, n1: usize, lambda: f64) -> LongTailSpec {
        LongTailSpec {
            num_classes: c,
            max_count: n1,
            imbalance_factor: lambda,
            input_dim: 3,
            test_per_class: 4,
            ..LongTailSpec::default()
        }
    }

    #[test]
    fn count_profile_examples() {
        assert_eq!(class_counts(&spec(2, 100, 100.0)), vec![100, 1]);
        assert_eq!(class_counts(&spec(3, 100, 100.0)), vec![100, 10, 1]);
        assert_eq!(class_counts(&spec(7, 37, 1.0)), vec![37; 7]);
        assert_eq!(*class_counts(&spec(10, 500, 100.0)).last().unwrap(), 5);
    }

    #[test]
    fn counts_never_drop_to_zero() {
        let counts = class_counts(&spec(5, 10, 1000.0));
        assert!(counts.iter().all(|&n| n >= 1));
    }

    #[test]
    fn synthesize_is_deterministic() {
        let s = spec(4, 20, 10.0);
        assert_eq!(synthesize(&s).unwrap(), synthesize(&s).unwrap());
    }

    #[test]
    fn synthesize_shapes() {
        let s = spec(10, 500, 100.0);
        let (train, test) = synthesize(&s).unwrap();
        assert_eq!(train.class_counts(), class_counts(&s).as_slice());
        assert_eq!(train.class_counts()[9], 5);
        assert_eq!(test.class_counts(), vec![4; 10].as_slice());
        assert_eq!(train.input_dim(), 3);
    }

    #[test]
    fn zero_covariance_collapses_to_means() {
        let s = LongTailSpec {
            class_cov_scale: 0.0,
            ..spec(3, 6, 2.0)
        };
        let (train, _) = synthesize(&s).unwrap();
        for c in 0..3 {
            let xs: Vec<_> = train.samples().iter().filter(|s| s.y == c).collect();
            assert!(xs.windows(2).all(|w| w[0].x == w[1].x));
        }
    }

    #[test]
    fn head_class_mean_converges() {
        let s = LongTailSpec {
            input_dim: 4,
            ..spec(3, 4000, 10.0)
        };
        let (train, _) = synthesize(&s).unwrap();
        // Regenerate the class-0 mean from the same structural stream.
        let mut rng = SeededRng::derive(s.seed, 0);
        let mut dir = rng.normal_vec(4);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v *= s.class_mean_scale / norm);
        let head: Vec<_> = train.samples().iter().filter(|s| s.y == 0).collect();
        let tol = 4.0 * s.class_cov_scale / (head.len() as f64).sqrt();
        for k in 0..4 {
            let mean = head.iter().map(|s| s.x[k]).sum::<f64>() / head.len() as f64;
            assert!((mean - dir[k]).abs() < tol, "dim {k}: {mean} vs {}", dir[k]);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(synthesize(&spec(1, 10, 2.0)).is_err());
        assert!(synthesize(&spec(3, 10, 0.5)).is_err());
    }

    #[test]
    fn csv_parse_basic() {
        let ds = parse_csv("1,2,0\n3,4,1", Path::new("t.csv"), None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 2);
        assert_eq!(ds.class_counts(), &[1, 1]);
    }

    #[test]
    fn csv_header_skipped_and_errors_located() {
        let ds = parse_csv("a,b,label\n1,2,0\n", Path::new("t.csv"), None).unwrap();
        assert_eq!(ds.len(), 1);

        match parse_csv("1,2,0\n1,x,1\n", Path::new("t.csv"), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_csv("1,2,0\n1,2,3,1\n", Path::new("t.csv"), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_csv("", Path::new("t.csv"), None),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let (train, _) = synthesize(&spec(3, 5, 2.0)).unwrap();
        let back = parse_csv(&train.to_csv(), Path::new("t.csv"), Some(3)).unwrap();
        assert_eq!(back, train);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn profile_is_monotone_with_bounded_ratio(
                c in 2usize..40, n1 in 1usize..2000, lambda in 1.0f64..500.0
            ) {
                let counts = class_counts(&spec(c, n1, lambda));
                prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
                prop_assert_eq!(counts[0], n1);
                let last = *counts.last().unwrap();
                // The clamp to one sample can only shrink the ratio.
                if (n1 as f64 / lambda).round() >= 1.0 {
                    let ratio = n1 as f64 / last as f64;
                    let slack = 1.0 / last as f64;
                    prop_assert!(ratio >= lambda * (1.0 - slack) - 1e-9);
                    prop_assert!(ratio <= lambda * (1.0 + slack) + 1e-9);
                }
            }
        }
    }
}
