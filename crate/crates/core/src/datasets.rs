//! Labeled datasets: synthetic generation, CSV ingestion, participant
//! partitioning, and adversarial input strategies.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// A dense labeled classification dataset.
///
/// Features are stored row-major: sample `i` occupies
/// `features[i * n_features .. (i + 1) * n_features]`. Labels are class ids
/// in `0..n_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::parameter("n_features must be >= 1"));
        }
        if n_classes < 2 {
            return Err(Error::parameter("n_classes must be >= 2"));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::parameter(format!(
                "feature row count {} does not match label count {}",
                features.len() / n_features.max(1),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::parameter(format!(
                "label {bad} out of range 0..{n_classes}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("features contain NaN or infinite values"));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
            name: name.into(),
        })
    }

    /// Empty dataset that keeps the feature dimensionality and class range.
    pub fn empty_like(&self, name: impl Into<String>) -> Self {
        Self {
            features: Vec::new(),
            labels: Vec::new(),
            n_features: self.n_features,
            n_classes: self.n_classes,
            name: name.into(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Dataset restricted to the given sample indices, in the given order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            n_features: self.n_features,
            n_classes: self.n_classes,
            name: name.into(),
        }
    }

    /// Per-feature population standard deviation; zero for constant columns.
    pub fn feature_std(&self) -> Vec<f64> {
        let m = self.n_samples();
        let d = self.n_features;
        if m == 0 {
            return vec![0.0; d];
        }
        let mut mean = vec![0.0; d];
        for i in 0..m {
            for (j, v) in self.row(i).iter().enumerate() {
                mean[j] += v;
            }
        }
        for mj in &mut mean {
            *mj /= m as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..m {
            for (j, v) in self.row(i).iter().enumerate() {
                let dlt = v - mean[j];
                var[j] += dlt * dlt;
            }
        }
        var.iter().map(|v| (v / m as f64).sqrt()).collect()
    }
}

/// A participant's transformation of its dataset before local training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputStrategy {
    /// Input the dataset unchanged.
    Truthful,
    /// Add zero-mean Gaussian noise with per-feature std-dev `degree * sigma_feature`.
    Noise { degree: f64 },
    /// Uniformly drop `floor(fraction * m)` samples.
    Removal { fraction: f64 },
    /// Uniformly pick `floor(fraction * m)` samples and reassign each label
    /// to a uniformly random *different* class.
    LabelFlip { fraction: f64 },
    /// Contribute nothing.
    Quit,
}

impl InputStrategy {
    pub fn validate(&self) -> Result<()> {
        let f = match self {
            InputStrategy::Noise { degree } => *degree,
            InputStrategy::Removal { fraction } => *fraction,
            InputStrategy::LabelFlip { fraction } => *fraction,
            InputStrategy::Truthful | InputStrategy::Quit => return Ok(()),
        };
        if !(0.0..=1.0).contains(&f) || f.is_nan() {
            return Err(Error::parameter(format!(
                "strategy fraction {f} outside [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn is_truthful(&self) -> bool {
        matches!(self, InputStrategy::Truthful)
            || matches!(
                self,
                InputStrategy::Noise { degree } if *degree == 0.0
            )
            || matches!(
                self,
                InputStrategy::Removal { fraction } | InputStrategy::LabelFlip { fraction }
                    if *fraction == 0.0
            )
    }
}

/// Generate Gaussian class blobs.
///
/// Class `c`'s mean sits at `class_separation * (1 + c / d)` along feature
/// axis `c % d`, so any two means are at least `class_separation` apart.
/// Labels are assigned round-robin, which keeps classes balanced within one
/// sample. Deterministic given `seed`.
pub fn generate_synthetic(
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    class_separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes < 2 {
        return Err(Error::parameter("n_classes must be >= 2"));
    }
    if n_samples < n_classes {
        return Err(Error::parameter(
            "n_samples must be at least n_classes so every class appears",
        ));
    }
    if n_features == 0 {
        return Err(Error::parameter("n_features must be >= 1"));
    }
    if !class_separation.is_finite() || class_separation < 0.0 {
        return Err(Error::parameter("class_separation must be finite and >= 0"));
    }

    let mut rng = seeded_rng(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % n_classes;
        let axis = class % n_features;
        let shift = class_separation * (1.0 + (class / n_features) as f64);
        for j in 0..n_features {
            let center = if j == axis && class > 0 { shift } else { 0.0 };
            features.push(center + normal.sample(&mut rng));
        }
        labels.push(class);
    }
    LabeledDataset::new(features, labels, n_features, n_classes, "synthetic")
}

/// Load a labeled dataset from a headered CSV file.
///
/// The label column (by name) must hold integer class ids; every other
/// column must be numeric. Malformed cells are hard errors carrying the
/// 1-based data row number.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("cannot open {display}: {e}"),
            )),
            _ => Error::Parse {
                path: display.clone(),
                row: 0,
                message: e.to_string(),
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: display.clone(),
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Parse {
            path: display.clone(),
            row: 0,
            message: format!("label column '{label_column}' not found in header"),
        })?;
    let n_features = headers.len().saturating_sub(1);
    if n_features == 0 {
        return Err(Error::Parse {
            path: display,
            row: 0,
            message: "no feature columns besides the label".into(),
        });
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            row,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                path: display.clone(),
                row,
                message: format!(
                    "expected {} columns, found {}",
                    headers.len(),
                    record.len()
                ),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                let y: usize = cell.trim().parse().map_err(|_| Error::Parse {
                    path: display.clone(),
                    row,
                    message: format!("label '{cell}' is not a non-negative integer"),
                })?;
                labels.push(y);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    path: display.clone(),
                    row,
                    message: format!(
                        "cell '{cell}' in column '{}' is not numeric",
                        &headers[col]
                    ),
                })?;
                features.push(v);
            }
        }
    }

    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    LabeledDataset::new(features, labels, n_features, n_classes, stem)
}

/// Shuffle and split a dataset into one test set plus `n_participants`
/// near-equal shards (sizes differ by at most one).
///
/// The union of all outputs equals the input as a multiset of samples.
/// Deterministic given `seed`.
pub fn partition(
    data: &LabeledDataset,
    n_participants: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledDataset>, LabeledDataset)> {
    if n_participants == 0 {
        return Err(Error::parameter("n_participants must be >= 1"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::parameter("test_fraction must lie in (0, 1)"));
    }
    let m = data.n_samples();
    let test_count = ((m as f64) * test_fraction).floor() as usize;
    let remaining = m - test_count;
    if test_count == 0 || remaining < n_participants {
        return Err(Error::parameter(format!(
            "{m} samples are too few for a {test_fraction} test split across {n_participants} participants"
        )));
    }

    let mut indices: Vec<usize> = (0..m).collect();
    indices.shuffle(&mut seeded_rng(seed));

    let test = data.subset(&indices[..test_count], format!("{}-test", data.name));
    let mut shards = Vec::with_capacity(n_participants);
    let base = remaining / n_participants;
    let extra = remaining % n_participants;
    let mut cursor = test_count;
    for p in 0..n_participants {
        let size = base + usize::from(p < extra);
        let shard = data.subset(
            &indices[cursor..cursor + size],
            format!("{}-p{}", data.name, p),
        );
        cursor += size;
        shards.push(shard);
    }
    Ok((shards, test))
}

/// Apply an input strategy to a dataset. Pure in `(data, strategy, seed)`.
pub fn apply_strategy(
    data: &LabeledDataset,
    strategy: &InputStrategy,
    seed: u64,
) -> Result<LabeledDataset> {
    strategy.validate()?;
    match strategy {
        InputStrategy::Truthful => Ok(data.clone()),
        InputStrategy::Quit => Ok(data.empty_like(format!("{}-quit", data.name))),
        InputStrategy::Noise { degree } => {
            if *degree == 0.0 {
                return Ok(data.clone());
            }
            let std = data.feature_std();
            let mut rng = seeded_rng(seed);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let d = data.n_features();
            let mut features = Vec::with_capacity(data.n_samples() * d);
            for i in 0..data.n_samples() {
                for (j, v) in data.row(i).iter().enumerate() {
                    features.push(v + degree * std[j] * normal.sample(&mut rng));
                }
            }
            LabeledDataset::new(
                features,
                data.labels.clone(),
                d,
                data.n_classes(),
                format!("{}-noise", data.name),
            )
        }
        InputStrategy::Removal { fraction } => {
            if *fraction == 0.0 {
                return Ok(data.clone());
            }
            let m = data.n_samples();
            let drop = ((m as f64) * fraction).floor() as usize;
            let mut indices: Vec<usize> = (0..m).collect();
            indices.shuffle(&mut seeded_rng(seed));
            let mut kept: Vec<usize> = indices[drop..].to_vec();
            kept.sort_unstable();
            Ok(data.subset(&kept, format!("{}-removal", data.name)))
        }
        InputStrategy::LabelFlip { fraction } => {
            if *fraction == 0.0 {
                return Ok(data.clone());
            }
            let m = data.n_samples();
            let flips = ((m as f64) * fraction).floor() as usize;
            let mut rng = seeded_rng(seed);
            let mut indices: Vec<usize> = (0..m).collect();
            indices.shuffle(&mut rng);
            let mut labels = data.labels.clone();
            let c = data.n_classes();
            for &i in indices.iter().take(flips) {
                // uniform over the C-1 classes different from the current label
                let offset = rng.gen_range(1..c);
                labels[i] = (labels[i] + offset) % c;
            }
            LabeledDataset::new(
                data.features.clone(),
                labels,
                data.n_features(),
                c,
                format!("{}-flip", data.name),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn blob(m: usize, c: usize, seed: u64) -> LabeledDataset {
        generate_synthetic(m, 4, c, 3.0, seed).unwrap()
    }

    #[test]
    fn synthetic_shape_and_balance() {
        let d = generate_synthetic(200, 4, 2, 3.0, 7).unwrap();
        assert_eq!(d.n_samples(), 200);
        assert_eq!(d.n_features(), 4);
        let ones = d.labels().iter().filter(|&&y| y == 1).count();
        assert!((99..=101).contains(&ones));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(200, 4, 2, 3.0, 7).unwrap();
        let b = generate_synthetic(200, 4, 2, 3.0, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(200, 4, 2, 3.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_rejects_bad_counts() {
        assert!(generate_synthetic(1, 4, 2, 3.0, 0).is_err());
        assert!(generate_synthetic(10, 0, 2, 3.0, 0).is_err());
        assert!(generate_synthetic(10, 4, 1, 3.0, 0).is_err());
    }

    #[test]
    fn load_csv_roundtrip_and_errors() {
        let dir = std::env::temp_dir().join(format!("fedcore-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let good = dir.join("good.csv");
        let mut f = std::fs::File::create(&good).unwrap();
        writeln!(f, "a,b,species").unwrap();
        writeln!(f, "1.0,2.0,0").unwrap();
        writeln!(f, "3.0,4.0,1").unwrap();
        writeln!(f, "5.5,6.5,2").unwrap();
        drop(f);

        let d = load_csv(&good, "species").unwrap();
        assert_eq!(d.n_samples(), 3);
        assert_eq!(d.n_features(), 2);
        assert_eq!(d.n_classes(), 3);
        assert_eq!(d.row(2), &[5.5, 6.5]);

        let err = load_csv(&good, "label").unwrap_err();
        assert!(err.to_string().contains("label"), "{err}");

        let bad = dir.join("bad.csv");
        let mut f = std::fs::File::create(&bad).unwrap();
        writeln!(f, "a,b,species").unwrap();
        writeln!(f, "1.0,2.0,0").unwrap();
        writeln!(f, "oops,4.0,1").unwrap();
        drop(f);
        let err = load_csv(&bad, "species").unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");

        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn iris_style_csv() {
        let dir = std::env::temp_dir().join(format!("fedcore-iris-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("iris.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "sl,sw,pl,pw,species").unwrap();
        for i in 0..150 {
            writeln!(f, "{}.1,3.0,1.5,0.2,{}", i % 7, i / 50).unwrap();
        }
        drop(f);
        let d = load_csv(&path, "species").unwrap();
        assert_eq!(d.n_features(), 4);
        assert_eq!(d.n_classes(), 3);
        assert_eq!(d.n_samples(), 150);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn partition_sizes_match_paper_setup() {
        let d = blob(150, 3, 1);
        let (shards, test) = partition(&d, 10, 0.1, 42).unwrap();
        assert_eq!(test.n_samples(), 15);
        assert_eq!(shards.len(), 10);
        for s in &shards {
            assert!(s.n_samples() == 13 || s.n_samples() == 14, "{}", s.n_samples());
        }
        assert_eq!(shards.iter().map(|s| s.n_samples()).sum::<usize>(), 135);
    }

    #[test]
    fn partition_single_participant() {
        let d = blob(100, 2, 1);
        let (shards, test) = partition(&d, 1, 0.1, 0).unwrap();
        assert_eq!(test.n_samples(), 10);
        assert_eq!(shards[0].n_samples(), 90);
    }

    #[test]
    fn partition_preserves_sample_multiset() {
        let d = blob(53, 3, 9);
        let (shards, test) = partition(&d, 4, 0.2, 3).unwrap();
        let mut seen: Vec<(Vec<u64>, usize)> = Vec::new();
        for s in shards.iter().chain(std::iter::once(&test)) {
            for i in 0..s.n_samples() {
                let bits: Vec<u64> = s.row(i).iter().map(|v| v.to_bits()).collect();
                seen.push((bits, s.label(i)));
            }
        }
        let mut expect: Vec<(Vec<u64>, usize)> = (0..d.n_samples())
            .map(|i| (d.row(i).iter().map(|v| v.to_bits()).collect(), d.label(i)))
            .collect();
        seen.sort();
        expect.sort();
        assert_eq!(seen, expect);
    }

    #[test]
    fn partition_rejects_too_few_samples() {
        let d = blob(10, 2, 1);
        assert!(partition(&d, 10, 0.5, 1).is_err());
        assert!(partition(&d, 3, 0.0, 1).is_err());
        assert!(partition(&d, 3, 1.0, 1).is_err());
    }

    #[test]
    fn truthful_and_zero_degree_are_identity() {
        let d = blob(40, 2, 2);
        for s in [
            InputStrategy::Truthful,
            InputStrategy::Noise { degree: 0.0 },
            InputStrategy::Removal { fraction: 0.0 },
            InputStrategy::LabelFlip { fraction: 0.0 },
        ] {
            let out = apply_strategy(&d, &s, 99).unwrap();
            assert_eq!(out.features, d.features);
            assert_eq!(out.labels, d.labels);
        }
    }

    #[test]
    fn quit_empties_but_keeps_dims() {
        let d = blob(40, 3, 2);
        let out = apply_strategy(&d, &InputStrategy::Quit, 0).unwrap();
        assert_eq!(out.n_samples(), 0);
        assert_eq!(out.n_features(), d.n_features());
        assert_eq!(out.n_classes(), d.n_classes());
    }

    #[test]
    fn removal_keeps_rows_of_input() {
        let d = blob(100, 2, 5);
        let out = apply_strategy(&d, &InputStrategy::Removal { fraction: 0.3 }, 11).unwrap();
        assert_eq!(out.n_samples(), 70);
        let originals: std::collections::HashSet<Vec<u64>> = (0..d.n_samples())
            .map(|i| d.row(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        for i in 0..out.n_samples() {
            let bits: Vec<u64> = out.row(i).iter().map(|v| v.to_bits()).collect();
            assert!(originals.contains(&bits));
        }
    }

    #[test]
    fn label_flip_changes_exact_count_with_two_classes() {
        let d = blob(100, 2, 6);
        let out = apply_strategy(&d, &InputStrategy::LabelFlip { fraction: 0.5 }, 12).unwrap();
        let diff = d
            .labels()
            .iter()
            .zip(out.labels())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(diff, 50);
        assert_eq!(out.features, d.features);
    }

    #[test]
    fn noise_preserves_shape_and_labels() {
        let d = blob(60, 2, 8);
        let out = apply_strategy(&d, &InputStrategy::Noise { degree: 0.5 }, 13).unwrap();
        assert_eq!(out.n_samples(), d.n_samples());
        assert_eq!(out.n_features(), d.n_features());
        assert_eq!(out.labels(), d.labels());
        assert_ne!(out.features, d.features);
        // determinism
        let again = apply_strategy(&d, &InputStrategy::Noise { degree: 0.5 }, 13).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn strategy_fraction_validation() {
        let d = blob(10, 2, 8);
        assert!(apply_strategy(&d, &InputStrategy::Noise { degree: 1.5 }, 0).is_err());
        assert!(apply_strategy(&d, &InputStrategy::Removal { fraction: -0.1 }, 0).is_err());
    }
}
