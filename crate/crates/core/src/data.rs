//! Datasets: synthetic Gaussian-cluster classification tasks, a
//! shared-minimizer construction for convex diagnostics, and loaders for the
//! IDX binary layout and a plain CSV layout.

use crate::error::{Error, Result};
use crate::models::Batch;
use crate::partition::Partition;
use crate::rng::{SeededRng, StreamKind};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use std::io::Read;
use std::path::Path;

/// Dense labeled dataset, rows stored row-major.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        feature_dim: usize,
        n_classes: usize,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::Dimension {
                context: "dataset features",
                expected: labels.len() * feature_dim,
                got: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::config(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            feature_dim,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Gather the given rows into an owned batch.
    pub fn batch_of(&self, indices: &[usize]) -> Result<Batch> {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(features, labels, self.feature_dim)
    }

    /// The whole dataset as one batch.
    pub fn full_batch(&self) -> Result<Batch> {
        Batch::new(
            self.features.clone(),
            self.labels.clone(),
            self.feature_dim,
        )
    }
}

#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub feature_dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub scale: f64,
    pub seed: u64,
}

/// Draw class centroids on the unit sphere, scatter `per_class` points around
/// each with the given spread, scale every feature, and split 80/20 per class.
///
/// Scaling multiplies centroids and spread alike, so two datasets generated
/// from the same seed at scales s1 and s2 are exact rescalings of one another.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SplitDataset> {
    if spec.classes < 2 {
        return Err(Error::config("synthetic data needs at least 2 classes"));
    }
    if spec.per_class == 0 || spec.feature_dim == 0 {
        return Err(Error::config("per_class and feature_dim must be positive"));
    }
    if spec.spread < 0.0 || spec.scale <= 0.0 {
        return Err(Error::config("spread must be >= 0 and scale > 0"));
    }
    let mut rng = SeededRng::for_purpose(spec.seed, StreamKind::DataGen);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut centroids = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let mut c: Vec<f64> = (0..spec.feature_dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        for v in &mut c {
            *v /= norm;
        }
        centroids.push(c);
    }
    make_clusters(&centroids, spec.spread, spec.per_class, spec.scale, &mut rng)
}

/// Build clustered data around explicit centroids and split 80/20 per class.
pub fn make_clusters(
    centroids: &[Vec<f64>],
    spread: f64,
    per_class: usize,
    scale: f64,
    rng: &mut SeededRng,
) -> Result<SplitDataset> {
    let classes = centroids.len();
    let dim = centroids[0].len();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n_test_per_class = per_class / 5;
    let n_train_per_class = per_class - n_test_per_class;

    let mut train_rows: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut test_rows: Vec<(Vec<f64>, usize)> = Vec::new();
    for (label, centroid) in centroids.iter().enumerate() {
        for i in 0..per_class {
            let row: Vec<f64> = centroid
                .iter()
                .map(|c| scale * (c + spread * normal.sample(rng)))
                .collect();
            if i < n_train_per_class {
                train_rows.push((row, label));
            } else {
                test_rows.push((row, label));
            }
        }
    }
    train_rows.shuffle(rng);
    test_rows.shuffle(rng);

    let pack = |rows: Vec<(Vec<f64>, usize)>| -> Result<Dataset> {
        let mut features = Vec::with_capacity(rows.len() * dim);
        let mut labels = Vec::with_capacity(rows.len());
        for (row, label) in rows {
            features.extend(row);
            labels.push(label);
        }
        Dataset::new(features, labels, dim, classes)
    };
    Ok(SplitDataset {
        train: pack(train_rows)?,
        test: pack(test_rows)?,
    })
}

/// Parameters of the shared-minimizer construction.
#[derive(Clone, Debug)]
pub struct SharedMinimizerSpec {
    pub classes: usize,
    pub feature_dim: usize,
    pub pairs_per_class: usize,
    pub feature_norm: f64,
    pub seed: u64,
}

/// Per-client data built so the zero parameter vector is a global minimizer of
/// every client's softmax objective: each class contributes sign-symmetric
/// feature pairs (+w, -w), so all per-class feature sums vanish and the
/// cross-entropy gradient at zero is exactly zero for every client.
///
/// Returns the pooled training set together with the client assignment, plus a
/// small test pool of the same construction.
pub fn generate_shared_minimizer(
    spec: &SharedMinimizerSpec,
    clients: usize,
) -> Result<(SplitDataset, Partition)> {
    if spec.classes < 2 || spec.pairs_per_class == 0 || clients == 0 {
        return Err(Error::config(
            "shared-minimizer needs >= 2 classes, >= 1 pair per class, >= 1 client",
        ));
    }
    let mut rng = SeededRng::for_purpose(spec.seed, StreamKind::DataGen);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let draw_row = |rng: &mut SeededRng| -> Vec<f64> {
        let mut w: Vec<f64> = (0..spec.feature_dim).map(|_| normal.sample(rng)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        for v in &mut w {
            *v *= spec.feature_norm / norm;
        }
        w
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut client_indices: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for (client, indices) in client_indices.iter_mut().enumerate() {
        let _ = client;
        for class in 0..spec.classes {
            for _ in 0..spec.pairs_per_class {
                let w = draw_row(&mut rng);
                for sign in [1.0, -1.0] {
                    indices.push(labels.len());
                    features.extend(w.iter().map(|v| sign * v));
                    labels.push(class);
                }
            }
        }
    }
    let train = Dataset::new(features, labels, spec.feature_dim, spec.classes)?;

    let mut test_features = Vec::new();
    let mut test_labels = Vec::new();
    for class in 0..spec.classes {
        for _ in 0..spec.pairs_per_class {
            let w = draw_row(&mut rng);
            for sign in [1.0, -1.0] {
                test_features.extend(w.iter().map(|v| sign * v));
                test_labels.push(class);
            }
        }
    }
    let test = Dataset::new(test_features, test_labels, spec.feature_dim, spec.classes)?;

    let partition = Partition::from_parts(client_indices, 0.0, vec![1.0 / spec.classes as f64; spec.classes]);
    Ok((SplitDataset { train, test }, partition))
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::format(path, "truncated header"));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(bytes)
}

/// Read an IDX image file (big-endian magic 0x00000803) into rows of
/// pixel intensities scaled to [0, 1].
pub fn read_idx_images(path: &Path) -> Result<(Vec<f64>, usize)> {
    let display = path.display().to_string();
    let bytes = read_file(path)?;
    let magic = read_u32_be(&bytes, 0, &display)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(
            &display,
            format!("bad image magic {magic:#010x}"),
        ));
    }
    let count = read_u32_be(&bytes, 4, &display)? as usize;
    let rows = read_u32_be(&bytes, 8, &display)? as usize;
    let cols = read_u32_be(&bytes, 12, &display)? as usize;
    let dim = rows * cols;
    let expected = 16 + count * dim;
    if bytes.len() != expected {
        return Err(Error::format(
            &display,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let features = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((features, dim))
}

/// Read an IDX label file (big-endian magic 0x00000801).
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let display = path.display().to_string();
    let bytes = read_file(path)?;
    let magic = read_u32_be(&bytes, 0, &display)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::format(
            &display,
            format!("bad label magic {magic:#010x}"),
        ));
    }
    let count = read_u32_be(&bytes, 4, &display)? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::format(
            &display,
            format!("expected {} bytes, found {}", 8 + count, bytes.len()),
        ));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Assemble a dataset from matching IDX image and label files.
pub fn read_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let (features, dim) = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if features.len() != labels.len() * dim {
        return Err(Error::format(
            images.display().to_string(),
            "image and label counts disagree",
        ));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(features, labels, dim, n_classes)
}

/// Read a dataset from CSV with header `feature_0,...,feature_{d-1},label`.
pub fn read_csv_dataset(path: &Path) -> Result<Dataset> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::format(&display, e.to_string())
    })?;
    let dim = reader.headers().map_err(|e| Error::format(&display, e.to_string()))?.len() - 1;
    if dim == 0 {
        return Err(Error::format(&display, "no feature columns"));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(&display, e.to_string()))?;
        if record.len() != dim + 1 {
            return Err(Error::format(&display, "ragged row"));
        }
        for field in record.iter().take(dim) {
            features.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Error::format(&display, e.to_string()))?,
            );
        }
        labels.push(
            record[dim]
                .parse::<usize>()
                .map_err(|e| Error::format(&display, e.to_string()))?,
        );
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(features, labels, dim, n_classes)
}

/// Write a dataset in the CSV layout `read_csv_dataset` accepts.
pub fn write_csv_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::format(&display, e.to_string()))?;
    let header: Vec<String> = (0..dataset.feature_dim())
        .map(|j| format!("feature_{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writer
        .write_record(&header)
        .map_err(|e| Error::format(&display, e.to_string()))?;
    for i in 0..dataset.len() {
        let row: Vec<String> = dataset
            .row(i)
            .iter()
            .map(|v| format!("{v}"))
            .chain(std::iter::once(dataset.labels()[i].to_string()))
            .collect();
        writer
            .write_record(&row)
            .map_err(|e| Error::format(&display, e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(&display, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ParamVector;
    use crate::models::Model;

    #[test]
    fn synthetic_is_deterministic_per_seed() {
        let spec = SyntheticSpec {
            classes: 3,
            feature_dim: 4,
            per_class: 25,
            spread: 0.3,
            scale: 1.0,
            seed: 77,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.train.labels(), b.train.labels());
        for i in 0..a.train.len() {
            assert_eq!(a.train.row(i), b.train.row(i));
        }
        assert_eq!(a.train.len(), 3 * 20);
        assert_eq!(a.test.len(), 3 * 5);
    }

    #[test]
    fn zero_spread_clusters_are_linearly_separable() {
        let spec = SyntheticSpec {
            classes: 4,
            feature_dim: 6,
            per_class: 20,
            spread: 0.0,
            scale: 1.0,
            seed: 5,
        };
        let split = generate_synthetic(&spec).unwrap();
        // Nearest-centroid weights classify degenerate clusters perfectly.
        let model = Model::softmax_regression(6, 4);
        let mut params = Vec::new();
        for class in 0..4 {
            let row = (0..split.train.len())
                .find(|&i| split.train.labels()[i] == class)
                .unwrap();
            params.extend(split.train.row(row).iter().map(|v| 10.0 * v));
        }
        params.extend(std::iter::repeat_n(0.0, 4));
        let x = ParamVector(params);
        let acc = model
            .accuracy(&x, &split.train.full_batch().unwrap())
            .unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn scale_is_an_exact_feature_multiplier() {
        let base = SyntheticSpec {
            classes: 3,
            feature_dim: 5,
            per_class: 10,
            spread: 0.2,
            scale: 1.0,
            seed: 13,
        };
        let scaled = SyntheticSpec {
            scale: 10.0,
            ..base.clone()
        };
        let a = generate_synthetic(&base).unwrap();
        let b = generate_synthetic(&scaled).unwrap();
        for i in 0..a.train.len() {
            for (u, v) in a.train.row(i).iter().zip(b.train.row(i)) {
                assert_eq!((u * 10.0).to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn shared_minimizer_has_zero_gradient_at_origin_per_client() {
        let spec = SharedMinimizerSpec {
            classes: 3,
            feature_dim: 5,
            pairs_per_class: 4,
            feature_norm: 0.5,
            seed: 3,
        };
        let (split, partition) = generate_shared_minimizer(&spec, 4).unwrap();
        let model = Model::softmax_regression(5, 3);
        let zero = ParamVector::zeros(model.param_count());
        for indices in partition.client_indices() {
            let batch = split.train.batch_of(indices).unwrap();
            let g = model.grad(&zero, &batch).unwrap();
            for v in g.iter() {
                assert!(v.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn idx_round_trip_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let image_path = dir.path().join("img.idx");
        let label_path = dir.path().join("lbl.idx");
        // 2 images of 2x2 pixels.
        let mut img = Vec::new();
        img.extend(IDX_IMAGE_MAGIC.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend(2u32.to_be_bytes());
        img.extend([0u8, 255, 128, 64, 10, 20, 30, 40]);
        std::fs::write(&image_path, img).unwrap();
        let mut lbl = Vec::new();
        lbl.extend(IDX_LABEL_MAGIC.to_be_bytes());
        lbl.extend(2u32.to_be_bytes());
        lbl.extend([7u8, 3]);
        std::fs::write(&label_path, lbl).unwrap();

        let dataset = read_idx_dataset(&image_path, &label_path).unwrap();
        assert_eq!(dataset.len(), 2);
        assert_eq!(dataset.feature_dim(), 4);
        assert_eq!(dataset.labels(), &[7, 3]);
        assert_eq!(dataset.row(0)[1], 1.0);
        assert!((dataset.row(0)[2] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn idx_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");
        let mut img = Vec::new();
        img.extend(0x12345678u32.to_be_bytes());
        img.extend([0u8; 12]);
        std::fs::write(&path, img).unwrap();
        assert!(matches!(
            read_idx_images(&path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn csv_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let dataset = Dataset::new(vec![0.5, -1.25, 3.0, 2.5], vec![1, 0], 2, 2).unwrap();
        write_csv_dataset(&dataset, &path).unwrap();
        let back = read_csv_dataset(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.labels(), dataset.labels());
        for i in 0..2 {
            assert_eq!(back.row(i), dataset.row(i));
        }
    }

    #[test]
    fn reference_fit_separates_two_clusters() {
        let spec = SyntheticSpec {
            classes: 2,
            feature_dim: 4,
            per_class: 60,
            spread: 0.1,
            scale: 1.0,
            seed: 21,
        };
        let split = generate_synthetic(&spec).unwrap();
        let model = Model::softmax_regression(4, 2);
        let x = crate::analysis::reference_minimizer(&model, &split.train, 1e-3, 3000).unwrap();
        let acc = model
            .accuracy(&x, &split.test.full_batch().unwrap())
            .unwrap();
        assert!(acc > 0.99, "test accuracy {acc}");
    }

    #[test]
    fn opposite_unit_centroids_are_fit_to_high_accuracy() {
        // Two classes at +e1 and -e1 with spread 0.1.
        let centroids = vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]];
        let mut rng = SeededRng::for_purpose(33, StreamKind::DataGen);
        let split = make_clusters(&centroids, 0.1, 100, 1.0, &mut rng).unwrap();
        let model = Model::softmax_regression(3, 2);
        let x = crate::analysis::reference_minimizer(&model, &split.train, 1e-3, 3000).unwrap();
        let acc = model
            .accuracy(&x, &split.test.full_batch().unwrap())
            .unwrap();
        assert!(acc > 0.99, "test accuracy {acc}");
    }
}
