//! Multi-view datasets: CSV/manifest I/O, the synthetic Gaussian benchmark, and
//! noise-view injection.
//!
//! A manifest is a TOML file:
//!
//! ```toml
//! name = "synthetic"
//! views = ["view0.csv", "view1.csv"]   # one numeric CSV per view, no header
//! labels = "labels.csv"                # optional, one integer per line
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    name: String,
    views: Vec<Matrix>,
    labels: Option<Vec<usize>>,
}

impl MultiViewDataset {
    pub fn new(name: impl Into<String>, views: Vec<Matrix>, labels: Option<Vec<usize>>) -> Result<Self> {
        let n = views.first().map_or(0, Matrix::rows);
        for (v, m) in views.iter().enumerate() {
            if m.rows() != n {
                return Err(Error::InvalidInput(format!(
                    "view {v} has {} rows but view 0 has {n}",
                    m.rows()
                )));
            }
            if m.cols() == 0 {
                return Err(Error::InvalidInput(format!("view {v} has no columns")));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::InvalidInput(format!(
                    "label file has {} rows but views have {n}",
                    l.len()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            views,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.views.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn views(&self) -> &[Matrix] {
        &self.views
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(Matrix::cols).collect()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.iter().max().map(|m| m + 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub views: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

pub fn read_csv_matrix(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", cols.unwrap_or(0), record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("column {}: not a number: {field:?}", c + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("column {}: non-finite value {field:?}", c + 1),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Writes rows with the shortest round-tripping decimal form of each value.
pub fn write_csv_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::with_capacity(m.rows() * m.cols() * 12);
    for row in m.row_iter() {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("not a class index: {:?}", l.trim()),
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_multiview(manifest_path: &Path) -> Result<MultiViewDataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.to_path_buf(),
        line: e
            .span()
            .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
        message: e.message().to_string(),
    })?;
    if manifest.views.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: manifest lists no views",
            manifest_path.display()
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let mut views = Vec::with_capacity(manifest.views.len());
    for p in &manifest.views {
        let path = resolve(p);
        let m = read_csv_matrix(&path)?;
        if let Some(first) = views.first().map(Matrix::rows) {
            if m.rows() != first {
                return Err(Error::InvalidInput(format!(
                    "{} has {} rows but {} has {first}",
                    path.display(),
                    m.rows(),
                    resolve(&manifest.views[0]).display()
                )));
            }
        }
        views.push(m);
    }
    let labels = match &manifest.labels {
        Some(p) => {
            let path = resolve(p);
            let l = read_labels(&path)?;
            if l.len() != views[0].rows() {
                return Err(Error::InvalidInput(format!(
                    "{} has {} rows but the views have {}",
                    path.display(),
                    l.len(),
                    views[0].rows()
                )));
            }
            Some(l)
        }
        None => None,
    };
    MultiViewDataset::new(manifest.name, views, labels)
}

/// Writes `view{v}.csv`, `labels.csv` (if any) and `manifest.toml` into `dir`.
/// Returns the manifest path.
pub fn save_multiview(data: &MultiViewDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut views = Vec::with_capacity(data.view_count());
    for (v, m) in data.views().iter().enumerate() {
        let file = format!("view{v}.csv");
        write_csv_matrix(&dir.join(&file), m)?;
        views.push(PathBuf::from(file));
    }
    let labels = match data.labels() {
        Some(l) => {
            write_labels(&dir.join("labels.csv"), l)?;
            Some(PathBuf::from("labels.csv"))
        }
        None => None,
    };
    let manifest = Manifest {
        name: data.name().to_string(),
        views,
        labels,
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Parameters of the Gaussian-cluster benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub k: usize,
    /// Input width of each informative view; its length is the number of views.
    pub dims: Vec<usize>,
    /// Typical distance between two class centers, in units of the within-class std.
    pub separation: f64,
    pub seed: u64,
}

/// Balanced labels; each view draws its own class centers `c_k ~ N(0, s²/(2D) I)`
/// (so `E‖c_a − c_b‖² = s²`) and unit-variance points around them.
pub fn synth_multiview(spec: &SynthSpec) -> Result<MultiViewDataset> {
    let SynthSpec {
        n,
        k,
        ref dims,
        separation,
        seed,
    } = *spec;
    if k == 0 || n < 2 * k {
        return Err(Error::InvalidInput(format!("need N >= 2K, got N = {n}, K = {k}")));
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidInput(format!("invalid view dims {dims:?}")));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidInput(format!("separation must be positive, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let views = dims
        .iter()
        .map(|&d| {
            let scale = separation / (2.0 * d as f64).sqrt();
            let centers = Matrix::from_fn(k, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
            Matrix::from_fn(n, d, |r, c| centers[(labels[r], c)] + rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    MultiViewDataset::new(
        format!("synth-n{n}-k{k}-v{}-s{separation}", dims.len()),
        views,
        Some(labels),
    )
}

/// Mean informative width, rounded; the default noise-view width.
pub fn default_noise_dim(data: &MultiViewDataset) -> usize {
    let dims = data.view_dims();
    ((dims.iter().sum::<usize>() as f64 / dims.len().max(1) as f64).round() as usize).max(1)
}

/// Appends a view of i.i.d. standard-normal entries, independent of everything else.
pub fn inject_noise_view(data: &MultiViewDataset, noise_dim: usize, seed: u64) -> Result<MultiViewDataset> {
    if noise_dim == 0 {
        return Err(Error::InvalidInput("noise view needs at least one column".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Matrix::from_fn(data.len(), noise_dim, |_, _| rng.sample(StandardNormal));
    let mut views = data.views().to_vec();
    views.push(noise);
    MultiViewDataset::new(format!("{}+noise", data.name()), views, data.labels.clone())
}

/// A clean benchmark and its noise-injected twin, both derived from one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub n: usize,
    pub k: usize,
    pub dims: Vec<usize>,
    pub separation: f64,
    pub noise_dim: usize,
}

impl Benchmark {
    pub const PRESETS: [&'static str; 1] = ["noisy3view"];

    /// Two 10-d informative views plus one 60-d standard-normal view, so the
    /// noise takes 75% of the concatenated input.
    pub fn noisy3view() -> Self {
        Self {
            name: "noisy3view".into(),
            n: 600,
            k: 3,
            dims: vec![10, 10],
            separation: 8.0,
            noise_dim: 60,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "noisy3view" => Some(Self::noisy3view()),
            _ => None,
        }
    }

    pub fn clean(&self, seed: u64) -> Result<MultiViewDataset> {
        synth_multiview(&SynthSpec {
            n: self.n,
            k: self.k,
            dims: self.dims.clone(),
            separation: self.separation,
            seed,
        })
    }

    pub fn noisy(&self, seed: u64) -> Result<MultiViewDataset> {
        inject_noise_view(&self.clean(seed)?, self.noise_dim, noise_seed(seed, 0))
    }
}

/// Seed of the `index`-th noise view for a dataset generated from `seed`.
pub fn noise_seed(seed: u64, index: u64) -> u64 {
    seed ^ 0x6e6f_6973_6500_0000 ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SynthSpec {
        SynthSpec {
            n: 600,
            k: 3,
            dims: vec![10, 10],
            separation: 8.0,
            seed,
        }
    }

    #[test]
    fn balanced_labels_and_distinct_views() {
        let d = synth_multiview(&spec(1)).unwrap();
        let mut counts = [0; 3];
        d.labels().unwrap().iter().for_each(|&l| counts[l] += 1);
        assert_eq!(counts, [200, 200, 200]);
        assert_ne!(d.views()[0], d.views()[1]);
        assert_eq!(d.view_dims(), vec![10, 10]);
    }

    #[test]
    fn synth_is_reproducible() {
        assert_eq!(synth_multiview(&spec(4)).unwrap(), synth_multiview(&spec(4)).unwrap());
        assert_ne!(synth_multiview(&spec(4)).unwrap(), synth_multiview(&spec(5)).unwrap());
    }

    #[test]
    fn synth_rejects_bad_sizes() {
        assert!(synth_multiview(&SynthSpec { n: 5, ..spec(0) }).is_err());
        assert!(synth_multiview(&SynthSpec { separation: 0.0, ..spec(0) }).is_err());
        assert!(synth_multiview(&SynthSpec { dims: vec![], ..spec(0) }).is_err());
    }

    #[test]
    fn noise_injection_appends_only() {
        let d = synth_multiview(&spec(2)).unwrap();
        let noisy = inject_noise_view(&d, 7, 9).unwrap();
        assert_eq!(noisy.view_count(), 3);
        assert_eq!(&noisy.views()[..2], d.views());
        assert_eq!(noisy.views()[2].cols(), 7);
        assert_eq!(noisy.labels(), d.labels());
        let other = inject_noise_view(&d, 7, 10).unwrap();
        assert_ne!(noisy.views()[2], other.views()[2]);
        assert!(inject_noise_view(&d, 0, 1).is_err());
        assert_eq!(default_noise_dim(&d), 10);
    }

    #[test]
    fn dataset_rejects_mismatched_rows() {
        let err = MultiViewDataset::new("x", vec![Matrix::zeros(4, 2), Matrix::zeros(5, 2)], None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('5') && msg.contains('4'), "{msg}");
    }
}
