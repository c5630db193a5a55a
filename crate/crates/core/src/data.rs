//! Synthetic cross-scene spectra, few-shot splitting and CSV I/O.
//!
//! Each latent component has a smooth spectral signature (a sum of Gaussian
//! absorption bumps over normalised wavelength). A scene samples those
//! signatures on its own band grid, so the source and target sensors see the
//! same materials at different spectral resolutions. The target mixing map is
//! then blended towards a random orthogonal map by `conflict_strength`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived, Rng};
use crate::tensor_net::{dot, Matrix};

/// Dimension of the latent material space.
pub const LATENT_DIM: usize = 4;
/// Spread of class prototypes in latent space. Together with the default
/// `noise_sigma` this leaves classes overlapping enough that ten shots do not
/// saturate target accuracy.
pub const PROTOTYPE_SCALE: f64 = 0.15;
const BUMPS_PER_SIGNATURE: usize = 3;
const SCENE_STREAM: u64 = 0x5cee0;
const SPLIT_STREAM: u64 = 0xf35407;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub name: String,
    pub bands: usize,
    pub classes: usize,
    /// `N × bands`
    pub spectra: Matrix,
    pub labels: Vec<usize>,
}

impl SceneDataset {
    /// Validated constructor: labels in range, every class present.
    pub fn new(
        name: impl Into<String>,
        classes: usize,
        spectra: Matrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let ds = Self::from_parts(name, classes, spectra, labels)?;
        if ds.is_empty() {
            return Err(Error::Data(format!("scene '{}' has no samples", ds.name)));
        }
        let counts = ds.class_counts();
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!(
                "scene '{}': class {k} has no samples",
                ds.name
            )));
        }
        Ok(ds)
    }

    /// Like [`SceneDataset::new`] but allows empty classes (used for splits).
    fn from_parts(
        name: impl Into<String>,
        classes: usize,
        spectra: Matrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let name = name.into();
        if labels.len() != spectra.rows() {
            return Err(Error::Data(format!(
                "scene '{name}': {} labels for {} spectra",
                labels.len(),
                spectra.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Index {
                index: bad,
                len: classes,
            });
        }
        Ok(Self {
            name,
            bands: spectra.cols(),
            classes,
            spectra,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> SceneDataset {
        SceneDataset {
            name: self.name.clone(),
            bands: self.bands,
            classes: self.classes,
            spectra: self.spectra.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub bands_source: usize,
    pub bands_target: usize,
    pub classes_source: usize,
    pub classes_target: usize,
    /// Classes `0..shared_classes` use the same material in both scenes.
    pub shared_classes: usize,
    pub samples_per_class_source: usize,
    pub samples_per_class_target: usize,
    pub noise_sigma: f64,
    /// 0 = target map is the resampled source map, 1 = random orthogonal map.
    pub conflict_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            bands_source: 48,
            bands_target: 32,
            classes_source: 7,
            classes_target: 5,
            shared_classes: 3,
            samples_per_class_source: 200,
            samples_per_class_target: 60,
            noise_sigma: 0.1,
            conflict_strength: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("bands_source", self.bands_source),
            ("bands_target", self.bands_target),
            ("classes_source", self.classes_source),
            ("classes_target", self.classes_target),
            ("samples_per_class_source", self.samples_per_class_source),
            ("samples_per_class_target", self.samples_per_class_target),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.shared_classes > self.classes_source.min(self.classes_target) {
            return Err(Error::Config(format!(
                "shared_classes ({}) exceeds a scene's class count",
                self.shared_classes
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.conflict_strength) {
            return Err(Error::Config(format!(
                "conflict_strength must lie in [0, 1], got {}",
                self.conflict_strength
            )));
        }
        Ok(())
    }
}

/// Smooth non-negative signature over wavelength `w ∈ [0, 1]`.
#[derive(Clone, Debug)]
struct Signature {
    bumps: Vec<(f64, f64, f64)>, // (centre, width, amplitude)
}

impl Signature {
    fn random(rng: &mut Rng) -> Self {
        let bumps = (0..BUMPS_PER_SIGNATURE)
            .map(|_| {
                (
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.03..0.15),
                    rng.random_range(0.5..1.5),
                )
            })
            .collect();
        Self { bumps }
    }

    fn at(&self, w: f64) -> f64 {
        self.bumps
            .iter()
            .map(|&(c, s, a)| a * (-(w - c).powi(2) / (2.0 * s * s)).exp())
            .sum()
    }
}

fn band_grid(bands: usize) -> Vec<f64> {
    if bands == 1 {
        return vec![0.5];
    }
    (0..bands).map(|b| b as f64 / (bands - 1) as f64).collect()
}

/// `bands × LATENT_DIM` map sampling each signature on the band grid.
fn sample_map(signatures: &[Signature], bands: usize) -> Matrix {
    let mut m = Matrix::zeros(bands, signatures.len());
    for (b, w) in band_grid(bands).into_iter().enumerate() {
        for (l, s) in signatures.iter().enumerate() {
            m.set(b, l, s.at(w));
        }
    }
    m
}

/// `rows × cols` matrix with orthonormal columns (Gram–Schmidt on Gaussians;
/// columns beyond `rows` cannot be orthogonal and are left Gaussian-normalised).
fn random_orthonormal(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for _ in 0..cols {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        if basis.len() < rows {
            for u in &basis {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = dot(&v, &v).sqrt().max(1e-300);
        v.iter_mut().for_each(|a| *a /= n);
        basis.push(v);
    }
    let mut m = Matrix::zeros(rows, cols);
    for (c, v) in basis.iter().enumerate() {
        for (r, &x) in v.iter().enumerate() {
            m.set(r, c, x);
        }
    }
    m
}

fn frobenius(m: &Matrix) -> f64 {
    dot(m.as_slice(), m.as_slice()).sqrt()
}

fn render_scene(
    name: &str,
    map: &Matrix,
    prototypes: &[Vec<f64>],
    per_class: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Result<SceneDataset> {
    let classes = prototypes.len();
    let mut latent = Matrix::zeros(classes * per_class, LATENT_DIM);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (k, proto) in prototypes.iter().enumerate() {
        for _ in 0..per_class {
            let r = labels.len();
            for (l, &mu) in proto.iter().enumerate() {
                let jitter: f64 = StandardNormal.sample(rng);
                latent.set(r, l, mu + sigma * jitter);
            }
            labels.push(k);
        }
    }
    let spectra = latent.matmul_t(map)?;
    SceneDataset::new(name, classes, spectra, labels)
}

/// Deterministic source/target pair for `cfg`.
pub fn generate_pair(cfg: &SynthConfig) -> Result<(SceneDataset, SceneDataset)> {
    cfg.validate()?;
    let mut rng = derived(cfg.seed, SCENE_STREAM);
    let signatures: Vec<Signature> = (0..LATENT_DIM)
        .map(|_| Signature::random(&mut rng))
        .collect();

    let prototype = |rng: &mut Rng| -> Vec<f64> {
        (0..LATENT_DIM)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                PROTOTYPE_SCALE * z
            })
            .collect()
    };
    let shared: Vec<Vec<f64>> = (0..cfg.shared_classes)
        .map(|_| prototype(&mut rng))
        .collect();
    let mut source_protos = shared.clone();
    source_protos.extend((cfg.shared_classes..cfg.classes_source).map(|_| prototype(&mut rng)));
    let mut target_protos = shared;
    target_protos.extend((cfg.shared_classes..cfg.classes_target).map(|_| prototype(&mut rng)));

    let source_map = sample_map(&signatures, cfg.bands_source);
    let resampled = sample_map(&signatures, cfg.bands_target);
    let ortho = random_orthonormal(cfg.bands_target, LATENT_DIM, &mut rng);
    let ortho = ortho.scale(frobenius(&resampled) / frobenius(&ortho));
    let c = cfg.conflict_strength;
    let target_map = resampled.scale(1.0 - c).add(&ortho.scale(c))?;

    let source = render_scene(
        "source",
        &source_map,
        &source_protos,
        cfg.samples_per_class_source,
        cfg.noise_sigma,
        &mut rng,
    )?;
    let target = render_scene(
        "target",
        &target_map,
        &target_protos,
        cfg.samples_per_class_target,
        cfg.noise_sigma,
        &mut rng,
    )?;
    Ok((source, target))
}

/// Few-shot training split plus the held-out remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct FewShotSplit {
    pub train: SceneDataset,
    pub eval: SceneDataset,
    pub train_indices: Vec<usize>,
    pub eval_indices: Vec<usize>,
}

/// Draw exactly `k` samples per class without replacement.
pub fn sample_k_per_class(ds: &SceneDataset, k: usize, seed: u64) -> Result<FewShotSplit> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some((class, idx)) = by_class.iter().enumerate().find(|(_, v)| v.len() < k) {
        return Err(Error::Data(format!(
            "class {class} has {} samples, fewer than the requested {k}",
            idx.len()
        )));
    }
    let mut rng = derived(seed, SPLIT_STREAM);
    let mut in_train = vec![false; ds.len()];
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            in_train[i] = true;
        }
    }
    let (train_indices, eval_indices): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| in_train[i]);
    Ok(FewShotSplit {
        train: ds.subset(&train_indices),
        eval: ds.subset(&eval_indices),
        train_indices,
        eval_indices,
    })
}

/// Serialise in the `# scene=.. bands=.. classes=..` + `label,b0,..` format.
pub fn to_csv_string(ds: &SceneDataset) -> String {
    let mut out = format!(
        "# scene={} bands={} classes={}\n",
        ds.name, ds.bands, ds.classes
    );
    for (row, &y) in ds.spectra.row_iter().zip(&ds.labels) {
        let _ = write!(out, "{y}");
        for v in row {
            // Display prints the shortest string that parses back to the same f64
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_csv(ds: &SceneDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_csv_string(ds))?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<SceneDataset> {
    parse_csv(&fs::read_to_string(path)?)
}

fn parse_header(line: &str) -> Result<(String, usize, usize)> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| bad("header must start with '#'".into()))?;
    let (mut name, mut bands, mut classes) = (None, None, None);
    for tok in body.split_whitespace() {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got '{tok}'")))?;
        let count = || {
            val.parse::<usize>()
                .map_err(|_| bad(format!("'{key}' is not a count: '{val}'")))
        };
        match key {
            "scene" => name = Some(val.to_string()),
            "bands" => bands = Some(count()?),
            "classes" => classes = Some(count()?),
            other => return Err(bad(format!("unknown header key '{other}'"))),
        }
    }
    match (name, bands, classes) {
        (Some(n), Some(b), Some(c)) => Ok((n, b, c)),
        _ => Err(bad("header needs scene=, bands= and classes=".into())),
    }
}

pub fn parse_csv(text: &str) -> Result<SceneDataset> {
    let mut lines = text.split('\n');
    let header = lines
        .next()
        .filter(|l| !l.trim().is_empty())
        .ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
    let (name, bands, classes) = parse_header(header.trim_end_matches('\r'))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != bands + 1 {
            return Err(err(format!(
                "expected {} fields, found {}",
                bands + 1,
                fields.len()
            )));
        }
        let label: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| err(format!("label '{}' is not a class index", fields[0])))?;
        if label >= classes {
            return Err(err(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        for (b, f) in fields[1..].iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| err(format!("band {b}: '{f}' is not a number")))?;
            if !v.is_finite() {
                return Err(err(format!("band {b}: non-finite value")));
            }
            data.push(v);
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Data(format!("scene '{name}' has no samples")));
    }
    let spectra = Matrix::from_vec(labels.len(), bands, data)?;
    SceneDataset::new(name, classes, spectra, labels)
}
