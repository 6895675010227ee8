//! Whole datasets: generation, export, manifest and reload.

use std::fs;
use std::path::{Component as PathComponent, Path};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::corrupt::{corrupt_labels, seed_uncertainty, CorruptionSpec};
use super::scene::{generate_scene, scene_rng, SceneSpec};
use crate::error::{Error, Result};
use crate::io::{ctsr, kv, pgm, read_bytes, read_text, write_bytes};
use crate::labels::LabelMap;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
const FORMAT_VERSION: u32 = 1;
const ENTRIES_MARKER: &str = "[entries]";
const CORRUPTION_SALT: u64 = 0x5eed_c0de_0bad_f00d;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSpec {
    pub scene: SceneSpec,
    pub corruption: CorruptionSpec,
    pub count: usize,
}

/// Keys accepted by [`DatasetSpec::set`].
pub const SPEC_KEYS: [&str; 15] = [
    "height",
    "width",
    "classes",
    "min_shapes",
    "max_shapes",
    "seed",
    "noise",
    "color_jitter",
    "erode_px",
    "dilate_px",
    "blob_smooth_iters",
    "drop_thin_prob",
    "flip_prob",
    "uncertainty_noise",
    "count",
];

impl DatasetSpec {
    pub fn has_key(key: &str) -> bool {
        SPEC_KEYS.contains(&key)
    }

    /// Set one generator or corruption setting from text.
    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "height" => self.scene.height = kv::value(k, v)?,
            "width" => self.scene.width = kv::value(k, v)?,
            "classes" => self.scene.classes = kv::value(k, v)?,
            "min_shapes" => self.scene.min_shapes = kv::value(k, v)?,
            "max_shapes" => self.scene.max_shapes = kv::value(k, v)?,
            "seed" => self.scene.seed = kv::value(k, v)?,
            "noise" => self.scene.noise = kv::value(k, v)?,
            "color_jitter" => self.scene.color_jitter = kv::value(k, v)?,
            "erode_px" => self.corruption.erode_px = kv::value(k, v)?,
            "dilate_px" => self.corruption.dilate_px = kv::value(k, v)?,
            "blob_smooth_iters" => self.corruption.blob_smooth_iters = kv::value(k, v)?,
            "drop_thin_prob" => self.corruption.drop_thin_prob = kv::value(k, v)?,
            "flip_prob" => self.corruption.flip_prob = kv::value(k, v)?,
            "uncertainty_noise" => self.corruption.uncertainty_noise = kv::value(k, v)?,
            "count" => self.count = kv::value(k, v)?,
            _ => return Err(Error::Config(format!("unknown dataset key {k:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines, then validate.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv::parse(text)? {
            self.set(&k, &v)?;
        }
        self.validate()
    }

    /// Check the scene and corruption settings; failures are reported as
    /// configuration errors.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        self.scene.validate().map_err(as_config)?;
        self.corruption.validate().map_err(as_config)
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// 3×H×W, stored at f32 precision.
    pub image: Tensor,
    pub gt: LabelMap,
    /// Corrupted seed labels, no IGNORE.
    pub seed: LabelMap,
    /// Seed uncertainty per pixel, stored at f32 precision.
    pub uncertainty: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Sample>,
}

fn quantize_vec(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

/// Deterministic sample `index` of the dataset described by `spec`.
pub fn generate_sample(spec: &DatasetSpec, index: u64) -> Result<Sample> {
    let scene = generate_scene(&spec.scene, index)?;
    let mut rng = scene_rng(spec.scene.seed ^ CORRUPTION_SALT, index);
    let seed = corrupt_labels(&scene.gt, &spec.corruption, spec.scene.classes, &mut rng)?;
    let uncertainty = seed_uncertainty(&seed, spec.corruption.uncertainty_noise, &mut rng);
    Ok(Sample {
        image: ctsr::quantize(&scene.image),
        gt: scene.gt,
        seed,
        uncertainty: quantize_vec(uncertainty),
    })
}

/// Generate all samples. Work is spread over the rayon pool; the result is
/// ordered by index and independent of the thread count.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.scene.validate()?;
    spec.corruption.validate()?;
    let samples = (0..spec.count as u64)
        .into_par_iter()
        .map(|i| generate_sample(spec, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        samples,
    })
}

/// File paths of one manifest entry, relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub image: String,
    pub gt: String,
    pub seed: String,
    pub uncertainty: String,
}

impl Entry {
    fn for_index(i: usize) -> Entry {
        Entry {
            image: format!("images/{i:05}.ctsr"),
            gt: format!("gt/{i:05}.pgm"),
            seed: format!("seeds/{i:05}.pgm"),
            uncertainty: format!("uncertainty/{i:05}.ctsr"),
        }
    }

    fn paths(&self) -> [&str; 4] {
        [&self.image, &self.gt, &self.seed, &self.uncertainty]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub entries: Vec<Entry>,
}

fn spec_pairs(spec: &DatasetSpec) -> Vec<(&'static str, String)> {
    let (s, c) = (&spec.scene, &spec.corruption);
    vec![
        ("format", FORMAT_VERSION.to_string()),
        ("height", s.height.to_string()),
        ("width", s.width.to_string()),
        ("classes", s.classes.to_string()),
        ("min_shapes", s.min_shapes.to_string()),
        ("max_shapes", s.max_shapes.to_string()),
        ("seed", s.seed.to_string()),
        ("noise", s.noise.to_string()),
        ("color_jitter", s.color_jitter.to_string()),
        ("erode_px", c.erode_px.to_string()),
        ("dilate_px", c.dilate_px.to_string()),
        ("blob_smooth_iters", c.blob_smooth_iters.to_string()),
        ("drop_thin_prob", c.drop_thin_prob.to_string()),
        ("flip_prob", c.flip_prob.to_string()),
        ("uncertainty_noise", c.uncertainty_noise.to_string()),
        ("count", spec.count.to_string()),
    ]
}

pub fn render_manifest(m: &Manifest) -> String {
    let mut out = String::from("# synthetic segmentation dataset\n");
    out.push_str(&kv::render(spec_pairs(&m.spec)));
    out.push_str(ENTRIES_MARKER);
    out.push('\n');
    for (i, e) in m.entries.iter().enumerate() {
        out.push_str(&format!(
            "{i}\t{}\t{}\t{}\t{}\n",
            e.image, e.gt, e.seed, e.uncertainty
        ));
    }
    out
}

fn check_relative(path: &str) -> Result<()> {
    let p = Path::new(path);
    let ok = !path.is_empty()
        && p.components()
            .all(|c| matches!(c, PathComponent::Normal(_)));
    if !ok {
        return Err(Error::format(
            "dataset manifest",
            format!("path {path:?} must be relative without '..'"),
        ));
    }
    Ok(())
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let bad = |m: String| Error::format("dataset manifest", m);
    let (head, body) = text
        .split_once(&format!("{ENTRIES_MARKER}\n"))
        .or_else(|| text.strip_suffix(ENTRIES_MARKER).map(|h| (h, "")))
        .ok_or_else(|| bad(format!("missing {ENTRIES_MARKER} line")))?;
    let header = kv::parse(head)?;
    let mut spec = DatasetSpec::default();
    let mut seen = 0;
    for (k, v) in &header {
        match k.as_str() {
            "format" => {
                if kv::value::<u32>(k, v)? != FORMAT_VERSION {
                    return Err(bad(format!("unsupported format {v}")));
                }
            }
            _ if DatasetSpec::has_key(k) => spec.set(k, v)?,
            _ => return Err(bad(format!("unknown header key {k:?}"))),
        }
        seen += 1;
    }
    if seen != spec_pairs(&spec).len() {
        return Err(bad("header is incomplete".into()));
    }
    spec.scene.validate()?;
    spec.corruption.validate()?;
    let mut entries = Vec::new();
    for (n, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("entry {n}: expected 5 tab-separated fields")));
        }
        if f[0].parse::<usize>().ok() != Some(entries.len()) {
            return Err(bad(format!("entry {n}: index {:?} out of sequence", f[0])));
        }
        for p in &f[1..] {
            check_relative(p)?;
        }
        entries.push(Entry {
            image: f[1].to_string(),
            gt: f[2].to_string(),
            seed: f[3].to_string(),
            uncertainty: f[4].to_string(),
        });
    }
    if entries.len() != spec.count {
        return Err(bad(format!(
            "count={} but {} entries",
            spec.count,
            entries.len()
        )));
    }
    Ok(Manifest { spec, entries })
}

/// SHA-256 over the manifest bytes followed by every referenced file in
/// manifest order, as lowercase hex.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let text = read_text(&dir.join(MANIFEST_FILE))?;
    let m = parse_manifest(&text)?;
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    for e in &m.entries {
        for p in e.paths() {
            h.update(read_bytes(&dir.join(p))?);
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Write a dataset under `dir` (created if missing) and return its hash.
pub fn export(dir: &Path, data: &Dataset) -> Result<String> {
    for sub in ["images", "gt", "seeds", "uncertainty"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let entries: Vec<Entry> = (0..data.samples.len()).map(Entry::for_index).collect();
    for (s, e) in data.samples.iter().zip(&entries) {
        ctsr::write(&dir.join(&e.image), &s.image)?;
        pgm::write(&dir.join(&e.gt), &s.gt)?;
        pgm::write(&dir.join(&e.seed), &s.seed)?;
        let u = Tensor::new(&[s.seed.height(), s.seed.width()], s.uncertainty.clone())?;
        ctsr::write(&dir.join(&e.uncertainty), &u)?;
    }
    let spec = DatasetSpec {
        count: data.samples.len(),
        ..data.spec.clone()
    };
    let text = render_manifest(&Manifest { spec, entries });
    write_bytes(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    dataset_hash(dir)
}

/// Read a dataset written by [`export`], checking every file against the
/// header.
pub fn load(dir: &Path) -> Result<Dataset> {
    let m = parse_manifest(&read_text(&dir.join(MANIFEST_FILE))?)?;
    let (h, w, k) = (
        m.spec.scene.height,
        m.spec.scene.width,
        m.spec.scene.classes,
    );
    let mut samples = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        let image = ctsr::read(&dir.join(&e.image))?;
        if image.shape() != [3, h, w] {
            return Err(Error::shape(format!(
                "{}: shape {:?}, expected [3, {h}, {w}]",
                e.image,
                image.shape()
            )));
        }
        let gt = pgm::read(&dir.join(&e.gt))?;
        let seed = pgm::read(&dir.join(&e.seed))?;
        for (name, map) in [(&e.gt, &gt), (&e.seed, &seed)] {
            if map.height() != h || map.width() != w {
                return Err(Error::shape(format!(
                    "{name}: size differs from the header"
                )));
            }
            map.check_classes(k)?;
        }
        let u = ctsr::read(&dir.join(&e.uncertainty))?;
        if u.shape() != [h, w] {
            return Err(Error::shape(format!(
                "{}: shape {:?}, expected [{h}, {w}]",
                e.uncertainty,
                u.shape()
            )));
        }
        samples.push(Sample {
            image,
            gt,
            seed,
            uncertainty: u.into_data(),
        });
    }
    Ok(Dataset {
        spec: m.spec,
        samples,
    })
}
