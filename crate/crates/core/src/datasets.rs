//! Dataset directories, manifests, stratified splits and the synthetic
//! shape/appearance benchmark.
//!
//! A dataset on disk is `root/<class_name>/<object_id>.ply`. The manifest
//! lists classes in lexicographic order and items in (class, file name)
//! order, each with a `train` or `test` tag.
//!
//! The synthetic benchmark has two surface families (sphere and cylinder
//! shells) and three appearance variants per family. Within a family the
//! variants share anchor positions and tangent frames draw for draw; they
//! differ only in ellipsoid shape (flat vs slender) or opacity (opaque vs
//! transparent). Position-only features therefore cannot tell the variants
//! apart, which caps position-only accuracy at one third.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gs_ply::{activate, parse_ply, write_ply, ColorPayload, GaussianCloud, PlyError, RawGaussianCloud};
use crate::quat::{cross, dot, norm3, Quat};
use crate::rng::{stable_hash, SeedStream};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no class directories under {0}")]
    NoClasses(PathBuf),
    #[error("class `{0}` has no .ply files")]
    EmptyClass(String),
    #[error("cannot read {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("cannot write {path}: {reason}")]
    WriteFailed { path: PathBuf, reason: String },
    #[error("class `{class}` has {items} items, too few to split with this fraction")]
    ClassTooSmall { class: String, items: usize },
    #[error("test fraction {0} is not in (0, 1)")]
    InvalidFraction(f64),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Ply { path: PathBuf, source: PlyError },
}

impl DatasetError {
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::NoClasses(_) => "NoClasses",
            DatasetError::EmptyClass(_) => "EmptyClass",
            DatasetError::UnreadableFile { .. } => "UnreadableFile",
            DatasetError::WriteFailed { .. } => "WriteFailed",
            DatasetError::ClassTooSmall { .. } => "ClassTooSmall",
            DatasetError::InvalidFraction(_) => "InvalidFraction",
            DatasetError::InvalidManifest(_) => "InvalidManifest",
            DatasetError::InvalidSpec(_) => "InvalidSpec",
            DatasetError::Ply { source, .. } => source.code(),
        }
    }
}

fn unreadable(path: &Path, e: impl ToString) -> DatasetError {
    DatasetError::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn write_failed(path: &Path, e: impl ToString) -> DatasetError {
    DatasetError::WriteFailed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    /// `<class_name>/<file stem>`; unique within a manifest.
    pub id: String,
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub class: usize,
    #[serde(default)]
    pub split: Split,
    /// Items sharing a group are split together and sampled identically
    /// at evaluation time. Defaults to the id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl ManifestItem {
    pub fn group_key(&self) -> &str {
        self.group.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidManifest(m));
        if self.classes.len() < 2 {
            return bad("at least two classes are required".into());
        }
        let mut names = HashSet::new();
        for c in &self.classes {
            if c.is_empty() || !names.insert(c.as_str()) {
                return bad(format!("class name `{c}` is empty or repeated"));
            }
        }
        let mut paths = HashSet::new();
        let mut ids = HashSet::new();
        for item in &self.items {
            if item.class >= self.classes.len() {
                return bad(format!("item `{}` has class index {}", item.id, item.class));
            }
            if !paths.insert(item.path.as_str()) {
                return bad(format!("path `{}` appears twice", item.path));
            }
            if !ids.insert(item.id.as_str()) {
                return bad(format!("id `{}` appears twice", item.id));
            }
            let rel = Path::new(&item.path);
            if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                return bad(format!("path `{}` escapes the dataset root", item.path));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| DatasetError::InvalidManifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn items_in(&self, split: Split) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(move |i| i.split == split)
    }

    pub fn class_counts(&self, split: Option<Split>) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for item in &self.items {
            if split.map_or(true, |s| s == item.split) {
                counts[item.class] += 1;
            }
        }
        counts
    }
}

/// Enumerates `root/<class>/<id>.ply`. Files are not parsed here; see
/// [`load_cloud`].
pub fn load_dataset(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let mut class_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| unreadable(root, e))? {
        let entry = entry.map_err(|e| unreadable(root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        class_dirs.push((name, path));
    }
    if class_dirs.is_empty() {
        return Err(DatasetError::NoClasses(root.to_path_buf()));
    }
    class_dirs.sort();

    let mut classes = Vec::new();
    let mut items = Vec::new();
    for (class, (name, dir)) in class_dirs.into_iter().enumerate() {
        let mut files = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| unreadable(&dir, e))? {
            let entry = entry.map_err(|e| unreadable(&dir, e))?;
            let path = entry.path();
            let is_ply = path.extension().map_or(false, |e| e.eq_ignore_ascii_case("ply"));
            if !is_ply {
                continue;
            }
            if !path.is_file() {
                return Err(unreadable(&path, "not a regular file"));
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| unreadable(&path, "file name is not UTF-8"))?
                .to_string();
            let file = entry.file_name().to_string_lossy().into_owned();
            files.push((stem, file));
        }
        if files.is_empty() {
            return Err(DatasetError::EmptyClass(name));
        }
        files.sort();
        for (stem, file) in files {
            items.push(ManifestItem {
                id: format!("{name}/{stem}"),
                path: format!("{name}/{file}"),
                class,
                split: Split::Train,
                group: None,
            });
        }
        classes.push(name);
    }
    let manifest = DatasetManifest { classes, items };
    manifest.validate()?;
    Ok(manifest)
}

/// Reads and activates one item.
pub fn load_cloud(root: &Path, item: &ManifestItem) -> Result<GaussianCloud, DatasetError> {
    let path = root.join(&item.path);
    let bytes = fs::read(&path).map_err(|e| unreadable(&path, e))?;
    let ply_err = |source| DatasetError::Ply {
        path: path.clone(),
        source,
    };
    let raw = parse_ply(&bytes).map_err(ply_err)?;
    activate(&raw).map_err(ply_err)
}

/// Stratified split: within each class, items are ordered by a seeded hash
/// of their group key and the first `round(n · fraction)` go to the test
/// side. The result does not depend on the order items are listed in, and
/// equally sized classes whose items share group keys send the same groups
/// to the test side.
pub fn split(manifest: &DatasetManifest, test_fraction: f64, seed: u64) -> Result<DatasetManifest, DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    manifest.validate()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, item) in manifest.items.iter().enumerate() {
        by_class.entry(item.class).or_default().push(i);
    }
    let mut out = manifest.clone();
    for (class, mut members) in by_class {
        let n = members.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        if n < 2 || n_test == 0 || n_test == n {
            return Err(DatasetError::ClassTooSmall {
                class: manifest.classes[class].clone(),
                items: n,
            });
        }
        let key = |i: &usize| {
            let item = &manifest.items[*i];
            let group = item.group_key();
            (stable_hash(&[&seed.to_le_bytes(), group.as_bytes()]), group.to_string(), item.id.clone())
        };
        members.sort_by_cached_key(key);
        for (rank, i) in members.into_iter().enumerate() {
            out.items[i].split = if rank < n_test { Split::Test } else { Split::Train };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Sphere,
    Cylinder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FlatOpaque,
    WireOpaque,
    FlatTransparent,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::Sphere, Family::Cylinder];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Sphere => "sphere",
            Family::Cylinder => "cylinder",
        }
    }
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::FlatOpaque, Variant::WireOpaque, Variant::FlatTransparent];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::FlatOpaque => "flat_opaque",
            Variant::WireOpaque => "wire_opaque",
            Variant::FlatTransparent => "flat_transparent",
        }
    }

    /// Ellipsoid standard deviations along (tangent 1, tangent 2, normal).
    pub fn scales(self) -> [f64; 3] {
        match self {
            Variant::FlatOpaque | Variant::FlatTransparent => [0.15, 0.15, 0.01],
            Variant::WireOpaque => [0.12, 0.008, 0.008],
        }
    }

    /// Maps a uniform draw `u ∈ [0, 1)` to an opacity.
    pub fn opacity(self, u: f64) -> f64 {
        match self {
            Variant::FlatOpaque | Variant::WireOpaque => 0.9 + 0.1 * u,
            Variant::FlatTransparent => 0.05 + 0.2 * u,
        }
    }
}

pub fn synth_class_name(family: Family, variant: Variant) -> String {
    format!("{}_{}", family.as_str(), variant.as_str())
}

/// The six synthetic classes in lexicographic order, matching what
/// [`load_dataset`] reports for a generated directory.
pub fn synth_classes() -> Vec<(String, Family, Variant)> {
    let mut all: Vec<_> = Family::ALL
        .iter()
        .flat_map(|&f| Variant::ALL.iter().map(move |&v| (synth_class_name(f, v), f, v)))
        .collect();
    all.sort();
    all
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub anchors_per_object: usize,
    pub jitter_sigma: f64,
    pub objects_per_class: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            anchors_per_object: 512,
            jitter_sigma: 0.01,
            objects_per_class: 100,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.anchors_per_object < 2 {
            return Err(DatasetError::InvalidSpec("need at least two anchors per object".into()));
        }
        if self.objects_per_class == 0 {
            return Err(DatasetError::InvalidSpec("objects_per_class must be positive".into()));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(DatasetError::InvalidSpec("jitter sigma must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthObject {
    pub id: String,
    pub class: usize,
    pub family: Family,
    pub variant: Variant,
    /// Index within the family; all variants with the same index share
    /// positions and frames.
    pub index: usize,
    pub cloud: GaussianCloud,
}

impl SynthObject {
    /// `<family>/<index>`, shared by the three variants of one geometry.
    pub fn group(&self) -> String {
        format!("{}/{:04}", self.family.as_str(), self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub classes: Vec<String>,
    pub objects: Vec<SynthObject>,
}

pub const SPHERE_RADIUS: f64 = 1.0;
pub const CYLINDER_RADIUS: f64 = 0.5;
pub const CYLINDER_HALF_HEIGHT: f64 = 1.0;

/// Surface point and outward unit normal.
fn sample_surface(family: Family, rng: &mut crate::rng::Rng) -> ([f64; 3], [f64; 3]) {
    match family {
        Family::Sphere => loop {
            let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let n = norm3(v);
            if n > 1e-9 {
                let u = v.map(|c| c / n);
                return (u.map(|c| c * SPHERE_RADIUS), u);
            }
        },
        Family::Cylinder => {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let z = rng.random_range(-CYLINDER_HALF_HEIGHT..CYLINDER_HALF_HEIGHT);
            let (s, c) = theta.sin_cos();
            ([CYLINDER_RADIUS * c, CYLINDER_RADIUS * s, z], [c, s, 0.0])
        }
    }
}

/// Right-handed frame (t1, t2, n) with t1 rotated by `angle` in the tangent
/// plane.
fn tangent_frame(n: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let helper = if n[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let e1 = cross(helper, n);
    let len = norm3(e1);
    let e1 = e1.map(|c| c / len);
    let e2 = cross(n, e1);
    let (s, c) = angle.sin_cos();
    let t1: [f64; 3] = std::array::from_fn(|k| c * e1[k] + s * e2[k]);
    let t2 = cross(n, t1);
    debug_assert!(dot(t1, n).abs() < 1e-12);
    [t1, t2, n]
}

struct Geometry {
    positions: Vec<[f64; 3]>,
    rotations: Vec<Quat>,
    opacity_draws: Vec<f64>,
}

/// Everything variant-independent for object `index` of `family`.
fn object_geometry(spec: &SynthSpec, family: Family, index: usize) -> Geometry {
    let stream = SeedStream::new(spec.seed)
        .derive("synth")
        .derive(family.as_str())
        .derive_index(index as u64);
    let mut pos_rng = stream.derive("positions").rng();
    let mut jitter_rng = stream.derive("jitter").rng();
    let mut frame_rng = stream.derive("frames").rng();
    let mut opacity_rng = stream.derive("opacity").rng();
    let jitter = Normal::new(0.0, spec.jitter_sigma).expect("validated sigma");
    let n = spec.anchors_per_object;
    let mut positions = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut opacity_draws = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, normal) = sample_surface(family, &mut pos_rng);
        let d: [f64; 3] = std::array::from_fn(|_| jitter.sample(&mut jitter_rng));
        positions.push([p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
        let angle = frame_rng.random_range(0.0..std::f64::consts::TAU);
        let [t1, t2, nn] = tangent_frame(normal, angle);
        rotations.push(Quat::from_axes(t1, t2, nn));
        opacity_draws.push(opacity_rng.random::<f64>());
    }
    Geometry {
        positions,
        rotations,
        opacity_draws,
    }
}

fn build_object(geometry: &Geometry, variant: Variant) -> GaussianCloud {
    let n = geometry.positions.len();
    GaussianCloud::new(
        geometry.positions.clone(),
        geometry.opacity_draws.iter().map(|&u| variant.opacity(u)).collect(),
        vec![variant.scales(); n],
        geometry.rotations.clone(),
        ColorPayload::zeros(n),
    )
    .expect("generator output satisfies cloud invariants")
}

/// Generates `objects_per_class` objects for each of the six classes.
/// Objects are ordered by class, then index.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthDataset, DatasetError> {
    spec.validate()?;
    let classes = synth_classes();
    let jobs: Vec<(Family, usize)> = Family::ALL
        .iter()
        .flat_map(|&f| (0..spec.objects_per_class).map(move |i| (f, i)))
        .collect();
    let geometries: Vec<Geometry> = jobs
        .par_iter()
        .map(|&(f, i)| object_geometry(spec, f, i))
        .collect();
    let geometry_of = |family: Family, index: usize| {
        let offset = Family::ALL.iter().position(|&f| f == family).unwrap() * spec.objects_per_class;
        &geometries[offset + index]
    };
    let mut objects = Vec::with_capacity(classes.len() * spec.objects_per_class);
    for (class, (name, family, variant)) in classes.iter().enumerate() {
        for index in 0..spec.objects_per_class {
            objects.push(SynthObject {
                id: format!("{name}/{index:04}"),
                class,
                family: *family,
                variant: *variant,
                index,
                cloud: build_object(geometry_of(*family, index), *variant),
            });
        }
    }
    Ok(SynthDataset {
        classes: classes.into_iter().map(|(n, _, _)| n).collect(),
        objects,
    })
}

impl SynthDataset {
    /// Manifest with every object tagged `train`. Objects built on the same
    /// geometry share a group, so a split never puts one variant of a shape
    /// in training and another in test.
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            classes: self.classes.clone(),
            items: self
                .objects
                .iter()
                .map(|o| ManifestItem {
                    id: o.id.clone(),
                    path: format!("{}.ply", o.id),
                    class: o.class,
                    split: Split::Train,
                    group: Some(o.group()),
                })
                .collect(),
        }
    }
}

/// Writes every object as `root/<id>.ply` and the manifest as
/// `root/manifest.json`.
pub fn write_synth(root: &Path, dataset: &SynthDataset, manifest: &DatasetManifest) -> Result<(), DatasetError> {
    for class in &dataset.classes {
        let dir = root.join(class);
        fs::create_dir_all(&dir).map_err(|e| write_failed(&dir, e))?;
    }
    dataset.objects.par_iter().try_for_each(|o| {
        let path = root.join(format!("{}.ply", o.id));
        let raw = RawGaussianCloud::from_cloud(&o.cloud).map_err(|source| DatasetError::Ply {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, write_ply(&raw)).map_err(|e| write_failed(&path, e))
    })?;
    write_manifest(root, manifest)
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<(), DatasetError> {
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| write_failed(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| unreadable(&path, e))?;
    DatasetManifest::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::anisotropy_stats;

    fn tiny_spec() -> SynthSpec {
        SynthSpec {
            anchors_per_object: 64,
            objects_per_class: 3,
            seed: 11,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn six_sorted_classes() {
        let names: Vec<String> = synth_classes().into_iter().map(|c| c.0).collect();
        assert_eq!(
            names,
            [
                "cylinder_flat_opaque",
                "cylinder_flat_transparent",
                "cylinder_wire_opaque",
                "sphere_flat_opaque",
                "sphere_flat_transparent",
                "sphere_wire_opaque"
            ]
        );
    }

    #[test]
    fn variants_share_positions_and_frames() {
        let data = synth_generate(&tiny_spec()).unwrap();
        assert_eq!(data.objects.len(), 18);
        for a in &data.objects {
            for b in &data.objects {
                if a.family == b.family && a.index == b.index {
                    assert_eq!(a.cloud.positions(), b.cloud.positions());
                    assert_eq!(a.cloud.rotation(), b.cloud.rotation());
                }
            }
        }
        let get = |v: Variant| {
            data.objects
                .iter()
                .find(|o| o.family == Family::Sphere && o.variant == v && o.index == 1)
                .unwrap()
        };
        let (fo, ft) = (get(Variant::FlatOpaque), get(Variant::FlatTransparent));
        assert_eq!(fo.cloud.scale(), ft.cloud.scale());
        assert!(fo.cloud.opacity().iter().all(|&o| (0.9..=1.0).contains(&o)));
        assert!(ft.cloud.opacity().iter().all(|&o| (0.05..=0.25).contains(&o)));
    }

    #[test]
    fn ellipsoid_shapes_follow_variant() {
        let data = synth_generate(&tiny_spec()).unwrap();
        for o in &data.objects {
            let d = anisotropy_stats(&o.cloud);
            match o.variant {
                Variant::WireOpaque => {
                    assert!((d.median_elongation() - 15.0).abs() < 1e-9);
                    assert!((d.median_flatness() - 1.0).abs() < 1e-9);
                }
                _ => {
                    assert!((d.median_flatness() - 15.0).abs() < 1e-9);
                    assert!((d.median_elongation() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn short_axis_is_the_surface_normal() {
        let data = synth_generate(&tiny_spec()).unwrap();
        let o = data.objects.iter().find(|o| o.family == Family::Sphere).unwrap();
        for (p, q) in o.cloud.positions().iter().zip(o.cloud.rotation()) {
            let axis = q.rotate([0.0, 0.0, 1.0]);
            let radial = p.map(|c| c / norm3(*p));
            assert!(dot(axis, radial).abs() > 0.99);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(synth_generate(&tiny_spec()).unwrap(), synth_generate(&tiny_spec()).unwrap());
        let other = synth_generate(&SynthSpec { seed: 12, ..tiny_spec() }).unwrap();
        assert_ne!(other.objects[0].cloud, synth_generate(&tiny_spec()).unwrap().objects[0].cloud);
    }

    fn manifest(per_class: &[usize]) -> DatasetManifest {
        let classes: Vec<String> = (0..per_class.len()).map(|c| format!("c{c}")).collect();
        let mut items = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                items.push(ManifestItem {
                    id: format!("c{c}/{i}"),
                    path: format!("c{c}/{i}.ply"),
                    class: c,
                    split: Split::Train,
                    group: None,
                });
            }
        }
        DatasetManifest { classes, items }
    }

    #[test]
    fn split_counts_per_class() {
        let s = split(&manifest(&[200, 200]), 0.2, 3).unwrap();
        assert_eq!(s.class_counts(Some(Split::Test)), vec![40, 40]);
        assert_eq!(s.class_counts(Some(Split::Train)), vec![160, 160]);
    }

    #[test]
    fn synthetic_split_keeps_geometries_together() {
        let data = synth_generate(&tiny_spec()).unwrap();
        let m = split(&data.manifest(), 0.34, 5).unwrap();
        let mut side = std::collections::HashMap::new();
        for item in &m.items {
            let prev = side.insert(item.group_key().to_string(), item.split);
            assert!(prev.map_or(true, |p| p == item.split), "{}", item.id);
        }
        assert_eq!(m.class_counts(Some(Split::Test)), vec![1; 6]);
    }

    #[test]
    fn split_guards() {
        assert!(matches!(
            split(&manifest(&[3, 5]), 0.999, 0),
            Err(DatasetError::ClassTooSmall { items: 3, .. })
        ));
        assert!(matches!(split(&manifest(&[1, 5]), 0.5, 0), Err(DatasetError::ClassTooSmall { .. })));
        assert!(matches!(split(&manifest(&[4, 4]), 0.0, 0), Err(DatasetError::InvalidFraction(_))));
        assert!(matches!(split(&manifest(&[4, 4]), 1.0, 0), Err(DatasetError::InvalidFraction(_))));
    }

    #[test]
    fn manifest_json_roundtrip_and_validation() {
        let m = split(&manifest(&[4, 4]), 0.5, 1).unwrap();
        assert_eq!(DatasetManifest::from_json(&m.to_json()).unwrap(), m);
        let mut bad = m.clone();
        bad.items[1].path = bad.items[0].path.clone();
        assert!(DatasetManifest::from_json(&bad.to_json()).is_err());
        let mut bad = m.clone();
        bad.items[0].class = 7;
        assert!(DatasetManifest::from_json(&bad.to_json()).is_err());
        let mut bad = m;
        bad.items[0].path = "../x.ply".into();
        assert!(bad.validate().is_err());
        assert!(DatasetManifest::from_json("{\"classes\":[]}").is_err());
    }

    #[test]
    fn missing_split_defaults_to_train() {
        let text = r#"{"classes":["a","b"],"items":[{"id":"a/0","path":"a/0.ply","class":0}]}"#;
        let m = DatasetManifest::from_json(text).unwrap();
        assert_eq!(m.items[0].split, Split::Train);
    }
}
