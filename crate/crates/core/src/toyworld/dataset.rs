//! Labeled toy grasp datasets: generation, on-disk layout and hashing.
//!
//! Layout under a dataset root:
//!
//! ```text
//! manifest.json
//! objects/obj_0000/meta.json
//! objects/obj_0000/view_00.txt
//! objects/obj_0000/grasps.json
//! ```
//!
//! Every view lives in its own object-centric frame: the partial cloud is
//! shifted so its centroid is the origin, and the object and grasps of that
//! view are expressed in the same frame.

use std::path::Path;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::gripper::ToyGripper;
use super::metrics::random_grasp;
use super::object::{random_unit, ToyObject};
use super::oracle::{oracle_label, OracleConfig};
use super::view::partial_view;
use super::derive_seed;
use crate::error::{Error, Result};
use crate::grasp::{matrix_to_rot6d, rot6d_to_matrix, Grasp, PointCloud};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SampledPositive,
    SampledNegative,
    JitterNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledGrasp {
    pub view: usize,
    #[serde(flatten)]
    pub grasp: Grasp,
    pub success: bool,
    pub provenance: Provenance,
}

/// Standard deviations used to perturb positives into jitter negatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    pub sigma_p: f64,
    pub sigma_r: f64,
    pub sigma_q: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self { sigma_p: 0.024, sigma_r: 0.24, sigma_q: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub objects: usize,
    pub views_per_object: usize,
    pub grasps_per_view: usize,
    pub seed: u64,
    /// Surface samples per object before view culling.
    pub cloud_points: usize,
    pub size_lo: f64,
    pub size_hi: f64,
    /// Culling threshold on `normal · view_dir`.
    pub occlusion: f64,
    pub positive_fraction: f64,
    /// Share of the negatives produced by jittering positives; the rest are
    /// uniform random grasps.
    pub jitter_share: f64,
    pub jitter: JitterConfig,
    /// Half-width of the cube random grasps are drawn from.
    pub random_half_width: f64,
    pub test_fraction: f64,
    pub max_attempts_per_positive: usize,
    /// How strongly the joints of one finger share a curl profile when
    /// proposing positives: 1 bends every joint of a finger equally, 0 draws
    /// each joint independently.
    pub joint_coupling: f64,
    pub gripper: ToyGripper,
    pub oracle: OracleConfig,
}

impl DatasetConfig {
    pub fn new(objects: usize, views_per_object: usize, grasps_per_view: usize, seed: u64) -> Self {
        Self {
            objects,
            views_per_object,
            grasps_per_view,
            seed,
            cloud_points: 2048,
            size_lo: 0.03,
            size_hi: 0.07,
            occlusion: 0.0,
            positive_fraction: 0.4,
            jitter_share: 0.5,
            jitter: JitterConfig::default(),
            random_half_width: 0.15,
            test_fraction: 0.2,
            max_attempts_per_positive: 400,
            joint_coupling: 1.0,
            gripper: ToyGripper::default(),
            oracle: OracleConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.objects == 0 || self.views_per_object == 0 || self.grasps_per_view == 0 || self.cloud_points == 0 {
            return Err(Error::InvalidArgument("dataset counts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction)
            || !(0.0..=1.0).contains(&self.jitter_share)
            || !(0.0..1.0).contains(&self.test_fraction)
        {
            return Err(Error::InvalidArgument("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn quotas(&self) -> (usize, usize, usize) {
        let pos = (self.positive_fraction * self.grasps_per_view as f64).round() as usize;
        let neg = self.grasps_per_view - pos;
        let jitter = if pos == 0 { 0 } else { (self.jitter_share * neg as f64).round() as usize };
        (pos, jitter, neg - jitter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyView {
    /// Camera direction in the object's canonical frame.
    pub direction: [f64; 3],
    /// Translation taking canonical coordinates to this view's frame.
    pub shift: [f64; 3],
    /// The object expressed in this view's frame.
    pub object: ToyObject,
    #[serde(skip)]
    pub cloud: Option<PointCloud>,
}

impl ToyView {
    pub fn cloud(&self) -> &PointCloud {
        self.cloud.as_ref().expect("view cloud is loaded")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub id: usize,
    pub object: ToyObject,
    pub split: Split,
    pub views: Vec<ToyView>,
    pub grasps: Vec<LabeledGrasp>,
}

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    id: usize,
    split: Split,
    object: ToyObject,
    views: Vec<ToyView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub objects: usize,
    pub views_per_object: usize,
    pub grasps_per_view: usize,
    pub grasps: usize,
    pub positives: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// SHA-256 over every other file, in path order.
    pub content_hash: String,
    pub config: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub config: DatasetConfig,
    pub scenes: Vec<ToyScene>,
}

impl ToyDataset {
    pub fn grasp_count(&self) -> usize {
        self.scenes.iter().map(|s| s.grasps.len()).sum()
    }

    pub fn positive_count(&self) -> usize {
        self.scenes.iter().flat_map(|s| &s.grasps).filter(|g| g.success).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.positive_count() as f64 / self.grasp_count().max(1) as f64
    }

    pub fn ids(&self, split: Split) -> Vec<usize> {
        self.scenes.iter().filter(|s| s.split == split).map(|s| s.id).collect()
    }

    fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut files = Vec::new();
        for s in &self.scenes {
            let dir = format!("objects/obj_{:04}", s.id);
            let meta = SceneMeta { id: s.id, split: s.split, object: s.object.clone(), views: s.views.clone() };
            files.push((format!("{dir}/meta.json"), serde_json::to_vec_pretty(&meta)?));
            for (v, view) in s.views.iter().enumerate() {
                files.push((format!("{dir}/view_{v:02}.txt"), view.cloud().to_text().into_bytes()));
            }
            files.push((format!("{dir}/grasps.json"), serde_json::to_vec_pretty(&s.grasps)?));
        }
        files.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(files)
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(hash_files(&self.files()?))
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        Ok(DatasetManifest { content_hash: self.content_hash()?, ..self.manifest_without_hash() })
    }

    /// Writes the dataset under `root`, which is created if missing.
    pub fn write(&self, root: &Path) -> Result<DatasetManifest> {
        let files = self.files()?;
        for (rel, bytes) in &files {
            let path = root.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
            }
            std::fs::write(&path, bytes).map_err(Error::io(&path))?;
        }
        let mut manifest = self.manifest_without_hash();
        manifest.content_hash = hash_files(&files);
        let path = root.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(Error::io(&path))?;
        Ok(manifest)
    }

    fn manifest_without_hash(&self) -> DatasetManifest {
        DatasetManifest {
            format_version: FORMAT_VERSION,
            seed: self.config.seed,
            objects: self.config.objects,
            views_per_object: self.config.views_per_object,
            grasps_per_view: self.config.grasps_per_view,
            grasps: self.grasp_count(),
            positives: self.positive_count(),
            train: self.ids(Split::Train),
            test: self.ids(Split::Test),
            content_hash: String::new(),
            config: self.config.clone(),
        }
    }

    /// Loads a dataset and checks its content hash against the manifest.
    pub fn read(root: &Path) -> Result<Self> {
        let manifest_path = root.join("manifest.json");
        if !manifest_path.is_file() {
            return Err(Error::MissingManifest(root.display().to_string()));
        }
        let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(&manifest_path).map_err(Error::io(&manifest_path))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::format("dataset manifest", format!("unsupported version {}", manifest.format_version)));
        }
        let mut scenes = Vec::with_capacity(manifest.objects);
        for id in 0..manifest.objects {
            let dir = root.join(format!("objects/obj_{id:04}"));
            let meta: SceneMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json")).map_err(Error::io(dir.join("meta.json")))?)?;
            let mut views = meta.views;
            for (v, view) in views.iter_mut().enumerate() {
                view.cloud = Some(PointCloud::read(&dir.join(format!("view_{v:02}.txt")))?);
            }
            let grasps: Vec<LabeledGrasp> = serde_json::from_slice(&std::fs::read(dir.join("grasps.json")).map_err(Error::io(dir.join("grasps.json")))?)?;
            scenes.push(ToyScene { id: meta.id, object: meta.object, split: meta.split, views, grasps });
        }
        let data = Self { config: manifest.config, scenes };
        let hash = data.content_hash()?;
        if hash != manifest.content_hash {
            return Err(Error::format("dataset", format!("content hash {hash} differs from manifest {}", manifest.content_hash)));
        }
        Ok(data)
    }
}

fn hash_files(files: &[(String, Vec<u8>)]) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

/// Generates every object in parallel, each from its own derived seed, and
/// splits objects into train and test sets.
pub fn gen_dataset(config: &DatasetConfig) -> Result<ToyDataset> {
    config.validate()?;
    let mut order: Vec<usize> = (0..config.objects).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX)));
    let mut n_test = (config.test_fraction * config.objects as f64).round() as usize;
    if config.test_fraction > 0.0 && config.objects > 1 {
        n_test = n_test.clamp(1, config.objects - 1);
    }
    let mut is_test = vec![false; config.objects];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let scenes = (0..config.objects)
        .into_par_iter()
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, id as u64));
            let split = if is_test[id] { Split::Test } else { Split::Train };
            gen_scene(config, id, split, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyDataset { config: config.clone(), scenes })
}

fn gen_scene(cfg: &DatasetConfig, id: usize, split: Split, rng: &mut ChaCha8Rng) -> Result<ToyScene> {
    let object = ToyObject::random(cfg.size_lo, cfg.size_hi, rng)?;
    let surface = object.sample_surface(cfg.cloud_points, rng);
    let mut views = Vec::with_capacity(cfg.views_per_object);
    let mut grasps = Vec::with_capacity(cfg.views_per_object * cfg.grasps_per_view);
    for v in 0..cfg.views_per_object {
        let dir = random_unit(rng);
        let partial = partial_view(&surface, &dir, cfg.occlusion)?;
        let (cloud, shift) = PointCloud::new(partial.points)?.centered();
        let view_object = object.translated(shift);
        grasps.extend(gen_view_grasps(cfg, &view_object, v, rng)?);
        views.push(ToyView { direction: [dir.x, dir.y, dir.z], shift, object: view_object, cloud: Some(cloud) });
    }
    Ok(ToyScene { id, object, split, views, grasps })
}

fn gen_view_grasps(cfg: &DatasetConfig, object: &ToyObject, view: usize, rng: &mut ChaCha8Rng) -> Result<Vec<LabeledGrasp>> {
    let (n_pos, n_jitter, n_random) = cfg.quotas();
    let label = |g: &Grasp| oracle_label(g, object, &cfg.gripper, &cfg.oracle);
    let mut positives = Vec::with_capacity(n_pos);
    let budget = n_pos * cfg.max_attempts_per_positive;
    let mut attempts = 0;
    while positives.len() < n_pos {
        if attempts >= budget {
            return Err(Error::PositiveStarvation { found: positives.len(), wanted: n_pos, attempts });
        }
        attempts += 1;
        if let Some(g) = propose_positive(object, &cfg.gripper, &cfg.oracle, cfg.joint_coupling, rng) {
            if label(&g) {
                positives.push(g);
            }
        }
    }
    let mut out: Vec<LabeledGrasp> = positives
        .iter()
        .map(|g| LabeledGrasp { view, grasp: g.clone(), success: true, provenance: Provenance::SampledPositive })
        .collect();

    let mut jittered = 0;
    let mut tries = 0;
    while jittered < n_jitter && tries < 50 * n_jitter {
        tries += 1;
        let src = &positives[rng.random_range(0..positives.len())];
        let g = jitter(src, &cfg.jitter, &cfg.gripper, rng);
        if !label(&g) {
            out.push(LabeledGrasp { view, grasp: g, success: false, provenance: Provenance::JitterNegative });
            jittered += 1;
        }
    }
    // a short jitter quota is made up with random negatives
    let mut random = 0;
    while random < n_random + (n_jitter - jittered) {
        let g = random_grasp(&cfg.gripper, [0.0; 3], cfg.random_half_width, rng);
        if !label(&g) {
            out.push(LabeledGrasp { view, grasp: g, success: false, provenance: Provenance::SampledNegative });
            random += 1;
        }
    }
    Ok(out)
}

/// A candidate placed on a ray toward the object center with every finger
/// curled until its tip meets the surface. May still fail the oracle.
pub fn propose_positive(
    object: &ToyObject,
    gripper: &ToyGripper,
    oracle: &OracleConfig,
    coupling: f64,
    rng: &mut impl Rng,
) -> Option<Grasp> {
    let c = object.center();
    let d = random_unit(rng);
    let span = oracle.palm_max - oracle.palm_min;
    let target = oracle.palm_min + span * rng.random_range(0.1..0.5);
    // palm distance along the ray; the SDF of a convex solid grows along it
    let (mut lo, mut hi) = (0.0, 1.0);
    if object.sdf(&(c - d * hi)) < target {
        return None;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if object.sdf(&(c - d * mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p = c - d * hi;
    let axis = (d + random_unit(rng) * rng.random_range(0.0..0.45)).normalize();
    let x = random_unit(rng);
    let x = (x - axis * axis.dot(&x)).try_normalize(1e-6)?;
    let rot = Matrix3::from_columns(&[x, axis.cross(&x), axis]);

    let j = gripper.joints_per_finger();
    let mut q = Vec::with_capacity(gripper.dof());
    for i in 0..gripper.fingers {
        // per-joint share of the joint range reached at full curl
        let shared = rng.random_range(0.3..1.0);
        let reach: Vec<f64> = (0..j)
            .map(|_| (coupling * shared + (1.0 - coupling) * rng.random_range(0.3..1.0)) * (gripper.q_hi - gripper.q_lo))
            .collect();
        let curl = |s: f64| reach.iter().map(|r| gripper.q_lo + r * s).collect::<Vec<_>>();
        let s = first_root(|s| object.sdf(&(p + rot * gripper.finger_tip_local(i, &curl(s)))), 48)?;
        q.extend(curl(s));
    }
    Some(Grasp::from_pose(p, &rot, q))
}

/// Root of `f` on `[0, 1]` found by scanning for a sign change and bisecting.
fn first_root(f: impl Fn(f64) -> f64, scan: usize) -> Option<f64> {
    let mut prev = f(0.0);
    for k in 1..=scan {
        let s = k as f64 / scan as f64;
        let cur = f(s);
        if (prev > 0.0) != (cur > 0.0) {
            let (mut a, mut b) = ((k - 1) as f64 / scan as f64, s);
            let fa_pos = prev > 0.0;
            for _ in 0..50 {
                let m = 0.5 * (a + b);
                if (f(m) > 0.0) == fa_pos {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        prev = cur;
    }
    None
}

/// Gaussian perturbation of every component. The rotation is projected back
/// onto a proper 6-d rotation and joints are reflected into their limits.
pub fn jitter(g: &Grasp, cfg: &JitterConfig, gripper: &ToyGripper, rng: &mut impl Rng) -> Grasp {
    let mut n = || rng.sample::<f64, _>(StandardNormal);
    let p = g.p.map(|x| x + cfg.sigma_p * n());
    let mut r = g.r.map(|x| x + cfg.sigma_r * n());
    r = rot6d_to_matrix(&r).and_then(|m| matrix_to_rot6d(&m)).unwrap_or(g.r);
    let q = g.q.iter().map(|x| reflect(x + cfg.sigma_q * n(), gripper.q_lo, gripper.q_hi)).collect();
    Grasp::new(p, r, q)
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let m = (x - lo).rem_euclid(2.0 * w);
    let y = if m > w { 2.0 * w - m } else { m };
    (lo + y).clamp(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig::new(4, 2, 20, 11)
    }

    #[test]
    fn quotas_follow_the_target_mixture() {
        assert_eq!(DatasetConfig::new(1, 1, 100, 0).quotas(), (40, 30, 30));
        assert_eq!(DatasetConfig::new(1, 1, 5, 0).quotas(), (2, 2, 1));
    }

    #[test]
    fn reflection_stays_in_range() {
        for x in [-3.0, -0.2, 0.0, 0.7, 1.5, 1.7, 4.0] {
            let y = reflect(x, 0.0, 1.5);
            assert!((0.0..=1.5).contains(&y));
        }
        assert!((reflect(-0.2, 0.0, 1.5) - 0.2).abs() < 1e-12);
        assert!((reflect(1.7, 0.0, 1.5) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn generation_is_reproducible_and_labels_verify() {
        let cfg = small();
        let a = gen_dataset(&cfg).unwrap();
        let b = gen_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        for s in &a.scenes {
            for g in &s.grasps {
                let o = &s.views[g.view].object;
                assert_eq!(oracle_label(&g.grasp, o, &cfg.gripper, &cfg.oracle), g.success);
            }
        }
        let frac = a.positive_fraction();
        assert!((0.35..=0.45).contains(&frac), "{frac}");
        assert_eq!(a.ids(Split::Test).len(), 1);
    }

    #[test]
    fn disk_round_trip_preserves_everything() {
        let data = gen_dataset(&DatasetConfig::new(2, 2, 10, 5)).unwrap();
        let dir = std::env::temp_dir().join(format!("graspdiff-ds-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let manifest = data.write(&dir).unwrap();
        let back = ToyDataset::read(&dir).unwrap();
        assert_eq!(back, data);
        assert_eq!(manifest.content_hash, data.content_hash().unwrap());
        std::fs::write(dir.join("objects/obj_0000/view_00.txt"), "0 0 0\n").unwrap();
        assert!(matches!(ToyDataset::read(&dir), Err(Error::Format { .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn starvation_is_reported() {
        let mut cfg = DatasetConfig::new(1, 1, 10, 3);
        cfg.oracle.tip_tolerance = 0.0;
        cfg.oracle.palm_max = cfg.oracle.palm_min;
        cfg.max_attempts_per_positive = 2;
        assert!(matches!(gen_dataset(&cfg), Err(Error::PositiveStarvation { .. })));
    }
}
