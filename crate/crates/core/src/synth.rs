//! Seeded synthetic driving scenes.
//!
//! A scene is a ground plane plus boxes and vertical cylinders, each tagged
//! with a class. A spinning sensor at the origin casts one ray per
//! `(ring, azimuth step)` and keeps the nearest analytic hit. Two domains
//! differ by the knobs of [`DomainSpec`]: class mixture, object density,
//! intensity offset and range noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{ClassId, Point, PointCloud, Projection};

pub const GROUND: ClassId = 0;
pub const VEHICLE: ClassId = 1;
pub const POLE: ClassId = 2;
pub const WALL: ClassId = 3;
pub const VEGETATION: ClassId = 4;
pub const CLASS_NAMES: [&str; 5] = ["ground", "vehicle", "pole", "wall", "vegetation"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub rings: usize,
    pub azimuth_steps: usize,
    /// Radians.
    pub fov_up: f64,
    pub fov_down: f64,
    pub max_range: f64,
    /// Sensor height above the ground plane, meters.
    pub mount_height: f64,
    /// Uniform azimuth perturbation per ray, as a fraction of one step.
    pub azimuth_jitter: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            rings: 32,
            azimuth_steps: 256,
            fov_up: 10f64.to_radians(),
            fov_down: -30f64.to_radians(),
            max_range: 50.0,
            mount_height: 1.8,
            azimuth_jitter: 0.3,
        }
    }
}

impl SensorSpec {
    /// Range-view projection whose rows line up with the rings.
    pub fn projection(&self) -> Result<Projection> {
        Projection::new(self.rings, self.azimuth_steps, self.fov_up, self.fov_down)
    }

    fn ring_elevation(&self, ring: usize) -> f64 {
        // ring 0 is the top row; rays sit at row centers
        let frac = (ring as f64 + 0.5) / self.rings as f64;
        self.fov_up - frac * (self.fov_up - self.fov_down)
    }
}

/// Appearance and layout statistics of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainSpec {
    pub num_classes: usize,
    /// Probability of each class for a sampled object; index 0 (ground)
    /// yields flat road patches.
    pub class_mixture: Vec<f64>,
    /// Added to every point's intensity before clamping to `[0, 1]`.
    pub intensity_shift: f64,
    /// Gaussian range noise along each ray, meters.
    pub noise_sigma: f64,
    /// Mean number of objects per scene (Poisson).
    pub object_density: f64,
    /// Horizontal radius of the ground plane and object placement, meters.
    pub ground_extent: f64,
    /// Mean return intensity per class.
    pub class_intensity: Vec<f64>,
    /// Per-point intensity spread.
    pub intensity_sigma: f64,
    pub sensor: SensorSpec,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            num_classes: 5,
            class_mixture: vec![0.05, 0.4, 0.2, 0.15, 0.2],
            intensity_shift: 0.0,
            noise_sigma: 0.02,
            object_density: 12.0,
            ground_extent: 45.0,
            class_intensity: vec![0.15, 0.55, 0.35, 0.3, 0.45],
            intensity_sigma: 0.05,
            sensor: SensorSpec::default(),
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c < 2 {
            return Err(Error::Config("a domain needs at least two classes".into()));
        }
        if c > CLASS_NAMES.len() {
            return Err(Error::Config(format!("at most {} scene classes are supported", CLASS_NAMES.len())));
        }
        if self.class_mixture.len() != c || self.class_intensity.len() != c {
            return Err(Error::Config(format!("mixture and intensity tables need {c} entries")));
        }
        if self.class_mixture.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("mixture weights must be non-negative".into()));
        }
        let sum: f64 = self.class_mixture.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("mixture weights sum to {sum}, not 1")));
        }
        if !(self.noise_sigma >= 0.0 && self.intensity_sigma >= 0.0 && self.object_density >= 0.0) {
            return Err(Error::Config("noise, intensity spread and density must be non-negative".into()));
        }
        if !(self.ground_extent > 0.0 && self.sensor.max_range > 0.0 && self.sensor.mount_height > 0.0) {
            return Err(Error::Config("extent, range and mount height must be positive".into()));
        }
        self.sensor.projection()?;
        Ok(())
    }

    pub fn shifted(&self, shift: &DomainShift) -> Result<DomainSpec> {
        let mut out = self.clone();
        out.intensity_shift += shift.intensity_shift;
        out.noise_sigma += shift.noise_sigma;
        out.object_density *= shift.density_scale;
        if let Some(m) = &shift.class_mixture {
            out.class_mixture = m.clone();
        }
        out.validate()?;
        Ok(out)
    }
}

/// Declared differences of the target domain relative to the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainShift {
    pub intensity_shift: f64,
    pub noise_sigma: f64,
    pub density_scale: f64,
    pub class_mixture: Option<Vec<f64>>,
}

impl Default for DomainShift {
    fn default() -> Self {
        DomainShift {
            intensity_shift: 0.0,
            noise_sigma: 0.0,
            density_scale: 1.0,
            class_mixture: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Yawed box resting on the ground: center `(x, y)`, half sizes, yaw.
    Box {
        x: f64,
        y: f64,
        half_length: f64,
        half_width: f64,
        height: f64,
        yaw: f64,
    },
    /// Vertical cylinder standing on the ground.
    Cylinder { x: f64, y: f64, radius: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub class: ClassId,
    pub shape: Shape,
}

/// A concrete scene: sensor, ground extent and placed primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub ground_extent: f64,
    pub sensor: SensorSpec,
    pub primitives: Vec<Primitive>,
}

impl SceneRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.sensor.rings == 0 || self.sensor.azimuth_steps == 0 || !(self.ground_extent > 0.0) {
            return Err(Error::InvalidInput("empty scene recipe".into()));
        }
        self.sensor.projection()?;
        for (i, p) in self.primitives.iter().enumerate() {
            let (x, y, ok) = match p.shape {
                Shape::Box {
                    x,
                    y,
                    half_length,
                    half_width,
                    height,
                    ..
                } => (x, y, half_length > 0.0 && half_width > 0.0 && height > 0.0),
                Shape::Cylinder { x, y, radius, height } => (x, y, radius > 0.0 && height > 0.0),
            };
            if !ok {
                return Err(Error::InvalidInput(format!("primitive {i} is degenerate")));
            }
            if x.hypot(y) > self.ground_extent {
                return Err(Error::InvalidInput(format!("primitive {i} outside the ground extent")));
            }
        }
        Ok(())
    }
}

fn pick_class(rng: &mut ChaCha8Rng, mixture: &[f64]) -> ClassId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &w) in mixture.iter().enumerate() {
        acc += w;
        if u < acc {
            return c as ClassId;
        }
    }
    (mixture.len() - 1) as ClassId
}

fn between(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn sample_primitive(rng: &mut ChaCha8Rng, class: ClassId, extent: f64) -> Primitive {
    let bearing = between(rng, -std::f64::consts::PI, std::f64::consts::PI);
    let (near, far) = match class {
        WALL => (0.45 * extent, 0.9 * extent),
        VEHICLE => (5.0, 0.6 * extent),
        _ => (4.0, 0.7 * extent),
    };
    let dist = between(rng, near, far);
    let (x, y) = (dist * bearing.cos(), dist * bearing.sin());
    let shape = match class {
        GROUND => Shape::Box {
            x,
            y,
            half_length: between(rng, 1.0, 2.5),
            half_width: between(rng, 1.0, 2.5),
            height: 0.15,
            yaw: between(rng, 0.0, std::f64::consts::PI),
        },
        VEHICLE => Shape::Box {
            x,
            y,
            half_length: between(rng, 1.8, 2.5),
            half_width: between(rng, 0.8, 1.0),
            height: between(rng, 1.3, 1.8),
            yaw: bearing + std::f64::consts::FRAC_PI_2 + between(rng, -0.3, 0.3),
        },
        POLE => Shape::Cylinder {
            x,
            y,
            radius: between(rng, 0.12, 0.25),
            height: between(rng, 3.0, 6.0),
        },
        WALL => Shape::Box {
            x,
            y,
            half_length: between(rng, 4.0, 10.0),
            half_width: 0.25,
            height: between(rng, 2.5, 5.0),
            yaw: bearing + std::f64::consts::FRAC_PI_2,
        },
        _ => Shape::Cylinder {
            x,
            y,
            radius: between(rng, 0.8, 2.0),
            height: between(rng, 1.0, 3.0),
        },
    };
    Primitive { class, shape }
}

/// Draw a scene layout from the domain statistics.
pub fn sample_recipe(spec: &DomainSpec, seed: u64) -> Result<SceneRecipe> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = if spec.object_density > 0.0 {
        Poisson::new(spec.object_density).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    let primitives = (0..count)
        .map(|_| {
            let class = pick_class(&mut rng, &spec.class_mixture);
            sample_primitive(&mut rng, class, spec.ground_extent)
        })
        .collect();
    Ok(SceneRecipe {
        ground_extent: spec.ground_extent,
        sensor: spec.sensor.clone(),
        primitives,
    })
}

/// Smallest positive hit distance along unit direction `d` from the sensor.
fn intersect(shape: &Shape, ground_z: f64, d: [f64; 3]) -> Option<f64> {
    match *shape {
        Shape::Box {
            x,
            y,
            half_length,
            half_width,
            height,
            yaw,
        } => {
            let (s, c) = yaw.sin_cos();
            // ray in the box frame
            let o = [c * (-x) + s * (-y), -s * (-x) + c * (-y), -ground_z];
            let dir = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
            let lo = [-half_length, -half_width, 0.0];
            let hi = [half_length, half_width, height];
            let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
            for k in 0..3 {
                if dir[k].abs() < 1e-12 {
                    if o[k] < lo[k] || o[k] > hi[k] {
                        return None;
                    }
                } else {
                    let a = (lo[k] - o[k]) / dir[k];
                    let b = (hi[k] - o[k]) / dir[k];
                    tmin = tmin.max(a.min(b));
                    tmax = tmax.min(a.max(b));
                }
            }
            (tmax >= tmin && tmin > 0.0).then_some(tmin)
        }
        Shape::Cylinder { x, y, radius, height } => {
            let mut best: Option<f64> = None;
            let a = d[0] * d[0] + d[1] * d[1];
            if a > 1e-12 {
                let b = -2.0 * (d[0] * x + d[1] * y);
                let cc = x * x + y * y - radius * radius;
                let disc = b * b - 4.0 * a * cc;
                if disc >= 0.0 {
                    let t = (-b - disc.sqrt()) / (2.0 * a);
                    let z = t * d[2];
                    if t > 0.0 && z >= ground_z && z <= ground_z + height {
                        best = Some(t);
                    }
                }
            }
            if d[2] < 0.0 {
                let top = ground_z + height;
                if top < 0.0 {
                    let t = top / d[2];
                    let (px, py) = (t * d[0] - x, t * d[1] - y);
                    if px * px + py * py <= radius * radius && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                }
            }
            best
        }
    }
}

/// Cast every sensor ray against the recipe and return the labeled hits.
/// `spec` supplies appearance (intensities and noise) only.
pub fn render_scene(recipe: &SceneRecipe, spec: &DomainSpec, seed: u64) -> Result<PointCloud> {
    recipe.validate()?;
    spec.validate()?;
    let sensor = &recipe.sensor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range_noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("sigma");
    let intensity_noise = Normal::new(0.0, spec.intensity_sigma.max(0.0)).expect("sigma");
    let ground_z = -sensor.mount_height;
    let step = 2.0 * std::f64::consts::PI / sensor.azimuth_steps as f64;

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for ring in 0..sensor.rings {
        let elev = sensor.ring_elevation(ring);
        let (se, ce) = elev.sin_cos();
        for j in 0..sensor.azimuth_steps {
            // column j of the projection is centered at yaw = pi - (j + 0.5) * step
            let jitter = (rng.random::<f64>() - 0.5) * 2.0 * sensor.azimuth_jitter * step;
            let yaw = std::f64::consts::PI - (j as f64 + 0.5) * step + jitter;
            let d = [ce * yaw.cos(), ce * yaw.sin(), se];

            let mut hit: Option<(f64, ClassId)> = None;
            if d[2] < 0.0 {
                let t = ground_z / d[2];
                if t * ce <= recipe.ground_extent {
                    hit = Some((t, GROUND));
                }
            }
            for p in &recipe.primitives {
                if let Some(t) = intersect(&p.shape, ground_z, d) {
                    if hit.is_none_or(|(b, _)| t < b) {
                        hit = Some((t, p.class));
                    }
                }
            }
            let noise_r = range_noise.sample(&mut rng);
            let noise_i = intensity_noise.sample(&mut rng);
            let Some((t, class)) = hit else { continue };
            if t > sensor.max_range {
                continue;
            }
            let r = (t + noise_r).max(0.05);
            let base = spec.class_intensity[class as usize] + spec.intensity_shift;
            let intensity = (base + noise_i).clamp(0.0, 1.0);
            points.push(Point::new(
                (r * d[0]) as f32,
                (r * d[1]) as f32,
                (r * d[2]) as f32,
                intensity as f32,
            ));
            labels.push(class);
        }
    }
    PointCloud::with_labels(points, labels)
}

/// Sample a layout and render it.
pub fn generate_scene(spec: &DomainSpec, seed: u64) -> Result<PointCloud> {
    let recipe = sample_recipe(spec, seed)?;
    render_scene(&recipe, spec, seed ^ 0x5EED_CAFE_F00D_0001)
}

/// Independent seed for scene `index` of stream `stream`.
pub fn scene_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over a packed key
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Whether a dataset's labels may be used as training targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAccess {
    Training,
    EvaluationOnly,
}

/// A set of labeled clouds with a label-use capability.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    clouds: Vec<PointCloud>,
    access: LabelAccess,
}

impl Dataset {
    pub fn new(clouds: Vec<PointCloud>, access: LabelAccess) -> Self {
        Dataset { clouds, access }
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn access(&self) -> LabelAccess {
        self.access
    }

    /// Cloud with its labels, only for training-capable datasets.
    pub fn training_cloud(&self, i: usize) -> Result<&PointCloud> {
        match self.access {
            LabelAccess::Training => Ok(&self.clouds[i]),
            LabelAccess::EvaluationOnly => Err(Error::Capability(
                "labels of an evaluation-only dataset cannot be used for training".into(),
            )),
        }
    }

    /// Cloud stripped of labels, always allowed.
    pub fn unlabeled_cloud(&self, i: usize) -> PointCloud {
        self.clouds[i].unlabeled()
    }

    /// Cloud with labels for scoring.
    pub fn evaluation_cloud(&self, i: usize) -> &PointCloud {
        &self.clouds[i]
    }

    pub fn clouds(&self) -> &[PointCloud] {
        &self.clouds
    }
}

/// Generate `count` scenes of one domain on seed stream `stream`.
pub fn generate_set(spec: &DomainSpec, count: usize, seed: u64, stream: u64, access: LabelAccess) -> Result<Dataset> {
    spec.validate()?;
    let clouds = (0..count)
        .into_par_iter()
        .map(|i| generate_scene(spec, scene_seed(seed, stream, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(clouds, access))
}

/// Source and target sets differing only by `shift`. Target labels are
/// evaluation-only.
pub fn make_domain_pair(base: &DomainSpec, shift: &DomainShift, count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if count == 0 {
        return Err(Error::InvalidInput("domain pair needs at least one scene".into()));
    }
    let target = base.shifted(shift)?;
    Ok((
        generate_set(base, count, seed, 0, LabelAccess::Training)?,
        generate_set(&target, count, seed, 1, LabelAccess::EvaluationOnly)?,
    ))
}
