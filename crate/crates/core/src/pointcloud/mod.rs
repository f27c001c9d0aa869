//! Point clouds, cylindrical range-view projection and the label grids that
//! live on it.
//!
//! A [`RangeImage`] stores six channels per pixel in channel-major order:
//! `x, y, z, intensity, range, mask`. Empty pixels are all-zero and carry
//! [`EMPTY`] in the point index map, so any consumer can recover the point a
//! pixel came from.

mod augment;
pub mod io;
mod projection;
mod stats;

pub use augment::{augment_cloud, AugmentConfig};
pub use projection::{backproject_labels, project_to_rv, Projection};
pub use stats::{occupancy_stats, OccupancyStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class id type. Valid ids are `0..C`; [`IGNORE`] is reserved.
pub type ClassId = u16;

/// Label sentinel excluded from losses and metrics.
pub const IGNORE: ClassId = u16::MAX;

/// Point-index sentinel for pixels no point landed in.
pub const EMPTY: u32 = u32::MAX;

/// Number of channels in a range image.
pub const RV_CHANNELS: usize = 6;

/// Channel order of a [`RangeImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Channel {
    X = 0,
    Y = 1,
    Z = 2,
    Intensity = 3,
    Range = 4,
    Mask = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Point { x, y, z, intensity }
    }

    pub fn range(&self) -> f64 {
        let (x, y, z) = (self.x as f64, self.y as f64, self.z as f64);
        (x * x + y * y + z * z).sqrt()
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// One LiDAR sweep, optionally with a class id per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
    labels: Option<Vec<ClassId>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let cloud = PointCloud {
            points,
            labels: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_labels(points: Vec<Point>, labels: Vec<ClassId>) -> Result<Self> {
        let cloud = PointCloud {
            points,
            labels: Some(labels),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !(0.0..=1.0).contains(&p.intensity))
        {
            return Err(Error::InvalidInput(format!("point {i} intensity outside [0, 1]")));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.points.len() {
                return Err(Error::Shape(format!(
                    "{} labels for {} points",
                    labels.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same points, labels dropped.
    pub fn unlabeled(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            labels: None,
        }
    }

    /// Replace the label vector (e.g. with back-projected pseudo-labels).
    pub fn relabeled(&self, labels: Vec<ClassId>) -> Result<PointCloud> {
        PointCloud::with_labels(self.points.clone(), labels)
    }

    pub(crate) fn from_parts_unchecked(points: Vec<Point>, labels: Option<Vec<ClassId>>) -> Self {
        PointCloud { points, labels }
    }
}

/// Class-id grid aligned with a range image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    h: usize,
    w: usize,
    data: Vec<ClassId>,
}

impl LabelMap {
    pub fn filled(h: usize, w: usize, value: ClassId) -> Self {
        LabelMap {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<ClassId>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!("label grid {h}x{w} given {} values", data.len())));
        }
        Ok(LabelMap { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn get(&self, row: usize, col: usize) -> ClassId {
        self.data[row * self.w + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: ClassId) {
        self.data[row * self.w + col] = value;
    }

    pub fn as_slice(&self) -> &[ClassId] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [ClassId] {
        &mut self.data
    }

    /// Number of non-IGNORE cells.
    pub fn labeled_count(&self) -> usize {
        self.data.iter().filter(|&&l| l != IGNORE).count()
    }
}

/// Six-channel cylindrical projection of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    projection: Projection,
    channels: Vec<f32>,
    point_index: Vec<u32>,
}

impl RangeImage {
    /// All-empty image for the given projection.
    pub fn empty(projection: Projection) -> Self {
        let hw = projection.h * projection.w;
        RangeImage {
            projection,
            channels: vec![0.0; RV_CHANNELS * hw],
            point_index: vec![EMPTY; hw],
        }
    }

    pub fn from_parts(projection: Projection, channels: Vec<f32>, point_index: Vec<u32>) -> Result<Self> {
        let hw = projection.h * projection.w;
        if channels.len() != RV_CHANNELS * hw || point_index.len() != hw {
            return Err(Error::Shape(format!(
                "range image {}x{} given {} channel values and {} indices",
                projection.h,
                projection.w,
                channels.len(),
                point_index.len()
            )));
        }
        Ok(RangeImage {
            projection,
            channels,
            point_index,
        })
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn height(&self) -> usize {
        self.projection.h
    }

    pub fn width(&self) -> usize {
        self.projection.w
    }

    /// Channel-major values, `6 * h * w` long.
    pub fn channels(&self) -> &[f32] {
        &self.channels
    }

    pub fn channel(&self, c: Channel) -> &[f32] {
        let hw = self.height() * self.width();
        &self.channels[c as usize * hw..(c as usize + 1) * hw]
    }

    pub fn value(&self, c: Channel, row: usize, col: usize) -> f32 {
        self.channel(c)[row * self.width() + col]
    }

    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.value(Channel::Mask, row, col) != 0.0
    }

    pub fn point_index(&self) -> &[u32] {
        &self.point_index
    }

    pub fn occupied_count(&self) -> usize {
        self.channel(Channel::Mask).iter().filter(|&&m| m != 0.0).count()
    }

    /// Copy every channel and the point index of pixel `(row, col)` from `other`.
    pub fn copy_pixel_from(&mut self, other: &RangeImage, row: usize, col: usize) {
        let hw = self.height() * self.width();
        let i = row * self.width() + col;
        for c in 0..RV_CHANNELS {
            self.channels[c * hw + i] = other.channels[c * hw + i];
        }
        self.point_index[i] = other.point_index[i];
    }

    pub(crate) fn write_pixel(&mut self, i: usize, p: &Point, range: f64, point: u32) {
        let hw = self.height() * self.width();
        let values = [p.x, p.y, p.z, p.intensity, range as f32, 1.0];
        for (c, v) in values.into_iter().enumerate() {
            self.channels[c * hw + i] = v;
        }
        self.point_index[i] = point;
    }
}

/// A range image paired with the label grid supervising it.
#[derive(Debug, Clone, PartialEq)]
pub struct RvSample {
    pub image: RangeImage,
    pub labels: LabelMap,
}

impl RvSample {
    pub fn new(image: RangeImage, labels: LabelMap) -> Result<Self> {
        if image.height() != labels.height() || image.width() != labels.width() {
            return Err(Error::Shape(format!(
                "image {}x{} vs labels {}x{}",
                image.height(),
                image.width(),
                labels.height(),
                labels.width()
            )));
        }
        Ok(RvSample { image, labels })
    }
}
