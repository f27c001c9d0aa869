use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ClassId, LabelMap, PointCloud, RangeImage, EMPTY, IGNORE};
use crate::error::{Error, Result};

/// Cylindrical projection geometry: `h` rows of elevation between
/// `fov_down` and `fov_up` (radians), `w` columns of azimuth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub h: usize,
    pub w: usize,
    pub fov_up: f64,
    pub fov_down: f64,
}

impl Projection {
    pub fn new(h: usize, w: usize, fov_up: f64, fov_down: f64) -> Result<Self> {
        let p = Projection {
            h,
            w,
            fov_up,
            fov_down,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(Error::Config(format!("projection size {}x{} must be positive", self.h, self.w)));
        }
        if !(self.fov_up.is_finite() && self.fov_down.is_finite()) || self.fov_up <= self.fov_down {
            return Err(Error::Config(format!(
                "fov_up ({}) must exceed fov_down ({})",
                self.fov_up, self.fov_down
            )));
        }
        Ok(())
    }

    /// Pixel `(row, col)` a point at `(x, y, z)` falls into. Points outside
    /// the vertical field of view clamp to the boundary rows.
    pub fn pixel_of(&self, x: f64, y: f64, z: f64) -> Result<(usize, usize)> {
        let range = (x * x + y * y + z * z).sqrt();
        if !range.is_finite() {
            return Err(Error::InvalidInput("non-finite point coordinate".into()));
        }
        if range == 0.0 {
            return Err(Error::InvalidInput("point at the sensor origin".into()));
        }
        let yaw = y.atan2(x);
        let pitch = (z / range).clamp(-1.0, 1.0).asin();
        let u = (0.5 * (1.0 - yaw / PI) * self.w as f64).floor();
        let v = ((1.0 - (pitch - self.fov_down) / (self.fov_up - self.fov_down)) * self.h as f64).floor();
        Ok((clamp_index(v, self.h), clamp_index(u, self.w)))
    }
}

fn clamp_index(v: f64, len: usize) -> usize {
    if v <= 0.0 {
        0
    } else {
        (v as usize).min(len - 1)
    }
}

/// Project a cloud onto the range view. When several points share a pixel
/// the closest one wins; equal ranges keep the lower point index.
///
/// Returns the label grid as well when the cloud carries labels.
pub fn project_to_rv(cloud: &PointCloud, projection: Projection) -> Result<(RangeImage, Option<LabelMap>)> {
    projection.validate()?;
    let mut image = RangeImage::empty(projection);
    let mut best = vec![f64::INFINITY; projection.h * projection.w];
    for (idx, p) in cloud.points().iter().enumerate() {
        let (row, col) = projection.pixel_of(p.x as f64, p.y as f64, p.z as f64)?;
        let i = row * projection.w + col;
        let range = p.range();
        if range < best[i] {
            best[i] = range;
            image.write_pixel(i, p, range, idx as u32);
        }
    }
    let labels = cloud.labels().map(|labels| {
        let grid = image
            .point_index()
            .iter()
            .map(|&pi| if pi == EMPTY { IGNORE } else { labels[pi as usize] })
            .collect();
        LabelMap {
            h: projection.h,
            w: projection.w,
            data: grid,
        }
    });
    Ok((image, labels))
}

/// Give every point the label of the pixel its own projection lands in,
/// including points that lost a pixel collision.
pub fn backproject_labels(labels: &LabelMap, image: &RangeImage, cloud: &PointCloud) -> Result<Vec<ClassId>> {
    if labels.height() != image.height() || labels.width() != image.width() {
        return Err(Error::Shape(format!(
            "label map {}x{} vs range image {}x{}",
            labels.height(),
            labels.width(),
            image.height(),
            image.width()
        )));
    }
    let projection = image.projection();
    cloud
        .points()
        .iter()
        .map(|p| {
            let (row, col) = projection.pixel_of(p.x as f64, p.y as f64, p.z as f64)?;
            Ok(labels.get(row, col))
        })
        .collect()
}
