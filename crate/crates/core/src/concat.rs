//! Intermediate-domain construction by spatially aligned concatenation of
//! range-view stripes.
//!
//! A template splits the `h x w` grid into `m` row bands (near/far) and `n`
//! column bands (bearing around the vehicle). Each output sample copies every
//! region verbatim from one donor sample, source or target, without moving
//! it. Labels follow the same donors, so ground truth and pseudo-labels end
//! up side by side.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{ClassId, RvSample, RV_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// How the `m x n` regions of one output are split between domains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentPattern {
    /// The output's own (anchor) sample fills regions with even `row + col`;
    /// its partner from the other domain fills the rest.
    Checkerboard,
    /// Fixed domain per region, row-major, `m * n` entries.
    Fixed(Vec<Domain>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcatTemplate {
    /// Row bands (near-far).
    pub m: usize,
    /// Column bands (around the ego-vehicle).
    pub n: usize,
    pub pattern: AssignmentPattern,
}

/// The sample a region is copied from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Donor {
    pub domain: Domain,
    pub index: usize,
}

/// Per-region donors for one output sample, row-major over the `m x n` grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleAssignment {
    pub regions: Vec<Donor>,
}

/// Split `len` into `parts` contiguous bands of `len / parts`, the remainder
/// going to the last band.
pub fn band_ranges(len: usize, parts: usize) -> Result<Vec<Range<usize>>> {
    if parts == 0 || parts > len {
        return Err(Error::Config(format!("cannot split {len} cells into {parts} bands")));
    }
    let size = len / parts;
    Ok((0..parts)
        .map(|i| {
            let end = if i + 1 == parts { len } else { (i + 1) * size };
            i * size..end
        })
        .collect())
}

impl ConcatTemplate {
    pub fn new(m: usize, n: usize, pattern: AssignmentPattern) -> Result<Self> {
        let t = ConcatTemplate { m, n, pattern };
        t.validate()?;
        Ok(t)
    }

    pub fn checkerboard(m: usize, n: usize) -> Result<Self> {
        Self::new(m, n, AssignmentPattern::Checkerboard)
    }

    pub fn uniform(m: usize, n: usize, domain: Domain) -> Result<Self> {
        Self::new(m, n, AssignmentPattern::Fixed(vec![domain; m * n]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config(format!("template {}x{} must be positive", self.m, self.n)));
        }
        if let AssignmentPattern::Fixed(cells) = &self.pattern {
            if cells.len() != self.m * self.n {
                return Err(Error::Config(format!(
                    "fixed pattern has {} cells for a {}x{} template",
                    cells.len(),
                    self.m,
                    self.n
                )));
            }
        }
        Ok(())
    }

    pub fn regions(&self) -> usize {
        self.m * self.n
    }

    /// Check the template tiles an `h x w` grid.
    pub fn check_fits(&self, h: usize, w: usize) -> Result<()> {
        self.validate()?;
        if self.m > h || self.n > w {
            return Err(Error::Config(format!(
                "template {}x{} finer than the {h}x{w} grid",
                self.m, self.n
            )));
        }
        Ok(())
    }

    fn region_domain(&self, anchor: Domain, r: usize, c: usize) -> Domain {
        match &self.pattern {
            AssignmentPattern::Checkerboard => {
                if (r + c) % 2 == 0 {
                    anchor
                } else {
                    other(anchor)
                }
            }
            AssignmentPattern::Fixed(cells) => cells[r * self.n + c],
        }
    }

    /// Donor layout for `b_s + b_t` outputs. Output `i < b_s` is anchored on
    /// source sample `i`, output `b_s + j` on target sample `j`; each anchor is
    /// paired with one sample of the other domain through a seeded shuffle.
    pub fn assign(&self, b_s: usize, b_t: usize, seed: u64) -> Result<Vec<SampleAssignment>> {
        self.validate()?;
        if b_s == 0 || b_t == 0 {
            return Err(Error::InvalidInput(format!(
                "concatenation needs non-empty batches, got {b_s} source and {b_t} target"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut target_order: Vec<usize> = (0..b_t).collect();
        target_order.shuffle(&mut rng);
        let mut source_order: Vec<usize> = (0..b_s).collect();
        source_order.shuffle(&mut rng);

        let anchors = (0..b_s)
            .map(|i| (Domain::Source, i, target_order[i % b_t]))
            .chain((0..b_t).map(|j| (Domain::Target, j, source_order[j % b_s])));
        Ok(anchors
            .map(|(anchor, own, partner)| {
                let regions = (0..self.m)
                    .flat_map(|r| (0..self.n).map(move |c| (r, c)))
                    .map(|(r, c)| {
                        let domain = self.region_domain(anchor, r, c);
                        let index = if domain == anchor { own } else { partner };
                        Donor { domain, index }
                    })
                    .collect();
                SampleAssignment { regions }
            })
            .collect())
    }
}

fn other(d: Domain) -> Domain {
    match d {
        Domain::Source => Domain::Target,
        Domain::Target => Domain::Source,
    }
}

/// One rectangular region cut out of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Stripe {
    pub domain: Domain,
    pub sample: usize,
    /// `(row band, column band)` index in the template grid.
    pub region: (usize, usize),
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    /// Channel-major `6 x rows x cols` values.
    pub channels: Vec<f32>,
    pub point_index: Vec<u32>,
    pub labels: Vec<ClassId>,
}

/// Cut one sample into its `m * n` stripes, row-major over the template grid.
pub fn slice_regions(sample: &RvSample, domain: Domain, index: usize, template: &ConcatTemplate) -> Result<Vec<Stripe>> {
    let (h, w) = (sample.image.height(), sample.image.width());
    if sample.labels.height() != h || sample.labels.width() != w {
        return Err(Error::Shape("image and label grid differ".into()));
    }
    template.check_fits(h, w)?;
    let rows = band_ranges(h, template.m)?;
    let cols = band_ranges(w, template.n)?;
    let hw = h * w;
    let all = sample.image.channels();
    let mut stripes = Vec::with_capacity(template.regions());
    for (ri, rr) in rows.iter().enumerate() {
        for (ci, cr) in cols.iter().enumerate() {
            let area = rr.len() * cr.len();
            let mut channels = Vec::with_capacity(RV_CHANNELS * area);
            for c in 0..RV_CHANNELS {
                for r in rr.clone() {
                    let base = c * hw + r * w;
                    channels.extend_from_slice(&all[base + cr.start..base + cr.end]);
                }
            }
            let mut point_index = Vec::with_capacity(area);
            let mut labels = Vec::with_capacity(area);
            for r in rr.clone() {
                point_index.extend_from_slice(&sample.image.point_index()[r * w + cr.start..r * w + cr.end]);
                labels.extend_from_slice(&sample.labels.as_slice()[r * w + cr.start..r * w + cr.end]);
            }
            stripes.push(Stripe {
                domain,
                sample: index,
                region: (ri, ci),
                rows: rr.clone(),
                cols: cr.clone(),
                channels,
                point_index,
                labels,
            });
        }
    }
    Ok(stripes)
}

fn paste(stripe: &Stripe, channels: &mut [f32], point_index: &mut [u32], labels: &mut [ClassId], h: usize, w: usize) {
    let hw = h * w;
    let sw = stripe.cols.len();
    let area = stripe.rows.len() * sw;
    for c in 0..RV_CHANNELS {
        for (k, r) in stripe.rows.clone().enumerate() {
            let dst = c * hw + r * w + stripe.cols.start;
            let src = c * area + k * sw;
            channels[dst..dst + sw].copy_from_slice(&stripe.channels[src..src + sw]);
        }
    }
    for (k, r) in stripe.rows.clone().enumerate() {
        let dst = r * w + stripe.cols.start;
        point_index[dst..dst + sw].copy_from_slice(&stripe.point_index[k * sw..(k + 1) * sw]);
        labels[dst..dst + sw].copy_from_slice(&stripe.labels[k * sw..(k + 1) * sw]);
    }
}

/// Build `b_s + b_t` intermediate-domain samples from a source batch (ground
/// truth) and a target batch (pseudo-labels), with donors from
/// [`ConcatTemplate::assign`].
pub fn concatenate(source: &[RvSample], target: &[RvSample], template: &ConcatTemplate, seed: u64) -> Result<Vec<RvSample>> {
    let assignments = template.assign(source.len(), target.len(), seed)?;
    concatenate_with(source, target, template, &assignments)
}

/// Concatenate under an explicit donor layout.
pub fn concatenate_with(
    source: &[RvSample],
    target: &[RvSample],
    template: &ConcatTemplate,
    assignments: &[SampleAssignment],
) -> Result<Vec<RvSample>> {
    let first = source
        .first()
        .or(target.first())
        .ok_or_else(|| Error::InvalidInput("empty batches".into()))?;
    let projection = *first.image.projection();
    let (h, w) = (projection.h, projection.w);
    for s in source.iter().chain(target) {
        if s.image.height() != h || s.image.width() != w {
            return Err(Error::Shape(format!(
                "batch mixes {}x{} with {h}x{w} images",
                s.image.height(),
                s.image.width()
            )));
        }
    }

    let mut stripes: Vec<Vec<Stripe>> = Vec::with_capacity(source.len() + target.len());
    for (i, s) in source.iter().enumerate() {
        stripes.push(slice_regions(s, Domain::Source, i, template)?);
    }
    for (j, s) in target.iter().enumerate() {
        stripes.push(slice_regions(s, Domain::Target, j, template)?);
    }

    assignments
        .iter()
        .map(|a| {
            if a.regions.len() != template.regions() {
                return Err(Error::Shape(format!(
                    "assignment has {} regions, template {}",
                    a.regions.len(),
                    template.regions()
                )));
            }
            let mut channels = vec![0.0f32; RV_CHANNELS * h * w];
            let mut point_index = vec![0u32; h * w];
            let mut labels = vec![0 as ClassId; h * w];
            for (region, donor) in a.regions.iter().enumerate() {
                let slot = match donor.domain {
                    Domain::Source if donor.index < source.len() => donor.index,
                    Domain::Target if donor.index < target.len() => source.len() + donor.index,
                    _ => {
                        return Err(Error::InvalidInput(format!(
                            "donor {:?} #{} out of range",
                            donor.domain, donor.index
                        )))
                    }
                };
                paste(&stripes[slot][region], &mut channels, &mut point_index, &mut labels, h, w);
            }
            RvSample::new(
                crate::pointcloud::RangeImage::from_parts(projection, channels, point_index)?,
                crate::pointcloud::LabelMap::from_vec(h, w, labels)?,
            )
        })
        .collect()
}

/// Named template presets along the three sweep families: near-far splits,
/// bearing splits and joint grids.
pub fn strategy_catalog() -> Vec<(&'static str, ConcatTemplate)> {
    let cb = |m, n| ConcatTemplate {
        m,
        n,
        pattern: AssignmentPattern::Checkerboard,
    };
    vec![
        ("whole-image", cb(1, 1)),
        ("near-far-2", cb(2, 1)),
        ("near-far-4", cb(4, 1)),
        ("near-far-8", cb(8, 1)),
        ("bearing-2", cb(1, 2)),
        ("bearing-4", cb(1, 4)),
        ("bearing-8", cb(1, 8)),
        ("bearing-16", cb(1, 16)),
        ("front-back-near-far", cb(2, 2)),
        ("grid-2x4", cb(2, 4)),
        ("grid-4x4", cb(4, 4)),
        ("grid-4x8", cb(4, 8)),
        ("grid-8x16", cb(8, 16)),
    ]
}

pub const DEFAULT_STRATEGY: &str = "front-back-near-far";

pub fn strategy(name: &str) -> Result<ConcatTemplate> {
    strategy_catalog()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::UnknownName(format!("concatenation strategy '{name}'")))
}
