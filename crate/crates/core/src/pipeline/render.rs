use std::path::Path;

use crate::error::{Error, Result};
use crate::pointcloud::{Channel, LabelMap, RangeImage, IGNORE};

pub const PALETTE: [[u8; 3]; 8] = [
    [128, 64, 128],
    [0, 90, 230],
    [255, 200, 0],
    [190, 150, 100],
    [40, 170, 40],
    [230, 30, 160],
    [0, 200, 200],
    [255, 120, 0],
];
pub const CORRECT: [u8; 3] = [0, 200, 0];
pub const WRONG: [u8; 3] = [220, 0, 0];

/// Binary PPM (P6) image, row-major RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Ppm {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Ppm {
    pub fn black(width: usize, height: usize) -> Self {
        Ppm {
            width,
            height,
            rgb: vec![0; 3 * width * height],
        }
    }

    pub fn set(&mut self, pixel: usize, color: [u8; 3]) {
        self.rgb[3 * pixel..3 * pixel + 3].copy_from_slice(&color);
    }

    pub fn get(&self, pixel: usize) -> [u8; 3] {
        [self.rgb[3 * pixel], self.rgb[3 * pixel + 1], self.rgb[3 * pixel + 2]]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

/// Class colors where labeled, range-shaded gray on unlabeled occupied
/// pixels, black where empty.
pub fn render_labels(image: &RangeImage, labels: &LabelMap) -> Ppm {
    let mut ppm = Ppm::black(image.width(), image.height());
    let range = image.channel(Channel::Range);
    let max = range.iter().cloned().fold(0.0f32, f32::max).max(1e-6);
    for (i, &l) in labels.as_slice().iter().enumerate() {
        let (r, c) = (i / image.width(), i % image.width());
        if !image.is_occupied(r, c) {
            continue;
        }
        if l == IGNORE {
            let g = (255.0 * (1.0 - 0.8 * range[i] / max)) as u8;
            ppm.set(i, [g, g, g]);
        } else {
            ppm.set(i, PALETTE[l as usize % PALETTE.len()]);
        }
    }
    ppm
}

/// Green where the prediction matches the truth, red where it does not,
/// black on empty or unlabeled pixels.
pub fn render_correctness(image: &RangeImage, truth: &LabelMap, pred: &LabelMap) -> Ppm {
    let mut ppm = Ppm::black(image.width(), image.height());
    for (i, (&t, &p)) in truth.as_slice().iter().zip(pred.as_slice()).enumerate() {
        if image.is_occupied(i / image.width(), i % image.width()) && t != IGNORE {
            ppm.set(i, if t == p { CORRECT } else { WRONG });
        }
    }
    ppm
}
