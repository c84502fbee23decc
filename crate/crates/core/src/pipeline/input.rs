use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{binary_mask, height_gray, height_image, CityMap, TxSite};
use crate::grid::Grid;
use crate::los::LosMap;
use crate::nn::Tensor;

/// Which images are stacked as u-net input.
///
/// | mode | channels                 |
/// |------|--------------------------|
/// | K2   | Th, Bh                   |
/// | K3   | Th, Bh, Lf               |
/// | K5   | B0, Bh, T0, Th, Lf       |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputMode {
    K2,
    K3,
    K5,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::K2 => 2,
            InputMode::K3 => 3,
            InputMode::K5 => 5,
        }
    }

    pub fn needs_los(self) -> bool {
        self != InputMode::K2
    }

    pub fn from_channels(k: usize) -> Result<Self> {
        match k {
            2 => Ok(InputMode::K2),
            3 => Ok(InputMode::K3),
            5 => Ok(InputMode::K5),
            _ => Err(Error::InvalidArgument(format!("input mode K={k} not one of 2, 3, 5"))),
        }
    }
}

/// The dataset's four per-sample images, already scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct InputImages {
    pub b0: Grid<f64>,
    pub bh: Grid<f64>,
    pub t0: Grid<f64>,
    pub th: Grid<f64>,
}

impl InputImages {
    /// B0 and T0 are binary; Bh is the height gray level / 255; Th carries the
    /// rooftop gray level / 255 at the transmitter pixel only.
    pub fn new(map: &CityMap, tx: &TxSite) -> Self {
        let (w, h) = (map.width(), map.height());
        let b0 = binary_mask(map).map(|&v| f64::from(v));
        let bh = height_image(map).map(|&v| f64::from(v) / 255.0);
        let mut t0 = Grid::filled(w, h, 0.0);
        t0.set(tx.x, tx.y, 1.0);
        let mut th = Grid::filled(w, h, 0.0);
        th.set(tx.x, tx.y, f64::from(height_gray(map.height_at(tx.x, tx.y))) / 255.0);
        Self { b0, bh, t0, th }
    }
}

pub fn assemble_input(mode: InputMode, images: &InputImages, los: Option<&LosMap>) -> Result<Tensor> {
    let (w, h) = (images.bh.width(), images.bh.height());
    let planes: Vec<&[f64]> = match (mode, los) {
        (InputMode::K2, _) => vec![images.th.as_slice(), images.bh.as_slice()],
        (InputMode::K3, Some(lf)) => vec![images.th.as_slice(), images.bh.as_slice(), lf.as_slice()],
        (InputMode::K5, Some(lf)) => {
            vec![images.b0.as_slice(), images.bh.as_slice(), images.t0.as_slice(), images.th.as_slice(), lf.as_slice()]
        }
        (_, None) => {
            return Err(Error::InvalidArgument(format!("input mode {mode:?} requires a LoS map")));
        }
    };
    if let Some(lf) = los {
        if lf.width() != w || lf.height() != h {
            return Err(Error::ShapeMismatch(format!(
                "LoS map {}x{} does not match map {w}x{h}",
                lf.width(),
                lf.height()
            )));
        }
    }
    let mut data = Vec::with_capacity(planes.len() * w * h);
    for p in &planes {
        data.extend_from_slice(p);
    }
    Tensor::from_vec(&[planes.len(), h, w], data)
}
