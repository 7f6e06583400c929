use crate::error::{Error, Result};

/// Binary segmentation mask, row-major, entries in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Mask> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "mask",
                detail: format!("{height}x{width} needs {} bytes, got {}", height * width, data.len()),
            });
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter("mask entries must be 0 or 1".into()));
        }
        Ok(Mask { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Mask {
        Mask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }
}
