//! Attribution maps, ensembles of maps, and input images.
//!
//! Everything is row-major; images are channel-last. Values are kept in
//! 64-bit precision in memory and narrowed to `f32` only when written out.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} at index {i}"))),
        None => Ok(()),
    }
}

/// One m x n saliency map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl AttributionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!("map {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {height}x{width}", height * width),
                found: values.len().to_string(),
            });
        }
        check_finite(&values, "attribution map")?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Same shape as `self`, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.height, self.width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_f64(
            vec![self.height, self.width],
            &self.values,
        )?)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.dims() {
            [h, w] => Self::new(h, w, t.to_f64()),
            // a single-channel image is accepted as a map
            [h, w, 1] => Self::new(h, w, t.to_f64()),
            _ => Err(Error::InvalidShape(format!(
                "expected rank-2 map, found dims {:?}",
                t.dims()
            ))),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(&read_tensor(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_tensor(&self.to_tensor()?, path)?)
    }
}

/// Ordered ensemble of equally shaped maps with optional member labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<AttributionMap>,
    names: Vec<Option<String>>,
}

impl Ensemble {
    pub fn new(members: Vec<AttributionMap>) -> Result<Self> {
        let names = vec![None; members.len()];
        Self::with_names(members, names)
    }

    pub fn with_names(members: Vec<AttributionMap>, names: Vec<Option<String>>) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptyEnsemble)?;
        if names.len() != members.len() {
            return Err(Error::param(format!(
                "{} names for {} members",
                names.len(),
                members.len()
            )));
        }
        let shape = first.shape();
        if let Some(bad) = members.iter().find(|m| m.shape() != shape) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", shape.0, shape.1),
                found: format!("{}x{}", bad.height(), bad.width()),
            });
        }
        Ok(Self { members, names })
    }

    pub fn push(&mut self, member: AttributionMap, name: Option<String>) -> Result<()> {
        if member.shape() != self.shape() {
            let (h, w) = self.shape();
            return Err(Error::ShapeMismatch {
                expected: format!("{h}x{w}"),
                found: format!("{}x{}", member.height(), member.width()),
            });
        }
        self.members.push(member);
        self.names.push(name);
        Ok(())
    }

    pub fn members(&self) -> &[AttributionMap] {
        &self.members
    }

    pub fn names(&self) -> &[Option<String>] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.members[0].shape()
    }

    pub fn pixel_count(&self) -> usize {
        let (h, w) = self.shape();
        h * w
    }

    /// Returns a new ensemble with each member mapped through `f`, names kept.
    pub fn map_members<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&AttributionMap) -> Result<AttributionMap>,
    {
        let members = self
            .members
            .iter()
            .map(&mut f)
            .collect::<Result<Vec<_>>>()?;
        Self::with_names(members, self.names.clone())
    }

    /// Sub-ensemble built from the given member indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut members = Vec::with_capacity(indices.len());
        let mut names = Vec::with_capacity(indices.len());
        for &i in indices {
            let m = self
                .members
                .get(i)
                .ok_or_else(|| Error::param(format!("member index {i} out of range")))?;
            members.push(m.clone());
            names.push(self.names[i].clone());
        }
        Self::with_names(members, names)
    }
}

/// An m x n x d image, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidShape(format!(
                "image {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", height * width * channels),
                found: values.len().to_string(),
            });
        }
        check_finite(&values, "image")?;
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// All channels of pixel `index` (row-major).
    pub fn pixel(&self, index: usize) -> &[f64] {
        let c = self.channels;
        &self.values[index * c..(index + 1) * c]
    }

    pub(crate) fn copy_pixel_from(&mut self, other: &Image, index: usize) {
        let c = self.channels;
        self.values[index * c..(index + 1) * c]
            .copy_from_slice(&other.values[index * c..(index + 1) * c]);
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_f64(
            vec![self.height, self.width, self.channels],
            &self.values,
        )?)
    }

    /// Rank-2 tensors are read as single-channel images.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.dims() {
            [h, w] => Self::new(h, w, 1, t.to_f64()),
            [h, w, d] => Self::new(h, w, d, t.to_f64()),
            _ => unreachable!("tensor rank is validated on construction"),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(&read_tensor(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_tensor(&self.to_tensor()?, path)?)
    }
}
