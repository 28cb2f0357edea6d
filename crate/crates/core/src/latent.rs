//! Latent tensors and the geometry shared by every other module.
//!
//! A [`LatentTensor`] is a dense `C x T x H x W` array stored row-major with
//! the channel axis outermost. Values are held as `f64` but are always rounded
//! to the tensor's storage [`Dtype`], so the tensor behaves exactly like a
//! buffer of 2-, 4- or 8-byte floats while keeping arithmetic in one type.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LpError, Result};

/// Partitionable spatio-temporal axis. The channel axis is never partitioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Temporal,
    Height,
    Width,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Temporal, Axis::Height, Axis::Width];

    /// Position among the three spatio-temporal axes (0, 1, 2).
    pub fn ordinal(self) -> usize {
        match self {
            Axis::Temporal => 0,
            Axis::Height => 1,
            Axis::Width => 2,
        }
    }

    pub fn from_ordinal(i: usize) -> Option<Axis> {
        Axis::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Temporal => "temporal",
            Axis::Height => "height",
            Axis::Width => "width",
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s.to_ascii_lowercase().as_str() {
            "temporal" | "t" => Some(Axis::Temporal),
            "height" | "h" => Some(Axis::Height),
            "width" | "w" => Some(Axis::Width),
            _ => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Element storage type. `Bf16` is the 2-byte type used by the reference
/// video models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Dtype {
    Bf16,
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn bytes(self) -> usize {
        match self {
            Dtype::Bf16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn from_bytes(bytes: usize) -> Result<Dtype> {
        match bytes {
            2 => Ok(Dtype::Bf16),
            4 => Ok(Dtype::F32),
            8 => Ok(Dtype::F64),
            other => Err(LpError::InvalidConfig(format!(
                "dtype_bytes must be 2, 4 or 8, got {other}"
            ))),
        }
    }

    /// Round `v` to the nearest value representable in this dtype.
    #[inline]
    pub fn quantize(self, v: f64) -> f64 {
        match self {
            Dtype::Bf16 => half::bf16::from_f64(v).to_f64(),
            Dtype::F32 => v as f32 as f64,
            Dtype::F64 => v,
        }
    }
}

/// Extents of a latent tensor: channels plus the three partitionable axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub temporal: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, temporal: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            temporal,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.temporal * self.height * self.width
    }

    pub fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::Temporal => self.temporal,
            Axis::Height => self.height,
            Axis::Width => self.width,
        }
    }

    pub fn with_extent(mut self, axis: Axis, extent: usize) -> Self {
        match axis {
            Axis::Temporal => self.temporal = extent,
            Axis::Height => self.height = extent,
            Axis::Width => self.width = extent,
        }
        self
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.channels, self.temporal, self.height, self.width]
    }

    /// Row-major strides in elements, channel outermost.
    pub fn strides(&self) -> [usize; 4] {
        let w = 1;
        let h = self.width;
        let t = self.height * self.width;
        let c = self.temporal * t;
        [c, t, h, w]
    }

    pub fn stride(&self, axis: Axis) -> usize {
        self.strides()[axis.ordinal() + 1]
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, h: usize, w: usize) -> usize {
        ((c * self.temporal + t) * self.height + h) * self.width + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.channels, self.temporal, self.height, self.width
        )
    }
}

/// Dense latent tensor `z_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: Shape,
    dtype: Dtype,
    data: Vec<f64>,
}

impl LatentTensor {
    pub fn zeros(shape: Shape, dtype: Dtype) -> Self {
        Self {
            shape,
            dtype,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(shape: Shape, dtype: Dtype, value: f64) -> Self {
        Self {
            shape,
            dtype,
            data: vec![dtype.quantize(value); shape.numel()],
        }
    }

    /// Build a tensor from `f(c, t, h, w)`.
    pub fn from_fn(
        shape: Shape,
        dtype: Dtype,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for c in 0..shape.channels {
            for t in 0..shape.temporal {
                for h in 0..shape.height {
                    for w in 0..shape.width {
                        data.push(dtype.quantize(f(c, t, h, w)));
                    }
                }
            }
        }
        Self { shape, dtype, data }
    }

    pub fn from_vec(shape: Shape, dtype: Dtype, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(LpError::ShapeMismatch(format!(
                "{} elements supplied for shape {shape}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(LpError::InvalidConfig(format!(
                "non-finite latent element {bad}"
            )));
        }
        let data = data.into_iter().map(|v| dtype.quantize(v)).collect();
        Ok(Self { shape, dtype, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Payload size in bytes at the storage dtype.
    pub fn size_bytes(&self) -> usize {
        self.numel() * self.dtype.bytes()
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(c, t, h, w)]
    }

    pub fn set(&mut self, c: usize, t: usize, h: usize, w: usize, v: f64) {
        let i = self.shape.index(c, t, h, w);
        self.data[i] = self.dtype.quantize(v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map, rounding the result to the storage dtype.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let dtype = self.dtype;
        Self {
            shape: self.shape,
            dtype,
            data: self.data.iter().map(|&v| dtype.quantize(f(v))).collect(),
        }
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(LpError::ShapeMismatch(format!(
                "{} vs {}",
                self.shape, other.shape
            )));
        }
        let dtype = self.dtype;
        Ok(Self {
            shape: self.shape,
            dtype,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| dtype.quantize(f(a, b)))
                .collect(),
        })
    }

    pub fn to_dtype(&self, dtype: Dtype) -> Self {
        Self {
            shape: self.shape,
            dtype,
            data: self.data.iter().map(|&v| dtype.quantize(v)).collect(),
        }
    }

    /// Copy of the half-open range `[start, end)` along `axis`.
    pub fn slice_axis(&self, axis: Axis, start: usize, end: usize) -> Result<Self> {
        let extent = self.shape.extent(axis);
        if start == end && end <= extent {
            return Err(LpError::EmptyRange { axis, start });
        }
        if start > end || end > extent {
            return Err(LpError::OutOfBounds {
                axis,
                start,
                end,
                extent,
            });
        }
        let out_shape = self.shape.with_extent(axis, end - start);
        let mut data = Vec::with_capacity(out_shape.numel());
        let src = self.shape;
        // Copy contiguous rows of the innermost axis that survive the slice.
        for c in 0..src.channels {
            for t in 0..src.temporal {
                if axis == Axis::Temporal && !(start..end).contains(&t) {
                    continue;
                }
                for h in 0..src.height {
                    if axis == Axis::Height && !(start..end).contains(&h) {
                        continue;
                    }
                    let row = src.index(c, t, h, 0);
                    if axis == Axis::Width {
                        data.extend_from_slice(&self.data[row + start..row + end]);
                    } else {
                        data.extend_from_slice(&self.data[row..row + src.width]);
                    }
                }
            }
        }
        Ok(Self {
            shape: out_shape,
            dtype: self.dtype,
            data,
        })
    }

    /// Concatenate tensors along `axis`. All other extents and the dtype must match.
    pub fn concat_axis(parts: &[LatentTensor], axis: Axis) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| LpError::ShapeMismatch("nothing to concatenate".into()))?;
        let mut total = 0;
        for p in parts {
            if p.shape.with_extent(axis, 0) != first.shape.with_extent(axis, 0)
                || p.dtype != first.dtype
            {
                return Err(LpError::ShapeMismatch(format!(
                    "cannot concatenate {} with {} along {axis}",
                    first.shape, p.shape
                )));
            }
            total += p.shape.extent(axis);
        }
        let shape = first.shape.with_extent(axis, total);
        let mut out = LatentTensor::zeros(shape, first.dtype);
        let mut offset = 0;
        for p in parts {
            let s = p.shape;
            for c in 0..s.channels {
                for t in 0..s.temporal {
                    for h in 0..s.height {
                        for w in 0..s.width {
                            let (mut tt, mut hh, mut ww) = (t, h, w);
                            match axis {
                                Axis::Temporal => tt += offset,
                                Axis::Height => hh += offset,
                                Axis::Width => ww += offset,
                            }
                            out.data[shape.index(c, tt, hh, ww)] = p.get(c, t, h, w);
                        }
                    }
                }
            }
            offset += s.extent(axis);
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn rms_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let ss: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((ss / self.data.len() as f64).sqrt())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(LpError::ShapeMismatch(format!(
                "{} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// Patch sizes along the three partitionable axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub temporal: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchGeometry {
    pub fn new(temporal: usize, height: usize, width: usize) -> Result<Self> {
        if temporal == 0 || height == 0 || width == 0 {
            return Err(LpError::InvalidConfig(
                "patch sizes must be at least 1".into(),
            ));
        }
        Ok(Self {
            temporal,
            height,
            width,
        })
    }

    /// Unit patches; used for patch-granularity grids.
    pub fn unit() -> Self {
        Self {
            temporal: 1,
            height: 1,
            width: 1,
        }
    }

    pub fn size(&self, axis: Axis) -> usize {
        match axis {
            Axis::Temporal => self.temporal,
            Axis::Height => self.height,
            Axis::Width => self.width,
        }
    }

    /// `floor(D / p)` along `axis`.
    pub fn patch_count(&self, shape: Shape, axis: Axis) -> Result<usize> {
        let extent = shape.extent(axis);
        let patch = self.size(axis);
        if extent < patch {
            return Err(LpError::DegenerateAxis {
                axis,
                extent,
                patch,
            });
        }
        Ok(extent / patch)
    }

    /// Patch counts on all three axes.
    pub fn grid(&self, shape: Shape) -> Result<[usize; 3]> {
        Ok([
            self.patch_count(shape, Axis::Temporal)?,
            self.patch_count(shape, Axis::Height)?,
            self.patch_count(shape, Axis::Width)?,
        ])
    }

    /// Number of patch tokens the full latent is split into.
    pub fn num_patches(&self, shape: Shape) -> Result<usize> {
        Ok(self.grid(shape)?.iter().product())
    }
}

/// Model-size parameters that set the activation size moved by layer-split
/// strategies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelPreset {
    pub name: String,
    pub description: String,
    pub hidden_dim: usize,
    #[serde(serialize_with = "serialize_dtype_bytes", rename = "dtype_bytes")]
    pub dtype: Dtype,
    /// Transformer blocks; only used to lay out the layer-split emulation.
    pub num_blocks: usize,
}

fn serialize_dtype_bytes<S: serde::Serializer>(
    dtype: &Dtype,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u64(dtype.bytes() as u64)
}

impl ModelPreset {
    pub fn new(name: &str, hidden_dim: usize, dtype: Dtype, num_blocks: usize) -> Result<Self> {
        if hidden_dim == 0 || num_blocks == 0 {
            return Err(LpError::InvalidConfig(
                "preset hidden_dim and num_blocks must be >= 1".into(),
            ));
        }
        Ok(Self {
            name: name.to_string(),
            description: String::new(),
            hidden_dim,
            dtype,
            num_blocks,
        })
    }

    /// 1.3B-parameter video DiT: 1536-wide hidden state, 30 blocks, bf16.
    /// Pair with [`wan_like_latent`] and patch size (1, 2, 2).
    pub fn wan21_like() -> Self {
        Self {
            name: "wan21-like".into(),
            description: "1.3B video DiT: hidden 1536, 30 blocks, bf16 activations, \
                          16-channel latent with 4x8x8 VAE compression, patch (1,2,2)"
                .into(),
            hidden_dim: 1536,
            dtype: Dtype::Bf16,
            num_blocks: 30,
        }
    }

    /// Small preset for unit-scale experiments.
    pub fn toy() -> Self {
        Self {
            name: "toy".into(),
            description: "desk-scale toy model: hidden 64, 4 blocks, f32".into(),
            hidden_dim: 64,
            dtype: Dtype::F32,
            num_blocks: 4,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "wan21-like" => Ok(Self::wan21_like()),
            "toy" => Ok(Self::toy()),
            other => Err(LpError::InvalidConfig(format!(
                "unknown preset {other:?} (expected \"wan21-like\" or \"toy\")"
            ))),
        }
    }
}

/// Latent shape of a 480x832 video with the given frame count after 4x
/// temporal and 8x spatial VAE compression into 16 channels.
pub fn wan_like_latent(frames: usize) -> Shape {
    Shape::new(16, (frames - 1) / 4 + 1, 480 / 8, 832 / 8)
}

/// Patch size of the reference video DiT.
pub fn wan_like_patch() -> PatchGeometry {
    PatchGeometry {
        temporal: 1,
        height: 2,
        width: 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: Shape) -> LatentTensor {
        let mut n = 0.0;
        LatentTensor::from_fn(shape, Dtype::F64, |_, _, _, _| {
            n += 1.0;
            n
        })
    }

    #[test]
    fn slice_temporal_rows() {
        let z = iota(Shape::new(1, 4, 4, 4));
        let s = z.slice_axis(Axis::Temporal, 1, 3).unwrap();
        assert_eq!(s.shape(), Shape::new(1, 2, 4, 4));
        for t in 0..2 {
            for h in 0..4 {
                for w in 0..4 {
                    assert_eq!(s.get(0, t, h, w), z.get(0, t + 1, h, w));
                }
            }
        }
    }

    #[test]
    fn full_width_slice_is_copy() {
        let z = iota(Shape::new(2, 8, 8, 8));
        let s = z.slice_axis(Axis::Width, 0, 8).unwrap();
        assert_eq!(s, z);
    }

    #[test]
    fn slice_of_temporal_ramp() {
        let z = LatentTensor::from_fn(Shape::new(1, 4, 4, 4), Dtype::F32, |_, t, _, _| t as f64);
        let s = z.slice_axis(Axis::Temporal, 2, 4).unwrap();
        // Enumerated by hand: first 16 elements are row t=2, next 16 are t=3.
        let expected: Vec<f64> = [2.0; 16].into_iter().chain([3.0; 16]).collect();
        assert_eq!(s.data(), expected.as_slice());
    }

    #[test]
    fn slice_errors() {
        let z = iota(Shape::new(1, 4, 4, 4));
        assert!(matches!(
            z.slice_axis(Axis::Height, 2, 2),
            Err(LpError::EmptyRange { .. })
        ));
        assert!(matches!(
            z.slice_axis(Axis::Height, 3, 5),
            Err(LpError::OutOfBounds { .. })
        ));
        assert!(matches!(
            z.slice_axis(Axis::Height, 3, 1),
            Err(LpError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn patch_counts() {
        let g = PatchGeometry::new(1, 2, 2).unwrap();
        assert_eq!(
            g.patch_count(Shape::new(1, 21, 4, 4), Axis::Temporal)
                .unwrap(),
            21
        );
        assert_eq!(
            g.patch_count(Shape::new(1, 1, 60, 4), Axis::Height)
                .unwrap(),
            30
        );
        assert_eq!(
            g.patch_count(Shape::new(1, 1, 4, 7), Axis::Width).unwrap(),
            3
        );
        assert!(matches!(
            g.patch_count(Shape::new(1, 1, 1, 4), Axis::Height),
            Err(LpError::DegenerateAxis { .. })
        ));
    }

    #[test]
    fn dtype_rounding() {
        assert_eq!(Dtype::F32.quantize(0.1), 0.1f32 as f64);
        assert_eq!(Dtype::F64.quantize(0.1), 0.1);
        let b = Dtype::Bf16.quantize(1.0 + 1.0 / 512.0);
        assert_eq!(b, 1.0);
        assert!(Dtype::from_bytes(3).is_err());
    }

    #[test]
    fn wan_latent_dims() {
        let s = wan_like_latent(49);
        assert_eq!(s, Shape::new(16, 13, 60, 104));
        assert_eq!(wan_like_latent(81).temporal, 21);
        assert_eq!(wan_like_patch().num_patches(s).unwrap(), 13 * 30 * 52);
    }

    #[test]
    fn concat_rejects_mismatch() {
        let a = LatentTensor::zeros(Shape::new(1, 2, 2, 2), Dtype::F32);
        let b = LatentTensor::zeros(Shape::new(1, 2, 3, 2), Dtype::F32);
        assert!(LatentTensor::concat_axis(&[a, b], Axis::Temporal).is_err());
    }
}
