//! Grid-shaped carriers shared by every stage: response stacks, feature maps,
//! boundary probabilities, boundary region masks and label maps.
//!
//! All grids are row-major; a pixel at `(y, x)` has flat index `y * width + x`.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};

/// Label value excluded from every metric and label-derived target.
pub const IGNORE_LABEL: u8 = 255;

/// Category-index map, one `u8` per pixel, [`IGNORE_LABEL`] for void pixels.
pub type LabelMap = Array2<u8>;

/// Per-category response maps stored channel-first as `(C, H, W)`.
///
/// Files carry responses as `H x W x C`; use [`ResponseStack::from_hwc`] and
/// [`ResponseStack::to_hwc`] at the I/O boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseStack {
    data: Array3<f64>,
}

impl ResponseStack {
    pub fn new(data: Array3<f64>) -> Self {
        Self {
            data: data.as_standard_layout().into_owned(),
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(Array3::zeros((channels, height, width)))
    }

    pub fn from_hwc(hwc: ArrayView3<'_, f32>) -> Self {
        Self::new(hwc.mapv(f64::from).permuted_axes([2, 0, 1]))
    }

    pub fn to_hwc(&self) -> Array3<f32> {
        self.data
            .mapv(|v| v as f32)
            .permuted_axes([1, 2, 0])
            .as_standard_layout()
            .into_owned()
    }

    pub fn channels(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn height(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn num_pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn channel(&self, k: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), k)
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    /// Flat row-major values of channel `k`.
    pub fn channel_slice(&self, k: usize) -> &[f64] {
        let n = self.num_pixels();
        let all = self.data.as_slice().expect("standard layout");
        &all[k * n..(k + 1) * n]
    }

    /// Clips negatives to zero and divides each channel by its maximum.
    /// Channels whose maximum is not positive become all-zero.
    pub fn normalize_max(&self) -> Self {
        let mut out = self.data.mapv(|v| v.max(0.0));
        for mut ch in out.axis_iter_mut(Axis(0)) {
            let max = ch.iter().copied().fold(0.0_f64, f64::max);
            if max > 0.0 {
                ch.mapv_inplace(|v| v / max);
            } else {
                ch.fill(0.0);
            }
        }
        Self { data: out }
    }
}

/// Per-pixel feature vectors stored as `(H, W, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Self {
        Self {
            data: data.as_standard_layout().into_owned(),
        }
    }

    pub fn from_f32(hwd: ArrayView3<'_, f32>) -> Self {
        Self::new(hwd.mapv(f64::from))
    }

    pub fn height(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn width(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn depth(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }

    /// Feature vector of the pixel with flat index `i`.
    pub fn pixel(&self, i: usize) -> ArrayView1<'_, f64> {
        let w = self.width();
        self.data.slice(ndarray::s![i / w, i % w, ..])
    }

    pub fn pixel_slice(&self, i: usize) -> &[f64] {
        let d = self.depth();
        let all = self.data.as_slice().expect("standard layout");
        &all[i * d..(i + 1) * d]
    }
}

/// Predicted boundary probabilities, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryProbMap {
    values: Array2<f64>,
}

impl BoundaryProbMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!(
                "boundary probabilities must lie in [0, 1], found {bad}"
            )));
        }
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
        })
    }

    pub fn from_f32(values: ArrayView2<'_, f32>) -> Result<Self> {
        Self::new(values.mapv(f64::from))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Partition of a grid into boundary pixels (`true`) and non-boundary pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    is_boundary: Array2<bool>,
}

impl RegionMask {
    pub fn new(is_boundary: Array2<bool>) -> Self {
        Self {
            is_boundary: is_boundary.as_standard_layout().into_owned(),
        }
    }

    /// Mask with no boundary pixels.
    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(Array2::from_elem((height, width), false))
    }

    /// Mask where every pixel is a boundary pixel.
    pub fn full(height: usize, width: usize) -> Self {
        Self::new(Array2::from_elem((height, width), true))
    }

    pub fn from_flat(height: usize, width: usize, flags: Vec<bool>) -> Result<Self> {
        let arr =
            Array2::from_shape_vec((height, width), flags).map_err(|e| Error::shape(format!("region mask: {e}")))?;
        Ok(Self::new(arr))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.is_boundary.dim()
    }

    pub fn num_pixels(&self) -> usize {
        self.is_boundary.len()
    }

    /// Whether the pixel with flat index `i` belongs to the boundary region.
    #[inline]
    pub fn is_boundary(&self, i: usize) -> bool {
        self.flags()[i]
    }

    pub fn flags(&self) -> &[bool] {
        self.is_boundary.as_slice().expect("standard layout")
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.is_boundary
    }

    pub fn boundary_count(&self) -> usize {
        self.flags().iter().filter(|&&b| b).count()
    }

    /// True when every boundary pixel of `self` is also a boundary pixel of `other`.
    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.dim() == other.dim() && self.flags().iter().zip(other.flags()).all(|(&a, &b)| !a || b)
    }

    pub fn to_u8(&self) -> Array2<u8> {
        self.is_boundary.mapv(u8::from)
    }
}

/// Nearest-neighbour resampling of a label map using pixel-centre alignment.
pub fn resize_nearest(labels: ArrayView2<'_, u8>, height: usize, width: usize) -> Result<LabelMap> {
    let (src_h, src_w) = labels.dim();
    if height == 0 || width == 0 || src_h == 0 || src_w == 0 {
        return Err(Error::arg("resize_nearest: dimensions must be positive"));
    }
    let pick = |dst: usize, dst_len: usize, src_len: usize| {
        (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64) as usize).min(src_len - 1)
    };
    Ok(Array2::from_shape_fn((height, width), |(y, x)| {
        labels[[pick(y, height, src_h), pick(x, width, src_w)]]
    }))
}

pub(crate) fn check_grid(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!(
            "{what}: grid is {}x{}, expected {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}
