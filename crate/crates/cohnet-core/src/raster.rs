//! Raster containers with validity masks, plus patch extraction and
//! overlap-averaged reassembly.

use num_complex::Complex32;

use crate::error::{Error, Result};

/// Hard cap on either raster dimension to bound memory deterministically.
pub const DIM_CAP: usize = 16384;

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension);
    }
    if width > DIM_CAP || height > DIM_CAP {
        return Err(Error::DimensionCap { width, height, cap: DIM_CAP });
    }
    Ok(())
}

/// 2-D grid of real samples in row-major order with a per-pixel validity mask.
///
/// Units depend on role: meters for heights, dimensionless in [0,1] for
/// coherence magnitudes, rad/m for vertical wavenumbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarRaster {
    width: usize,
    height: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl ScalarRaster {
    pub fn new(width: usize, height: usize, data: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        let want = width * height;
        if data.len() != want {
            return Err(Error::LengthMismatch { got: data.len(), want });
        }
        if valid.len() != want {
            return Err(Error::LengthMismatch { got: valid.len(), want });
        }
        Ok(Self { width, height, data, valid })
    }

    /// All-valid raster filled with a constant.
    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        check_dims(width, height)?;
        let n = width * height;
        Ok(Self { width, height, data: vec![value; n], valid: vec![true; n] })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // zero dimensions are rejected at construction
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[self.idx(row, col)]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[self.idx(row, col)]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn valid_mut(&mut self) -> &mut [bool] {
        &mut self.valid
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32, valid: bool) {
        let i = self.idx(row, col);
        self.data[i] = value;
        self.valid[i] = valid;
    }

    /// Iterator over (value, valid) for valid pixels only.
    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().zip(&self.valid).filter(|(_, &v)| v).map(|(&x, _)| x)
    }
}

/// 2-D grid of complex samples with a validity mask. Non-finite samples are
/// marked invalid at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexRaster {
    width: usize,
    height: usize,
    data: Vec<Complex32>,
    valid: Vec<bool>,
}

impl ComplexRaster {
    pub fn new(width: usize, height: usize, data: Vec<Complex32>, mut valid: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        let want = width * height;
        if data.len() != want {
            return Err(Error::LengthMismatch { got: data.len(), want });
        }
        if valid.len() != want {
            return Err(Error::LengthMismatch { got: valid.len(), want });
        }
        for (v, s) in valid.iter_mut().zip(&data) {
            if !s.re.is_finite() || !s.im.is_finite() {
                *v = false;
            }
        }
        Ok(Self { width, height, data, valid })
    }

    pub fn filled(width: usize, height: usize, value: Complex32) -> Result<Self> {
        check_dims(width, height)?;
        let n = width * height;
        Self::new(width, height, vec![value; n], vec![true; n])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex32 {
        self.data[self.idx(row, col)]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[self.idx(row, col)]
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex32, valid: bool) {
        let i = self.idx(row, col);
        self.data[i] = value;
        self.valid[i] = valid && value.re.is_finite() && value.im.is_finite();
    }

    /// Magnitude image with the same validity mask.
    pub fn magnitude(&self) -> ScalarRaster {
        let data = self.data.iter().map(|c| c.norm()).collect();
        ScalarRaster::new(self.width, self.height, data, self.valid.clone())
            .expect("dimensions already validated")
    }
}

/// Patch layout over a source raster: origins in row-major order, with a
/// final patch anchored flush to the far edge when the stride does not
/// divide evenly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    /// (row, col) of each patch's top-left corner, row-major origin order.
    pub origins: Vec<(usize, usize)>,
    pub source_width: usize,
    pub source_height: usize,
}

/// Per-axis patch origins: 0, stride, 2*stride, ... plus a flush-edge final
/// origin so every pixel is covered.
pub fn axis_origins(dim: usize, patch_size: usize, stride: usize) -> Vec<usize> {
    debug_assert!(patch_size <= dim && stride >= 1);
    let last = dim - patch_size;
    let mut origins: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o <= last).collect();
    if *origins.last().expect("origin 0 always present") != last {
        origins.push(last);
    }
    origins
}

impl PatchGrid {
    pub fn plan(
        source_width: usize,
        source_height: usize,
        patch_size: usize,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::ZeroStride);
        }
        if patch_size > source_width {
            return Err(Error::PatchTooLarge { patch: patch_size, dim: source_width });
        }
        if patch_size > source_height {
            return Err(Error::PatchTooLarge { patch: patch_size, dim: source_height });
        }
        let rows = axis_origins(source_height, patch_size, stride);
        let cols = axis_origins(source_width, patch_size, stride);
        let mut origins = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            for &c in &cols {
                origins.push((r, c));
            }
        }
        Ok(Self { patch_size, stride, origins, source_width, source_height })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Extract overlapping patches; patches are exact pixel copies.
pub fn extract_patches(
    raster: &ScalarRaster,
    patch_size: usize,
    stride: usize,
) -> Result<(Vec<ScalarRaster>, PatchGrid)> {
    let grid = PatchGrid::plan(raster.width(), raster.height(), patch_size, stride)?;
    let mut patches = Vec::with_capacity(grid.len());
    for &(r0, c0) in &grid.origins {
        let mut data = Vec::with_capacity(patch_size * patch_size);
        let mut valid = Vec::with_capacity(patch_size * patch_size);
        for r in r0..r0 + patch_size {
            let base = raster.idx(r, c0);
            data.extend_from_slice(&raster.data()[base..base + patch_size]);
            valid.extend_from_slice(&raster.valid()[base..base + patch_size]);
        }
        patches.push(ScalarRaster::new(patch_size, patch_size, data, valid)?);
    }
    Ok((patches, grid))
}

/// Extract overlapping patches from a complex raster.
pub fn extract_patches_complex(
    raster: &ComplexRaster,
    patch_size: usize,
    stride: usize,
) -> Result<(Vec<ComplexRaster>, PatchGrid)> {
    let grid = PatchGrid::plan(raster.width(), raster.height(), patch_size, stride)?;
    let mut patches = Vec::with_capacity(grid.len());
    for &(r0, c0) in &grid.origins {
        let mut data = Vec::with_capacity(patch_size * patch_size);
        let mut valid = Vec::with_capacity(patch_size * patch_size);
        for r in r0..r0 + patch_size {
            let base = raster.idx(r, c0);
            data.extend_from_slice(&raster.data()[base..base + patch_size]);
            valid.extend_from_slice(&raster.valid()[base..base + patch_size]);
        }
        patches.push(ComplexRaster::new(patch_size, patch_size, data, valid)?);
    }
    Ok((patches, grid))
}

/// Reassemble patches onto the source grid. Overlapping valid pixels are
/// averaged with equal weights; invalid contributors are ignored; pixels with
/// no valid contributor come out invalid.
pub fn reassemble_patches(patches: &[ScalarRaster], grid: &PatchGrid) -> Result<ScalarRaster> {
    if patches.len() != grid.len() {
        return Err(Error::PatchGridMismatch);
    }
    for p in patches {
        if p.width() != grid.patch_size || p.height() != grid.patch_size {
            return Err(Error::PatchGridMismatch);
        }
    }
    let n = grid.source_width * grid.source_height;
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for (patch, &(r0, c0)) in patches.iter().zip(&grid.origins) {
        for r in 0..grid.patch_size {
            for c in 0..grid.patch_size {
                if patch.is_valid(r, c) {
                    let i = (r0 + r) * grid.source_width + (c0 + c);
                    sum[i] += f64::from(patch.get(r, c));
                    count[i] += 1;
                }
            }
        }
    }
    let mut data = vec![0.0f32; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        if count[i] > 0 {
            data[i] = (sum[i] / f64::from(count[i])) as f32;
            valid[i] = true;
        }
    }
    ScalarRaster::new(grid.source_width, grid.source_height, data, valid)
}
