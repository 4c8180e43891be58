//! Exact integer algebra on quantized images and their bitplanes.
//!
//! Codes are stored as `u16` whatever the container depth `N`; `N` and the
//! effective depth `q` travel alongside as metadata. Pixels are laid out
//! planar (channel-major), row-major within a channel.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, violation, Result};

pub const MIN_CONTAINER_BITS: u32 = 2;
pub const MAX_CONTAINER_BITS: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(invalid(format!("channel count must be 1 or 3, got {}", self.channels)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(invalid(format!("empty image {}x{}", self.height, self.width)));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// What an [`ImageTensor`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// A full-depth image; `effective_bits == container_bits`.
    Full,
    /// A quantized image whose low `N - q` bits are all zero.
    Quantized,
    /// The difference between an image and its quantization. For this role
    /// `effective_bits` is the `q` of the paired quantized image, so every
    /// code is below `2^(N - q)`.
    Residual,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageTensor {
    pub(crate) shape: Shape,
    pub(crate) codes: Vec<u16>,
    pub(crate) container_bits: u32,
    pub(crate) effective_bits: u32,
    pub(crate) role: Role,
}

fn check_container_bits(bits: u32) -> Result<()> {
    if !(MIN_CONTAINER_BITS..=MAX_CONTAINER_BITS).contains(&bits) {
        return Err(invalid(format!(
            "container bit depth must lie in [{MIN_CONTAINER_BITS}, {MAX_CONTAINER_BITS}], got {bits}"
        )));
    }
    Ok(())
}

#[inline]
fn low_mask(bits: u32) -> u32 {
    (1u32 << bits) - 1
}

impl ImageTensor {
    /// A full-depth image.
    pub fn new(shape: Shape, codes: Vec<u16>, container_bits: u32) -> Result<Self> {
        shape.validate()?;
        check_container_bits(container_bits)?;
        if codes.len() != shape.len() {
            return Err(invalid(format!(
                "{} codes supplied for a {shape} image",
                codes.len()
            )));
        }
        let limit = 1u32 << container_bits;
        if let Some(pos) = codes.iter().position(|&c| u32::from(c) >= limit) {
            return Err(invalid(format!(
                "code {} at index {pos} does not fit in {container_bits} bits",
                codes[pos]
            )));
        }
        Ok(Self { shape, codes, container_bits, effective_bits: container_bits, role: Role::Full })
    }

    /// A quantized image. Every code must have its low `N - q` bits clear.
    pub fn quantized(
        shape: Shape,
        codes: Vec<u16>,
        container_bits: u32,
        effective_bits: u32,
    ) -> Result<Self> {
        Self::new(shape, codes, container_bits)?.into_quantized(effective_bits)
    }

    pub fn zeros(shape: Shape, container_bits: u32) -> Result<Self> {
        Self::new(shape, vec![0; shape.len()], container_bits)
    }

    /// Builds a full-depth image from `f(channel, row, col)`.
    pub fn from_fn(
        shape: Shape,
        container_bits: u32,
        mut f: impl FnMut(usize, usize, usize) -> u16,
    ) -> Result<Self> {
        let mut codes = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    codes.push(f(c, y, x));
                }
            }
        }
        Self::new(shape, codes, container_bits)
    }

    /// Reinterprets the codes as a `q`-bit quantized image.
    ///
    /// Fails with a contract violation when any code carries stale low bits.
    pub fn into_quantized(mut self, effective_bits: u32) -> Result<Self> {
        let n = self.container_bits;
        if effective_bits < 1 || effective_bits > n {
            return Err(invalid(format!("effective bits {effective_bits} outside [1, {n}]")));
        }
        let mask = low_mask(n - effective_bits);
        if let Some(pos) = self.codes.iter().position(|&c| u32::from(c) & mask != 0) {
            return Err(violation(format!(
                "code {} at index {pos} has nonzero bits below the top {effective_bits} of {n}",
                self.codes[pos]
            )));
        }
        self.effective_bits = effective_bits;
        self.role = if effective_bits == n { Role::Full } else { Role::Quantized };
        Ok(self)
    }

    /// Reinterprets the codes as a full-depth image (no change to the codes).
    pub fn into_full(mut self) -> Self {
        self.effective_bits = self.container_bits;
        self.role = Role::Full;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn into_codes(self) -> Vec<u16> {
        self.codes
    }

    pub fn container_bits(&self) -> u32 {
        self.container_bits
    }

    pub fn effective_bits(&self) -> u32 {
        self.effective_bits
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Largest representable code, `2^N - 1`.
    pub fn peak(&self) -> u32 {
        low_mask(self.container_bits)
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> u16 {
        self.codes[(channel * self.shape.height + row) * self.shape.width + col]
    }

    pub fn channel(&self, channel: usize) -> &[u16] {
        let n = self.shape.plane_len();
        &self.codes[channel * n..(channel + 1) * n]
    }

    /// Copies out a `height x width` window whose top-left corner is `(row, col)`.
    /// Role and depth metadata are preserved.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || row + height > self.height() || col + width > self.width() {
            return Err(invalid(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {} image",
                self.shape
            )));
        }
        let shape = Shape::new(height, width, self.channels());
        let mut codes = Vec::with_capacity(shape.len());
        for c in 0..self.channels() {
            for y in row..row + height {
                let start = (c * self.height() + y) * self.width() + col;
                codes.extend_from_slice(&self.codes[start..start + width]);
            }
        }
        Ok(self.with_codes(shape, codes))
    }

    /// Same metadata, different codes. Callers uphold the role invariants.
    pub(crate) fn with_codes(&self, shape: Shape, codes: Vec<u16>) -> Self {
        debug_assert_eq!(shape.len(), codes.len());
        Self {
            shape,
            codes,
            container_bits: self.container_bits,
            effective_bits: self.effective_bits,
            role: self.role,
        }
    }

    fn same_geometry(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(invalid(format!("shape mismatch: {} vs {}", self.shape, other.shape)));
        }
        if self.container_bits != other.container_bits {
            return Err(invalid(format!(
                "container depth mismatch: {} vs {} bits",
                self.container_bits, other.container_bits
            )));
        }
        Ok(())
    }
}

/// A binary raster: bit `plane_index` of every sample of some image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitplane {
    pub(crate) shape: Shape,
    pub(crate) bits: Vec<u8>,
    pub(crate) plane_index: u32,
}

impl Bitplane {
    pub fn new(shape: Shape, bits: Vec<u8>, plane_index: u32) -> Result<Self> {
        shape.validate()?;
        if bits.len() != shape.len() {
            return Err(invalid(format!("{} bits supplied for a {shape} plane", bits.len())));
        }
        if plane_index >= MAX_CONTAINER_BITS {
            return Err(invalid(format!("plane index {plane_index} exceeds 15")));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(invalid(format!("bitplane entry {} at index {pos} is not binary", bits[pos])));
        }
        Ok(Self { shape, bits, plane_index })
    }

    /// The all-zero plane.
    pub fn zeros(shape: Shape, plane_index: u32) -> Result<Self> {
        Self::new(shape, vec![0; shape.len()], plane_index)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn plane_index(&self) -> u32 {
        self.plane_index
    }

    /// Significance of a set bit, `2^p`.
    pub fn weight(&self) -> u32 {
        1 << self.plane_index
    }

    pub fn is_zero(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// The lost planes between a `q`-bit input and an `N`-bit target, most
/// significant first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecoveryRange {
    source_bits: u32,
    target_bits: u32,
}

impl RecoveryRange {
    pub fn new(source_bits: u32, target_bits: u32) -> Result<Self> {
        if source_bits < 1 || source_bits >= target_bits || target_bits > MAX_CONTAINER_BITS {
            return Err(invalid(format!(
                "recovery range requires 1 <= q < N <= 16, got q={source_bits} N={target_bits}"
            )));
        }
        Ok(Self { source_bits, target_bits })
    }

    pub fn source_bits(&self) -> u32 {
        self.source_bits
    }

    pub fn target_bits(&self) -> u32 {
        self.target_bits
    }

    /// Number of planes to restore, `N - q`.
    pub fn steps(&self) -> u32 {
        self.target_bits - self.source_bits
    }

    /// `[N-(q+1), ..., 0]`.
    pub fn plane_indices(&self) -> Vec<u32> {
        (0..self.steps()).rev().collect()
    }

    fn check_step(&self, k: u32) -> Result<()> {
        if k < 1 || k > self.steps() {
            return Err(invalid(format!("step {k} outside [1, {}]", self.steps())));
        }
        Ok(())
    }

    /// Plane restored at 1-based step `k`: `N - (q + k)`.
    pub fn plane_for_step(&self, k: u32) -> Result<u32> {
        self.check_step(k)?;
        Ok(self.target_bits - (self.source_bits + k))
    }

    /// Effective depth of the image fed to step `k`: `q + k - 1`.
    pub fn input_bits_for_step(&self, k: u32) -> Result<u32> {
        self.check_step(k)?;
        Ok(self.source_bits + k - 1)
    }
}

/// Zeroes the low `N - q` bits of every code: `floor(c / 2^(N-q)) * 2^(N-q)`.
pub fn quantize(img: &ImageTensor, q: u32) -> Result<ImageTensor> {
    let n = img.container_bits;
    if q < 1 || q > n {
        return Err(invalid(format!("quantization depth {q} outside [1, {n}]")));
    }
    match img.role {
        Role::Residual => return Err(invalid("cannot quantize a residual image")),
        Role::Quantized if img.effective_bits < q => {
            return Err(invalid(format!(
                "image has only {} effective bits, cannot quantize to {q}",
                img.effective_bits
            )))
        }
        _ => {}
    }
    let keep = !low_mask(n - q);
    let codes = img.codes.iter().map(|&c| (u32::from(c) & keep) as u16).collect();
    Ok(ImageTensor {
        shape: img.shape,
        codes,
        container_bits: n,
        effective_bits: q,
        role: if q == n { Role::Full } else { Role::Quantized },
    })
}

/// `original - quantized`, the bits lost to quantization.
pub fn residual(original: &ImageTensor, quantized: &ImageTensor) -> Result<ImageTensor> {
    original.same_geometry(quantized)?;
    let q = quantized.effective_bits;
    let limit = 1u32 << (original.container_bits - q);
    let mut codes = Vec::with_capacity(original.codes.len());
    for (i, (&o, &iq)) in original.codes.iter().zip(&quantized.codes).enumerate() {
        let diff = i32::from(o) - i32::from(iq);
        if diff < 0 || diff as u32 >= limit {
            return Err(violation(format!(
                "element {i}: {o} - {iq} is not a {q}-bit quantization residual"
            )));
        }
        codes.push(diff as u16);
    }
    Ok(ImageTensor {
        shape: original.shape,
        codes,
        container_bits: original.container_bits,
        effective_bits: q,
        role: Role::Residual,
    })
}

/// `quantized + residual`, the inverse of [`residual`].
pub fn add_residual(quantized: &ImageTensor, residual: &ImageTensor) -> Result<ImageTensor> {
    quantized.same_geometry(residual)?;
    if residual.role != Role::Residual || residual.effective_bits != quantized.effective_bits {
        return Err(invalid("residual does not pair with the quantized image"));
    }
    let codes = quantized.codes.iter().zip(&residual.codes).map(|(&a, &b)| a + b).collect();
    ImageTensor::new(quantized.shape, codes, quantized.container_bits)
}

/// Bit `p` of every code.
pub fn extract_bitplane(img: &ImageTensor, p: u32) -> Result<Bitplane> {
    if p >= img.container_bits {
        return Err(invalid(format!(
            "plane index {p} outside a {}-bit container",
            img.container_bits
        )));
    }
    let bits = img.codes.iter().map(|&c| ((c >> p) & 1) as u8).collect();
    Ok(Bitplane { shape: img.shape, bits, plane_index: p })
}

/// `sum_p 2^p * plane_p`. Absent planes contribute zero.
///
/// With `infer_effective_bits`, the run of absent or all-zero planes at the
/// least significant end is treated as quantization, so the result carries
/// `N - run` effective bits (at least one). Otherwise the result is full depth.
pub fn compose_bitplanes(
    planes: &[Bitplane],
    shape: Shape,
    container_bits: u32,
    infer_effective_bits: bool,
) -> Result<ImageTensor> {
    shape.validate()?;
    check_container_bits(container_bits)?;
    let mut seen = [false; MAX_CONTAINER_BITS as usize];
    for plane in planes {
        if plane.shape != shape {
            return Err(invalid(format!("plane shape {} differs from {shape}", plane.shape)));
        }
        if plane.plane_index >= container_bits {
            return Err(invalid(format!(
                "plane index {} outside a {container_bits}-bit container",
                plane.plane_index
            )));
        }
        let slot = &mut seen[plane.plane_index as usize];
        if *slot {
            return Err(invalid(format!("duplicate plane index {}", plane.plane_index)));
        }
        *slot = true;
    }
    let mut codes = vec![0u16; shape.len()];
    for plane in planes {
        let p = plane.plane_index;
        for (c, &b) in codes.iter_mut().zip(&plane.bits) {
            *c |= u16::from(b) << p;
        }
    }
    let img = ImageTensor::new(shape, codes, container_bits)?;
    if !infer_effective_bits {
        return Ok(img);
    }
    let mut present = [false; MAX_CONTAINER_BITS as usize];
    for plane in planes.iter().filter(|p| !p.is_zero()) {
        present[plane.plane_index as usize] = true;
    }
    let run = (0..container_bits).take_while(|&p| !present[p as usize]).count() as u32;
    let effective = (container_bits - run).max(1);
    img.into_quantized(effective)
}

/// Adds `2^p * plane` to an image missing plane `p`, raising its effective
/// depth by one. `p` must be the next missing plane, `N - (q + 1)`.
pub fn apply_bitplane(img: &ImageTensor, plane: &Bitplane) -> Result<ImageTensor> {
    if img.shape != plane.shape {
        return Err(invalid(format!("plane shape {} differs from image {}", plane.shape, img.shape)));
    }
    let n = img.container_bits;
    if img.role == Role::Residual || img.effective_bits >= n {
        return Err(invalid("image has no missing bitplane to fill"));
    }
    let expected = n - (img.effective_bits + 1);
    if plane.plane_index != expected {
        return Err(invalid(format!(
            "plane {} is not the next missing plane {expected} of a {}-bit image in {n} bits",
            plane.plane_index, img.effective_bits
        )));
    }
    let p = plane.plane_index;
    let mut codes = Vec::with_capacity(img.codes.len());
    for (i, (&c, &b)) in img.codes.iter().zip(&plane.bits).enumerate() {
        if (c >> p) & 1 != 0 {
            return Err(violation(format!("element {i} already has bit {p} set (code {c})")));
        }
        codes.push(c | (u16::from(b) << p));
    }
    let effective = img.effective_bits + 1;
    Ok(ImageTensor {
        shape: img.shape,
        codes,
        container_bits: n,
        effective_bits: effective,
        role: if effective == n { Role::Full } else { Role::Quantized },
    })
}
