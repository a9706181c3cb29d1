//! Bit-level fault models for IEEE-754 binary32 and bfloat16 values.
//!
//! Corruption always operates on the raw bit pattern, so NaN payloads and
//! signed zeros survive a flip/unflip round trip unchanged. Bit 31 is the
//! sign, bits 30..=23 the exponent (30 is its MSB) and 22..=0 the mantissa.
//! bfloat16 shares the exponent width: sign 15, exponent 14..=7.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage format of the corrupted value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FloatWidth {
    F32,
    Bf16,
}

impl FloatWidth {
    pub const fn bits(self) -> u8 {
        match self {
            FloatWidth::F32 => 32,
            FloatWidth::Bf16 => 16,
        }
    }

    pub const fn mantissa_bits(self) -> u8 {
        match self {
            FloatWidth::F32 => 23,
            FloatWidth::Bf16 => 7,
        }
    }

    pub const fn exponent_bits(self) -> u8 {
        8
    }

    const fn exponent_mask(self) -> u32 {
        0xff << self.mantissa_bits()
    }

    const fn mantissa_mask(self) -> u32 {
        (1 << self.mantissa_bits()) - 1
    }
}

/// Index of a single bit inside a float's storage word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BitPosition(u8);

impl BitPosition {
    pub const SIGN: BitPosition = BitPosition(31);
    pub const EXPONENT_MSB: BitPosition = BitPosition(30);

    /// A bit position in a 32-bit word.
    pub fn new(index: u8) -> Result<Self> {
        Self::for_width(index, FloatWidth::F32)
    }

    pub fn for_width(index: u8, width: FloatWidth) -> Result<Self> {
        if index >= width.bits() {
            return Err(Error::arg(format!(
                "bit index {index} out of range for a {}-bit value",
                width.bits()
            )));
        }
        Ok(BitPosition(index))
    }

    pub const fn index(self) -> u8 {
        self.0
    }

    pub fn is_sign(self, width: FloatWidth) -> bool {
        self.0 == width.bits() - 1
    }

    pub fn is_exponent(self, width: FloatWidth) -> bool {
        (width.mantissa_bits()..width.bits() - 1).contains(&self.0)
    }

    pub fn is_mantissa(self, width: FloatWidth) -> bool {
        self.0 < width.mantissa_bits()
    }
}

impl TryFrom<u8> for BitPosition {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        BitPosition::new(value)
    }
}

impl From<BitPosition> for u8 {
    fn from(value: BitPosition) -> Self {
        value.0
    }
}

impl fmt::Display for BitPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How the targeted bit is corrupted.
///
/// A transient flip affects a single inference; stuck-at faults persist for
/// every inference of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultMode {
    #[serde(rename = "transient_flip")]
    TransientFlip,
    #[serde(rename = "stuck_at_0")]
    StuckAt0,
    #[serde(rename = "stuck_at_1")]
    StuckAt1,
}

impl FaultMode {
    pub fn is_permanent(self) -> bool {
        !matches!(self, FaultMode::TransientFlip)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FaultMode::TransientFlip => "transient_flip",
            FaultMode::StuckAt0 => "stuck_at_0",
            FaultMode::StuckAt1 => "stuck_at_1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    /// An intermediate activation written by a convolution layer.
    Neuron,
    /// A stored convolution filter parameter.
    Weight,
}

impl FaultTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultTarget::Neuron => "neuron",
            FaultTarget::Weight => "weight",
        }
    }
}

/// Where and how a single-bit fault is injected.
///
/// `coords` is `(channel, row, col)` for neurons and
/// `(filter, channel, row, col)` for weights.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultDescriptor {
    pub target: FaultTarget,
    pub layer: usize,
    pub coords: Vec<usize>,
    pub bit: BitPosition,
    pub mode: FaultMode,
}

impl FaultDescriptor {
    /// Checks the descriptor against a model's shape catalog.
    pub fn validate(&self, catalog: &ShapeCatalog) -> Result<()> {
        let layer = catalog.layers.get(self.layer).ok_or_else(|| {
            Error::arg(format!(
                "layer {} out of range ({} conv layers)",
                self.layer,
                catalog.layers.len()
            ))
        })?;
        let shape: &[usize] = match self.target {
            FaultTarget::Neuron => &layer.neuron,
            FaultTarget::Weight => &layer.weight,
        };
        if self.coords.len() != shape.len() {
            return Err(Error::arg(format!(
                "{} coords need {} components, got {}",
                self.target.as_str(),
                shape.len(),
                self.coords.len()
            )));
        }
        if let Some((axis, (&c, &n))) = self
            .coords
            .iter()
            .zip(shape)
            .enumerate()
            .find(|(_, (c, n))| c >= n)
        {
            return Err(Error::arg(format!(
                "coordinate {c} on axis {axis} outside extent {n} of layer {}",
                self.layer
            )));
        }
        Ok(())
    }

    /// Colon-joined coordinates, as written in CSV reports.
    pub fn coords_label(&self) -> String {
        self.coords
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(":")
    }
}

/// Tensor shapes of one convolution layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShapes {
    /// Output activation shape `[channels, height, width]`.
    pub neuron: [usize; 3],
    /// Filter shape `[filters, channels, kernel_h, kernel_w]`.
    pub weight: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeCatalog {
    pub layers: Vec<LayerShapes>,
}

/// Which bits `sample_fault` draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitPolicy {
    #[serde(rename = "all_32")]
    All32,
    #[serde(rename = "exponent_only")]
    ExponentOnly,
    #[serde(rename = "mantissa_only")]
    MantissaOnly,
}

impl BitPolicy {
    pub fn bit_range(self) -> std::ops::RangeInclusive<u8> {
        match self {
            BitPolicy::All32 => 0..=31,
            BitPolicy::ExponentOnly => 23..=30,
            BitPolicy::MantissaOnly => 0..=22,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueClass {
    Regular,
    Inf,
    Nan,
}

/// Corrupts one bit of a raw storage word.
pub fn apply_fault_bits(
    pattern: u32,
    width: FloatWidth,
    bit: BitPosition,
    mode: FaultMode,
) -> Result<u32> {
    if bit.index() >= width.bits() {
        return Err(Error::arg(format!(
            "bit index {} out of range for a {}-bit value",
            bit.index(),
            width.bits()
        )));
    }
    let mask = 1u32 << bit.index();
    Ok(match mode {
        FaultMode::TransientFlip => pattern ^ mask,
        FaultMode::StuckAt0 => pattern & !mask,
        FaultMode::StuckAt1 => pattern | mask,
    })
}

/// Corrupts one bit of a binary32 value and reinterprets the result.
///
/// NaN and infinities produced by the corruption are returned as-is.
pub fn apply_fault(value: f32, bit: BitPosition, mode: FaultMode) -> f32 {
    let mask = 1u32 << bit.index();
    let bits = value.to_bits();
    f32::from_bits(match mode {
        FaultMode::TransientFlip => bits ^ mask,
        FaultMode::StuckAt0 => bits & !mask,
        FaultMode::StuckAt1 => bits | mask,
    })
}

/// Corrupts one bit of a bfloat16 storage word.
pub fn apply_fault_bf16(pattern: u16, bit: BitPosition, mode: FaultMode) -> Result<u16> {
    apply_fault_bits(pattern as u32, FloatWidth::Bf16, bit, mode).map(|p| p as u16)
}

pub fn classify_bits(pattern: u32, width: FloatWidth) -> ValueClass {
    let exp_mask = width.exponent_mask();
    if pattern & exp_mask != exp_mask {
        ValueClass::Regular
    } else if pattern & width.mantissa_mask() == 0 {
        ValueClass::Inf
    } else {
        ValueClass::Nan
    }
}

/// NaN/Inf detectability of a value. Zeros and subnormals are regular.
pub fn classify_value(value: f32) -> ValueClass {
    classify_bits(value.to_bits(), FloatWidth::F32)
}

/// Draws a fault uniformly over layers, then coordinates, then bits.
pub fn sample_fault_with<R: Rng + ?Sized>(
    rng: &mut R,
    catalog: &ShapeCatalog,
    target: FaultTarget,
    policy: BitPolicy,
    mode: FaultMode,
) -> Result<FaultDescriptor> {
    if catalog.layers.is_empty() {
        return Err(Error::arg("shape catalog is empty"));
    }
    let layer = rng.gen_range(0..catalog.layers.len());
    let shape: &[usize] = match target {
        FaultTarget::Neuron => &catalog.layers[layer].neuron,
        FaultTarget::Weight => &catalog.layers[layer].weight,
    };
    if shape.contains(&0) {
        return Err(Error::arg(format!("layer {layer} has an empty tensor")));
    }
    let coords = shape.iter().map(|&n| rng.gen_range(0..n)).collect();
    let bit = BitPosition(rng.gen_range(policy.bit_range()));
    Ok(FaultDescriptor {
        target,
        layer,
        coords,
        bit,
        mode,
    })
}

/// Seeded variant of [`sample_fault_with`]; identical seeds give identical
/// descriptors.
pub fn sample_fault(
    catalog: &ShapeCatalog,
    target: FaultTarget,
    policy: BitPolicy,
    mode: FaultMode,
    rng_seed: u64,
) -> Result<FaultDescriptor> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_fault_with(&mut rng, catalog, target, policy, mode)
}

/// Share of uniformly drawn 32-bit positions that fall in the exponent.
pub const EXPONENT_SHARE: f64 = 8.0 / 32.0;

/// Converts a rate measured with exponent-only injections into the rate
/// expected under uniform sampling over all 32 bits.
///
/// Only the 8/32 sampling share is applied. Mantissa bits and 1->0
/// directions are assumed to contribute nothing, which is why this holds
/// for stuck-at-1 exponent campaigns.
pub fn rescale_rate(rate_exponent_only: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&rate_exponent_only));
    rate_exponent_only * EXPONENT_SHARE
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bit(i: u8) -> BitPosition {
        BitPosition::new(i).unwrap()
    }

    #[test]
    fn flips_match_decoded_values() {
        assert_eq!(apply_fault(1.0, bit(31), FaultMode::TransientFlip), -1.0);
        assert_eq!(
            apply_fault(1.0, bit(30), FaultMode::TransientFlip),
            f32::INFINITY
        );
        assert_eq!(apply_fault(1.0, bit(23), FaultMode::TransientFlip), 0.5);
        // -2.0 = 0xC0000000; clearing bit 30 leaves 0x80000000.
        let cleared = apply_fault(-2.0, bit(30), FaultMode::StuckAt0);
        assert_eq!(cleared.to_bits(), 0x8000_0000);
        assert_eq!(apply_fault(-2.0, bit(31), FaultMode::StuckAt0), 2.0);
        assert_eq!(apply_fault(-2.0, bit(30), FaultMode::StuckAt1), -2.0);
    }

    #[test]
    fn out_of_range_bits_are_rejected() {
        assert!(BitPosition::new(32).is_err());
        assert!(BitPosition::for_width(16, FloatWidth::Bf16).is_err());
        let b = bit(20);
        assert!(apply_fault_bf16(0x3f80, b, FaultMode::TransientFlip).is_err());
        assert!(serde_json::from_str::<BitPosition>("40").is_err());
    }

    #[test]
    fn classification() {
        assert_eq!(classify_value(3.75), ValueClass::Regular);
        assert_eq!(classify_value(0.0), ValueClass::Regular);
        assert_eq!(classify_value(f32::from_bits(1)), ValueClass::Regular);
        let inf = apply_fault(1.0, bit(30), FaultMode::TransientFlip);
        assert_eq!(classify_value(inf), ValueClass::Inf);
        assert_eq!(classify_value(f32::from_bits(0x7f80_0001)), ValueClass::Nan);
        assert_eq!(classify_value(f32::from_bits(0xff80_0000)), ValueClass::Inf);
    }

    #[test]
    fn bf16_shares_exponent_layout() {
        // 1.0 in bfloat16 is 0x3F80; flipping the exponent MSB gives +Inf.
        let b = BitPosition::for_width(14, FloatWidth::Bf16).unwrap();
        let p = apply_fault_bf16(0x3f80, b, FaultMode::TransientFlip).unwrap();
        assert_eq!(p, 0x7f80);
        assert_eq!(classify_bits(p as u32, FloatWidth::Bf16), ValueClass::Inf);
        assert_eq!(
            classify_bits(0x7f81, FloatWidth::Bf16),
            ValueClass::Nan
        );
        assert!(b.is_exponent(FloatWidth::Bf16));
        assert!(BitPosition::for_width(15, FloatWidth::Bf16)
            .unwrap()
            .is_sign(FloatWidth::Bf16));
    }

    #[test]
    fn bit_regions() {
        assert!(bit(31).is_sign(FloatWidth::F32));
        assert!(bit(30).is_exponent(FloatWidth::F32));
        assert!(bit(23).is_exponent(FloatWidth::F32));
        assert!(bit(22).is_mantissa(FloatWidth::F32));
        assert!(!bit(22).is_exponent(FloatWidth::F32));
    }

    #[test]
    fn rescale_uses_exponent_share() {
        assert_eq!(rescale_rate(0.96), 0.24);
        assert_eq!(rescale_rate(0.0), 0.0);
        assert_eq!(rescale_rate(1.0), 0.25);
    }

    fn catalog() -> ShapeCatalog {
        ShapeCatalog {
            layers: vec![
                LayerShapes {
                    neuron: [4, 8, 8],
                    weight: [4, 1, 3, 3],
                },
                LayerShapes {
                    neuron: [2, 8, 8],
                    weight: [2, 4, 3, 3],
                },
            ],
        }
    }

    #[test]
    fn sampling_is_deterministic_and_in_bounds() {
        let cat = catalog();
        for seed in 0..200 {
            let a = sample_fault(
                &cat,
                FaultTarget::Weight,
                BitPolicy::ExponentOnly,
                FaultMode::StuckAt1,
                seed,
            )
            .unwrap();
            let b = sample_fault(
                &cat,
                FaultTarget::Weight,
                BitPolicy::ExponentOnly,
                FaultMode::StuckAt1,
                seed,
            )
            .unwrap();
            assert_eq!(a, b);
            assert!((23..=30).contains(&a.bit.index()));
            a.validate(&cat).unwrap();
        }
    }

    #[test]
    fn empty_catalog_is_an_error() {
        let empty = ShapeCatalog { layers: vec![] };
        assert!(sample_fault(
            &empty,
            FaultTarget::Neuron,
            BitPolicy::All32,
            FaultMode::TransientFlip,
            1
        )
        .is_err());
    }

    #[test]
    fn validate_rejects_bad_coords() {
        let cat = catalog();
        let mut f = FaultDescriptor {
            target: FaultTarget::Neuron,
            layer: 1,
            coords: vec![1, 7, 7],
            bit: bit(30),
            mode: FaultMode::TransientFlip,
        };
        f.validate(&cat).unwrap();
        f.coords = vec![2, 0, 0];
        assert!(f.validate(&cat).is_err());
        f.coords = vec![0, 0];
        assert!(f.validate(&cat).is_err());
        f.coords = vec![0, 0, 0];
        f.layer = 2;
        assert!(f.validate(&cat).is_err());
    }

    #[test]
    fn descriptor_json_shape() {
        let f = FaultDescriptor {
            target: FaultTarget::Weight,
            layer: 2,
            coords: vec![0, 1, 2, 2],
            bit: bit(30),
            mode: FaultMode::StuckAt1,
        };
        let v = serde_json::to_value(&f).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "target": "weight", "layer": 2, "coords": [0, 1, 2, 2],
                "bit": 30, "mode": "stuck_at_1"
            })
        );
        let back: FaultDescriptor = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }
}
