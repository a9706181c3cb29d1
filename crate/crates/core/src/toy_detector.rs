//! A small analytic convolutional detector and the synthetic scenes it is
//! built for.
//!
//! Scenes are single-channel images of flat rectangles whose intensity
//! encodes the category, on a sparse dotted background. The network has
//! three 3x3 convolutions (stride 1, zero padding, ReLU):
//!
//! 1. intensity ramps `g * (x - t_k)`, each replicated [`RAMP_COPIES`] times;
//! 2. band scores that keep ramp `k` and subtract ramp `k + 1`, so exactly one
//!    category channel is active inside an object;
//! 3. a per-category pass-through.
//!
//! The first two layers also carry context channels that are positive
//! everywhere (around 3 to 4) and feed nothing but leak taps, the way most
//! activations of a trained network are nonzero yet irrelevant to a given
//! output. All taps that carry no signal hold tiny weights of alternating
//! sign, so the parameter tensors look like trained filters centred on zero
//! and a huge corrupted value leaks into neighbouring pixels and channels.
//!
//! The head thresholds a steep sigmoid per pixel and turns each 4-connected
//! component of a category into one box scored by its mean probability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault_model::{
    apply_fault_bits, classify_value, FaultDescriptor, FaultTarget, FloatWidth, LayerShapes,
    ShapeCatalog, ValueClass,
};
use crate::geometry::{nms, BBox, Detection};

pub const N_CATEGORIES: usize = 3;
/// Object intensity per category.
pub const CATEGORY_INTENSITY: [f32; N_CATEGORIES] = [4.0, 8.0, 16.0];
/// Ramp onset per category, halfway (geometrically) between intensities.
const RAMP_ONSET: [f32; N_CATEGORIES] = [2.0, 6.0, 12.0];
const RAMP_GAIN: f32 = 0.5;
/// Replicas of every ramp; a corrupted replica moves the band score by a
/// fraction of its effect.
pub const RAMP_COPIES: usize = 4;
const BAND_KEEP: [f32; N_CATEGORIES] = [1.0, 1.0, 0.5];
const BAND_SUPPRESS: f32 = 3.9;
const PASS_GAIN: f32 = 0.75;
const CONTEXT_0: usize = 4;
const CONTEXT_1: usize = 3;
const CONTEXT_0_GAIN: f32 = 0.05;
const CONTEXT_0_BIAS: f32 = 3.0;
const CONTEXT_1_GAIN: f32 = 0.125;
const CONTEXT_1_BIAS: f32 = 2.0;
/// Magnitude of the signal-free taps.
pub const LEAK: f32 = 1e-8;
const KERNEL: usize = 3;

/// Rectified 2-D convolution with a square kernel, unit stride and
/// zero padding that preserves the spatial size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][row][col]`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    fn zeros(in_channels: usize, out_channels: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            weights: vec![0.0; out_channels * in_channels * KERNEL * KERNEL],
            bias: vec![0.0; out_channels],
        }
    }

    fn widx(&self, o: usize, i: usize, r: usize, c: usize) -> usize {
        ((o * self.in_channels + i) * KERNEL + r) * KERNEL + c
    }

    pub fn weight(&self, o: usize, i: usize, r: usize, c: usize) -> f32 {
        self.weights[self.widx(o, i, r, c)]
    }

    fn set(&mut self, o: usize, i: usize, r: usize, c: usize, v: f32) {
        let k = self.widx(o, i, r, c);
        self.weights[k] = v;
    }

    /// Fills every tap with alternating-sign leak weights.
    fn fill_leak(&mut self) {
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                for r in 0..KERNEL {
                    for c in 0..KERNEL {
                        let sign = if (o + i + r + c) % 2 == 0 { 1.0 } else { -1.0 };
                        self.set(o, i, r, c, sign * LEAK);
                    }
                }
            }
        }
    }

    fn forward(&self, input: &[f32], width: usize, height: usize, out: &mut [f32]) {
        let plane = width * height;
        for o in 0..self.out_channels {
            let dst = &mut out[o * plane..(o + 1) * plane];
            dst.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let src = &input[i * plane..(i + 1) * plane];
                for kr in 0..KERNEL {
                    for kc in 0..KERNEL {
                        let w = self.weight(o, i, kr, kc);
                        let (dr, dc) = (kr as isize - 1, kc as isize - 1);
                        for y in 0..height {
                            let sy = y as isize + dr;
                            if sy < 0 || sy >= height as isize {
                                continue;
                            }
                            let srow = &src[sy as usize * width..(sy as usize + 1) * width];
                            let drow = &mut dst[y * width..(y + 1) * width];
                            let (x0, x1) = if dc < 0 { (1, width) } else { (0, width - dc as usize) };
                            for x in x0..x1 {
                                drow[x] += w * srow[(x as isize + dc) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Rectifier that lets NaN through so it stays observable.
fn relu(v: f32) -> f32 {
    if v > 0.0 || v.is_nan() {
        v
    } else {
        0.0
    }
}

/// Per-pixel scoring and box extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeHead {
    /// Activation at which the pixel probability is one half.
    pub activation_midpoint: f32,
    pub logit_gain: f64,
    pub confidence_threshold: f32,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for DecodeHead {
    fn default() -> Self {
        DecodeHead {
            activation_midpoint: 0.3,
            logit_gain: 200.0,
            confidence_threshold: 0.5,
            nms_iou: 0.5,
            max_detections: 1000,
        }
    }
}

impl DecodeHead {
    pub fn probability(&self, activation: f32) -> f32 {
        let logit = self.logit_gain * (activation as f64 - self.activation_midpoint as f64);
        (1.0 / (1.0 + (-logit).exp())) as f32
    }

    /// Boxes from the final activation maps `[category][row][col]`.
    pub fn decode(&self, maps: &[f32], width: usize, height: usize) -> Vec<Detection> {
        let plane = width * height;
        let mut dets = Vec::new();
        let mut seen = vec![false; plane];
        let mut stack = Vec::new();
        for cat in 0..maps.len() / plane {
            let prob: Vec<f32> = maps[cat * plane..(cat + 1) * plane]
                .iter()
                .map(|&v| self.probability(v))
                .collect();
            seen.fill(false);
            for start in 0..plane {
                if seen[start] || !(prob[start] > self.confidence_threshold) {
                    continue;
                }
                seen[start] = true;
                stack.push(start);
                let (mut r0, mut r1, mut c0, mut c1) = (height, 0, width, 0);
                let (mut sum, mut n) = (0.0f64, 0usize);
                while let Some(p) = stack.pop() {
                    let (r, c) = (p / width, p % width);
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                    sum += prob[p] as f64;
                    n += 1;
                    let mut visit = |q: usize| {
                        if !seen[q] && prob[q] > self.confidence_threshold {
                            seen[q] = true;
                            stack.push(q);
                        }
                    };
                    if r > 0 {
                        visit(p - width);
                    }
                    if r + 1 < height {
                        visit(p + width);
                    }
                    if c > 0 {
                        visit(p - 1);
                    }
                    if c + 1 < width {
                        visit(p + 1);
                    }
                }
                let bbox = BBox::new(c0 as f64, r0 as f64, (c1 + 1) as f64, (r1 + 1) as f64);
                dets.push(Detection::new(bbox, cat as u32, sum / n as f64));
            }
        }
        nms(&dets, self.nms_iou, self.max_detections)
            .into_iter()
            .map(|d| Detection {
                bbox: d.bbox.clip(width as f64, height as f64),
                ..d
            })
            .collect()
    }
}

/// The analytic detector: conv layers plus decode head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub layers: Vec<ConvLayer>,
    pub head: DecodeHead,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self::analytic()
    }
}

impl DetectorModel {
    pub fn analytic() -> Self {
        let ramps = N_CATEGORIES * RAMP_COPIES;
        let ramp_channel = |k: usize, copy: usize| k * RAMP_COPIES + copy;

        let mut l0 = ConvLayer::zeros(1, ramps + CONTEXT_0);
        l0.fill_leak();
        for k in 0..N_CATEGORIES {
            for copy in 0..RAMP_COPIES {
                let o = ramp_channel(k, copy);
                l0.set(o, 0, 1, 1, RAMP_GAIN);
                l0.bias[o] = -RAMP_GAIN * RAMP_ONSET[k];
            }
        }
        for o in ramps..ramps + CONTEXT_0 {
            l0.set(o, 0, 1, 1, CONTEXT_0_GAIN);
            l0.bias[o] = CONTEXT_0_BIAS;
        }

        let mut l1 = ConvLayer::zeros(ramps + CONTEXT_0, N_CATEGORIES + CONTEXT_1);
        l1.fill_leak();
        for o in N_CATEGORIES..N_CATEGORIES + CONTEXT_1 {
            for i in ramps..ramps + CONTEXT_0 {
                l1.set(o, i, 1, 1, CONTEXT_1_GAIN);
            }
            l1.bias[o] = CONTEXT_1_BIAS;
        }
        let share = 1.0 / RAMP_COPIES as f32;
        for k in 0..N_CATEGORIES {
            for copy in 0..RAMP_COPIES {
                l1.set(k, ramp_channel(k, copy), 1, 1, BAND_KEEP[k] * share);
                if k + 1 < N_CATEGORIES {
                    l1.set(k, ramp_channel(k + 1, copy), 1, 1, -BAND_SUPPRESS * share);
                }
            }
        }

        let mut l2 = ConvLayer::zeros(N_CATEGORIES + CONTEXT_1, N_CATEGORIES);
        l2.fill_leak();
        for k in 0..N_CATEGORIES {
            l2.set(k, k, 1, 1, PASS_GAIN);
        }

        DetectorModel {
            layers: vec![l0, l1, l2],
            head: DecodeHead::default(),
        }
    }

    pub fn shape_catalog(&self, width: usize, height: usize) -> ShapeCatalog {
        ShapeCatalog {
            layers: self
                .layers
                .iter()
                .map(|l| LayerShapes {
                    neuron: [l.out_channels, height, width],
                    weight: [l.out_channels, l.in_channels, KERNEL, KERNEL],
                })
                .collect(),
        }
    }

    /// Copy with one weight corrupted. Neuron faults leave the model as is.
    pub fn with_fault(&self, fault: &FaultDescriptor) -> Result<DetectorModel> {
        let mut m = self.clone();
        if fault.target == FaultTarget::Weight {
            let layer = m
                .layers
                .get_mut(fault.layer)
                .ok_or_else(|| Error::arg(format!("no conv layer {}", fault.layer)))?;
            let [o, i, r, c] = weight_coords(&fault.coords)?;
            if o >= layer.out_channels || i >= layer.in_channels || r >= KERNEL || c >= KERNEL {
                return Err(Error::arg(format!(
                    "weight coords {:?} outside layer {}",
                    fault.coords, fault.layer
                )));
            }
            let k = layer.widx(o, i, r, c);
            layer.weights[k] = corrupt(layer.weights[k], fault)?;
        }
        Ok(m)
    }
}

fn weight_coords(coords: &[usize]) -> Result<[usize; 4]> {
    coords
        .try_into()
        .map_err(|_| Error::arg(format!("weight faults need 4 coords, got {}", coords.len())))
}

fn corrupt(value: f32, fault: &FaultDescriptor) -> Result<f32> {
    Ok(f32::from_bits(apply_fault_bits(
        value.to_bits(),
        FloatWidth::F32,
        fault.bit,
        fault.mode,
    )?))
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace {
    pub detections: Vec<Detection>,
    pub nan_seen: bool,
    pub inf_seen: bool,
    /// Post-activation (and post-fault) tensor of every layer, `[c][row][col]`.
    pub activations: Vec<Vec<f32>>,
}

impl InferenceTrace {
    /// Detections compared bit for bit (boxes, labels, confidences).
    pub fn same_detections(&self, other: &InferenceTrace) -> bool {
        self.detections.len() == other.detections.len()
            && self.detections.iter().zip(&other.detections).all(|(a, b)| {
                a.category == b.category
                    && a.confidence.to_bits() == b.confidence.to_bits()
                    && [a.bbox.x1, a.bbox.y1, a.bbox.x2, a.bbox.y2]
                        .iter()
                        .zip([b.bbox.x1, b.bbox.y1, b.bbox.x2, b.bbox.y2])
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Runs the detector on a scene.
///
/// A weight fault corrupts a private copy of the model before the pass; a
/// neuron fault overwrites one activation right after its layer's rectifier.
/// To reuse a weight-corrupted model across frames, build it once with
/// [`DetectorModel::with_fault`] and pass `None` here.
pub fn infer(model: &DetectorModel, scene: &Scene, fault: Option<&FaultDescriptor>) -> Result<InferenceTrace> {
    let (w, h) = (scene.width, scene.height);
    let catalog = model.shape_catalog(w, h);
    let mut neuron_fault = None;
    let owned;
    let model = match fault {
        Some(f) => {
            f.validate(&catalog)?;
            match f.target {
                FaultTarget::Weight => {
                    owned = model.with_fault(f)?;
                    &owned
                }
                FaultTarget::Neuron => {
                    neuron_fault = Some(f);
                    model
                }
            }
        }
        None => model,
    };

    let plane = w * h;
    let mut nan_seen = false;
    let mut inf_seen = false;
    let mut note = |v: f32| match classify_value(v) {
        ValueClass::Nan => nan_seen = true,
        ValueClass::Inf => inf_seen = true,
        ValueClass::Regular => {}
    };

    let mut activations: Vec<Vec<f32>> = Vec::with_capacity(model.layers.len());
    for (li, layer) in model.layers.iter().enumerate() {
        let input: &[f32] = match li {
            0 => &scene.pixels,
            _ => &activations[li - 1],
        };
        let mut out = vec![0.0f32; layer.out_channels * plane];
        layer.forward(input, w, h, &mut out);
        for v in out.iter_mut() {
            note(*v);
            *v = relu(*v);
        }
        if let Some(f) = neuron_fault.filter(|f| f.layer == li) {
            let idx = (f.coords[0] * h + f.coords[1]) * w + f.coords[2];
            out[idx] = corrupt(out[idx], f)?;
            note(out[idx]);
        }
        activations.push(out);
    }
    let last = activations.last().map(Vec::as_slice).unwrap_or(&[]);
    let detections = model.head.decode(last, w, h);
    Ok(InferenceTrace {
        detections,
        nan_seen,
        inf_seen,
        activations,
    })
}

/// An object drawn into a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub bbox: BBox,
    pub category: u32,
    pub intensity: f32,
}

/// Single-channel image with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub objects: Vec<SceneObject>,
    /// Row-major intensities.
    pub pixels: Vec<f32>,
}

impl Scene {
    pub fn ground_truth(&self) -> Vec<Detection> {
        self.objects
            .iter()
            .map(|o| Detection::ground_truth(o.bbox, o.category))
            .collect()
    }
}

/// Parameters of [`generate_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive object count range.
    pub objects: (usize, usize),
    /// Inclusive side length range in pixels.
    pub size: (usize, usize),
    /// Empty pixels kept between objects.
    pub gap: usize,
    /// Fraction of background pixels carrying a dot.
    pub background_density: f64,
    /// Dot intensity range.
    pub background_range: (f32, f32),
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            objects: (1, 4),
            size: (8, 16),
            gap: 2,
            background_density: 0.35,
            background_range: (0.2, 1.0),
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 200;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0
            && self.height > 0
            && self.objects.0 <= self.objects.1
            && self.size.0 >= 2
            && self.size.0 <= self.size.1
            && self.size.1 <= self.width.min(self.height)
            && (0.0..=1.0).contains(&self.background_density)
            && self.background_range.0 >= 0.0
            && self.background_range.0 <= self.background_range.1
            && self.background_range.1 < RAMP_ONSET[0];
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("invalid scene spec {self:?}")))
        }
    }

    fn background<R: Rng>(&self, rng: &mut R) -> Vec<f32> {
        let (lo, hi) = self.background_range;
        (0..self.width * self.height)
            .map(|_| {
                if rng.gen_bool(self.background_density) {
                    if lo == hi {
                        lo
                    } else {
                        rng.gen_range(lo..=hi)
                    }
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn paint(pixels: &mut [f32], width: usize, objects: &[SceneObject]) {
    for o in objects {
        for r in o.bbox.y1 as usize..o.bbox.y2 as usize {
            for c in o.bbox.x1 as usize..o.bbox.x2 as usize {
                pixels[r * width + c] = o.intensity;
            }
        }
    }
}

fn object(x: usize, y: usize, w: usize, h: usize, category: usize) -> SceneObject {
    SceneObject {
        bbox: BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64),
        category: category as u32,
        intensity: CATEGORY_INTENSITY[category],
    }
}

/// Draws a seeded scene of non-touching rectangles on a dotted background.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(spec.objects.0..=spec.objects.1);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    let g = spec.gap as f64;
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = rng.gen_range(spec.size.0..=spec.size.1);
            let h = rng.gen_range(spec.size.0..=spec.size.1);
            let x = rng.gen_range(0..=spec.width - w);
            let y = rng.gen_range(0..=spec.height - h);
            let cand = object(x, y, w, h, rng.gen_range(0..N_CATEGORIES));
            let clear = objects.iter().all(|o| {
                let b = &o.bbox;
                let c = &cand.bbox;
                c.x2 + g <= b.x1 || b.x2 + g <= c.x1 || c.y2 + g <= b.y1 || b.y2 + g <= c.y1
            });
            if clear {
                objects.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Scene(format!(
                "could not place object {} of {count} after {PLACEMENT_ATTEMPTS} attempts",
                objects.len() + 1
            )));
        }
    }
    let mut pixels = spec.background(&mut rng);
    paint(&mut pixels, spec.width, &objects);
    Ok(Scene {
        width: spec.width,
        height: spec.height,
        objects,
        pixels,
    })
}

/// Seeded frame sequence: objects glide horizontally in separate lanes and
/// bounce off the borders over a fixed background.
pub fn generate_sequence(spec: &SceneSpec, n_frames: usize, seed: u64) -> Result<Vec<Scene>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lane = spec.size.1 + spec.gap;
    let lanes = spec.height / lane;
    if lanes == 0 {
        return Err(Error::Scene(format!(
            "{}px tall frames cannot hold a {lane}px lane",
            spec.height
        )));
    }
    let count = rng.gen_range(spec.objects.0..=spec.objects.1).min(lanes);
    struct Mover {
        x: i64,
        y: usize,
        w: usize,
        h: usize,
        vx: i64,
        category: usize,
    }
    let mut movers: Vec<Mover> = (0..count)
        .map(|i| {
            let w = rng.gen_range(spec.size.0..=spec.size.1);
            let h = rng.gen_range(spec.size.0..=spec.size.1);
            let y = i * lane + rng.gen_range(0..=lane - spec.gap - h);
            let speed = rng.gen_range(1..=3);
            Mover {
                x: rng.gen_range(0..=(spec.width - w)) as i64,
                y,
                w,
                h,
                vx: if rng.gen_bool(0.5) { speed } else { -speed },
                category: rng.gen_range(0..N_CATEGORIES),
            }
        })
        .collect();
    let background = spec.background(&mut rng);

    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let objects: Vec<SceneObject> = movers
            .iter()
            .map(|m| object(m.x as usize, m.y, m.w, m.h, m.category))
            .collect();
        let mut pixels = background.clone();
        paint(&mut pixels, spec.width, &objects);
        frames.push(Scene {
            width: spec.width,
            height: spec.height,
            objects,
            pixels,
        });
        for m in &mut movers {
            let max_x = (spec.width - m.w) as i64;
            let mut nx = m.x + m.vx;
            if nx < 0 || nx > max_x {
                m.vx = -m.vx;
                nx = (m.x + m.vx).clamp(0, max_x);
            }
            m.x = nx;
        }
    }
    Ok(frames)
}
