//! Procedural stick-figure samples: posed joints, rendered grayscale images,
//! Gaussian ground-truth heatmaps, and the train-time augmentation recipe.
//!
//! Coordinates are heatmap pixels (x right, y down, pixel centers on the
//! integer grid). The image runs at `stride` times the map resolution; a map
//! coordinate x corresponds to image coordinate `x * stride + (stride-1)/2`,
//! which keeps horizontal flips of the image and of the joints aligned.

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::skeleton::Skeleton;
use crate::tensor::Tensor;
use rand::Rng;

/// One training/eval example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Grayscale image in [0,1], shape [1, H_img, W_img].
    pub image: Tensor,
    /// Per-joint (x, y) in heatmap pixels.
    pub joints: Vec<(f64, f64)>,
    /// False when the joint lies under an occluder (ground truth is kept).
    pub visible: Vec<bool>,
    /// Shape [K, H, W]; Gaussian bump of amplitude 1 per joint.
    pub gt_heatmaps: Tensor,
    /// Head segment length (neck to head top), heatmap pixels.
    pub head_len: f64,
    /// Shoulder-midpoint to hip-midpoint distance, heatmap pixels.
    pub torso_len: f64,
}

impl Sample {
    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn map_size(&self) -> (usize, usize) {
        (self.gt_heatmaps.shape()[1], self.gt_heatmaps.shape()[2])
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }

    pub fn stride(&self) -> usize {
        self.image.shape()[1] / self.gt_heatmaps.shape()[1]
    }
}

/// Generator knobs. The canonical figure is designed for a 32x32 map and
/// scales with `map_h`/`map_w`.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub map_h: usize,
    pub map_w: usize,
    /// Image resolution multiplier (image is stride * map).
    pub stride: usize,
    /// Ground-truth Gaussian width, heatmap px.
    pub sigma: f64,
    /// Multiplier on every bone's angle range; 0 freezes the canonical pose.
    pub angle_scale: f64,
    /// Relative bone length jitter (0.1 = +-10%).
    pub length_jitter: f64,
    /// Figure center jitter, heatmap px.
    pub center_jitter: f64,
    /// Global multiplier on bone lengths.
    pub figure_scale: f64,
    /// Limb half-thickness is thickness/2 image px.
    pub thickness: f64,
    /// Per-limb draw intensity range.
    pub intensity: (f64, f64),
    pub occluders: bool,
    pub max_occluders: usize,
    pub occluder_intensity: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            map_h: 32,
            map_w: 32,
            stride: 2,
            sigma: 1.0,
            angle_scale: 1.0,
            length_jitter: 0.1,
            center_jitter: 1.5,
            figure_scale: 1.0,
            thickness: 2.2,
            intensity: (0.55, 1.0),
            occluders: true,
            max_occluders: 2,
            occluder_intensity: (0.18, 0.5),
        }
    }
}

impl SynthConfig {
    /// All sampling ranges collapsed: every seed yields the canonical figure.
    pub fn degenerate(map_h: usize, map_w: usize) -> Self {
        SynthConfig {
            map_h,
            map_w,
            angle_scale: 0.0,
            length_jitter: 0.0,
            center_jitter: 0.0,
            occluders: false,
            ..SynthConfig::default()
        }
    }
}

/// Augmentation ranges, applied with a per-sample seed.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub scale: (f64, f64),
    /// Rotation drawn from [-rotation_deg, +rotation_deg].
    pub rotation_deg: f64,
    pub flip_prob: f64,
    /// Global illumination gain range.
    pub gain: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale: (0.75, 1.25),
            rotation_deg: 30.0,
            flip_prob: 0.5,
            gain: (0.7, 1.3),
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig { scale: (1.0, 1.0), rotation_deg: 0.0, flip_prob: 0.0, gain: (1.0, 1.0) }
    }
}

/// Amplitude-1 Gaussian bump at (x, y): map[r, c] =
/// exp(-((c-x)^2 + (r-y)^2) / (2 sigma^2)). No renormalization; joints far
/// outside the map simply leave near-zero tails.
pub fn render_gaussian(joint: (f64, f64), sigma: f64, h: usize, w: usize) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(Error::BadSigma(sigma));
    }
    let (x, y) = joint;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let dy = r as f64 - y;
        for c in 0..w {
            let dx = c as f64 - x;
            data.push((-(dx * dx + dy * dy) * inv).exp());
        }
    }
    Tensor::new(vec![h, w], data)
}

/// Stack of per-joint Gaussians, shape [K, H, W].
pub fn render_gt_stack(joints: &[(f64, f64)], sigma: f64, h: usize, w: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(joints.len() * h * w);
    for &j in joints {
        data.extend_from_slice(render_gaussian(j, sigma, h, w)?.data());
    }
    Tensor::new(vec![joints.len(), h, w], data)
}

fn draw_range(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Pose the skeleton, render the image, and build ground truth.
/// Deterministic in (seed, config).
pub fn sample_pose(skeleton: &Skeleton, seed: u64, cfg: &SynthConfig) -> Result<Sample> {
    if cfg.figure_scale <= 0.0 {
        return Err(Error::Synth(format!(
            "figure_scale {} makes every bone length zero",
            cfg.figure_scale
        )));
    }
    if cfg.map_h == 0 || cfg.map_w == 0 || cfg.stride == 0 {
        return Err(Error::Synth("map size and stride must be positive".to_string()));
    }
    if !(cfg.sigma > 0.0) {
        return Err(Error::BadSigma(cfg.sigma));
    }
    for b in skeleton.bones() {
        if b.length * cfg.figure_scale <= 0.0 {
            return Err(Error::Synth(format!(
                "bone to joint {} has degenerate length",
                b.joint
            )));
        }
    }
    let mut rng = stream(seed, "pose");
    let k = skeleton.num_joints();
    let map_scale = (cfg.map_h.min(cfg.map_w) as f64) / 32.0 * cfg.figure_scale;

    let cj = cfg.center_jitter;
    let cx = cfg.map_w as f64 / 2.0 + draw_range(&mut rng, -cj, cj);
    let cy = cfg.map_h as f64 / 2.0 + draw_range(&mut rng, -cj, cj);

    // root: the neck sits above the figure center
    let mut joints = vec![(0.0, 0.0); k];
    let mut bone_angle = vec![0.0f64; k]; // absolute angle of the bone ending at each joint
    let root = (0..k).find(|&j| skeleton.parent(j).is_none()).expect("validated skeleton");
    joints[root] = (cx, cy - 6.0 * map_scale);

    for bone in skeleton.bones() {
        let jitter = draw_range(&mut rng, -bone.jitter_deg, bone.jitter_deg) * cfg.angle_scale;
        let lj = cfg.length_jitter;
        let len_mult = 1.0 + draw_range(&mut rng, -lj, lj);
        let base = if bone.relative {
            bone_angle[bone.parent] + bone.base_angle_deg
        } else {
            bone.base_angle_deg
        };
        let angle = (base + jitter).to_radians();
        let len = bone.length * map_scale * len_mult;
        let (px, py) = joints[bone.parent];
        joints[bone.joint] = (px + len * angle.cos(), py + len * angle.sin());
        bone_angle[bone.joint] = base + jitter;
    }

    // raster the limbs at image resolution
    let (h_img, w_img) = (cfg.map_h * cfg.stride, cfg.map_w * cfg.stride);
    let s = cfg.stride as f64;
    let to_img = |(x, y): (f64, f64)| (x * s + (s - 1.0) / 2.0, y * s + (s - 1.0) / 2.0);
    let mut image = vec![0.0f64; h_img * w_img];
    for bone in skeleton.bones() {
        let intensity = draw_range(&mut rng, cfg.intensity.0, cfg.intensity.1);
        draw_segment(
            &mut image,
            h_img,
            w_img,
            to_img(joints[bone.parent]),
            to_img(joints[bone.joint]),
            cfg.thickness,
            intensity,
        );
    }

    // occluders overwrite whatever is underneath; ground truth is unaffected
    let mut visible = vec![true; k];
    if cfg.occluders && cfg.max_occluders > 0 {
        let count = rng.random_range(0..=cfg.max_occluders);
        for _ in 0..count {
            let ow = draw_range(&mut rng, w_img as f64 / 8.0, w_img as f64 / 3.0);
            let oh = draw_range(&mut rng, h_img as f64 / 8.0, h_img as f64 / 3.0);
            let ox = draw_range(&mut rng, 0.0, (w_img as f64 - ow).max(1.0));
            let oy = draw_range(&mut rng, 0.0, (h_img as f64 - oh).max(1.0));
            let val = draw_range(&mut rng, cfg.occluder_intensity.0, cfg.occluder_intensity.1);
            let (x0, y0) = (ox as usize, oy as usize);
            let (x1, y1) = (((ox + ow) as usize).min(w_img), ((oy + oh) as usize).min(h_img));
            for y in y0..y1 {
                for x in x0..x1 {
                    image[y * w_img + x] = val;
                }
            }
            for (j, &p) in joints.iter().enumerate() {
                let (ix, iy) = to_img(p);
                if ix >= ox && ix < ox + ow && iy >= oy && iy < oy + oh {
                    visible[j] = false;
                }
            }
        }
    }
    for v in image.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    let gt_heatmaps = render_gt_stack(&joints, cfg.sigma, cfg.map_h, cfg.map_w)?;
    let (head_len, torso_len) = norm_lengths(skeleton, &joints);
    Ok(Sample {
        image: Tensor::new(vec![1, h_img, w_img], image)?,
        joints,
        visible,
        gt_heatmaps,
        head_len,
        torso_len,
    })
}

/// Head-segment and torso lengths from posed joints.
pub fn norm_lengths(skeleton: &Skeleton, joints: &[(f64, f64)]) -> (f64, f64) {
    use crate::skeleton::joints::*;
    let _ = skeleton;
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mid = |a: (f64, f64), b: (f64, f64)| ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
    let head = dist(joints[HEAD_TOP], joints[NECK]);
    let torso = dist(
        mid(joints[L_SHOULDER], joints[R_SHOULDER]),
        mid(joints[L_HIP], joints[R_HIP]),
    );
    (head, torso)
}

/// Anti-aliased thick segment: coverage falls off linearly over one pixel at
/// the edge. Overlapping limbs combine with max, not sum.
fn draw_segment(
    image: &mut [f64],
    h: usize,
    w: usize,
    a: (f64, f64),
    b: (f64, f64),
    thickness: f64,
    intensity: f64,
) {
    let half = thickness / 2.0;
    let pad = half + 1.5;
    let x0 = ((a.0.min(b.0) - pad).floor().max(0.0)) as usize;
    let y0 = ((a.1.min(b.1) - pad).floor().max(0.0)) as usize;
    let x1 = ((a.0.max(b.0) + pad).ceil().min(w as f64 - 1.0)) as usize;
    let y1 = ((a.1.max(b.1) + pad).ceil().min(h as f64 - 1.0)) as usize;
    if x0 > x1 || y0 > y1 {
        return;
    }
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 - a.0, y as f64 - a.1);
            let t = if len_sq > 0.0 {
                ((px * dx + py * dy) / len_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (px - t * dx, py - t * dy);
            let d = (qx * qx + qy * qy).sqrt();
            let coverage = (half + 0.5 - d).clamp(0.0, 1.0);
            if coverage > 0.0 {
                let v = coverage * intensity;
                let cell = &mut image[y * w + x];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
}

/// Geometric + photometric augmentation: random scale and rotation about the
/// map center, optional horizontal flip (relabeling left/right joints), and
/// a global illumination gain. Ground truth is re-rendered from the
/// transformed coordinates; `head_len`/`torso_len` rescale with the drawn
/// scale factor.
pub fn augment(
    sample: &Sample,
    skeleton: &Skeleton,
    seed: u64,
    cfg: &AugmentConfig,
    sigma: f64,
) -> Result<Sample> {
    let mut rng = stream(seed, "augment");
    let scale = draw_range(&mut rng, cfg.scale.0, cfg.scale.1);
    let rot = draw_range(&mut rng, -cfg.rotation_deg, cfg.rotation_deg);
    let flip = cfg.flip_prob > 0.0 && rng.random_range(0.0..1.0) < cfg.flip_prob;
    let gain = draw_range(&mut rng, cfg.gain.0, cfg.gain.1);
    apply_augment(sample, skeleton, scale, rot, flip, gain, sigma)
}

/// Deterministic core of [`augment`] with explicit parameters.
pub fn apply_augment(
    sample: &Sample,
    skeleton: &Skeleton,
    scale: f64,
    rotation_deg: f64,
    flip: bool,
    gain: f64,
    sigma: f64,
) -> Result<Sample> {
    if sample.num_joints() != skeleton.num_joints() {
        return Err(Error::JointCountMismatch {
            context: "augment",
            expected: skeleton.num_joints(),
            got: sample.num_joints(),
        });
    }
    if scale == 1.0 && rotation_deg == 0.0 && !flip && gain == 1.0 {
        return Ok(sample.clone());
    }
    let (h, w) = sample.map_size();
    let (h_img, w_img) = sample.image_size();
    let s = sample.stride() as f64;

    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (cos_t, sin_t) = {
        let r = rotation_deg.to_radians();
        (r.cos(), r.sin())
    };
    let fwd = |(x, y): (f64, f64)| -> (f64, f64) {
        let (dx, dy) = ((x - cx) * scale, (y - cy) * scale);
        let (rx, ry) = (dx * cos_t - dy * sin_t, dx * sin_t + dy * cos_t);
        let p = (rx + cx, ry + cy);
        if flip {
            ((w as f64 - 1.0) - p.0, p.1)
        } else {
            p
        }
    };

    let mut joints: Vec<(f64, f64)> = sample.joints.iter().map(|&p| fwd(p)).collect();
    let mut visible = sample.visible.clone();
    if flip {
        for &(a, b) in skeleton.mirror_pairs() {
            joints.swap(a, b);
            visible.swap(a, b);
        }
    }

    // image: inverse-map each output pixel and sample bilinearly
    let (icx, icy) = (cx * s + (s - 1.0) / 2.0, cy * s + (s - 1.0) / 2.0);
    let src = sample.image.data();
    let mut out = vec![0.0f64; h_img * w_img];
    let inv_scale = 1.0 / scale;
    for y in 0..h_img {
        for x in 0..w_img {
            let ox = if flip { (w_img as f64 - 1.0) - x as f64 } else { x as f64 };
            let (dx, dy) = (ox - icx, y as f64 - icy);
            // inverse rotation then inverse scale
            let (rx, ry) = (dx * cos_t + dy * sin_t, -dx * sin_t + dy * cos_t);
            let (sx, sy) = (rx * inv_scale + icx, ry * inv_scale + icy);
            out[y * w_img + x] = (bilinear(src, h_img, w_img, sx, sy) * gain).clamp(0.0, 1.0);
        }
    }

    let gt_heatmaps = render_gt_stack(&joints, sigma, h, w)?;
    Ok(Sample {
        image: Tensor::new(vec![1, h_img, w_img], out)?,
        joints,
        visible,
        gt_heatmaps,
        head_len: sample.head_len * scale,
        torso_len: sample.torso_len * scale,
    })
}

fn bilinear(img: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    if x < -1.0 || y < -1.0 || x > w as f64 || y > h as f64 {
        return 0.0;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let sample = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            img[yi as usize * w + xi as usize]
        }
    };
    let v00 = sample(x0, y0);
    let v01 = sample(x0 + 1.0, y0);
    let v10 = sample(x0, y0 + 1.0);
    let v11 = sample(x0 + 1.0, y0 + 1.0);
    v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy + v11 * fx * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::joints::*;

    #[test]
    fn gaussian_peak_is_one_at_integer_center() {
        let m = render_gaussian((16.0, 16.0), 1.0, 32, 32).unwrap();
        assert_eq!(m.data()[16 * 32 + 16], 1.0);
    }

    #[test]
    fn gaussian_one_px_off_is_exp_minus_half() {
        let m = render_gaussian((16.0, 16.0), 1.0, 32, 32).unwrap();
        let v = m.data()[16 * 32 + 17];
        assert!((v - (-0.5f64).exp()).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn gaussian_far_outside_is_tiny() {
        let m = render_gaussian((-100.0, -100.0), 1.0, 32, 32).unwrap();
        assert!(m.data().iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn gaussian_rejects_nonpositive_sigma() {
        assert!(render_gaussian((0.0, 0.0), 0.0, 4, 4).is_err());
        assert!(render_gaussian((0.0, 0.0), -1.0, 4, 4).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let sk = Skeleton::lsp14();
        let cfg = SynthConfig::default();
        let a = sample_pose(&sk, 42, &cfg).unwrap();
        let b = sample_pose(&sk, 42, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_ranges_give_canonical_figure() {
        let sk = Skeleton::lsp14();
        let cfg = SynthConfig::degenerate(32, 32);
        let a = sample_pose(&sk, 1, &cfg).unwrap();
        let b = sample_pose(&sk, 999, &cfg).unwrap();
        assert_eq!(a.joints, b.joints);
        // upright: head above neck, ankles below knees
        assert!(a.joints[HEAD_TOP].1 < a.joints[NECK].1);
        assert!(a.joints[L_ANKLE].1 > a.joints[L_KNEE].1);
    }

    #[test]
    fn thousand_samples_stay_in_bounds_without_occluders() {
        let sk = Skeleton::lsp14();
        let cfg = SynthConfig { occluders: false, ..SynthConfig::default() };
        for seed in 0..1000 {
            let s = sample_pose(&sk, seed, &cfg).unwrap();
            for (k, &(x, y)) in s.joints.iter().enumerate() {
                assert!(
                    x >= 0.0 && y >= 0.0 && x < cfg.map_w as f64 && y < cfg.map_h as f64,
                    "seed {seed} joint {k} at ({x}, {y}) left the map"
                );
            }
        }
    }

    #[test]
    fn norm_lengths_are_positive() {
        let sk = Skeleton::lsp14();
        for seed in 0..50 {
            let s = sample_pose(&sk, seed, &SynthConfig::default()).unwrap();
            assert!(s.head_len > 0.0 && s.torso_len > 0.0);
        }
    }

    #[test]
    fn zero_figure_scale_is_rejected() {
        let sk = Skeleton::lsp14();
        let cfg = SynthConfig { figure_scale: 0.0, ..SynthConfig::default() };
        assert!(sample_pose(&sk, 0, &cfg).is_err());
    }

    #[test]
    fn identity_augment_is_a_no_op() {
        let sk = Skeleton::lsp14();
        let s = sample_pose(&sk, 5, &SynthConfig::default()).unwrap();
        let a = augment(&s, &sk, 123, &AugmentConfig::identity(), 1.0).unwrap();
        assert_eq!(s, a);
    }

    #[test]
    fn double_flip_restores_joints_and_labels() {
        let sk = Skeleton::lsp14();
        let s = sample_pose(&sk, 5, &SynthConfig::default()).unwrap();
        let once = apply_augment(&s, &sk, 1.0, 0.0, true, 1.0, 1.0).unwrap();
        assert_ne!(s.joints, once.joints);
        let twice = apply_augment(&once, &sk, 1.0, 0.0, true, 1.0, 1.0).unwrap();
        for (p, q) in s.joints.iter().zip(&twice.joints) {
            assert!((p.0 - q.0).abs() < 1e-12 && (p.1 - q.1).abs() < 1e-12);
        }
        assert_eq!(s.visible, twice.visible);
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let sk = Skeleton::lsp14();
        let s = sample_pose(&sk, 7, &SynthConfig::default()).unwrap();
        let r = apply_augment(&s, &sk, 1.0, 30.0, false, 1.0, 1.0).unwrap();
        for i in 0..s.joints.len() {
            for j in (i + 1)..s.joints.len() {
                let d0 = ((s.joints[i].0 - s.joints[j].0).powi(2)
                    + (s.joints[i].1 - s.joints[j].1).powi(2))
                .sqrt();
                let d1 = ((r.joints[i].0 - r.joints[j].0).powi(2)
                    + (r.joints[i].1 - r.joints[j].1).powi(2))
                .sqrt();
                assert!((d0 - d1).abs() < 1e-6, "joints {i},{j}: {d0} vs {d1}");
            }
        }
    }

    #[test]
    fn gt_argmax_matches_rounded_joints() {
        let sk = Skeleton::lsp14();
        let (h, w) = (32usize, 32usize);
        for seed in 0..20 {
            let s = sample_pose(&sk, seed, &SynthConfig::default()).unwrap();
            for (k, &(x, y)) in s.joints.iter().enumerate() {
                let (rx, ry) = (x.round(), y.round());
                if rx < 0.0 || ry < 0.0 || rx >= w as f64 || ry >= h as f64 {
                    continue;
                }
                let plane = &s.gt_heatmaps.data()[k * h * w..(k + 1) * h * w];
                let mut best = (0usize, 0usize);
                let mut best_v = f64::NEG_INFINITY;
                for r in 0..h {
                    for c in 0..w {
                        if plane[r * w + c] > best_v {
                            best_v = plane[r * w + c];
                            best = (r, c);
                        }
                    }
                }
                assert_eq!(best, (ry as usize, rx as usize), "joint {k} seed {seed}");
            }
        }
    }
}
