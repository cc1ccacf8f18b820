//! Mixed-sample augmentation: base distortion, CutMix and Cut^nMix.
//!
//! Images are stored as `[n, C, H, W]` tensors. A [`RectMask`] marks the
//! region that is filled from the paired sample `perm[i]`; its area fraction
//! tracks the mixing ratio `lam`, and `lam` is also the weight the paired
//! label receives. All operations take their randomness from an explicit
//! generator so a run is reproducible from its seed.

use ndarray::{s, Array2, Array3, Array4, ArrayView3, ArrayViewMut3};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

/// Reflection padding used by [`base_distort`].
pub const DISTORT_PAD: usize = 4;

/// A batch of images with hard class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pixels: Array4<f32>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl ImageBatch {
    pub fn new(pixels: Array4<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = pixels.shape()[0];
        if n == 0 {
            return Err(Error::Validation("image batch is empty".into()));
        }
        if labels.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {} images",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite pixel value".into()));
        }
        Ok(Self {
            pixels,
            labels,
            num_classes,
        })
    }

    pub fn pixels(&self) -> &Array4<f32> {
        &self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of every image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.pixels.shape();
        (s[1], s[2], s[3])
    }

    /// One-hot targets for the hard labels.
    pub fn one_hot(&self) -> SoftLabelBatch {
        let mut probs = Array2::zeros((self.len(), self.num_classes));
        for (i, &y) in self.labels.iter().enumerate() {
            probs[[i, y]] = 1.0;
        }
        SoftLabelBatch { probs }
    }

    pub fn into_parts(self) -> (Array4<f32>, Vec<usize>) {
        (self.pixels, self.labels)
    }
}

/// Axis-aligned rectangle `[x0, x0 + w) x [y0, y0 + h)`; `x` runs along the
/// image width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RectMask {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl RectMask {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.w && y >= self.y0 && y < self.y0 + self.h
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 + self.w <= width && self.y0 + self.h <= height
    }

    /// Binary mask indexed `[y, x]`.
    pub fn to_mask(&self, width: usize, height: usize) -> Array2<u8> {
        Array2::from_shape_fn((height, width), |(y, x)| u8::from(self.contains(x, y)))
    }
}

/// Per-sample probability vectors over the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelBatch {
    pub probs: Array2<f64>,
}

impl SoftLabelBatch {
    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Class with the largest weight in each row (lowest index on ties).
    pub fn dominant(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| crate::argmax(row.iter().copied()))
            .collect()
    }
}

/// One Cut^nMix draw shared by `J` peers.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    lam: f64,
    perm: Vec<usize>,
    masks: Vec<Vec<RectMask>>,
}

impl MixPlan {
    /// Assembles a plan from explicit parts. `masks` is indexed `[peer][sample]`.
    pub fn new(lam: f64, perm: Vec<usize>, masks: Vec<Vec<RectMask>>) -> Result<Self> {
        if !(0.0..=1.0).contains(&lam) {
            return Err(Error::Parameter(format!("lam {lam} outside [0, 1]")));
        }
        let n = perm.len();
        let mut seen = vec![false; n];
        for &k in &perm {
            if k >= n || std::mem::replace(&mut seen[k], true) {
                return Err(Error::Validation("pairing is not a permutation".into()));
            }
        }
        if masks.is_empty() {
            return Err(Error::Configuration("plan has no peers".into()));
        }
        if masks.iter().any(|m| m.len() != n) {
            return Err(Error::Validation(
                "every peer needs one mask per sample".into(),
            ));
        }
        Ok(Self { lam, perm, masks })
    }

    /// Draws `lam ~ Beta(1, 1)` and the pairing from `shared`, then one mask
    /// per sample for each peer from that peer's own generator.
    pub fn sample<S, P>(
        n: usize,
        width: usize,
        height: usize,
        shared: &mut S,
        peer_rngs: &mut [P],
    ) -> Result<Self>
    where
        S: RngCore + ?Sized,
        P: RngCore,
    {
        let lam = sample_lambda(shared, 1.0, 1.0)?;
        Self::sample_with_lambda(lam, n, width, height, shared, peer_rngs)
    }

    /// As [`MixPlan::sample`] with a fixed mixing ratio.
    pub fn sample_with_lambda<S, P>(
        lam: f64,
        n: usize,
        width: usize,
        height: usize,
        shared: &mut S,
        peer_rngs: &mut [P],
    ) -> Result<Self>
    where
        S: RngCore + ?Sized,
        P: RngCore,
    {
        if n < 2 {
            return Err(Error::BatchSize {
                required: 2,
                actual: n,
            });
        }
        if peer_rngs.is_empty() {
            return Err(Error::Configuration("plan has no peers".into()));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(shared);
        let masks = peer_rngs
            .iter_mut()
            .map(|rng| {
                (0..n)
                    .map(|_| sample_rect_mask(rng, width, height, lam))
                    .collect()
            })
            .collect();
        Self::new(lam, perm, masks)
    }

    pub fn lam(&self) -> f64 {
        self.lam
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn masks(&self) -> &[Vec<RectMask>] {
        &self.masks
    }

    pub fn masks_mut(&mut self) -> &mut [Vec<RectMask>] {
        &mut self.masks
    }

    pub fn num_peers(&self) -> usize {
        self.masks.len()
    }

    pub fn batch_size(&self) -> usize {
        self.perm.len()
    }

    /// Mixed targets `lam * onehot(y[perm[i]]) + (1 - lam) * onehot(y[i])`.
    pub fn soft_labels(&self, labels: &[usize], num_classes: usize) -> SoftLabelBatch {
        let mut probs = Array2::zeros((labels.len(), num_classes));
        for (i, &yi) in labels.iter().enumerate() {
            let yk = labels[self.perm[i]];
            if yk == yi {
                probs[[i, yi]] = 1.0;
            } else {
                probs[[i, yk]] = self.lam;
                probs[[i, yi]] = 1.0 - self.lam;
            }
        }
        SoftLabelBatch { probs }
    }
}

/// A mixed batch as seen by one peer.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub pixels: Array4<f32>,
    pub soft_labels: SoftLabelBatch,
}

/// Draws a mixing ratio from `Beta(a, b)`.
pub fn sample_lambda<R: RngCore + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Parameter(format!(
            "Beta shape parameters must be positive, got ({a}, {b})"
        )));
    }
    let beta = Beta::new(a, b).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(beta.sample(rng).clamp(0.0, 1.0))
}

/// Samples a rectangle of sides `round(W * sqrt(lam))` by `round(H * sqrt(lam))`
/// placed uniformly so that it lies entirely inside the image.
pub fn sample_rect_mask<R: RngCore + ?Sized>(
    rng: &mut R,
    width: usize,
    height: usize,
    lam: f64,
) -> RectMask {
    let side = lam.clamp(0.0, 1.0).sqrt();
    let w = ((width as f64 * side).round() as usize).min(width);
    let h = ((height as f64 * side).round() as usize).min(height);
    let x0 = rng.random_range(0..=width - w);
    let y0 = rng.random_range(0..=height - h);
    RectMask { x0, y0, w, h }
}

/// Classic single-network CutMix: one ratio, one pairing, one mask per
/// sample. Returns the mixed batch, the ratio and the pairing.
pub fn cutmix_batch<R: RngCore + ?Sized>(
    batch: &ImageBatch,
    rng: &mut R,
) -> Result<(MixedBatch, f64, Vec<usize>)> {
    if batch.len() < 2 {
        return Err(Error::BatchSize {
            required: 2,
            actual: batch.len(),
        });
    }
    let (_, h, w) = batch.image_dims();
    let mut mask_rng = crate::rng::Rng::seed_from_u64(rng.next_u64());
    let plan = MixPlan::sample(
        batch.len(),
        w,
        h,
        rng,
        std::slice::from_mut(&mut mask_rng),
    )?;
    let mixed = apply_mix_plan(std::slice::from_ref(batch), &plan)?
        .pop()
        .expect("one peer in, one peer out");
    let (lam, perm) = (plan.lam, plan.perm);
    Ok((mixed, lam, perm))
}

/// Samples a Cut^nMix plan for `num_peers >= 2` networks. Mask draws for
/// each peer come from independent child generators seeded from `rng`.
pub fn cutnmix_plan<R: RngCore + ?Sized>(
    n: usize,
    width: usize,
    height: usize,
    num_peers: usize,
    rng: &mut R,
) -> Result<MixPlan> {
    if num_peers < 2 {
        return Err(Error::Configuration(format!(
            "Cut^nMix needs at least 2 peers, got {num_peers}"
        )));
    }
    let mut children: Vec<crate::rng::Rng> = (0..num_peers)
        .map(|_| crate::rng::Rng::seed_from_u64(rng.next_u64()))
        .collect();
    MixPlan::sample(n, width, height, rng, &mut children)
}

/// Applies `plan` to each peer's distorted view of the same raw batch.
pub fn apply_mix_plan(peer_batches: &[ImageBatch], plan: &MixPlan) -> Result<Vec<MixedBatch>> {
    let first = peer_batches
        .first()
        .ok_or_else(|| Error::Consistency("no peer batches".into()))?;
    if peer_batches.len() != plan.num_peers() {
        return Err(Error::Consistency(format!(
            "{} peer batches for a {}-peer plan",
            peer_batches.len(),
            plan.num_peers()
        )));
    }
    for (j, b) in peer_batches.iter().enumerate().skip(1) {
        if b.pixels.shape() != first.pixels.shape() {
            return Err(Error::Consistency(format!(
                "peer {j} has shape {:?}, peer 0 has {:?}",
                b.pixels.shape(),
                first.pixels.shape()
            )));
        }
        if b.labels != first.labels || b.num_classes != first.num_classes {
            return Err(Error::Consistency(format!(
                "peer {j} labels differ from peer 0"
            )));
        }
    }
    let n = first.len();
    if plan.batch_size() != n {
        return Err(Error::Consistency(format!(
            "plan pairs {} samples, batch has {n}",
            plan.batch_size()
        )));
    }
    let (_, height, width) = first.image_dims();
    if plan.masks.iter().flatten().any(|m| !m.fits(width, height)) {
        return Err(Error::Consistency("mask exceeds image bounds".into()));
    }

    let soft_labels = plan.soft_labels(&first.labels, first.num_classes);
    Ok(peer_batches
        .iter()
        .zip(&plan.masks)
        .map(|(batch, masks)| {
            let mut pixels = batch.pixels.clone();
            for (i, m) in masks.iter().enumerate() {
                let k = plan.perm[i];
                if k == i || m.area() == 0 {
                    continue;
                }
                let rows = m.y0..m.y0 + m.h;
                let cols = m.x0..m.x0 + m.w;
                let src = batch.pixels.slice(s![k, .., rows.clone(), cols.clone()]);
                pixels.slice_mut(s![i, .., rows, cols]).assign(&src);
            }
            MixedBatch {
                pixels,
                soft_labels: soft_labels.clone(),
            }
        })
        .collect())
}

/// Mirror-reflect index into `[0, len)` without repeating the edge.
fn reflect(i: isize, len: usize) -> usize {
    let last = len as isize - 1;
    let mut i = i;
    if last == 0 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i > last {
            i = 2 * last - i;
        } else {
            return i as usize;
        }
    }
}

/// Crops the `H x W` window at offset `(dx, dy)` out of the image reflect-padded
/// by `pad` on every side.
pub fn reflect_pad_crop(image: ArrayView3<f32>, pad: usize, dx: usize, dy: usize) -> Array3<f32> {
    let (c, h, w) = image.dim();
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            let sy = reflect(y as isize + dy as isize - pad as isize, h);
            for x in 0..w {
                let sx = reflect(x as isize + dx as isize - pad as isize, w);
                out[[ch, y, x]] = image[[ch, sy, sx]];
            }
        }
    }
    out
}

/// Mirrors an image left-right in place.
pub fn hflip(mut image: ArrayViewMut3<f32>) {
    let w = image.dim().2;
    for mut row in image.rows_mut() {
        for x in 0..w / 2 {
            row.swap(x, w - 1 - x);
        }
    }
}

/// Standard small-image distortion: reflect-pad, random crop back to the
/// original size, horizontal flip with probability 0.5. Labels pass through.
pub fn base_distort<R: RngCore + ?Sized>(batch: &ImageBatch, rng: &mut R) -> ImageBatch {
    let (_, h, w) = batch.image_dims();
    let pad = DISTORT_PAD.min(h - 1).min(w - 1);
    let mut pixels = batch.pixels.clone();
    for (i, mut out) in pixels.outer_iter_mut().enumerate() {
        let dx = rng.random_range(0..=2 * pad);
        let dy = rng.random_range(0..=2 * pad);
        let flip = rng.random_bool(0.5);
        let cropped = reflect_pad_crop(batch.pixels.slice(s![i, .., .., ..]), pad, dx, dy);
        out.assign(&cropped);
        if flip {
            hflip(out);
        }
    }
    ImageBatch {
        pixels,
        labels: batch.labels.clone(),
        num_classes: batch.num_classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn ramp_batch(n: usize, c: usize, h: usize, w: usize, k: usize) -> ImageBatch {
        let pixels = Array4::from_shape_fn((n, c, h, w), |(i, ch, y, x)| {
            (i * 10_000 + ch * 1000 + y * 50 + x) as f32
        });
        let labels = (0..n).map(|i| i % k).collect();
        ImageBatch::new(pixels, labels, k).unwrap()
    }

    #[test]
    fn batch_validation() {
        let px = Array4::<f32>::zeros((2, 1, 2, 2));
        assert!(ImageBatch::new(px.clone(), vec![0, 3], 3).is_err());
        assert!(ImageBatch::new(px.clone(), vec![0], 3).is_err());
        let mut bad = px.clone();
        bad[[0, 0, 0, 0]] = f32::NAN;
        assert!(ImageBatch::new(bad, vec![0, 1], 3).is_err());
        assert!(ImageBatch::new(Array4::zeros((0, 1, 2, 2)), vec![], 3).is_err());
    }

    #[test]
    fn lambda_is_deterministic_and_bounded() {
        let a = sample_lambda(&mut seeded(11), 1.0, 1.0).unwrap();
        let b = sample_lambda(&mut seeded(11), 1.0, 1.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let mut rng = seeded(12);
        for _ in 0..1000 {
            let l = sample_lambda(&mut rng, 1.0, 1.0).unwrap();
            assert!((0.0..=1.0).contains(&l));
        }
    }

    #[test]
    fn lambda_mean_is_one_half() {
        let mut rng = seeded(13);
        let mean: f64 = (0..10_000)
            .map(|_| sample_lambda(&mut rng, 1.0, 1.0).unwrap())
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 0.5).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn lambda_rejects_bad_shape() {
        assert!(matches!(
            sample_lambda(&mut seeded(1), 0.0, 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(sample_lambda(&mut seeded(1), 1.0, -2.0).is_err());
    }

    #[test]
    fn rect_mask_extremes() {
        let full = sample_rect_mask(&mut seeded(1), 32, 32, 1.0);
        assert_eq!(full, RectMask { x0: 0, y0: 0, w: 32, h: 32 });
        let empty = sample_rect_mask(&mut seeded(1), 32, 32, 0.0);
        assert_eq!((empty.w, empty.h), (0, 0));
        let half = sample_rect_mask(&mut seeded(1), 32, 32, 0.5);
        assert_eq!((half.w, half.h), (23, 23));
        let frac = half.area() as f64 / 1024.0;
        assert!((frac - 529.0 / 1024.0).abs() < 1e-12);
        assert!((frac - 0.5).abs() <= 0.07);
    }

    #[test]
    fn rect_mask_binary_has_area_ones() {
        let m = RectMask { x0: 3, y0: 1, w: 4, h: 2 };
        let bin = m.to_mask(8, 5);
        assert_eq!(bin.iter().map(|&v| v as usize).sum::<usize>(), m.area());
        assert_eq!(bin[[1, 3]], 1);
        assert_eq!(bin[[0, 3]], 0);
    }

    #[test]
    fn cutmix_rejects_single_sample() {
        let b = ramp_batch(1, 1, 4, 4, 2);
        assert!(matches!(
            cutmix_batch(&b, &mut seeded(0)),
            Err(Error::BatchSize { .. })
        ));
    }

    #[test]
    fn cutmix_lambda_zero_is_identity() {
        let b = ramp_batch(4, 2, 6, 6, 3);
        let mut shared = seeded(5);
        let mut peer = [seeded(6)];
        let plan = MixPlan::sample_with_lambda(0.0, 4, 6, 6, &mut shared, &mut peer).unwrap();
        let out = apply_mix_plan(std::slice::from_ref(&b), &plan).unwrap();
        assert_eq!(out[0].pixels, *b.pixels());
        assert_eq!(out[0].soft_labels, b.one_hot());
    }

    #[test]
    fn cutmix_lambda_one_takes_partner() {
        let b = ramp_batch(4, 2, 6, 6, 4);
        let plan = MixPlan::sample_with_lambda(1.0, 4, 6, 6, &mut seeded(5), &mut [seeded(6)])
            .unwrap();
        let out = apply_mix_plan(std::slice::from_ref(&b), &plan).unwrap();
        for i in 0..4 {
            let k = plan.perm()[i];
            assert_eq!(out[0].pixels.slice(s![i, .., .., ..]), b.pixels().slice(s![k, .., .., ..]));
            let row = out[0].soft_labels.probs.row(i);
            assert_eq!(row[b.labels()[k]], 1.0);
            assert_eq!(row.sum(), 1.0);
        }
    }

    #[test]
    fn soft_label_arithmetic() {
        let plan = MixPlan::new(
            0.7,
            vec![1, 0],
            vec![vec![RectMask { x0: 0, y0: 0, w: 0, h: 0 }; 2]],
        )
        .unwrap();
        let sl = plan.soft_labels(&[2, 0], 3);
        let row: Vec<f64> = sl.probs.row(0).to_vec();
        assert_eq!(row, vec![0.7, 0.0, 1.0 - 0.7]);
        assert!((row[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cutnmix_rejects_single_peer() {
        assert!(matches!(
            cutnmix_plan(8, 32, 32, 1, &mut seeded(0)),
            Err(Error::Configuration(_))
        ));
        assert!(matches!(
            cutnmix_plan(1, 32, 32, 2, &mut seeded(0)),
            Err(Error::BatchSize { .. })
        ));
    }

    #[test]
    fn cutnmix_plan_is_deterministic() {
        let a = cutnmix_plan(16, 32, 32, 3, &mut seeded(42)).unwrap();
        let b = cutnmix_plan(16, 32, 32, 3, &mut seeded(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_peers(), 3);
    }

    #[test]
    fn cutnmix_masks_differ_across_peers() {
        let mut rng = seeded(7);
        let mut differing = 0;
        let mut eligible = 0;
        for _ in 0..100 {
            let plan = cutnmix_plan(64, 32, 32, 3, &mut rng).unwrap();
            if plan.lam() <= 0.0 || plan.lam() >= 1.0 {
                continue;
            }
            eligible += 1;
            let m = plan.masks();
            if !(m[0][0] == m[1][0] && m[1][0] == m[2][0]) {
                differing += 1;
            }
        }
        assert!(differing as f64 >= 0.9 * eligible as f64);
    }

    #[test]
    fn apply_rejects_inconsistent_peers() {
        let a = ramp_batch(4, 1, 5, 5, 3);
        let mut labels = a.labels().to_vec();
        labels[0] = (labels[0] + 1) % 3;
        let b = ImageBatch::new(a.pixels().clone(), labels, 3).unwrap();
        let plan = cutnmix_plan(4, 5, 5, 2, &mut seeded(1)).unwrap();
        assert!(matches!(
            apply_mix_plan(&[a.clone(), b], &plan),
            Err(Error::Consistency(_))
        ));
        let c = ramp_batch(4, 1, 6, 6, 3);
        assert!(apply_mix_plan(&[a.clone(), c], &plan).is_err());
        assert!(apply_mix_plan(&[a], &plan).is_err());
    }

    #[test]
    fn identical_inputs_and_masks_give_identical_outputs() {
        let b = ramp_batch(6, 2, 8, 8, 3);
        let mut plan = cutnmix_plan(6, 8, 8, 2, &mut seeded(3)).unwrap();
        let shared = plan.masks()[0].clone();
        plan.masks_mut()[1] = shared;
        let out = apply_mix_plan(&[b.clone(), b], &plan).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn flip_is_an_involution() {
        let b = ramp_batch(1, 3, 7, 9, 2);
        let img = reflect_pad_crop(b.pixels().slice(s![0, .., .., ..]), 4, 2, 5);
        let mut twice = img.clone();
        hflip(twice.view_mut());
        assert_ne!(twice, img);
        hflip(twice.view_mut());
        assert_eq!(twice, img);
    }

    #[test]
    fn centre_crop_is_identity_and_reflection_is_edge_exclusive() {
        let b = ramp_batch(1, 1, 6, 6, 2);
        let img = b.pixels().slice(s![0, .., .., ..]);
        assert_eq!(reflect_pad_crop(img, 4, 4, 4), img);
        let shifted = reflect_pad_crop(img, 4, 0, 4);
        // column -4 reflects to column 4, -1 to 1
        assert_eq!(shifted[[0, 0, 0]], img[[0, 0, 4]]);
        assert_eq!(shifted[[0, 0, 3]], img[[0, 0, 1]]);
        assert_eq!(shifted[[0, 0, 4]], img[[0, 0, 0]]);
    }

    #[test]
    fn distortion_keeps_labels_and_varies_with_seed() {
        let b = ramp_batch(16, 3, 32, 32, 10);
        let a = base_distort(&b, &mut seeded(1));
        let c = base_distort(&b, &mut seeded(2));
        assert_eq!(a.labels(), b.labels());
        assert_ne!(a.pixels(), c.pixels());
        assert_eq!(base_distort(&b, &mut seeded(1)), a);
    }
}
