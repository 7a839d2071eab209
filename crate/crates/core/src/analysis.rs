//! Detector-level analysis: pixelation into expected counts, per-pixel SNR,
//! threshold-mask optimization, the masked linear estimator of μ_B and
//! Poisson synthetic experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ProbabilityMap};
use crate::spin::BlochState;

/// Minimum simulation samples per detector pixel along each axis.
pub const MIN_SUBSAMPLING: usize = 4;
/// `|n1| / n0` above which a pixel is flagged as outside the first-order regime.
pub const FIRST_ORDER_LIMIT: f64 = 0.1;

/// Expected detector counts for a reference and a driven acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelImage {
    /// Detector lattice (pixel centres).
    pub grid: Grid,
    /// Expected reference counts per pixel.
    pub n0: Vec<f64>,
    /// Expected driven-minus-reference counts per pixel (signed).
    pub n1: Vec<f64>,
    /// Pixels with `|n1| > 0.1·n0`.
    pub first_order_violations: usize,
}

impl PixelImage {
    /// Builds an image from raw arrays, e.g. for synthetic tests.
    pub fn from_counts(grid: Grid, n0: Vec<f64>, n1: Vec<f64>) -> Result<Self> {
        if n0.len() != grid.len() || n1.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} and {} counts for a grid of {} pixels",
                n0.len(),
                n1.len(),
                grid.len()
            )));
        }
        if n0.iter().any(|v| !(*v >= 0.0)) || n1.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("n0 must be non-negative and n1 finite".into()));
        }
        let first_order_violations = count_violations(&n0, &n1);
        Ok(Self { grid, n0, n1, first_order_violations })
    }

    pub fn len(&self) -> usize {
        self.n0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n0.is_empty()
    }
}

fn count_violations(n0: &[f64], n1: &[f64]) -> usize {
    n0.iter().zip(n1).filter(|(a, b)| b.abs() > FIRST_ORDER_LIMIT * **a).count()
}

/// Integrates a map into detector pixels of pitch `pixel_size`.
///
/// The map grid must tile the detector exactly, with at least
/// [`MIN_SUBSAMPLING`]² samples per pixel. Each pixel sum is a midpoint rule
/// over its samples.
pub fn pixelate(
    map: &ProbabilityMap,
    bloch_dr: &BlochState,
    bloch_ref: &BlochState,
    n_e: f64,
    pixel_size: f64,
) -> Result<PixelImage> {
    if !(n_e >= 0.0) || !(pixel_size > 0.0) {
        return Err(Error::Domain("pixelate needs n_e >= 0 and pixel_size > 0".into()));
    }
    let g = &map.grid;
    let extent = 2.0 * g.half_width;
    let npx = (extent / pixel_size).round() as usize;
    if npx == 0 || (npx as f64 * pixel_size - extent).abs() > g.spacing() {
        return Err(Error::Domain(format!(
            "pixel size {pixel_size:e} does not divide the grid extent {extent:e}"
        )));
    }
    if !g.n.is_multiple_of(npx) || g.n / npx < MIN_SUBSAMPLING {
        return Err(Error::Domain(format!(
            "{} samples per side cannot be split into {npx} pixels of >= {MIN_SUBSAMPLING} samples",
            g.n
        )));
    }
    let sub = g.n / npx;
    let da = g.pixel_area();
    let p_ref: Vec<f64> = map.p0.iter().zip(map.signal(bloch_ref)).map(|(a, b)| a + b).collect();
    let diff = map.differential(bloch_dr, bloch_ref);
    let (n0, n1): (Vec<f64>, Vec<f64>) = (0..npx * npx)
        .into_par_iter()
        .map(|p| {
            let (px, py) = (p % npx, p / npx);
            let (mut a, mut b) = (0.0, 0.0);
            for iy in py * sub..(py + 1) * sub {
                for ix in px * sub..(px + 1) * sub {
                    let j = iy * g.n + ix;
                    if map.inside[j] {
                        a += p_ref[j];
                        b += diff[j];
                    }
                }
            }
            (n_e * a * da, n_e * b * da)
        })
        .unzip();
    let grid = Grid::new(g.kind, g.half_width, npx, g.cut_radius)?;
    let first_order_violations = count_violations(&n0, &n1);
    Ok(PixelImage { grid, n0, n1, first_order_violations })
}

/// Per-pixel SNR `|n1|/√(2n0 + n1)` of a driven-minus-reference difference.
pub fn snr_px(img: &PixelImage) -> Vec<f64> {
    img.n0
        .iter()
        .zip(&img.n1)
        .map(|(&n0, &n1)| {
            let var = 2.0 * n0 + n1;
            if var > 0.0 {
                n1.abs() / var.sqrt()
            } else {
                0.0
            }
        })
        .collect()
}

/// Total SNR `Σ|n1| / √Σ(2n0 + n1)` over a set of pixels.
pub fn masked_snr(img: &PixelImage, selected: &[bool]) -> f64 {
    let (mut s, mut v) = (0.0, 0.0);
    for j in 0..img.len() {
        if selected[j] {
            s += img.n1[j].abs();
            v += 2.0 * img.n0[j] + img.n1[j];
        }
    }
    if v > 0.0 {
        s / v.sqrt()
    } else {
        0.0
    }
}

/// One candidate of the threshold family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub threshold: f64,
    pub pixels: usize,
    pub total_snr: f64,
}

/// Optimal threshold mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSelection {
    pub selected: Vec<bool>,
    /// Pixels with `SNR_px > threshold` form the mask.
    pub threshold: f64,
    pub total_snr: f64,
    pub trace: Vec<TracePoint>,
}

impl MaskSelection {
    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&b| b).count()
    }
}

/// Scans every mask `{j : SNR_px[j] ≥ v}` over the distinct attained SNR
/// values `v` and keeps the one with the largest total SNR. Ties go to the
/// larger mask.
pub fn optimize_mask(img: &PixelImage) -> Result<MaskSelection> {
    let snr = snr_px(img);
    let mut order: Vec<usize> = (0..snr.len()).filter(|&j| snr[j] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::NoSignal);
    }
    order.sort_by(|&a, &b| snr[b].total_cmp(&snr[a]).then(a.cmp(&b)));

    let (mut sum, mut var) = (0.0, 0.0);
    let mut trace = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut i = 0;
    while i < order.len() {
        let v = snr[order[i]];
        // Whole tie groups enter together: a threshold cannot split them.
        while i < order.len() && snr[order[i]] == v {
            let j = order[i];
            sum += img.n1[j].abs();
            var += 2.0 * img.n0[j] + img.n1[j];
            i += 1;
        }
        let total = if var > 0.0 { sum / var.sqrt() } else { 0.0 };
        let threshold = if i < order.len() { snr[order[i]] } else { 0.5 * v };
        trace.push(TracePoint { threshold, pixels: i, total_snr: total });
        if best.is_none_or(|(_, b)| total >= b) {
            best = Some((i, total));
        }
    }
    let (count, total_snr) = best.expect("at least one candidate");
    let threshold = trace.iter().find(|t| t.pixels == count).unwrap().threshold;
    let mut selected = vec![false; snr.len()];
    for &j in &order[..count] {
        selected[j] = true;
    }
    Ok(MaskSelection { selected, threshold, total_snr, trace })
}

/// Estimate of μ̂_B/μ_B with its Poisson standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub ratio: f64,
    pub std: f64,
}

fn masked_weights(img: &PixelImage, mask: &MaskSelection) -> Result<(f64, f64)> {
    if mask.selected.len() != img.len() {
        return Err(Error::GridMismatch("mask and image sizes differ".into()));
    }
    let (mut w, mut v) = (0.0, 0.0);
    for j in (0..img.len()).filter(|&j| mask.selected[j]) {
        w += img.n1[j].abs();
        v += 2.0 * img.n0[j] + img.n1[j];
    }
    if w == 0.0 {
        return Err(Error::NoSignal);
    }
    Ok((w, v.max(0.0).sqrt() / w))
}

/// Sign-weighted linear estimate against the noiseless reference `n0`.
pub fn estimate_mu_b(observed: &[f64], img: &PixelImage, mask: &MaskSelection) -> Result<Estimate> {
    if observed.len() != img.len() {
        return Err(Error::GridMismatch("observed counts and image sizes differ".into()));
    }
    let (w, std) = masked_weights(img, mask)?;
    let s: f64 = (0..img.len())
        .filter(|&j| mask.selected[j])
        .map(|j| img.n1[j].signum() * (observed[j] - img.n0[j]))
        .sum();
    Ok(Estimate { ratio: s / w, std })
}

/// Sign-weighted linear estimate from a driven and a measured reference image.
pub fn estimate_mu_b_differential(
    driven: &[f64],
    reference: &[f64],
    img: &PixelImage,
    mask: &MaskSelection,
) -> Result<Estimate> {
    if driven.len() != img.len() || reference.len() != img.len() {
        return Err(Error::GridMismatch("count arrays and image sizes differ".into()));
    }
    let (w, std) = masked_weights(img, mask)?;
    let s: f64 = (0..img.len())
        .filter(|&j| mask.selected[j])
        .map(|j| img.n1[j].signum() * (driven[j] - reference[j]))
        .sum();
    Ok(Estimate { ratio: s / w, std })
}

/// Independent Poisson draws with the given means on stream `stream` of `seed`.
/// Non-positive means yield 0.
pub fn sample_counts(means: &[f64], seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    means
        .iter()
        .map(|&m| match Poisson::new(m) {
            Ok(p) if m > 0.0 => p.sample(&mut rng),
            _ => 0.0,
        })
        .collect()
}

/// Driven acquisition: Poisson counts with means `max(0, n0 + n1)`.
pub fn sample_poisson(img: &PixelImage, seed: u64) -> Vec<f64> {
    let means: Vec<f64> = img.n0.iter().zip(&img.n1).map(|(a, b)| (a + b).max(0.0)).collect();
    sample_counts(&means, seed, 0)
}

/// Reference acquisition: Poisson counts with means `n0`.
pub fn sample_reference(img: &PixelImage, seed: u64) -> Vec<f64> {
    sample_counts(&img.n0, seed, 1)
}

/// Summary of repeated synthetic experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub replicas: usize,
    pub mean: f64,
    pub std: f64,
    pub std_err: f64,
    /// Standard deviation predicted by the noise model.
    pub predicted_std: f64,
    pub ratios: Vec<f64>,
}

/// Repeats a driven/reference acquisition pair `replicas` times, restricted
/// to the masked pixels, and estimates μ̂_B/μ_B from each. Replica `r` uses
/// streams `2r` and `2r + 1`, so results do not depend on thread count.
pub fn monte_carlo(img: &PixelImage, mask: &MaskSelection, replicas: usize, seed: u64) -> Result<MonteCarloSummary> {
    if replicas < 2 {
        return Err(Error::Domain("monte carlo needs at least two replicas".into()));
    }
    let (w, predicted_std) = masked_weights(img, mask)?;
    let idx: Vec<usize> = (0..img.len()).filter(|&j| mask.selected[j]).collect();
    let mu_dr: Vec<f64> = idx.iter().map(|&j| (img.n0[j] + img.n1[j]).max(0.0)).collect();
    let mu_ref: Vec<f64> = idx.iter().map(|&j| img.n0[j]).collect();
    let sgn: Vec<f64> = idx.iter().map(|&j| img.n1[j].signum()).collect();
    let ratios: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let d = sample_counts(&mu_dr, seed, 2 * r);
            let f = sample_counts(&mu_ref, seed, 2 * r + 1);
            (0..idx.len()).map(|i| sgn[i] * (d[i] - f[i])).sum::<f64>() / w
        })
        .collect();
    let n = replicas as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let std = (ratios.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(MonteCarloSummary { replicas, mean, std, std_err: std / n.sqrt(), predicted_std, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridKind;
    use proptest::prelude::*;

    fn image(n0: Vec<f64>, n1: Vec<f64>) -> PixelImage {
        let n = (n0.len() as f64).sqrt() as usize;
        let g = Grid::new(GridKind::Angular, 1.0, n.max(2), None).unwrap();
        PixelImage::from_counts(g, n0, n1).unwrap()
    }

    /// Best total SNR over every non-empty subset, by enumeration.
    fn exhaustive_best(img: &PixelImage) -> f64 {
        let n = img.len();
        (1u32..(1 << n))
            .map(|bits| {
                let sel: Vec<bool> = (0..n).map(|j| bits >> j & 1 == 1).collect();
                masked_snr(img, &sel)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn snr_px_formula() {
        let img = image(vec![50.0, 10.0, 0.0, 3.0], vec![10.0, 0.0, -1.0, 2.0]);
        let s = snr_px(&img);
        assert!((s[0] - 10.0 / 110f64.sqrt()).abs() < 1e-15);
        assert!((s[0] - 0.9535).abs() < 1e-4);
        assert_eq!(s[1], 0.0);
        assert_eq!(s[2], 0.0);
        assert!((s[3] - 2.0 / 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_signal_pixel_is_selected_alone() {
        let img = image(vec![4.0, 4.0, 4.0, 4.0], vec![0.0, 3.0, 0.0, 0.0]);
        let m = optimize_mask(&img).unwrap();
        assert_eq!(m.selected, vec![false, true, false, false]);
        assert!((m.total_snr - snr_px(&img)[1]).abs() < 1e-15);
        assert!(m.threshold > 0.0 && m.threshold < snr_px(&img)[1]);
    }

    #[test]
    fn two_pixel_choice_matches_enumeration() {
        // SNR_px = 30/√100 = 3 and 1/√100 = 0.1.
        let img = image(vec![35.0, 49.5, 0.0, 0.0], vec![30.0, 1.0, 0.0, 0.0]);
        let s = snr_px(&img);
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 0.1).abs() < 1e-14);
        let m = optimize_mask(&img).unwrap();
        let only_a = masked_snr(&img, &[true, false, false, false]);
        let both = masked_snr(&img, &[true, true, false, false]);
        assert!((both - 31.0 / 200f64.sqrt()).abs() < 1e-14);
        assert!((m.total_snr - only_a.max(both)).abs() < 1e-15);
        assert!((m.total_snr - exhaustive_best(&img)).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_larger_mask() {
        let img = image(vec![8.0, 8.0, 0.0, 0.0], vec![4.0, 4.0, 0.0, 0.0]);
        let m = optimize_mask(&img).unwrap();
        assert_eq!(m.count(), 2);
        // Equal-value group cannot be split by a threshold.
        assert_eq!(m.trace.len(), 1);
    }

    #[test]
    fn no_signal_is_an_error() {
        let img = image(vec![1.0; 4], vec![0.0; 4]);
        assert_eq!(optimize_mask(&img), Err(Error::NoSignal));
    }

    #[test]
    fn estimator_exact_cases() {
        let img = image(vec![100.0, 50.0, 80.0, 20.0], vec![5.0, -3.0, 0.5, 0.0]);
        let m = optimize_mask(&img).unwrap();
        let full: Vec<f64> = img.n0.iter().zip(&img.n1).map(|(a, b)| a + b).collect();
        assert!((estimate_mu_b(&full, &img, &m).unwrap().ratio - 1.0).abs() < 1e-14);
        assert!(estimate_mu_b(&img.n0, &img, &m).unwrap().ratio.abs() < 1e-14);
        assert!((estimate_mu_b_differential(&full, &img.n0, &img, &m).unwrap().ratio - 1.0).abs() < 1e-14);
        let e = estimate_mu_b(&full, &img, &m).unwrap();
        assert!((e.std - 1.0 / m.total_snr).abs() < 1e-12);
    }

    #[test]
    fn estimator_rejects_empty_weight() {
        let img = image(vec![1.0; 4], vec![0.0, 1.0, 0.0, 0.0]);
        let mask = MaskSelection { selected: vec![true, false, false, false], threshold: 1.0, total_snr: 0.0, trace: vec![] };
        assert_eq!(estimate_mu_b(&img.n0, &img, &mask), Err(Error::NoSignal));
    }

    #[test]
    fn poisson_sampling_contracts() {
        let img = image(vec![0.0, 100.0, 5.0, 0.0], vec![0.0, 0.0, -10.0, 0.0]);
        let a = sample_poisson(&img, 7);
        assert_eq!(a, sample_poisson(&img, 7));
        assert_eq!(a[0], 0.0);
        assert_eq!(a[2], 0.0);
        let draws = 10_000;
        let means = vec![100.0; draws];
        let s = sample_counts(&means, 11, 3);
        let mean = s.iter().sum::<f64>() / draws as f64;
        // σ of the mean is √(100/10⁴) = 0.1.
        assert!((mean - 100.0).abs() < 0.3, "{mean}");
        assert_ne!(sample_counts(&means[..8], 11, 3), sample_counts(&means[..8], 11, 4));
    }

    #[test]
    fn monte_carlo_is_unbiased_and_matches_noise_model() {
        let n0: Vec<f64> = (0..16).map(|j| 1e4 + 100.0 * j as f64).collect();
        let n1: Vec<f64> = (0..16).map(|j| 30.0 * ((j as f64) * 0.7).sin()).collect();
        let img = image(n0, n1);
        let m = optimize_mask(&img).unwrap();
        let mc = monte_carlo(&img, &m, 2000, 5).unwrap();
        assert!((mc.mean - 1.0).abs() < 3.0 * mc.std_err, "{mc:?}");
        assert!((mc.std / mc.predicted_std - 1.0).abs() < 0.1);
        assert_eq!(mc, monte_carlo(&img, &m, 2000, 5).unwrap());
    }

    #[test]
    fn pixelate_validates_tiling() {
        let g = Grid::new(GridKind::Angular, 1.0, 8, None).unwrap();
        let map = ProbabilityMap { grid: g, p0: vec![0.01; 64], cx: vec![0.0; 64], cy: vec![0.001; 64], inside: vec![true; 64] };
        let on = BlochState { s: [0.0, 1.0, 0.0] };
        let off = BlochState { s: [0.0, 0.0, 1.0] };
        let img = pixelate(&map, &on, &off, 100.0, 1.0).unwrap();
        assert_eq!(img.len(), 4);
        // Each pixel holds 16 samples of area 1/16.
        assert!((img.n0[0] - 100.0 * 0.01).abs() < 1e-12);
        assert!((img.n1[0] - 100.0 * 0.001).abs() < 1e-12);
        assert!(pixelate(&map, &on, &off, 100.0, 0.5).is_err());
        assert!(pixelate(&map, &on, &off, 100.0, 0.7).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn optimizer_dominates_full_mask_and_best_pixel(
            n0 in prop::collection::vec(1.0f64..1e4, 9),
            f in prop::collection::vec(-0.99f64..0.99, 9),
        ) {
            // Driven and reference means n0 ± n1 stay non-negative.
            let n1 = n0.iter().zip(&f).map(|(a, b)| a * b).collect();
            let img = image(n0, n1);
            prop_assume!(snr_px(&img).iter().any(|&s| s > 0.0));
            let m = optimize_mask(&img).unwrap();
            let best_px = snr_px(&img).into_iter().fold(0.0, f64::max);
            prop_assert!(m.total_snr >= masked_snr(&img, &[true; 9]) - 1e-12);
            prop_assert!(m.total_snr >= best_px - 1e-12);
            for j in 0..9 {
                prop_assert_eq!(m.selected[j], snr_px(&img)[j] > m.threshold);
            }
            prop_assert!(m.threshold > 0.0);
        }
    }
}
