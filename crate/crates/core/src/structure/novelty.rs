use nalgebra::DMatrix;

use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};

/// Cosine self-similarity of feature frames. Pairs involving an all-zero
/// frame score 0.
pub fn compute_ssm(features: &FeatureMatrix) -> Result<DMatrix<f64>> {
    let n = features.frames;
    if n < 2 {
        return Err(Error::InputTooShort(format!("self-similarity needs at least 2 frames, got {n}")));
    }
    let norms: Vec<f64> = features.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut ssm = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s = if norms[i] > 0.0 && norms[j] > 0.0 {
                if i == j {
                    1.0
                } else {
                    let dot: f64 = features.row(i).iter().zip(features.row(j)).map(|(a, b)| a * b).sum();
                    dot / (norms[i] * norms[j])
                }
            } else {
                0.0
            };
            ssm[(i, j)] = s;
            ssm[(j, i)] = s;
        }
    }
    Ok(ssm)
}

/// Gaussian-tapered checkerboard kernel, `2w × 2w`, indexed by offsets
/// `-w..w` from the center. Same-side quadrants are positive.
pub fn checkerboard_kernel(half_width: usize) -> Vec<f64> {
    let w = half_width as isize;
    let sigma = half_width as f64 / 2.0;
    let size = 2 * half_width;
    let mut k = vec![0.0; size * size];
    for (a, u) in (-w..w).enumerate() {
        for (b, v) in (-w..w).enumerate() {
            let du = u as f64 + 0.5;
            let dv = v as f64 + 0.5;
            let taper = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
            let sign = if (u < 0) == (v < 0) { 1.0 } else { -1.0 };
            k[a * size + b] = sign * taper;
        }
    }
    k
}

/// Foote novelty along the SSM diagonal.
///
/// Kernel taps falling outside the matrix see zero padding and are left out;
/// the positive and negative halves of the kernel are each normalized by
/// the mass that remains in range, so a constant SSM scores exactly zero
/// everywhere, including at the edges. Frames where either half is fully out
/// of range score zero. Values are clamped at 0.
pub fn novelty_curve(ssm: &DMatrix<f64>, kernel_half_width: usize) -> Result<Vec<f64>> {
    if kernel_half_width == 0 {
        return Err(Error::InvalidArgument("kernel half-width must be at least 1".into()));
    }
    if !ssm.is_square() {
        return Err(Error::ShapeMismatch(format!("SSM is {}x{}", ssm.nrows(), ssm.ncols())));
    }
    let n = ssm.nrows() as isize;
    let w = kernel_half_width as isize;
    let size = 2 * kernel_half_width;
    let kernel = checkerboard_kernel(kernel_half_width);
    let mut out = Vec::with_capacity(n as usize);
    for i in 0..n {
        let (mut pos, mut pos_mass, mut neg, mut neg_mass) = (0.0, 0.0, 0.0, 0.0);
        for (a, u) in (-w..w).enumerate() {
            let r = i + u;
            if r < 0 || r >= n {
                continue;
            }
            for (b, v) in (-w..w).enumerate() {
                let c = i + v;
                if c < 0 || c >= n {
                    continue;
                }
                let k = kernel[a * size + b];
                let s = ssm[(r as usize, c as usize)];
                if k > 0.0 {
                    pos += k * s;
                    pos_mass += k;
                } else {
                    neg += -k * s;
                    neg_mass += -k;
                }
            }
        }
        let value = if pos_mass > 0.0 && neg_mass > 0.0 { pos / pos_mass - neg / neg_mass } else { 0.0 };
        out.push(value.max(0.0));
    }
    Ok(out)
}

/// Peak picking on a novelty curve.
///
/// Candidates are strict-left local maxima (`v[i] > v[i-1]` and
/// `v[i] >= v[i+1]`) at or above `threshold_ratio × max`. They are accepted
/// greedily from the largest, skipping any candidate closer than
/// `min_gap_frames` to an accepted one. The first and last index are never
/// returned.
pub fn detect_boundaries(novelty: &[f64], threshold_ratio: f64, min_gap_frames: usize) -> Result<Vec<usize>> {
    if !(threshold_ratio > 0.0 && threshold_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold_ratio must lie in (0, 1], got {threshold_ratio}")));
    }
    if min_gap_frames == 0 {
        return Err(Error::InvalidArgument("min_gap_frames must be at least 1".into()));
    }
    let n = novelty.len();
    let peak = novelty.iter().copied().fold(0.0, f64::max);
    if n < 3 || peak <= 0.0 {
        return Ok(Vec::new());
    }
    let floor = threshold_ratio * peak;
    let mut candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| novelty[i] > novelty[i - 1] && novelty[i] >= novelty[i + 1] && novelty[i] >= floor)
        .collect();
    candidates.sort_by(|&a, &b| novelty[b].total_cmp(&novelty[a]).then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|&a| a.abs_diff(c) >= min_gap_frames) {
            accepted.push(c);
        }
    }
    accepted.sort_unstable();
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_block(n: usize, k: usize, cross: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if (i < k) == (j < k) { 1.0 } else { cross })
    }

    /// Brute-force kernel correlation with the same masking rule, written
    /// without the shared kernel helper.
    fn novelty_oracle(ssm: &DMatrix<f64>, w: usize) -> Vec<f64> {
        let n = ssm.nrows() as i64;
        let sigma = w as f64 / 2.0;
        (0..n)
            .map(|i| {
                let mut sums = [0.0f64; 4];
                for u in -(w as i64)..w as i64 {
                    for v in -(w as i64)..w as i64 {
                        let (r, c) = (i + u, i + v);
                        if r < 0 || c < 0 || r >= n || c >= n {
                            continue;
                        }
                        let g = (-(((u as f64 + 0.5).powi(2) + (v as f64 + 0.5).powi(2)) / (2.0 * sigma * sigma))).exp();
                        let same = (u < 0) == (v < 0);
                        let s = ssm[(r as usize, c as usize)];
                        if same {
                            sums[0] += g * s;
                            sums[1] += g;
                        } else {
                            sums[2] += g * s;
                            sums[3] += g;
                        }
                    }
                }
                if sums[1] > 0.0 && sums[3] > 0.0 {
                    (sums[0] / sums[1] - sums[2] / sums[3]).max(0.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn identical_frames_give_all_ones() {
        let f = FeatureMatrix::new(4, 3, [0.2, 0.5, 0.1].repeat(4), 1.0).unwrap();
        let ssm = compute_ssm(&f).unwrap();
        assert!(ssm.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_frames_give_zero() {
        let f = FeatureMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 3.0], 1.0).unwrap();
        let ssm = compute_ssm(&f).unwrap();
        assert_eq!(ssm[(0, 1)], 0.0);
        assert_eq!(ssm[(0, 0)], 1.0);
    }

    #[test]
    fn single_frame_is_too_short() {
        let f = FeatureMatrix::new(1, 2, vec![1.0, 0.0], 1.0).unwrap();
        assert!(matches!(compute_ssm(&f), Err(Error::InputTooShort(_))));
    }

    #[test]
    fn ssm_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..10 * 12).map(|_| rng.random::<f64>() - 0.3).collect();
        let f = FeatureMatrix::new(10, 12, vals.clone(), 1.0).unwrap();
        let ssm = compute_ssm(&f).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for d in 0..12 {
                    dot += vals[i * 12 + d] * vals[j * 12 + d];
                    na += vals[i * 12 + d] * vals[i * 12 + d];
                    nb += vals[j * 12 + d] * vals[j * 12 + d];
                }
                assert!((ssm[(i, j)] - dot / (na.sqrt() * nb.sqrt())).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_ssm_has_zero_novelty() {
        let ssm = DMatrix::from_element(50, 50, 1.0);
        let nov = novelty_curve(&ssm, 8).unwrap();
        assert!(nov.iter().all(|&v| v == 0.0), "{nov:?}");
    }

    #[test]
    fn two_block_novelty_peaks_at_the_seam() {
        let ssm = two_block(200, 120, 0.1);
        let nov = novelty_curve(&ssm, 16).unwrap();
        let oracle = novelty_oracle(&ssm, 16);
        for (a, b) in nov.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let argmax = (0..nov.len()).max_by(|&a, &b| nov[a].total_cmp(&nov[b]).then(b.cmp(&a))).unwrap();
        assert_eq!(argmax, 120);
    }

    #[test]
    fn swapping_block_identities_keeps_the_curve() {
        // block A then B, versus the same layout with the roles of A and B swapped
        let n = 80;
        let a = DMatrix::from_fn(n, n, |i, j| match ((i < 30), (j < 30)) {
            (true, true) => 1.0,
            (false, false) => 0.8,
            _ => 0.2,
        });
        let b = DMatrix::from_fn(n, n, |i, j| match ((i < 30), (j < 30)) {
            (true, true) => 0.8,
            (false, false) => 1.0,
            _ => 0.2,
        });
        let na = novelty_curve(&a, 6).unwrap();
        let nb = novelty_curve(&b, 6).unwrap();
        assert!((na[30] - nb[30]).abs() < 1e-12);
        let argmax = |v: &[f64]| (0..v.len()).max_by(|&x, &y| v[x].total_cmp(&v[y])).unwrap();
        assert_eq!(argmax(&na), argmax(&nb));
        // exact label swap of a symmetric two-block matrix is the same matrix
        let c = two_block(n, 40, 0.3);
        let d = DMatrix::from_fn(n, n, |i, j| if (i >= 40) == (j >= 40) { 1.0 } else { 0.3 });
        assert_eq!(novelty_curve(&c, 6).unwrap(), novelty_curve(&d, 6).unwrap());
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(novelty_curve(&DMatrix::zeros(3, 4), 2).is_err());
        assert!(novelty_curve(&DMatrix::zeros(3, 3), 0).is_err());
    }

    #[test]
    fn zero_novelty_has_no_boundaries() {
        assert!(detect_boundaries(&[0.0; 100], 0.5, 5).unwrap().is_empty());
    }

    #[test]
    fn single_spike_is_found() {
        let mut nov = vec![0.0; 200];
        nov[100] = 1.0;
        assert_eq!(detect_boundaries(&nov, 0.5, 10).unwrap(), vec![100]);
    }

    #[test]
    fn close_spikes_keep_only_the_larger() {
        let mut nov = vec![0.0; 200];
        nov[100] = 0.7;
        nov[103] = 0.9;
        assert_eq!(detect_boundaries(&nov, 0.5, 10).unwrap(), vec![103]);
        nov[150] = 0.8;
        assert_eq!(detect_boundaries(&nov, 0.5, 10).unwrap(), vec![103, 150]);
    }

    #[test]
    fn endpoints_are_never_boundaries() {
        let mut nov = vec![0.1; 20];
        nov[0] = 5.0;
        nov[19] = 5.0;
        nov[10] = 1.0;
        assert_eq!(detect_boundaries(&nov, 0.1, 2).unwrap(), vec![10]);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(detect_boundaries(&[0.0, 1.0, 0.0], 0.0, 1).is_err());
        assert!(detect_boundaries(&[0.0, 1.0, 0.0], 1.5, 1).is_err());
        assert!(detect_boundaries(&[0.0, 1.0, 0.0], 0.5, 0).is_err());
    }
}
