//! Local-maximum search, topographic prominence and distance-constrained
//! peak selection shared by the spectral and beat detectors.

/// Indices of local maxima. A flat-topped maximum is reported at the middle
/// of its plateau (left-middle for even widths).
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = x.len();
    if n < 3 {
        return out;
    }
    let mut i = 1;
    while i < n - 1 {
        if x[i] > x[i - 1] {
            let mut ahead = i + 1;
            while ahead < n - 1 && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                out.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Prominence of the peak at `peak`, searching bases only inside
/// `[lo, hi]` (inclusive). Returns `(prominence, left_base, right_base)`.
pub fn prominence(x: &[f64], peak: usize, lo: usize, hi: usize) -> (f64, usize, usize) {
    let height = x[peak];

    let mut left_min = height;
    let mut left_base = peak;
    let mut i = peak;
    while i > lo {
        i -= 1;
        if x[i] > height {
            break;
        }
        if x[i] < left_min {
            left_min = x[i];
            left_base = i;
        }
    }

    let mut right_min = height;
    let mut right_base = peak;
    let mut i = peak;
    while i < hi {
        i += 1;
        if x[i] > height {
            break;
        }
        if x[i] < right_min {
            right_min = x[i];
            right_base = i;
        }
    }
    (height - left_min.max(right_min), left_base, right_base)
}

/// Keeps the highest peaks such that no two kept peaks are closer than
/// `min_distance` samples. Result is sorted by index.
pub fn select_by_distance(x: &[f64], peaks: &[usize], min_distance: usize) -> Vec<usize> {
    let mut order: Vec<usize> = peaks.to_vec();
    // stable on ties: earlier index wins
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in order {
        if kept.iter().all(|&k| k.abs_diff(p) >= min_distance) {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxima_and_plateaus() {
        let x = [0.0, 1.0, 0.0, 2.0, 2.0, 2.0, 0.0, 3.0];
        assert_eq!(local_maxima(&x), vec![1, 4]);
        assert!(local_maxima(&[1.0, 1.0, 1.0]).is_empty());
    }

    #[test]
    fn prominence_uses_higher_base() {
        let x = [0.0, 5.0, 2.0, 4.0, 1.0, 6.0, 0.0];
        let (p, l, r) = prominence(&x, 3, 0, 6);
        // left search stops at 5.0, min 2.0; right search stops at 6.0, min 1.0
        assert_eq!((p, l, r), (2.0, 2, 4));
        let (p, _, _) = prominence(&x, 5, 0, 6);
        assert_eq!(p, 6.0);
    }

    #[test]
    fn distance_prefers_taller() {
        let x = [0.0, 3.0, 0.0, 5.0, 0.0, 0.0, 0.0, 4.0, 0.0];
        assert_eq!(select_by_distance(&x, &[1, 3, 7], 3), vec![3, 7]);
    }
}
