//! Streaming mean / variance in `f64` (Welford, with Chan's merge).

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Folds another accumulator into this one.
    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let w = other.count as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.count as f64 * w;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance (divides by n).
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// A flat array of Welford accumulators that all observe the same sample
/// stream, where most observations are exactly zero.
///
/// Only non-zero values are pushed. Each cell remembers how many samples it
/// has absorbed; the zeros it skipped are merged in as one block the next time
/// the cell is touched, and once more on [`ZeroSkippingWelford::finish`].
#[derive(Clone, Debug)]
pub struct ZeroSkippingWelford {
    seen: Vec<u64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ZeroSkippingWelford {
    pub fn new(len: usize) -> Self {
        ZeroSkippingWelford {
            seen: vec![0; len],
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    /// Records `x` for `cell` as observation number `sample` (0-based) of the
    /// shared stream. All skipped earlier samples count as zeros.
    #[inline]
    pub fn push(&mut self, cell: usize, sample: u64, x: f64) {
        let seen = self.seen[cell];
        debug_assert!(sample >= seen, "samples must arrive in stream order");
        if sample > seen {
            self.absorb_zeros(cell, sample - seen);
        }
        let n = sample + 1;
        let delta = x - self.mean[cell];
        self.mean[cell] += delta / n as f64;
        self.m2[cell] += delta * (x - self.mean[cell]);
        self.seen[cell] = n;
    }

    #[inline]
    fn absorb_zeros(&mut self, cell: usize, zeros: u64) {
        let seen = self.seen[cell];
        let n = seen + zeros;
        let mean = self.mean[cell];
        let w = zeros as f64 / n as f64;
        self.m2[cell] += mean * mean * seen as f64 * w;
        self.mean[cell] = mean - mean * w;
        self.seen[cell] = n;
    }

    /// Closes the stream at `total` samples and returns per-cell
    /// `(mean, population std)`.
    pub fn finish(mut self, total: u64) -> (Vec<f64>, Vec<f64>) {
        for cell in 0..self.seen.len() {
            let seen = self.seen[cell];
            assert!(seen <= total, "cell {cell} saw more samples than the stream");
            if total > seen {
                self.absorb_zeros(cell, total - seen);
            }
        }
        let std = self
            .m2
            .iter()
            .map(|&m2| if total == 0 { 0.0 } else { (m2 / total as f64).max(0.0).sqrt() })
            .collect();
        (self.mean, std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn running_stats_basic() {
        let mut s = RunningStats::new();
        for x in [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0] {
            s.push(x);
        }
        assert_eq!(s.count(), 8);
        assert!((s.mean() - 5.0).abs() < 1e-12);
        assert!((s.std() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_single() {
        let s = RunningStats::new();
        assert_eq!((s.mean(), s.std()), (0.0, 0.0));
        let mut s = RunningStats::new();
        s.push(3.5);
        assert_eq!((s.mean(), s.std()), (3.5, 0.0));
    }

    proptest! {
        #[test]
        fn merge_equals_sequential(xs in prop::collection::vec(-1e3f64..1e3, 1..60), cut in 0usize..60) {
            let cut = cut.min(xs.len());
            let mut all = RunningStats::new();
            xs.iter().for_each(|&x| all.push(x));
            let (mut a, mut b) = (RunningStats::new(), RunningStats::new());
            xs[..cut].iter().for_each(|&x| a.push(x));
            xs[cut..].iter().for_each(|&x| b.push(x));
            a.merge(&b);
            prop_assert_eq!(a.count(), all.count());
            prop_assert!((a.mean() - all.mean()).abs() <= 1e-9 * (1.0 + all.mean().abs()));
            prop_assert!((a.std() - all.std()).abs() <= 1e-9 * (1.0 + all.std()));
        }

        #[test]
        fn zero_skipping_matches_dense(xs in prop::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..100.0], 1..80)) {
            let mut grid = ZeroSkippingWelford::new(1);
            for (t, &x) in xs.iter().enumerate() {
                if x != 0.0 {
                    grid.push(0, t as u64, x);
                }
            }
            let (mean, std) = grid.finish(xs.len() as u64);
            let (m, s) = two_pass(&xs);
            prop_assert!((mean[0] - m).abs() <= 1e-9 * (1.0 + m.abs()));
            prop_assert!((std[0] - s).abs() <= 1e-9 * (1.0 + s));
        }
    }

    #[test]
    fn untouched_cells_are_zero() {
        let mut grid = ZeroSkippingWelford::new(3);
        grid.push(1, 4, 2.0);
        let (mean, std) = grid.finish(10);
        assert_eq!(mean[0], 0.0);
        assert_eq!(std[2], 0.0);
        assert!((mean[1] - 0.2).abs() < 1e-15);
        assert!((std[1] - (0.36f64).sqrt()).abs() < 1e-12);
    }
}
