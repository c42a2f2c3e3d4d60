//! Largest-remainder (Hamilton) apportionment of an integer total.

use crate::error::{Error, Result};

/// Split `total` units across `quotas` (real-valued, summing to `total`
/// up to rounding) so that each share is the floor of its quota plus at most
/// one extra unit. Leftover units go to the largest fractional parts; ties
/// favour the lowest index.
pub fn largest_remainder(quotas: &[f64], total: usize) -> Result<Vec<usize>> {
    if quotas.is_empty() {
        return Err(Error::Argument("no quotas to apportion".into()));
    }
    if quotas.iter().any(|q| !q.is_finite() || *q < 0.0) {
        return Err(Error::Argument(format!(
            "quotas must be finite and nonnegative: {quotas:?}"
        )));
    }
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();

    if assigned <= total {
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        // stable sort keeps lowest index first among equal remainders
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra)
        });
        let mut left = total - assigned;
        let mut i = 0;
        while left > 0 {
            counts[order[i % order.len()]] += 1;
            left -= 1;
            i += 1;
        }
    } else {
        // Quotas overshoot the total (float drift): take units back from the
        // smallest remainders, highest index first.
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            ra.total_cmp(&rb).then(b.cmp(&a))
        });
        let mut excess = assigned - total;
        let mut i = 0;
        while excess > 0 {
            let j = order[i % order.len()];
            if counts[j] > 0 {
                counts[j] -= 1;
                excess -= 1;
            }
            i += 1;
        }
    }
    Ok(counts)
}
