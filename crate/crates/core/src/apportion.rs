//! Largest-remainder (Hamilton) apportionment.

/// Splits `seats` among entries proportionally to `weights`. Floors of the
/// exact quotas are assigned first; leftover seats go to the largest
/// remainders, ties to the lower index. Non-positive total weight yields all
/// zeros.
pub fn largest_remainder(weights: &[f64], seats: usize) -> Vec<usize> {
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    if weights.is_empty() || !(total > 0.0) || !total.is_finite() {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| w.max(0.0) / total * seats as f64)
        .collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(seats.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        assert_eq!(largest_remainder(&[0.5, 0.3, 0.2], 10), vec![5, 3, 2]);
        assert_eq!(largest_remainder(&[0.25; 4], 8), vec![2, 2, 2, 2]);
        assert_eq!(
            largest_remainder(&[0.0, 0.0, 1.0, 0.0], 10),
            vec![0, 0, 10, 0]
        );
        // quotas 3.5, 3.5, 3.0: one extra seat, lower index wins the tie
        assert_eq!(largest_remainder(&[3.5, 3.5, 3.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 5), vec![0, 0]);
    }

    #[test]
    fn sums_to_seats() {
        let w = [0.13, 0.41, 0.07, 0.39];
        for seats in 0..50 {
            assert_eq!(largest_remainder(&w, seats).iter().sum::<usize>(), seats);
        }
    }
}
