/// Largest-remainder rounding: integer counts summing to `total`, each within
/// one of its real-valued share. Ties in the remainder go to the lower index.
///
/// `shares` must be nonnegative and sum to `total` up to floating error.
pub(crate) fn largest_remainder(total: usize, shares: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = shares.iter().map(|s| s.max(0.0).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    if assigned >= total {
        // Only reachable through float error on shares that were already integral.
        let mut excess = assigned - total;
        for c in counts.iter_mut().rev() {
            let take = excess.min(*c);
            *c -= take;
            excess -= take;
        }
        return counts;
    }
    let mut order: Vec<usize> = (0..shares.len()).collect();
    let frac = |i: usize| shares[i].max(0.0) - shares[i].max(0.0).floor();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_shares_pass_through() {
        assert_eq!(largest_remainder(10, &[2.0, 8.0]), vec![2, 8]);
        assert_eq!(largest_remainder(100, &[80.0, 10.0, 10.0]), vec![80, 10, 10]);
    }

    #[test]
    fn remainders_go_to_largest_fraction_then_lowest_index() {
        assert_eq!(largest_remainder(3, &[1.5, 1.5]), vec![2, 1]);
        assert_eq!(largest_remainder(10, &[3.3, 3.3, 3.4]), vec![3, 3, 4]);
    }
}
