use std::collections::HashMap;
use std::hash::Hash;

fn comb2(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index of two labelings of the same points.
///
/// Two labelings that are both trivial in the same way (everything together
/// or everything apart) score 1.
///
/// # Panics
/// If the labelings differ in length.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> f64
where
    A: Eq + Hash + Copy,
    B: Eq + Hash + Copy,
{
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u64;
    let mut joint: HashMap<(A, B), u64> = HashMap::new();
    let mut rows: HashMap<A, u64> = HashMap::new();
    let mut cols: HashMap<B, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&c| comb2(c)).sum();
    let sa: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sb: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 2], &[5, 5, 7, 9]), 1.0);
    }

    #[test]
    fn one_cluster_vs_singletons() {
        assert_eq!(adjusted_rand_index(&[0, 0, 0, 0], &[0, 1, 2, 3]), 0.0);
    }

    #[test]
    fn six_point_hand_case() {
        // a = 000111, b = 001122
        // contingency: (0,0)=2 (0,1)=1 (1,1)=1 (1,2)=2
        // index = 1+0+0+1 = 2; sa = 3+3 = 6; sb = 1+1+1 = 3; total = 15
        // expected = 18/15 = 1.2; max = 4.5; ari = 0.8 / 3.3
        let ari = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]);
        assert!((ari - 0.8 / 3.3).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_label_invariant() {
        let a = [0, 1, 1, 2, 2, 2, 0];
        let b = [1, 1, 0, 0, 2, 2, 2];
        let x = adjusted_rand_index(&a, &b);
        assert!((x - adjusted_rand_index(&b, &a)).abs() < 1e-15);
        let relabel: Vec<i32> = a.iter().map(|v| 10 - v).collect();
        assert!((x - adjusted_rand_index(&relabel, &b)).abs() < 1e-15);
    }
}
