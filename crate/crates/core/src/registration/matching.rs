use rayon::prelude::*;

use super::Descriptor;

/// Nearest and second-nearest squared distances from `q` into `set`.
fn two_nearest(q: &Descriptor, set: &[Descriptor]) -> (usize, f32, f32) {
    let (mut best, mut d1, mut d2) = (usize::MAX, f32::INFINITY, f32::INFINITY);
    for (j, c) in set.iter().enumerate() {
        let d: f32 = q.0.iter().zip(&c.0).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < d1 {
            d2 = d1;
            d1 = d;
            best = j;
        } else if d < d2 {
            d2 = d;
        }
    }
    (best, d1, d2)
}

fn passes_ratio(d1: f32, d2: f32, ratio: f32) -> bool {
    // distances are squared
    d1.sqrt() < ratio * d2.sqrt()
}

/// Mutual nearest neighbors that pass the ratio test in both directions.
///
/// Returns `(index_in_a, index_in_b)` pairs sorted by `a` index. The result
/// is symmetric: swapping `a` and `b` yields the transposed pairs.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], ratio: f32) -> Vec<(usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let ab: Vec<_> = a.par_iter().map(|q| two_nearest(q, b)).collect();
    let ba: Vec<_> = b.par_iter().map(|q| two_nearest(q, a)).collect();
    ab.iter()
        .enumerate()
        .filter_map(|(i, &(j, d1, d2))| {
            let (back, e1, e2) = ba[j];
            (back == i && passes_ratio(d1, d2, ratio) && passes_ratio(e1, e2, ratio)).then_some((i, j))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::DESCRIPTOR_LEN;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut v = [0.0f32; DESCRIPTOR_LEN];
                v.iter_mut().for_each(|x| *x = rng.random::<f32>());
                Descriptor::from_raw(v)
            })
            .collect()
    }

    /// Exhaustive O(n·m) oracle working in f64 Euclidean distances.
    fn brute_force(a: &[Descriptor], b: &[Descriptor], ratio: f64) -> Vec<(usize, usize)> {
        let dist = |x: &Descriptor, y: &Descriptor| -> f64 {
            x.0.iter()
                .zip(&y.0)
                .map(|(p, q)| (*p as f64 - *q as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let nn = |q: &Descriptor, set: &[Descriptor]| -> (usize, f64, f64) {
            let mut d: Vec<(f64, usize)> = set.iter().enumerate().map(|(i, c)| (dist(q, c), i)).collect();
            d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            (d[0].1, d[0].0, d.get(1).map_or(f64::INFINITY, |v| v.0))
        };
        let mut out = Vec::new();
        for (i, q) in a.iter().enumerate() {
            let (j, d1, d2) = nn(q, b);
            let (k, e1, e2) = nn(&b[j], a);
            if k == i && d1 < ratio * d2 && e1 < ratio * e2 {
                out.push((i, j));
            }
        }
        out
    }

    #[test]
    fn self_match_is_identity() {
        let a = random_set(50, 1);
        let m = match_descriptors(&a, &a, 0.8);
        assert_eq!(m, (0..50).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn negated_vector_is_unmatched() {
        let a = random_set(40, 2);
        let mut b = a.clone();
        let mut neg = b[7].0;
        neg.iter_mut().for_each(|v| *v = -*v);
        b[7] = Descriptor::from_raw(neg);
        let m = match_descriptors(&a, &b, 0.8);
        assert!(m.iter().all(|&(i, j)| i != 7 && j != 7));
        assert_eq!(m.len(), 39);
    }

    #[test]
    fn matches_brute_force_oracle() {
        for seed in 0..5 {
            let a = random_set(100, 10 + seed);
            // b: perturbed copies of a in shuffled order plus distractors
            let mut rng = ChaCha8Rng::seed_from_u64(99 + seed);
            let mut b: Vec<Descriptor> = a
                .iter()
                .map(|d| {
                    let mut v = d.0;
                    v.iter_mut().for_each(|x| *x += rng.random_range(-0.05..0.05));
                    Descriptor::from_raw(v)
                })
                .collect();
            b.extend(random_set(30, 500 + seed));
            b.reverse();
            for ratio in [0.6f32, 0.8, 0.95] {
                let got = match_descriptors(&a, &b, ratio);
                assert_eq!(got, brute_force(&a, &b, ratio as f64));
            }
            let pure = random_set(100, 900 + seed);
            assert_eq!(match_descriptors(&a, &pure, 0.9), brute_force(&a, &pure, 0.9));
        }
    }

    #[test]
    fn empty_inputs_give_no_matches() {
        let a = random_set(3, 4);
        assert!(match_descriptors(&a, &[], 0.8).is_empty());
        assert!(match_descriptors(&[], &a, 0.8).is_empty());
    }
}
