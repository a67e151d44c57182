use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxsource::featsel::{self, Correlations, DiscreteDataset};

const CLASSES: [&str; 4] = ["headphone", "human", "ipod", "loudspeaker"];

/// Rows whose first three dims are noisy copies of the class index; the rest
/// are uniform noise.
fn informative_dataset(
    seed: u64,
    n_per_class: usize,
    dim: usize,
) -> (Vec<Vec<f64>>, Vec<&'static str>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, name) in CLASSES.iter().enumerate() {
        for _ in 0..n_per_class {
            let row: Vec<f64> = (0..dim)
                .map(|d| {
                    if d < 3 {
                        c as f64 + rng.random_range(-0.3..0.3)
                    } else {
                        rng.random_range(0.0..1.0)
                    }
                })
                .collect();
            rows.push(row);
            labels.push(*name);
        }
    }
    (rows, labels)
}

#[test]
fn class_encoding_dims_are_recovered() {
    let (rows, labels) = informative_dataset(5, 50, 204);
    let subset = featsel::select_features(&rows, &labels).unwrap();
    for d in 0..3 {
        assert!(subset.indices.contains(&d), "{:?}", subset.indices);
    }
    assert!(subset.indices.len() <= 8, "{:?}", subset.indices);
    let again = featsel::select_features(&rows, &labels).unwrap();
    assert_eq!(subset, again);
}

fn entropy(counts: &BTreeMap<(usize, usize), usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Symmetric uncertainty from joint and marginal counts, natural log.
fn su_oracle(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len() as f64;
    let mut joint = BTreeMap::new();
    let mut mx = BTreeMap::new();
    let mut my = BTreeMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *joint.entry((a, b)).or_insert(0) += 1;
        *mx.entry((a, 0)).or_insert(0) += 1;
        *my.entry((0, b)).or_insert(0) += 1;
    }
    let (hx, hy, hxy) = (entropy(&mx, n), entropy(&my, n), entropy(&joint, n));
    if hx + hy == 0.0 {
        return 0.0;
    }
    2.0 * (hx + hy - hxy) / (hx + hy)
}

fn merit_oracle(subset: &[usize], data: &DiscreteDataset) -> f64 {
    let k = subset.len() as f64;
    let rcf = subset
        .iter()
        .map(|&i| su_oracle(&data.columns[i], &data.classes))
        .sum::<f64>()
        / k;
    let mut pairs = Vec::new();
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            pairs.push(su_oracle(&data.columns[i], &data.columns[j]));
        }
    }
    let rff = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().sum::<f64>() / pairs.len() as f64
    };
    k * rcf / (k + k * (k - 1.0) * rff).sqrt()
}

#[test]
fn merit_matches_oracle_on_every_small_subset() {
    let (rows, labels) = informative_dataset(11, 25, 6);
    let data = DiscreteDataset::new(&rows, &labels).unwrap();
    let corr = Correlations::compute(&data);
    let mut best = 0.0f64;
    for mask in 1u32..(1 << 6) {
        let subset: Vec<usize> = (0..6).filter(|b| mask & (1 << b) != 0).collect();
        let got = featsel::cfs_merit(&subset, &corr).unwrap();
        let want = merit_oracle(&subset, &data);
        assert!((got - want).abs() < 1e-12, "{subset:?}: {got} vs {want}");
        best = best.max(want);
    }
    let found = featsel::best_first_search(&corr);
    assert!((found.merit - merit_oracle(&found.indices, &data)).abs() < 1e-12);
    assert!(
        found.merit >= best - 1e-12,
        "search {} exhaustive {best}",
        found.merit
    );
}

#[test]
fn discretization_is_equal_frequency() {
    let values: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
    let bins = featsel::discretize(&values, 10);
    let mut counts = [0; 10];
    for b in &bins {
        counts[*b] += 1;
    }
    assert_eq!(counts, [10; 10]);
    let flat = featsel::discretize(&[3.0; 20], 10);
    assert!(flat.iter().all(|&b| b == flat[0]));
}

#[test]
fn noise_dims_have_low_class_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|_| (0..20).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let labels: Vec<&str> = (0..400).map(|i| CLASSES[i % 4]).collect();
    let data = DiscreteDataset::new(&rows, &labels).unwrap();
    for d in 0..20 {
        let r = data.feature_class_correlation(d);
        assert!(r < 0.1, "dim {d}: {r}");
    }
}

#[test]
fn duplicating_a_selected_dimension_never_raises_merit() {
    for seed in [23, 24, 25] {
        let (rows, labels) = informative_dataset(seed, 30, 12);
        let selected = featsel::select_features(&rows, &labels).unwrap();
        for &d in &selected.indices {
            let widened: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.push(r[d]);
                    r
                })
                .collect();
            let corr = Correlations::compute(&DiscreteDataset::new(&widened, &labels).unwrap());
            let before = featsel::cfs_merit(&selected.indices, &corr).unwrap();
            let mut with_copy = selected.indices.clone();
            with_copy.push(rows[0].len());
            let after = featsel::cfs_merit(&with_copy, &corr).unwrap();
            assert!((before - selected.merit).abs() < 1e-12);
            assert!(
                after <= before + 1e-12,
                "seed {seed} dim {d}: {before} -> {after}"
            );
        }
    }
}

#[test]
fn pooled_dims_are_described() {
    let (stat, family, index) = featsel::describe_pooled_dim(0);
    assert_eq!((stat, index), ("max", None));
    assert!(!family.is_empty());
    let (stat, _, index) = featsel::describe_pooled_dim(68 * 2 + 5 + 3);
    assert_eq!((stat, index), ("mean", Some(3)));
}
