use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ssal::cluster::{assign, kmeans, KMeansOptions};
use ssal::deform::{deform, local_shuffle, DeformConfig};
use ssal::features::{adaptive_avg_pool, FeatureMatrix};
use ssal::imaging::{preprocess, Image, Mask};
use ssal::net::FeatureMap;
use ssal::select::{allocate, rank_representatives, select_initial, select_random};
use ssal::seg::{dice_coefficient, soft_dice_loss};

fn matrix(n: usize, d: usize) -> impl Strategy<Value = FeatureMatrix> {
    prop::collection::vec(-10.0f32..10.0, n * d)
        .prop_map(move |rows| FeatureMatrix::new((0..n).map(|i| format!("s{i:03}")).collect(), rows, d, 1).unwrap())
}

fn sized_matrix() -> impl Strategy<Value = FeatureMatrix> {
    (1usize..40, 1usize..5).prop_flat_map(|(n, d)| matrix(n, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn allocation_is_exact_and_bounded(sizes in prop::collection::vec(0usize..50, 1..12), frac in 0.0f64..=1.0) {
        let total: usize = sizes.iter().sum();
        let c = (frac * total as f64).floor() as usize;
        let q = allocate(&sizes, c).unwrap();
        prop_assert_eq!(q.iter().sum::<usize>(), c);
        for (a, n) in q.iter().zip(&sizes) {
            prop_assert!(a <= n);
            // never further than one from the exact quota
            let quota = c as f64 * *n as f64 / total.max(1) as f64;
            prop_assert!((*a as f64 - quota).abs() < 1.0 + 1e-9);
        }
        prop_assert!(allocate(&sizes, total + 1).is_err());
    }

    #[test]
    fn dice_is_symmetric_and_bounded(a in prop::collection::vec(0u8..2, 36), b in prop::collection::vec(0u8..2, 36)) {
        let p = Mask::new("p", 6, 6, a).unwrap();
        let g = Mask::new("g", 6, 6, b).unwrap();
        let d = dice_coefficient(&p, &g).unwrap();
        prop_assert_eq!(d, dice_coefficient(&g, &p).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(dice_coefficient(&p, &p).unwrap(), 1.0);
    }

    #[test]
    fn soft_dice_stays_in_unit_interval(probs in prop::collection::vec(1e-6f64..1.0, 16), bits in prop::collection::vec(0u8..2, 16), smooth in 0.01f64..5.0) {
        let g = Mask::new("g", 4, 4, bits).unwrap();
        let l = soft_dice_loss(&probs, &g, smooth).unwrap();
        prop_assert!((0.0..1.0).contains(&l));
    }

    #[test]
    fn preprocess_is_idempotent_on_full_range_images(mut px in prop::collection::vec(0.0f32..=1.0, 64)) {
        px[0] = 0.0;
        px[63] = 1.0;
        let once = preprocess("x", &px, (8, 8), (8, 8)).unwrap();
        prop_assert_eq!(&once.pixels, &px);
        let twice = preprocess("x", &once.pixels, (8, 8), (8, 8)).unwrap();
        prop_assert_eq!(twice.pixels, once.pixels);
    }

    #[test]
    fn shuffle_preserves_multiset_and_deform_preserves_range(px in prop::collection::vec(0.0f32..=1.0, 256), seed in any::<u64>()) {
        let img = Image::new("x", 16, 16, px).unwrap();
        let cfg = DeformConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = local_shuffle(&img, &mut rng, &cfg).unwrap();
        let mut a = img.pixels.clone();
        let mut b = out.pixels.clone();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        prop_assert_eq!(a, b);
        let d = deform(&img, &mut rng, &cfg).unwrap();
        prop_assert!(d.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        let none = DeformConfig::identity();
        prop_assert_eq!(deform(&img, &mut rng, &none).unwrap(), img);
    }

    #[test]
    fn pooling_a_constant_map_gives_the_constant(c in 1usize..4, h in 1usize..9, w in 1usize..9, g in 1usize..9, v in -5.0f32..5.0) {
        prop_assume!(g <= h && g <= w);
        let m = FeatureMap { channels: c, height: h, width: w, data: vec![v; c * h * w] };
        let p = adaptive_avg_pool(&m, g).unwrap();
        prop_assert_eq!(p.data.len(), c * g * g);
        prop_assert!(p.data.iter().all(|x| (x - v).abs() <= 1e-5 * v.abs().max(1.0)));
    }

    #[test]
    fn kmeans_postconditions(f in sized_matrix(), k in 1usize..6, seed in any::<u64>()) {
        prop_assume!(k <= f.len());
        let m = kmeans(&f, k, seed, 100).unwrap();
        prop_assert!(m.assignment.iter().all(|&a| a < k));
        prop_assert!(m.cluster_sizes().iter().all(|&s| s >= 1));
        let re = m.recompute_inertia(&f);
        prop_assert!((re - m.inertia).abs() <= 1e-9 * re.max(1.0));
        for w in m.history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0));
        }
        if m.converged {
            let (labels, dist) = assign(&f, &m.centroids).unwrap();
            prop_assert_eq!(&labels, &m.assignment);
            for (a, b) in dist.iter().zip(&m.distances) {
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            }
        }
    }

    #[test]
    fn rankings_are_sorted_and_partition_the_rows(f in sized_matrix(), k in 1usize..5, seed in any::<u64>()) {
        prop_assume!(k <= f.len());
        let m = kmeans(&f, k, seed, 100).unwrap();
        let ranks = rank_representatives(&f, &m).unwrap();
        let mut seen = BTreeSet::new();
        for (j, r) in ranks.iter().enumerate() {
            prop_assert_eq!(r.len(), m.cluster_sizes()[j]);
            for w in r.windows(2) {
                prop_assert!((w[0].distance, &w[0].id) <= (w[1].distance, &w[1].id));
            }
            for e in r {
                prop_assert!(seen.insert(e.id.clone()));
            }
        }
        prop_assert_eq!(seen.len(), f.len());
    }

    #[test]
    fn initial_selection_follows_the_allocation(f in sized_matrix(), k in 1usize..5, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        prop_assume!(k <= f.len());
        let budget = (frac * f.len() as f64) as usize;
        let opts = KMeansOptions { restarts: 2, ..KMeansOptions::default() };
        let sel = select_initial(&f, k, budget, seed, &opts).unwrap();
        let ids: BTreeSet<String> = sel.result.ids().into_iter().collect();
        prop_assert_eq!(ids.len(), budget);
        prop_assert_eq!(&sel.state.labeled, &ids);
        prop_assert_eq!(sel.state.pool.len() + budget, f.len());
        let sizes = sel.clusters.as_ref().unwrap().cluster_sizes();
        let quotas = allocate(&sizes, budget).unwrap();
        for (j, q) in quotas.iter().enumerate() {
            prop_assert_eq!(sel.result.chosen.iter().filter(|c| c.cluster == Some(j)).count(), *q);
        }
    }

    #[test]
    fn random_selection_is_a_distinct_subset(n in 0usize..60, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let pool: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let m = (frac * n as f64) as usize;
        let got = select_random(&pool, m, seed).unwrap();
        let set: BTreeSet<&String> = got.iter().collect();
        prop_assert_eq!(set.len(), m);
        prop_assert!(got.iter().all(|id| pool.contains(id)));
        prop_assert_eq!(&got, &select_random(&pool, m, seed).unwrap());
        prop_assert!(select_random(&pool, n + 1, seed).is_err());
    }

    #[test]
    fn feature_store_round_trips(f in sized_matrix()) {
        let mut buf = Vec::new();
        f.write(&mut buf).unwrap();
        prop_assert_eq!(FeatureMatrix::read(buf.as_slice()).unwrap(), f);
    }
}

#[test]
fn random_selection_is_uniform() {
    let pool: Vec<String> = (0..10).map(|i| format!("id{i}")).collect();
    let mut counts = [0usize; 10];
    for t in 0..10_000u64 {
        for id in select_random(&pool, 1, t).unwrap() {
            counts[id[2..].parse::<usize>().unwrap()] += 1;
        }
    }
    for c in counts {
        assert!((900..=1100).contains(&c), "{counts:?}");
    }
}

#[test]
fn largest_remainder_is_not_monotone_in_the_budget() {
    // the Alabama paradox: one more seat costs the small cluster its only one
    assert_eq!(allocate(&[6, 6, 2], 10).unwrap(), vec![4, 4, 2]);
    assert_eq!(allocate(&[6, 6, 2], 11).unwrap(), vec![5, 5, 1]);
}

#[test]
fn feature_store_rejects_damage() {
    let f = FeatureMatrix::new(vec!["a".into(), "b".into()], vec![1.0, 2.0, 3.0, 4.0], 2, 1).unwrap();
    let mut buf = Vec::new();
    f.write(&mut buf).unwrap();
    assert!(FeatureMatrix::read(&buf[..buf.len() - 2]).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(FeatureMatrix::read(bad.as_slice()).is_err());
    let mut extra = buf;
    extra.push(1);
    assert!(FeatureMatrix::read(extra.as_slice()).is_err());
}
