mod common;

use cellprop::contribution::max_projection;
use cellprop::detector::{tile_origins, Detector, NetConfig};
use cellprop::evaluation::{f_measure, mdice};
use cellprop::graphcut::max_flow;
use cellprop::likelihood::render_likelihood;
use cellprop::peaks::detect_centers;
use cellprop::{CentroidAnnotation, InstanceLabeling, LikelihoodMap, Plane};
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn points(max: usize, w: f64, h: f64) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-0.5..w - 0.5, -0.5..h - 0.5), 0..max)
}

fn uniform_plane(r: &mut impl Rng, w: usize, h: usize) -> Plane {
    Plane::from_vec(w, h, (0..w * h).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

fn random_planes(r: &mut impl Rng, k: usize, w: usize, h: usize) -> Vec<Plane> {
    (0..k)
        .map(|_| {
            // Coarse values so ties and zeros actually occur.
            let v = (0..w * h)
                .map(|_| if r.random_bool(0.3) { 0.0 } else { r.random_range(0..5) as f64 / 4.0 })
                .collect();
            Plane::from_vec(w, h, v).unwrap()
        })
        .collect()
}

/// True when some truth cell has two predicted cells tied for best overlap.
fn has_overlap_ties(pred: &InstanceLabeling, truth: &InstanceLabeling) -> bool {
    truth.distinct().into_iter().any(|t| {
        let mut counts = std::collections::BTreeMap::new();
        for (&a, &b) in truth.labels().iter().zip(pred.labels()) {
            if a == t && b != 0 {
                *counts.entry(b).or_insert(0usize) += 1;
            }
        }
        let max = counts.values().copied().max().unwrap_or(0);
        counts.values().filter(|&&c| c == max).count() > 1
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn max_flow_equals_exhaustive_min_cut(seed in any::<u64>()) {
        let g = random_graph(&mut rng(seed), 12);
        let f = max_flow(&g);
        let cut = brute_min_cut(&g);
        prop_assert_eq!(f.value, cut);
        prop_assert_eq!(g.cut_capacity(&f.source_side), cut);
        // Conservation and capacity on every arc.
        let mut net = vec![0.0; g.nodes()];
        for (a, &fl) in g.arcs().iter().zip(&f.arc_flow) {
            prop_assert!(fl >= 0.0 && fl <= a.cap);
            net[a.from] -= fl;
            net[a.to] += fl;
        }
        for v in 0..g.nodes() {
            if v != g.source() && v != g.sink() {
                prop_assert_eq!(net[v], 0.0);
            }
        }
        prop_assert_eq!(net[g.sink()], f.value);
    }

    #[test]
    fn projection_matches_brute_force(seed in any::<u64>(), k in 1usize..=5) {
        let raw = random_planes(&mut rng(seed), k, 8, 8);
        let c = max_projection(&raw);
        prop_assert_eq!(&c, &brute_projection(&raw));
        for i in 0..64 {
            prop_assert!(c.iter().filter(|p| p.data()[i] > 0.0).count() <= 1);
            let kept: f64 = c.iter().map(|p| p.data()[i]).sum();
            let max = raw.iter().map(|p| p.data()[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(kept, max.max(0.0));
        }
        prop_assert_eq!(max_projection(&c), c);
    }

    #[test]
    fn projection_commutes_with_strict_permutations(seed in any::<u64>(), k in 1usize..=5) {
        // Distinct values per pixel so there are no ties to break.
        let mut r = rng(seed);
        let raw: Vec<Plane> = (0..k).map(|_| uniform_plane(&mut r, 6, 6)).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut r);
        let permuted: Vec<Plane> = order.iter().map(|&i| raw[i].clone()).collect();
        let a = max_projection(&raw);
        let b = max_projection(&permuted);
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(&b[j], &a[i]);
        }
    }

    #[test]
    fn likelihood_ignores_point_order(mut pts in points(8, 20.0, 16.0), seed in any::<u64>()) {
        let a = render_likelihood(&CentroidAnnotation::new("a", pts.clone()), 20, 16, 3.0).unwrap();
        pts.shuffle(&mut rng(seed));
        let b = render_likelihood(&CentroidAnnotation::new("a", pts), 20, 16, 3.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn likelihood_translates_with_points(pts in points(4, 12.0, 12.0), dx in 0usize..8, dy in 0usize..8) {
        // A shifted copy on a larger canvas, far enough from the border that
        // nothing is truncated differently.
        let big = 12 + 8 + 24;
        let off = 12.0;
        let a = render_likelihood(&CentroidAnnotation::new("a", pts.iter().map(|p| (p.0 + off, p.1 + off)).collect()), big, big, 2.0).unwrap();
        let b = render_likelihood(
            &CentroidAnnotation::new("b", pts.iter().map(|p| (p.0 + off + dx as f64, p.1 + off + dy as f64)).collect()),
            big, big, 2.0,
        ).unwrap();
        for y in 0..big - dy {
            for x in 0..big - dx {
                prop_assert!((a.get(x, y) - b.get(x + dx, y + dy)).abs() < 1e-12);
            }
        }
        prop_assert!(a.plane().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn raising_threshold_only_shrinks_regions(seed in any::<u64>(), t1 in 0.0f64..0.9, dt in 0.0f64..0.5) {
        let mut r = rng(seed);
        let y = LikelihoodMap(uniform_plane(&mut r, 12, 10));
        let low = detect_centers(&y, t1);
        let high = detect_centers(&y, t1 + dt);
        for h in &high {
            prop_assert!(low.iter().any(|l| h.pixels.iter().all(|p| l.pixels.contains(p))));
            prop_assert!(h.pixels.iter().all(|&(x, yy)| y.get(x, yy) > t1 + dt));
        }
        let total = |rs: &[cellprop::CenterRegion]| rs.iter().map(|r| r.area()).sum::<usize>();
        prop_assert!(total(&high) <= total(&low));
    }

    #[test]
    fn mdice_ignores_prediction_ids(seed in any::<u64>()) {
        let mut r = rng(seed);
        let truth = InstanceLabeling::from_vec(7, 5, (0..35).map(|_| r.random_range(0..4)).collect()).unwrap();
        let pred = InstanceLabeling::from_vec(7, 5, (0..35).map(|_| r.random_range(0..5)).collect()).unwrap();
        let mut ids: Vec<u32> = (1..=20).collect();
        ids.shuffle(&mut r);
        let relabeled = InstanceLabeling::from_vec(
            7, 5,
            pred.labels().iter().map(|&l| if l == 0 { 0 } else { ids[l as usize - 1] }).collect(),
        ).unwrap();
        let a = mdice(&pred, &truth).unwrap();
        let b = mdice(&relabeled, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.mdice));
        if !has_overlap_ties(&pred, &truth) {
            prop_assert_eq!(a.mdice, b.mdice);
        }
        prop_assert_eq!(mdice(&truth, &truth).unwrap().mdice, 1.0);
    }

    #[test]
    fn f_measure_symmetric_in_errors(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        prop_assume!(tp + fp + fn_ > 0);
        let a = f_measure(tp, fp, fn_).unwrap();
        prop_assert_eq!(a, f_measure(tp, fn_, fp).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn tiled_inference_matches_single_tiles_in_interior_band() {
    let cfg = NetConfig {
        depth: 1,
        base_channels: 3,
        input_size: 16,
        ..NetConfig::default()
    };
    let det = Detector::untrained(&cfg).unwrap();
    let t = 16;
    let mut r = rng(7);
    for (w, h) in [(28, 28), (16, 28), (40, 21)] {
        let img = uniform_plane(&mut r, w, h);
        let (tiled, traces) = det.infer_tiled(&img).unwrap();
        assert_eq!(traces.len(), tile_origins(w, t).unwrap().len() * tile_origins(h, t).unwrap().len());
        for tr in &traces {
            let (single, _) = det.infer(&img.crop(tr.x0, tr.y0, t, t)).unwrap();
            for ty in t / 4..3 * t / 4 {
                for tx in t / 4..3 * t / 4 {
                    let (gx, gy) = (tr.x0 + tx, tr.y0 + ty);
                    let covering = traces
                        .iter()
                        .filter(|o| gx >= o.x0 && gx < o.x0 + t && gy >= o.y0 && gy < o.y0 + t)
                        .count();
                    if covering == 1 {
                        assert_eq!(tiled.get(gx, gy), single.get(tx, ty));
                    }
                }
            }
        }
    }
    // Uniform 2x2 tiling: every tile sees the same input.
    let img = Plane::filled(28, 28, 0.4);
    let (tiled, traces) = det.infer_tiled(&img).unwrap();
    assert_eq!(traces.len(), 4);
    let (single, _) = det.infer(&img.crop(0, 0, t, t)).unwrap();
    for tr in &traces {
        for ty in t / 4..3 * t / 4 {
            for tx in t / 4..3 * t / 4 {
                assert_eq!(tiled.get(tr.x0 + tx, tr.y0 + ty), single.get(tx, ty));
            }
        }
    }
}
