use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roiattn_core::attention::{double_normalize, DNORM_EPS, stack_forward, RoiAttentionStack};
use roiattn_core::boxes::{decode_deltas, encode_deltas, iou, nms};
use roiattn_core::checks::{oracle_map, random_map_instance};
use roiattn_core::config::{DetectionConfig, KEYS};
use roiattn_core::eval::{coco_thresholds, evaluate_map, Detection, GroundTruth};
use roiattn_core::graph::Graph;
use roiattn_core::params::ParamStore;
use roiattn_core::roi::{roi_align, scale_box, BoxXYXY, RoiGrid};
use roiattn_core::scene::{assign_and_encode, generate_scene, make_proposals, ProposalConfig, FG_IOU, IMAGE_SIZE, MAX_OBJECTS};
use roiattn_core::NUM_CLASSES;
use roiattn_core::tensor::Tensor;

fn boxes_in(size: f32) -> impl Strategy<Value = BoxXYXY> {
    (0.0..size - 4.0, 0.0..size - 4.0, 4.0..size, 4.0..size).prop_map(move |(x, y, w, h)| {
        BoxXYXY::new(x, y, (x + w).min(size), (y + h).min(size))
    })
}

fn matrix(max: usize) -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-4.0f32..4.0, r * c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in boxes_in(128.0), b in boxes_in(128.0)) {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn deltas_round_trip(p in boxes_in(128.0), t in boxes_in(128.0)) {
        let back = decode_deltas(&p, &encode_deltas(&p, &t));
        for (u, v) in [(back.x1, t.x1), (back.y1, t.y1), (back.x2, t.x2), (back.y2, t.y2)] {
            prop_assert!((u - v).abs() <= 1e-5, "{u} vs {v}");
        }
    }

    #[test]
    fn softmax_slices_sum_to_one((r, c, data) in matrix(12), dim in 0usize..2) {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[r, c], data).unwrap(), false);
        let s = g.softmax_dim(x, dim).unwrap();
        let v = g.value(s);
        prop_assert!(v.iter().all(|&e| e > 0.0));
        let (outer, inner) = if dim == 0 { (c, r) } else { (r, c) };
        for o in 0..outer {
            let sum: f64 = (0..inner)
                .map(|i| if dim == 0 { v[i * c + o] } else { v[o * c + i] } as f64)
                .sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn dnorm_rows_match_their_eps_adjusted_mass((r, c, data) in matrix(24)) {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[r, c], data.clone()).unwrap(), false);
        let a = double_normalize(&mut g, x).unwrap();
        // f64 softmax down each column; a row then sums to m / (m + eps)
        let mut soft = vec![0.0f64; r * c];
        for j in 0..c {
            let col: Vec<f64> = (0..r).map(|i| data[i * c + j] as f64).collect();
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = col.iter().map(|v| (v - max).exp()).sum();
            for i in 0..r {
                soft[i * c + j] = (col[i] - max).exp() / z;
            }
        }
        for (i, row) in g.value(a).chunks_exact(c).enumerate() {
            prop_assert!(row.iter().all(|&e| e >= 0.0));
            let m: f64 = soft[i * c..(i + 1) * c].iter().sum();
            let sum: f64 = row.iter().map(|&e| e as f64).sum();
            prop_assert!((sum - m / (m + DNORM_EPS as f64)).abs() <= 1e-5, "row {i}: {sum} vs mass {m}");
        }
    }

    #[test]
    fn dnorm_rows_sum_to_one_for_moderate_scores(r in 1usize..24, c in 1usize..24, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..r * c).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[r, c], data).unwrap(), false);
        let a = double_normalize(&mut g, x).unwrap();
        for row in g.value(a).chunks_exact(c) {
            let sum: f64 = row.iter().map(|&e| e as f64).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn zero_value_memory_stack_is_identity(seed in any::<u64>(), s in 1usize..6, l in 1usize..20, d in 1usize..8, depth in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let stack = RoiAttentionStack::new(&mut store, "a", d, l, depth, &mut rng).unwrap();
        for b in &stack.blocks {
            store.get_mut(b.value_memory).data_mut().fill(0.0);
        }
        let x = Tensor::from_fn(&[s, 1, 1, l], |i| (i as f32 * 0.37).sin());
        let mut g = Graph::new();
        let v = g.input(x.clone(), false);
        let y = stack_forward(&mut g, &store, v, &stack).unwrap();
        prop_assert_eq!(g.value(y), x.data());
    }

    #[test]
    fn scale_box_keeps_centre_and_scales_sides(b in boxes_in(100.0), f in 0.5f32..2.0) {
        prop_assert_eq!(scale_box(&b, 1.0, 100.0, 100.0).unwrap(), b);
        // shifted away from the origin so clipping cannot move the centre
        let b2 = BoxXYXY::new(b.x1 + 500.0, b.y1 + 500.0, b.x2 + 500.0, b.y2 + 500.0);
        let big = scale_box(&b2, f, 1e4, 1e4).unwrap();
        let (cx, cy) = b2.center();
        let (bx, by) = big.center();
        prop_assert!((cx - bx).abs() < 1e-3 && (cy - by).abs() < 1e-3);
        prop_assert!((big.width() - f * b2.width()).abs() < 1e-3);
        let clipped = scale_box(&b, f, 100.0, 100.0).unwrap();
        prop_assert!(BoxXYXY::new(0.0, 0.0, 100.0, 100.0).contains(&clipped));
    }

    #[test]
    fn roi_align_reproduces_constant_maps(v in -5.0f32..5.0, b in boxes_in(64.0), out in 1usize..8, sampling in 1usize..4) {
        let mut grid = RoiGrid::new(out, 0.125);
        grid.sampling = sampling;
        let mut g = Graph::new();
        let f = g.input(Tensor::full(&[2, 8, 8], v), false);
        let y = roi_align(&mut g, f, &[b], &grid).unwrap();
        prop_assert!(g.value(y).iter().all(|&e| (e - v).abs() <= 1e-5));
    }

    #[test]
    fn nms_keeps_separated_boxes_in_score_order(bs in prop::collection::vec(boxes_in(64.0), 0..12), seed in any::<u64>(), thr in 0.1f32..0.9) {
        let scores: Vec<f32> = (0..bs.len()).map(|i| ((seed >> (i % 60)) & 1023) as f32 / 1024.0 + i as f32 * 1e-4).collect();
        let keep = nms(&bs, &scores, thr);
        for w in keep.windows(2) {
            prop_assert!(scores[w[0]] >= scores[w[1]]);
        }
        for (i, &a) in keep.iter().enumerate() {
            for &b in &keep[i + 1..] {
                prop_assert!(iou(&bs[a], &bs[b]) <= thr);
            }
        }
        // every dropped box overlaps some kept higher-scoring box
        for j in 0..bs.len() {
            if !keep.contains(&j) {
                prop_assert!(keep.iter().any(|&k| scores[k] >= scores[j] && iou(&bs[k], &bs[j]) > thr));
            }
        }
    }

    #[test]
    fn map_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(oracle_map(&mut rng, 10) <= 1e-9);
    }

    #[test]
    fn ap_values_are_probabilities(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = random_map_instance(&mut rng, 10);
        let table = evaluate_map(&dets, &gts, &coco_thresholds());
        for row in &table.per_class {
            for v in row.iter().flatten() {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
        // duplicating every GT as a score-1 detection can only help
        let mut better = dets.clone();
        better.extend(gts.iter().map(|g| Detection { image: g.image, class: g.class, score: 2.0, bbox: g.bbox }));
        let t2 = evaluate_map(&better, &gts, &coco_thresholds());
        prop_assert!(t2.map() + 1e-12 >= table.map());
    }

    #[test]
    fn perfect_detections_score_one(bs in prop::collection::vec(boxes_in(128.0), 1..8), cls in prop::collection::vec(0usize..4, 8)) {
        let gts: Vec<GroundTruth> = bs.iter().enumerate().map(|(i, b)| GroundTruth { image: i % 2, class: cls[i], bbox: *b }).collect();
        let dets: Vec<Detection> = gts.iter().map(|g| Detection { image: g.image, class: g.class, score: 1.0, bbox: g.bbox }).collect();
        let t = evaluate_map(&dets, &gts, &coco_thresholds());
        prop_assert!((t.map() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proposals_follow_the_recipe(seed in any::<u64>(), pseed in any::<u64>()) {
        let scene = generate_scene(seed);
        let frame = BoxXYXY::new(0.0, 0.0, IMAGE_SIZE as f32, IMAGE_SIZE as f32);
        prop_assert!((1..=MAX_OBJECTS).contains(&scene.objects.len()));
        prop_assert_eq!(&generate_scene(seed), &scene);
        let props = make_proposals(&scene, pseed, &ProposalConfig::default());
        prop_assert_eq!(props.len(), 8 * scene.objects.len() + 24);
        for (k, p) in props.iter().enumerate() {
            prop_assert!(p.is_valid() && frame.contains(p));
            if k < 8 * scene.objects.len() {
                prop_assert!(iou(p, &scene.objects[k / 8].bbox) >= FG_IOU);
            }
        }
        let sample = assign_and_encode(&props, &scene.objects);
        for (i, t) in sample.targets.iter().enumerate() {
            prop_assert_eq!(t.is_some(), sample.labels[i] < NUM_CLASSES);
        }
        prop_assert!(sample.num_foreground() >= 8 * scene.objects.len());
    }

    #[test]
    fn config_text_round_trips(d in 1usize..100, depth in 0usize..4, lr in 0.0f32..1.0, seed in any::<u64>(), flags in any::<[bool; 3]>()) {
        let mut cfg = DetectionConfig { d, depth, lr, seed, ..DetectionConfig::default() };
        cfg.use_double_head = flags[0];
        cfg.use_pos_encoding = flags[0] && flags[1];
        cfg.attach_attention_cls = flags[2];
        let mut back = DetectionConfig::default();
        for line in cfg.to_text().lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            prop_assert!(KEYS.contains(&k));
            back.set(k, v).unwrap();
        }
        prop_assert_eq!(back, cfg);
    }
}
