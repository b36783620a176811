use mot3d::association::*;
use mot3d::geometry::{Box2, Box3, OccupancyGrid, Pose7, Vec3};
use mot3d::pose::Correspondences;
use proptest::prelude::*;

fn det(frame: u32, center: Vec3, objectness: f64) -> DetectionRecord {
    let mut d = DetectionRecord {
        frame,
        class: ObjectClass::Chair,
        objectness,
        box2: Box2::new([10.0, 10.0], [50.0, 60.0]).unwrap(),
        box3: None,
        pose: None,
        correspondences: Correspondences::default(),
        grid: OccupancyGrid::from_fn(|x, y, z| (8..24).contains(&x) && (8..24).contains(&y) && (8..24).contains(&z)),
        gt_instance: None,
    };
    d.set_pose(Pose7::new(1.0, Pose7::identity().rotation, center).unwrap());
    d
}

fn at(x: f64) -> Vec3 {
    Vec3::new(x, 0.0, 0.0)
}

fn unit_box(center: Vec3) -> Box3 {
    Box3::new(center, Vec3::repeat(0.5), 0.0).unwrap()
}

fn member_lists(ts: &[Tracklet]) -> Vec<Vec<usize>> {
    ts.iter().map(|t| t.entries.iter().map(|e| e.detection).collect()).collect()
}

mod filtering {
    use super::*;

    #[test]
    fn low_objectness_is_dropped() {
        let dets = vec![det(0, at(0.0), 0.3), det(0, at(3.0), 0.35)];
        assert_eq!(surviving_indices(&dets, &FilterParams::default(), None), vec![1]);
    }

    #[test]
    fn nms_keeps_higher_score() {
        let dets = vec![det(0, at(0.0), 0.8), det(0, at(0.0), 0.9)];
        assert_eq!(surviving_indices(&dets, &FilterParams::default(), None), vec![1]);
        // different frames or classes never suppress each other
        let mut other = dets.clone();
        other[0].frame = 1;
        assert_eq!(surviving_indices(&other, &FilterParams::default(), None), vec![0, 1]);
        let mut other = dets;
        other[0].class = ObjectClass::Table;
        assert_eq!(surviving_indices(&other, &FilterParams::default(), None), vec![0, 1]);
    }

    #[test]
    fn ground_truth_overlap_gate() {
        let d = det(0, at(0.0), 0.5);
        // box2 is 40 x 50; a GT box sharing a 40 x 10 strip gives IoU 400 / 2000 = 0.2
        let gt = vec![vec![Box2::new([10.0, 50.0], [50.0, 100.0]).unwrap()]];
        let p = FilterParams::default();
        assert!(surviving_indices(std::slice::from_ref(&d), &p, Some(&gt)).is_empty());
        assert_eq!(surviving_indices(std::slice::from_ref(&d), &p, None), vec![0]);
        let exact = vec![vec![d.box2]];
        assert_eq!(filter_detections(std::slice::from_ref(&d), &p, Some(&exact)), vec![d]);
    }

    #[test]
    fn params_are_validated() {
        let p = FilterParams {
            nms_iou: 1.5,
            ..FilterParams::default()
        };
        assert!(p.validate().is_err());
        assert!(FilterParams::default().validate().is_ok());
    }
}

mod graph {
    use super::*;

    #[test]
    fn edge_count_examples() {
        let two_by_two = vec![det(0, at(0.0), 0.9), det(0, at(2.0), 0.9), det(1, at(0.0), 0.9), det(1, at(2.0), 0.9)];
        assert_eq!(build_graph(&two_by_two, 5).unwrap().edges.len(), 4);
        let far = vec![det(0, at(0.0), 0.9), det(5, at(0.0), 0.9)];
        assert!(build_graph(&far, 5).unwrap().edges.is_empty());
        let chain: Vec<_> = (0..5).map(|f| det(f, at(0.0), 0.9)).collect();
        assert_eq!(build_graph(&chain, 5).unwrap().edges.len(), 10);
    }

    #[test]
    fn unposed_detections_get_no_edges() {
        let mut dets: Vec<_> = (0..3).map(|f| det(f, at(0.0), 0.9)).collect();
        dets[1].pose = None;
        let g = build_graph(&dets, 5).unwrap();
        assert_eq!(g.edges, vec![(0, 2)]);
        assert_eq!(g.num_nodes(), 3);
    }

    #[test]
    fn window_below_two_is_rejected() {
        assert!(build_graph(&[], 1).is_err());
    }

    #[test]
    fn features_describe_relative_pose() {
        let dets = vec![det(2, at(0.0), 0.9), det(4, Vec3::new(0.3, -0.1, 0.0), 0.9)];
        let g = build_graph(&dets, 5).unwrap();
        let f = g.features[0].to_array();
        assert!((f[0] - 0.3).abs() < 1e-12 && (f[1] + 0.1).abs() < 1e-12);
        assert_eq!(f[7], 2.0);
    }

    proptest! {
        #[test]
        fn complete_grids_have_the_analytic_edge_count(frames in 1usize..9, per_frame in 1usize..4, window in 2usize..7) {
            let dets: Vec<_> = (0..frames)
                .flat_map(|f| (0..per_frame).map(move |k| det(f as u32, at(k as f64 * 2.0), 0.9)))
                .collect();
            let g = build_graph(&dets, window).unwrap();
            let expected: usize = (1..window.min(frames)).map(|gap| (frames - gap) * per_frame * per_frame).sum();
            prop_assert_eq!(g.edges.len(), expected);
            for &(i, j) in &g.edges {
                let gap = g.detections[j].frame - g.detections[i].frame;
                prop_assert!(gap >= 1 && gap as usize <= window - 1);
            }
        }
    }
}

mod labeling {
    use super::*;

    fn graph_of(dets: &[DetectionRecord]) -> TrackGraph {
        build_graph(dets, 5).unwrap()
    }

    fn with_box(mut d: DetectionRecord, b: Box3) -> DetectionRecord {
        d.box3 = Some(b);
        d
    }

    #[test]
    fn exact_box_takes_its_instance() {
        let b = unit_box(at(0.0));
        let dets = vec![with_box(det(0, at(0.0), 0.9), b), with_box(det(1, at(0.0), 0.9), b)];
        let gt = vec![vec![(3, b), (4, unit_box(at(5.0)))], vec![(3, b)]];
        let l = label_graph(&graph_of(&dets), &gt, LABEL_IOU_THRESHOLD);
        assert_eq!(l.node_instances.unwrap(), vec![Some(3), Some(3)]);
        assert_eq!(l.labels.unwrap(), vec![true]);
    }

    #[test]
    fn weak_overlap_is_unmatched_and_loses_its_edges() {
        // unit cubes offset by d along x overlap with IoU (1 - d) / (1 + d)
        let d = 0.94;
        assert!((1.0 - d) / (1.0 + d) < LABEL_IOU_THRESHOLD);
        let dets = vec![
            with_box(det(0, at(0.0), 0.9), unit_box(at(0.0))),
            with_box(det(1, at(d), 0.9), unit_box(at(d))),
            with_box(det(2, at(0.0), 0.9), unit_box(at(0.0))),
        ];
        let gt: Vec<_> = (0..3).map(|_| vec![(1, unit_box(at(0.0)))]).collect();
        let l = label_graph(&graph_of(&dets), &gt, LABEL_IOU_THRESHOLD);
        assert_eq!(l.node_instances.unwrap(), vec![Some(1), None, Some(1)]);
        assert_eq!(l.edges, vec![(0, 2)]);
    }

    #[test]
    fn edge_label_is_instance_equality() {
        let (a, b) = (unit_box(at(0.0)), unit_box(at(3.0)));
        let dets = vec![
            with_box(det(0, at(0.0), 0.9), a),
            with_box(det(1, at(0.0), 0.9), a),
            with_box(det(1, at(3.0), 0.9), b),
        ];
        let gt = vec![vec![(3, a), (7, b)], vec![(3, a), (7, b)]];
        let l = label_graph(&graph_of(&dets), &gt, LABEL_IOU_THRESHOLD);
        assert_eq!(l.edges, vec![(0, 1), (0, 2)]);
        assert_eq!(l.labels.unwrap(), vec![true, false]);
    }

    proptest! {
        #[test]
        fn ground_truth_order_does_not_matter(offsets in prop::collection::vec(-0.3f64..0.3, 4), rot in 0usize..4) {
            let centers = [0.0, 1.5, 3.0, 4.5];
            let dets: Vec<_> = (0..2u32)
                .flat_map(|f| {
                    offsets.iter().zip(centers).map(move |(o, c)| with_box(det(f, at(c + o), 0.9), unit_box(at(c + o))))
                })
                .collect();
            let frame: Vec<(u32, Box3)> = centers.iter().enumerate().map(|(k, &c)| (k as u32 + 10, unit_box(at(c)))).collect();
            let mut turned = frame.clone();
            turned.rotate_left(rot);
            turned.reverse();
            let g = graph_of(&dets);
            let a = label_graph(&g, &[frame.clone(), frame], LABEL_IOU_THRESHOLD);
            let b = label_graph(&g, &[turned.clone(), turned], LABEL_IOU_THRESHOLD);
            prop_assert_eq!(a, b);
        }
    }
}

mod assembly {
    use super::*;

    #[test]
    fn active_chain_is_one_tracklet() {
        let dets: Vec<_> = (0..5).map(|f| det(f, at(0.05 * f as f64), 0.9)).collect();
        let g = build_graph(&dets, 5).unwrap();
        let probs: Vec<f64> = g.edges.iter().map(|&(i, j)| if j == i + 1 { 0.9 } else { 0.1 }).collect();
        let ts = assemble_tracklets(&g, &probs, EDGE_THRESHOLD).unwrap();
        assert_eq!(member_lists(&ts), vec![vec![0, 1, 2, 3, 4]]);
        assert_eq!(ts[0].class, ObjectClass::Chair);
    }

    #[test]
    fn conflict_goes_to_nearest_center() {
        let dets = vec![det(0, at(0.0), 0.9), det(1, at(0.4), 0.9), det(1, at(0.1), 0.9)];
        let g = build_graph(&dets, 5).unwrap();
        let ts = assemble_tracklets(&g, &[0.9, 0.9], EDGE_THRESHOLD).unwrap();
        assert_eq!(member_lists(&ts), vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn no_active_edges_gives_singletons() {
        let dets: Vec<_> = (0..4).map(|f| det(f, at(0.0), 0.9)).collect();
        let g = build_graph(&dets, 5).unwrap();
        let ts = assemble_tracklets(&g, &vec![0.5; g.edges.len()], EDGE_THRESHOLD).unwrap();
        assert_eq!(member_lists(&ts), vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn probability_count_must_match_edges() {
        let dets: Vec<_> = (0..2).map(|f| det(f, at(0.0), 0.9)).collect();
        let g = build_graph(&dets, 5).unwrap();
        assert!(assemble_tracklets(&g, &[], EDGE_THRESHOLD).is_err());
    }

    #[test]
    fn active_edge_bridges_a_missed_frame() {
        let dets = vec![det(0, at(0.0), 0.9), det(2, at(0.1), 0.9)];
        let g = build_graph(&dets, 5).unwrap();
        let ts = assemble_tracklets(&g, &[0.8], EDGE_THRESHOLD).unwrap();
        assert_eq!(member_lists(&ts), vec![vec![0, 1]]);
    }

    fn scene() -> impl Strategy<Value = (Vec<DetectionRecord>, Vec<f64>)> {
        prop::collection::vec((0u32..6, -2.0f64..2.0, prop::bool::weighted(0.9)), 1..14).prop_flat_map(|spec| {
            let dets: Vec<DetectionRecord> = spec
                .iter()
                .map(|&(f, x, posed)| {
                    let mut d = det(f, at(x), 0.9);
                    if !posed {
                        d.pose = None;
                    }
                    d
                })
                .collect();
            let n = build_graph(&dets, 5).unwrap().edges.len();
            (Just(dets), prop::collection::vec(0.0f64..1.0, n))
        })
    }

    proptest! {
        #[test]
        fn every_posed_detection_lands_in_exactly_one_tracklet((dets, probs) in scene()) {
            let g = build_graph(&dets, 5).unwrap();
            let ts = assemble_tracklets(&g, &probs, EDGE_THRESHOLD).unwrap();
            let mut seen = vec![0usize; g.num_nodes()];
            for t in &ts {
                prop_assert!(t.entries.windows(2).all(|w| w[0].frame < w[1].frame));
                for e in &t.entries {
                    seen[e.detection] += 1;
                }
            }
            for (i, d) in g.detections.iter().enumerate() {
                prop_assert_eq!(seen[i], usize::from(d.pose.is_some()));
            }
            prop_assert_eq!(assemble_tracklets(&g, &probs, EDGE_THRESHOLD).unwrap(), ts);

            let hs = heuristic_tracker(&g.detections, HEURISTIC_GATE);
            let covered: usize = hs.iter().map(|t| t.entries.len()).sum();
            prop_assert_eq!(covered, g.detections.iter().filter(|d| d.pose.is_some()).count());
            prop_assert!(hs.iter().all(|t| t.entries.windows(2).all(|w| w[0].frame < w[1].frame)));
        }
    }
}

mod heuristic {
    use super::*;

    #[test]
    fn static_objects_are_tracked_exactly() {
        let mut dets = Vec::new();
        for f in 0..6 {
            for (k, x) in [0.0, 1.0, 2.5].into_iter().enumerate() {
                let mut d = det(f, at(x), 0.9);
                d.gt_instance = Some(k as u32);
                dets.push(d);
            }
        }
        let ts = heuristic_tracker(&dets, HEURISTIC_GATE);
        assert_eq!(ts.len(), 3);
        for t in &ts {
            assert_eq!(t.entries.len(), 6);
            let ids: Vec<_> = t.entries.iter().map(|e| dets[e.detection].gt_instance).collect();
            assert!(ids.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn crossing_objects_can_switch_identity() {
        // A moves right and B moves left at 0.2 m per frame; they meet between frames 1 and 2
        let path = |start: f64, v: f64| (0..4).map(move |f| start + v * f as f64);
        let mut dets = Vec::new();
        for (f, (a, b)) in path(-0.3, 0.2).zip(path(0.3, -0.2)).enumerate() {
            let mut da = det(f as u32, at(a), 0.9);
            da.gt_instance = Some(0);
            let mut db = det(f as u32, at(b), 0.9);
            db.gt_instance = Some(1);
            dets.extend([da, db]);
        }
        let ts = heuristic_tracker(&dets, HEURISTIC_GATE);
        let switched = ts.iter().any(|t| {
            let ids: Vec<_> = t.entries.iter().map(|e| dets[e.detection].gt_instance).collect();
            ids.windows(2).any(|w| w[0] != w[1])
        });
        assert!(switched);
    }

    #[test]
    fn gate_and_frame_gaps_end_tracklets() {
        let dets = vec![det(0, at(0.0), 0.9), det(1, at(0.6), 0.9), det(3, at(0.6), 0.9)];
        assert_eq!(member_lists(&heuristic_tracker(&dets, HEURISTIC_GATE)), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(member_lists(&heuristic_tracker(&dets, 1.0)), vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn empty_input_gives_no_tracklets() {
        assert!(heuristic_tracker(&[], HEURISTIC_GATE).is_empty());
    }
}

mod files {
    use super::*;

    #[test]
    fn tracklet_file_round_trips() {
        let dets: Vec<_> = (0..3).map(|f| det(f, at(0.1 * f as f64), 0.9)).collect();
        let file = TrackletFile::new("seq_0000", 3, heuristic_tracker(&dets, HEURISTIC_GATE));
        let json = file.to_json().unwrap();
        let back = TrackletFile::from_json(&json).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn detection_file_round_trips() {
        use mot3d::sim::{generate_sequence, sample_scene_config, synthesize_detections, NoiseModel, SceneParams};
        let cfg = sample_scene_config(&SceneParams::default(), 5).unwrap();
        let seq = generate_sequence(&cfg, "seq005").unwrap();
        let file = synthesize_detections(&seq, &NoiseModel::default(), 5).unwrap();
        assert!(!file.detections.is_empty());
        let json = file.to_json().unwrap();
        let back = DetectionFile::from_json(&json).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_json().unwrap(), json);
        let groups = back.by_frame();
        assert_eq!(groups.len(), back.num_frames());
        assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), back.detections.len());
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(TrackletFile::from_json("{\"format_version\": 99}").is_err());
        let mut d = det(0, at(0.0), 0.5);
        d.objectness = 1.5;
        assert!(d.validate().is_err());
    }
}
