use mot3d::association::{ObjectClass, TrackletFile};
use mot3d::eval::*;
use mot3d::geometry::{OccupancyGrid, Vec3};
use mot3d::sim::{generate_sequence, sample_scene_config, SceneParams, SceneSequence};
use mot3d::Error;
use proptest::prelude::*;

fn p(track: u32, x: f64) -> PredPoint {
    PredPoint {
        track,
        center: Vec3::new(x, 0.0, 0.0),
    }
}

fn g(instance: u32, x: f64) -> GtPoint {
    GtPoint {
        instance,
        center: Vec3::new(x, 0.0, 0.0),
    }
}

fn scene(seed: u64) -> SceneSequence {
    let cfg = sample_scene_config(&SceneParams::default(), seed).unwrap();
    generate_sequence(&cfg, &format!("seq{seed:03}")).unwrap()
}

mod frame_matching {
    use super::*;

    #[test]
    fn perfect_static_scene_has_no_errors() {
        let mut carry = MatchCarry::new();
        for _ in 0..3 {
            let m = match_frame(&[p(0, 0.0), p(1, 2.0)], &[g(5, 0.0), g(6, 2.0)], MATCH_RADIUS, &mut carry);
            assert_eq!((m.misses, m.false_positives, m.mismatches), (0, 0, 0));
            assert_eq!(m.matches, vec![(5, 0), (6, 1)]);
        }
    }

    #[test]
    fn half_meter_offset_is_a_miss_and_a_false_positive() {
        let m = match_frame(&[p(0, 0.5)], &[g(0, 0.0)], MATCH_RADIUS, &mut MatchCarry::new());
        assert_eq!((m.misses, m.false_positives, m.mismatches), (1, 1, 0));
        assert_eq!((m.missed, m.spurious), (vec![0], vec![0]));
        let m = match_frame(&[p(0, 0.39)], &[g(0, 0.0)], MATCH_RADIUS, &mut MatchCarry::new());
        assert_eq!(m.matches, vec![(0, 0)]);
    }

    #[test]
    fn swapped_ids_count_two_mismatches() {
        let mut carry = MatchCarry::new();
        let first = match_frame(&[p(0, 0.0), p(1, 2.0)], &[g(0, 0.0), g(1, 2.0)], MATCH_RADIUS, &mut carry);
        assert_eq!(first.mismatches, 0);
        let second = match_frame(&[p(1, 0.0), p(0, 2.0)], &[g(0, 0.0), g(1, 2.0)], MATCH_RADIUS, &mut carry);
        assert_eq!(second.mismatches, 2);
        assert_eq!(second.switched, vec![0, 1]);
        // the new correspondence is carried forward
        let third = match_frame(&[p(1, 0.0), p(0, 2.0)], &[g(0, 0.0), g(1, 2.0)], MATCH_RADIUS, &mut carry);
        assert_eq!(third.mismatches, 0);
    }

    #[test]
    fn persisting_match_beats_a_closer_newcomer() {
        let mut carry = MatchCarry::new();
        match_frame(&[p(0, 0.0)], &[g(0, 0.0)], MATCH_RADIUS, &mut carry);
        let m = match_frame(&[p(0, 0.3), p(1, 0.01)], &[g(0, 0.0)], MATCH_RADIUS, &mut carry);
        assert_eq!(m.matches, vec![(0, 0)]);
        assert_eq!((m.false_positives, m.mismatches), (1, 0));
    }

    #[test]
    fn assignment_minimizes_total_distance() {
        // greedy nearest-first would pair (gt 1, track 0) at 0.05 and leave gt 0 unmatched
        let preds = [p(0, 0.25), p(1, 0.6)];
        let gts = [g(0, -0.1), g(1, 0.3)];
        let m = match_frame(&preds, &gts, MATCH_RADIUS, &mut MatchCarry::new());
        assert_eq!(m.matches, vec![(0, 0), (1, 1)]);
    }

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[row][c] + go(cost, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        go(cost, 0, &mut vec![false; cost[0].len()])
    }

    proptest! {
        #[test]
        fn hungarian_is_optimal(rows in 1usize..6, extra in 0usize..3, vals in prop::collection::vec(0.0f64..10.0, 64)) {
            let cols = rows + extra;
            let cost: Vec<Vec<f64>> = (0..rows).map(|r| (0..cols).map(|c| vals[r * cols + c]).collect()).collect();
            let a = hungarian(&cost);
            let mut seen = a.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), rows);
            let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
            prop_assert!((total - brute_force(&cost)).abs() < 1e-9);
        }

        #[test]
        fn relabeling_tracks_keeps_counts(
            frames in prop::collection::vec(prop::collection::vec((0u32..4, -1.0f64..3.0), 0..5), 1..6),
            shift in 1u32..50,
        ) {
            let gts = [g(0, 0.0), g(1, 1.0), g(2, 2.0)];
            let mut a = MatchCarry::new();
            let mut b = MatchCarry::new();
            for f in &frames {
                // one entry per track and frame, as tracklets guarantee
                let mut preds: Vec<PredPoint> = Vec::new();
                for &(t, x) in f {
                    if preds.iter().all(|q| q.track != t) {
                        preds.push(p(t, x));
                    }
                }
                let renamed: Vec<PredPoint> = preds.iter().map(|q| p((q.track * 7 + shift) % 1000, q.center.x)).collect();
                let ma = match_frame(&preds, &gts, MATCH_RADIUS, &mut a);
                let mb = match_frame(&renamed, &gts, MATCH_RADIUS, &mut b);
                prop_assert_eq!(
                    (ma.matches.len(), ma.misses, ma.false_positives, ma.mismatches),
                    (mb.matches.len(), mb.misses, mb.false_positives, mb.mismatches)
                );
                prop_assert_eq!(ma.matches.len() + ma.misses, gts.len());
                prop_assert_eq!(ma.matches.len() + ma.false_positives, preds.len());
            }
        }
    }
}

mod metrics {
    use super::*;

    #[test]
    fn mota_examples() {
        assert_eq!(mota(0, 0, 0, 10).unwrap(), 1.0);
        assert!((mota(8984, 1873, 58, 38298).unwrap() - 0.715).abs() < 1e-3);
        assert_eq!(mota(10, 0, 0, 10).unwrap(), 0.0);
        assert!(mota(20, 5, 0, 10).unwrap() < 0.0);
        assert!(matches!(mota(0, 0, 0, 0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn precision_recall_f1_examples() {
        let all = prf(10, 0, 0);
        assert_eq!((all.precision, all.recall, all.f1, all.undefined), (1.0, 1.0, 1.0, false));
        let none = prf(0, 5, 5);
        assert_eq!(none.f1, 0.0);
        assert!(none.undefined);
        let mixed = prf(70, 30, 30);
        for v in [mixed.precision, mixed.recall, mixed.f1] {
            assert!((v - 0.7).abs() < 1e-12);
        }
        assert!(prf(0, 0, 0).undefined);
    }

    fn cube(x0: usize) -> OccupancyGrid {
        OccupancyGrid::from_fn(|x, y, z| (x0..x0 + 16).contains(&x) && y < 16 && z < 16)
    }

    #[test]
    fn grid_iou_examples() {
        let (a, b) = (cube(0), cube(8));
        let same = grid_iou_report([(ObjectClass::Chair, &a, &a), (ObjectClass::Bed, &b, &b)]);
        assert_eq!(same.overall, Some(1.0));
        let half = grid_iou_report([(ObjectClass::Sofa, &a, &b)]);
        assert!((half.overall.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let mixed = grid_iou_report([(ObjectClass::Sofa, &a, &b), (ObjectClass::Chair, &a, &a)]);
        assert_eq!(mixed.pairs, 2);
        assert_eq!(mixed.per_class[&ObjectClass::Chair], (1.0, 1));
        assert!((mixed.overall.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let empty = grid_iou_report(std::iter::empty());
        assert_eq!((empty.overall, empty.pairs), (None, 0));
    }
}

mod reports {
    use super::*;

    #[test]
    fn ground_truth_scores_perfectly() {
        let seqs: Vec<_> = [1, 2].into_iter().map(scene).collect();
        let preds: Vec<TrackletFile> = seqs.iter().map(gt_tracklets).collect();
        let r = evaluate(&preds, &seqs, MATCH_RADIUS).unwrap();
        assert_eq!(r.overall.mota, Some(1.0));
        let c = r.overall.counts;
        assert_eq!((c.misses, c.false_positives, c.mismatches), (0, 0, 0));
        assert_eq!(c.matches, c.gt_count);
        assert_eq!(r.grid_iou.overall, Some(1.0));
    }

    #[test]
    fn dropping_a_track_adds_its_frames_as_misses() {
        let seq = scene(3);
        let mut pred = gt_tracklets(&seq);
        let dropped = pred.tracklets.remove(1).entries.len();
        let r = evaluate(&[pred], std::slice::from_ref(&seq), MATCH_RADIUS).unwrap();
        let c = r.overall.counts;
        assert_eq!(c.misses, dropped);
        assert_eq!((c.false_positives, c.mismatches), (0, 0));
        assert_eq!(r.overall.mota, Some(1.0 - dropped as f64 / c.gt_count as f64));
        assert!(r.overall.prf.recall < 1.0);
        assert_eq!(r.overall.prf.precision, 1.0);
    }

    #[test]
    fn consistent_id_shuffle_keeps_the_report() {
        let seq = scene(8);
        let mut pred = gt_tracklets(&seq);
        // break one tracklet so the shuffle has mismatches to preserve
        let t = &mut pred.tracklets[0];
        let tail = t.entries.split_off(t.entries.len() / 2);
        let mut split = t.clone();
        split.entries = tail;
        pred.tracklets.push(split);
        for (k, t) in pred.tracklets.iter_mut().enumerate() {
            t.instance_id = k as u32;
        }
        let base = evaluate(std::slice::from_ref(&pred), std::slice::from_ref(&seq), MATCH_RADIUS).unwrap();
        let n = pred.tracklets.len() as u32;
        for t in &mut pred.tracklets {
            t.instance_id = 100 + n - 1 - t.instance_id;
        }
        pred.tracklets.reverse();
        let shuffled = evaluate(&[pred], &[seq], MATCH_RADIUS).unwrap();
        assert!(base.overall.counts.mismatches > 0);
        assert_eq!(shuffled.overall, base.overall);
    }

    #[test]
    fn per_class_and_per_sequence_counts_sum_to_overall() {
        let seqs: Vec<_> = [4, 5].into_iter().map(scene).collect();
        let mut preds: Vec<TrackletFile> = seqs.iter().map(gt_tracklets).collect();
        // shift one tracklet out of range and split another to create every error kind
        for e in &mut preds[0].tracklets[0].entries {
            e.pose.translation.x += 1.0;
        }
        let t = &mut preds[1].tracklets[0];
        let tail = t.entries.split_off(t.entries.len() / 2);
        let mut split = t.clone();
        split.entries = tail;
        split.instance_id = 999;
        preds[1].tracklets.push(split);

        let r = evaluate(&preds, &seqs, MATCH_RADIUS).unwrap();
        let sum = |it: &mut dyn Iterator<Item = &Metrics>| {
            let mut c = Counts::default();
            it.for_each(|m| c.merge(&m.counts));
            c
        };
        assert_eq!(sum(&mut r.per_class.values()), r.overall.counts);
        assert_eq!(sum(&mut r.per_sequence.values()), r.overall.counts);
        let c = r.overall.counts;
        assert!(c.misses > 0 && c.false_positives > 0 && c.mismatches > 0);
        let expected = 1.0 - (c.misses + c.false_positives + c.mismatches) as f64 / c.gt_count as f64;
        assert_eq!(r.overall.mota, Some(expected));

        assert_eq!(evaluate(&preds, &seqs, MATCH_RADIUS).unwrap(), r);
        let back = TrackReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let table = r.table();
        for col in ["m", "fp", "mme", "F1", "Precision", "Recall", "MOTA"] {
            assert!(table.contains(col), "table lacks {col}");
        }
    }

    #[test]
    fn sequence_ids_must_line_up() {
        let seq = scene(6);
        let mut pred = gt_tracklets(&seq);
        pred.sequence_id = "other".into();
        let err = evaluate(&[pred], &[seq.clone()], MATCH_RADIUS).unwrap_err();
        assert!(err.to_string().contains("other"));
        assert!(evaluate(&[gt_tracklets(&seq)], &[seq], 0.0).is_err());
    }

    #[test]
    fn trajectory_dump_lists_both_sources() {
        let seq = scene(7);
        let pred = gt_tracklets(&seq);
        let csv = trajectories_csv(std::slice::from_ref(&pred), std::slice::from_ref(&seq));
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "sequence,source,id,class,frame,x,y,z");
        let per_source: usize = pred.tracklets.iter().map(|t| t.entries.len()).sum();
        assert_eq!(rows.len(), 1 + 2 * per_source);
        assert!(rows.iter().any(|r| r.contains(",pred,")) && rows.iter().any(|r| r.contains(",gt,")));
    }
}
