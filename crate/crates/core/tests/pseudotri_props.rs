mod common;

use nalgebra::DMatrix;
use rand::Rng;
use unlock::geometry::{Chain, Linkage, Point2};
use unlock::pseudotri::{
    build_pointed_pseudotriangulation, flow_to_alignment, local_revise, make_mechanism, mechanism_velocity,
    verify_pseudotriangulation, PtParams, SectionEnd, StreinuState,
};

fn path_bars(order: &[usize]) -> Vec<(usize, usize)> {
    order.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect()
}

/// A chain through the points in angular order around their centroid never
/// crosses itself.
fn star_order(p: &[Point2]) -> Vec<usize> {
    let c = p.iter().fold(Point2::ZERO, |a, b| a + *b) * (1.0 / p.len() as f64);
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| (p[a] - c).angle().total_cmp(&(p[b] - c).angle()));
    idx
}

fn rigidity(p: &[Point2], edges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(edges.len(), 2 * p.len());
    for (r, &(i, j)) in edges.iter().enumerate() {
        let d = p[i] - p[j];
        m[(r, 2 * i)] = d.x;
        m[(r, 2 * i + 1)] = d.y;
        m[(r, 2 * j)] = -d.x;
        m[(r, 2 * j + 1)] = -d.y;
    }
    m
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.amax();
    sv.iter().filter(|s| **s > 1e-10 * top).count()
}

#[test]
fn construction_is_among_enumerated_pseudotriangulations() {
    let mut rng = common::rng(11);
    for trial in 0..120 {
        let n = rng.gen_range(4..=6);
        let p = common::general_position_points(&mut rng, n);
        let order = star_order(&p);
        let k = rng.gen_range(0..n);
        let bars = path_bars(&order[..k]);
        let all = common::enumerate_ppts(&p, &bars);
        assert!(!all.is_empty(), "trial {trial}");
        let pt = build_pointed_pseudotriangulation(&p, &bars).unwrap();
        assert!(all.contains(&pt.edges), "trial {trial}: {:?} not in {} enumerated", pt.edges, all.len());
        assert!(verify_pseudotriangulation(&p, &pt).all_ok());
    }
}

#[test]
fn verification_agrees_with_the_oracle_on_four_points() {
    let mut rng = common::rng(12);
    for _ in 0..100 {
        let p = common::general_position_points(&mut rng, 4);
        let all = common::enumerate_ppts(&p, &[]);
        // convex position: the two diagonals; one point inside: the hull
        // plus any two of the three spokes
        let inside = unlock::pseudotri::convex_hull(&p).len() == 3;
        assert_eq!(all.len(), if inside { 3 } else { 2 });
        for edges in &all {
            let pt = build_pointed_pseudotriangulation(&p, edges).unwrap();
            assert_eq!(&pt.edges, edges);
            assert!(verify_pseudotriangulation(&p, &pt).all_ok());
        }
    }
}

#[test]
fn pseudotriangulation_is_minimally_rigid() {
    let mut rng = common::rng(13);
    for trial in 0..40 {
        let n = rng.gen_range(4..=10);
        let p = common::general_position_points(&mut rng, n);
        let bars = path_bars(&star_order(&p));
        let pt = build_pointed_pseudotriangulation(&p, &bars).unwrap();
        assert_eq!(rank(&rigidity(&p, &pt.edges)), 2 * n - 3, "trial {trial}");
        let mech = make_mechanism(&pt, &p, None).unwrap();
        let rest: Vec<(usize, usize)> = mech.edges().collect();
        assert_eq!(rank(&rigidity(&p, &rest)), 2 * n - 4, "trial {trial}");
    }
}

#[test]
fn length_rates_do_not_depend_on_the_pin() {
    let mut rng = common::rng(14);
    for trial in 0..30 {
        let n = rng.gen_range(4..=9);
        let p = common::general_position_points(&mut rng, n);
        let pt = build_pointed_pseudotriangulation(&p, &path_bars(&star_order(&p))).unwrap();
        let mech = make_mechanism(&pt, &p, None).unwrap();
        let other = pt.edges.iter().copied().find(|&e| e != mech.pin && e != mech.removed_edge).unwrap();
        let rates = |pin: (usize, usize)| {
            let v = mechanism_velocity(&p, &mech.with_pin(pin)).unwrap().v;
            let rate = |i: usize, j: usize| (p[i] - p[j]).dot(v[i] - v[j]);
            let (a, b) = mech.removed_edge;
            let h = rate(a, b);
            assert!(h > 0.0);
            let mut out = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    out.push(rate(i, j) / h);
                }
            }
            out
        };
        let (r1, r2) = (rates(mech.pin), rates(other));
        let gap = r1.iter().zip(&r2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-8, "trial {trial}: {gap}");
    }
}

#[test]
fn mechanism_motion_is_expansive() {
    let mut rng = common::rng(15);
    for _ in 0..30 {
        let n = rng.gen_range(4..=9);
        let p = common::general_position_points(&mut rng, n);
        let pt = build_pointed_pseudotriangulation(&p, &path_bars(&star_order(&p))).unwrap();
        let mech = make_mechanism(&pt, &p, None).unwrap();
        let v = mechanism_velocity(&p, &mech).unwrap().v;
        let scale = v.iter().map(|q| q.norm()).fold(0.0, f64::max);
        for i in 0..n {
            for j in i + 1..n {
                assert!((p[i] - p[j]).dot(v[i] - v[j]) >= -1e-10 * scale);
            }
        }
    }
}

#[test]
fn quadrilateral_flip_matches_enumeration() {
    let before = vec![Point2::new(0., 0.), Point2::new(2., -0.2), Point2::new(2.1, 1.6), Point2::new(-0.2, 1.5)];
    let link = Linkage::single(Chain::closed(before.clone()).unwrap());
    let pt = build_pointed_pseudotriangulation(&before, &link.bars()).unwrap();
    assert!(pt.contains(0, 2));
    let mut after = before.clone();
    after[0] = Point2::new(0.6, 0.6);
    let swaps: Vec<_> = common::enumerate_ppts(&after, &link.bars())
        .into_iter()
        .filter(|e| e.iter().filter(|x| !pt.edges.contains(x)).count() == 1)
        .collect();
    assert_eq!(swaps.len(), 1);
    assert!(swaps[0].contains(&(1, 3)));
    let event = unlock::pseudotri::AlignmentEvent {
        t_event: 0.0,
        vertex: 0,
        edges: [(0, 1), (0, 3)],
        config_at_event: after.clone(),
        heading: Vec::new(),
    };
    assert_eq!(local_revise(&pt, &event, &after).unwrap().edges, swaps[0]);
}

/// Every flip met while unfolding small random chains is one of the single
/// edge swaps that an exhaustive search finds valid just past the event.
#[test]
fn flips_on_random_chains_match_enumeration() {
    let mut rng = common::rng(16);
    let mut checked = 0;
    for _ in 0..20 {
        let n = rng.gen_range(5..=6);
        let link = common::random_open_chain(&mut rng, n);
        let state = StreinuState::new(&link);
        let p = state.points();
        let pt = build_pointed_pseudotriangulation(&p, &state.bars()).unwrap();
        let mech = make_mechanism(&pt, &p, None).unwrap();
        let section = flow_to_alignment(&state, &mech, &PtParams::for_linkage(&link)).unwrap();
        let SectionEnd::Event(event) = section.end else { continue };
        let [e1, e2] = event.edges;
        if pt.is_bar(e1.0, e1.1) && pt.is_bar(e2.0, e2.1) {
            continue;
        }
        let probe = event.probe();
        let next = local_revise(&pt, &event, &probe).unwrap();
        let swaps: Vec<_> = common::enumerate_ppts(&probe, &state.bars())
            .into_iter()
            .filter(|e| e.iter().filter(|x| !pt.edges.contains(x)).count() == 1)
            .collect();
        assert!(swaps.contains(&next.edges), "{:?} not among {swaps:?}", next.edges);
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} flips exercised");
}
