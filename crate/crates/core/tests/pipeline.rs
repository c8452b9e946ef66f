use mhdci::building_flows::{BoxFlowFamily, FlowParams};
use mhdci::cutoffs_gaps::{build_partition, Ladder};
use mhdci::geometry::{load_direction_sets, SkewLemma, SymLemma};
use mhdci::iteration::{bootstrap, desk_data, diagnose, load_state, save_state};
use mhdci::{Grid, Samples};
use proptest::prelude::*;
use std::sync::OnceLock;

fn desk_family() -> &'static BoxFlowFamily {
    static FAM: OnceLock<BoxFlowFamily> = OnceLock::new();
    FAM.get_or_init(|| {
        let g = Grid::new(64).unwrap();
        BoxFlowFamily::build(g, &load_direction_sets(), &FlowParams::desk(2665)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chi_sums_to_one(t in 0.0f64..1.0, tau_inv in 3usize..12) {
        let p = build_partition(1.0, 1.0 / tau_inv as f64).unwrap();
        let s: f64 = (1..=p.n_q).map(|l| p.chi(l, t).0[0]).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        for l in 1..=p.n_q {
            prop_assert!((-1e-15..=1.0 + 1e-15).contains(&p.chi(l, t).0[0]));
        }
    }

    #[test]
    fn box_flows_stay_disjoint_at_snapped_times(step in 0i64..2665) {
        let fam = desk_family();
        let t = step as f64 / fam.params.travel_rate() as f64;
        prop_assert_eq!(fam.overlap_count(t), 0);
    }

    #[test]
    fn skew_coefficients_recompose(w in prop::array::uniform3(-1.0f64..1.0), s in 0.0f64..0.99) {
        let lemma = SkewLemma::new(&load_direction_sets().b).unwrap();
        let norm = (w.iter().map(|x| x * x).sum::<f64>() * 2.0).sqrt().max(1e-300);
        let c = s * lemma.eps / norm;
        let m = [[0.0, c * w[2], -c * w[1]], [-c * w[2], 0.0, c * w[0]], [c * w[1], -c * w[0], 0.0]];
        let a = lemma.coefficients(&m).unwrap();
        prop_assert!(a.iter().all(|&x| x > 0.0));
        let back = lemma.recompose(&a);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((back[i][j] - m[i][j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn symmetric_coefficients_recompose(d in prop::array::uniform6(-1.0f64..1.0), s in 0.0f64..0.99) {
        let lemma = SymLemma::new(&load_direction_sets().v).unwrap();
        let f = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + 2.0 * (d[3] * d[3] + d[4] * d[4] + d[5] * d[5])).sqrt().max(1e-300);
        let c = s * lemma.eps / f;
        let r = [
            [1.0 + c * d[0], c * d[3], c * d[4]],
            [c * d[3], 1.0 + c * d[1], c * d[5]],
            [c * d[4], c * d[5], 1.0 + c * d[2]],
        ];
        let a = lemma.coefficients(&r).unwrap();
        prop_assert!(a.iter().all(|&x| x > 0.0));
        let back = lemma.recompose(&a);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((back[i][j] - r[i][j]).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn saved_bootstrap_diagnoses_identically() {
    let g = Grid::new(16).unwrap();
    let (v, b) = desk_data(g, 0.2);
    let s = bootstrap(&v, &b, Ladder::desk()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_state(dir.path(), &s).unwrap();
    let back = load_state(dir.path()).unwrap();
    let times = [0.0, 0.3, 0.7, 1.0];
    let (csv_a, led_a) = diagnose(&s, &times).unwrap();
    let (csv_b, led_b) = diagnose(&back, &times).unwrap();
    assert_eq!(csv_a.lines().count(), times.len() + 1);
    assert!(led_a.failures().is_empty() && led_b.failures().is_empty());
    // the round trip goes through real samples, so values agree up to FFT round-off
    for (a, b) in csv_a.lines().skip(1).zip(csv_b.lines().skip(1)) {
        for (x, y) in a.split(',').zip(b.split(',')) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn bootstrap_stress_is_trace_free_where_sampled() {
    let g = Grid::new(16).unwrap();
    let (v, b) = desk_data(g, 0.2);
    let s = bootstrap(&v, &b, Ladder::desk()).unwrap();
    let tup = s.tuple(0.5).unwrap();
    let r: Samples = tup.r.to_real();
    let trace = (0..g.len()).map(|p| (r[0][p] + r[4][p] + r[8][p]).abs()).fold(0.0, f64::max);
    let scale = r.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
    assert!(trace <= 1e-13 * scale.max(1e-300));
}
