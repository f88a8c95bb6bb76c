//! Rate analysis, hit-probability experiment, and trace CSV round trips.

use mcem::diagnostics::*;
use mcem::lmm::{LmmModel, LmmTheta, BULLS_MLE, LMM_LAYOUT};
use mcem::{run_em, IterationRecord, StoppingConfig, Theta, Trace};
use std::path::PathBuf;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mcem-diag-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn synthetic(dists: &[f64]) -> (Trace, Theta) {
    let star = BULLS_MLE.to_theta();
    let v = [1.0, -2.0, 0.5];
    let mut trace = Trace::new(&LMM_LAYOUT);
    for (t, d) in dists.iter().enumerate() {
        let vals: Vec<f64> = star
            .values()
            .iter()
            .zip(v)
            .map(|(s, v)| s + d * v)
            .collect();
        trace.records.push(IterationRecord {
            t,
            theta: Theta::new(&LMM_LAYOUT, vals).unwrap(),
            loglik: 0.0,
            m: 0,
            p: 0,
            wall_ms: 0.0,
        });
    }
    (trace, star)
}

#[test]
fn geometric_trace_recovers_its_ratio() {
    let dists: Vec<f64> = (0..25).map(|t| 0.5f64.powi(t)).collect();
    let (trace, star) = synthetic(&dists);
    let rep = rate_estimate(&trace, &star, 10).unwrap();
    assert!((rep.median_rate - 0.5).abs() < 1e-9);
    assert!(rep.cv < 1e-6);
    assert!(!rep.superlinear);
}

#[test]
fn quadratic_trace_is_flagged_superlinear() {
    let dists: Vec<f64> = (0..6).map(|t| 0.5f64.powi(1 << t)).collect();
    let (trace, star) = synthetic(&dists);
    let rep = rate_estimate(&trace, &star, 3).unwrap();
    assert!(rep.superlinear, "{:?}", rep.ratios);
    assert!(rep.median_rate < 0.1);
    assert!(*rep.ratios.last().unwrap() < 0.01);
}

#[test]
fn short_traces_and_windows_are_rejected() {
    let (trace, star) = synthetic(&[1.0, 0.5, 0.25]);
    assert!(rate_estimate(&trace, &star, 3).is_err());
    assert!(rate_estimate(&trace, &star, 2).is_err());
}

#[test]
fn hit_probability_edge_cases() {
    let model = LmmModel::bulls();
    let th0 = LmmTheta::new(55.0, 45.0, 260.0).unwrap().to_theta();
    let star = BULLS_MLE.to_theta();
    let all = hit_probability(&model, &th0, &star, 100, 5, 1e6, 8, 1).unwrap();
    assert_eq!(all.fraction, 1.0);
    assert_eq!(all.hits, all.runs);
    assert!(hit_probability(&model, &th0, &star, 100, 5, 0.5, 0, 1).is_err());

    let mut last = 1.0;
    for eps in [1.0, 0.1, 0.03, 0.01, 0.003, 1e-4] {
        let r = hit_probability(&model, &th0, &star, 100, 10, eps, 20, 2).unwrap();
        assert!(r.fraction <= last);
        assert_eq!(r.fraction, r.hits as f64 / r.runs as f64);
        last = r.fraction;
    }
}

#[test]
fn standardized_distance_balances_scales() {
    let star = BULLS_MLE.to_theta();
    let moved = star
        .with_values(vec![
            star.values()[0] + 54.318,
            star.values()[1],
            star.values()[2],
        ])
        .unwrap();
    assert!((standardized_distance(&moved, &star) - 1.0).abs() < 1e-12);
}

#[test]
fn csv_round_trip_is_exact() {
    let model = LmmModel::bulls();
    let th0 = LmmTheta::new(55.0, 45.0, 260.0).unwrap().to_theta();
    let trace = run_em(&model, &th0, &StoppingConfig::default()).unwrap();
    let path = scratch("em.csv");
    trace_write(&trace, &path).unwrap();
    let back = trace_read(&path, &LMM_LAYOUT).unwrap();
    assert_eq!(back.len(), trace.len());
    for (a, b) in trace.records.iter().zip(&back.records) {
        assert_eq!(a.t, b.t);
        assert_eq!(a.m, b.m);
        assert_eq!(a.p, b.p);
        assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
        let bits = |t: &Theta| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.theta), bits(&b.theta));
    }
    let ll = back.logliks();
    assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-10));

    let mut again = Vec::new();
    write_trace(&back, &mut again).unwrap();
    assert_eq!(again, std::fs::read(&path).unwrap());
}

#[test]
fn small_traces_match_the_schema() {
    let mut buf = Vec::new();
    write_trace(&Trace::new(&LMM_LAYOUT), &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "t,m,p,loglik,mu,sigma_u2,sigma_e2\n"
    );

    let mut trace = Trace::new(&LMM_LAYOUT);
    trace.records.push(IterationRecord {
        t: 0,
        theta: BULLS_MLE.to_theta(),
        loglik: -148.5,
        m: 0,
        p: 0,
        wall_ms: 1.0,
    });
    let mut buf = Vec::new();
    write_trace(&trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[1],
        "0,0,0,-1.4850000000000000e2,5.3317999999999998e1,5.4820999999999998e1,2.4922999999999999e2"
    );
}

#[test]
fn malformed_csv_reports_line() {
    let path = scratch("bad.csv");
    std::fs::write(&path, "t,m,p,loglik,mu,sigma_u2,sigma_e2\n0,0,0,1,2,3\n").unwrap();
    let err = trace_read(&path, &LMM_LAYOUT).unwrap_err().to_string();
    assert!(err.contains("bad.csv:2"), "{err}");
    assert!(trace_read(scratch("missing.csv"), &LMM_LAYOUT).is_err());
}

#[test]
fn plot_script_references_its_inputs() {
    let s = plot_script("trace.csv", "trace.png");
    assert!(s.contains("trace.csv") && s.contains("trace.png"));
}
