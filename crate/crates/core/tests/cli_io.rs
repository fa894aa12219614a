use std::fs;
use std::path::{Path, PathBuf};

use uwb_coop::cli::cli_main;
use uwb_coop::engine::{run_estimator, Layout, Mode, PairRange, RawPeriod};
use uwb_coop::geometry::distance;
use uwb_coop::io::{
    ingest_replay, parse_scenario, read_cdf, read_estimates, read_replay, write_replay, IoError,
};
use uwb_coop::metrics::{cep, median};
use uwb_coop::{Point2, Scenario, SPEED_OF_LIGHT};

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/paper_sec5.json")
}

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("uwb-coop").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn bundled_scenario_is_reference() {
    let s = parse_scenario(&bundled()).unwrap();
    let r = Scenario::reference();
    assert_eq!(s.room, r.room);
    assert_eq!(s.anchors, r.anchors);
    assert_eq!(s.tag_truths, r.tag_truths);
    assert_eq!(s.sigma_toa, 1e-9);
    assert_eq!(s.sigma_twr, 0.06);
    assert_eq!((s.periods, s.grid_step, s.filter.burn_in), (300, 0.5, 50));
    assert_eq!(run(&["validate", "--scenario", p(&bundled())]), 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["validate", "--scenario", p(&bundled()), "--frobnicate"]), 2);
    assert_eq!(run(&["launch"]), 2);
    let empty = dir.path().join("empty.json");
    fs::write(&empty, "").unwrap();
    assert_eq!(run(&["validate", "--scenario", p(&empty)]), 1);
    assert!(matches!(parse_scenario(&empty), Err(IoError::Empty { .. })));
    assert_eq!(run(&["validate", "--scenario", p(&dir.path().join("missing.json"))]), 1);
}

#[test]
fn simulate_exports_reparse() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        run(&["simulate", "--scenario", p(&bundled()), "--out", p(&out), "--seed", "4"]),
        0
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 4);
    assert_eq!(summary["command"], "simulate");
    assert_eq!(summary["scenario_hash"].as_str().unwrap().len(), 64);

    let mut radii = Vec::new();
    for tag in 0..3 {
        let est = read_estimates(&out.join(format!("estimates_{tag}.csv"))).unwrap();
        assert_eq!(est.len(), 300);
        let pts: Vec<Point2> = est.iter().filter(|e| e.period >= 50).map(|e| e.position()).collect();
        let c = cep(&pts, 0.68).unwrap();
        let reported = &summary["modes"]["coop"]["tags"][tag]["cep68"];
        assert_eq!(reported["radius"].as_f64().unwrap(), c.radius);
        radii.push(c.radius);
    }
    assert_eq!(
        summary["modes"]["coop"]["median_cep68"].as_f64().unwrap(),
        median(&radii).unwrap()
    );
    let cdf = read_cdf(&out.join("cdf_coop.csv")).unwrap();
    assert_eq!(cdf.len(), 3 * 250);
    assert!(cdf.values.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*cdf.fractions.last().unwrap(), 1.0);
}

#[test]
fn modes_see_the_same_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("t"), dir.path().join("c"));
    let scen = bundled();
    for (mode, out) in [("tdoa", &a), ("coop", &b)] {
        let args = ["simulate", "--scenario", p(&scen), "--mode", mode, "--dump-measurements", "--out", p(out)];
        assert_eq!(run(&args), 0);
    }
    assert_eq!(
        fs::read(a.join("measurements.csv")).unwrap(),
        fs::read(b.join("measurements.csv")).unwrap()
    );
}

#[test]
fn replay_rejects_bad_logs() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    run(&["simulate", "--scenario", p(&bundled()), "--dump-measurements", "--out", p(&sim)]);
    let log = dir.path().join("bad.csv");
    fs::write(&log, "kind,period,id_a,id_b,value\ntoa,0,7,0,1e-8\n").unwrap();
    let (layout, out) = (sim.join("layout.json"), dir.path().join("r"));
    let args = ["replay", "--log", p(&log), "--layout", p(&layout), "--out", p(&out)];
    assert_eq!(run(&args), 1);
}

/// Five static points measured for 300 periods with pairwise ranging, as in
/// the field test; each choice of three points replays on its own.
#[test]
fn field_shaped_log() {
    let points = [
        Point2::new(2.0, 2.0),
        Point2::new(8.0, 2.5),
        Point2::new(5.0, 5.0),
        Point2::new(2.5, 8.0),
        Point2::new(7.5, 7.5),
    ];
    let s = Scenario::reference();
    let toa = |p: Point2, a: Point2| distance(p, a) / SPEED_OF_LIGHT;
    let triple = [0usize, 2, 4];
    let raw: Vec<RawPeriod> = (0..300)
        .map(|k| RawPeriod {
            period: k,
            toas: triple
                .iter()
                .map(|&t| s.anchors.positions.iter().map(|&a| Some(toa(points[t], a))).collect())
                .collect(),
            ranges: vec![
                PairRange { a: 0, b: 1, value: distance(points[0], points[2]) },
                PairRange { a: 0, b: 2, value: distance(points[0], points[4]) },
                PairRange { a: 1, b: 2, value: distance(points[2], points[4]) },
            ],
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("field.csv");
    write_replay(fs::File::create(&log).unwrap(), &raw).unwrap();
    let layout = Layout::from_scenario(&s);
    let periods = ingest_replay(&log, &layout).unwrap();
    assert_eq!(periods.len(), 300);
    assert!(periods.iter().all(|m| m.tdoa.iter().all(|t| t.len() == 4) && m.ranges.len() == 3));
    let res = run_estimator(&layout, &periods, Mode::Coop, None, 0).unwrap();
    for (series, &t) in res.tags.iter().zip(&triple) {
        let last = series.estimates.last().unwrap().position();
        assert!(distance(last, points[t]) < 0.01, "{last:?} vs {:?}", points[t]);
    }
    assert_eq!(read_replay(fs::File::open(&log).unwrap(), &layout, &log).unwrap(), raw);
}
