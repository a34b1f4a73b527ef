mod common;

use std::collections::BTreeMap;

use peleg::experiments::{self, Algorithm, ExperimentSpec, Setting};

fn small_spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(Setting::Confound, vec![2.0]);
    spec.trials = 6;
    spec.base_seed = 3;
    spec.algorithms = vec![Algorithm::Peleg, Algorithm::UniformStatic, Algorithm::OracleBaseline];
    spec
}

#[test]
fn summary_matches_recomputation_from_csv_text() {
    let records = experiments::run_experiment(&small_spec()).unwrap();
    let mut buf = Vec::new();
    experiments::write_records(&mut buf, &records).unwrap();
    let text = String::from_utf8(buf).unwrap();

    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), experiments::RECORD_HEADER.join(","));
    let mut cells: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let cell = cells.entry(format!("{},{},{}", f[0], f[1], f[2])).or_default();
        cell.0.push(f[5].parse().unwrap());
        cell.1 += f[6].parse::<usize>().unwrap();
    }

    let mut sbuf = Vec::new();
    experiments::write_summary(&mut sbuf, &experiments::aggregate(&records).unwrap()).unwrap();
    let summary = String::from_utf8(sbuf).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "setting,param,algorithm,mean_tau,std_tau,success_rate,n_trials"
    );
    let mut seen = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (taus, wins) = &cells[&format!("{},{},{}", f[0], f[1], f[2])];
        let (mean, std) = common::mean_std(taus);
        let close = |s: &str, v: f64| (s.parse::<f64>().unwrap() - v).abs() <= 1e-9 * v.abs().max(1.0);
        assert!(close(f[3], mean), "{line}");
        assert!(close(f[4], std), "{line}");
        assert!(close(f[5], *wins as f64 / taus.len() as f64), "{line}");
        assert_eq!(f[6].parse::<usize>().unwrap(), taus.len());
        seen += 1;
    }
    assert_eq!(seen, cells.len());
}

#[test]
fn uniform_static_needs_more_samples_on_the_confounded_instance() {
    let records = experiments::run_experiment(&small_spec()).unwrap();
    let median = |alg: Algorithm| {
        let mut t: Vec<u64> = records.iter().filter(|r| r.algorithm == alg).map(|r| r.tau).collect();
        t.sort_unstable();
        t[t.len() / 2]
    };
    assert!(median(Algorithm::UniformStatic) >= median(Algorithm::Peleg));
}

#[test]
fn peleg_succeeds_on_the_confounded_instance() {
    let mut spec = ExperimentSpec::new(Setting::Confound, vec![2.0, 3.0]);
    spec.trials = 10;
    let rows = experiments::aggregate(&experiments::run_experiment(&spec).unwrap()).unwrap();
    for r in rows {
        assert!(r.success_rate >= 0.9, "{r:?}");
    }
}

#[test]
fn records_survive_a_file_round_trip() {
    let records = experiments::run_experiment(&small_spec()).unwrap();
    let file = tempfile::NamedTempFile::new().unwrap();
    experiments::write_records(std::fs::File::create(file.path()).unwrap(), &records).unwrap();
    let back = experiments::read_records(std::fs::File::open(file.path()).unwrap()).unwrap();
    assert_eq!(back, records);
}

#[test]
fn sphere_trials_succeed() {
    let mut spec = ExperimentSpec::new(Setting::Sphere, vec![10.0]);
    spec.trials = 2;
    spec.base_seed = 4;
    for r in experiments::run_experiment(&spec).unwrap() {
        assert!(r.success, "{r:?}");
    }
}

// About half an hour in release mode.
#[test]
#[ignore]
fn sphere_full_cell_succeeds() {
    let mut spec = ExperimentSpec::new(Setting::Sphere, vec![10.0]);
    spec.trials = 50;
    let rows = experiments::aggregate(&experiments::run_experiment(&spec).unwrap()).unwrap();
    assert!(rows[0].success_rate >= 0.9, "{:?}", rows[0]);
}
