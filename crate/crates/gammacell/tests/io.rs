use gammacell::cache::{fingerprint, Cache};
use gammacell::config::Config;
use gammacell::report::{rows_from_csv, Metadata, Report, Row};
use gammacell_core::cell::{cell_energy, CellJob};
use gammacell_core::density::DensitySpec;
use gammacell_core::minimize::SolveOptions;
use gammacell_core::Mat;
use proptest::prelude::*;

fn job() -> CellJob {
    let opts = SolveOptions {
        n_starts: 2,
        ..SolveOptions::default()
    };
    CellJob::new(DensitySpec::scalar_double_well(2.0), Mat::diag(&[0.3]), 1, 16).with_opts(opts)
}

#[test]
fn cache_round_trips_and_hits() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::new(dir.path());
    let j = job();
    let key = fingerprint(&j, &[]);
    let mut calls = 0;
    let (a, hit_a) = cache
        .get_or_compute(key.as_str(), &j, || {
            calls += 1;
            cell_energy(&j)
        }, |e| panic!("{e}"))
        .unwrap();
    let (b, hit_b) = cache
        .get_or_compute(key.as_str(), &j, || {
            calls += 1;
            cell_energy(&j)
        }, |e| panic!("{e}"))
        .unwrap();
    assert_eq!(calls, 1);
    assert!(!hit_a && hit_b);
    assert_eq!(a, b);
    assert_eq!(a.field.len(), b.field.len());
}

#[test]
fn fingerprints_separate_jobs_and_warm_starts() {
    let j = job();
    let base = fingerprint(&j, &[]);
    assert_eq!(base, fingerprint(&j, &[]));
    assert_ne!(base, fingerprint(&j.clone().with_lambda(0.1), &[]));
    let mut other = j.clone();
    other.opts.seed = 1;
    assert_ne!(base, fingerprint(&other, &[]));
    assert_ne!(base, fingerprint(&j, &[vec![0.0; 17]]));
}

#[test]
fn truncated_entries_are_not_hits() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::new(dir.path());
    let j = job();
    let r = cell_energy(&j).unwrap();
    cache.store("k", &j, &r).unwrap();
    std::fs::write(dir.path().join("k").join("field.bin"), [0u8; 12]).unwrap();
    assert!(cache.load("k").is_err());
    assert_eq!(cache.load("absent").unwrap(), None);
}

#[test]
fn config_hash_tracks_content() {
    let text = r#"
schema_version = 1
[density]
kind = "single-well"
dim = 2
p = 2.0
"#;
    let a = Config::from_toml(text).unwrap();
    let b = Config::from_toml(&format!("{text}\n[cell]\nres = 8\n")).unwrap();
    assert_eq!(a.hash(), Config::from_toml(text).unwrap().hash());
    assert_ne!(a.hash(), b.hash());
    assert!(Config::from_toml(&text.replace("schema_version = 1", "schema_version = 9")).is_err());
}

fn row() -> impl Strategy<Value = Row> {
    let float = prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(f64::NAN),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
    ];
    (
        "[a-z:=0-9.]{0,12}",
        prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..5),
        float.clone(),
        any::<usize>(),
        any::<usize>(),
        float.clone(),
        any::<bool>(),
        float,
        any::<u64>(),
    )
        .prop_map(|(experiment, x, delta, k, res, value, converged, wall_time_s, seed)| Row {
            experiment,
            x,
            delta,
            k,
            res,
            kind: "m_k".into(),
            value,
            converged,
            wall_time_s,
            seed,
        })
}

fn same(a: &Row, b: &Row) -> bool {
    let bits = |v: f64| if v.is_nan() { u64::MAX } else { v.to_bits() };
    a.experiment == b.experiment
        && a.x.iter().map(|v| v.to_bits()).eq(b.x.iter().map(|v| v.to_bits()))
        && bits(a.delta) == bits(b.delta)
        && a.k == b.k
        && a.res == b.res
        && a.kind == b.kind
        && bits(a.value) == bits(b.value)
        && a.converged == b.converged
        && bits(a.wall_time_s) == bits(b.wall_time_s)
        && a.seed == b.seed
}

proptest! {
    #[test]
    fn reports_round_trip_losslessly(rows in prop::collection::vec(row(), 0..6)) {
        let mut r = Report::new(Metadata {
            config_hash: "h".into(),
            version: "0".into(),
            seed: 1,
            command: "cell".into(),
        });
        for row in &rows {
            r.push(row.clone());
        }
        let from_csv = rows_from_csv(&r.to_csv()).unwrap();
        let from_json = Report::from_json(&r.to_json()).unwrap();
        prop_assert_eq!(from_csv.len(), rows.len());
        for ((a, b), c) in rows.iter().zip(&from_csv).zip(&from_json.rows) {
            prop_assert!(same(a, b), "csv: {:?} vs {:?}", a, b);
            prop_assert!(same(a, c), "json: {:?} vs {:?}", a, c);
        }
    }
}
