use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gapgreen::config::{parse_config, Directions, RunConfig, SweepGroup, ENV_OUTPUT_DIR, ENV_THREADS};
use gapgreen::error::Error;
use gapgreen::report::{full_report, run_subcommand, Status, Subcommand};
use proptest::prelude::*;

const FREE: &str = include_str!("../../../configs/free.toml");

fn free_in(dir: &Path, cache: bool) -> RunConfig {
    let mut cfg = parse_config(FREE).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg.cache = cache;
    cfg
}

fn csv_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().into(), std::fs::read(&p).unwrap()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(
        lam in prop::collection::vec(-3.0..-1e-3f64, 1..4),
        cutoff in 0usize..6,
        res in 3usize..30,
        nb in 1usize..6,
        y in prop::array::uniform2(-1.0..1.0f64),
        radii in prop::collection::vec(1.0..60.0f64, 1..5),
        n in 1usize..100,
        threads in 0usize..8,
    ) {
        let mut cfg = parse_config(FREE).unwrap();
        cfg.lambda = lam;
        cfg.cutoff = cutoff;
        cfg.band_resolution = res;
        cfg.n_bands = nb;
        cfg.y = y.to_vec();
        cfg.directions = Directions::Count(n);
        cfg.sweeps = vec![SweepGroup { directions: Directions::List(vec![vec![1.0, 0.0]]), r_list: radii.clone() }];
        cfg.r_list = radii;
        cfg.threads = threads;
        let back = parse_config(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn defaults_fill_missing_fields() {
    let cfg = parse_config("lambda = [-0.5]\n[operator]\npreset = \"free\"\ndimension = 2\n").unwrap();
    assert_eq!((cfg.schema_version, cfg.band_resolution, cfg.n_bands, cfg.r_list.clone()), (1, 17, 4, vec![10.0, 20.0, 40.0]));
    assert_eq!(cfg.directions, Directions::Count(64));
    assert!(cfg.cache && cfg.sweeps.is_empty());
    assert_eq!(cfg.output_dir, PathBuf::from("gapgreen-out"));
}

#[test]
fn errors_name_the_problem() {
    let msg = |t: &str| match parse_config(t) {
        Err(Error::Config(m)) => m,
        other => panic!("{other:?}"),
    };
    let m = msg("lambda = [-0.5]\nbogus = 1\n[operator]\npreset = \"free\"\ndimension = 2\n");
    assert!(m.contains("bogus") && m.contains("line 2"), "{m}");
    assert!(msg("lambda = [0.5]\n[operator]\npreset = \"free\"\ndimension = 2\n").contains("lambda"));
    assert!(msg("lambda = [-0.5]\nlambda_gap_fraction = [0.2]\n[operator]\npreset = \"free\"\ndimension = 2\n").contains("exclusive"));
    assert!(msg("lambda = [-0.5]\nr_list = [0.0]\n[operator]\npreset = \"free\"\ndimension = 2\n").contains("r_list"));
    let m = msg("lambda = [-0.5]\n[tolerances]\ntol_gauss = -1.0\n[operator]\npreset = \"free\"\ndimension = 2\n");
    assert!(m.contains("tol_gauss"), "{m}");
    assert!(msg("schema_version = 9\nlambda = [-0.5]\n[operator]\npreset = \"free\"\ndimension = 2\n").contains("schema_version"));
}

#[test]
fn overrides_apply_and_are_checked() {
    let mut cfg = parse_config(FREE).unwrap();
    cfg.apply_overrides(|k| match k {
        ENV_OUTPUT_DIR => Some("elsewhere".into()),
        ENV_THREADS => Some("3".into()),
        _ => None,
    })
    .unwrap();
    assert_eq!((cfg.output_dir.clone(), cfg.threads), (PathBuf::from("elsewhere"), 3));
    assert!(cfg.apply_overrides(|k| (k == ENV_THREADS).then(|| "many".to_string())).is_err());
}

#[test]
fn subcommands_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = free_in(dir.path(), true);
    for cmd in Subcommand::ALL.iter().filter(|c| **c != Subcommand::Validate) {
        let out = run_subcommand(*cmd, &cfg).unwrap();
        assert!(out.ok, "{}: {}", cmd.name(), out.summary);
        assert!(out.files.iter().all(|f| f.exists()));
    }
    let support = std::fs::read_to_string(dir.path().join("support.csv")).unwrap();
    let mut lines = support.lines();
    assert_eq!(lines.next(), Some("# schema_version=1"));
    lines.next();
    assert_eq!(lines.count(), 64);
    let bands = std::fs::read_to_string(dir.path().join("bands.csv")).unwrap();
    assert!(bands.lines().nth(1).unwrap().starts_with("k1,k2,"));
}

#[test]
fn validate_is_deterministic_and_cache_transparent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = full_report(&free_in(a.path(), false)).unwrap();
    let rb = full_report(&free_in(b.path(), true)).unwrap();
    let rc = full_report(&free_in(b.path(), true)).unwrap();
    assert!(ra.passed(), "{:?}", ra.acceptance.iter().filter(|c| c.status == Status::Fail).collect::<Vec<_>>());
    let (ca, cb) = (csv_bytes(a.path()), csv_bytes(b.path()));
    assert!(ca.len() >= 6);
    assert_eq!(ca, cb);
    assert_eq!(serde_json::to_string(&ra.acceptance).unwrap(), serde_json::to_string(&rc.acceptance).unwrap());
    assert_eq!(rb.passed(), rc.passed());
}
