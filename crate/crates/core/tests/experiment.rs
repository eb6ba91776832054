use std::path::Path;

use tvtf_core::attack::default_checkpoints;
use tvtf_core::experiment::{
    run_experiment, sweep, Architecture, ExperimentConfig, SweepAxis, SweepSummary,
};
use tvtf_core::{Error, ErrorClass};

fn base(dir: &Path, n_traces: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        n_traces,
        output_dir: dir.to_path_buf(),
        ..Default::default()
    };
    cfg.attack.tvla = false;
    cfg
}

fn mtds(s: &SweepSummary) -> Vec<usize> {
    s.rows
        .iter()
        .map(|r| r.mtd_traces().unwrap_or_else(|| panic!("{}: {:?}", r.value, r.result)))
        .collect()
}

#[test]
fn unprotected_noiseless_discloses_at_first_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base(tmp.path(), 100);
    cfg.architecture = Architecture::Unprotected;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.summary.mtd.as_deref(), Some("10"));
    assert_eq!(out.summary.rank_of_true_key, Some(1));
    let manifest = std::fs::read_to_string(tmp.path().join("manifest.toml")).unwrap();
    for field in ["unprotected", "n_traces = 100", "plaintexts", "checkpoints"] {
        assert!(manifest.contains(field), "manifest lacks {field}");
    }
}

#[test]
fn tvtf_holds_out_far_longer_than_unprotected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut unprotected = base(&tmp.path().join("u"), 2000);
    unprotected.architecture = Architecture::Unprotected;
    let u = run_experiment(&unprotected).unwrap();
    let t = run_experiment(&base(&tmp.path().join("t"), 2000)).unwrap();
    let u = u.mtd.unwrap().mtd.unwrap();
    let t = t.mtd.unwrap().mtd.unwrap_or(usize::MAX);
    assert!(t > 20 * u, "tvtf {t} vs unprotected {u}");
}

#[test]
fn bad_configs_and_paths_are_classified() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base(&tmp.path().join("x"), 50);
    cfg.shuffle.m = 5;
    match run_experiment(&cfg) {
        Err(e @ Error::Config { .. }) => {
            assert_eq!(e.class(), ErrorClass::Config);
            assert!(e.to_string().contains("shuffle.m"));
        }
        other => panic!("{other:?}"),
    }

    std::fs::write(tmp.path().join("file"), b"").unwrap();
    let cfg = base(&tmp.path().join("file/out"), 50);
    let e = run_experiment(&cfg).unwrap_err();
    assert_eq!(e.class(), ErrorClass::Io, "{e}");
}

#[test]
fn mtd_falls_as_more_capacitors_are_picked() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base(tmp.path(), 2000);
    // The 255 chain repeats its schedule within a few hundred phases for
    // some m, which would confound the comparison.
    cfg.shuffle.period = 65535;
    let s = sweep(&cfg, SweepAxis::M, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    assert!(s.rows[4].result.is_err());
    let m = mtds(&SweepSummary {
        axis: s.axis,
        rows: s.rows[..4].to_vec(),
    });
    let grid = default_checkpoints(2000);
    let idx: Vec<usize> = m.iter().map(|v| grid.iter().position(|g| g == v).unwrap()).collect();
    for w in idx.windows(2) {
        assert!(w[1] <= w[0] + 1, "{m:?}");
    }
    assert!(m[0] > m[3]);
    assert!(tmp.path().join("sweep_m.csv").exists());
}

#[test]
fn short_chain_is_the_weakest_period() {
    let tmp = tempfile::tempdir().unwrap();
    let s = sweep(&base(tmp.path(), 2000), SweepAxis::Periodicity, &[7.0, 255.0, 65535.0]).unwrap();
    let m = mtds(&s);
    assert!(m[0] < m[1] && m[0] < m[2], "{m:?}");
}

#[test]
#[ignore = "not reproduced: the 65535 chain discloses before the 255 chain"]
fn mtd_rises_strictly_with_period() {
    let tmp = tempfile::tempdir().unwrap();
    let s = sweep(&base(tmp.path(), 2000), SweepAxis::Periodicity, &[7.0, 255.0, 65535.0]).unwrap();
    let m = mtds(&s);
    assert!(m[0] < m[1] && m[1] < m[2], "{m:?}");
}

#[test]
fn unequal_capacitors_do_not_help_the_attacker() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base(tmp.path(), 2000);
    cfg.shuffle.period = 65535;
    let s = sweep(&cfg, SweepAxis::CapacitanceSpread, &[0.0, 0.2]).unwrap();
    let m = mtds(&s);
    assert!(m[1] >= m[0], "{m:?}");
}

#[test]
fn more_phases_raise_mtd() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base(tmp.path(), 2000);
    cfg.shuffle.period = 65535;
    let s = sweep(&cfg, SweepAxis::Phases, &[4.0, 16.0]).unwrap();
    let m = mtds(&s);
    assert!(m[1] > m[0], "{m:?}");
}
